//! Θ failure detector: a neighbor is suspected once some other neighbor has
//! completed Θ heartbeat round-trips while it completed none.

use std::collections::{BTreeMap, BTreeSet};

use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorState {
    pub theta: u32,
    /// Round-trips other neighbors completed since this neighbor's last one.
    pub silent: BTreeMap<NodeId, u32>,
    pub failed: BTreeSet<NodeId>,
}

impl DetectorState {
    pub fn new(theta: u32) -> DetectorState {
        DetectorState { theta, silent: BTreeMap::new(), failed: BTreeSet::new() }
    }

    /// One heartbeat round over `ports`; `responded` completed a round-trip.
    /// Returns the neighbors whose status changed.
    pub fn step(&mut self, ports: &BTreeSet<NodeId>, responded: &BTreeSet<NodeId>) -> Vec<(NodeId, bool)> {
        self.silent.retain(|n, _| ports.contains(n));
        let mut changes = Vec::new();
        let removed: Vec<NodeId> = self.failed.iter().copied().filter(|n| !ports.contains(n)).collect();
        for n in removed {
            self.failed.remove(&n);
        }
        for &m in ports {
            if responded.contains(&m) {
                self.silent.insert(m, 0);
                if self.failed.remove(&m) {
                    changes.push((m, true));
                }
                continue;
            }
            if responded.iter().any(|&o| o != m) {
                let c = self.silent.entry(m).or_insert(0);
                *c = c.saturating_add(1);
                if *c >= self.theta && self.failed.insert(m) {
                    changes.push((m, false));
                }
            }
        }
        changes
    }

    /// `N_o` as seen locally: ports not currently suspected.
    pub fn live(&self, ports: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        ports.iter().copied().filter(|n| !self.failed.contains(n)).collect()
    }
}
