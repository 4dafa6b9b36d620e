//! Legitimacy oracle: compares the world's state against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use super::{Event, World};
use crate::dataplane::RuleKey;
use crate::topology::{edge_connectivity, verify_tables, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LegitReport {
    /// Every live controller's reply database matches the reachable network.
    pub replies_accurate: bool,
    /// Switch manager sets (and, when memory-adaptive, rule creators) match
    /// the live controllers that reach them.
    pub managers_correct: bool,
    /// The installed tables deliver every reachable flow under any failure set
    /// the topology can tolerate, up to κ.
    pub rules_resilient: bool,
    /// Channels carry a single token and all tags are current or previous.
    pub channels_consistent: bool,
    /// Human-readable reasons, capped.
    pub problems: Vec<String>,
}

impl LegitReport {
    pub fn legitimate(&self) -> bool {
        self.replies_accurate && self.managers_correct && self.rules_resilient && self.channels_consistent
    }
}

const MAX_PROBLEMS: usize = 8;

struct Findings(Vec<String>);

impl Findings {
    fn fail(&mut self, ok: &mut bool, msg: impl FnOnce() -> String) {
        *ok = false;
        if self.0.len() < MAX_PROBLEMS {
            self.0.push(msg());
        }
    }
}

fn keys(rules: &[crate::dataplane::Rule]) -> Vec<RuleKey> {
    let mut k: Vec<RuleKey> = rules.iter().map(|r| r.key()).collect();
    k.sort();
    k
}

pub fn check_legitimacy(w: &World) -> LegitReport {
    let truth = w.ground_truth();
    let live = w.live_controllers();
    let nbrs = |n: NodeId| -> BTreeSet<NodeId> { truth.neighbors(n).collect() };
    let reach: BTreeMap<NodeId, BTreeSet<NodeId>> = live.iter().map(|&c| (c, truth.reachable(c))).collect();
    let mut f = Findings(Vec::new());

    // replies and their tags
    let mut replies_ok = true;
    let mut tags_ok = true;
    for &c in &live {
        let st = &w.controllers[&c].state;
        let others: Vec<_> = st.reply_db.iter().filter(|m| !m.is_self_record_of(c)).collect();
        let selfs = st.reply_db.iter().filter(|m| m.is_self_record_of(c)).count();
        if selfs != 1 {
            f.fail(&mut replies_ok, || format!("controller {c} holds {selfs} self records"));
        }
        if let Some(s) = st.reply_db.iter().find(|m| m.is_self_record_of(c)) {
            if s.neighbors != nbrs(c) {
                f.fail(&mut replies_ok, || format!("controller {c} self record has stale neighbors"));
            }
        }
        let want: BTreeSet<NodeId> = reach[&c].iter().copied().filter(|&n| n != c).collect();
        let ids: Vec<NodeId> = others.iter().map(|m| m.id).collect();
        let have: BTreeSet<NodeId> = ids.iter().copied().collect();
        if have != want || ids.len() != have.len() {
            f.fail(&mut replies_ok, || format!("controller {c} has replies from {have:?}, expected {want:?}"));
        }
        for m in others {
            if m.neighbors != nbrs(m.id) {
                f.fail(&mut replies_ok, || format!("controller {c}: reply of {} has wrong neighbors", m.id));
            }
            match w.switches.get(&m.id) {
                Some(sw) => {
                    if m.managers.as_ref() != Some(&sw.manager_set()) || keys(&m.rules) != keys(&sw.rules) {
                        f.fail(&mut replies_ok, || format!("controller {c}: reply of switch {} is stale", m.id));
                    }
                }
                None => {
                    if m.managers.is_some() {
                        f.fail(&mut replies_ok, || format!("controller {c}: reply of {} claims managers", m.id));
                    }
                }
            }
            let t = m.tag_for(c);
            if t != Some(st.curr_tag) && t != Some(st.prev_tag) {
                f.fail(&mut tags_ok, || format!("controller {c}: reply of {} has tag {t:?}", m.id));
            }
        }
    }

    // managers and, when memory-adaptive, rule ownership
    let mut managers_ok = true;
    for (&s, sw) in &w.switches {
        if !w.alive.contains(&s) {
            continue;
        }
        let expected: BTreeSet<NodeId> = live.iter().copied().filter(|c| reach[c].contains(&s)).collect();
        let have = sw.manager_set();
        if w.memory_adaptive {
            if have != expected {
                f.fail(&mut managers_ok, || format!("switch {s} managers {have:?}, expected {expected:?}"));
            }
            if let Some(r) = sw.rules.iter().find(|r| !expected.contains(&r.creator)) {
                let k = r.creator;
                f.fail(&mut managers_ok, || format!("switch {s} keeps rules of {k}"));
            }
        } else if !expected.is_subset(&have) {
            f.fail(&mut managers_ok, || format!("switch {s} managers {have:?} miss some of {expected:?}"));
        }
        for &c in &expected {
            let t = sw.meta_tag(c);
            let st = &w.controllers[&c].state;
            let fine = t == Some(st.curr_tag)
                || t == Some(st.prev_tag)
                || (w.three_tag && t == Some(st.before_prev_tag));
            if !fine {
                f.fail(&mut tags_ok, || format!("switch {s} meta tag for {c} is {t:?}"));
            }
        }
    }

    // resilience of the installed tables
    let mut rules_ok = true;
    if !live.is_empty() {
        let tables: BTreeMap<NodeId, Vec<_>> =
            w.switches.iter().filter(|(s, _)| w.alive.contains(s)).map(|(&s, sw)| (s, sw.rules.clone())).collect();
        let hops: BTreeMap<NodeId, BTreeMap<NodeId, Vec<NodeId>>> = live
            .iter()
            .map(|&c| {
                let fh = w.controllers[&c].state.current_assignment().map(|a| a.first_hops.clone()).unwrap_or_default();
                (c, fh)
            })
            .collect();
        let kappa = w.kappa.min(edge_connectivity(&truth).saturating_sub(1));
        let report = verify_tables(&truth, &tables, &hops, kappa);
        for fail in report.failures.iter().take(MAX_PROBLEMS) {
            f.fail(&mut rules_ok, || format!("flow {fail}"));
        }
        if !report.passed() {
            rules_ok = false;
        }
    }

    // channels: no garbage anywhere, and no packet that could be taken for
    // the current token unless it belongs to it
    let mut channels_ok = tags_ok;
    for &c in &live {
        for (&j, s) in &w.controllers[&c].senders {
            let genuine = |m: u64| m != 0 && m < super::corrupt::GARBAGE_MSG;
            if s.in_flight.as_ref().is_some_and(|f| !genuine(f.msg)) || s.pending.iter().any(|(m, _)| !genuine(*m)) {
                f.fail(&mut channels_ok, || format!("channel {c}->{j} holds corrupted payloads"));
            }
            if !w.alive.contains(&j) {
                continue;
            }
            let rcv_bit = w.receivers.get(&(j, c)).and_then(|r| r.last_bit);
            if rcv_bit == Some(s.bit) {
                let ok = s.in_flight.as_ref().is_some_and(|fl| fl.attempts > 0 && w.accepted.get(&(j, c)) == Some(&fl.msg));
                if !ok {
                    f.fail(&mut channels_ok, || format!("channel {c}->{j}: receiver already holds the sender's bit"));
                }
            }
        }
    }
    for ev in w.events.values() {
        let Event::Arrive { pkt, .. } = ev else { continue };
        if !live.contains(&pkt.ctrl) {
            continue;
        }
        if pkt.msg == 0 {
            f.fail(&mut channels_ok, || format!("stale packet in transit on {}->{}", pkt.ctrl, pkt.peer));
            continue;
        }
        let Some(s) = w.controllers[&pkt.ctrl].senders.get(&pkt.peer) else { continue };
        let Ok(m) = crate::channels::decode(&pkt.bytes) else { continue };
        let current = s.in_flight.as_ref().map(|fl| fl.msg);
        if m.bit() == s.bit && Some(pkt.msg) != current {
            f.fail(&mut channels_ok, || format!("old packet with the current bit on {}->{}", pkt.ctrl, pkt.peer));
        }
    }

    LegitReport {
        replies_accurate: replies_ok,
        managers_correct: managers_ok,
        rules_resilient: rules_ok,
        channels_consistent: channels_ok,
        problems: f.0,
    }
}
