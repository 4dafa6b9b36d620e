//! Asynchronous frames: the shortest stretches of an execution in which every
//! live controller starts and finishes one iteration, including the
//! round-trips of the batches it sent.

use std::collections::{BTreeMap, BTreeSet};

use crate::topology::NodeId;

/// The subset of trace events frame bookkeeping depends on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameEvent {
    /// A controller started iteration `iter`, enqueueing messages `msgs`.
    Iter { ctrl: NodeId, iter: u64, msgs: Vec<u64> },
    /// A message was acknowledged or can no longer be delivered.
    Done { ctrl: NodeId, msg: u64 },
    /// A controller started running.
    Up { ctrl: NodeId },
    /// A controller stopped.
    Down { ctrl: NodeId },
}

impl FrameEvent {
    /// Parse `"<step> <kind> <node> <detail>"` trace lines; other kinds yield None.
    pub fn parse(line: &str) -> Option<(u64, FrameEvent)> {
        let mut it = line.splitn(4, ' ');
        let step: u64 = it.next()?.parse().ok()?;
        let kind = it.next()?;
        let node = NodeId(it.next()?.parse().ok()?);
        let detail = it.next().unwrap_or("");
        let field = |key: &str| {
            detail.split(' ').find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        };
        let ev = match kind {
            "iter" => {
                let iter = field("n")?.parse().ok()?;
                let msgs = match field("msgs")? {
                    "-" => Vec::new(),
                    s => s.split(',').map(|m| m.parse().ok()).collect::<Option<Vec<u64>>>()?,
                };
                FrameEvent::Iter { ctrl: node, iter, msgs }
            }
            "done" => FrameEvent::Done { ctrl: node, msg: field("msg")?.parse().ok()? },
            "up" => FrameEvent::Up { ctrl: node },
            "down" => FrameEvent::Down { ctrl: node },
            _ => return None,
        };
        Some((step, ev))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrameTracker {
    /// Open iterations: (ctrl, iter) → (start step, unresolved messages).
    open: BTreeMap<(NodeId, u64), (u64, BTreeSet<u64>)>,
    owner: BTreeMap<u64, (NodeId, u64)>,
    live: BTreeSet<NodeId>,
    frame_start: u64,
    finished: BTreeSet<NodeId>,
    boundaries: Vec<u64>,
}

impl FrameTracker {
    pub fn new() -> FrameTracker {
        FrameTracker::default()
    }

    /// Step indices at which frames ended so far.
    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }

    pub fn frames(&self) -> usize {
        self.boundaries.len()
    }

    /// Feed one event; returns true when it closes a frame.
    pub fn observe(&mut self, step: u64, ev: &FrameEvent) -> bool {
        match ev {
            FrameEvent::Up { ctrl } => {
                self.live.insert(*ctrl);
                self.finished.remove(ctrl);
                return false;
            }
            FrameEvent::Iter { ctrl, iter, msgs } => {
                self.live.insert(*ctrl);
                let pending: BTreeSet<u64> = msgs.iter().copied().collect();
                for &m in &pending {
                    self.owner.insert(m, (*ctrl, *iter));
                }
                self.open.insert((*ctrl, *iter), (step, pending));
                self.complete(*ctrl, *iter);
            }
            FrameEvent::Done { msg, .. } => {
                if let Some(key) = self.owner.remove(msg) {
                    if let Some((_, pending)) = self.open.get_mut(&key) {
                        pending.remove(msg);
                    }
                    self.complete(key.0, key.1);
                }
            }
            FrameEvent::Down { ctrl } => {
                self.live.remove(ctrl);
                self.finished.remove(ctrl);
                self.open.retain(|(c, _), _| c != ctrl);
            }
        }
        self.close(step)
    }

    fn complete(&mut self, ctrl: NodeId, iter: u64) {
        let Some((start, pending)) = self.open.get(&(ctrl, iter)) else { return };
        if !pending.is_empty() {
            return;
        }
        if *start >= self.frame_start {
            self.finished.insert(ctrl);
        }
        self.open.remove(&(ctrl, iter));
    }

    fn close(&mut self, step: u64) -> bool {
        if self.live.is_empty() || !self.live.iter().all(|c| self.finished.contains(c)) {
            return false;
        }
        self.boundaries.push(step);
        self.frame_start = step + 1;
        self.finished.clear();
        true
    }
}

/// Frame boundaries of a recorded trace.
pub fn frame_count<'a, I>(trace: I) -> Vec<u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut t = FrameTracker::new();
    for line in trace {
        if let Some((step, ev)) = FrameEvent::parse(line) {
            t.observe(step, &ev);
        }
    }
    t.boundaries
}
