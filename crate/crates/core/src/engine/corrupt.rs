//! Transient faults: overwrite every variable of every live node, and the
//! channels between them, with arbitrary values of the right type and size.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Event, Packet, World};
use crate::channels::{encode, InFlight, Message, Receiver, Sender, PENDING_CAPACITY};
use crate::controller::Tag;
use crate::dataplane::{Command, CommandBatch, QueryReply, Rule};
use crate::topology::NodeId;

/// Ids given to corrupted payloads so they never collide with genuine ones.
pub(super) const GARBAGE_MSG: u64 = u64::MAX / 2;

struct Garbage<'a> {
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<NodeId>,
    controllers: Vec<NodeId>,
    n_prt: u8,
}

impl Garbage<'_> {
    fn node(&mut self) -> NodeId {
        *self.nodes.choose(self.rng).unwrap()
    }

    fn controller(&mut self) -> NodeId {
        *self.controllers.choose(self.rng).unwrap()
    }

    fn tag(&mut self) -> Tag {
        Tag { owner: self.controller(), epoch: self.rng.gen_range(0..8) }
    }

    fn subset(&mut self, from: &[NodeId], max: usize) -> BTreeSet<NodeId> {
        let k = self.rng.gen_range(0..=max.min(from.len()));
        from.choose_multiple(self.rng, k).copied().collect()
    }

    fn rule(&mut self, switch: NodeId, ports: &[NodeId]) -> Rule {
        let creator = self.controller();
        let tag = self.tag();
        let mut r = if ports.is_empty() || self.rng.gen_bool(0.2) {
            Rule::meta(creator, switch, tag)
        } else {
            let dest = self.node();
            let prio = self.rng.gen_range(1..=self.n_prt);
            let fwd = *ports.choose(self.rng).unwrap();
            let mut r = Rule::forwarding(creator, switch, dest, prio, fwd, tag);
            if self.rng.gen_bool(0.3) {
                r.src = Some(self.controller());
            }
            r
        };
        r.stamp = self.rng.gen_range(0..1000);
        r
    }

    fn reply(&mut self, max_rules: usize) -> QueryReply {
        let id = self.node();
        let nodes = self.nodes.clone();
        let ctrls = self.controllers.clone();
        let neighbors = self.subset(&nodes, 4);
        let managers = if self.rng.gen_bool(0.3) { None } else { Some(self.subset(&ctrls, ctrls.len())) };
        let ports: Vec<NodeId> = neighbors.iter().copied().collect();
        let rules = (0..self.rng.gen_range(0..=max_rules)).map(|_| self.rule(id, &ports)).collect();
        QueryReply { id, neighbors, managers, rules }
    }

    fn batch(&mut self) -> CommandBatch {
        let t = self.tag();
        let mut cmds = Vec::new();
        if self.rng.gen_bool(0.8) {
            cmds.push(Command::NewRound(t));
        }
        for _ in 0..self.rng.gen_range(0..3) {
            let k = self.controller();
            cmds.push(match self.rng.gen_range(0..4) {
                0 => Command::DelMngr(k),
                1 => Command::AddMngr(k),
                2 => Command::DelAllRules(k),
                _ => Command::UpdateRules { rules: Vec::new(), keep: None },
            });
        }
        if self.rng.gen_bool(0.8) {
            cmds.push(Command::Query(t));
        }
        CommandBatch(cmds)
    }
}

impl World {
    pub(super) fn corrupt(&mut self) {
        let nodes: Vec<NodeId> = self.graph.nodes().collect();
        let controllers: Vec<NodeId> = self.graph.controllers().collect();
        if nodes.is_empty() || controllers.is_empty() {
            return;
        }
        let live: Vec<NodeId> = self.alive.iter().copied().collect();
        let n_prt = crate::topology::n_prt(self.kappa);
        let mut rng = std::mem::replace(&mut self.rng, rand::SeedableRng::seed_from_u64(0));
        let mut g = Garbage { rng: &mut rng, nodes: nodes.clone(), controllers: controllers.clone(), n_prt };
        let mut next_garbage = GARBAGE_MSG;

        for (&s, sw) in self.switches.iter_mut() {
            if !self.alive.contains(&s) {
                continue;
            }
            let ports: Vec<NodeId> = self.graph.neighbors(s).collect();
            let n = g.rng.gen_range(0..=sw.max_rules);
            sw.rules = (0..n).map(|_| g.rule(s, &ports)).collect();
            let k = g.rng.gen_range(0..=sw.max_managers);
            sw.managers = controllers.choose_multiple(g.rng, k).map(|&c| (c, 0)).collect();
            for stamp in sw.managers.values_mut() {
                *stamp = g.rng.gen_range(0..1000);
            }
            sw.clock = g.rng.gen_range(0..1000);
        }

        for (&c, node) in self.controllers.iter_mut() {
            if !self.alive.contains(&c) {
                continue;
            }
            let st = &mut node.state;
            let max = st.config.max_replies;
            st.reply_db = (0..g.rng.gen_range(0..=max)).map(|_| g.reply(4)).collect();
            for m in st.reply_db.iter_mut() {
                // Plausible tags make the corruption harder to spot.
                if g.rng.gen_bool(0.5) {
                    m.rules.push(Rule::meta(c, m.id, Tag { owner: c, epoch: g.rng.gen_range(0..8) }));
                }
            }
            st.curr_tag = Tag { owner: c, epoch: g.rng.gen_range(0..8) };
            st.prev_tag = Tag { owner: c, epoch: g.rng.gen_range(0..8) };
            st.before_prev_tag = Tag { owner: c, epoch: g.rng.gen_range(0..8) };
            st.epoch = g.rng.gen_range(0..8);
            st.neighbors = g.subset(&nodes, 4);
            node.senders = BTreeMap::new();
            for &j in &nodes {
                if j == c || g.rng.gen_bool(0.5) {
                    continue;
                }
                let mut s = Sender { bit: g.rng.gen_bool(0.5), in_flight: None, pending: VecDeque::new() };
                if g.rng.gen_bool(0.6) {
                    next_garbage += 1;
                    s.in_flight = Some(InFlight { msg: next_garbage, payload: g.batch(), attempts: g.rng.gen_range(0..3) });
                }
                for _ in 0..g.rng.gen_range(0..=PENDING_CAPACITY) {
                    next_garbage += 1;
                    s.pending.push_back((next_garbage, g.batch()));
                }
                node.senders.insert(j, s);
            }
        }

        for &n in &live {
            for &c in &controllers {
                let r = Receiver {
                    last_bit: [None, Some(false), Some(true)][g.rng.gen_range(0..3)],
                    cached: if g.rng.gen_bool(0.3) { Some(g.reply(2)) } else { None },
                };
                self.receivers.insert((n, c), r);
            }
            if let Some(d) = self.detectors.get_mut(&n) {
                let ports: Vec<NodeId> = self.graph.neighbors(n).collect();
                d.silent = ports.iter().map(|&m| (m, g.rng.gen_range(0..d.theta.max(1)))).collect();
                d.failed = ports.iter().copied().filter(|_| g.rng.gen_bool(0.2)).collect();
            }
        }

        // Stale packets already on their last hop, in both directions.
        let mut stale = Vec::new();
        for _ in 0..g.rng.gen_range(0..=live.len()) {
            let c = g.controller();
            let peer = g.node();
            if c == peer {
                continue;
            }
            let request = g.rng.gen_bool(0.5);
            let bit = g.rng.gen_bool(0.5);
            let msg = if request {
                Message::Request { bit, batch: g.batch() }
            } else {
                Message::Ack { bit, reply: if g.rng.gen_bool(0.5) { Some(g.reply(2)) } else { None } }
            };
            let mut bytes = encode(&msg);
            if g.rng.gen_bool(0.2) {
                let i = g.rng.gen_range(0..bytes.len());
                bytes[i] ^= g.rng.gen::<u8>() | 1;
            }
            let (at, from) = if request { (peer, c) } else { (c, peer) };
            let delay = g.rng.gen_range(1..=self.timing.lifetime);
            let pkt = Packet { ctrl: c, peer, request, msg: 0, hops: vec![from], route: Vec::new(), bytes };
            stale.push((delay, at, pkt));
        }
        drop(g);
        self.rng = rng;
        for (delay, at, pkt) in stale {
            self.schedule(delay, Event::Arrive { at, pkt });
        }
        self.accepted.clear();
    }
}
