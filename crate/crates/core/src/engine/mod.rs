//! Discrete-event world: every node, link and channel of one network, driven
//! by a seeded event queue. One processed event is one step.

mod corrupt;
mod frames;
mod legit;
mod run;

pub use frames::{frame_count, FrameEvent, FrameTracker};
pub use legit::{check_legitimacy, LegitReport};
pub use run::{run_scenario, Fault, Recovery, RunMetrics, Scenario, ScheduledFault, Start, When};

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channels::{
    decode, encode, heartbeat_lost, link_transmit, DetectorState, FaultPlan, LinkFaultState, Message, Receiver, Sender,
};
use crate::controller::{ControllerConfig, ControllerState};
use crate::dataplane::{Decision, Deletion, Header, SwitchState};
use crate::topology::{edge, n_prt, Edge, Graph, NodeId};

/// Timing of the simulation, in time units; a hop takes one unit plus any
/// extra delay a fault plan adds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    /// Upper bound on the lifetime of any packet.
    pub lifetime: u64,
    /// Base interval between controller iterations, above twice the lifetime.
    pub interval: u64,
    pub heartbeat: u64,
}

impl Timing {
    pub fn new(nodes: usize, max_extra_delay: u64, theta: u32) -> Timing {
        let lifetime = (nodes as u64 + 1) * (1 + max_extra_delay);
        let interval = 2 * lifetime + 2;
        let heartbeat = (interval / (2 * theta.max(1) as u64)).max(1);
        Timing { lifetime, interval, heartbeat }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerNode {
    pub state: ControllerState,
    pub senders: BTreeMap<NodeId, Sender>,
    pub iterations: u64,
    pub rounds: u64,
    /// Step of the latest round completion.
    pub last_round_step: Option<u64>,
}

/// Counters gathered while the world runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub c_resets: BTreeMap<NodeId, u64>,
    /// Deletions of a live controller's manager entry or rules.
    pub illegitimate_deletions: u64,
    pub deletions: u64,
    /// Channel-level packets sent (requests and acks).
    pub packets: u64,
    /// Transmitted payloads the sender discarded without an acknowledgement.
    pub payload_losses: u64,
    /// Acks accepted for a payload other than the one that was answered.
    pub false_acks: u64,
    pub max_rules_per_switch: usize,
    pub max_reply_db: usize,
}

#[derive(Debug, Clone)]
struct Packet {
    ctrl: NodeId,
    peer: NodeId,
    request: bool,
    msg: u64,
    hops: Vec<NodeId>,
    /// Acks only: nodes still to visit, next one last.
    route: Vec<NodeId>,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
enum Event {
    Tick(NodeId),
    Heartbeat(NodeId),
    Arrive { at: NodeId, pkt: Packet },
}

/// Why a packet disappeared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Loss {
    Link,
    Omitted,
    Dead,
    NoRoute,
    Loop,
}

impl Loss {
    fn name(self) -> &'static str {
        match self {
            Loss::Link => "link_down",
            Loss::Omitted => "omitted",
            Loss::Dead => "dead",
            Loss::NoRoute => "noroute",
            Loss::Loop => "loop",
        }
    }

    /// Routing losses end an exchange attempt; link losses are retried.
    fn resolves(self) -> bool {
        matches!(self, Loss::Dead | Loss::NoRoute | Loss::Loop)
    }
}

pub struct World {
    pub graph: Graph,
    pub alive: BTreeSet<NodeId>,
    pub switches: BTreeMap<NodeId, SwitchState>,
    pub controllers: BTreeMap<NodeId, ControllerNode>,
    /// Token-channel receivers, keyed by (node, controller).
    pub receivers: BTreeMap<(NodeId, NodeId), Receiver>,
    pub detectors: BTreeMap<NodeId, DetectorState>,
    pub kappa: usize,
    pub theta: u32,
    pub three_tag: bool,
    pub memory_adaptive: bool,
    pub timing: Timing,
    pub stats: Stats,
    pub step: u64,
    pub now: u64,
    default_plan: FaultPlan,
    plans: BTreeMap<Edge, FaultPlan>,
    link_state: BTreeMap<(NodeId, NodeId), LinkFaultState>,
    heartbeat_state: BTreeMap<(NodeId, NodeId), LinkFaultState>,
    events: BTreeMap<(u64, u64), Event>,
    seq: u64,
    rng: ChaCha8Rng,
    next_msg: u64,
    frames: FrameTracker,
    trace: Option<Vec<String>>,
    /// Ground truth: id of the last payload each receiver accepted.
    accepted: BTreeMap<(NodeId, NodeId), u64>,
}

impl World {
    /// The scenario's network with its active controllers running and every
    /// node in its initial state. Faults and the start mode are not applied.
    pub fn new(params: &Scenario) -> World {
        let graph = &params.graph;
        let active = &params.active;
        let n_c = graph.n_controllers() as usize;
        let n_s = graph.switches().count();
        let prt = n_prt(params.kappa) as usize;
        let max_rules = crate::switch_rule_bound(n_c, n_s, prt) + n_c;
        let mut alive: BTreeSet<NodeId> = graph.switches().collect();
        alive.extend(active.iter().copied().filter(|&c| graph.is_controller(c)));
        let switches = graph.switches().map(|s| (s, SwitchState::new(s, max_rules, n_c))).collect();
        let timing = Timing::new(graph.node_count(), params.link_plan.max_extra_delay(), params.theta);
        let mut w = World {
            graph: graph.clone(),
            alive,
            switches,
            controllers: BTreeMap::new(),
            receivers: BTreeMap::new(),
            detectors: graph.nodes().map(|n| (n, DetectorState::new(params.theta))).collect(),
            kappa: params.kappa,
            theta: params.theta,
            three_tag: params.three_tag,
            memory_adaptive: params.memory_adaptive,
            timing,
            stats: Stats::default(),
            step: 0,
            now: 0,
            default_plan: params.link_plan.clone(),
            plans: BTreeMap::new(),
            link_state: BTreeMap::new(),
            heartbeat_state: BTreeMap::new(),
            events: BTreeMap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            next_msg: 1,
            frames: FrameTracker::new(),
            trace: params.trace.then(Vec::new),
            accepted: BTreeMap::new(),
        };
        for c in active.iter().copied().filter(|&c| graph.is_controller(c)) {
            w.controllers.insert(c, w.fresh_controller(c));
            w.frame_event(FrameEvent::Up { ctrl: c });
        }
        let nodes: Vec<NodeId> = w.alive.iter().copied().collect();
        for n in nodes {
            w.schedule_start(n);
        }
        w
    }

    fn fresh_controller(&self, c: NodeId) -> ControllerNode {
        let n_c = self.graph.n_controllers() as usize;
        let n_s = self.graph.switches().count();
        let mut cfg = ControllerConfig::for_network(n_c, n_s, self.kappa);
        cfg.three_tag = self.three_tag;
        cfg.memory_adaptive = self.memory_adaptive;
        ControllerNode {
            state: ControllerState::new(c, self.graph.n_controllers(), cfg),
            senders: BTreeMap::new(),
            iterations: 0,
            rounds: 0,
            last_round_step: None,
        }
    }

    fn schedule_start(&mut self, n: NodeId) {
        let hb = self.rng.gen_range(0..self.timing.heartbeat);
        self.schedule(hb, Event::Heartbeat(n));
        if self.graph.is_controller(n) {
            let t = self.rng.gen_range(0..self.timing.interval);
            self.schedule(t, Event::Tick(n));
        }
    }

    fn schedule(&mut self, delay: u64, ev: Event) {
        self.seq += 1;
        self.events.insert((self.now + delay, self.seq), ev);
    }

    fn log(&mut self, kind: &str, node: NodeId, detail: std::fmt::Arguments) {
        if let Some(t) = &mut self.trace {
            t.push(format!("{} {} {} {}", self.step, kind, node, detail));
        }
    }

    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn frames(&self) -> usize {
        self.frames.frames()
    }

    pub fn frame_boundaries(&self) -> &[u64] {
        self.frames.boundaries()
    }

    pub fn is_alive(&self, n: NodeId) -> bool {
        self.alive.contains(&n)
    }

    pub fn live_controllers(&self) -> BTreeSet<NodeId> {
        self.controllers.keys().copied().filter(|c| self.alive.contains(c)).collect()
    }

    /// Operational graph restricted to live nodes.
    pub fn ground_truth(&self) -> Graph {
        let mut g = self.graph.operational();
        let dead: Vec<NodeId> = g.nodes().filter(|n| !self.alive.contains(n)).collect();
        for n in dead {
            g.remove_node(n);
        }
        g
    }

    fn frame_event(&mut self, ev: FrameEvent) -> bool {
        match &ev {
            FrameEvent::Iter { ctrl, iter, msgs } => {
                let list: Vec<String> = msgs.iter().map(u64::to_string).collect();
                let list = if list.is_empty() { "-".to_string() } else { list.join(",") };
                self.log("iter", *ctrl, format_args!("n={iter} msgs={list}"));
            }
            FrameEvent::Up { ctrl } => self.log("up", *ctrl, format_args!("-")),
            FrameEvent::Done { .. } | FrameEvent::Down { .. } => {}
        }
        self.frames.observe(self.step, &ev)
    }

    fn done(&mut self, ctrl: NodeId, msg: u64, why: &str) -> bool {
        self.log("done", ctrl, format_args!("msg={msg} why={why}"));
        self.frame_event(FrameEvent::Done { ctrl, msg })
    }

    /// Process one event. Returns `None` when nothing is scheduled, otherwise
    /// whether this step closed a frame.
    pub fn step(&mut self) -> Option<bool> {
        let ((time, _), ev) = self.events.pop_first()?;
        self.now = time;
        self.step += 1;
        let boundary = match ev {
            Event::Tick(c) => self.controller_tick(c),
            Event::Heartbeat(n) => {
                self.heartbeat(n);
                false
            }
            Event::Arrive { at, pkt } => self.arrive(at, pkt),
        };
        Some(boundary)
    }

    fn detector_live(&self, n: NodeId) -> BTreeSet<NodeId> {
        let ports: BTreeSet<NodeId> = self.graph.neighbors(n).collect();
        self.detectors.get(&n).map(|d| d.live(&ports)).unwrap_or(ports)
    }

    /// Ports a node can forward on: operational links not suspected failed.
    fn usable_ports(&self, n: NodeId) -> BTreeSet<NodeId> {
        let live = self.detector_live(n);
        self.graph.operational_neighbors(n).filter(|m| live.contains(m)).collect()
    }

    fn heartbeat(&mut self, n: NodeId) {
        if !self.alive.contains(&n) || !self.graph.contains(n) {
            return;
        }
        let ports: BTreeSet<NodeId> = self.graph.neighbors(n).collect();
        let mut responded = BTreeSet::new();
        for &m in &ports {
            if !self.alive.contains(&m) || !self.graph.is_operational(n, m) {
                continue;
            }
            let plan = self.plans.get(&edge(n, m)).unwrap_or(&self.default_plan).clone();
            let st = self.heartbeat_state.entry((n, m)).or_default();
            if !heartbeat_lost(&plan, st, &mut self.rng) {
                responded.insert(m);
            }
        }
        let det = self.detectors.entry(n).or_insert_with(|| DetectorState::new(self.theta));
        let changes = det.step(&ports, &responded);
        for (m, up) in changes {
            self.log(if up { "trust" } else { "suspect" }, n, format_args!("{m}"));
        }
        self.schedule(self.timing.heartbeat, Event::Heartbeat(n));
    }

    fn controller_tick(&mut self, c: NodeId) -> bool {
        if !self.alive.contains(&c) {
            return false;
        }
        let nbrs = self.detector_live(c);
        let step = self.step;
        let node = self.controllers.get_mut(&c).expect("tick for unknown controller");
        let it = node.state.iterate(&nbrs);
        node.iterations += 1;
        let iter = node.iterations;
        if it.new_round {
            node.rounds += 1;
            node.last_round_step = Some(step);
        }
        let db = node.state.reply_db.len();
        self.stats.max_reply_db = self.stats.max_reply_db.max(db);
        if it.new_round {
            let tag = self.controllers[&c].state.curr_tag;
            self.log("round", c, format_args!("tag={tag}"));
        }

        let mut boundary = false;
        let mut msgs = Vec::new();
        let targets: BTreeSet<NodeId> = it.batches.iter().map(|(j, _)| *j).collect();
        let mut resolved = Vec::new();
        for (j, batch) in it.batches {
            let id = self.next_msg;
            self.next_msg += 1;
            msgs.push(id);
            let node = self.controllers.get_mut(&c).unwrap();
            let dropped = node.senders.entry(j).or_default().supersede(id, batch);
            resolved.extend(dropped.into_iter().map(|m| (m, "superseded")));
        }
        let node = self.controllers.get_mut(&c).unwrap();
        for (j, s) in node.senders.iter_mut() {
            if !targets.contains(j) {
                // A transmitted payload waits, unsent, until the peer is
                // targeted again and it can be retransmitted.
                resolved.extend(s.in_flight.as_ref().filter(|f| f.attempts > 0).map(|f| (f.msg, "parked")));
                resolved.extend(s.withdraw().into_iter().map(|m| (m, "abandoned")));
            }
        }
        for (m, why) in resolved {
            boundary |= self.done(c, m, why);
        }
        boundary |= self.frame_event(FrameEvent::Iter { ctrl: c, iter, msgs });

        for j in targets {
            let node = self.controllers.get_mut(&c).unwrap();
            let sender = node.senders.get_mut(&j).unwrap();
            let attempt = sender.in_flight.as_ref().map(|f| f.attempts).unwrap_or(0);
            if let Some((msg, m)) = sender.transmit() {
                boundary |= self.send_request(c, j, msg, attempt, &m);
            }
        }

        let jitter = self.rng.gen_range(0..=self.timing.interval / 4);
        self.schedule(self.timing.interval + jitter, Event::Tick(c));
        boundary
    }

    fn send_request(&mut self, c: NodeId, j: NodeId, msg: u64, attempt: u32, m: &Message) -> bool {
        self.stats.packets += 1;
        self.log("send", c, format_args!("to={j} msg={msg} bit={}", m.bit() as u8));
        let pkt = Packet { ctrl: c, peer: j, request: true, msg, hops: vec![c], route: Vec::new(), bytes: encode(m) };
        let ports = self.usable_ports(c);
        let mut usable: Vec<NodeId> =
            self.controllers[&c].state.first_hops(j).iter().copied().filter(|h| ports.contains(h)).collect();
        if usable.is_empty() && ports.contains(&j) {
            usable.push(j);
        }
        if usable.is_empty() {
            return self.lose(c, pkt, Loss::NoRoute);
        }
        let next = usable[attempt as usize % usable.len()];
        self.hop(pkt, c, next)
    }

    fn hop(&mut self, pkt: Packet, from: NodeId, to: NodeId) -> bool {
        if !self.graph.is_operational(from, to) {
            return self.lose(from, pkt, Loss::Link);
        }
        let plan = self.plans.get(&edge(from, to)).unwrap_or(&self.default_plan).clone();
        let st = self.link_state.entry((from, to)).or_default();
        let copies = link_transmit(&plan, st, &mut self.rng);
        if copies.is_empty() {
            return self.lose(from, pkt, Loss::Omitted);
        }
        for extra in copies {
            self.schedule(1 + extra, Event::Arrive { at: to, pkt: pkt.clone() });
        }
        false
    }

    fn lose(&mut self, at: NodeId, pkt: Packet, why: Loss) -> bool {
        let kind = if pkt.request { "req" } else { "ack" };
        self.log("lost", at, format_args!("{kind} ctrl={} peer={} msg={} why={}", pkt.ctrl, pkt.peer, pkt.msg, why.name()));
        if !(pkt.request && why.resolves()) || !self.alive.contains(&pkt.ctrl) {
            return false;
        }
        // The in-flight payload cannot get through on this attempt; it and
        // everything queued behind it are blocked until the next tick.
        let mut ids = vec![pkt.msg];
        if let Some(s) = self.controllers.get(&pkt.ctrl).and_then(|n| n.senders.get(&pkt.peer)) {
            if s.in_flight.as_ref().is_some_and(|f| f.msg == pkt.msg) {
                ids.extend(s.pending.iter().map(|(m, _)| *m));
            }
        }
        let mut boundary = false;
        for (k, m) in ids.into_iter().enumerate() {
            boundary |= self.done(pkt.ctrl, m, if k == 0 { why.name() } else { "blocked" });
        }
        boundary
    }

    fn arrive(&mut self, at: NodeId, mut pkt: Packet) -> bool {
        if !self.alive.contains(&at) || !self.graph.contains(at) {
            return self.lose(at, pkt, Loss::Dead);
        }
        pkt.hops.push(at);
        if pkt.request {
            if at == pkt.peer {
                return self.deliver_request(at, pkt);
            }
            if pkt.hops.len() > self.graph.node_count() + 1 {
                return self.lose(at, pkt, Loss::Loop);
            }
            let Some(sw) = self.switches.get(&at) else {
                return self.lose(at, pkt, Loss::NoRoute);
            };
            let header = Header { src: pkt.ctrl, dest: pkt.peer, control: true };
            match sw.forward(header, &self.usable_ports(at)) {
                Decision::ToPort(next) => self.hop(pkt, at, next),
                _ => self.lose(at, pkt, Loss::NoRoute),
            }
        } else {
            if at == pkt.ctrl {
                return self.deliver_ack(at, pkt);
            }
            match pkt.route.pop() {
                Some(next) => self.hop(pkt, at, next),
                None => self.lose(at, pkt, Loss::NoRoute),
            }
        }
    }

    fn deliver_request(&mut self, at: NodeId, pkt: Packet) -> bool {
        let (bit, batch) = match decode(&pkt.bytes) {
            Ok(Message::Request { bit, batch }) => (bit, batch),
            _ => {
                self.log("garbage", at, format_args!("from={}", pkt.ctrl));
                return false;
            }
        };
        let ctrl = pkt.ctrl;
        let fresh = self.receivers.entry((at, ctrl)).or_default().is_fresh(bit);
        let ack = if fresh {
            let reply = if let Some(sw) = self.switches.get_mut(&at) {
                let ports: BTreeSet<NodeId> = self.graph.neighbors(at).collect();
                let nbrs = self.detectors.get(&at).map(|d| d.live(&ports)).unwrap_or_else(|| ports.clone());
                match sw.apply_batch(ctrl, &batch, &ports, &nbrs) {
                    Some(out) => {
                        let rules = sw.rules.len();
                        self.stats.max_rules_per_switch = self.stats.max_rules_per_switch.max(rules);
                        // One event per victim and batch; a controller clearing its own state is not counted.
                        let mut victims: Vec<NodeId> = out
                            .deletions
                            .iter()
                            .map(|d| match d {
                                Deletion::Manager(k) | Deletion::Rules(k) => *k,
                            })
                            .collect();
                        victims.sort();
                        victims.dedup();
                        for k in victims {
                            self.stats.deletions += 1;
                            let illegit = k != ctrl && self.alive.contains(&k) && self.graph.is_controller(k);
                            if illegit {
                                self.stats.illegitimate_deletions += 1;
                            }
                            self.log("delete", at, format_args!("by={ctrl} of={k} live={}", illegit as u8));
                        }
                        Some(out.reply)
                    }
                    None => None,
                }
            } else if let Some(node) = self.controllers.get(&at) {
                match batch.query_tag() {
                    Some(tag) if batch.is_well_formed() => Some(node.state.on_query(ctrl, tag)),
                    _ => None,
                }
            } else {
                None
            };
            self.accepted.insert((at, ctrl), pkt.msg);
            self.receivers.get_mut(&(at, ctrl)).unwrap().accept(bit, reply)
        } else {
            self.receivers[&(at, ctrl)].duplicate_ack(bit)
        };
        self.stats.packets += 1;
        let mut route = pkt.hops.clone();
        route.pop();
        let next = route.pop();
        let ack_pkt = Packet { ctrl, peer: at, request: false, msg: pkt.msg, hops: vec![at], route, bytes: encode(&ack) };
        match next {
            Some(n) => self.hop(ack_pkt, at, n),
            None => self.lose(at, ack_pkt, Loss::NoRoute),
        }
    }

    fn deliver_ack(&mut self, c: NodeId, pkt: Packet) -> bool {
        let Ok(Message::Ack { bit, reply }) = decode(&pkt.bytes) else {
            self.log("garbage", c, format_args!("from={}", pkt.peer));
            return false;
        };
        let Some(node) = self.controllers.get_mut(&c) else { return false };
        let Some(done) = node.senders.get_mut(&pkt.peer).and_then(|s| s.on_ack(bit)) else {
            return false;
        };
        if done.msg != pkt.msg {
            self.stats.false_acks += 1;
        }
        let mut reset = false;
        if let Some(r) = reply {
            reset = node.state.on_reply(r);
        }
        let db = node.state.reply_db.len();
        self.stats.max_reply_db = self.stats.max_reply_db.max(db);
        if reset {
            *self.stats.c_resets.entry(c).or_default() += 1;
            self.log("creset", c, format_args!("db={db}"));
        }
        self.done(c, done.msg, "ack")
    }

    /// Apply a fault now. Returns whether it closed a frame.
    pub fn inject(&mut self, fault: &Fault) -> bool {
        self.log("fault", NodeId(0), format_args!("{fault}"));
        match fault {
            Fault::CorruptState => {
                self.corrupt();
                false
            }
            Fault::FailStop(c) => {
                if !self.alive.remove(c) {
                    return false;
                }
                if self.graph.is_controller(*c) {
                    self.log("down", *c, format_args!("fail_stop"));
                    return self.frame_event(FrameEvent::Down { ctrl: *c });
                }
                false
            }
            Fault::RemoveSwitch(s) => {
                if self.graph.is_switch(*s) {
                    self.alive.remove(s);
                    self.graph.remove_node(*s);
                    self.switches.remove(s);
                }
                false
            }
            Fault::RemoveLink(a, b) => {
                self.graph.remove_edge(*a, *b);
                false
            }
            Fault::AddLink(a, b) => {
                self.graph.add_edge(*a, *b);
                false
            }
            Fault::LinkDown(a, b) => {
                self.graph.set_operational(*a, *b, false);
                false
            }
            Fault::LinkUp(a, b) => {
                self.graph.set_operational(*a, *b, true);
                false
            }
            Fault::LinkPlan { link, plan } => {
                match link {
                    Some((a, b)) => {
                        self.plans.insert(edge(*a, *b), plan.clone());
                    }
                    None => {
                        self.plans.clear();
                        self.default_plan = plan.clone();
                    }
                }
                false
            }
            Fault::StartController(c) => {
                if self.graph.is_controller(*c) && !self.alive.contains(c) {
                    self.alive.insert(*c);
                    let fresh = self.fresh_controller(*c);
                    self.controllers.insert(*c, fresh);
                    self.schedule_start(*c);
                    self.frame_event(FrameEvent::Up { ctrl: *c });
                }
                false
            }
        }
    }

    /// Largest rule table over all switches right now.
    /// Payloads numbered below `before` that went out to a live peer and are
    /// still waiting for their acknowledgement.
    pub fn unacked_before(&self, before: u64) -> u64 {
        let waiting = |j: &NodeId, s: &crate::channels::Sender| {
            self.alive.contains(j) && s.in_flight.as_ref().is_some_and(|f| f.attempts > 0 && f.msg < before)
        };
        self.controllers
            .iter()
            .filter(|(c, _)| self.alive.contains(c))
            .map(|(_, n)| n.senders.iter().filter(|(j, s)| waiting(j, s)).count() as u64)
            .sum()
    }

    pub fn max_rules_now(&self) -> usize {
        self.switches.values().map(|s| s.rules.len()).max().unwrap_or(0)
    }

    pub fn max_reply_db_now(&self) -> usize {
        self.controllers
            .iter()
            .filter(|(c, _)| self.alive.contains(c))
            .map(|(_, n)| n.state.reply_db.len())
            .max()
            .unwrap_or(0)
    }
}
