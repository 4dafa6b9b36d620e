//! Alternating-bit token channel between a controller and one peer.
//!
//! The sender keeps one payload in flight and retransmits it on every tick
//! until an acknowledgement with the matching bit returns; the receiver
//! delivers a payload upward only when its bit differs from the last one it
//! accepted and answers duplicates with the cached acknowledgement. New
//! payloads leave only on ticks spaced further apart than a packet's lifetime,
//! so copies of an old exchange are gone before the bit repeats.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wire::Message;
use super::{link_transmit, FaultPlan, LinkFaultState};
use crate::controller::Tag;
use crate::dataplane::{Command, CommandBatch, QueryReply};
use crate::topology::NodeId;

/// Payloads that may wait behind the in-flight one.
pub const PENDING_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub msg: u64,
    pub payload: CommandBatch,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sender {
    pub bit: bool,
    pub in_flight: Option<InFlight>,
    pub pending: VecDeque<(u64, CommandBatch)>,
}

impl Sender {
    pub fn new() -> Sender {
        Sender::default()
    }

    /// Queue a payload. Returns the id of the oldest pending payload if it had
    /// to be dropped to respect [`PENDING_CAPACITY`].
    pub fn send(&mut self, msg: u64, payload: CommandBatch) -> Option<u64> {
        if self.in_flight.is_none() && self.pending.is_empty() {
            self.in_flight = Some(InFlight { msg, payload, attempts: 0 });
            return None;
        }
        self.pending.push_back((msg, payload));
        if self.pending.len() > PENDING_CAPACITY {
            return self.pending.pop_front().map(|(m, _)| m);
        }
        None
    }

    /// Queue a payload that makes every still-pending one obsolete, including
    /// an in-flight payload that was never transmitted. Returns the ids of the
    /// discarded payloads.
    pub fn supersede(&mut self, msg: u64, payload: CommandBatch) -> Vec<u64> {
        let mut dropped = Vec::new();
        if self.in_flight.as_ref().is_some_and(|f| f.attempts == 0) {
            dropped.extend(self.in_flight.take().map(|f| f.msg));
        }
        dropped.extend(self.pending.drain(..).map(|(m, _)| m));
        self.send(msg, payload);
        dropped
    }

    /// Drop every payload that was never transmitted; one already on the wire
    /// stays in flight until it is acknowledged. Returns the discarded ids.
    pub fn withdraw(&mut self) -> Vec<u64> {
        let mut dropped = Vec::new();
        if self.in_flight.as_ref().is_some_and(|f| f.attempts == 0) {
            dropped.extend(self.in_flight.take().map(|f| f.msg));
        }
        dropped.extend(self.pending.drain(..).map(|(m, _)| m));
        dropped
    }

    /// The packet to (re)transmit now, if a payload is in flight.
    pub fn transmit(&mut self) -> Option<(u64, Message)> {
        if self.in_flight.is_none() {
            // Only reachable from a corrupted state.
            self.in_flight = self.pending.pop_front().map(|(msg, payload)| InFlight { msg, payload, attempts: 0 });
        }
        let bit = self.bit;
        self.in_flight.as_mut().map(|f| {
            f.attempts += 1;
            (f.msg, Message::Request { bit, batch: f.payload.clone() })
        })
    }

    /// Handle an acknowledgement. Returns the completed payload when the ack
    /// matches the in-flight one; the next pending payload is promoted.
    pub fn on_ack(&mut self, bit: bool) -> Option<InFlight> {
        let sent = self.in_flight.as_ref().is_some_and(|f| f.attempts > 0);
        if !sent || bit != self.bit {
            return None;
        }
        self.bit = !self.bit;
        let done = self.in_flight.take();
        self.in_flight = self.pending.pop_front().map(|(msg, payload)| InFlight { msg, payload, attempts: 0 });
        done
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Receiver {
    pub last_bit: Option<bool>,
    /// Reply sent for the last accepted payload, re-sent for duplicates.
    pub cached: Option<QueryReply>,
}

impl Receiver {
    pub fn is_fresh(&self, bit: bool) -> bool {
        self.last_bit != Some(bit)
    }

    /// Record an accepted payload and build its acknowledgement.
    pub fn accept(&mut self, bit: bool, reply: Option<QueryReply>) -> Message {
        self.last_bit = Some(bit);
        self.cached = reply.clone();
        Message::Ack { bit, reply }
    }

    pub fn duplicate_ack(&self, bit: bool) -> Message {
        Message::Ack { bit, reply: self.cached.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzParams {
    /// Maximum one-way delay in ticks.
    pub max_delay: u64,
    pub plan: FaultPlan,
    /// Genuine payloads to push through.
    pub payloads: u64,
    /// Stale packets per direction in the corrupted start state.
    pub max_stale: usize,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            max_delay: 4,
            plan: FaultPlan { omit_prob: 0.3, max_consecutive_omissions: 3, dup_prob: 0.3, ..FaultPlan::none() },
            payloads: 30,
            max_stale: 3,
        }
    }
}

/// Outcome of one fuzzed channel run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelFuzzReport {
    pub seed: u64,
    /// Completed exchanges before the single-token condition held for good.
    pub exchanges_to_stable: usize,
    /// Acks accepted for a payload the receiver never acknowledged.
    pub false_acks: usize,
    /// After stabilization, genuine payloads were delivered once each, in order.
    pub fifo: bool,
    pub delivered: u64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Pkt {
    forward: bool,
    bit: bool,
    /// Forward: payload id. Backward: id of the payload the ack answers.
    msg: u64,
}

const STALE: u64 = 0;
const GARBAGE_BASE: u64 = u64::MAX / 2;

fn garbage_batch(rng: &mut ChaCha8Rng) -> CommandBatch {
    let t = Tag { owner: NodeId(rng.gen_range(1..4)), epoch: rng.gen_range(0..8) };
    let mut cmds = vec![Command::NewRound(t)];
    if rng.gen_bool(0.5) {
        cmds.push(Command::AddMngr(NodeId(rng.gen_range(1..4))));
    }
    if rng.gen_bool(0.5) {
        cmds.push(Command::Query(t));
    }
    CommandBatch(cmds)
}

fn genuine_batch(msg: u64) -> CommandBatch {
    let t = Tag { owner: NodeId(1), epoch: msg };
    CommandBatch(vec![Command::NewRound(t), Command::Query(t)])
}

/// Run one sender/receiver pair over a faulty link from a randomly corrupted
/// start (bits, in-flight and pending payloads, receiver cache, stale packets
/// in both directions) and measure how the channel recovers.
pub fn fuzz_channel(seed: u64, params: &FuzzParams) -> ChannelFuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 2 * params.max_delay + 1;
    let mut snd = Sender { bit: rng.gen_bool(0.5), in_flight: None, pending: VecDeque::new() };
    let mut garbage_id = GARBAGE_BASE;
    if rng.gen_bool(0.7) {
        garbage_id += 1;
        snd.in_flight = Some(InFlight { msg: garbage_id, payload: garbage_batch(&mut rng), attempts: rng.gen_range(0..3) });
    }
    for _ in 0..rng.gen_range(0..=PENDING_CAPACITY) {
        garbage_id += 1;
        snd.pending.push_back((garbage_id, garbage_batch(&mut rng)));
    }
    let mut rcv = Receiver {
        last_bit: match rng.gen_range(0..3) {
            0 => None,
            1 => Some(false),
            _ => Some(true),
        },
        cached: None,
    };
    // Ground truth: id of the payload the receiver's cache answers.
    let mut cached_for = STALE;
    let mut net: BinaryHeap<Reverse<(u64, u64, Pkt)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for forward in [true, false] {
        for _ in 0..rng.gen_range(0..=params.max_stale) {
            seq += 1;
            let at = rng.gen_range(1..=params.max_delay);
            net.push(Reverse((at, seq, Pkt { forward, bit: rng.gen_bool(0.5), msg: STALE })));
        }
    }
    let mut link = [LinkFaultState::default(), LinkFaultState::default()];

    let mut next_payload = 1u64;
    let mut exchanges = 0usize;
    let mut false_acks = 0usize;
    let mut stable_since: Option<usize> = None;
    let mut stable_tick_exchanges = 0usize;
    let mut delivered_after: Vec<u64> = Vec::new();
    let mut acked_after: Vec<u64> = Vec::new();
    let mut delivered = 0u64;
    let max_ticks = (params.payloads + 20) * 40;

    let mut send_pkt = |net: &mut BinaryHeap<Reverse<(u64, u64, Pkt)>>,
                        rng: &mut ChaCha8Rng,
                        link: &mut LinkFaultState,
                        now: u64,
                        p: Pkt| {
        for _ in link_transmit(&params.plan, link, rng) {
            seq += 1;
            let at = now + rng.gen_range(1..=params.max_delay);
            net.push(Reverse((at, seq, p.clone())));
        }
    };

    for tick in 0..max_ticks {
        let now = tick * period;
        // Deliver everything due before this tick.
        while let Some(Reverse((at, _, _))) = net.peek() {
            if *at > now {
                break;
            }
            let Reverse((at, _, p)) = net.pop().unwrap();
            if p.forward {
                let ack_for = if rcv.is_fresh(p.bit) {
                    rcv.accept(p.bit, None);
                    cached_for = p.msg;
                    if stable_since.is_some() && p.msg != STALE && p.msg < GARBAGE_BASE {
                        delivered_after.push(p.msg);
                    }
                    p.msg
                } else {
                    cached_for
                };
                send_pkt(&mut net, &mut rng, &mut link[1], at, Pkt { forward: false, bit: p.bit, msg: ack_for });
            } else if let Some(f) = snd.on_ack(p.bit) {
                exchanges += 1;
                if p.msg != f.msg {
                    false_acks += 1;
                }
                if f.msg < GARBAGE_BASE {
                    delivered += 1;
                    if stable_since.is_some() {
                        acked_after.push(f.msg);
                    }
                }
            }
        }
        // Single token at a tick: nothing stale in transit and the receiver
        // does not already hold the sender's current bit for another payload.
        let consistent = rcv.last_bit != Some(snd.bit)
            || snd.in_flight.as_ref().is_some_and(|f| f.attempts > 0 && cached_for == f.msg);
        let ok = tick > 0 && net.is_empty() && consistent;
        if ok {
            if stable_since.is_none() {
                stable_since = Some(tick as usize);
                stable_tick_exchanges = exchanges;
            }
        } else if stable_since.is_some() {
            stable_since = None;
            delivered_after.clear();
            acked_after.clear();
        }
        if delivered >= params.payloads && stable_since.is_some() {
            break;
        }
        if snd.in_flight.is_none() && snd.pending.is_empty() {
            snd.send(next_payload, genuine_batch(next_payload));
            next_payload += 1;
        }
        if let Some((msg, m)) = snd.transmit() {
            send_pkt(&mut net, &mut rng, &mut link[0], now, Pkt { forward: true, bit: m.bit(), msg });
        }
    }

    let fifo = delivered_after.windows(2).all(|w| w[1] == w[0] + 1)
        && acked_after.iter().all(|m| delivered_after.contains(m))
        && acked_after.windows(2).all(|w| w[1] == w[0] + 1);
    ChannelFuzzReport {
        seed,
        exchanges_to_stable: stable_tick_exchanges,
        false_acks,
        fifo,
        delivered,
        completed: delivered >= params.payloads && stable_since.is_some(),
    }
}
