//! Links with injected packet faults, the token channel that runs over them,
//! the wire encoding, and the Θ failure detector.

mod detector;
mod token;
pub mod wire;

pub use detector::DetectorState;
pub use token::{fuzz_channel, ChannelFuzzReport, FuzzParams, InFlight, Receiver, Sender, PENDING_CAPACITY};
pub use wire::{decode, encode, Message, WireError};

use rand::Rng;

/// Packet faults armed on a link. All probabilities are per transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    /// Omit the first `n` packets sent over the link.
    pub omit_first: u32,
    pub omit_prob: f64,
    /// Fairness cap: after this many consecutive omissions the next packet passes.
    pub max_consecutive_omissions: u32,
    pub dup_prob: f64,
    pub reorder_prob: f64,
    /// Extra delay, in ticks, of a reordered copy.
    pub reorder_delay: u64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan::none()
    }
}

impl FaultPlan {
    pub fn none() -> FaultPlan {
        FaultPlan {
            omit_first: 0,
            omit_prob: 0.0,
            max_consecutive_omissions: 0,
            dup_prob: 0.0,
            reorder_prob: 0.0,
            reorder_delay: 0,
        }
    }

    pub fn omit_first(n: u32) -> FaultPlan {
        FaultPlan { omit_first: n, ..FaultPlan::none() }
    }

    pub fn lossy(omit_prob: f64, cap: u32) -> FaultPlan {
        FaultPlan { omit_prob, max_consecutive_omissions: cap, ..FaultPlan::none() }
    }

    pub fn duplicating(dup_prob: f64) -> FaultPlan {
        FaultPlan { dup_prob, ..FaultPlan::none() }
    }

    pub fn reordering(prob: f64, delay: u64) -> FaultPlan {
        FaultPlan { reorder_prob: prob, reorder_delay: delay, ..FaultPlan::none() }
    }

    /// Largest extra delay any copy can get.
    pub fn max_extra_delay(&self) -> u64 {
        if self.reorder_prob > 0.0 {
            self.reorder_delay
        } else {
            0
        }
    }
}

/// Per-link counters the fault plan needs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkFaultState {
    pub sent: u64,
    pub consecutive_omissions: u32,
}

/// Decide the fate of one transmission over an operational link: the returned
/// vector holds the extra delay of every delivered copy (empty when omitted).
pub fn link_transmit<R: Rng>(plan: &FaultPlan, state: &mut LinkFaultState, rng: &mut R) -> Vec<u64> {
    state.sent += 1;
    let forced_loss = state.sent <= plan.omit_first as u64;
    let random_loss = plan.omit_prob > 0.0
        && state.consecutive_omissions < plan.max_consecutive_omissions
        && rng.gen_bool(plan.omit_prob.clamp(0.0, 1.0));
    if forced_loss || random_loss {
        if !forced_loss {
            state.consecutive_omissions += 1;
        }
        return Vec::new();
    }
    state.consecutive_omissions = 0;
    let mut copies = vec![0];
    if plan.dup_prob > 0.0 && rng.gen_bool(plan.dup_prob.clamp(0.0, 1.0)) {
        copies.push(0);
    }
    for c in copies.iter_mut() {
        if plan.reorder_prob > 0.0 && plan.reorder_delay > 0 && rng.gen_bool(plan.reorder_prob.clamp(0.0, 1.0)) {
            *c = rng.gen_range(1..=plan.reorder_delay);
        }
    }
    copies
}

/// Heartbeat loss on a link: only the random, capped part of the plan applies.
pub fn heartbeat_lost<R: Rng>(plan: &FaultPlan, state: &mut LinkFaultState, rng: &mut R) -> bool {
    if plan.omit_prob > 0.0
        && state.consecutive_omissions < plan.max_consecutive_omissions
        && rng.gen_bool(plan.omit_prob.clamp(0.0, 1.0))
    {
        state.consecutive_omissions += 1;
        return true;
    }
    state.consecutive_omissions = 0;
    false
}
