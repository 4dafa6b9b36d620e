//! Renaissance: a self-stabilizing in-band control plane for software defined
//! networks, built as a deterministic simulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: graphs, first shortest paths, κ-fault-resilient rule synthesis
//!   and the brute-force resilience oracle.
//! - [`dataplane`]: the abstract switch with bounded rule and manager storage.
//! - [`channels`]: faulty links, the token channel, in-band routing helpers and
//!   the Θ failure detector.
//! - [`controller`]: the controller's do-forever loop and reply handling.
//! - [`engine`]: the discrete-event world, fault injection, frames and the
//!   legitimacy oracle.

pub mod channels;
pub mod controller;
pub mod dataplane;
pub mod engine;
pub mod topology;

pub use controller::{ControllerState, Tag};
pub use dataplane::{Command, CommandBatch, QueryReply, Rule, SwitchState};
pub use engine::{RunMetrics, Scenario, World};
pub use topology::{Graph, NodeId};

/// Stabilization allowance of the token channel, in completed exchanges.
pub const DELTA_COMM: usize = 3;
/// Stabilization allowance of the tag generator, in synchronization rounds.
pub const DELTA_SYNCH: usize = 2;

/// Frames needed to bootstrap from empty switches: `((Δc + Δs) + 2)·D + 1`.
pub fn bootstrap_frame_bound(diameter: usize) -> usize {
    (DELTA_COMM + DELTA_SYNCH + 2) * diameter + 1
}

/// Upper bound on illegitimate deletions of a run: `((Δc + Δs)·D + 1)·N_S`.
pub fn deletion_bound(diameter: usize, n_switches: usize) -> usize {
    ((DELTA_COMM + DELTA_SYNCH) * diameter + 1) * n_switches
}

/// Frames to reach a safe state from an arbitrary one.
pub fn stabilization_frame_bound(diameter: usize, n_controllers: usize, n_switches: usize) -> usize {
    bootstrap_frame_bound(diameter) * (deletion_bound(diameter, n_switches) + n_controllers + 1)
}

/// Per-switch rule bound: `N_C·(N_C + N_S − 1)·n_prt`.
pub fn switch_rule_bound(n_controllers: usize, n_switches: usize, n_prt: usize) -> usize {
    n_controllers * (n_controllers + n_switches - 1) * n_prt
}
