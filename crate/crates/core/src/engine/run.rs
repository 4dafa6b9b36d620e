//! Scenarios: a network, its parameters and a fault schedule, run to
//! legitimacy or to a step budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::{check_legitimacy, LegitReport, World};
use crate::channels::FaultPlan;
use crate::topology::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Every node in its initial state.
    Empty,
    /// Every node, channel and detector overwritten with arbitrary values.
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum When {
    Step(u64),
    /// The first time the system has been legitimate for a full frame since
    /// the previous fault.
    Legit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    CorruptState,
    FailStop(NodeId),
    RemoveSwitch(NodeId),
    RemoveLink(NodeId, NodeId),
    AddLink(NodeId, NodeId),
    LinkDown(NodeId, NodeId),
    LinkUp(NodeId, NodeId),
    /// Arm a fault plan on one link, or on every link.
    LinkPlan { link: Option<(NodeId, NodeId)>, plan: FaultPlan },
    StartController(NodeId),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::CorruptState => write!(f, "corrupt"),
            Fault::FailStop(n) => write!(f, "fail_stop {n}"),
            Fault::RemoveSwitch(n) => write!(f, "remove_switch {n}"),
            Fault::RemoveLink(a, b) => write!(f, "remove_link {a} {b}"),
            Fault::AddLink(a, b) => write!(f, "add_link {a} {b}"),
            Fault::LinkDown(a, b) => write!(f, "link_down {a} {b}"),
            Fault::LinkUp(a, b) => write!(f, "link_up {a} {b}"),
            Fault::StartController(n) => write!(f, "start_controller {n}"),
            Fault::LinkPlan { link, plan } => {
                write!(
                    f,
                    "plan omit_first={} omit={} cap={} dup={} reorder={} delay={}",
                    plan.omit_first,
                    plan.omit_prob,
                    plan.max_consecutive_omissions,
                    plan.dup_prob,
                    plan.reorder_prob,
                    plan.reorder_delay
                )?;
                if let Some((a, b)) = link {
                    write!(f, " {a} {b}")?;
                }
                Ok(())
            }
        }
    }
}

fn nodes(args: &[&str], want: usize, what: &str) -> Result<Vec<NodeId>, String> {
    if args.len() != want {
        return Err(format!("{what} takes {want} node id(s)"));
    }
    args.iter().map(|a| a.parse().map(NodeId).map_err(|_| format!("bad node id {a:?}"))).collect()
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

/// Optional trailing link for plan faults.
fn plan_link(rest: &[&str]) -> Result<Option<(NodeId, NodeId)>, String> {
    match rest.len() {
        0 => Ok(None),
        2 => {
            let v = nodes(rest, 2, "link")?;
            Ok(Some((v[0], v[1])))
        }
        _ => Err("a plan applies to all links or to exactly one link".into()),
    }
}

impl FromStr for Fault {
    type Err = String;

    /// `corrupt`, `fail_stop N`, `remove_switch N`, `remove_link A B`,
    /// `add_link A B`, `link_down A B`, `link_up A B`, `start_controller N`,
    /// or a link plan (optionally followed by `A B`): `omit_first N`,
    /// `lossy P CAP`, `duplicate P`, `reorder P DELAY`, `reliable`.
    fn from_str(s: &str) -> Result<Fault, String> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let (&kind, args) = words.split_first().ok_or("empty fault")?;
        let link = |f: fn(NodeId, NodeId) -> Fault| -> Result<Fault, String> {
            let v = nodes(args, 2, kind)?;
            Ok(f(v[0], v[1]))
        };
        let plan = |n: usize, p: &dyn Fn(&[&str]) -> Result<FaultPlan, String>| -> Result<Fault, String> {
            if args.len() < n {
                return Err(format!("{kind} takes {n} argument(s)"));
            }
            Ok(Fault::LinkPlan { plan: p(&args[..n])?, link: plan_link(&args[n..])? })
        };
        match kind {
            "corrupt" if args.is_empty() => Ok(Fault::CorruptState),
            "fail_stop" => Ok(Fault::FailStop(nodes(args, 1, kind)?[0])),
            "remove_switch" => Ok(Fault::RemoveSwitch(nodes(args, 1, kind)?[0])),
            "start_controller" => Ok(Fault::StartController(nodes(args, 1, kind)?[0])),
            "remove_link" => link(Fault::RemoveLink),
            "add_link" => link(Fault::AddLink),
            "link_down" => link(Fault::LinkDown),
            "link_up" => link(Fault::LinkUp),
            "omit_first" => plan(1, &|a| Ok(FaultPlan::omit_first(num(a[0])?))),
            "lossy" => plan(2, &|a| Ok(FaultPlan::lossy(num(a[0])?, num(a[1])?))),
            "duplicate" => plan(1, &|a| Ok(FaultPlan::duplicating(num(a[0])?))),
            "reorder" => plan(2, &|a| Ok(FaultPlan::reordering(num(a[0])?, num(a[1])?))),
            "reliable" => plan(0, &|_| Ok(FaultPlan::none())),
            _ => Err(format!("unknown fault {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledFault {
    pub when: When,
    pub fault: Fault,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub graph: Graph,
    /// Controllers running from the start; the others stay absent.
    pub active: BTreeSet<NodeId>,
    pub kappa: usize,
    pub theta: u32,
    pub three_tag: bool,
    pub memory_adaptive: bool,
    pub seed: u64,
    pub max_steps: u64,
    pub start: Start,
    /// Fault plan on every link from the start. Its reordering delay also
    /// sizes the packet lifetime, so later plans should not exceed it.
    pub link_plan: FaultPlan,
    pub faults: Vec<ScheduledFault>,
    /// Frames to keep running after convergence, checking legitimacy holds.
    pub hold_frames: usize,
    pub trace: bool,
}

impl Scenario {
    pub fn new(id: impl Into<String>, graph: Graph) -> Scenario {
        let active = graph.controllers().collect();
        Scenario {
            id: id.into(),
            graph,
            active,
            kappa: 1,
            theta: 10,
            three_tag: false,
            memory_adaptive: true,
            seed: 0,
            max_steps: 2_000_000,
            start: Start::Empty,
            link_plan: FaultPlan::none(),
            faults: Vec::new(),
            hold_frames: 0,
            trace: false,
        }
    }

    pub fn with_fault(mut self, when: When, fault: Fault) -> Scenario {
        self.faults.push(ScheduledFault { when, fault });
        self
    }
}

/// One disturbance (the start counts as one) and how the system recovered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub cause: String,
    pub step: u64,
    /// Frames completed before the disturbance.
    pub frame: usize,
    /// Frames from the disturbance to the first boundary of the legitimate
    /// stretch that followed.
    pub frames: Option<usize>,
    pub steps: Option<u64>,
    pub illegitimate_deletions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario_id: String,
    pub seed: u64,
    pub converged: bool,
    /// Frames to legitimacy after the last disturbance.
    pub frames: usize,
    /// Steps to legitimacy after the last disturbance.
    pub steps: u64,
    pub total_frames: usize,
    pub total_steps: u64,
    pub c_resets: BTreeMap<NodeId, u64>,
    pub illegitimate_deletions: u64,
    pub max_rules_per_switch: usize,
    pub max_reply_db: usize,
    /// Maxima sampled at legitimate frame boundaries only.
    pub max_rules_legit: usize,
    pub max_reply_db_legit: usize,
    pub messages: u64,
    pub messages_per_frame: f64,
    pub false_acks: u64,
    /// Transmitted payloads discarded, or still unacknowledged a frame after
    /// legitimacy.
    pub payload_losses: u64,
    /// Non-legitimate boundaries seen while holding after convergence.
    pub closure_violations: usize,
    /// Deletions issued while holding after convergence.
    pub deletions_while_holding: u64,
    pub recoveries: Vec<Recovery>,
    pub last_report: Option<LegitReport>,
    pub trace: Vec<String>,
}

impl RunMetrics {
    pub fn total_c_resets(&self) -> u64 {
        self.c_resets.values().sum()
    }
}

pub fn run_scenario(s: &Scenario) -> RunMetrics {
    let mut w = World::new(s);
    let mut recoveries = vec![Recovery {
        cause: match s.start {
            Start::Empty => "start".into(),
            Start::Corrupt => "corrupt start".into(),
        },
        step: 0,
        frame: 0,
        frames: None,
        steps: None,
        illegitimate_deletions: 0,
    }];
    if s.start == Start::Corrupt {
        w.inject(&super::Fault::CorruptState);
    }
    let mut pending: Vec<ScheduledFault> = s.faults.clone();
    let mut streak = 0usize;
    let mut first_legit: Option<(usize, u64)> = None;
    let mut msg_at_legit = 0;
    let mut converged = false;
    let mut holding: Option<usize> = None;
    let mut max_rules_legit = 0;
    let mut max_db_legit = 0;
    let mut closure_violations = 0;
    let mut deletions_at_hold = 0;
    let mut deletions_at_fault = 0;
    let mut last_report = None;

    let fire = |w: &mut World, f: &Fault, recoveries: &mut Vec<Recovery>, deletions_at_fault: &mut u64| {
        if let Some(r) = recoveries.last_mut() {
            r.illegitimate_deletions = w.stats.illegitimate_deletions - *deletions_at_fault;
        }
        *deletions_at_fault = w.stats.illegitimate_deletions;
        recoveries.push(Recovery {
            cause: f.to_string(),
            step: w.step,
            frame: w.frames(),
            frames: None,
            steps: None,
            illegitimate_deletions: 0,
        });
        w.inject(f);
    };

    while w.step < s.max_steps {
        while let Some(i) = pending.iter().position(|f| matches!(f.when, When::Step(t) if t <= w.step)) {
            let f = pending.remove(i);
            fire(&mut w, &f.fault, &mut recoveries, &mut deletions_at_fault);
            streak = 0;
            first_legit = None;
        }
        let Some(boundary) = w.step() else { break };
        if !boundary {
            continue;
        }
        let report = check_legitimacy(&w);
        let legit = report.legitimate();
        last_report = Some(report);
        if legit {
            max_rules_legit = max_rules_legit.max(w.max_rules_now());
            max_db_legit = max_db_legit.max(w.max_reply_db_now());
        }
        if let Some(left) = holding.as_mut() {
            if !legit {
                closure_violations += 1;
            }
            *left -= 1;
            if *left == 0 {
                break;
            }
            continue;
        }
        if !legit {
            streak = 0;
            first_legit = None;
            continue;
        }
        streak += 1;
        if streak == 1 {
            first_legit = Some((w.frames(), w.step));
            msg_at_legit = w.next_msg;
        }
        if streak < 2 {
            continue;
        }
        let (frame, step) = first_legit.unwrap();
        if let Some(r) = recoveries.last_mut() {
            if r.frames.is_none() {
                r.frames = Some(frame - r.frame);
                r.steps = Some(step - r.step);
            }
        }
        if let Some(i) = pending.iter().position(|f| f.when == When::Legit) {
            if pending[..i].iter().all(|f| f.when == When::Legit) {
                let f = pending.remove(i);
                fire(&mut w, &f.fault, &mut recoveries, &mut deletions_at_fault);
                streak = 0;
                first_legit = None;
                continue;
            }
        }
        if pending.is_empty() && !converged {
            converged = true;
            if s.hold_frames == 0 {
                break;
            }
            holding = Some(s.hold_frames);
            deletions_at_hold = w.stats.deletions;
        }
    }

    if let Some(r) = recoveries.last_mut() {
        r.illegitimate_deletions = w.stats.illegitimate_deletions - deletions_at_fault;
    }
    // Payloads from before legitimacy that are still unacknowledged a frame
    // later count as lost.
    let stranded = if converged { w.unacked_before(msg_at_legit) } else { 0 };
    let last = recoveries.last().cloned().unwrap();
    let total_frames = w.frames();
    RunMetrics {
        scenario_id: s.id.clone(),
        seed: s.seed,
        converged,
        frames: last.frames.unwrap_or(total_frames - last.frame),
        steps: last.steps.unwrap_or(w.step - last.step),
        total_frames,
        total_steps: w.step,
        c_resets: w.stats.c_resets.clone(),
        illegitimate_deletions: w.stats.illegitimate_deletions,
        max_rules_per_switch: w.stats.max_rules_per_switch,
        max_reply_db: w.stats.max_reply_db,
        max_rules_legit,
        max_reply_db_legit: max_db_legit,
        messages: w.stats.packets,
        messages_per_frame: w.stats.packets as f64 / total_frames.max(1) as f64,
        false_acks: w.stats.false_acks,
        payload_losses: w.stats.payload_losses + stranded,
        closure_violations,
        deletions_while_holding: if holding.is_some() { w.stats.deletions - deletions_at_hold } else { 0 },
        recoveries,
        last_report,
        trace: w.trace().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faults_parse_and_print() {
        for s in ["corrupt", "fail_stop 2", "remove_link 3 4", "add_link 3 5", "remove_switch 7", "start_controller 3"] {
            let f: Fault = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert_eq!(
            "lossy 0.2 3 4 5".parse::<Fault>(),
            Ok(Fault::LinkPlan { link: Some((NodeId(4), NodeId(5))), plan: FaultPlan::lossy(0.2, 3) })
        );
        assert_eq!("omit_first 2".parse::<Fault>(), Ok(Fault::LinkPlan { link: None, plan: FaultPlan::omit_first(2) }));
        assert!("remove_link 3".parse::<Fault>().is_err());
        assert!("explode".parse::<Fault>().is_err());
        assert!("lossy 0.2 3 4".parse::<Fault>().is_err());
    }
}
