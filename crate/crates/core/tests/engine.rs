use std::collections::BTreeSet;

use renaissance::controller::graph_of;
use renaissance::engine::*;
use renaissance::topology::*;

fn n(i: u32) -> NodeId {
    NodeId(i)
}

/// Switches 3..=10 in a ring, controller 1 on 3 and 4, controller 2 on 7 and 8.
fn ring8() -> Graph {
    let mut g = Graph::new(2, 8);
    for i in 0..8 {
        g.add_edge(n(3 + i), n(3 + (i + 1) % 8));
    }
    for (c, s) in [(1, 3), (1, 4), (2, 7), (2, 8)] {
        g.add_edge(n(c), n(s));
    }
    g
}

/// A 4-switch ring with one controller on two of them.
fn ring4() -> Graph {
    load_topology("1 4\n1-2\n1-3\n2-3\n3-4\n4-5\n5-2\n").unwrap()
}

#[test]
fn empty_start_is_not_legitimate() {
    let w = World::new(&Scenario::new("ring8", ring8()));
    let r = check_legitimacy(&w);
    assert!(!r.replies_accurate);
    assert!(!r.legitimate());
}

#[test]
fn bootstrap_reaches_legitimacy_within_bound() {
    let g = ring8();
    let d = g.diameter().unwrap();
    let m = run_scenario(&Scenario::new("ring8", g));
    assert!(m.converged);
    assert!(m.last_report.as_ref().unwrap().legitimate());
    assert!(m.frames <= renaissance::bootstrap_frame_bound(d), "{} frames", m.frames);
    assert_eq!(m.illegitimate_deletions, 0);
    assert_eq!(m.total_c_resets(), 0);
}

#[test]
fn same_seed_same_trace() {
    let mut s = Scenario::new("ring8", ring8());
    s.start = Start::Corrupt;
    s.seed = 11;
    s.trace = true;
    let a = run_scenario(&s);
    let b = run_scenario(&s);
    assert!(!a.trace.is_empty());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a, b);
    s.seed = 12;
    assert_ne!(run_scenario(&s).trace, a.trace);
}

#[test]
fn offline_frames_match_online() {
    let mut s = Scenario::new("ring8", ring8());
    s.trace = true;
    s.max_steps = 20_000;
    let mut w = World::new(&s);
    w.inject(&Fault::LinkPlan { link: None, plan: renaissance::channels::FaultPlan::lossy(0.1, 2) });
    while w.step < s.max_steps {
        if w.step == 3000 {
            w.inject(&Fault::FailStop(n(2)));
        }
        if w.step().is_none() {
            break;
        }
    }
    let offline = frame_count(w.trace().iter().map(String::as_str));
    assert!(offline.len() > 5);
    assert_eq!(offline, w.frame_boundaries());
    assert!(offline.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn legitimacy_is_closed() {
    let mut s = Scenario::new("ring8", ring8());
    s.hold_frames = 20;
    let m = run_scenario(&s);
    assert!(m.converged);
    assert_eq!(m.closure_violations, 0);
    assert_eq!(m.deletions_while_holding, 0);
}

#[test]
fn stale_manager_is_named() {
    let mut w = World::new(&Scenario::new("ring4", ring4()));
    let mut streak = 0;
    while streak < 2 {
        if w.step().unwrap() {
            streak = if check_legitimacy(&w).legitimate() { streak + 1 } else { 0 };
        }
    }
    w.switches.get_mut(&n(4)).unwrap().managers.clear();
    let r = check_legitimacy(&w);
    assert!(!r.managers_correct);
    assert!(r.problems.iter().any(|p| p.contains("switch 4") && p.contains('1')), "{:?}", r.problems);
}

#[test]
fn failed_controller_is_forgotten() {
    let s = Scenario::new("ring8", ring8()).with_fault(When::Legit, Fault::FailStop(n(2)));
    let m = run_scenario(&s);
    assert!(m.converged);
    assert_eq!(m.recoveries.len(), 2);
    assert!(m.recoveries[1].frames.unwrap() <= 4);
}

#[test]
fn absent_controller_takes_no_memory() {
    let mut s = Scenario::new("ring8", ring8());
    s.active = BTreeSet::from([n(1)]);
    let mut w = World::new(&s);
    let mut streak = 0;
    while streak < 2 {
        if w.step().unwrap() {
            streak = if check_legitimacy(&w).legitimate() { streak + 1 } else { 0 };
        }
    }
    for sw in w.switches.values() {
        assert_eq!(sw.manager_set(), BTreeSet::from([n(1)]));
        assert!(sw.rules.iter().all(|r| r.creator == n(1)));
    }
}

#[test]
fn primary_link_loss_keeps_every_payload() {
    let g = ring8();
    // controller 1 reaches switch 6 over 4-5-6
    assert_eq!(first_shortest_path(&g, n(1), n(6)), Some(vec![n(1), n(4), n(5), n(6)]));
    let s = Scenario::new("ring8", g).with_fault(When::Legit, Fault::RemoveLink(n(4), n(5)));
    let m = run_scenario(&s);
    assert!(m.converged);
    assert_eq!(m.payload_losses, 0);
    assert!(m.recoveries[1].frames.unwrap() <= 2 * 5 + 1);
}

#[test]
fn controller_views_drop_a_stopped_peer() {
    let s = Scenario::new("ring8", ring8());
    let mut w = World::new(&s);
    while w.frames() < 12 {
        w.step();
    }
    w.inject(&Fault::FailStop(n(2)));
    while w.frames() < 24 {
        w.step();
    }
    let st = &w.controllers[&n(1)].state;
    assert!(!graph_of(&st.res(st.prev_tag)).reaches(n(1), n(2)));
    assert!(w.switches.values().all(|sw| !sw.manager_set().contains(&n(2))));
}
