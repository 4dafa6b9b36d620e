use std::collections::BTreeSet;

use proptest::prelude::*;
use renaissance::topology::*;

fn n(i: u32) -> NodeId {
    NodeId(i)
}

/// Every simple path from x to y with switch-only interiors, by exhaustive DFS;
/// the shortest ones, smallest node sequence first.
fn brute_first_shortest(g: &Graph, x: NodeId, y: NodeId) -> Option<Vec<NodeId>> {
    fn dfs(g: &Graph, y: NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let cur = *path.last().unwrap();
        if cur == y {
            out.push(path.clone());
            return;
        }
        if path.len() > 1 && g.is_controller(cur) {
            return;
        }
        let next: Vec<NodeId> = g.operational_neighbors(cur).collect();
        for m in next {
            if !path.contains(&m) {
                path.push(m);
                dfs(g, y, path, out);
                path.pop();
            }
        }
    }
    let mut all = Vec::new();
    dfs(g, y, &mut vec![x], &mut all);
    all.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    all.into_iter().next()
}

/// λ by trying every edge subset in increasing size.
fn brute_connectivity(g: &Graph) -> usize {
    let edges = g.edges();
    for k in 0..=edges.len() {
        for cut in failure_sets(&edges, k).into_iter().filter(|s| s.len() == k) {
            let mut h = g.clone();
            for (a, b) in &cut {
                h.remove_edge(*a, *b);
            }
            if !h.is_connected() {
                return k;
            }
        }
    }
    edges.len()
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1u32..=2, 3u32..=6).prop_flat_map(|(n_c, n_s)| {
        let total = n_c + n_s;
        let pairs: Vec<(u32, u32)> = (1..=total).flat_map(|a| (a + 1..=total).map(move |b| (a, b))).collect();
        let k = pairs.len();
        proptest::collection::vec(any::<bool>(), k).prop_map(move |keep| {
            let mut g = Graph::new(n_c, n_s);
            for (&(a, b), &on) in pairs.iter().zip(&keep) {
                // controllers never link to each other directly
                if on && !(a <= n_c && b <= n_c) {
                    g.add_edge(n(a), n(b));
                }
            }
            g
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn first_shortest_path_matches_brute_force(g in graph_strategy()) {
        let nodes: Vec<NodeId> = g.nodes().collect();
        for &x in &nodes {
            for &y in &nodes {
                if x != y {
                    prop_assert_eq!(first_shortest_path(&g, x, y), brute_first_shortest(&g, x, y));
                }
            }
        }
    }

    #[test]
    fn connectivity_matches_brute_force(g in graph_strategy()) {
        let lambda = brute_connectivity(&g);
        prop_assert_eq!(edge_connectivity(&g), lambda);
        let cut = min_edge_cut(&g);
        if lambda > 0 {
            prop_assert_eq!(cut.len(), lambda);
            let mut h = g.clone();
            for (a, b) in &cut {
                h.remove_edge(*a, *b);
            }
            prop_assert!(!h.is_connected());
        }
    }

    #[test]
    fn kappa_zero_rules_follow_the_primary_path(g in graph_strategy()) {
        for c in g.controllers() {
            let a = synthesize(&g, c, renaissance::Tag { owner: c, epoch: 1 }, 0);
            for d in g.nodes().filter(|&d| d != c) {
                let Some(p) = brute_first_shortest(&g, c, d) else { continue };
                prop_assert_eq!(a.first_hops.get(&d), Some(&vec![p[1]]));
                let table = |s: NodeId| a.rules_at(s);
                let w = replay_from_source(&g, &BTreeSet::new(), table, c, d, &a.first_hops[&d]);
                prop_assert_eq!(w, Walk::Delivered(p));
            }
        }
    }

    #[test]
    fn two_connected_graphs_verify_at_kappa_one(g in graph_strategy()) {
        prop_assume!(g.controllers().count() > 0 && edge_connectivity(&g) >= 2);
        let r = verify_graph(&g, 1);
        prop_assert!(r.passed(), "{:?}", r.failures.first().map(|f| f.to_string()));
    }
}

#[test]
fn bridge_is_the_cut_witness() {
    let g = load_topology("1 3\n1-2\n2-3\n3-4\n4-2\n").unwrap();
    assert_eq!(edge_connectivity(&g), 1);
    assert_eq!(min_edge_cut(&g), vec![(n(1), n(2))]);
}
