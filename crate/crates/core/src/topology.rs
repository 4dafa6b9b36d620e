//! Communication graphs, deterministic shortest paths, synthesis of
//! κ-fault-resilient flows and the brute-force oracle that checks them.
//!
//! Only switches relay packets: every path used for a flow has switches as its
//! internal nodes, and a packet that reaches a controller other than its
//! destination is dropped.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::controller::Tag;
use crate::dataplane::{applicable_rule, Priority, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Undirected edge, stored with the smaller endpoint first.
pub type Edge = (NodeId, NodeId);

pub fn edge(a: NodeId, b: NodeId) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate edge {a}-{b}")]
    DuplicateEdge { line: usize, a: NodeId, b: NodeId },
    #[error("line {line}: edge {a}-{b} declared as {b}-{a} earlier")]
    AsymmetricEdge { line: usize, a: NodeId, b: NodeId },
}

/// An undirected graph whose nodes follow the index convention: controllers
/// are `1..=n_C`, switches follow. Edges carry an operational flag.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Graph {
    n_controllers: u32,
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    down: BTreeSet<Edge>,
}

impl Graph {
    /// `n_c` controllers and `n_s` switches, no edges.
    pub fn new(n_c: u32, n_s: u32) -> Graph {
        let mut g = Graph::empty(n_c);
        for i in 1..=n_c + n_s {
            g.add_node(NodeId(i));
        }
        g
    }

    /// No nodes; `n_c` only fixes which indices denote controllers.
    pub fn empty(n_c: u32) -> Graph {
        Graph { n_controllers: n_c, adj: BTreeMap::new(), down: BTreeSet::new() }
    }

    pub fn n_controllers(&self) -> u32 {
        self.n_controllers
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.adj.entry(n).or_default();
    }

    /// Returns false when the edge already exists or is a self-loop.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b || self.has_edge(a, b) {
            return false;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
        self.down.remove(&edge(a, b));
        true
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        let had = self.adj.get_mut(&a).is_some_and(|s| s.remove(&b));
        if let Some(s) = self.adj.get_mut(&b) {
            s.remove(&a);
        }
        self.down.remove(&edge(a, b));
        had
    }

    pub fn remove_node(&mut self, n: NodeId) {
        if let Some(ns) = self.adj.remove(&n) {
            for m in ns {
                if let Some(s) = self.adj.get_mut(&m) {
                    s.remove(&n);
                }
                self.down.remove(&edge(n, m));
            }
        }
    }

    pub fn set_operational(&mut self, a: NodeId, b: NodeId, up: bool) {
        if !self.has_edge(a, b) {
            return;
        }
        if up {
            self.down.remove(&edge(a, b));
        } else {
            self.down.insert(edge(a, b));
        }
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn is_operational(&self, a: NodeId, b: NodeId) -> bool {
        self.has_edge(a, b) && !self.down.contains(&edge(a, b))
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn is_controller(&self, n: NodeId) -> bool {
        n.0 >= 1 && n.0 <= self.n_controllers
    }

    pub fn is_switch(&self, n: NodeId) -> bool {
        !self.is_controller(n)
    }

    pub fn controllers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.is_controller(n))
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.is_switch(n))
    }

    /// All `G_c` neighbors, ascending.
    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&n).into_iter().flatten().copied()
    }

    /// Neighbors over operational edges, ascending.
    pub fn operational_neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbors(n).filter(move |&m| !self.down.contains(&edge(n, m)))
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (&a, ns) in &self.adj {
            for &b in ns {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn operational_edges(&self) -> Vec<Edge> {
        self.edges().into_iter().filter(|e| !self.down.contains(e)).collect()
    }

    /// The operational subgraph as a graph with every edge up.
    pub fn operational(&self) -> Graph {
        let mut g = Graph::empty(self.n_controllers);
        for n in self.nodes() {
            g.add_node(n);
        }
        for (a, b) in self.operational_edges() {
            g.add_edge(a, b);
        }
        g
    }

    /// Hop distances over operational edges.
    pub fn distances(&self, from: NodeId) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(from) {
            return dist;
        }
        dist.insert(from, 0);
        let mut q = VecDeque::from([from]);
        while let Some(x) = q.pop_front() {
            let d = dist[&x];
            for y in self.operational_neighbors(x) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(y) {
                    e.insert(d + 1);
                    q.push_back(y);
                }
            }
        }
        dist
    }

    pub fn reachable(&self, from: NodeId) -> BTreeSet<NodeId> {
        self.distances(from).into_keys().collect()
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes().next() {
            None => true,
            Some(n) => self.reachable(n).len() == self.node_count(),
        }
    }

    /// Longest shortest path; `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for n in self.nodes() {
            let d = self.distances(n);
            if d.len() != self.node_count() {
                return None;
            }
            best = best.max(d.values().copied().max().unwrap_or(0));
        }
        Some(best)
    }

    /// Serialize in the topology file format.
    pub fn to_text(&self) -> String {
        let n_s = self.nodes().filter(|&n| self.is_switch(n)).count();
        let mut s = format!("{} {}\n", self.n_controllers, n_s);
        for (a, b) in self.edges() {
            s.push_str(&format!("{a}-{b}\n"));
        }
        s
    }
}

/// Parse a topology file: a `"<n_C> <n_S>"` header, then one `"<u>-<v>"` edge
/// per line. Blank lines and `#` comments are skipped.
pub fn load_topology(text: &str) -> Result<Graph, TopologyError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(TopologyError::Parse { line: 1, msg: "missing header".into() })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || TopologyError::Parse { line: hline, msg: format!("expected \"<n_C> <n_S>\", got {header:?}") };
    if parts.len() != 2 {
        return Err(bad_header());
    }
    let n_c: u32 = parts[0].parse().map_err(|_| bad_header())?;
    let n_s: u32 = parts[1].parse().map_err(|_| bad_header())?;
    let total = n_c + n_s;
    let mut g = Graph::new(n_c, n_s);
    let mut declared: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for (line, l) in lines {
        let (a, b) = l
            .split_once('-')
            .ok_or_else(|| TopologyError::Parse { line, msg: format!("expected \"<u>-<v>\", got {l:?}") })?;
        let parse = |s: &str| -> Result<NodeId, TopologyError> {
            let v: u32 = s.trim().parse().map_err(|_| TopologyError::Parse { line, msg: format!("bad node index {s:?}") })?;
            if v == 0 || v > total {
                return Err(TopologyError::Parse { line, msg: format!("node {v} outside 1..={total}") });
            }
            Ok(NodeId(v))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a == b {
            return Err(TopologyError::Parse { line, msg: format!("self-loop at {a}") });
        }
        if declared.contains(&(a, b)) {
            return Err(TopologyError::DuplicateEdge { line, a, b });
        }
        if declared.contains(&(b, a)) {
            return Err(TopologyError::AsymmetricEdge { line, a, b });
        }
        declared.insert((a, b));
        g.add_edge(a, b);
    }
    Ok(g)
}

/// λ(g): the minimum number of edges whose removal disconnects `g`, computed
/// as the minimum unit-capacity max-flow from a fixed node to every other one.
/// Non-operational edges count as absent.
pub fn edge_connectivity(g: &Graph) -> usize {
    let nodes: Vec<NodeId> = g.nodes().collect();
    if nodes.len() < 2 {
        return 0;
    }
    let s = nodes[0];
    nodes[1..].iter().map(|&t| max_flow_unit(g, s, t).0).min().unwrap_or(0)
}

/// A smallest set of operational edges whose removal disconnects `g`; empty
/// when `g` is already disconnected or has fewer than two nodes.
pub fn min_edge_cut(g: &Graph) -> Vec<Edge> {
    let nodes: Vec<NodeId> = g.nodes().collect();
    let Some((&s, rest)) = nodes.split_first() else { return Vec::new() };
    let Some((_, side)) = rest.iter().map(|&t| max_flow_unit(g, s, t)).min_by_key(|(f, _)| *f) else {
        return Vec::new();
    };
    g.operational_edges().into_iter().filter(|(a, b)| side.contains(a) != side.contains(b)).collect()
}

/// Max-flow value and the source side of a minimum cut.
fn max_flow_unit(g: &Graph, s: NodeId, t: NodeId) -> (usize, BTreeSet<NodeId>) {
    // Residual capacities on directed arcs; each undirected edge gives two arcs of capacity 1.
    let mut cap: BTreeMap<(NodeId, NodeId), i32> = BTreeMap::new();
    for (a, b) in g.operational_edges() {
        cap.insert((a, b), 1);
        cap.insert((b, a), 1);
    }
    let mut flow = 0;
    loop {
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut q = VecDeque::from([s]);
        let mut seen = BTreeSet::from([s]);
        while let Some(x) = q.pop_front() {
            if x == t {
                break;
            }
            for y in g.operational_neighbors(x) {
                if !seen.contains(&y) && cap[&(x, y)] > 0 {
                    seen.insert(y);
                    parent.insert(y, x);
                    q.push_back(y);
                }
            }
        }
        if !seen.contains(&t) {
            return (flow, seen);
        }
        let mut y = t;
        while y != s {
            let x = parent[&y];
            *cap.get_mut(&(x, y)).unwrap() -= 1;
            *cap.get_mut(&(y, x)).unwrap() += 1;
            y = x;
        }
        flow += 1;
    }
}

/// The shortest path from `x` to `y` over operational edges whose internal
/// nodes are switches; among equally short paths, the lexicographically
/// smallest node sequence.
pub fn first_shortest_path(g: &Graph, x: NodeId, y: NodeId) -> Option<Vec<NodeId>> {
    first_shortest_path_avoiding(g, x, y, &BTreeSet::new())
}

fn first_shortest_path_avoiding(g: &Graph, x: NodeId, y: NodeId, failed: &BTreeSet<Edge>) -> Option<Vec<NodeId>> {
    if x == y || !g.contains(x) || !g.contains(y) {
        return None;
    }
    let up = |a: NodeId, b: NodeId| !failed.contains(&edge(a, b));
    // Distances to y through switch-only interiors; controllers other than y
    // receive a label but are never expanded.
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(y, 0)]);
    let mut q = VecDeque::from([y]);
    while let Some(a) = q.pop_front() {
        if a != y && g.is_controller(a) {
            continue;
        }
        let d = dist[&a];
        for b in g.operational_neighbors(a) {
            if up(a, b) && !dist.contains_key(&b) {
                dist.insert(b, d + 1);
                q.push_back(b);
            }
        }
    }
    let mut path = vec![x];
    let mut cur = x;
    let mut d = *dist.get(&x)?;
    while cur != y {
        let next = g
            .operational_neighbors(cur)
            .find(|&b| up(cur, b) && dist.get(&b) == Some(&(d - 1)) && (b == y || g.is_switch(b)))?;
        path.push(next);
        cur = next;
        d -= 1;
    }
    Some(path)
}

/// Rules one controller installs network-wide for a given view, plus the
/// ordered first hops it may use toward each destination.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowAssignment {
    pub controller: Option<NodeId>,
    pub n_prt: Priority,
    /// switch → rules, sorted.
    pub rules: BTreeMap<NodeId, Vec<Rule>>,
    /// destination → candidate first hops, preferred first.
    pub first_hops: BTreeMap<NodeId, Vec<NodeId>>,
}

impl FlowAssignment {
    pub fn rules_at(&self, switch: NodeId) -> &[Rule] {
        self.rules.get(&switch).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rule_count(&self) -> usize {
        self.rules.values().map(Vec::len).sum()
    }
}

/// Number of priority levels used for κ-resilient flows.
pub fn n_prt(kappa: usize) -> Priority {
    (kappa + 1).min(Priority::MAX as usize) as Priority
}

/// Where a replayed packet ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Walk {
    Delivered(Vec<NodeId>),
    Dropped { at: NodeId, path: Vec<NodeId> },
    Loop(Vec<NodeId>),
}

impl Walk {
    pub fn delivered(&self) -> bool {
        matches!(self, Walk::Delivered(_))
    }

    pub fn path(&self) -> &[NodeId] {
        match self {
            Walk::Delivered(p) | Walk::Dropped { path: p, .. } | Walk::Loop(p) => p,
        }
    }
}

/// Replay a packet of flow `(src, dest)` that has just arrived at `start`,
/// with the edges in `failed` down in addition to `g`'s own.
pub fn replay<'a, F>(g: &Graph, failed: &BTreeSet<Edge>, table: F, src: NodeId, dest: NodeId, start: NodeId) -> Walk
where
    F: Fn(NodeId) -> &'a [Rule],
{
    let limit = g.node_count();
    let mut path = vec![start];
    let mut cur = start;
    loop {
        if cur == dest {
            return Walk::Delivered(path);
        }
        if g.is_controller(cur) || path.len() > limit {
            return if path.len() > limit { Walk::Loop(path) } else { Walk::Dropped { at: cur, path } };
        }
        let up: BTreeSet<NodeId> = g.operational_neighbors(cur).filter(|&m| !failed.contains(&edge(cur, m))).collect();
        match applicable_rule(table(cur), src, dest, &up).rule.and_then(|r| r.fwd) {
            Some(next) => {
                path.push(next);
                cur = next;
            }
            None => return Walk::Dropped { at: cur, path },
        }
    }
}

/// Walk each usable first hop of `source` toward `dest` in order; return the
/// first delivering walk, else the first failing one.
pub fn replay_from_source<'a, F>(
    g: &Graph,
    failed: &BTreeSet<Edge>,
    table: F,
    source: NodeId,
    dest: NodeId,
    first_hops: &[NodeId],
) -> Walk
where
    F: Fn(NodeId) -> &'a [Rule] + Copy,
{
    let mut first_fail = None;
    for &h in first_hops {
        if !g.is_operational(source, h) || failed.contains(&edge(source, h)) {
            continue;
        }
        let mut w = replay(g, failed, table, source, dest, h);
        match &mut w {
            Walk::Delivered(p) | Walk::Dropped { path: p, .. } | Walk::Loop(p) => p.insert(0, source),
        }
        if w.delivered() {
            return w;
        }
        first_fail.get_or_insert(w);
    }
    first_fail.unwrap_or(Walk::Dropped { at: source, path: vec![source] })
}

/// Every set of at most `k` edges out of `edges`, smallest sets first.
pub fn failure_sets(edges: &[Edge], k: usize) -> Vec<BTreeSet<Edge>> {
    let mut out = vec![BTreeSet::new()];
    for size in 1..=k.min(edges.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| edges[i]).collect());
            let mut i = size;
            while i > 0 && idx[i - 1] == edges.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Per-destination rule table used during synthesis: switch → (priority, fwd).
type PairTable = BTreeMap<NodeId, Vec<(Priority, NodeId)>>;

struct PairSynth<'g> {
    g: &'g Graph,
    source: NodeId,
    dest: NodeId,
    n_prt: Priority,
    table: PairTable,
    first_hops: Vec<NodeId>,
}

impl<'g> PairSynth<'g> {
    fn lookup(&self, at: NodeId, failed: &BTreeSet<Edge>) -> Option<NodeId> {
        let entries = self.table.get(&at)?;
        entries
            .iter()
            .filter(|(_, f)| self.g.is_operational(at, *f) && !failed.contains(&edge(at, *f)))
            .max_by_key(|(p, _)| *p)
            .map(|(_, f)| *f)
    }

    fn walk(&self, start: NodeId, failed: &BTreeSet<Edge>) -> Walk {
        let limit = self.g.node_count();
        let mut path = vec![start];
        let mut cur = start;
        loop {
            if cur == self.dest {
                return Walk::Delivered(path);
            }
            if path.len() > limit {
                return Walk::Loop(path);
            }
            if self.g.is_controller(cur) {
                return Walk::Dropped { at: cur, path };
            }
            match self.lookup(cur, failed) {
                Some(n) => {
                    path.push(n);
                    cur = n;
                }
                None => return Walk::Dropped { at: cur, path },
            }
        }
    }

    fn usable(&self, a: NodeId, b: NodeId, failed: &BTreeSet<Edge>) -> bool {
        self.g.is_operational(a, b) && !failed.contains(&edge(a, b))
    }

    /// First failing walk over the usable first hops, or None if some delivers.
    fn check(&self, failed: &BTreeSet<Edge>) -> Option<Walk> {
        let mut fail = None;
        let mut any = false;
        for &h in &self.first_hops {
            if !self.usable(self.source, h, failed) {
                continue;
            }
            any = true;
            let w = self.walk(h, failed);
            if w.delivered() {
                return None;
            }
            fail.get_or_insert(w);
        }
        if !any {
            return Some(Walk::Dropped { at: self.source, path: vec![self.source] });
        }
        fail
    }

    fn safe(&self, w: NodeId, failed: &BTreeSet<Edge>, avoid: NodeId) -> bool {
        if w == self.dest {
            return true;
        }
        if self.g.is_controller(w) || !self.table.contains_key(&w) {
            return false;
        }
        match self.walk(w, failed) {
            Walk::Delivered(p) => !p.contains(&avoid),
            _ => false,
        }
    }

    /// Shortest path from `from` through switches without rules for this flow
    /// to the destination or, when `to_safe` is set, to any node that already
    /// delivers under `failed` without revisiting `from`. The first hop must
    /// satisfy `first_ok`.
    fn detour(&self, from: NodeId, failed: &BTreeSet<Edge>, to_safe: bool, first_ok: impl Fn(NodeId) -> bool) -> Option<Vec<NodeId>> {
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut seen = BTreeSet::from([from]);
        let mut q = VecDeque::from([from]);
        while let Some(x) = q.pop_front() {
            for y in self.g.operational_neighbors(x) {
                if seen.contains(&y) || !self.usable(x, y, failed) || (x == from && !first_ok(y)) {
                    continue;
                }
                if y == self.dest || (to_safe && self.safe(y, failed, from)) {
                    let mut path = vec![y, x];
                    let mut c = x;
                    while c != from {
                        c = parent[&c];
                        path.push(c);
                    }
                    path.reverse();
                    return Some(path);
                }
                if self.g.is_switch(y) && !self.table.contains_key(&y) {
                    seen.insert(y);
                    parent.insert(y, x);
                    q.push_back(y);
                }
            }
        }
        None
    }

    /// Rules along a detour's fresh interior nodes, which hold no rule for
    /// this flow yet and so get the top priority.
    fn install_segment(&mut self, path: &[NodeId]) {
        for w in path[1..].windows(2) {
            self.table.entry(w[0]).or_default().push((self.n_prt, w[1]));
        }
    }

    /// Patch the tables so that the walk that failed under `failed` delivers.
    /// Detours that reach the destination over fresh switches are preferred,
    /// since they leave existing paths alone.
    fn repair(&mut self, failed: &BTreeSet<Edge>, fail: Walk) -> bool {
        for to_safe in [false, true] {
            if let Walk::Dropped { at, .. } = fail {
                if at != self.source && self.g.is_switch(at) {
                    let lowest = self.table.get(&at).and_then(|v| v.iter().map(|(p, _)| *p).min()).unwrap_or(self.n_prt + 1);
                    if lowest > 1 {
                        if let Some(path) = self.detour(at, failed, to_safe, |_| true) {
                            self.table.entry(at).or_default().push((lowest - 1, path[1]));
                            self.install_segment(&path);
                            return true;
                        }
                    }
                }
            }
            let known = self.first_hops.clone();
            if let Some(path) = self.detour(self.source, failed, to_safe, |h| !known.contains(&h)) {
                self.first_hops.push(path[1]);
                self.install_segment(&path);
                return true;
            }
        }
        false
    }
}

/// Repair passes over reordered failure sets before settling for the best.
const REPAIR_PASSES: usize = 8;

/// Greedy repair over the failure sets in canonical order. When some set is
/// still undelivered afterwards, start over with the sets that failed moved to
/// the front, since an earlier detour can block a later one. Keeps the first
/// table with the fewest undelivered sets.
fn synthesize_pair<'g>(
    g: &'g Graph,
    source: NodeId,
    dest: NodeId,
    n_prt: Priority,
    primary: &[NodeId],
    needed: &[&BTreeSet<Edge>],
) -> (usize, PairSynth<'g>) {
    let mut hard: Vec<usize> = Vec::new();
    let mut best: Option<(usize, PairSynth<'g>)> = None;
    for _ in 0..REPAIR_PASSES {
        let mut synth = PairSynth { g, source, dest, n_prt, table: PairTable::new(), first_hops: vec![primary[1]] };
        for w in primary[1..].windows(2) {
            synth.table.entry(w[0]).or_default().push((n_prt, w[1]));
        }
        let order = hard.iter().copied().chain((0..needed.len()).filter(|i| !hard.contains(i)));
        for i in order {
            if let Some(fail) = synth.check(needed[i]) {
                synth.repair(needed[i], fail);
            }
        }
        let failing: Vec<usize> = (0..needed.len()).filter(|&i| synth.check(needed[i]).is_some()).collect();
        let fresh: Vec<usize> = failing.iter().copied().filter(|i| !hard.contains(i)).collect();
        let score = failing.len();
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, synth));
        }
        if score == 0 || fresh.is_empty() {
            break;
        }
        hard.splice(0..0, fresh);
    }
    best.unwrap()
}

/// All rules `controller` installs for view `g`: the first shortest path to
/// every reachable node at priority `n_prt`, then lower-priority detours added
/// greedily until every failure set of at most `kappa` edges delivers (when
/// possible). Deterministic for fixed inputs.
pub fn synthesize(g: &Graph, controller: NodeId, tag: Tag, kappa: usize) -> FlowAssignment {
    let n_prt = n_prt(kappa);
    let mut out = FlowAssignment { controller: Some(controller), n_prt, ..Default::default() };
    if !g.contains(controller) {
        return out;
    }
    let sets = if kappa > 0 { failure_sets(&g.operational_edges(), kappa) } else { Vec::new() };
    for dest in g.nodes().filter(|&v| v != controller) {
        let Some(primary) = first_shortest_path(g, controller, dest) else { continue };
        let needed: Vec<&BTreeSet<Edge>> = sets
            .iter()
            .skip(1)
            .filter(|f| first_shortest_path_avoiding(g, controller, dest, f).is_some())
            .collect();
        // Rules match on source and destination only, so some primaries admit
        // no repair (a detour that must back out through a switch already on
        // the path). Then try the first shortest path avoiding each of its
        // links in turn.
        let (mut score, mut synth) = synthesize_pair(g, controller, dest, n_prt, &primary, &needed);
        if score > 0 {
            for w in primary.windows(2) {
                let Some(alt) = first_shortest_path_avoiding(g, controller, dest, &BTreeSet::from([edge(w[0], w[1])])) else {
                    continue;
                };
                let (s, candidate) = synthesize_pair(g, controller, dest, n_prt, &alt, &needed);
                if s < score {
                    (score, synth) = (s, candidate);
                }
                if score == 0 {
                    break;
                }
            }
        }
        for (sw, entries) in synth.table {
            let rules = out.rules.entry(sw).or_default();
            for (p, f) in entries {
                rules.push(Rule::forwarding(controller, sw, dest, p, f, tag));
            }
        }
        out.first_hops.insert(dest, synth.first_hops);
    }
    for rules in out.rules.values_mut() {
        rules.sort();
    }
    out
}

/// The rules `controller` installs at `switch` for view `g`.
pub fn my_rules(g: &Graph, controller: NodeId, switch: NodeId, tag: Tag, kappa: usize) -> Vec<Rule> {
    synthesize(g, controller, tag, kappa).rules.remove(&switch).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowOutcome {
    Dropped { at: NodeId },
    Loop,
    /// The controller has no first hop toward the destination.
    NoRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowFailure {
    pub controller: NodeId,
    pub dest: NodeId,
    pub failed: Vec<Edge>,
    pub outcome: FlowOutcome,
}

impl fmt::Display for FlowFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failed: Vec<String> = self.failed.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let failed = if failed.is_empty() { "none".to_string() } else { failed.join(",") };
        match &self.outcome {
            FlowOutcome::Dropped { at } => write!(f, "{}->{} failed={} dropped at {}", self.controller, self.dest, failed, at),
            FlowOutcome::Loop => write!(f, "{}->{} failed={} loops", self.controller, self.dest, failed),
            FlowOutcome::NoRoute => write!(f, "{}->{} failed={} no first hop", self.controller, self.dest, failed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResilienceReport {
    pub kappa: usize,
    pub pairs: usize,
    pub failure_sets: usize,
    pub checks: usize,
    pub failures: Vec<FlowFailure>,
}

impl ResilienceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Exhaustively replay every (controller, destination) flow under every set
/// of at most `kappa` failed edges, using the merged rule tables of all
/// assignments. Pairs disconnected by a failure set are not required to deliver.
pub fn verify_resilience(g: &Graph, assignments: &BTreeMap<NodeId, FlowAssignment>, kappa: usize) -> ResilienceReport {
    let mut tables: BTreeMap<NodeId, Vec<Rule>> = BTreeMap::new();
    let mut hops: BTreeMap<NodeId, BTreeMap<NodeId, Vec<NodeId>>> = BTreeMap::new();
    for (&c, a) in assignments {
        for (&sw, rules) in &a.rules {
            tables.entry(sw).or_default().extend(rules.iter().cloned());
        }
        hops.insert(c, a.first_hops.clone());
    }
    verify_tables(g, &tables, &hops, kappa)
}

/// [`verify_resilience`] over raw switch tables and per-controller first hops.
pub fn verify_tables(
    g: &Graph,
    tables: &BTreeMap<NodeId, Vec<Rule>>,
    first_hops: &BTreeMap<NodeId, BTreeMap<NodeId, Vec<NodeId>>>,
    kappa: usize,
) -> ResilienceReport {
    let sets = failure_sets(&g.operational_edges(), kappa);
    let mut report = ResilienceReport { kappa, failure_sets: sets.len(), ..Default::default() };
    let empty: Vec<NodeId> = Vec::new();
    let table = |n: NodeId| tables.get(&n).map(Vec::as_slice).unwrap_or(&[]);
    for (&c, hops) in first_hops {
        for dest in g.nodes().filter(|&v| v != c) {
            if first_shortest_path(g, c, dest).is_none() {
                continue;
            }
            report.pairs += 1;
            let cands = hops.get(&dest).unwrap_or(&empty);
            for failed in &sets {
                if first_shortest_path_avoiding(g, c, dest, failed).is_none() {
                    continue;
                }
                report.checks += 1;
                let outcome = if cands.is_empty() {
                    Some(FlowOutcome::NoRoute)
                } else {
                    match replay_from_source(g, failed, table, c, dest, cands) {
                        Walk::Delivered(_) => None,
                        Walk::Dropped { at, .. } => Some(FlowOutcome::Dropped { at }),
                        Walk::Loop(_) => Some(FlowOutcome::Loop),
                    }
                };
                if let Some(outcome) = outcome {
                    report.failures.push(FlowFailure { controller: c, dest, failed: failed.iter().copied().collect(), outcome });
                }
            }
        }
    }
    report
}

/// Synthesize every controller's rules for `g` and verify them.
pub fn verify_graph(g: &Graph, kappa: usize) -> ResilienceReport {
    let tag = |c: NodeId| Tag { owner: c, epoch: 0 };
    let assignments: BTreeMap<NodeId, FlowAssignment> =
        g.controllers().map(|c| (c, synthesize(g, c, tag(c), kappa))).collect();
    verify_resilience(g, &assignments, kappa)
}
