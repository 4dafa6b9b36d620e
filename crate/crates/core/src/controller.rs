//! The controller: reply bookkeeping, round tags and the do-forever iteration
//! that discovers the network and keeps every switch configured.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::dataplane::{Command, CommandBatch, QueryReply, Rule};
use crate::topology::{synthesize, FlowAssignment, Graph, NodeId};

/// Round tag: unique per `(owner, epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tag {
    pub owner: NodeId,
    pub epoch: u64,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.owner, self.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerConfig {
    pub kappa: usize,
    /// Keep the previous round's rules for one extra round.
    pub three_tag: bool,
    /// Remove managers and rules of unreachable controllers.
    pub memory_adaptive: bool,
    pub max_replies: usize,
}

impl ControllerConfig {
    /// Defaults for a network with `n_c` controller slots and `n_s` switches.
    pub fn for_network(n_c: usize, n_s: usize, kappa: usize) -> ControllerConfig {
        ControllerConfig { kappa, three_tag: false, memory_adaptive: true, max_replies: 2 * (n_c + n_s) }
    }
}

/// Directed view `G(S)`: arcs from each reply's sender to its reported neighbors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct View {
    pub nodes: BTreeSet<NodeId>,
    pub arcs: BTreeSet<(NodeId, NodeId)>,
    /// Senders of the replies the view was built from.
    pub senders: BTreeSet<NodeId>,
}

impl View {
    /// BFS distances from `from` along arcs.
    pub fn distances(&self, from: NodeId) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::new();
        if !self.nodes.contains(&from) {
            return dist;
        }
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(a, b) in &self.arcs {
            out.entry(a).or_default().push(b);
        }
        dist.insert(from, 0);
        let mut q = VecDeque::from([from]);
        while let Some(x) = q.pop_front() {
            let d = dist[&x];
            for &y in out.get(&x).into_iter().flatten() {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(y) {
                    e.insert(d + 1);
                    q.push_back(y);
                }
            }
        }
        dist
    }

    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        self.distances(from).contains_key(&to)
    }

    /// `G(S)` without the sender bookkeeping, for comparing views.
    pub fn same_graph(&self, other: &View) -> bool {
        self.nodes == other.nodes && self.arcs == other.arcs
    }

    /// Undirected topology for rule synthesis. An edge is kept when some
    /// endpoint reports it and no endpoint that replied contradicts it.
    pub fn to_graph(&self, n_controllers: u32) -> Graph {
        let mut g = Graph::empty(n_controllers);
        for &n in &self.nodes {
            g.add_node(n);
        }
        for &(a, b) in &self.arcs {
            let denied = self.senders.contains(&b) && !self.arcs.contains(&(b, a));
            if !denied {
                g.add_edge(a, b);
            }
        }
        g
    }
}

/// `G(S)` for a set of replies.
pub fn graph_of<'a, I>(replies: I) -> View
where
    I: IntoIterator<Item = &'a QueryReply>,
{
    let mut v = View::default();
    for m in replies {
        v.nodes.insert(m.id);
        v.senders.insert(m.id);
        for &k in &m.neighbors {
            v.nodes.insert(k);
            v.arcs.insert((m.id, k));
        }
    }
    v
}

/// Replies in `db` whose meta-rule (or echo) owned by `me` carries `x`, plus the self-record.
pub fn res(db: &[QueryReply], me: NodeId, x: Tag, neighbors: &BTreeSet<NodeId>) -> Vec<QueryReply> {
    let mut out: Vec<QueryReply> =
        db.iter().filter(|m| m.id != me && m.tag_for(me) == Some(x)).cloned().collect();
    out.push(QueryReply::self_record(me, neighbors.clone()));
    out
}

/// Current-round replies, plus previous-round replies of senders not yet heard this round.
pub fn fusion(db: &[QueryReply], me: NodeId, curr: Tag, prev: Tag, neighbors: &BTreeSet<NodeId>) -> Vec<QueryReply> {
    let mut out = res(db, me, curr, neighbors);
    let heard: BTreeSet<NodeId> = out.iter().map(|m| m.id).collect();
    out.extend(res(db, me, prev, neighbors).into_iter().filter(|m| !heard.contains(&m.id)));
    out
}

/// What one iteration produced.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Iteration {
    /// Batches in sending order: nearer nodes first.
    pub batches: Vec<(NodeId, CommandBatch)>,
    pub new_round: bool,
    pub refer_tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    pub id: NodeId,
    pub n_controllers: u32,
    pub reply_db: Vec<QueryReply>,
    pub curr_tag: Tag,
    pub prev_tag: Tag,
    pub before_prev_tag: Tag,
    /// Tag counter used by `next_tag`.
    pub epoch: u64,
    /// `N_c(i)` as last reported by the failure detector.
    pub neighbors: BTreeSet<NodeId>,
    pub config: ControllerConfig,
    cache: Option<(Graph, FlowAssignment)>,
}

impl ControllerState {
    pub fn new(id: NodeId, n_controllers: u32, config: ControllerConfig) -> ControllerState {
        ControllerState {
            id,
            n_controllers,
            reply_db: vec![QueryReply::self_record(id, BTreeSet::new())],
            curr_tag: Tag { owner: id, epoch: 1 },
            prev_tag: Tag { owner: id, epoch: 0 },
            before_prev_tag: Tag { owner: id, epoch: 0 },
            epoch: 1,
            neighbors: BTreeSet::new(),
            config,
            cache: None,
        }
    }

    fn self_record(&self) -> QueryReply {
        QueryReply::self_record(self.id, self.neighbors.clone())
    }

    /// A fresh tag different from every tag the controller currently holds.
    pub fn next_tag(&mut self) -> Tag {
        loop {
            self.epoch = self.epoch.wrapping_add(1);
            let t = Tag { owner: self.id, epoch: self.epoch };
            let clash = t == self.curr_tag || t == self.prev_tag || (self.config.three_tag && t == self.before_prev_tag);
            if !clash {
                return t;
            }
        }
    }

    pub fn res(&self, x: Tag) -> Vec<QueryReply> {
        res(&self.reply_db, self.id, x, &self.neighbors)
    }

    pub fn fusion(&self) -> Vec<QueryReply> {
        fusion(&self.reply_db, self.id, self.curr_tag, self.prev_tag, &self.neighbors)
    }

    /// Rules and first hops for a view, memoised on the view's topology.
    /// Rules carry `Tag::default()` until retagged by the caller.
    pub fn assignment_for(&mut self, g: &Graph) -> &FlowAssignment {
        let stale = self.cache.as_ref().map(|(cg, _)| cg != g).unwrap_or(true);
        if stale {
            let a = synthesize(g, self.id, Tag::default(), self.config.kappa);
            self.cache = Some((g.clone(), a));
        }
        &self.cache.as_ref().unwrap().1
    }

    /// First hops toward `dest` according to the latest synthesized view.
    pub fn first_hops(&self, dest: NodeId) -> &[NodeId] {
        self.cache
            .as_ref()
            .and_then(|(_, a)| a.first_hops.get(&dest))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn current_assignment(&self) -> Option<&FlowAssignment> {
        self.cache.as_ref().map(|(_, a)| a)
    }

    /// One pass of the do-forever loop with `neighbors` as `N_c(i)`.
    pub fn iterate(&mut self, neighbors: &BTreeSet<NodeId>) -> Iteration {
        let me = self.id;
        self.neighbors = neighbors.clone();

        // (1) keep only replies reachable in their own round's view
        let mut kept: Vec<QueryReply> = Vec::new();
        for x in [self.curr_tag, self.prev_tag] {
            let rx = self.res(x);
            let dist = graph_of(&rx).distances(me);
            for m in rx {
                if m.id != me && dist.contains_key(&m.id) && !kept.contains(&m) {
                    kept.push(m);
                }
            }
        }
        kept.push(self.self_record());
        self.reply_db = kept;

        // (2) round completion
        let mut new_round = false;
        {
            let rc = self.res(self.curr_tag);
            let heard: BTreeSet<NodeId> = rc.iter().map(|m| m.id).collect();
            let reach = graph_of(&rc).distances(me);
            if reach.keys().all(|l| heard.contains(l)) {
                new_round = true;
                self.before_prev_tag = self.prev_tag;
                self.prev_tag = self.curr_tag;
                self.curr_tag = self.next_tag();
                let ct = self.curr_tag;
                self.reply_db.retain(|m| m.id == me || m.tag_for(me) != Some(ct));
            }
        }

        // (3) reference tag
        let fused = self.fusion();
        let fusion_view = graph_of(&fused);
        let prev_res = self.res(self.prev_tag);
        let prev_view = graph_of(&prev_res);
        let refer_tag = if fusion_view.same_graph(&prev_view) { self.prev_tag } else { self.curr_tag };

        // (4) per-switch commands
        let refer = self.res(refer_tag);
        let refer_view = graph_of(&refer);
        let g = refer_view.to_graph(self.n_controllers);
        let curr = self.curr_tag;
        let keep = if self.config.three_tag { Some(self.prev_tag) } else { None };
        let memory_adaptive = self.config.memory_adaptive;
        let mut msgs: BTreeMap<NodeId, Vec<Command>> = BTreeMap::new();
        let mut switch_replies: Vec<&QueryReply> = Vec::new();
        for m in &refer {
            if m.id != me && g.is_switch(m.id) && !switch_replies.iter().any(|x| x.id == m.id) {
                switch_replies.push(m);
            }
        }
        let prev_reach = prev_view.distances(me);
        let assignment = self.assignment_for(&g).clone();
        for m in switch_replies {
            let j = m.id;
            let mng = m.managers.clone().unwrap_or_default();
            let with_rules: BTreeSet<NodeId> = m.rules.iter().map(|r| r.creator).collect();
            // Only controllers missing from the last complete round are removed.
            // Dropping live ones for a manager entry without rules (or rules
            // without an entry) makes two controllers undo each other forever.
            let mut keep_mngr: BTreeSet<NodeId> = mng
                .union(&with_rules)
                .copied()
                .filter(|k| !new_round || prev_reach.contains_key(k))
                .collect();
            keep_mngr.insert(me);
            let cmds = msgs.entry(j).or_default();
            if memory_adaptive {
                cmds.extend(mng.difference(&keep_mngr).map(|&k| Command::DelMngr(k)));
            }
            cmds.push(Command::AddMngr(me));
            if memory_adaptive {
                cmds.extend(with_rules.iter().filter(|k| !keep_mngr.contains(k)).map(|&k| Command::DelAllRules(k)));
            }
            let rules: Vec<Rule> = assignment
                .rules_at(j)
                .iter()
                .map(|r| Rule { tag: curr, ..r.clone() })
                .collect();
            cmds.push(Command::UpdateRules { rules, keep });
        }

        // (5) send to every node reachable in G(fusion), nearest first
        let dist = fusion_view.distances(me);
        let mut targets: Vec<(usize, NodeId)> = dist.iter().filter(|(&n, _)| n != me).map(|(&n, &d)| (d, n)).collect();
        targets.sort();
        let batches = targets
            .into_iter()
            .map(|(_, j)| {
                let mut cmds = vec![Command::NewRound(curr)];
                cmds.extend(msgs.remove(&j).unwrap_or_default());
                cmds.push(Command::Query(curr));
                (j, CommandBatch(cmds))
            })
            .collect();
        Iteration { batches, new_round, refer_tag }
    }

    /// Store a query reply. Returns true when the reply triggered a C-reset.
    pub fn on_reply(&mut self, m: QueryReply) -> bool {
        let mut reset = false;
        let fits = self.reply_db.contains(&m) || self.reply_db.len() < self.config.max_replies;
        if !fits {
            self.reply_db = vec![self.self_record()];
            reset = true;
        }
        if m.id != self.id && m.tag_for(self.id) == Some(self.curr_tag) {
            self.reply_db.retain(|x| x.id != m.id);
            self.reply_db.push(m);
        }
        reset
    }

    /// Answer a query from controller `from`.
    pub fn on_query(&self, from: NodeId, tag: Tag) -> QueryReply {
        QueryReply {
            id: self.id,
            neighbors: self.neighbors.clone(),
            managers: None,
            rules: vec![Rule::meta(from, self.id, tag)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::SwitchState;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn set(xs: &[u32]) -> BTreeSet<NodeId> {
        xs.iter().map(|&x| n(x)).collect()
    }

    fn ctrl(id: u32) -> ControllerState {
        ControllerState::new(n(id), 2, ControllerConfig::for_network(2, 4, 1))
    }

    fn switch_reply(id: u32, neighbors: &[u32], tags: &[(u32, Tag)]) -> QueryReply {
        QueryReply {
            id: n(id),
            neighbors: set(neighbors),
            managers: Some(tags.iter().map(|(c, _)| n(*c)).collect()),
            rules: tags.iter().map(|(c, t)| Rule::meta(n(*c), n(id), *t)).collect(),
        }
    }

    #[test]
    fn next_tag_examples() {
        let mut c = ctrl(1);
        c.epoch = 5;
        assert_eq!(c.next_tag(), Tag { owner: n(1), epoch: 6 });
        c.curr_tag = Tag { owner: n(1), epoch: 7 };
        c.prev_tag = Tag { owner: n(1), epoch: 8 };
        let t = c.next_tag();
        assert_eq!(t.epoch, 9);
        assert_ne!(ctrl(1).next_tag(), ctrl(2).next_tag());
    }

    #[test]
    fn res_filters_by_tag() {
        let c = ctrl(1);
        assert_eq!(c.res(c.curr_tag), vec![QueryReply::self_record(n(1), BTreeSet::new())]);
        let t1 = Tag { owner: n(1), epoch: 1 };
        let t0 = Tag { owner: n(1), epoch: 0 };
        let db = vec![switch_reply(3, &[1, 4], &[(1, t1)]), switch_reply(4, &[3], &[(1, t0)]), switch_reply(5, &[], &[(2, t1)])];
        let ids = |v: Vec<QueryReply>| v.into_iter().map(|m| m.id.0).collect::<Vec<_>>();
        assert_eq!(ids(res(&db, n(1), t1, &set(&[3]))), vec![3, 1]);
        assert_eq!(ids(res(&db, n(1), t0, &set(&[3]))), vec![4, 1]);
        // fusion: current copy of 3, previous-round copy of 4
        assert_eq!(ids(fusion(&db, n(1), t1, t0, &set(&[3]))), vec![3, 1, 4]);
    }

    #[test]
    fn graph_of_self_record() {
        let v = graph_of(&[QueryReply::self_record(n(1), set(&[2, 3]))]);
        assert_eq!(v.nodes, set(&[1, 2, 3]));
        assert_eq!(v.arcs, BTreeSet::from([(n(1), n(2)), (n(1), n(3))]));
    }

    #[test]
    fn graph_of_ring_matches_ground_truth() {
        let t = Tag::default();
        let replies: Vec<QueryReply> =
            (1..=6).map(|i| switch_reply(i, &[(i + 4) % 6 + 1, i % 6 + 1], &[(1, t)])).collect();
        let g = graph_of(&replies).to_graph(1);
        let mut truth = Graph::new(1, 5);
        for i in 1..=6 {
            truth.add_edge(n(i), n(i % 6 + 1));
        }
        assert_eq!(g, truth);
    }

    #[test]
    fn contradicted_edge_is_dropped() {
        let t = Tag::default();
        let replies = vec![switch_reply(3, &[4], &[(1, t)]), switch_reply(4, &[], &[(1, t)])];
        let g = graph_of(&replies).to_graph(1);
        assert!(!g.has_edge(n(3), n(4)));
        let replies = vec![switch_reply(3, &[4], &[(1, t)])];
        assert!(graph_of(&replies).to_graph(1).has_edge(n(3), n(4)));
    }

    #[test]
    fn fresh_controller_queries_direct_neighbor() {
        let mut c = ctrl(1);
        let it = c.iterate(&set(&[3]));
        assert_eq!(it.batches.len(), 1);
        let (to, b) = &it.batches[0];
        assert_eq!(*to, n(3));
        assert_eq!(b.0, vec![Command::NewRound(c.curr_tag), Command::Query(c.curr_tag)]);
        assert!(!it.new_round);
    }

    /// Drive a controller against real switch states on a tiny line network
    /// 1 - 3 - 4 and return the batches of each iteration.
    #[test]
    fn bootstrap_on_a_line() {
        let mut c = ControllerState::new(n(1), 1, ControllerConfig::for_network(1, 2, 0));
        let mut sw: BTreeMap<NodeId, SwitchState> =
            [3, 4].into_iter().map(|i| (n(i), SwitchState::new(n(i), 16, 1))).collect();
        let nbrs: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::from([(n(3), set(&[1, 4])), (n(4), set(&[3]))]);
        let mut rounds = 0;
        for _ in 0..6 {
            let it = c.iterate(&set(&[3]));
            rounds += it.new_round as u32;
            for (j, b) in it.batches {
                let s = sw.get_mut(&j).unwrap();
                let out = s.apply_batch(n(1), &b, &nbrs[&j], &nbrs[&j]).unwrap();
                c.on_reply(out.reply);
            }
        }
        assert!(rounds >= 2);
        assert_eq!(sw[&n(3)].manager_set(), set(&[1]));
        assert_eq!(sw[&n(4)].manager_set(), set(&[1]));
        let fwd: Vec<_> = sw[&n(3)].rules.iter().filter(|r| !r.is_meta()).map(|r| (r.dest, r.fwd)).collect();
        assert_eq!(fwd, vec![(Some(n(4)), Some(n(4)))]);
    }

    #[test]
    fn all_replied_starts_new_round() {
        let mut c = ctrl(1);
        let t = c.curr_tag;
        c.on_reply(switch_reply(3, &[1], &[(1, t)]));
        let it = c.iterate(&set(&[3]));
        assert!(it.new_round);
        assert_eq!(c.prev_tag, t);
        assert_ne!(c.curr_tag, t);
        assert_eq!(it.refer_tag, t);
    }

    #[test]
    fn failed_controller_is_cleaned_at_round_start() {
        let mut c = ctrl(1);
        let t = c.curr_tag;
        let other = Tag { owner: n(2), epoch: 9 };
        // Switch 3 still lists controller 2, which this controller cannot reach.
        c.on_reply(switch_reply(3, &[1], &[(1, t), (2, other)]));
        let it = c.iterate(&set(&[3]));
        assert!(it.new_round);
        let (_, b) = it.batches.iter().find(|(j, _)| *j == n(3)).unwrap();
        assert!(b.0.contains(&Command::DelMngr(n(2))));
        assert!(b.0.contains(&Command::DelAllRules(n(2))));
        assert!(b.0.contains(&Command::AddMngr(n(1))));
    }

    #[test]
    fn non_adaptive_mode_never_deletes() {
        let mut c = ctrl(1);
        c.config.memory_adaptive = false;
        let t = c.curr_tag;
        c.on_reply(switch_reply(3, &[1], &[(1, t), (2, Tag { owner: n(2), epoch: 9 })]));
        let it = c.iterate(&set(&[3]));
        assert!(it.batches.iter().all(|(_, b)| !b.has_deletions()));
    }

    #[test]
    fn three_tag_keeps_previous_tag() {
        let mut c = ctrl(1);
        c.config.three_tag = true;
        let t = c.curr_tag;
        c.on_reply(switch_reply(3, &[1], &[(1, t)]));
        let it = c.iterate(&set(&[3]));
        let (_, b) = &it.batches[0];
        assert!(b.0.iter().any(|cmd| matches!(cmd, Command::UpdateRules { keep: Some(k), .. } if *k == t)));
    }

    #[test]
    fn on_reply_rules() {
        let mut c = ctrl(1);
        let stale = Tag { owner: n(1), epoch: 0 };
        assert!(!c.on_reply(switch_reply(3, &[1], &[(1, stale)])));
        assert_eq!(c.reply_db.len(), 1);
        let t = c.curr_tag;
        c.on_reply(switch_reply(3, &[1], &[(1, t)]));
        c.on_reply(switch_reply(3, &[1, 4], &[(1, t)]));
        let from3: Vec<_> = c.reply_db.iter().filter(|m| m.id == n(3)).collect();
        assert_eq!(from3.len(), 1);
        assert_eq!(from3[0].neighbors, set(&[1, 4]));
    }

    #[test]
    fn reply_at_capacity_resets_once() {
        let mut c = ctrl(1);
        c.config.max_replies = 3;
        let junk = Tag { owner: n(2), epoch: 3 };
        c.reply_db.push(switch_reply(5, &[], &[(1, junk)]));
        c.reply_db.push(switch_reply(6, &[], &[(1, junk)]));
        let t = c.curr_tag;
        assert!(c.on_reply(switch_reply(3, &[1], &[(1, t)])));
        assert_eq!(c.reply_db.len(), 2);
        assert!(!c.on_reply(switch_reply(4, &[1], &[(1, t)])));
    }

    #[test]
    fn query_echo() {
        let mut c = ctrl(2);
        c.neighbors = set(&[3, 4]);
        let t = Tag { owner: n(1), epoch: 42 };
        let r = c.on_query(n(1), t);
        assert_eq!(r.neighbors, set(&[3, 4]));
        assert_eq!(r.tag_for(n(1)), Some(t));
        assert_eq!(r.managers, None);
    }
}
