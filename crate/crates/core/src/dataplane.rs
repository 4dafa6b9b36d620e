//! The abstract switch: a bounded match-action table, a bounded manager set,
//! eviction by freshness stamps and the command-batch control interface.

use std::collections::{BTreeMap, BTreeSet};

use crate::controller::Tag;
use crate::topology::NodeId;

/// Rule priority. Larger values take precedence; 0 is reserved for meta-rules.
pub type Priority = u8;

/// One match-action entry stored at a switch.
///
/// `src`, `dest` and `fwd` are `None` for the per-controller meta-rule, which
/// never matches a packet and only carries the controller's round tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub creator: NodeId,
    pub switch: NodeId,
    pub src: Option<NodeId>,
    pub dest: Option<NodeId>,
    pub priority: Priority,
    pub fwd: Option<NodeId>,
    pub tag: Tag,
    pub stamp: u64,
}

/// The match-action content of a rule, ignoring tag and stamp.
pub type RuleKey = (NodeId, Option<NodeId>, Option<NodeId>, Priority, Option<NodeId>);

impl Rule {
    pub fn forwarding(creator: NodeId, switch: NodeId, dest: NodeId, priority: Priority, fwd: NodeId, tag: Tag) -> Rule {
        Rule {
            creator,
            switch,
            src: Some(creator),
            dest: Some(dest),
            priority,
            fwd: Some(fwd),
            tag,
            stamp: 0,
        }
    }

    pub fn meta(creator: NodeId, switch: NodeId, tag: Tag) -> Rule {
        Rule { creator, switch, src: None, dest: None, priority: 0, fwd: None, tag, stamp: 0 }
    }

    pub fn is_meta(&self) -> bool {
        self.src.is_none() && self.dest.is_none() && self.fwd.is_none() && self.priority == 0
    }

    pub fn key(&self) -> RuleKey {
        (self.creator, self.src, self.dest, self.priority, self.fwd)
    }
}

/// Result of a rule lookup. `ambiguous` is set when another rule with the
/// winning priority forwards elsewhere, which only happens in corrupted tables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lookup {
    pub rule: Option<Rule>,
    pub ambiguous: bool,
}

/// Highest-priority non-meta rule matching `(src, dest)` whose next hop is in
/// `operational`. Ties go to the lowest creator index, then the newest stamp.
pub fn applicable_rule<'a, I>(rules: I, src: NodeId, dest: NodeId, operational: &BTreeSet<NodeId>) -> Lookup
where
    I: IntoIterator<Item = &'a Rule>,
{
    let mut best: Option<&Rule> = None;
    let mut ambiguous = false;
    for r in rules {
        if r.is_meta() || r.src != Some(src) || r.dest != Some(dest) {
            continue;
        }
        let Some(fwd) = r.fwd else { continue };
        if !operational.contains(&fwd) {
            continue;
        }
        match best {
            None => best = Some(r),
            Some(b) if r.priority > b.priority => {
                best = Some(r);
                ambiguous = false;
            }
            Some(b) if r.priority == b.priority => {
                if r.fwd != b.fwd {
                    ambiguous = true;
                }
                if (r.creator, std::cmp::Reverse(r.stamp)) < (b.creator, std::cmp::Reverse(b.stamp)) {
                    best = Some(r);
                }
            }
            Some(_) => {}
        }
    }
    Lookup { rule: best.cloned(), ambiguous }
}

/// Header fields a switch looks at when forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub src: NodeId,
    pub dest: NodeId,
    pub control: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    ToPort(NodeId),
    ToControlModule,
    Drop,
}

/// One command of a batch sent by a controller to a switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    NewRound(Tag),
    DelMngr(NodeId),
    AddMngr(NodeId),
    DelAllRules(NodeId),
    /// Replace the sender's non-meta rules. Rules tagged `keep` survive unless
    /// a new rule has the same match-action content (three-tag variant).
    UpdateRules { rules: Vec<Rule>, keep: Option<Tag> },
    Query(Tag),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommandBatch(pub Vec<Command>);

impl CommandBatch {
    /// NewRound first, Query last, neither of them in between.
    pub fn is_well_formed(&self) -> bool {
        let cmds = &self.0;
        if cmds.len() < 2 {
            return false;
        }
        if !matches!(cmds[0], Command::NewRound(_)) || !matches!(cmds[cmds.len() - 1], Command::Query(_)) {
            return false;
        }
        cmds[1..cmds.len() - 1]
            .iter()
            .all(|c| !matches!(c, Command::NewRound(_) | Command::Query(_)))
    }

    pub fn query_tag(&self) -> Option<Tag> {
        match self.0.last() {
            Some(Command::Query(t)) => Some(*t),
            _ => None,
        }
    }

    pub fn has_deletions(&self) -> bool {
        self.0.iter().any(|c| matches!(c, Command::DelMngr(_) | Command::DelAllRules(_)))
    }
}

/// `⟨j, N_c(j), manager(j), rules(j)⟩`. Controllers answer with `managers = None`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryReply {
    pub id: NodeId,
    pub neighbors: BTreeSet<NodeId>,
    pub managers: Option<BTreeSet<NodeId>>,
    pub rules: Vec<Rule>,
}

impl QueryReply {
    /// The self-record a controller keeps for itself.
    pub fn self_record(id: NodeId, neighbors: BTreeSet<NodeId>) -> QueryReply {
        QueryReply { id, neighbors, managers: Some(BTreeSet::new()), rules: Vec::new() }
    }

    pub fn is_self_record_of(&self, id: NodeId) -> bool {
        self.id == id && self.rules.is_empty() && self.managers.as_ref().is_some_and(|m| m.is_empty())
    }

    /// Tag of the meta-rule (or controller echo) that `querier` owns in this reply.
    pub fn tag_for(&self, querier: NodeId) -> Option<Tag> {
        self.rules.iter().find(|r| r.creator == querier && r.is_meta()).map(|r| r.tag)
    }
}

/// A deletion that actually removed something at a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deletion {
    Manager(NodeId),
    Rules(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOutcome {
    pub reply: QueryReply,
    pub deletions: Vec<Deletion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchState {
    pub id: NodeId,
    pub rules: Vec<Rule>,
    pub managers: BTreeMap<NodeId, u64>,
    pub clock: u64,
    pub max_rules: usize,
    pub max_managers: usize,
}

impl SwitchState {
    pub fn new(id: NodeId, max_rules: usize, max_managers: usize) -> SwitchState {
        SwitchState { id, rules: Vec::new(), managers: BTreeMap::new(), clock: 0, max_rules, max_managers }
    }

    fn fresh(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn applicable_rule(&self, src: NodeId, dest: NodeId, operational: &BTreeSet<NodeId>) -> Lookup {
        applicable_rule(&self.rules, src, dest, operational)
    }

    pub fn forward(&self, header: Header, operational: &BTreeSet<NodeId>) -> Decision {
        if header.dest == self.id && header.control {
            return Decision::ToControlModule;
        }
        match self.applicable_rule(header.src, header.dest, operational).rule.and_then(|r| r.fwd) {
            Some(next) => Decision::ToPort(next),
            None => Decision::Drop,
        }
    }

    pub fn meta_tag(&self, controller: NodeId) -> Option<Tag> {
        self.rules.iter().find(|r| r.creator == controller && r.is_meta()).map(|r| r.tag)
    }

    pub fn manager_set(&self) -> BTreeSet<NodeId> {
        self.managers.keys().copied().collect()
    }

    /// Drop the stalest rules and managers until both fit their bounds.
    pub fn evict(&mut self) {
        while self.rules.len() > self.max_rules {
            let (idx, _) = self.rules.iter().enumerate().min_by_key(|(_, r)| r.stamp).expect("nonempty");
            self.rules.remove(idx);
        }
        while self.managers.len() > self.max_managers {
            let (&k, _) = self.managers.iter().min_by_key(|(_, s)| **s).expect("nonempty");
            self.managers.remove(&k);
        }
    }

    fn refresh(&mut self, from: NodeId) {
        let mut clock = self.clock;
        for r in self.rules.iter_mut().filter(|r| r.creator == from) {
            clock += 1;
            r.stamp = clock;
        }
        if let Some(s) = self.managers.get_mut(&from) {
            clock += 1;
            *s = clock;
        }
        self.clock = clock;
    }

    fn validate(&self, from: NodeId, batch: &CommandBatch) -> bool {
        batch.is_well_formed()
            && batch.0.iter().all(|c| match c {
                Command::UpdateRules { rules, .. } => {
                    rules.iter().all(|r| r.creator == from && r.switch == self.id && !r.is_meta())
                }
                _ => true,
            })
    }

    /// Apply a whole batch in one step. Malformed batches leave the switch
    /// untouched and produce no reply.
    ///
    /// `ports` are the switch's links in `G_c` (rules may only forward there);
    /// `neighbors` is the neighborhood reported in the reply.
    pub fn apply_batch(
        &mut self,
        from: NodeId,
        batch: &CommandBatch,
        ports: &BTreeSet<NodeId>,
        neighbors: &BTreeSet<NodeId>,
    ) -> Option<BatchOutcome> {
        if !self.validate(from, batch) {
            return None;
        }
        let mut deletions = Vec::new();
        let mut reply = None;
        for cmd in &batch.0 {
            match cmd {
                Command::NewRound(tag) => {
                    self.rules.retain(|r| !(r.creator == from && r.is_meta()));
                    let mut meta = Rule::meta(from, self.id, *tag);
                    meta.stamp = self.fresh();
                    self.rules.push(meta);
                    self.refresh(from);
                    self.evict();
                }
                Command::DelMngr(k) => {
                    if self.managers.remove(k).is_some() {
                        deletions.push(Deletion::Manager(*k));
                    }
                }
                Command::AddMngr(k) => {
                    let s = self.fresh();
                    self.managers.insert(*k, s);
                    self.evict();
                }
                Command::DelAllRules(k) => {
                    let before = self.rules.len();
                    self.rules.retain(|r| r.creator != *k);
                    if self.rules.len() != before {
                        deletions.push(Deletion::Rules(*k));
                    }
                }
                Command::UpdateRules { rules, keep } => {
                    let mut incoming: Vec<Rule> = Vec::new();
                    for r in rules {
                        if r.fwd.is_some_and(|f| ports.contains(&f)) && !incoming.iter().any(|x| x.key() == r.key()) {
                            incoming.push(r.clone());
                        }
                    }
                    let new_keys: BTreeSet<RuleKey> = incoming.iter().map(Rule::key).collect();
                    self.rules.retain(|r| {
                        r.creator != from
                            || r.is_meta()
                            || (keep.is_some_and(|t| r.tag == t) && !new_keys.contains(&r.key()))
                    });
                    for mut r in incoming {
                        r.stamp = self.fresh();
                        self.rules.push(r);
                    }
                    // The sender's meta-rule stays its freshest item.
                    if let Some(i) = self.rules.iter().position(|r| r.creator == from && r.is_meta()) {
                        self.rules[i].stamp = self.fresh();
                    }
                    self.evict();
                }
                Command::Query(_) => {
                    let mut rules = self.rules.clone();
                    rules.sort();
                    reply = Some(QueryReply {
                        id: self.id,
                        neighbors: neighbors.clone(),
                        managers: Some(self.manager_set()),
                        rules,
                    });
                }
            }
        }
        reply.map(|reply| BatchOutcome { reply, deletions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn tag(o: u32, e: u64) -> Tag {
        Tag { owner: n(o), epoch: e }
    }

    fn set(xs: &[u32]) -> BTreeSet<NodeId> {
        xs.iter().map(|&x| n(x)).collect()
    }

    #[test]
    fn single_rule_link_up() {
        let r = Rule::forwarding(n(1), n(3), n(5), 2, n(4), tag(1, 1));
        let l = applicable_rule([&r], n(1), n(5), &set(&[4]));
        assert_eq!(l.rule, Some(r));
        assert!(!l.ambiguous);
    }

    #[test]
    fn detour_used_when_primary_link_down() {
        let primary = Rule::forwarding(n(1), n(3), n(5), 2, n(4), tag(1, 1));
        let detour = Rule::forwarding(n(1), n(3), n(5), 1, n(6), tag(1, 1));
        let rules = [primary.clone(), detour.clone()];
        assert_eq!(applicable_rule(&rules, n(1), n(5), &set(&[4, 6])).rule, Some(primary));
        assert_eq!(applicable_rule(&rules, n(1), n(5), &set(&[6])).rule, Some(detour));
        assert_eq!(applicable_rule(&rules, n(1), n(5), &set(&[])).rule, None);
    }

    #[test]
    fn equal_priority_different_port_is_ambiguous() {
        let a = Rule::forwarding(n(1), n(3), n(5), 2, n(4), tag(1, 1));
        let b = Rule::forwarding(n(1), n(3), n(5), 2, n(6), tag(1, 2));
        let l = applicable_rule([&a, &b], n(1), n(5), &set(&[4, 6]));
        assert!(l.ambiguous);
        assert!(l.rule.is_some());
    }

    #[test]
    fn forward_decisions() {
        let mut s = SwitchState::new(n(3), 10, 2);
        assert_eq!(s.forward(Header { src: n(1), dest: n(3), control: true }, &set(&[2])), Decision::ToControlModule);
        assert_eq!(s.forward(Header { src: n(1), dest: n(5), control: true }, &set(&[4])), Decision::Drop);
        s.rules.push(Rule::forwarding(n(1), n(3), n(5), 2, n(4), tag(1, 1)));
        assert_eq!(s.forward(Header { src: n(1), dest: n(5), control: true }, &set(&[4])), Decision::ToPort(n(4)));
    }

    fn bootstrap_batch(from: u32, t: Tag, rules: Vec<Rule>) -> CommandBatch {
        CommandBatch(vec![
            Command::NewRound(t),
            Command::AddMngr(n(from)),
            Command::UpdateRules { rules, keep: None },
            Command::Query(t),
        ])
    }

    #[test]
    fn bootstrap_step_on_empty_switch() {
        let mut s = SwitchState::new(n(2), 10, 2);
        let t = tag(1, 1);
        let r = Rule::forwarding(n(1), n(2), n(3), 1, n(3), t);
        let out = s.apply_batch(n(1), &bootstrap_batch(1, t, vec![r.clone()]), &set(&[1, 3]), &set(&[1, 3])).unwrap();
        assert_eq!(s.manager_set(), set(&[1]));
        assert_eq!(s.rules.len(), 2);
        assert_eq!(s.meta_tag(n(1)), Some(t));
        assert_eq!(out.reply.managers, Some(set(&[1])));
        assert_eq!(out.reply.tag_for(n(1)), Some(t));
        assert!(out.reply.rules.iter().any(|x| x.key() == r.key()));
    }

    #[test]
    fn del_all_rules_then_query() {
        let mut s = SwitchState::new(n(3), 10, 2);
        let ports = set(&[1, 2, 4]);
        s.apply_batch(n(2), &bootstrap_batch(2, tag(2, 1), vec![Rule::forwarding(n(2), n(3), n(4), 1, n(4), tag(2, 1))]), &ports, &ports)
            .unwrap();
        let batch = CommandBatch(vec![Command::NewRound(tag(1, 1)), Command::DelAllRules(n(2)), Command::Query(tag(1, 1))]);
        let out = s.apply_batch(n(1), &batch, &ports, &ports).unwrap();
        assert!(out.reply.rules.iter().all(|r| r.creator != n(2)));
        assert_eq!(out.deletions, vec![Deletion::Rules(n(2))]);
    }

    #[test]
    fn malformed_batch_ignored() {
        let mut s = SwitchState::new(n(3), 10, 2);
        let before = s.clone();
        let bad = CommandBatch(vec![Command::AddMngr(n(1)), Command::Query(tag(1, 1))]);
        assert!(s.apply_batch(n(1), &bad, &set(&[1]), &set(&[1])).is_none());
        let foreign = CommandBatch(vec![
            Command::NewRound(tag(1, 1)),
            Command::UpdateRules { rules: vec![Rule::forwarding(n(2), n(3), n(4), 1, n(4), tag(1, 1))], keep: None },
            Command::Query(tag(1, 1)),
        ]);
        assert!(s.apply_batch(n(1), &foreign, &set(&[1, 4]), &set(&[1, 4])).is_none());
        assert_eq!(s, before);
    }

    #[test]
    fn rule_forwarding_to_missing_port_is_not_installed() {
        let mut s = SwitchState::new(n(3), 10, 2);
        let t = tag(1, 1);
        let r = Rule::forwarding(n(1), n(3), n(9), 1, n(9), t);
        s.apply_batch(n(1), &bootstrap_batch(1, t, vec![r]), &set(&[1, 4]), &set(&[1, 4])).unwrap();
        assert!(s.rules.iter().all(|r| r.is_meta()));
    }

    #[test]
    fn eviction_removes_minimum_stamp() {
        let mut s = SwitchState::new(n(3), 2, 2);
        for (i, st) in [5u64, 2, 9].into_iter().enumerate() {
            let mut r = Rule::forwarding(n(1), n(3), n(4 + i as u32), 1, n(4), tag(1, 1));
            r.stamp = st;
            s.rules.push(r);
        }
        s.evict();
        let stamps: Vec<u64> = s.rules.iter().map(|r| r.stamp).collect();
        assert_eq!(stamps, vec![5, 9]);
        let mut empty = SwitchState::new(n(3), 2, 2);
        empty.evict();
        assert!(empty.rules.is_empty());
    }

    #[test]
    fn refreshed_controller_survives_overflow() {
        // Two controllers fill the table; controller 1 refreshes, then new rules
        // from controller 1 overflow it. Only controller 2's rules may go.
        let ports = set(&[1, 2, 4, 5, 6, 7]);
        let mut s = SwitchState::new(n(3), 6, 2);
        let r1 = |d: u32, t| Rule::forwarding(n(1), n(3), n(d), 1, n(4), t);
        let r2 = |d: u32, t| Rule::forwarding(n(2), n(3), n(d), 1, n(4), t);
        s.apply_batch(n(1), &bootstrap_batch(1, tag(1, 1), vec![r1(5, tag(1, 1))]), &ports, &ports).unwrap();
        s.apply_batch(n(2), &bootstrap_batch(2, tag(2, 1), vec![r2(5, tag(2, 1)), r2(6, tag(2, 1))]), &ports, &ports)
            .unwrap();
        assert_eq!(s.rules.len(), 5);
        let t = tag(1, 2);
        s.apply_batch(n(1), &bootstrap_batch(1, t, vec![r1(5, t), r1(6, t), r1(7, t)]), &ports, &ports).unwrap();
        assert_eq!(s.rules.len(), 6);
        assert_eq!(s.rules.iter().filter(|r| r.creator == n(1)).count(), 4);
        assert_eq!(s.rules.iter().filter(|r| r.creator == n(2)).count(), 2);
    }

    #[test]
    fn three_tag_keeps_previous_generation() {
        let ports = set(&[4, 6]);
        let mut s = SwitchState::new(n(3), 20, 2);
        let t1 = tag(1, 1);
        let t2 = tag(1, 2);
        s.apply_batch(n(1), &bootstrap_batch(1, t1, vec![Rule::forwarding(n(1), n(3), n(5), 1, n(4), t1)]), &ports, &ports)
            .unwrap();
        let batch = CommandBatch(vec![
            Command::NewRound(t2),
            Command::UpdateRules { rules: vec![Rule::forwarding(n(1), n(3), n(5), 1, n(6), t2)], keep: Some(t1) },
            Command::Query(t2),
        ]);
        s.apply_batch(n(1), &batch, &ports, &ports).unwrap();
        assert_eq!(s.rules.iter().filter(|r| !r.is_meta()).count(), 2);
        // Same content with a fresh tag replaces the kept copy instead of doubling.
        let t3 = tag(1, 3);
        let batch = CommandBatch(vec![
            Command::NewRound(t3),
            Command::UpdateRules { rules: vec![Rule::forwarding(n(1), n(3), n(5), 1, n(6), t3)], keep: Some(t2) },
            Command::Query(t3),
        ]);
        s.apply_batch(n(1), &batch, &ports, &ports).unwrap();
        let fwd: Vec<_> = s.rules.iter().filter(|r| !r.is_meta()).collect();
        assert_eq!(fwd.len(), 1);
        assert_eq!(fwd[0].tag, t3);
    }

    fn arb_rule() -> impl Strategy<Value = Rule> {
        (1u32..4, 1u32..10, 0u8..3, 1u32..10, 0u64..4).prop_map(|(c, d, p, f, e)| {
            Rule::forwarding(NodeId(c), NodeId(20), NodeId(d), p + 1, NodeId(f), Tag { owner: NodeId(c), epoch: e })
        })
    }

    fn arb_batch() -> impl Strategy<Value = (u32, CommandBatch)> {
        let cmd = prop_oneof![
            (1u32..4).prop_map(|k| Command::DelMngr(NodeId(k))),
            (1u32..4).prop_map(|k| Command::AddMngr(NodeId(k))),
            (1u32..4).prop_map(|k| Command::DelAllRules(NodeId(k))),
            proptest::collection::vec(arb_rule(), 0..8).prop_map(|rules| Command::UpdateRules { rules, keep: None }),
        ];
        (1u32..4, 0u64..5, proptest::collection::vec(cmd, 0..5)).prop_map(|(from, e, mid)| {
            let t = Tag { owner: NodeId(from), epoch: e };
            let mid = mid
                .into_iter()
                .map(|c| match c {
                    Command::UpdateRules { rules, keep } => Command::UpdateRules {
                        rules: rules
                            .into_iter()
                            .map(|mut r| {
                                r.creator = NodeId(from);
                                r.src = Some(NodeId(from));
                                r
                            })
                            .collect(),
                        keep,
                    },
                    c => c,
                })
                .collect::<Vec<_>>();
            let mut cmds = vec![Command::NewRound(t)];
            cmds.extend(mid);
            cmds.push(Command::Query(t));
            (from, CommandBatch(cmds))
        })
    }

    proptest! {
        #[test]
        fn capacity_and_unique_stamps(batches in proptest::collection::vec(arb_batch(), 1..12)) {
            let ports: BTreeSet<NodeId> = (1..10).map(NodeId).collect();
            let mut s = SwitchState::new(NodeId(20), 7, 2);
            for (from, b) in &batches {
                prop_assert!(s.apply_batch(NodeId(*from), b, &ports, &ports).is_some());
                prop_assert!(s.rules.len() <= 7);
                prop_assert!(s.managers.len() <= 2);
                let mut stamps: Vec<u64> = s.rules.iter().map(|r| r.stamp).chain(s.managers.values().copied()).collect();
                let before = stamps.len();
                stamps.sort();
                stamps.dedup();
                prop_assert_eq!(stamps.len(), before);
                let metas = s.rules.iter().filter(|r| r.is_meta() && r.creator == NodeId(*from)).count();
                let self_wipe = b.0.contains(&Command::DelAllRules(NodeId(*from)));
                prop_assert_eq!(metas, if self_wipe { 0 } else { 1 });
            }
        }

        #[test]
        fn update_rules_is_idempotent(rules in proptest::collection::vec(arb_rule(), 0..8)) {
            let ports: BTreeSet<NodeId> = (1..10).map(NodeId).collect();
            let rules: Vec<Rule> = rules.into_iter().map(|mut r| { r.creator = NodeId(1); r.src = Some(NodeId(1)); r }).collect();
            let t = Tag { owner: NodeId(1), epoch: 1 };
            let b = CommandBatch(vec![Command::NewRound(t), Command::UpdateRules { rules, keep: None }, Command::Query(t)]);
            let mut s = SwitchState::new(NodeId(20), 64, 4);
            s.apply_batch(NodeId(1), &b, &ports, &ports).unwrap();
            let once: BTreeSet<RuleKey> = s.rules.iter().map(Rule::key).collect();
            s.apply_batch(NodeId(1), &b, &ports, &ports).unwrap();
            let twice: BTreeSet<RuleKey> = s.rules.iter().map(Rule::key).collect();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn lookup_is_total(rules in proptest::collection::vec(arb_rule(), 0..10), src in 1u32..4, dest in 1u32..10, up in proptest::collection::btree_set(1u32..10, 0..9)) {
            let up: BTreeSet<NodeId> = up.into_iter().map(NodeId).collect();
            let l = applicable_rule(&rules, NodeId(src), NodeId(dest), &up);
            if let Some(r) = l.rule {
                prop_assert!(up.contains(&r.fwd.unwrap()));
                let top = rules.iter().filter(|x| x.src == Some(NodeId(src)) && x.dest == Some(NodeId(dest)) && up.contains(&x.fwd.unwrap())).map(|x| x.priority).max();
                prop_assert_eq!(Some(r.priority), top);
            }
        }
    }
}
