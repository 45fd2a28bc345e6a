//! Depth-limited backward chaining with syntactic unification.
//!
//! Search order is fixed: knowledge-base facts first, then built-in rules,
//! then registered assumptions, premises left to right. Goals whose message
//! cannot match any subterm of a known message are pruned; every rule keeps
//! conclusion messages inside the subterms of its premises, so the pruning
//! never loses a proof.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::message::{Msg, PartyId};
use crate::time::{is_satisfiable, Atom, ConstraintSystem};

use super::rules::{builtin_rules, Rule, RuleKind};
use super::term::{matches_ground, msg_to_term, term_to_time, unify, Op, Subst, Term};
use super::Formula;

pub const DEFAULT_DEPTH: usize = 12;

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    facts: Vec<Formula>,
    fact_terms: Vec<Term>,
    assumptions: Vec<Rule>,
    counterparts: BTreeMap<PartyId, PartyId>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a grounded fact. Shared-key statements are stored in both
    /// endpoint orders.
    pub fn add_fact(&mut self, f: Formula) {
        let mirrored = mirror_shared(&f);
        self.push_fact(f);
        if let Some(m) = mirrored {
            self.push_fact(m);
        }
    }

    fn push_fact(&mut self, f: Formula) {
        if !self.facts.contains(&f) {
            self.fact_terms.push(f.to_term());
            self.facts.push(f);
        }
    }

    pub fn facts(&self) -> &[Formula] {
        &self.facts
    }

    pub fn contains_fact(&self, f: &Formula) -> bool {
        self.facts.contains(f)
    }

    /// Declares `a` and `b` as each other's counterpart.
    pub fn set_counterpart(&mut self, a: PartyId, b: PartyId) {
        self.counterparts.insert(a.clone(), b.clone());
        self.counterparts.insert(b, a);
    }

    pub fn counterpart(&self, p: &PartyId) -> Option<&PartyId> {
        self.counterparts.get(p)
    }

    pub(crate) fn add_rule(&mut self, r: Rule) {
        self.assumptions.push(r);
    }

    pub fn assumptions(&self) -> &[Rule] {
        &self.assumptions
    }

    /// Built-in rules followed by assumptions, in search order.
    pub fn all_rules(&self) -> Vec<Rule> {
        let mut rules = builtin_rules();
        rules.extend(self.assumptions.iter().cloned());
        rules
    }
}

fn mirror_shared(f: &Formula) -> Option<Formula> {
    match f {
        Formula::SharedKeyOf(k, a, b) if a != b => Some(Formula::SharedKeyOf(k.clone(), b.clone(), a.clone())),
        Formula::CanProve(x, body) => mirror_shared(body).map(|m| Formula::CanProve(x.clone(), Box::new(m))),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Derivation {
    pub goal: Formula,
    /// `Fact` for knowledge-base leaves, otherwise the rule name.
    pub rule: String,
    pub bindings: BTreeMap<String, Term>,
    pub emitted: Vec<Atom>,
    pub children: Vec<Derivation>,
}

impl Derivation {
    pub fn is_fact(&self) -> bool {
        self.rule == "Fact"
    }

    /// Rule names of all non-leaf nodes, in preorder.
    pub fn rule_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |d| {
            if !d.is_fact() {
                out.push(d.rule.clone());
            }
        });
        out
    }

    pub fn all_emitted(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.walk(&mut |d| out.extend(d.emitted.iter().cloned()));
        out
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Derivation)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Derivation::size).sum::<usize>()
    }

    /// Indented tree in the logic's notation.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, indent: usize, out: &mut String) {
        out.push_str(&"  ".repeat(indent));
        out.push_str(&self.goal.symbolic());
        out.push_str(&format!("    [{}]", self.rule));
        if !self.emitted.is_empty() {
            let cs: Vec<String> = self.emitted.iter().map(ToString::to_string).collect();
            out.push_str(&format!(" with {}", cs.join(", ")));
        }
        out.push('\n');
        for c in &self.children {
            c.render_into(indent + 1, out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProveOutcome {
    Proved(Box<Derivation>, ConstraintSystem),
    /// The search space was exhausted within the depth limit.
    Failed,
    /// No proof found and the depth limit cut at least one branch.
    DepthExhausted,
}

impl ProveOutcome {
    pub fn proof(&self) -> Option<(&Derivation, &ConstraintSystem)> {
        match self {
            ProveOutcome::Proved(d, s) => Some((d, s)),
            _ => None,
        }
    }

    pub fn is_proved(&self) -> bool {
        matches!(self, ProveOutcome::Proved(..))
    }
}

#[derive(Clone)]
struct State {
    subst: Subst,
    next_meta: usize,
    next_fresh: usize,
}

#[derive(Clone)]
struct Node {
    goal: Term,
    rule: String,
    bindings: Vec<(String, Term)>,
    side: Vec<(Term, Term)>,
    children: Vec<Node>,
}

type Cont<'c> = dyn FnMut(&mut Search, State, Node, &mut Vec<Term>) -> bool + 'c;
type SeqCont<'c> = dyn FnMut(&mut Search, State, Vec<Node>, &mut Vec<Term>) -> bool + 'c;

struct Search<'a> {
    kb: &'a KnowledgeBase,
    rules: Vec<Rule>,
    universe: Option<Vec<Term>>,
    failed: HashMap<Term, usize>,
    depth_hit: bool,
    loop_prunes: usize,
    taken: BTreeSet<String>,
}

const GREEK: [&str; 16] = ["α", "β", "γ", "δ", "ε", "ζ", "η", "θ", "ι", "κ", "λ", "μ", "ν", "ξ", "π", "ρ"];

fn fresh_name(i: usize) -> String {
    let round = i / GREEK.len();
    let base = format!("T{}", GREEK[i % GREEK.len()]);
    if round == 0 {
        base
    } else {
        format!("{base}{}", round + 1)
    }
}

/// Message arguments of `sent`/`has`/`recv` nodes anywhere in `t`.
fn message_slots(t: &Term, out: &mut Vec<Term>) {
    if let Term::App(op, args) = t {
        match op {
            Op::Sent | Op::Has | Op::Recv if args.len() == 3 => out.push(args[1].clone()),
            Op::Proves | Op::Conj => args.iter().for_each(|a| message_slots(a, out)),
            _ => {}
        }
    }
}

fn contains_term(hay: &Term, needle: &Term) -> bool {
    hay == needle
        || match hay {
            Term::App(_, args) => args.iter().any(|a| contains_term(a, needle)),
            _ => false,
        }
}

/// Replaces unevaluated `dual`/`timeof` nodes by wildcards.
fn wildcard_evals(t: &Term, n: &mut usize) -> Term {
    match t {
        Term::App(Op::Dual | Op::TimeOf, _) => {
            *n += 1;
            Term::Meta(format!("_w{n}"))
        }
        Term::App(op, args) => Term::App(*op, args.iter().map(|a| wildcard_evals(a, n)).collect()),
        other => other.clone(),
    }
}

fn build_universe(kb: &KnowledgeBase) -> Option<Vec<Term>> {
    for rule in &kb.assumptions {
        let mut prem_slots = Vec::new();
        for p in &rule.premises {
            message_slots(p, &mut prem_slots);
        }
        let mut concl_slots = Vec::new();
        message_slots(&rule.conclusion, &mut concl_slots);
        let closed = concl_slots
            .iter()
            .all(|c| c.is_ground() || prem_slots.iter().any(|p| contains_term(p, c)));
        if !closed {
            return None;
        }
    }
    let mut msgs: BTreeSet<Msg> = BTreeSet::new();
    let mut mentioned = Vec::new();
    for f in &kb.facts {
        f.messages(&mut mentioned);
    }
    for m in &mentioned {
        m.subterms(&mut msgs);
    }
    let mut universe: Vec<Term> = msgs.iter().map(msg_to_term).collect();
    for rule in &kb.assumptions {
        let mut slots = Vec::new();
        message_slots(&rule.conclusion, &mut slots);
        universe.extend(slots.into_iter().filter(Term::is_ground));
    }
    Some(universe)
}

impl<'a> Search<'a> {
    fn relevant(&self, g: &Term) -> bool {
        let Some(universe) = &self.universe else { return true };
        let mut slots = Vec::new();
        message_slots(g, &mut slots);
        slots.iter().all(|m| {
            if matches!(m, Term::Meta(_)) {
                return true;
            }
            let pattern = wildcard_evals(m, &mut 0);
            universe.iter().any(|u| matches_ground(&pattern, u))
        })
    }

    fn fresh(&self, st: &mut State) -> String {
        loop {
            let name = fresh_name(st.next_fresh);
            st.next_fresh += 1;
            if !self.taken.contains(&name) {
                return name;
            }
        }
    }

    fn solve(&mut self, goal: &Term, st: State, depth: usize, path: &mut Vec<Term>, k: &mut Cont<'_>) -> bool {
        let g = goal.resolve(&st.subst);
        if !self.relevant(&g) {
            return false;
        }
        if path.iter().any(|p| p.is_variant(&g)) {
            self.loop_prunes += 1;
            return false;
        }
        let ground = g.is_ground();
        if ground && self.failed.get(&g).is_some_and(|&d| d >= depth) {
            return false;
        }
        let prunes_before = self.loop_prunes;
        let mut produced = false;
        path.push(g.clone());

        for i in 0..self.kb.fact_terms.len() {
            let mut s = st.subst.clone();
            if !unify(&g, &self.kb.fact_terms[i], &mut s) {
                continue;
            }
            produced = true;
            let node = Node { goal: g.clone(), rule: "Fact".into(), bindings: vec![], side: vec![], children: vec![] };
            let st2 = State { subst: s, ..st.clone() };
            path.pop();
            let done = k(self, st2, node, path);
            path.push(g.clone());
            if done {
                path.pop();
                return true;
            }
        }

        if depth == 0 {
            self.depth_hit = true;
        } else if self.expand(&g, &st, depth, path, &mut produced, k) {
            path.pop();
            return true;
        }

        path.pop();
        if !produced && ground && self.loop_prunes == prunes_before {
            let entry = self.failed.entry(g).or_insert(0);
            *entry = (*entry).max(depth);
        }
        false
    }

    fn expand(
        &mut self,
        g: &Term,
        st: &State,
        depth: usize,
        path: &mut Vec<Term>,
        produced: &mut bool,
        k: &mut Cont<'_>,
    ) -> bool {
        // conjunction introduction over any number of conjuncts
        if let Term::App(Op::Proves, args) = g {
            if let [agent, Term::App(Op::Conj, items)] = args.as_slice() {
                let premises: Vec<Term> =
                    items.iter().map(|f| Term::App(Op::Proves, vec![agent.clone(), f.clone()])).collect();
                let agent = agent.clone();
                let goal = g.clone();
                let done = self.solve_seq(&premises, 0, st.clone(), depth - 1, path, Vec::new(), &mut |this, st2, children, path| {
                    *produced = true;
                    let node = Node {
                        goal: goal.clone(),
                        rule: "A1".into(),
                        bindings: vec![("A".into(), agent.clone())],
                        side: vec![],
                        children,
                    };
                    let p = path.pop();
                    let done = k(this, st2, node, path);
                    path.extend(p);
                    done
                });
                if done {
                    return true;
                }
            }
        }

        for ri in 0..self.rules.len() {
            let rule = self.rules[ri].clone();
            if rule.kind == RuleKind::Schema {
                continue;
            }
            let mut st2 = st.clone();
            let tag = st2.next_meta;
            st2.next_meta += 1;
            let rn = |m: &str| format!("{m}#{tag}");
            let conclusion = rule.conclusion.rename(&rn);
            if !unify(g, &conclusion, &mut st2.subst) {
                continue;
            }
            if let Some((b, a)) = &rule.counterpart {
                let av = Term::meta(rn(a)).resolve(&st2.subst);
                let bv = Term::meta(rn(b)).resolve(&st2.subst);
                let bound = match (&av, &bv) {
                    (Term::Sym(x), _) => self.kb.counterpart(&PartyId::new(x.clone())).map(|c| (bv.clone(), c.clone())),
                    (_, Term::Sym(y)) => self.kb.counterpart(&PartyId::new(y.clone())).map(|c| (av.clone(), c.clone())),
                    _ => None,
                };
                match bound {
                    Some((slot, party)) if unify(&slot, &Term::sym(party.0.clone()), &mut st2.subst) => {}
                    _ => continue,
                }
            }
            for f in &rule.fresh {
                let name = self.fresh(&mut st2);
                unify(&Term::meta(rn(f)), &Term::sym(name), &mut st2.subst);
            }
            let premises: Vec<Term> = rule.premises.iter().map(|p| p.rename(&rn)).collect();
            let bindings: Vec<(String, Term)> = rule.metas().into_iter().map(|m| (m.clone(), Term::meta(rn(&m)))).collect();
            let side: Vec<(Term, Term)> = rule.side.iter().map(|s| (s.lhs.rename(&rn), s.rhs.rename(&rn))).collect();
            let goal = g.clone();
            let name = rule.name.clone();
            let done = self.solve_seq(&premises, 0, st2, depth - 1, path, Vec::new(), &mut |this, st3, children, path| {
                let concl = conclusion.resolve(&st3.subst);
                if concl.has_eval_node() {
                    return false;
                }
                let evaluable = side.iter().all(|(l, r)| {
                    let (l, r) = (l.resolve(&st3.subst), r.resolve(&st3.subst));
                    !l.has_eval_node() && !r.has_eval_node()
                });
                if !evaluable {
                    return false;
                }
                *produced = true;
                let node = Node {
                    goal: goal.clone(),
                    rule: name.clone(),
                    bindings: bindings.clone(),
                    side: side.clone(),
                    children,
                };
                let p = path.pop();
                let done = k(this, st3, node, path);
                path.extend(p);
                done
            });
            if done {
                return true;
            }
        }
        false
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_seq(
        &mut self,
        goals: &[Term],
        idx: usize,
        st: State,
        depth: usize,
        path: &mut Vec<Term>,
        acc: Vec<Node>,
        k: &mut SeqCont<'_>,
    ) -> bool {
        if idx == goals.len() {
            return k(self, st, acc, path);
        }
        self.solve(&goals[idx], st, depth, path, &mut |this, st2, node, path| {
            let mut next = acc.clone();
            next.push(node);
            this.solve_seq(goals, idx + 1, st2, depth, path, next, k)
        })
    }
}

fn to_derivation(node: &Node, subst: &Subst) -> Result<Derivation, String> {
    let goal = Formula::from_term(&node.goal.resolve(subst))?;
    let mut bindings = BTreeMap::new();
    for (name, t) in &node.bindings {
        let v = t.resolve(subst);
        if !v.is_ground() {
            return Err(format!("binding ?{name} left open"));
        }
        bindings.insert(name.clone(), v);
    }
    let mut emitted = Vec::new();
    for (l, r) in &node.side {
        emitted.push(Atom::Le(term_to_time(&l.resolve(subst))?, term_to_time(&r.resolve(subst))?));
    }
    let children = node.children.iter().map(|c| to_derivation(c, subst)).collect::<Result<Vec<_>, _>>()?;
    Ok(Derivation { goal, rule: node.rule.clone(), bindings, emitted, children })
}

/// Searches for a derivation of `goal` (which may leave its time stamps as
/// metavariables). On success the returned system is `sys` extended with
/// every constraint the derivation emits, and is satisfiable.
pub fn prove(kb: &KnowledgeBase, goal: &Term, sys: &ConstraintSystem, depth_limit: usize) -> ProveOutcome {
    let mut taken: BTreeSet<String> = sys.variables();
    let mut stack = vec![goal.clone()];
    stack.extend(kb.fact_terms.iter().cloned());
    while let Some(t) = stack.pop() {
        match t {
            Term::App(Op::TVar, args) => {
                if let Some(Term::Sym(s)) = args.first() {
                    taken.insert(s.clone());
                }
            }
            Term::App(Op::Scoped, args) => {
                if let Some(Term::Sym(s)) = args.first() {
                    taken.insert(s.clone());
                }
                stack.extend(args);
            }
            Term::App(_, args) => stack.extend(args),
            _ => {}
        }
    }
    let mut search = Search {
        kb,
        rules: kb.all_rules(),
        universe: build_universe(kb),
        failed: HashMap::new(),
        depth_hit: false,
        loop_prunes: 0,
        taken,
    };
    let st = State { subst: Subst::new(), next_meta: 0, next_fresh: 0 };
    let mut found: Option<(Derivation, ConstraintSystem)> = None;
    let mut path = Vec::new();
    search.solve(goal, st, depth_limit, &mut path, &mut |_, st, node, _| {
        let Ok(d) = to_derivation(&node, &st.subst) else { return false };
        let mut extended = sys.clone();
        extended.extend(d.all_emitted());
        if !is_satisfiable(&extended).0 {
            return false;
        }
        found = Some((d, extended));
        true
    });
    match found {
        Some((d, s)) => ProveOutcome::Proved(Box::new(d), s),
        None if search.depth_hit => ProveOutcome::DepthExhausted,
        None => ProveOutcome::Failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::Stamp;
    use crate::message::{KeyTerm, Msg};

    fn p(s: &str) -> PartyId {
        PartyId::new(s)
    }

    #[test]
    fn one_step_a5() {
        let mut kb = KnowledgeBase::new();
        let recv = Formula::Received(p("A"), Msg::atom("m"), Stamp::at_var("T1"));
        kb.add_fact(recv);
        let goal = Formula::Possesses(p("A"), Msg::atom("m"), Some(Stamp::at_var("T1")));
        let out = prove(&kb, &goal.to_term(), &ConstraintSystem::new(), DEFAULT_DEPTH);
        let (d, _) = out.proof().expect("proved");
        assert_eq!(d.rule, "A5");
        assert_eq!(d.children.len(), 1);
        assert!(d.children[0].is_fact());
    }

    #[test]
    fn signature_origin_emits_scope() {
        let mut kb = KnowledgeBase::new();
        let signed = Msg::sign(Msg::key(KeyTerm::session("k")), &p("N"));
        kb.add_fact(Formula::Possesses(p("C"), signed, Some(Stamp::at_var("Te"))));
        kb.add_fact(Formula::can_prove(p("C"), Formula::PubKeyOf(KeyTerm::Public(p("N")), p("N"))));
        let goal = Term::parse("proves(C, sent(N, key(session(k)), ?T))").unwrap();
        let out = prove(&kb, &goal, &ConstraintSystem::new(), DEFAULT_DEPTH);
        let (d, sys) = out.proof().expect("proved");
        assert_eq!(d.rule, "A3");
        assert_eq!(d.goal.to_string(), "C proves N sent k @ [Tα | Tα <= Te]");
        assert_eq!(sys.render(), vec!["Tα <= Te".to_string()]);
    }

    #[test]
    fn missing_fact_fails_cleanly() {
        let kb = KnowledgeBase::new();
        let goal = Term::parse("proves(C, sent(M, atom(Goods), ?T))").unwrap();
        assert_eq!(prove(&kb, &goal, &ConstraintSystem::new(), DEFAULT_DEPTH), ProveOutcome::Failed);
    }

    #[test]
    fn conjunction_introduction() {
        let mut kb = KnowledgeBase::new();
        let a = Formula::PubKeyOf(KeyTerm::Public(p("N")), p("N"));
        let b = Formula::PubKeyOf(KeyTerm::Public(p("M")), p("M"));
        kb.add_fact(Formula::can_prove(p("C"), a.clone()));
        kb.add_fact(Formula::can_prove(p("C"), b.clone()));
        let goal = Formula::can_prove(p("C"), Formula::conj(vec![a, b]));
        let out = prove(&kb, &goal.to_term(), &ConstraintSystem::new(), DEFAULT_DEPTH);
        let (d, _) = out.proof().expect("proved");
        assert_eq!(d.rule, "A1");
        assert_eq!(d.children.len(), 2);
    }

    #[test]
    fn pair_implication_under_belief() {
        let mut kb = KnowledgeBase::new();
        let sent = Formula::Sent(p("B"), Msg::pair(Msg::atom("m"), Msg::atom("n")), Stamp::at_var("T1"));
        kb.add_fact(Formula::can_prove(p("A"), sent));
        let goal = Term::parse("proves(A, sent(B, atom(n), ?T))").unwrap();
        let out = prove(&kb, &goal, &ConstraintSystem::new(), DEFAULT_DEPTH);
        assert_eq!(out.proof().unwrap().0.rule, "A2");
    }

    #[test]
    fn shallow_depth_reports_exhaustion() {
        let mut kb = KnowledgeBase::new();
        kb.add_fact(Formula::Received(
            p("A"),
            Msg::pair(Msg::atom("m"), Msg::atom("n")),
            Stamp::at_var("T1"),
        ));
        let goal = Term::parse("has(A, atom(m), ?T)").unwrap();
        assert_eq!(prove(&kb, &goal, &ConstraintSystem::new(), 1), ProveOutcome::DepthExhausted);
        assert!(prove(&kb, &goal, &ConstraintSystem::new(), 2).is_proved());
    }

    #[test]
    fn fresh_names_skip_taken_variables() {
        assert_eq!(fresh_name(0), "Tα");
        assert_eq!(fresh_name(16), "Tα2");
    }
}
