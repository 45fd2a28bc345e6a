use std::collections::BTreeSet;

use crate::message::PartyId;
use crate::time::{is_satisfiable, Atom, ConstraintSystem};

use super::prover::{Derivation, KnowledgeBase};
use super::rules::{Rule, RuleKind};
use super::term::{party_to_term, term_to_time, Subst, Term};
use super::Formula;

/// Independently re-checks a derivation against the knowledge base: every
/// leaf is a fact, every inner node is an instance of its named rule under
/// its recorded bindings, and the emitted constraints are jointly
/// satisfiable.
pub fn replay(d: &Derivation, kb: &KnowledgeBase) -> bool {
    let rules = kb.all_rules();
    check(d, kb, &rules) && is_satisfiable(&ConstraintSystem::from_atoms(d.all_emitted())).0
}

fn check(d: &Derivation, kb: &KnowledgeBase, rules: &[Rule]) -> bool {
    let here = match d.rule.as_str() {
        "Fact" => d.children.is_empty() && d.bindings.is_empty() && d.emitted.is_empty() && kb.contains_fact(&d.goal),
        "A1" => conj_intro(d),
        name => rules
            .iter()
            .filter(|r| r.name == name && r.kind != RuleKind::Schema)
            .any(|r| instance(r, d, kb)),
    };
    here && d.children.iter().all(|c| check(c, kb, rules))
}

fn conj_intro(d: &Derivation) -> bool {
    let Formula::CanProve(agent, body) = &d.goal else { return false };
    let Formula::Conj(items) = body.as_ref() else { return false };
    d.emitted.is_empty()
        && d.bindings.len() == 1
        && d.bindings.get("A") == Some(&party_to_term(agent))
        && d.children.len() == items.len()
        && items
            .iter()
            .zip(&d.children)
            .all(|(f, c)| c.goal == Formula::can_prove(agent.clone(), f.clone()))
}

fn instance(rule: &Rule, d: &Derivation, kb: &KnowledgeBase) -> bool {
    let metas: BTreeSet<String> = rule.metas().into_iter().collect();
    if metas != d.bindings.keys().cloned().collect() {
        return false;
    }
    let subst: Subst = d.bindings.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let formula = |t: &Term| {
        let r = t.resolve(&subst);
        if r.is_ground() && !r.has_eval_node() {
            Formula::from_term(&r).ok()
        } else {
            None
        }
    };
    if formula(&rule.conclusion).as_ref() != Some(&d.goal) {
        return false;
    }
    if rule.premises.len() != d.children.len() {
        return false;
    }
    for (p, c) in rule.premises.iter().zip(&d.children) {
        if formula(p).as_ref() != Some(&c.goal) {
            return false;
        }
    }
    if let Some((b, a)) = &rule.counterpart {
        let (Some(Term::Sym(bv)), Some(Term::Sym(av))) = (d.bindings.get(b), d.bindings.get(a)) else {
            return false;
        };
        if kb.counterpart(&PartyId::new(av.clone())) != Some(&PartyId::new(bv.clone())) {
            return false;
        }
    }
    for f in &rule.fresh {
        let Some(Term::Sym(name)) = d.bindings.get(f) else { return false };
        let mention = Term::app(super::term::Op::TVar, vec![Term::sym(name.clone())]);
        if d.children.iter().any(|c| occurs_in(&c.goal.to_term(), &mention)) {
            return false;
        }
    }
    let mut side = Vec::new();
    for s in &rule.side {
        let (l, r) = (s.lhs.resolve(&subst), s.rhs.resolve(&subst));
        match (term_to_time(&l), term_to_time(&r)) {
            (Ok(l), Ok(r)) => side.push(Atom::Le(l, r)),
            _ => return false,
        }
    }
    side == d.emitted
}

fn occurs_in(hay: &Term, needle: &Term) -> bool {
    hay == needle
        || match hay {
            Term::App(_, args) => args.iter().any(|a| occurs_in(a, needle)),
            _ => false,
        }
}
