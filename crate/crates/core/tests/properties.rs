//! Property tests: algebraic laws of closure and the solver, run semantics
//! of generated protocols, and soundness of emitted derivations. Seeds are
//! drawn by proptest and expanded by the oracle generators.

use std::collections::BTreeSet;

use proptest::prelude::*;

use paylogic_core::analysis::{self, evidence_kb, exchange_states, Options, Property, Status};
use paylogic_core::fixtures::{netbill_fixed, NETBILL};
use paylogic_core::logic::{prove, replay, Derivation, Formula, KnowledgeBase, Stamp, Term};
use paylogic_core::message::{analyze_closure, can_derive, KeyTerm, Msg, PartyId};
use paylogic_core::oracle::{self, bf_closure, bf_entails, bf_sat, GridSpec};
use paylogic_core::protocol::{run, terminal_states, RunConfig, INITIAL, TERMINAL};
use paylogic_core::time::{
    eliminate_max, entails, is_satisfiable, rat, ratio, Atom, ConstraintSystem, DelayRole, Scope, TimeExpr,
};
use paylogic_core::{parse_str, EvidenceSpec, ProtocolSpec};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(n) }
}

fn half_grid() -> GridSpec {
    GridSpec::new(rat(0), rat(4), ratio(1, 2))
}

// ---------------------------------------------------------------- messages

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn closure_matches_oracle(seed in any::<u64>()) {
        let s = oracle::gen_msg_set(&mut oracle::rng(seed), 6, 4);
        prop_assert_eq!(analyze_closure(&s), bf_closure(&s, 64));
    }

    #[test]
    fn closure_is_idempotent_and_monotone(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let s = oracle::gen_msg_set(&mut r, 6, 4);
        let c = analyze_closure(&s);
        prop_assert_eq!(analyze_closure(&c), c.clone());
        let mut bigger = s.clone();
        bigger.extend(oracle::gen_msg_set(&mut r, 3, 3));
        prop_assert!(c.is_subset(&analyze_closure(&bigger)));
        for m in &s {
            prop_assert!(can_derive(&s, m));
        }
    }

    #[test]
    fn signatures_cannot_be_forged(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let s = oracle::gen_msg_set(&mut r, 6, 4);
        let body = oracle::gen_msg(&mut r, 2);
        for who in ["P", "Q"] {
            let sk = KeyTerm::Private(PartyId::new(who));
            let mut subs = BTreeSet::new();
            for m in &s {
                m.subterms(&mut subs);
            }
            let has_key = subs.contains(&Msg::key(sk.clone()));
            let has_sig = subs.iter().any(|m| matches!(m, Msg::Enc(_, k) if *k == sk));
            if !has_key && !has_sig {
                prop_assert!(!can_derive(&s, &Msg::enc(body.clone(), sk)));
            }
        }
    }
}

// ---------------------------------------------------------------- time

proptest! {
    #![proptest_config(cases(500))]

    #[test]
    fn solver_matches_grid(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let (sys, names) = oracle::gen_system(&mut r, 5);
        let (sat, model) = is_satisfiable(&sys);
        prop_assert_eq!(sat, bf_sat(&sys, &half_grid()).is_some(), "{:?}", sys.render());
        if let Some(m) = &model {
            prop_assert!(sys.satisfied_by(m));
            for d in sys.delay_syms() {
                prop_assert!(m.get(&d.name).is_none_or(|v| *v >= rat(0)));
            }
        }
        let flagged: Vec<(String, bool)> = names.iter().map(|n| (n.clone(), n.starts_with('d'))).collect();
        if let Some(a) = (0..8).find_map(|_| oracle::gen_atom(&mut r, &flagged)) {
            let e = entails(&sys, &a);
            prop_assert_eq!(e, bf_entails(&sys, &a, &half_grid()), "{:?} |= {}", sys.render(), a);
            if e {
                if let Some(m) = &model {
                    prop_assert_eq!(a.holds(m), Some(true));
                }
            }
        }
    }
}

fn int_points(vars: &[String], hi: i64) -> Vec<Vec<(String, i64)>> {
    let mut out = vec![vec![]];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|p: Vec<(String, i64)>| {
                (0..=hi).map(move |x| {
                    let mut q = p.clone();
                    q.push((v.clone(), x));
                    q
                })
            })
            .collect();
    }
    out
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn max_elimination_preserves_models(seed in any::<u64>(), nested in any::<bool>(), upper in any::<bool>()) {
        let mut r = oracle::rng(seed);
        let (mut sys, names) = oracle::gen_system(&mut r, 3);
        let v = |i: usize| {
            let n = &names[i % names.len()];
            if n.starts_with('d') {
                TimeExpr::delays(&[paylogic_core::time::DelaySym::step(n.clone())])
            } else {
                TimeExpr::var(n.clone())
            }
        };
        let mut m = TimeExpr::max(v(0), v(1));
        if nested {
            m = TimeExpr::max(m, v(2));
        }
        let bound = TimeExpr::Const(rat((seed % 5) as i64));
        sys.push(if upper { Atom::Le(m, bound) } else { Atom::Le(bound, m) });
        let branches = eliminate_max(&sys);
        prop_assert!(branches.iter().all(|b| !b.has_max()));
        for point in int_points(&names, 4) {
            let model = point.iter().map(|(k, x)| (k.clone(), rat(*x))).collect();
            let original = sys.satisfied_by(&model);
            let some_branch = branches.iter().any(|b| b.satisfied_by(&model));
            prop_assert_eq!(original, some_branch);
        }
    }
}

#[test]
fn grid_oracle_examples() {
    let sum = TimeExpr::delays(&[
        paylogic_core::time::DelaySym::step("t5"),
        paylogic_core::time::DelaySym::step("t6"),
    ]);
    let ten = TimeExpr::Const(rat(10));
    let bad = ConstraintSystem::from_atoms([Atom::Le(sum.clone(), ten.clone()), Atom::Lt(ten, sum)]);
    assert_eq!(bf_sat(&bad, &GridSpec::new(rat(0), rat(12), ratio(1, 2))), None);
    assert!(!is_satisfiable(&bad).0);
}

// ---------------------------------------------------------------- protocols

fn generated(seed: u64) -> (ProtocolSpec, EvidenceSpec) {
    oracle::gen_protocol(&mut oracle::rng(seed), 6, 4)
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn run_semantics(seed in any::<u64>()) {
        let (spec, _) = generated(seed);
        prop_assert_eq!(paylogic_core::validate(&spec), vec![]);
        let full = run(&spec, &RunConfig::full(&spec)).unwrap();
        for (party, entries) in &full.timeline.entries {
            // monotone without timeouts
            for w in entries.windows(2) {
                prop_assert!(w[0].1.is_subset(&w[1].1), "{party} shrank at {}", w[1].0);
            }
            // rule 2 is a no-op on repeated receipt
            for (i, e) in full.trace.entries.iter().enumerate() {
                if &e.to == party && !e.received_new && e.from != *party {
                    prop_assert_eq!(&entries[i].1, &entries[i + 1].1);
                }
            }
            // fresh messages are absent before their step
            for (step, fresh) in &spec.fresh {
                for (at, set) in entries.iter().take(*step) {
                    prop_assert!(at == INITIAL || at.starts_with('T'));
                    for f in fresh {
                        prop_assert!(!set.contains(f), "{f} held by {party} at {at}");
                    }
                }
            }
        }
        // timeouts clear run records and nothing else
        for config in terminal_states(&spec) {
            let r = run(&spec, &config).unwrap();
            for p in &spec.parties {
                let end = r.timeline.terminal(&p.id);
                prop_assert!(spec.knowledge(&p.id).is_subset(&end));
                if config.timeout_fired.contains(&p.id) {
                    prop_assert_eq!(end, spec.knowledge(&p.id));
                }
                prop_assert_eq!(r.timeline.entries[&p.id].last().unwrap().0.as_str(), TERMINAL);
            }
        }
    }

    #[test]
    fn every_delay_is_nonnegative_in_models(seed in any::<u64>()) {
        let (spec, _) = generated(seed);
        let r = run(&spec, &RunConfig::full(&spec)).unwrap();
        if let (true, Some(m)) = is_satisfiable(&r.system) {
            for d in r.system.delay_syms() {
                prop_assert!(m.get(&d.name).is_none_or(|v| *v >= rat(0)), "{} < 0", d.name);
                prop_assert!(matches!(d.role, DelayRole::StepDelay | DelayRole::WaitingTime));
            }
        }
    }
}

// ---------------------------------------------------------------- analysis

fn proofs(spec: &ProtocolSpec, ev: &EvidenceSpec) -> Vec<(Derivation, KnowledgeBase)> {
    let v = analysis::check_sufficiency(spec, ev, 12);
    let mut out = Vec::new();
    for (g, c) in ev.goals.iter().zip(&v.checks) {
        if let (Some(d), Some(item)) = (&c.derivation, ev.item(&g.evidence)) {
            out.push((d.clone(), evidence_kb(spec, item)));
        }
    }
    out
}

fn fixtures() -> Vec<(ProtocolSpec, EvidenceSpec)> {
    vec![parse_str(NETBILL).unwrap(), parse_str(&netbill_fixed()).unwrap()]
}

#[test]
fn fixture_derivations_replay() {
    for (spec, ev) in fixtures() {
        let ps = proofs(&spec, &ev);
        assert_eq!(ps.len(), 2);
        for (d, kb) in ps {
            assert!(replay(&d, &kb), "{}", d.render());
            origin_scopes(&d);
        }
    }
}

/// Every `sent` conclusion of an origin rule is scoped `[Ty | Ty <= Tx]`
/// and emits that bound.
fn origin_scopes(d: &Derivation) {
    d.walk(&mut |n| {
        if n.rule == "A3" || n.rule == "A3s" {
            let Formula::CanProve(_, body) = &n.goal else { panic!("{:?}", n.goal) };
            let Formula::Sent(_, _, Stamp::Scoped(s)) = &**body else { panic!("{body:?}") };
            let Scope::UpTo(bound) = &s.scope else { panic!("{s:?}") };
            assert!(n.emitted.contains(&Atom::Le(TimeExpr::var(s.var.clone()), bound.clone())));
        }
    });
}

proptest! {
    #![proptest_config(cases(60))]

    #[test]
    fn generated_derivations_replay(seed in any::<u64>()) {
        let (spec, ev) = generated(seed);
        for (d, kb) in proofs(&spec, &ev) {
            prop_assert!(replay(&d, &kb), "{}", d.render());
            origin_scopes(&d);
        }
    }

    #[test]
    fn failing_verdicts_carry_checked_witnesses(seed in any::<u64>()) {
        let (spec, ev) = generated(seed);
        let report = analysis::analyze(&spec, &ev, &Options::default());
        for p in [Property::Fairness, Property::Timeliness] {
            if let Some(v) = report.verdict(p) {
                if v.status == Status::Fail {
                    let w = v.witness.as_ref();
                    prop_assert!(w.is_some_and(|w| w.check() && w.config.is_some() && w.model.is_some()));
                }
                if p == Property::Fairness && v.status == Status::Pass {
                    prop_assert!(exchange_states(&spec, &ev).iter().all(|s| !s.is_violation()));
                }
            }
        }
    }
}

fn fact_kb(facts: &[Formula]) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    for f in facts {
        kb.add_fact(f.clone());
    }
    kb
}

fn sent_goal(a: &str, b: &str, m: &Msg) -> Term {
    Formula::can_prove(PartyId::new(a), Formula::Sent(PartyId::new(b), m.clone(), Stamp::at_var("T1"))).to_term()
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn pair_implications(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let (m, n) = (oracle::gen_msg(&mut r, 3), oracle::gen_msg(&mut r, 3));
        let pair = Msg::pair(m.clone(), n.clone());
        let (a, b) = (PartyId::new("A"), PartyId::new("B"));
        let sent = Formula::can_prove(a.clone(), Formula::Sent(b.clone(), pair.clone(), Stamp::at_var("T1")));
        let recv = Formula::can_prove(a.clone(), Formula::Received(b.clone(), pair, Stamp::at_var("T1")));
        let kb = fact_kb(&[sent, recv]);
        let sys = ConstraintSystem::new();
        for part in [&m, &n] {
            let g = sent_goal("A", "B", part);
            prop_assert!(prove(&kb, &g, &sys, 12).is_proved());
            let g = Formula::can_prove(a.clone(), Formula::Received(b.clone(), part.clone(), Stamp::at_var("T1"))).to_term();
            prop_assert!(prove(&kb, &g, &sys, 12).is_proved());
        }
    }

    #[test]
    fn extra_facts_keep_proofs(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let (spec, ev) = parse_str(NETBILL).unwrap();
        let extra: Vec<Formula> = (0..3)
            .map(|_| Formula::Possesses(PartyId::new("C"), oracle::gen_msg(&mut r, 3), Some(Stamp::at_var("Te"))))
            .collect();
        for g in &ev.goals {
            let mut kb = evidence_kb(&spec, ev.item(&g.evidence).unwrap());
            for f in &extra {
                kb.add_fact(f.clone());
            }
            let out = prove(&kb, &g.goal, &ConstraintSystem::new(), 12 + extra.len());
            prop_assert!(out.is_proved());
            let (d, _) = out.proof().unwrap();
            prop_assert!(replay(d, &kb));
        }
    }
}

// ---------------------------------------------------------------- mutants

#[test]
fn mutated_derivations_fail_replay() {
    let mut pool = Vec::new();
    for (spec, ev) in fixtures() {
        pool.extend(proofs(&spec, &ev));
    }
    let mut r = oracle::rng(2024);
    let mut tried = 0;
    let mut i = 0;
    while tried < 100 {
        let (d, kb) = &pool[i % pool.len()];
        let kind = oracle::MUTATION_KINDS[i % oracle::MUTATION_KINDS.len()];
        i += 1;
        let Some(m) = oracle::mutate(d, kind, &mut r) else { continue };
        assert_ne!(&m, d);
        assert!(!replay(&m, kb), "{kind} mutant replayed:\n{}", m.render());
        tried += 1;
    }
}
