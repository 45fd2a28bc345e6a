//! The bundled NetBill protocol: evidence, accountability, fairness and the
//! timing fix, checked against hand-derived expectations and the brute-force
//! fairness oracle.

use std::collections::BTreeSet;

use paylogic_core::analysis::{self, exchange_states, rule_set, Options, Property, Status};
use paylogic_core::fixtures::{netbill_fixed, NETBILL};
use paylogic_core::logic::{Derivation, Formula, Stamp};
use paylogic_core::message::{can_derive, KeyTerm, Msg, PartyId};
use paylogic_core::oracle::{bf_fairness, GridSpec};
use paylogic_core::protocol::{possession_at, run, RunConfig};
use paylogic_core::time::{rat, Atom, TimeExpr};
use paylogic_core::{parse_str, validate, AnalysisReport, EvidenceSpec, ProtocolSpec};

fn netbill() -> (ProtocolSpec, EvidenceSpec) {
    parse_str(NETBILL).expect("fixture parses")
}

fn report() -> AnalysisReport {
    let (spec, ev) = netbill();
    analysis::analyze(&spec, &ev, &Options::default())
}

fn p(s: &str) -> PartyId {
    PartyId::new(s)
}

fn goods_checksum() -> Msg {
    Msg::hash(Msg::enc(Msg::atom("Goods"), KeyTerm::session("k")))
}

fn sufficiency_proof(r: &AnalysisReport, evidence: &str) -> Derivation {
    let v = r.verdict(Property::Sufficiency).unwrap();
    let c = v.checks.iter().find(|c| c.name.starts_with(evidence)).unwrap();
    assert_eq!(c.status, Status::Pass, "{}", c.detail);
    c.derivation.clone().unwrap()
}

/// `max(Ta, Tb)` with two distinct variables, each bounded by `Te` in the
/// emitted constraints.
fn assert_max_of_fresh_bounded(d: &Derivation, stamp: &Stamp) {
    let Stamp::At(TimeExpr::MaxOf(a, b)) = stamp else { panic!("not a max stamp: {stamp:?}") };
    let (TimeExpr::Var(a), TimeExpr::Var(b)) = (&**a, &**b) else { panic!("max of non-variables") };
    assert_ne!(a, b);
    let emitted = d.all_emitted();
    for v in [a, b] {
        assert!(emitted.contains(&Atom::Le(TimeExpr::var(v.clone()), TimeExpr::var("Te"))), "{v} <= Te missing");
    }
}

#[test]
fn fixture_is_valid() {
    let (spec, ev) = netbill();
    assert_eq!(validate(&spec), vec![]);
    assert_eq!((spec.steps.len(), spec.parties.len()), (8, 3));
    let names: BTreeSet<&str> = spec.assumptions.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, BTreeSet::from(["T1", "T2"]));
    let kcm = KeyTerm::shared("Kcm", p("C"), p("M"));
    let signed_key = Msg::sign(Msg::key(KeyTerm::session("k")), &p("N"));
    assert_eq!(ev.items[0].msg, Msg::pair(Msg::enc(goods_checksum(), kcm), signed_key));
}

#[test]
fn origin_evidence_proof() {
    let r = report();
    let d = sufficiency_proof(&r, "EOO");
    let Formula::CanProve(c, body) = &d.goal else { panic!("{:?}", d.goal) };
    let Formula::Sent(m, goods, stamp) = &**body else { panic!("{body:?}") };
    assert_eq!((c, m, goods), (&p("C"), &p("M"), &Msg::atom("Goods")));
    assert_max_of_fresh_bounded(&d, stamp);
    assert_eq!(rule_set(&d), vec!["A3", "A3s", "A4", "T1", "T2"]);
}

#[test]
fn receipt_evidence_proof() {
    let r = report();
    let d = sufficiency_proof(&r, "EOR");
    let Formula::CanProve(m, body) = &d.goal else { panic!("{:?}", d.goal) };
    let Formula::Possesses(c, goods, Some(stamp)) = &**body else { panic!("{body:?}") };
    assert_eq!((m, c, goods), (&p("M"), &p("C"), &Msg::atom("Goods")));
    assert_max_of_fresh_bounded(&d, stamp);
    assert_eq!(rule_set(&d), vec!["A3", "A6p", "T1", "T2"]);
}

#[test]
fn accountability_timeline() {
    let (spec, ev) = netbill();
    let full = run(&spec, &RunConfig::full(&spec)).unwrap();
    let at = |who: &str, t: &str| possession_at(&full.timeline, &p(who), t).unwrap();
    let kcm = KeyTerm::shared("Kcm", p("C"), p("M"));
    let checksum = Msg::enc(goods_checksum(), kcm);
    assert!(!can_derive(&at("C", "T3"), &checksum));
    assert!(can_derive(&at("C", "T4"), &checksum));
    let signed_key = Msg::sign(Msg::key(KeyTerm::session("k")), &p("N"));
    assert!(!can_derive(&at("M", "T6"), &signed_key));
    assert!(can_derive(&at("M", "T7"), &signed_key));
    let v = analysis::check_accountability(&spec, &ev, 12);
    assert_eq!(v.status, Status::Pass);
}

#[test]
fn fairness_counterexample() {
    let r = report();
    let v = r.verdict(Property::Fairness).unwrap();
    assert_eq!(v.status, Status::Fail);
    let w = v.witness.as_ref().unwrap();
    assert_eq!(w.config, Some(RunConfig::truncated(7, &["C"])));
    assert!(w.check());
    let m = w.model.as_ref().unwrap();
    assert!(&m["t5"] + &m["t6"] > m["tC"]);
    assert_eq!(m["tC"], rat(10));
}

#[test]
fn timeliness_categories() {
    let r = report();
    let v = r.verdict(Property::Timeliness).unwrap();
    let c = v.check("waiting condition of C").unwrap();
    assert!(c.detail.starts_with("contingent"), "{}", c.detail);
    assert!(c.witness.as_ref().unwrap().check());
    let m = v.check("waiting condition of M").unwrap();
    assert_eq!(m.status, Status::Pass);
    assert!(m.detail.starts_with("entailed"));
}

#[test]
fn fix_flips_timing() {
    let (spec, ev) = parse_str(&netbill_fixed()).unwrap();
    let r = analysis::analyze(&spec, &ev, &Options::default());
    let f = r.verdict(Property::Fairness).unwrap();
    assert_eq!(f.check("timing").unwrap().status, Status::Pass);
    assert_eq!(r.verdict(Property::Timeliness).unwrap().status, Status::Pass);
    // quitting before the merchant forwards the order is still one-sided
    assert_eq!(f.check("exchange").unwrap().status, Status::Fail);
    assert_eq!(f.witness.as_ref().unwrap().config, Some(RunConfig::truncated(7, &[])));
}

fn grid() -> GridSpec {
    GridSpec::new(rat(0), rat(12), rat(6))
}

#[test]
fn oracle_fairness_agrees() {
    let (spec, ev) = netbill();
    let found = bf_fairness(&spec, &ev, &grid());
    let configs: BTreeSet<RunConfig> = found.iter().map(|v| v.config.clone()).collect();
    assert!(configs.contains(&RunConfig::truncated(7, &["C"])));
    let states = exchange_states(&spec, &ev);
    let engine: BTreeSet<RunConfig> = states.iter().filter(|s| s.is_violation()).map(|s| s.config.clone()).collect();
    assert_eq!(configs, engine);
    for v in &found {
        let s = states.iter().find(|s| s.config == v.config).unwrap();
        assert!(s.system.satisfied_by(&v.model), "{}", v.config.label());
    }
}

#[test]
fn oracle_fixed_has_no_timing_violation() {
    let (spec, ev) = parse_str(&netbill_fixed()).unwrap();
    let found = bf_fairness(&spec, &ev, &grid());
    assert!(found.iter().all(|v| !v.timing_breach), "{found:?}");
    assert!(!found.is_empty());
}

#[test]
fn oracle_empty_protocol() {
    let (spec, ev) = parse_str("party A; party B; item x for A;").unwrap();
    assert!(bf_fairness(&spec, &ev, &grid()).is_empty());
}

#[test]
fn report_is_deterministic() {
    use paylogic_core::report::render_json;
    assert_eq!(render_json(&report()), render_json(&report()));
}
