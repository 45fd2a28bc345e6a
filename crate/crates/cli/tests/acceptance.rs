//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use paylogic_core::analysis::{self, evidence_kb, rule_set, Status};
use paylogic_core::fixtures::{netbill_fixed, NETBILL};
use paylogic_core::logic::{replay, Derivation, Formula, KnowledgeBase, Stamp};
use paylogic_core::message::{analyze_closure, can_derive, KeyTerm, Msg, PartyId};
use paylogic_core::oracle::{self, bf_closure, bf_entails, bf_sat, GridSpec, MUTATION_KINDS};
use paylogic_core::protocol::{possession_at, run, terminal_states, RunConfig};
use paylogic_core::time::{entails, is_satisfiable, rat, ratio, Atom, TimeExpr};
use paylogic_core::{parse_str, EvidenceSpec, ProtocolSpec};

/// Wall-clock bound for the accountability check.
const ACCOUNTABILITY_BUDGET: Duration = Duration::from_secs(1);
const SYSTEMS: u64 = 500;
const MESSAGE_SETS: u64 = 200;
const MUTANTS: usize = 100;
const PROTOCOLS: u64 = 200;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn p(s: &str) -> PartyId {
    PartyId::new(s)
}

fn netbill() -> (ProtocolSpec, EvidenceSpec) {
    parse_str(NETBILL).expect("fixture parses")
}

fn binary(args: &[&str]) -> std::process::Output {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/netbill.ppl");
    let mut all = vec!["analyze", path.to_str().unwrap()];
    all.extend_from_slice(args);
    Command::new(env!("CARGO_BIN_EXE_paylogic")).args(&all).output().expect("binary runs")
}

fn accountability() -> Outcome {
    let started = Instant::now();
    let out = binary(&["--check", "accountability"]);
    ensure(out.status.code() == Some(0), format!("exit {:?}", out.status.code()))?;
    let (spec, ev) = netbill();
    let v = analysis::check_accountability(&spec, &ev, 12);
    let elapsed = started.elapsed();
    ensure(v.status == Status::Pass, "in-process verdict is not PASS")?;
    ensure(elapsed < ACCOUNTABILITY_BUDGET, format!("took {elapsed:?}"))?;

    let full = run(&spec, &RunConfig::full(&spec)).map_err(|d| d.to_string())?;
    let at = |who: &str, t: &str| possession_at(&full.timeline, &p(who), t).unwrap();
    let checksum = Msg::enc(
        Msg::hash(Msg::enc(Msg::atom("Goods"), KeyTerm::session("k"))),
        KeyTerm::shared("Kcm", p("C"), p("M")),
    );
    let signed_key = Msg::sign(Msg::key(KeyTerm::session("k")), &p("N"));
    ensure(!can_derive(&at("C", "T3"), &checksum) && can_derive(&at("C", "T4"), &checksum), "checksum not first held at T4")?;
    ensure(!can_derive(&at("M", "T6"), &signed_key) && can_derive(&at("M", "T7"), &signed_key), "signed key not first held at T7")?;
    Ok(format!("exit 0; checksum from T4, signed key from T7; {elapsed:?}"))
}

fn max_stamp(d: &Derivation, stamp: &Stamp) -> Result<(String, String), String> {
    let Stamp::At(TimeExpr::MaxOf(a, b)) = stamp else { return Err(format!("stamp {stamp} is not a max")) };
    let (TimeExpr::Var(a), TimeExpr::Var(b)) = (&**a, &**b) else { return Err("max of non-variables".into()) };
    let emitted = d.all_emitted();
    for v in [a, b] {
        ensure(emitted.contains(&Atom::Le(TimeExpr::var(v.clone()), TimeExpr::var("Te"))), format!("{v} <= Te missing"))?;
    }
    ensure(a != b, "max of one variable")?;
    Ok((a.clone(), b.clone()))
}

fn sufficiency() -> Outcome {
    let (spec, ev) = netbill();
    let v = analysis::check_sufficiency(&spec, &ev, 12);
    let proof = |name: &str| {
        v.checks.iter().find(|c| c.name.starts_with(name)).and_then(|c| c.derivation.clone()).ok_or(format!("no {name} proof"))
    };
    let eoo = proof("EOO")?;
    let Formula::CanProve(c, body) = &eoo.goal else { return Err("EOO goal shape".into()) };
    let Formula::Sent(m, goods, stamp) = &**body else { return Err("EOO body shape".into()) };
    ensure((c, m, goods) == (&p("C"), &p("M"), &Msg::atom("Goods")), "EOO goal")?;
    let (a, b) = max_stamp(&eoo, stamp)?;
    let eoo_rules = rule_set(&eoo);
    let allowed: BTreeSet<&str> = ["A3", "A3s", "T1", "T2", "A4"].into();
    ensure(eoo_rules.iter().all(|r| allowed.contains(r.as_str())), format!("EOO rules {eoo_rules:?}"))?;
    ensure(["T1", "T2", "A4"].iter().all(|r| eoo_rules.iter().any(|x| x == r)), format!("EOO rules {eoo_rules:?}"))?;
    ensure(eoo_rules.iter().any(|r| r == "A3" || r == "A3s"), "EOO has no origin rule")?;

    let eor = proof("EOR")?;
    let Formula::CanProve(m2, body) = &eor.goal else { return Err("EOR goal shape".into()) };
    let Formula::Possesses(c2, goods2, Some(stamp2)) = &**body else { return Err("EOR body shape".into()) };
    ensure((m2, c2, goods2) == (&p("M"), &p("C"), &Msg::atom("Goods")), "EOR goal")?;
    let (g, d) = max_stamp(&eor, stamp2)?;
    let eor_rules = rule_set(&eor);
    ensure(eor_rules == ["A3", "A6p", "T1", "T2"], format!("EOR rules {eor_rules:?}"))?;
    Ok(format!("EOO max({a}, {b}) via {eoo_rules:?}; EOR max({g}, {d}) via {eor_rules:?}"))
}

fn fairness() -> Outcome {
    let (spec, ev) = netbill();
    let v = analysis::check_fairness(&spec, &ev);
    ensure(v.status == Status::Fail, "fairness is not FAIL")?;
    let timing = v.check("timing").ok_or("no timing check")?;
    ensure(timing.status == Status::Fail, "condition for C is entailed")?;
    let w = v.witness.as_ref().ok_or("no witness")?;
    ensure(w.config == Some(RunConfig::truncated(7, &["C"])), format!("witness end {:?}", w.config))?;
    ensure(w.check(), "witness fails substitution")?;
    let m = w.model.as_ref().ok_or("no model")?;
    let (t5, t6, tc) = (&m["t5"], &m["t6"], &m["tC"]);
    ensure(t5 + t6 > *tc, "t5 + t6 <= tC in witness")?;
    Ok(format!("witness truncate_after=7 timeout_fired={{C}}, t5 + t6 = {} > tC = {tc}", t5 + t6))
}

fn fix() -> Outcome {
    let (spec, ev) = netbill();
    let before = analysis::check_fairness(&spec, &ev);
    let (fixed, ev2) = parse_str(&netbill_fixed()).map_err(|e| format!("{e:?}"))?;
    let after = analysis::check_fairness(&fixed, &ev2);
    let status = |v: &paylogic_core::Verdict| v.check("timing").map(|c| c.status);
    ensure(status(&before) == Some(Status::Fail), "timing not FAIL before the fix")?;
    ensure(status(&after) == Some(Status::Pass), "timing not PASS after the fix")?;
    Ok("timing check FAIL -> PASS".into())
}

fn agreement() -> Outcome {
    let grid = GridSpec::new(rat(0), rat(4), ratio(1, 2));
    let mut disagreements = 0;
    for seed in 0..SYSTEMS {
        let mut r = oracle::rng(seed);
        let (sys, names) = oracle::gen_system(&mut r, 5);
        let (sat, model) = is_satisfiable(&sys);
        if sat != bf_sat(&sys, &grid).is_some() || model.as_ref().is_some_and(|m| !sys.satisfied_by(m)) {
            disagreements += 1;
            continue;
        }
        let flagged: Vec<(String, bool)> = names.iter().map(|n| (n.clone(), n.starts_with('d'))).collect();
        if let Some(a) = (0..8).find_map(|_| oracle::gen_atom(&mut r, &flagged)) {
            if entails(&sys, &a) != bf_entails(&sys, &a, &grid) {
                disagreements += 1;
            }
        }
    }
    let mut closure_disagreements = 0;
    for seed in 0..MESSAGE_SETS {
        let s = oracle::gen_msg_set(&mut oracle::rng(seed), 6, 4);
        if analyze_closure(&s) != bf_closure(&s, 64) {
            closure_disagreements += 1;
        }
    }
    ensure(disagreements == 0 && closure_disagreements == 0, format!("{disagreements} solver, {closure_disagreements} closure disagreements"))?;
    Ok(format!("{SYSTEMS} systems, {MESSAGE_SETS} sets, 0 disagreements"))
}

fn proofs(spec: &ProtocolSpec, ev: &EvidenceSpec) -> Vec<(Derivation, KnowledgeBase)> {
    let v = analysis::check_sufficiency(spec, ev, 12);
    ev.goals
        .iter()
        .zip(&v.checks)
        .filter_map(|(g, c)| Some((c.derivation.clone()?, evidence_kb(spec, ev.item(&g.evidence)?))))
        .collect()
}

fn soundness() -> Outcome {
    let mut pool = Vec::new();
    for text in [NETBILL.to_string(), netbill_fixed()] {
        let (spec, ev) = parse_str(&text).map_err(|e| format!("{e:?}"))?;
        pool.extend(proofs(&spec, &ev));
    }
    let mut r = oracle::rng(1);
    for _ in 0..100 {
        let (spec, ev) = oracle::gen_protocol(&mut r, 6, 4);
        pool.extend(proofs(&spec, &ev));
    }
    let replayed = pool.iter().filter(|(d, kb)| replay(d, kb)).count();
    ensure(replayed == pool.len(), format!("{replayed} of {} derivations replay", pool.len()))?;

    let fixtures = pool.iter().filter(|(d, _)| d.size() > 3).cloned().collect::<Vec<_>>();
    let mut rng = oracle::rng(7);
    let (mut made, mut caught, mut i) = (0, 0, 0);
    while made < MUTANTS && i < MUTANTS * 10 {
        let (d, kb) = &fixtures[i % fixtures.len()];
        let kind = MUTATION_KINDS[i % MUTATION_KINDS.len()];
        i += 1;
        if let Some(m) = oracle::mutate(d, kind, &mut rng) {
            made += 1;
            if !replay(&m, kb) {
                caught += 1;
            }
        }
    }
    ensure(made == MUTANTS && caught == made, format!("{caught} of {made} mutants rejected"))?;
    Ok(format!("{} derivations replay; {caught}/{made} mutants rejected", pool.len()))
}

fn semantics() -> Outcome {
    let mut r = oracle::rng(3);
    for i in 0..PROTOCOLS {
        let (spec, _) = oracle::gen_protocol(&mut r, 6, 4);
        let full = run(&spec, &RunConfig::full(&spec)).map_err(|d| format!("protocol {i}: {d}"))?;
        for (party, entries) in &full.timeline.entries {
            for w in entries.windows(2) {
                ensure(w[0].1.is_subset(&w[1].1), format!("protocol {i}: {party} shrank"))?;
            }
            for (j, e) in full.trace.entries.iter().enumerate() {
                if &e.to == party && !e.received_new && &e.from != party {
                    ensure(entries[j].1 == entries[j + 1].1, format!("protocol {i}: repeated receipt changed {party}"))?;
                }
            }
            for (step, fresh) in &spec.fresh {
                for (_, set) in entries.iter().take(*step) {
                    ensure(fresh.is_disjoint(set), format!("protocol {i}: fresh item of step {step} held early"))?;
                }
            }
        }
        for config in terminal_states(&spec) {
            let res = run(&spec, &config).map_err(|d| d.to_string())?;
            for party in &spec.parties {
                let end = res.timeline.terminal(&party.id);
                let init = spec.knowledge(&party.id);
                ensure(init.is_subset(&end), format!("protocol {i}: initial knowledge lost"))?;
                if config.timeout_fired.contains(&party.id) {
                    ensure(end == init, format!("protocol {i}: timeout kept run records"))?;
                }
            }
        }
    }
    Ok(format!("{PROTOCOLS} protocols"))
}

fn determinism() -> Outcome {
    let a = binary(&["--format", "json"]);
    let b = binary(&["--format", "json"]);
    ensure(!a.stdout.is_empty(), "empty report")?;
    ensure(a.stdout == b.stdout, "reports differ")?;
    Ok(format!("{} identical bytes", a.stdout.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 netbill accountability", accountability),
        ("2 netbill evidence sufficiency", sufficiency),
        ("3 netbill fairness counterexample", fairness),
        ("4 timing fix verification", fix),
        ("5 solver and closure oracle agreement", agreement),
        ("6 derivation soundness", soundness),
        ("7 run semantics invariants", semantics),
        ("8 report determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
