//! Canonical JSON and plain-text renderings of an [`AnalysisReport`].
//!
//! JSON objects are key-sorted and rationals are strings, so equal reports
//! render to identical bytes. `from_json` reads the JSON form back.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::{json, Map, Value};

use crate::analysis::{AnalysisReport, Check, Property, Status, Verdict, Witness};
use crate::diag::Diagnostic;
use crate::logic::term::{term_to_time, time_to_term};
use crate::logic::{Derivation, Formula, Term};
use crate::message::PartyId;
use crate::protocol::RunConfig;
use crate::time::{fmt_rational, parse_rational, Atom, ConstraintSystem, Model, Rational};

pub const SCHEMA: &str = "paylogic-report/1";

type R<T> = Result<T, String>;

// ---- encoding ----

fn diag_json(d: &Diagnostic) -> Value {
    serde_json::to_value(d).expect("diagnostic serializes")
}

fn atom_json(a: &Atom) -> Value {
    let (rel, l, r) = match a {
        Atom::Le(l, r) => ("le", l, r),
        Atom::Lt(l, r) => ("lt", l, r),
        Atom::Eq(l, r) => ("eq", l, r),
    };
    json!({"rel": rel, "lhs": time_to_term(l).to_string(), "rhs": time_to_term(r).to_string(), "text": a.to_string()})
}

fn rationals_json(m: &BTreeMap<String, Rational>) -> Value {
    Value::Object(m.iter().map(|(k, v)| (k.clone(), Value::String(fmt_rational(v)))).collect())
}

fn system_json(s: &ConstraintSystem) -> Value {
    json!({"atoms": s.atoms.iter().map(atom_json).collect::<Vec<_>>(), "pins": rationals_json(&s.fixed)})
}

fn config_json(c: &RunConfig) -> Value {
    json!({
        "truncate_after": c.truncate_after,
        "timeout_fired": c.timeout_fired.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
        "delay_pins": rationals_json(&c.delay_pins),
    })
}

fn witness_json(w: &Witness) -> Value {
    json!({
        "config": w.config.as_ref().map(config_json),
        "model": w.model.as_ref().map(rationals_json),
        "violates": w.violates.iter().map(atom_json).collect::<Vec<_>>(),
        "system": w.system.as_ref().map(system_json),
    })
}

pub fn derivation_json(d: &Derivation) -> Value {
    json!({
        "goal": d.goal.symbolic(),
        "goal_term": d.goal.to_term().to_string(),
        "rule": d.rule,
        "bindings": Value::Object(d.bindings.iter().map(|(k, v)| (k.clone(), Value::String(v.to_string()))).collect()),
        "constraints": d.emitted.iter().map(atom_json).collect::<Vec<_>>(),
        "children": d.children.iter().map(derivation_json).collect::<Vec<_>>(),
    })
}

fn check_json(c: &Check) -> Value {
    json!({
        "name": c.name,
        "status": c.status.name(),
        "detail": c.detail,
        "derivation": c.derivation.as_ref().map(derivation_json),
        "constraints": c.constraints.iter().map(atom_json).collect::<Vec<_>>(),
        "witness": c.witness.as_ref().map(witness_json),
    })
}

fn verdict_json(v: &Verdict) -> Value {
    json!({
        "status": v.status.name(),
        "checks": v.checks.iter().map(check_json).collect::<Vec<_>>(),
        "witness": v.witness.as_ref().map(witness_json),
        "diagnostics": v.diagnostics.iter().map(diag_json).collect::<Vec<_>>(),
    })
}

/// Top-level sections: `meta`, `validation`, `initial_sets`, `assumptions`,
/// then one section per requested property.
pub fn to_json(r: &AnalysisReport) -> Value {
    let initial: Map<String, Value> = r
        .initial_sets
        .iter()
        .map(|(p, (knows, believes))| (p.0.clone(), json!({"knows": knows, "believes": believes})))
        .collect();
    let mut doc = Map::new();
    doc.insert("meta".into(), json!({"schema": SCHEMA, "exit_code": r.exit_code(), "notes": r.notes}));
    doc.insert("validation".into(), Value::Array(r.validation.iter().map(diag_json).collect()));
    doc.insert("initial_sets".into(), Value::Object(initial));
    doc.insert(
        "assumptions".into(),
        json!({
            "rules": r.assumptions,
            "diagnostics": r.assumption_diagnostics.iter().map(diag_json).collect::<Vec<_>>(),
        }),
    );
    for v in &r.verdicts {
        doc.insert(v.property.name().to_string(), verdict_json(v));
    }
    Value::Object(doc)
}

pub fn render_json(r: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(&to_json(r)).expect("report serializes");
    s.push('\n');
    s
}

// ---- decoding ----

fn field<'a>(v: &'a Value, k: &str) -> R<&'a Value> {
    v.get(k).ok_or_else(|| format!("missing field {k}"))
}

fn string(v: &Value, k: &str) -> R<String> {
    field(v, k)?.as_str().map(str::to_string).ok_or_else(|| format!("{k} is not a string"))
}

fn array<'a>(v: &'a Value, k: &str) -> R<&'a Vec<Value>> {
    field(v, k)?.as_array().ok_or_else(|| format!("{k} is not an array"))
}

fn optional<'a>(v: &'a Value, k: &str) -> R<Option<&'a Value>> {
    Ok(Some(field(v, k)?).filter(|x| !x.is_null()))
}

fn strings(v: &Value, k: &str) -> R<Vec<String>> {
    array(v, k)?.iter().map(|x| x.as_str().map(str::to_string).ok_or_else(|| format!("{k}: not a string"))).collect()
}

fn diag_from(v: &Value) -> R<Diagnostic> {
    let num = |k: &str| v.get(k).and_then(Value::as_u64).map(|n| n as usize);
    Ok(Diagnostic {
        code: string(v, "code")?,
        message: string(v, "message")?,
        step: num("step"),
        line: num("line"),
        col: num("col"),
    })
}

fn diags(v: &Value, k: &str) -> R<Vec<Diagnostic>> {
    array(v, k)?.iter().map(diag_from).collect()
}

fn time_from(s: &str) -> R<crate::time::TimeExpr> {
    term_to_time(&Term::parse(s)?)
}

fn atom_from(v: &Value) -> R<Atom> {
    let (l, r) = (time_from(&string(v, "lhs")?)?, time_from(&string(v, "rhs")?)?);
    match string(v, "rel")?.as_str() {
        "le" => Ok(Atom::Le(l, r)),
        "lt" => Ok(Atom::Lt(l, r)),
        "eq" => Ok(Atom::Eq(l, r)),
        other => Err(format!("unknown relation {other}")),
    }
}

fn atoms(v: &Value, k: &str) -> R<Vec<Atom>> {
    array(v, k)?.iter().map(atom_from).collect()
}

fn rationals_from(v: &Value) -> R<BTreeMap<String, Rational>> {
    let obj = v.as_object().ok_or("expected an object of rationals")?;
    obj.iter()
        .map(|(k, x)| {
            let q = x.as_str().and_then(parse_rational).ok_or_else(|| format!("{k}: bad rational"))?;
            Ok((k.clone(), q))
        })
        .collect()
}

fn config_from(v: &Value) -> R<RunConfig> {
    Ok(RunConfig {
        truncate_after: field(v, "truncate_after")?.as_u64().ok_or("truncate_after")? as usize,
        timeout_fired: strings(v, "timeout_fired")?.into_iter().map(PartyId).collect(),
        delay_pins: rationals_from(field(v, "delay_pins")?)?,
    })
}

fn witness_from(v: &Value) -> R<Witness> {
    let model: Option<Model> = optional(v, "model")?.map(rationals_from).transpose()?;
    let system = match optional(v, "system")? {
        Some(s) => Some(ConstraintSystem { atoms: atoms(s, "atoms")?, fixed: rationals_from(field(s, "pins")?)? }),
        None => None,
    };
    Ok(Witness {
        config: optional(v, "config")?.map(config_from).transpose()?,
        model,
        violates: atoms(v, "violates")?,
        system,
    })
}

pub fn derivation_from(v: &Value) -> R<Derivation> {
    let goal = Formula::from_term(&Term::parse(&string(v, "goal_term")?)?)?;
    let bindings = field(v, "bindings")?
        .as_object()
        .ok_or("bindings")?
        .iter()
        .map(|(k, x)| Ok((k.clone(), Term::parse(x.as_str().ok_or("binding")?)?)))
        .collect::<R<BTreeMap<String, Term>>>()?;
    Ok(Derivation {
        goal,
        rule: string(v, "rule")?,
        bindings,
        emitted: atoms(v, "constraints")?,
        children: array(v, "children")?.iter().map(derivation_from).collect::<R<_>>()?,
    })
}

fn status_from(v: &Value) -> R<Status> {
    let s = string(v, "status")?;
    Status::from_name(&s).ok_or_else(|| format!("unknown status {s}"))
}

fn check_from(v: &Value) -> R<Check> {
    Ok(Check {
        name: string(v, "name")?,
        status: status_from(v)?,
        detail: string(v, "detail")?,
        derivation: optional(v, "derivation")?.map(derivation_from).transpose()?,
        constraints: atoms(v, "constraints")?,
        witness: optional(v, "witness")?.map(witness_from).transpose()?,
    })
}

pub fn from_json(text: &str) -> R<AnalysisReport> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let meta = field(&v, "meta")?;
    if string(meta, "schema")? != SCHEMA {
        return Err("unknown schema".into());
    }
    let initial_sets = field(&v, "initial_sets")?
        .as_object()
        .ok_or("initial_sets")?
        .iter()
        .map(|(p, x)| Ok((PartyId(p.clone()), (strings(x, "knows")?, strings(x, "believes")?))))
        .collect::<R<_>>()?;
    let mut verdicts = Vec::new();
    for p in Property::ALL {
        if let Some(x) = v.get(p.name()) {
            verdicts.push(Verdict {
                property: p,
                status: status_from(x)?,
                checks: array(x, "checks")?.iter().map(check_from).collect::<R<_>>()?,
                witness: optional(x, "witness")?.map(witness_from).transpose()?,
                diagnostics: diags(x, "diagnostics")?,
            });
        }
    }
    let assumptions = field(&v, "assumptions")?;
    Ok(AnalysisReport {
        validation: diags(&v, "validation")?,
        initial_sets,
        assumptions: strings(assumptions, "rules")?,
        assumption_diagnostics: diags(assumptions, "diagnostics")?,
        verdicts,
        notes: strings(meta, "notes")?,
    })
}

// ---- text ----

fn model_text(m: &Model) -> String {
    m.iter().map(|(k, v)| format!("{k}={}", fmt_rational(v))).collect::<Vec<_>>().join(", ")
}

fn witness_text(out: &mut String, w: &Witness, indent: &str) {
    if let Some(c) = &w.config {
        let _ = writeln!(out, "{indent}witness: {}", c.label());
    }
    if let Some(m) = &w.model {
        let _ = writeln!(out, "{indent}  model: {}", model_text(m));
    }
    for a in &w.violates {
        let _ = writeln!(out, "{indent}  violates: {a}");
    }
}

pub fn render_text(r: &AnalysisReport) -> String {
    let mut out = String::new();
    if r.validation.is_empty() {
        out.push_str("validation: ok\n");
    } else {
        let _ = writeln!(out, "validation: {} problem(s)", r.validation.len());
        for d in &r.validation {
            let _ = writeln!(out, "  {d}");
        }
    }
    if !r.initial_sets.is_empty() {
        out.push_str("initial sets:\n");
        for (p, (knows, believes)) in &r.initial_sets {
            let _ = writeln!(out, "  {p} knows: {}", knows.join(", "));
            if !believes.is_empty() {
                let _ = writeln!(out, "  {p} believes: {}", believes.join(", "));
            }
        }
    }
    if !r.assumptions.is_empty() {
        out.push_str("assumptions:\n");
        for a in &r.assumptions {
            let _ = writeln!(out, "  {a}");
        }
    }
    for d in &r.assumption_diagnostics {
        let _ = writeln!(out, "  {d}");
    }
    for v in &r.verdicts {
        let _ = writeln!(out, "verdict {}: {}", v.property.name(), v.status.name());
        for d in &v.diagnostics {
            let _ = writeln!(out, "  {d}");
        }
        for c in &v.checks {
            let _ = writeln!(out, "  [{}] {}: {}", c.status.name(), c.name, c.detail);
            if let Some(d) = &c.derivation {
                for line in d.render().lines() {
                    let _ = writeln!(out, "      {line}");
                }
            }
            if let Some(w) = &c.witness {
                witness_text(&mut out, w, "    ");
            }
        }
        if let Some(w) = &v.witness {
            witness_text(&mut out, w, "  ");
        }
    }
    if !r.notes.is_empty() {
        out.push_str("notes:\n");
        for n in &r.notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    let _ = writeln!(out, "exit: {}", r.exit_code());
    out
}

/// Reads the `verdict <property>: <STATUS>` lines of a text report.
pub fn parse_text_verdicts(text: &str) -> BTreeMap<Property, Status> {
    text.lines()
        .filter_map(|l| l.strip_prefix("verdict "))
        .filter_map(|l| {
            let (p, s) = l.split_once(": ")?;
            Some((Property::from_name(p)?, Status::from_name(s.trim())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze, Options};
    use crate::dsl::parse_str;
    use crate::fixtures::NETBILL;

    fn netbill_report() -> AnalysisReport {
        let (spec, ev) = parse_str(NETBILL).unwrap();
        analyze(&spec, &ev, &Options::default())
    }

    #[test]
    fn json_round_trip_is_a_fixpoint() {
        let r = netbill_report();
        let first = render_json(&r);
        let back = from_json(&first).unwrap();
        assert_eq!(back, r);
        assert_eq!(render_json(&back), first);
    }

    #[test]
    fn text_verdicts_parse_back() {
        let r = netbill_report();
        let parsed = parse_text_verdicts(&render_text(&r));
        let expected: BTreeMap<Property, Status> = r.verdicts.iter().map(|v| (v.property, v.status)).collect();
        assert_eq!(parsed, expected);
        assert_eq!(parsed[&Property::Fairness], Status::Fail);
    }

    #[test]
    fn rationals_are_strings() {
        let r = netbill_report();
        let v = to_json(&r);
        let model = &v["fairness"]["witness"]["model"];
        assert!(model.as_object().unwrap().values().all(Value::is_string));
        assert_eq!(v["meta"]["schema"], SCHEMA);
        assert_eq!(v["fairness"]["status"], "FAIL");
    }

    #[test]
    fn empty_report_is_schema_valid() {
        let empty = AnalysisReport {
            validation: vec![],
            initial_sets: BTreeMap::new(),
            assumptions: vec![],
            assumption_diagnostics: vec![],
            verdicts: vec![],
            notes: vec![],
        };
        let text = render_json(&empty);
        assert_eq!(from_json(&text).unwrap(), empty);
    }

    #[test]
    fn rejects_foreign_schema() {
        assert!(from_json(r#"{"meta": {"schema": "other"}}"#).is_err());
        assert!(from_json("not json").is_err());
    }
}
