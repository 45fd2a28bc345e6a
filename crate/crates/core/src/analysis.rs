//! The five-stage procedure: initial sets, assumptions, evidence
//! sufficiency, accountability, and fairness/timeliness.

use std::collections::{BTreeMap, BTreeSet};

use crate::diag::Diagnostic;
use crate::dsl::print::pattern_text;
use crate::logic::{
    prove, register_assumption, Derivation, Formula, KnowledgeBase, ProveOutcome, Stamp, Term, DEFAULT_DEPTH,
};
use crate::message::{can_derive, Msg, PartyId};
use crate::protocol::{run, terminal_states, validate, ProtocolSpec, RunConfig, TimeoutDecl, TERMINAL};
use crate::time::{entails, is_satisfiable, refute, Atom, ConstraintSystem, Model};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceItem {
    pub name: String,
    pub holder: PartyId,
    pub msg: Msg,
}

/// `goal sufficiency EOO: ...`; the goal may leave time stamps open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SufficiencyGoal {
    pub evidence: String,
    pub goal: Term,
}

/// A term the exchange is about, e.g. the goods for the customer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangedItem {
    pub msg: Msg,
    pub party: PartyId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvidenceSpec {
    pub items: Vec<EvidenceItem>,
    pub goals: Vec<SufficiencyGoal>,
    pub exchanged: Vec<ExchangedItem>,
}

impl EvidenceSpec {
    pub fn item(&self, name: &str) -> Option<&EvidenceItem> {
        self.items.iter().find(|e| e.name == name)
    }

    /// Parties whose side of the exchange is checked for fairness.
    pub fn sides(&self) -> BTreeSet<PartyId> {
        self.items
            .iter()
            .map(|e| e.holder.clone())
            .chain(self.exchanged.iter().map(|x| x.party.clone()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    Sufficiency,
    Accountability,
    Fairness,
    Timeliness,
}

impl Property {
    pub const ALL: [Property; 4] =
        [Property::Sufficiency, Property::Accountability, Property::Fairness, Property::Timeliness];

    pub fn name(self) -> &'static str {
        match self {
            Property::Sufficiency => "sufficiency",
            Property::Accountability => "accountability",
            Property::Fairness => "fairness",
            Property::Timeliness => "timeliness",
        }
    }

    pub fn from_name(s: &str) -> Option<Property> {
        Property::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        }
    }

    pub fn from_name(s: &str) -> Option<Status> {
        [Status::Pass, Status::Fail, Status::Inconclusive].into_iter().find(|x| x.name() == s)
    }

    /// FAIL dominates INCONCLUSIVE, which dominates PASS.
    pub fn combine(items: impl IntoIterator<Item = Status>) -> Status {
        let all: Vec<Status> = items.into_iter().collect();
        if all.contains(&Status::Fail) {
            Status::Fail
        } else if all.contains(&Status::Inconclusive) {
            Status::Inconclusive
        } else {
            Status::Pass
        }
    }
}

/// A run end together with a concrete rational timing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Witness {
    pub config: Option<RunConfig>,
    pub model: Option<Model>,
    /// Conditions the model violates.
    pub violates: Vec<Atom>,
    /// The system the model satisfies.
    pub system: Option<ConstraintSystem>,
}

impl Witness {
    /// Substitution check: the model satisfies the system and breaks every
    /// listed condition.
    pub fn check(&self) -> bool {
        match (&self.model, &self.system) {
            (Some(m), Some(sys)) => {
                sys.satisfied_by(m) && self.violates.iter().all(|a| a.holds(m) == Some(false))
            }
            (None, None) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
    pub derivation: Option<Derivation>,
    pub constraints: Vec<Atom>,
    pub witness: Option<Witness>,
}

impl Check {
    fn new(name: impl Into<String>, status: Status, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            status,
            detail: detail.into(),
            derivation: None,
            constraints: vec![],
            witness: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub property: Property,
    pub status: Status,
    pub checks: Vec<Check>,
    pub witness: Option<Witness>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Verdict {
    fn from_checks(property: Property, checks: Vec<Check>, diagnostics: Vec<Diagnostic>) -> Self {
        let status = Status::combine(checks.iter().map(|c| c.status));
        Verdict { property, status, checks, witness: None, diagnostics }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Options {
    pub checks: Vec<Property>,
    pub depth: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options { checks: Property::ALL.to_vec(), depth: DEFAULT_DEPTH }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalysisReport {
    pub validation: Vec<Diagnostic>,
    /// Party → rendered `T0` set and beliefs.
    pub initial_sets: BTreeMap<PartyId, (Vec<String>, Vec<String>)>,
    pub assumptions: Vec<String>,
    pub assumption_diagnostics: Vec<Diagnostic>,
    pub verdicts: Vec<Verdict>,
    /// Modeling readings that apply to every report.
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn verdict(&self, p: Property) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.property == p)
    }

    /// 0 all PASS, 1 some FAIL, 2 invalid input, 3 some INCONCLUSIVE.
    pub fn exit_code(&self) -> i32 {
        if !self.validation.is_empty() || !self.assumption_diagnostics.is_empty() {
            return 2;
        }
        match Status::combine(self.verdicts.iter().map(|v| v.status)) {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 3,
        }
    }
}

pub const NOTES: [&str; 4] = [
    "fairness quantifies over every terminal state of the run",
    "an unconstrained scope [X] ranges over the whole time domain",
    "replay of old messages by dishonest parties is not modeled",
    "the no-secret-leak side condition of proves is approximated: evidence never requires exhibiting a private or session key",
];

fn pair_components(m: &Msg, out: &mut Vec<Msg>) {
    out.push(m.clone());
    if let Msg::Pair(a, b) = m {
        pair_components(a, out);
        pair_components(b, out);
    }
}

fn terminal_stamp() -> Stamp {
    Stamp::at_var(TERMINAL)
}

/// Beliefs, counterparts and assumptions of the protocol, without evidence.
pub fn base_kb(spec: &ProtocolSpec) -> (KnowledgeBase, Vec<Diagnostic>) {
    let mut kb = KnowledgeBase::new();
    for (p, fs) in &spec.beliefs {
        for f in fs {
            kb.add_fact(Formula::can_prove(p.clone(), f.clone()));
        }
    }
    for (a, b) in &spec.counterparts {
        kb.set_counterpart(a.clone(), b.clone());
    }
    let mut diags = Vec::new();
    for r in &spec.assumptions {
        match register_assumption(&kb, r.clone()) {
            Ok(next) => kb = next,
            Err(e) => diags.push(Diagnostic::new("E_UNBOUND_METAVAR", e.to_string())),
        }
    }
    (kb, diags)
}

/// Knowledge base in which `item`'s holder possesses the evidence (and each
/// of its pair components) at `Te`.
pub fn evidence_kb(spec: &ProtocolSpec, item: &EvidenceItem) -> KnowledgeBase {
    let (mut kb, _) = base_kb(spec);
    let mut parts = Vec::new();
    pair_components(&item.msg, &mut parts);
    for m in parts {
        kb.add_fact(Formula::Possesses(item.holder.clone(), m, Some(terminal_stamp())));
    }
    kb
}

fn prove_goals(
    spec: &ProtocolSpec,
    evidence: &EvidenceSpec,
    depth: usize,
    kb_for: &dyn Fn(&EvidenceItem) -> KnowledgeBase,
) -> (Vec<Check>, Vec<Diagnostic>) {
    let _ = spec;
    let mut checks = Vec::new();
    let mut diags = Vec::new();
    let mut sys = ConstraintSystem::new();
    for g in &evidence.goals {
        let name = format!("{}: {}", g.evidence, pattern_text(&g.goal));
        let Some(item) = evidence.item(&g.evidence) else {
            diags.push(Diagnostic::new("E_UNDECLARED", format!("no evidence named {}", g.evidence)));
            checks.push(Check::new(name, Status::Fail, "evidence not declared"));
            continue;
        };
        let kb = kb_for(item);
        match prove(&kb, &g.goal, &sys, depth) {
            ProveOutcome::Proved(d, extended) => {
                let detail = format!("{} via {}", d.goal.symbolic(), rule_set(&d).join(", "));
                let mut c = Check::new(name, Status::Pass, detail);
                c.constraints = d.all_emitted();
                c.derivation = Some(*d);
                sys = extended;
                checks.push(c);
            }
            ProveOutcome::Failed => checks.push(Check::new(name, Status::Fail, "no derivation exists within the search")),
            ProveOutcome::DepthExhausted => {
                diags.push(Diagnostic::new("E_DEPTH", format!("depth limit {depth} reached proving {}", g.evidence)));
                checks.push(Check::new(name, Status::Inconclusive, format!("depth limit {depth} reached")));
            }
        }
    }
    (checks, diags)
}

/// Distinct rule names used by a derivation, sorted.
pub fn rule_set(d: &Derivation) -> Vec<String> {
    let set: BTreeSet<String> = d.rule_names().into_iter().collect();
    set.into_iter().collect()
}

pub fn check_sufficiency(spec: &ProtocolSpec, evidence: &EvidenceSpec, depth: usize) -> Verdict {
    let (checks, diags) = prove_goals(spec, evidence, depth, &|item| evidence_kb(spec, item));
    Verdict::from_checks(Property::Sufficiency, checks, diags)
}

pub fn check_accountability(spec: &ProtocolSpec, evidence: &EvidenceSpec, depth: usize) -> Verdict {
    let full = match run(spec, &RunConfig::full(spec)) {
        Ok(r) => r,
        Err(d) => return Verdict::from_checks(Property::Accountability, vec![], vec![d]),
    };
    let mut checks = Vec::new();
    for item in &evidence.items {
        let final_set = full.timeline.terminal(&item.holder);
        let ok = can_derive(&final_set, &item.msg);
        let mut parts = Vec::new();
        pair_components(&item.msg, &mut parts);
        let mut notes = Vec::new();
        for part in parts.iter().skip(1) {
            let first = full.timeline.entries.get(&item.holder).and_then(|tl| {
                tl.iter().find(|(_, set)| can_derive(set, part)).map(|(t, _)| t.clone())
            });
            notes.push(match first {
                Some(t) => format!("{part} from {t}"),
                None => format!("{part} never"),
            });
        }
        let status = if ok { Status::Pass } else { Status::Fail };
        let verb = if ok { "derivable" } else { "not derivable" };
        checks.push(Check::new(
            format!("{} held by {}", item.name, item.holder),
            status,
            format!("{verb} from the final set; {}", notes.join("; ")),
        ));
    }
    if !evidence.items.is_empty() && checks.iter().all(|c| c.status == Status::Pass) {
        // re-prove the sufficiency goals from what the run actually delivered
        let seeded = |item: &EvidenceItem| {
            let (mut kb, _) = base_kb(spec);
            let final_set = full.timeline.terminal(&item.holder);
            let mut parts = Vec::new();
            pair_components(&item.msg, &mut parts);
            for m in parts.into_iter().filter(|m| can_derive(&final_set, m)) {
                kb.add_fact(Formula::Possesses(item.holder.clone(), m, Some(terminal_stamp())));
            }
            kb
        };
        let (goal_checks, _) = prove_goals(spec, evidence, depth, &seeded);
        let status = Status::combine(goal_checks.iter().map(|c| c.status));
        let proved = goal_checks.iter().filter(|c| c.status == Status::Pass).count();
        checks.push(Check::new(
            "end-to-end",
            status,
            format!("{proved} of {} sufficiency goals provable from the final sets", goal_checks.len()),
        ));
    }
    Verdict::from_checks(Property::Accountability, checks, vec![])
}

/// Outcome of one terminal state in the exchange check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateOutcome {
    pub config: RunConfig,
    pub feasible: bool,
    pub model: Option<Model>,
    pub system: ConstraintSystem,
    pub violated: Vec<Atom>,
    pub sides: BTreeMap<PartyId, bool>,
}

impl StateOutcome {
    pub fn is_violation(&self) -> bool {
        self.feasible && {
            let mut vals = self.sides.values();
            match vals.next() {
                Some(first) => vals.any(|v| v != first),
                None => false,
            }
        }
    }
}

/// Which side of the exchange `p` ends up with: all of its evidence and
/// declared items derivable from its terminal set.
fn side_satisfied(evidence: &EvidenceSpec, p: &PartyId, set: &BTreeSet<Msg>) -> bool {
    evidence.items.iter().filter(|e| &e.holder == p).all(|e| can_derive(set, &e.msg))
        && evidence.exchanged.iter().filter(|x| &x.party == p).all(|x| can_derive(set, &x.msg))
}

fn fired_timeouts<'a>(spec: &'a ProtocolSpec, config: &RunConfig) -> Vec<&'a TimeoutDecl> {
    config.timeout_fired.iter().filter_map(|p| spec.timeouts.get(p)).collect()
}

/// Evaluates every terminal state: whether some timing makes it reachable
/// (each fired timeout saw its reply late or not at all) and which sides of
/// the exchange are satisfied there.
pub fn exchange_states(spec: &ProtocolSpec, evidence: &EvidenceSpec) -> Vec<StateOutcome> {
    let parties = evidence.sides();
    let mut out = Vec::new();
    for config in terminal_states(spec) {
        let Ok(r) = run(spec, &config) else { continue };
        let mut sys = r.system.clone();
        let mut violated = Vec::new();
        for t in fired_timeouts(spec, &config) {
            if t.expecting <= config.truncate_after {
                let [_, upper] = spec.waiting_condition(t);
                sys.extend(upper.negation());
                violated.push(upper);
            }
        }
        let (feasible, model) = is_satisfiable(&sys);
        let sides = parties
            .iter()
            .map(|p| (p.clone(), side_satisfied(evidence, p, &r.timeline.terminal(p))))
            .collect();
        out.push(StateOutcome { config, feasible, model, system: sys, violated, sides });
    }
    out
}

/// One timing condition and how the full-run system relates to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionOutcome {
    pub party: PartyId,
    pub atoms: [Atom; 2],
    pub category: &'static str,
    pub satisfying: Option<Model>,
    pub refuting: Option<(Model, Atom)>,
}

pub fn timing_conditions(spec: &ProtocolSpec) -> Result<(ConstraintSystem, Vec<ConditionOutcome>), Diagnostic> {
    let full = run(spec, &RunConfig::full(spec))?;
    let sys = full.system;
    let mut out = Vec::new();
    for t in spec.timeouts.values() {
        let atoms = spec.waiting_condition(t);
        let refuting = atoms.iter().find_map(|a| refute(&sys, a).map(|m| (m, a.clone())));
        let mut both = sys.clone();
        both.extend(atoms.iter().cloned());
        let (sat, satisfying) = is_satisfiable(&both);
        let entailed = atoms.iter().all(|a| entails(&sys, a));
        let category = if entailed {
            "entailed"
        } else if !sat {
            "refutable"
        } else {
            "contingent"
        };
        out.push(ConditionOutcome { party: t.party.clone(), atoms, category, satisfying, refuting });
    }
    Ok((sys, out))
}

fn condition_text(atoms: &[Atom; 2]) -> String {
    format!("{} and {}", atoms[0], atoms[1])
}

pub fn check_timeliness(spec: &ProtocolSpec) -> Verdict {
    let (sys, conds) = match timing_conditions(spec) {
        Ok(x) => x,
        Err(d) => return Verdict::from_checks(Property::Timeliness, vec![], vec![d]),
    };
    let checks = conds
        .into_iter()
        .map(|c| {
            let status = if c.category == "entailed" { Status::Pass } else { Status::Fail };
            let mut check = Check::new(
                format!("waiting condition of {}", c.party),
                status,
                format!("{}: {}", c.category, condition_text(&c.atoms)),
            );
            check.constraints = c.atoms.to_vec();
            check.witness = c.refuting.map(|(m, a)| Witness {
                config: Some(RunConfig::full(spec)),
                model: Some(m),
                violates: vec![a],
                system: Some(sys.clone()),
            });
            check
        })
        .collect::<Vec<Check>>();
    let mut v = Verdict::from_checks(Property::Timeliness, checks, vec![]);
    if v.status == Status::Fail {
        v.witness = v.checks.iter().find_map(|c| c.witness.clone());
    }
    v
}

pub fn check_fairness(spec: &ProtocolSpec, evidence: &EvidenceSpec) -> Verdict {
    let sides = evidence.sides();
    if sides.is_empty() {
        return Verdict::from_checks(
            Property::Fairness,
            vec![Check::new("exchange", Status::Pass, "no evidence or items to exchange")],
            vec![],
        );
    }
    let untimed: Vec<&PartyId> = sides.iter().filter(|p| !spec.timeouts.contains_key(*p) && !spec.is_ttp(p)).collect();
    if spec.timeouts.is_empty() || !untimed.is_empty() {
        let names: Vec<String> = untimed.iter().map(ToString::to_string).collect();
        let d = Diagnostic::new("E_NO_TIMEOUTS", format!("no waiting time declared for {}", names.join(", ")));
        let mut v = Verdict::from_checks(
            Property::Fairness,
            vec![Check::new("exchange", Status::Inconclusive, "waiting times are undeclared")],
            vec![d],
        );
        v.status = Status::Inconclusive;
        return v;
    }

    let states = exchange_states(spec, evidence);
    let mut violations: Vec<&StateOutcome> = states.iter().filter(|s| s.is_violation()).collect();
    violations.sort_by_key(|s| (s.config.timeout_fired.is_empty(), s.config.truncate_after, s.config.timeout_fired.clone()));
    let feasible = states.iter().filter(|s| s.feasible).count();

    let mut exchange = match violations.first() {
        None => Check::new(
            "exchange",
            Status::Pass,
            format!("all {feasible} reachable terminal states agree on both sides"),
        ),
        Some(w) => {
            let sides: Vec<String> = w.sides.iter().map(|(p, ok)| format!("{p}={}", if *ok { "yes" } else { "no" })).collect();
            Check::new(
                "exchange",
                Status::Fail,
                format!(
                    "{} of {feasible} reachable terminal states are one-sided; first: {} with {}",
                    violations.len(),
                    w.config.label(),
                    sides.join(" ")
                ),
            )
        }
    };
    exchange.witness = violations.first().map(|w| Witness {
        config: Some(w.config.clone()),
        model: w.model.clone(),
        violates: w.violated.clone(),
        system: Some(w.system.clone()),
    });

    let timing_verdict = check_timeliness(spec);
    let failing: Vec<&Check> = timing_verdict.checks.iter().filter(|c| c.status != Status::Pass).collect();
    let mut timing = Check::new(
        "timing",
        timing_verdict.status,
        if failing.is_empty() {
            "every waiting condition is entailed".to_string()
        } else {
            let names: Vec<String> = failing.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
            format!("not entailed: {}", names.join("; "))
        },
    );
    timing.witness = failing.first().and_then(|c| c.witness.clone());

    let witness = exchange
        .witness
        .clone()
        .filter(|w| !w.violates.is_empty())
        .or_else(|| timing.witness.clone())
        .or_else(|| exchange.witness.clone());
    let mut v = Verdict::from_checks(Property::Fairness, vec![exchange, timing], timing_verdict.diagnostics);
    if v.status == Status::Fail {
        v.witness = witness;
    }
    v
}

/// Runs every requested stage. Invalid input yields a report that carries
/// only diagnostics.
pub fn analyze(spec: &ProtocolSpec, evidence: &EvidenceSpec, options: &Options) -> AnalysisReport {
    let validation = validate(spec);
    let mut report = AnalysisReport {
        validation,
        initial_sets: BTreeMap::new(),
        assumptions: vec![],
        assumption_diagnostics: vec![],
        verdicts: vec![],
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    };
    if spec.parties.is_empty() {
        report.validation.push(Diagnostic::new("E_EMPTY_SPEC", "no parties declared"));
    }
    if !report.validation.is_empty() {
        return report;
    }
    for p in &spec.parties {
        let mut set: Vec<String> = spec.knowledge(&p.id).iter().map(ToString::to_string).collect();
        set.sort();
        let beliefs = spec.beliefs.get(&p.id).map(|fs| fs.iter().map(ToString::to_string).collect()).unwrap_or_default();
        report.initial_sets.insert(p.id.clone(), (set, beliefs));
    }
    report.assumptions = spec.assumptions.iter().map(ToString::to_string).collect();
    report.assumption_diagnostics = base_kb(spec).1;
    if !report.assumption_diagnostics.is_empty() {
        return report;
    }
    for p in Property::ALL {
        if !options.checks.contains(&p) {
            continue;
        }
        report.verdicts.push(match p {
            Property::Sufficiency => check_sufficiency(spec, evidence, options.depth),
            Property::Accountability => check_accountability(spec, evidence, options.depth),
            Property::Fairness => check_fairness(spec, evidence),
            Property::Timeliness => check_timeliness(spec),
        });
    }
    report
}
