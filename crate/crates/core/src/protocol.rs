//! Protocol descriptions and their possession-set run semantics.

use std::collections::{BTreeMap, BTreeSet};

use crate::diag::Diagnostic;
use crate::logic::{Formula, Rule};
use crate::message::{analyze_closure, can_synthesize, KeyTerm, Msg, Party, PartyId};
use crate::time::{Atom, ConstraintSystem, DelaySym, DelayTerm, Rational, TimeExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelKind {
    Unreliable,
    Recoverable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub index: usize,
    pub from: PartyId,
    pub to: PartyId,
    pub msg: Msg,
    pub at: String,
}

/// `party` waits `waiting` after sending step `after_step` for step
/// `expecting`, then aborts and clears its run records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeoutDecl {
    pub party: PartyId,
    pub waiting: DelaySym,
    pub after_step: usize,
    pub expecting: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub parties: Vec<Party>,
    /// Key names as declared, in declaration order.
    pub keys: Vec<(String, KeyTerm)>,
    pub steps: Vec<Step>,
    pub initial_knowledge: BTreeMap<PartyId, BTreeSet<Msg>>,
    /// Statements each party can prove from the start (key bindings).
    pub beliefs: BTreeMap<PartyId, Vec<Formula>>,
    /// Messages generated by the sender of a step.
    pub fresh: BTreeMap<usize, BTreeSet<Msg>>,
    pub timeouts: BTreeMap<PartyId, TimeoutDecl>,
    pub channels: BTreeMap<(PartyId, PartyId), ChannelKind>,
    pub counterparts: Vec<(PartyId, PartyId)>,
    pub assumptions: Vec<Rule>,
    /// Extra timing constraints supplied by the designer.
    pub constraints: Vec<Atom>,
    pub pins: BTreeMap<String, Rational>,
}

/// Delay symbol between step `i` and step `i + 1`.
pub fn step_delay(i: usize) -> DelaySym {
    DelaySym::step(format!("t{i}"))
}

fn channel_key(a: &PartyId, b: &PartyId) -> (PartyId, PartyId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl ProtocolSpec {
    pub fn party(&self, id: &PartyId) -> Option<&Party> {
        self.parties.iter().find(|p| &p.id == id)
    }

    pub fn is_ttp(&self, id: &PartyId) -> bool {
        self.party(id).is_some_and(|p| p.is_ttp)
    }

    /// Declared channel kind, defaulting to recoverable for TTP links and
    /// unreliable otherwise.
    pub fn channel(&self, a: &PartyId, b: &PartyId) -> ChannelKind {
        match self.channels.get(&channel_key(a, b)) {
            Some(k) => *k,
            None if self.is_ttp(a) || self.is_ttp(b) => ChannelKind::Recoverable,
            None => ChannelKind::Unreliable,
        }
    }

    pub fn set_channel(&mut self, a: &PartyId, b: &PartyId, kind: ChannelKind) {
        self.channels.insert(channel_key(a, b), kind);
    }

    pub fn step(&self, index: usize) -> Option<&Step> {
        index.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn step_time(&self, index: usize) -> TimeExpr {
        match self.step(index) {
            Some(s) => TimeExpr::var(s.at.clone()),
            None => TimeExpr::var(format!("T{index}")),
        }
    }

    pub fn knowledge(&self, p: &PartyId) -> BTreeSet<Msg> {
        self.initial_knowledge.get(p).cloned().unwrap_or_default()
    }

    /// Whether the step after `index` is a TTP reply that must complete
    /// once `index` has happened.
    pub fn completes_after(&self, index: usize) -> bool {
        match self.step(index + 1) {
            Some(next) => self.is_ttp(&next.from) && self.channel(&next.from, &next.to) == ChannelKind::Recoverable,
            None => false,
        }
    }

    /// Timeout whose reply comes from a TTP over a recoverable channel.
    fn ttp_round_trip(&self, t: &TimeoutDecl) -> bool {
        match (self.step(t.after_step), self.step(t.expecting)) {
            (Some(send), Some(reply)) => {
                self.is_ttp(&send.to)
                    && self.is_ttp(&reply.from)
                    && self.channel(&reply.from, &reply.to) == ChannelKind::Recoverable
            }
            _ => false,
        }
    }

    /// `T_send <= T_reply <= T_send + wait` for a timeout declaration.
    pub fn waiting_condition(&self, t: &TimeoutDecl) -> [Atom; 2] {
        let send = self.step_time(t.after_step);
        let reply = self.step_time(t.expecting);
        [
            Atom::Le(send.clone(), reply.clone()),
            Atom::Le(reply, send.plus(vec![DelayTerm::Sym(t.waiting.clone())])),
        ]
    }

    /// Declared pins plus designer constraints, without any step atoms.
    pub fn base_system(&self) -> ConstraintSystem {
        let mut sys = ConstraintSystem::from_atoms(self.constraints.iter().cloned());
        for (d, v) in &self.pins {
            sys.pin(d.clone(), v.clone());
        }
        sys
    }
}

fn undeclared(spec: &ProtocolSpec, p: &PartyId, what: &str, out: &mut Vec<Diagnostic>, step: Option<usize>) {
    if spec.party(p).is_none() {
        let mut d = Diagnostic::new("E_UNDECLARED", format!("party {p} in {what} is not declared"));
        d.step = step;
        out.push(d);
    }
}

fn key_parties(k: &KeyTerm) -> Vec<&PartyId> {
    match k {
        KeyTerm::Public(p) | KeyTerm::Private(p) => vec![p],
        KeyTerm::Shared { endpoints, .. } => vec![&endpoints.0, &endpoints.1],
        KeyTerm::Session(_) => vec![],
    }
}

fn msg_parties(m: &Msg, out: &mut Vec<PartyId>) {
    match m {
        Msg::Atom(_) => {}
        Msg::Pair(a, b) => {
            msg_parties(a, out);
            msg_parties(b, out);
        }
        Msg::Enc(b, k) => {
            msg_parties(b, out);
            out.extend(key_parties(k).into_iter().cloned());
        }
        Msg::Hash(b) => msg_parties(b, out),
        Msg::Key(k) => out.extend(key_parties(k).into_iter().cloned()),
    }
}

/// Referential, channel, freshness and derivability checks. An empty result
/// means the protocol can be executed as written.
pub fn validate(spec: &ProtocolSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut names = BTreeSet::new();
    for p in &spec.parties {
        if !names.insert(&p.id) {
            out.push(Diagnostic::new("E_DUPLICATE", format!("party {} declared twice", p.id)));
        }
    }
    for (name, k) in &spec.keys {
        for p in key_parties(k) {
            undeclared(spec, p, &format!("key {name}"), &mut out, None);
        }
    }
    for p in spec.initial_knowledge.keys().chain(spec.beliefs.keys()) {
        undeclared(spec, p, "initial sets", &mut out, None);
    }
    for (a, b) in &spec.counterparts {
        undeclared(spec, a, "counterpart declaration", &mut out, None);
        undeclared(spec, b, "counterpart declaration", &mut out, None);
    }
    for ((a, b), kind) in &spec.channels {
        undeclared(spec, a, "channel declaration", &mut out, None);
        undeclared(spec, b, "channel declaration", &mut out, None);
        if *kind == ChannelKind::Unreliable && (spec.is_ttp(a) || spec.is_ttp(b)) {
            out.push(Diagnostic::new("E_CHANNEL", format!("channel {a}-{b} touches a TTP and must be recoverable")));
        }
    }

    let n = spec.steps.len();
    let mut times = BTreeSet::new();
    for (i, s) in spec.steps.iter().enumerate() {
        let idx = i + 1;
        if s.index != idx {
            out.push(Diagnostic::at_step("E_STEP_ORDER", idx, format!("step numbered {} out of sequence", s.index)));
        }
        undeclared(spec, &s.from, "step sender", &mut out, Some(idx));
        undeclared(spec, &s.to, "step receiver", &mut out, Some(idx));
        if s.from == s.to {
            out.push(Diagnostic::at_step("E_SELF_SEND", idx, format!("{} sends to itself", s.from)));
        }
        let mut ps = Vec::new();
        msg_parties(&s.msg, &mut ps);
        for p in ps {
            undeclared(spec, &p, "message key", &mut out, Some(idx));
        }
        if s.at == "T0" || s.at == "Te" || !times.insert(s.at.clone()) {
            out.push(Diagnostic::at_step("E_TIME_REUSE", idx, format!("time variable {} already used", s.at)));
        }
    }
    for idx in spec.fresh.keys() {
        if *idx == 0 || *idx > n {
            out.push(Diagnostic::at_step("E_FRESH_STEP", *idx, "fresh declaration names a step that does not exist"));
        }
    }
    for t in spec.timeouts.values() {
        undeclared(spec, &t.party, "timeout", &mut out, None);
        if t.after_step == 0 || t.after_step > n || t.expecting > n || t.expecting <= t.after_step {
            out.push(Diagnostic::new(
                "E_TIMEOUT",
                format!("timeout of {} must wait after an existing step for a later one", t.party),
            ));
        }
    }
    if !out.is_empty() {
        return out;
    }

    // execute the full run and check freshness and derivability on the way
    let public: BTreeSet<Msg> = spec.parties.iter().map(|p| Msg::atom(p.id.0.clone())).collect();
    let mut sets: BTreeMap<PartyId, BTreeSet<Msg>> =
        spec.parties.iter().map(|p| (p.id.clone(), spec.knowledge(&p.id))).collect();
    for (i, s) in spec.steps.iter().enumerate() {
        let idx = i + 1;
        let fresh = spec.fresh.get(&idx).cloned().unwrap_or_default();
        for f in &fresh {
            let seen = sets.values().any(|set| set.iter().any(|m| m.contains(f)));
            if seen {
                out.push(Diagnostic::at_step("E_FRESH_REUSE", idx, format!("fresh message {f} is already held before this step")));
            }
        }
        let sender = sets.get_mut(&s.from).expect("declared party");
        sender.extend(fresh);
        let mut available = sender.clone();
        available.extend(public.iter().cloned());
        if !can_synthesize(&analyze_closure(&available), &s.msg) {
            out.push(Diagnostic::at_step(
                "E_UNDERIVABLE",
                idx,
                format!("{} cannot construct the message it sends", s.from),
            ));
        }
        sender.insert(s.msg.clone());
        sets.get_mut(&s.to).expect("declared party").insert(s.msg.clone());
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunConfig {
    pub truncate_after: usize,
    pub timeout_fired: BTreeSet<PartyId>,
    pub delay_pins: BTreeMap<String, Rational>,
}

impl RunConfig {
    pub fn full(spec: &ProtocolSpec) -> Self {
        RunConfig { truncate_after: spec.steps.len(), ..Default::default() }
    }

    pub fn truncated(k: usize, fired: &[&str]) -> Self {
        RunConfig {
            truncate_after: k,
            timeout_fired: fired.iter().map(|p| PartyId::new(*p)).collect(),
            delay_pins: BTreeMap::new(),
        }
    }

    pub fn label(&self) -> String {
        let fired: Vec<&str> = self.timeout_fired.iter().map(PartyId::as_str).collect();
        format!("truncate_after={} timeout_fired={{{}}}", self.truncate_after, fired.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub index: usize,
    pub from: PartyId,
    pub to: PartyId,
    pub msg: Msg,
    pub at: String,
    /// Rule 1: the message was new to its sender.
    pub generated: bool,
    /// Rule 2: the message was new to its receiver.
    pub received_new: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub config: RunConfig,
    pub entries: Vec<TraceEntry>,
}

/// Per-party possession sets at `T0`, after each executed step, and at the
/// terminal instant `Te`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PossessionTimeline {
    pub entries: BTreeMap<PartyId, Vec<(String, BTreeSet<Msg>)>>,
}

pub const INITIAL: &str = "T0";
pub const TERMINAL: &str = "Te";

impl PossessionTimeline {
    pub fn terminal(&self, p: &PartyId) -> BTreeSet<Msg> {
        self.entries
            .get(p)
            .and_then(|v| v.last())
            .map(|(_, s)| s.clone())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub trace: Trace,
    pub timeline: PossessionTimeline,
    pub system: ConstraintSystem,
}

/// Executes steps `1..=truncate_after` and then clears the run records of
/// every party whose timeout fired.
pub fn run(spec: &ProtocolSpec, config: &RunConfig) -> Result<RunResult, Diagnostic> {
    let n = spec.steps.len();
    let k = config.truncate_after;
    if k > n {
        return Err(Diagnostic::new("E_BAD_CONFIG", format!("cannot truncate after step {k} of {n}")));
    }
    for p in &config.timeout_fired {
        match spec.timeouts.get(p) {
            Some(t) if t.after_step <= k => {}
            Some(t) => {
                return Err(Diagnostic::new(
                    "E_BAD_CONFIG",
                    format!("{p} cannot time out before sending step {}", t.after_step),
                ))
            }
            None => return Err(Diagnostic::new("E_BAD_CONFIG", format!("{p} has no timeout declaration"))),
        }
    }

    let mut sets: BTreeMap<PartyId, BTreeSet<Msg>> =
        spec.parties.iter().map(|p| (p.id.clone(), spec.knowledge(&p.id))).collect();
    let mut timeline = PossessionTimeline::default();
    for (p, s) in &sets {
        timeline.entries.insert(p.clone(), vec![(INITIAL.to_string(), s.clone())]);
    }
    let mut entries = Vec::new();
    for s in spec.steps.iter().take(k) {
        let sender = sets.entry(s.from.clone()).or_default();
        if let Some(fresh) = spec.fresh.get(&s.index) {
            sender.extend(fresh.iter().cloned());
        }
        let generated = sender.insert(s.msg.clone());
        let received_new = sets.entry(s.to.clone()).or_default().insert(s.msg.clone());
        entries.push(TraceEntry {
            index: s.index,
            from: s.from.clone(),
            to: s.to.clone(),
            msg: s.msg.clone(),
            at: s.at.clone(),
            generated,
            received_new,
        });
        for (p, set) in &sets {
            timeline.entries.entry(p.clone()).or_default().push((s.at.clone(), set.clone()));
        }
    }
    for (p, set) in &sets {
        let terminal = if config.timeout_fired.contains(p) { spec.knowledge(p) } else { set.clone() };
        timeline.entries.entry(p.clone()).or_default().push((TERMINAL.to_string(), terminal));
    }

    let mut system = spec.base_system();
    for (d, v) in &config.delay_pins {
        system.pin(d.clone(), v.clone());
    }
    if k >= 1 {
        system.push(Atom::Le(TimeExpr::Const(crate::time::rat(0)), spec.step_time(1)));
    }
    for i in 1..k {
        let (cur, next) = (spec.step_time(i), spec.step_time(i + 1));
        system.push(Atom::Le(cur.clone(), next.clone()));
        system.push(Atom::Eq(next, cur.plus(vec![DelayTerm::Sym(step_delay(i))])));
    }
    for t in spec.timeouts.values() {
        if t.expecting <= k && spec.ttp_round_trip(t) {
            let [_, upper] = spec.waiting_condition(t);
            system.push(upper);
        }
    }

    Ok(RunResult { trace: Trace { config: config.clone(), entries }, timeline, system })
}

/// The set held by `party` at `at` (`T0`, an executed step's time variable,
/// or `Te`).
pub fn possession_at(timeline: &PossessionTimeline, party: &PartyId, at: &str) -> Result<BTreeSet<Msg>, Diagnostic> {
    let unknown = || Diagnostic::new("E_UNKNOWN_TIME", format!("no possession set of {party} at {at}"));
    let entries = timeline.entries.get(party).ok_or_else(unknown)?;
    entries.iter().rev().find(|(t, _)| t == at).map(|(_, s)| s.clone()).ok_or_else(unknown)
}

/// Every legal end of a run: each truncation point that does not cut a TTP
/// reply off from its request, combined with every subset of parties whose
/// timeout could have fired by then.
pub fn terminal_states(spec: &ProtocolSpec) -> Vec<RunConfig> {
    let n = spec.steps.len();
    let mut out = Vec::new();
    for k in 0..=n {
        if k < n && spec.completes_after(k) {
            continue;
        }
        let eligible: Vec<&PartyId> = spec
            .timeouts
            .values()
            .filter(|t| t.after_step <= k)
            .map(|t| &t.party)
            .collect();
        for mask in 0u32..(1 << eligible.len()) {
            let fired = eligible
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| (*p).clone())
                .collect();
            out.push(RunConfig { truncate_after: k, timeout_fired: fired, delay_pins: BTreeMap::new() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PartyId {
        PartyId::new(s)
    }

    fn two_party() -> ProtocolSpec {
        let kab = KeyTerm::shared("Kab", p("A"), p("B"));
        let mut spec = ProtocolSpec {
            parties: vec![Party { id: p("A"), is_ttp: false }, Party { id: p("B"), is_ttp: false }],
            keys: vec![("Kab".into(), kab.clone())],
            ..Default::default()
        };
        spec.initial_knowledge.insert(p("A"), [Msg::key(kab.clone())].into());
        spec.initial_knowledge.insert(p("B"), [Msg::key(kab.clone())].into());
        spec.fresh.insert(1, [Msg::atom("x")].into());
        spec.steps.push(Step { index: 1, from: p("A"), to: p("B"), msg: Msg::enc(Msg::atom("x"), kab.clone()), at: "T1".into() });
        spec.steps.push(Step { index: 2, from: p("B"), to: p("A"), msg: Msg::hash(Msg::atom("x")), at: "T2".into() });
        spec
    }

    #[test]
    fn valid_two_step_protocol() {
        assert_eq!(validate(&two_party()), vec![]);
    }

    #[test]
    fn sending_unknown_material_is_underivable() {
        let mut spec = two_party();
        spec.steps[1].msg = Msg::atom("y");
        let d = validate(&spec);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].code.as_str(), d[0].step), ("E_UNDERIVABLE", Some(2)));
    }

    #[test]
    fn reused_time_variable() {
        let mut spec = two_party();
        spec.steps[1].at = "T1".into();
        assert_eq!(validate(&spec)[0].code, "E_TIME_REUSE");
    }

    #[test]
    fn self_send_and_undeclared() {
        let mut spec = two_party();
        spec.steps[1].to = p("B");
        spec.steps[0].to = p("Z");
        let codes: Vec<String> = validate(&spec).into_iter().map(|d| d.code).collect();
        assert!(codes.contains(&"E_SELF_SEND".to_string()));
        assert!(codes.contains(&"E_UNDECLARED".to_string()));
    }

    #[test]
    fn fresh_reuse_is_reported() {
        let mut spec = two_party();
        spec.initial_knowledge.get_mut(&p("B")).unwrap().insert(Msg::atom("x"));
        assert_eq!(validate(&spec)[0].code, "E_FRESH_REUSE");
    }

    #[test]
    fn run_records_both_rules() {
        let spec = two_party();
        let r = run(&spec, &RunConfig::full(&spec)).unwrap();
        assert!(r.trace.entries.iter().all(|e| e.generated && e.received_new));
        let b1 = possession_at(&r.timeline, &p("B"), "T1").unwrap();
        assert!(b1.contains(&spec.steps[0].msg));
        assert_eq!(r.system.render(), vec!["0 <= T1", "T1 <= T2", "T2 = T1 + t1"]);
    }

    #[test]
    fn empty_protocol_keeps_initial_sets() {
        let mut spec = two_party();
        spec.steps.clear();
        spec.fresh.clear();
        let r = run(&spec, &RunConfig::full(&spec)).unwrap();
        for party in [p("A"), p("B")] {
            assert_eq!(r.timeline.terminal(&party), spec.knowledge(&party));
        }
        assert_eq!(terminal_states(&spec), vec![RunConfig::default()]);
    }

    #[test]
    fn unknown_time_and_bad_config() {
        let spec = two_party();
        let r = run(&spec, &RunConfig::truncated(1, &[])).unwrap();
        assert_eq!(possession_at(&r.timeline, &p("A"), "T2").unwrap_err().code, "E_UNKNOWN_TIME");
        assert_eq!(run(&spec, &RunConfig::truncated(3, &[])).unwrap_err().code, "E_BAD_CONFIG");
        assert_eq!(run(&spec, &RunConfig::truncated(1, &["A"])).unwrap_err().code, "E_BAD_CONFIG");
    }

    #[test]
    fn timeout_clears_run_records_only() {
        let mut spec = two_party();
        spec.timeouts.insert(
            p("A"),
            TimeoutDecl { party: p("A"), waiting: DelaySym::waiting("tA"), after_step: 1, expecting: 2 },
        );
        let r = run(&spec, &RunConfig::truncated(2, &["A"])).unwrap();
        assert_eq!(r.timeline.terminal(&p("A")), spec.knowledge(&p("A")));
        assert_eq!(terminal_states(&spec).len(), 1 + 2 + 2);
    }
}
