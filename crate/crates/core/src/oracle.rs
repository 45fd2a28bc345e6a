//! Brute-force reference checkers and seeded generators for cross-checking
//! the engine on small instances. Nothing here calls the closure, solver or
//! terminal-state code it is meant to check.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

fn lcm(a: &BigInt, b: &BigInt) -> BigInt {
    let (mut x, mut y) = (a.abs(), b.abs());
    while !y.is_zero() {
        let r = &x % &y;
        x = std::mem::replace(&mut y, r);
    }
    a.abs() / x * b.abs()
}
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{EvidenceItem, EvidenceSpec, ExchangedItem, SufficiencyGoal};
use crate::logic::{Derivation, Formula, Rule, RuleKind, Term};
use crate::message::{KeyTerm, Msg, Party, PartyId};
use crate::protocol::{ChannelKind, ProtocolSpec, RunConfig, Step, TimeoutDecl};
use crate::time::{rat, Atom, ConstraintSystem, DelaySym, DelayTerm, Model, Rational, TimeExpr};

pub use rand::SeedableRng;
pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- messages

fn opener(k: &KeyTerm) -> KeyTerm {
    match k {
        KeyTerm::Public(p) => KeyTerm::Private(p.clone()),
        KeyTerm::Private(p) => KeyTerm::Public(p.clone()),
        KeyTerm::Shared { .. } | KeyTerm::Session(_) => k.clone(),
    }
}

/// Naive fixpoint: every round splits every pair and opens every
/// ciphertext whose opening key is present, until nothing changes or
/// `max_rounds` rounds have run.
pub fn bf_closure(s: &BTreeSet<Msg>, max_rounds: usize) -> BTreeSet<Msg> {
    let mut cur = s.clone();
    for _ in 0..max_rounds {
        let mut next = cur.clone();
        for m in &cur {
            match m {
                Msg::Pair(a, b) => {
                    next.insert((**a).clone());
                    next.insert((**b).clone());
                }
                Msg::Enc(body, k) if cur.contains(&Msg::Key(opener(k))) => {
                    next.insert((**body).clone());
                }
                _ => {}
            }
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn bf_build(known: &BTreeSet<Msg>, goal: &Msg) -> bool {
    known.contains(goal)
        || match goal {
            Msg::Pair(a, b) => bf_build(known, a) && bf_build(known, b),
            Msg::Hash(b) => bf_build(known, b),
            Msg::Enc(b, k) => known.contains(&Msg::Key(k.clone())) && bf_build(known, b),
            Msg::Atom(_) | Msg::Key(_) => false,
        }
}

pub fn bf_derivable(s: &BTreeSet<Msg>, goal: &Msg) -> bool {
    let rounds = s.iter().map(msg_depth).max().unwrap_or(0) * 2 + 2;
    bf_build(&bf_closure(s, rounds), goal)
}

fn msg_depth(m: &Msg) -> usize {
    match m {
        Msg::Atom(_) | Msg::Key(_) => 1,
        Msg::Pair(a, b) => 1 + msg_depth(a).max(msg_depth(b)),
        Msg::Enc(b, _) | Msg::Hash(b) => 1 + msg_depth(b),
    }
}

// ---------------------------------------------------------------- time grid

/// Finite grid `lo, lo + step, ..., <= hi` applied to every variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub variables: Vec<String>,
    pub lo: Rational,
    pub hi: Rational,
    pub step: Rational,
}

impl GridSpec {
    pub fn new(lo: Rational, hi: Rational, step: Rational) -> Self {
        assert!(step.is_positive(), "grid step must be positive");
        GridSpec { variables: vec![], lo, hi, step }
    }
}

#[derive(Clone, Debug)]
enum Ce {
    K(i64),
    V(usize),
    Sum(Vec<Ce>),
    Max(Box<Ce>, Box<Ce>),
}

#[derive(Clone, Copy, Debug)]
enum Cmp {
    Le,
    Lt,
    Eq,
}

/// Integer evaluator over a common denominator.
struct Grid {
    vars: Vec<String>,
    index: BTreeMap<String, usize>,
    scale: BigInt,
}

impl Grid {
    fn new(vars: BTreeSet<String>, rationals: &[&Rational]) -> Grid {
        let mut scale = BigInt::one();
        for q in rationals {
            scale = lcm(&scale, q.denom());
        }
        let vars: Vec<String> = vars.into_iter().collect();
        let index = vars.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        Grid { vars, index, scale }
    }

    fn int(&self, q: &Rational) -> i64 {
        (q.numer() * (&self.scale / q.denom())).to_i64().expect("grid value fits in i64")
    }

    fn rat(&self, v: i64) -> Rational {
        Rational::new(BigInt::from(v), self.scale.clone())
    }

    fn expr(&self, e: &TimeExpr) -> Ce {
        match e {
            TimeExpr::Const(q) => Ce::K(self.int(q)),
            TimeExpr::Var(v) => Ce::V(self.index[v]),
            TimeExpr::Plus(b, ds) => {
                let mut parts = vec![self.expr(b)];
                for d in ds {
                    parts.push(match d {
                        DelayTerm::Sym(s) => Ce::V(self.index[&s.name]),
                        DelayTerm::Const(q) => Ce::K(self.int(q)),
                    });
                }
                Ce::Sum(parts)
            }
            TimeExpr::MaxOf(a, b) => Ce::Max(Box::new(self.expr(a)), Box::new(self.expr(b))),
        }
    }

    fn atom(&self, a: &Atom) -> (Ce, Cmp, Ce) {
        match a {
            Atom::Le(l, r) => (self.expr(l), Cmp::Le, self.expr(r)),
            Atom::Lt(l, r) => (self.expr(l), Cmp::Lt, self.expr(r)),
            Atom::Eq(l, r) => (self.expr(l), Cmp::Eq, self.expr(r)),
        }
    }

    fn model(&self, vals: &[i64]) -> Model {
        self.vars.iter().cloned().zip(vals.iter().map(|v| self.rat(*v))).collect()
    }
}

fn eval(e: &Ce, vals: &[i64]) -> i64 {
    match e {
        Ce::K(k) => *k,
        Ce::V(i) => vals[*i],
        Ce::Sum(xs) => xs.iter().map(|x| eval(x, vals)).sum(),
        Ce::Max(a, b) => eval(a, vals).max(eval(b, vals)),
    }
}

fn holds(atoms: &[(Ce, Cmp, Ce)], vals: &[i64]) -> bool {
    atoms.iter().all(|(l, c, r)| {
        let (l, r) = (eval(l, vals), eval(r, vals));
        match c {
            Cmp::Le => l <= r,
            Cmp::Lt => l < r,
            Cmp::Eq => l == r,
        }
    })
}

fn collect_expr(e: &TimeExpr, vars: &mut BTreeSet<String>, delays: &mut BTreeSet<String>, consts: &mut Vec<Rational>) {
    match e {
        TimeExpr::Const(q) => consts.push(q.clone()),
        TimeExpr::Var(v) => {
            vars.insert(v.clone());
        }
        TimeExpr::Plus(b, ds) => {
            collect_expr(b, vars, delays, consts);
            for d in ds {
                match d {
                    DelayTerm::Sym(s) => {
                        vars.insert(s.name.clone());
                        delays.insert(s.name.clone());
                    }
                    DelayTerm::Const(q) => consts.push(q.clone()),
                }
            }
        }
        TimeExpr::MaxOf(a, b) => {
            collect_expr(a, vars, delays, consts);
            collect_expr(b, vars, delays, consts);
        }
    }
}

/// Steps through every point of the grid (pinned variables fixed) and
/// returns the first one satisfying all atoms. MaxOf is evaluated directly.
pub fn bf_sat(sys: &ConstraintSystem, grid: &GridSpec) -> Option<Model> {
    search(sys, grid, &[])
}

/// `(target, base, delay)`: `target = base + delay`, applied in order.
type Definition = (String, String, String);

fn search(sys: &ConstraintSystem, grid: &GridSpec, defs: &[Definition]) -> Option<Model> {
    let mut vars: BTreeSet<String> = grid.variables.iter().cloned().collect();
    let mut delays = BTreeSet::new();
    let mut consts = vec![grid.lo.clone(), grid.hi.clone(), grid.step.clone()];
    for a in &sys.atoms {
        let (l, r) = match a {
            Atom::Le(l, r) | Atom::Lt(l, r) | Atom::Eq(l, r) => (l, r),
        };
        collect_expr(l, &mut vars, &mut delays, &mut consts);
        collect_expr(r, &mut vars, &mut delays, &mut consts);
    }
    for (v, q) in &sys.fixed {
        vars.insert(v.clone());
        consts.push(q.clone());
    }
    for (t, b, d) in defs {
        vars.extend([t.clone(), b.clone(), d.clone()]);
        delays.insert(d.clone());
    }
    let refs: Vec<&Rational> = consts.iter().collect();
    let g = Grid::new(vars, &refs);
    let atoms: Vec<(Ce, Cmp, Ce)> = sys.atoms.iter().map(|a| g.atom(a)).collect();

    let (lo, hi, step) = (g.int(&grid.lo), g.int(&grid.hi), g.int(&grid.step));
    let defined: Vec<(usize, usize, usize)> =
        defs.iter().map(|(t, b, d)| (g.index[t], g.index[b], g.index[d])).collect();
    let targets: BTreeSet<&String> = defs.iter().map(|(t, _, _)| t).collect();
    let choices: Vec<Vec<i64>> = g
        .vars
        .iter()
        .map(|v| match sys.fixed.get(v) {
            Some(q) => vec![g.int(q)],
            None if targets.contains(v) => vec![0],
            None => {
                let floor = if delays.contains(v) { 0 } else { i64::MIN };
                (0..)
                    .map(|i| lo + i * step)
                    .take_while(|x| *x <= hi)
                    .filter(|x| *x >= floor)
                    .collect()
            }
        })
        .collect();
    let fill = |vals: &mut [i64]| {
        for (t, b, d) in &defined {
            vals[*t] = vals[*b] + vals[*d];
        }
    };
    let mut scratch = vec![0; g.vars.len()];
    odometer(&choices, |vals| {
        scratch.copy_from_slice(vals);
        fill(&mut scratch);
        holds(&atoms, &scratch)
    })
    .map(|mut vals| {
        fill(&mut vals);
        g.model(&vals)
    })
}

fn odometer(choices: &[Vec<i64>], mut accept: impl FnMut(&[i64]) -> bool) -> Option<Vec<i64>> {
    if choices.iter().any(Vec::is_empty) {
        return None;
    }
    let mut idx = vec![0usize; choices.len()];
    let mut vals: Vec<i64> = choices.iter().map(|c| c[0]).collect();
    loop {
        if accept(&vals) {
            return Some(vals);
        }
        let mut i = 0;
        loop {
            if i == choices.len() {
                return None;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                vals[i] = choices[i][idx[i]];
                break;
            }
            idx[i] = 0;
            vals[i] = choices[i][0];
            i += 1;
        }
    }
}

/// `sys` entails `atom` on the grid: no grid point satisfies `sys` while
/// breaking `atom`.
pub fn bf_entails(sys: &ConstraintSystem, atom: &Atom, grid: &GridSpec) -> bool {
    let (l, r) = match atom {
        Atom::Le(l, r) | Atom::Lt(l, r) | Atom::Eq(l, r) => (l.clone(), r.clone()),
    };
    let broken: Vec<Atom> = match atom {
        Atom::Le(..) => vec![Atom::Lt(r, l)],
        Atom::Lt(..) => vec![Atom::Le(r, l)],
        Atom::Eq(..) => vec![Atom::Lt(l.clone(), r.clone()), Atom::Lt(r, l)],
    };
    broken.into_iter().all(|b| {
        let mut s = sys.clone();
        s.atoms.push(b);
        bf_sat(&s, grid).is_none()
    })
}

// ---------------------------------------------------------------- fairness

/// Every `(truncation, fired set)` pair, filtered by the two legality rules:
/// a party can only give up after sending the step its timeout follows, and
/// a run never stops right before a step the TTP sends.
pub fn enumerate_truncations(spec: &ProtocolSpec) -> Vec<RunConfig> {
    let n = spec.steps.len();
    let parties: Vec<PartyId> = spec.parties.iter().map(|p| p.id.clone()).collect();
    let ttps: BTreeSet<&PartyId> = spec.parties.iter().filter(|p| p.is_ttp).map(|p| &p.id).collect();
    let mut out = Vec::new();
    for t in 0..=n {
        if t < n && ttps.contains(&spec.steps[t].from) {
            continue;
        }
        for mask in 0u64..(1u64 << parties.len()) {
            let fired: BTreeSet<PartyId> = parties
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, p)| p.clone())
                .collect();
            let legal = fired.iter().all(|p| spec.timeouts.get(p).is_some_and(|d| d.after_step <= t));
            if legal {
                out.push(RunConfig { truncate_after: t, timeout_fired: fired, delay_pins: BTreeMap::new() });
            }
        }
    }
    out
}

/// Final sets of a truncated run, recomputed step by step.
pub fn bf_final_sets(spec: &ProtocolSpec, config: &RunConfig) -> BTreeMap<PartyId, BTreeSet<Msg>> {
    let init = |p: &PartyId| spec.initial_knowledge.get(p).cloned().unwrap_or_default();
    let mut sets: BTreeMap<PartyId, BTreeSet<Msg>> = spec.parties.iter().map(|p| (p.id.clone(), init(&p.id))).collect();
    for s in spec.steps.iter().take(config.truncate_after) {
        let sender = sets.entry(s.from.clone()).or_default();
        for f in spec.fresh.get(&s.index).into_iter().flatten() {
            sender.insert(f.clone());
        }
        sender.insert(s.msg.clone());
        sets.entry(s.to.clone()).or_default().insert(s.msg.clone());
    }
    for p in &config.timeout_fired {
        sets.insert(p.clone(), init(p));
    }
    sets
}

fn tvar(spec: &ProtocolSpec, i: usize) -> TimeExpr {
    TimeExpr::var(spec.steps[i - 1].at.clone())
}

fn with_delay(e: TimeExpr, role: DelaySym) -> TimeExpr {
    TimeExpr::Plus(Box::new(e), vec![DelayTerm::Sym(role)])
}

/// Timing atoms of a truncated run, built directly from the step list.
fn bf_timing(spec: &ProtocolSpec, config: &RunConfig) -> (ConstraintSystem, Vec<Definition>, bool) {
    let t = config.truncate_after;
    let mut sys = ConstraintSystem { atoms: spec.constraints.clone(), fixed: spec.pins.clone() };
    if t >= 1 {
        sys.atoms.push(Atom::Le(TimeExpr::Const(rat(0)), tvar(spec, 1)));
    }
    let defs = (1..t)
        .map(|i| (spec.steps[i].at.clone(), spec.steps[i - 1].at.clone(), format!("t{i}")))
        .collect();
    let mut needs_breach = false;
    for d in spec.timeouts.values() {
        if d.expecting > t || d.expecting > spec.steps.len() || d.after_step == 0 {
            continue;
        }
        let send = &spec.steps[d.after_step - 1];
        let reply = &spec.steps[d.expecting - 1];
        let bound = with_delay(tvar(spec, d.after_step), d.waiting.clone());
        let ttp = |p: &PartyId| spec.parties.iter().any(|x| &x.id == p && x.is_ttp);
        if ttp(&send.to) && ttp(&reply.from) {
            sys.atoms.push(Atom::Le(tvar(spec, d.expecting), bound.clone()));
        }
        if config.timeout_fired.contains(&d.party) {
            sys.atoms.push(Atom::Lt(bound, tvar(spec, d.expecting)));
            needs_breach = true;
        }
    }
    (sys, defs, needs_breach)
}

/// A terminal state where the exchange is one-sided, with a grid timing
/// under which it is reachable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BfViolation {
    pub config: RunConfig,
    pub model: Model,
    /// Whether reaching the state required some reply to miss its deadline.
    pub timing_breach: bool,
}

pub fn bf_fairness(spec: &ProtocolSpec, evidence: &EvidenceSpec, grid: &GridSpec) -> Vec<BfViolation> {
    let parties: BTreeSet<PartyId> = evidence
        .items
        .iter()
        .map(|e| e.holder.clone())
        .chain(evidence.exchanged.iter().map(|x| x.party.clone()))
        .collect();
    let mut out = Vec::new();
    for config in enumerate_truncations(spec) {
        let sets = bf_final_sets(spec, &config);
        let side = |p: &PartyId| {
            let set = sets.get(p).cloned().unwrap_or_default();
            evidence.items.iter().filter(|e| &e.holder == p).all(|e| bf_derivable(&set, &e.msg))
                && evidence.exchanged.iter().filter(|x| &x.party == p).all(|x| bf_derivable(&set, &x.msg))
        };
        let values: BTreeSet<bool> = parties.iter().map(side).collect();
        if values.len() < 2 {
            continue;
        }
        let (sys, defs, breach) = bf_timing(spec, &config);
        let mut g = grid.clone();
        g.variables.extend((1..=config.truncate_after).map(|i| spec.steps[i - 1].at.clone()));
        if let Some(model) = search(&sys, &g, &defs) {
            out.push(BfViolation { config, model, timing_breach: breach });
        }
    }
    out
}

// ---------------------------------------------------------------- mutations

fn paths(d: &Derivation, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(prefix.clone());
    for (i, c) in d.children.iter().enumerate() {
        prefix.push(i);
        paths(c, prefix, out);
        prefix.pop();
    }
}

fn node_at<'a>(d: &'a mut Derivation, path: &[usize]) -> &'a mut Derivation {
    path.iter().fold(d, |n, i| &mut n.children[*i])
}

fn rename_first_atom(m: &Msg) -> Option<Msg> {
    match m {
        Msg::Atom(a) => Some(Msg::Atom(format!("{a}_x"))),
        Msg::Pair(a, b) => rename_first_atom(a)
            .map(|a2| Msg::pair(a2, (**b).clone()))
            .or_else(|| rename_first_atom(b).map(|b2| Msg::pair((**a).clone(), b2))),
        Msg::Enc(b, k) => rename_first_atom(b).map(|b2| Msg::enc(b2, k.clone())),
        Msg::Hash(b) => rename_first_atom(b).map(Msg::hash),
        Msg::Key(KeyTerm::Session(s)) => Some(Msg::Key(KeyTerm::Session(format!("{s}_x")))),
        Msg::Key(_) => None,
    }
}

fn mutate_formula(f: &Formula) -> Option<Formula> {
    match f {
        Formula::CanProve(a, b) => mutate_formula(b).map(|b2| Formula::CanProve(a.clone(), Box::new(b2))),
        Formula::Sent(a, m, t) => rename_first_atom(m).map(|m2| Formula::Sent(a.clone(), m2, t.clone())),
        Formula::Possesses(a, m, t) => rename_first_atom(m).map(|m2| Formula::Possesses(a.clone(), m2, t.clone())),
        Formula::Received(a, m, t) => rename_first_atom(m).map(|m2| Formula::Received(a.clone(), m2, t.clone())),
        Formula::PubKeyOf(k, a) => Some(Formula::PubKeyOf(k.clone(), PartyId::new(format!("{a}_x")))),
        Formula::SharedKeyOf(k, a, b) => Some(Formula::SharedKeyOf(k.clone(), a.clone(), PartyId::new(format!("{b}_x")))),
        Formula::Conj(items) => {
            let mut items = items.clone();
            let first = mutate_formula(items.first()?)?;
            items[0] = first;
            Some(Formula::Conj(items))
        }
    }
}

fn perturb_term(t: &Term) -> Term {
    match t {
        Term::Sym(s) => Term::Sym(format!("{s}_x")),
        Term::App(op, args) if !args.is_empty() => {
            let mut args = args.clone();
            args[0] = perturb_term(&args[0]);
            Term::App(*op, args)
        }
        other => Term::App(crate::logic::term::Op::Atom, vec![other.clone()]),
    }
}

pub const MUTATION_KINDS: [&str; 5] = ["goal", "rule", "drop_child", "binding", "constraint"];

/// Applies one mutation of the given kind at a random applicable node.
/// Returns `None` when no node admits that kind.
pub fn mutate(d: &Derivation, kind: &str, rng: &mut Rng64) -> Option<Derivation> {
    let mut out = d.clone();
    let mut order = Vec::new();
    paths(d, &mut Vec::new(), &mut order);
    order.shuffle(rng);
    for path in order {
        let n = node_at(&mut out, &path);
        let changed = match kind {
            "goal" => match mutate_formula(&n.goal) {
                Some(g) => {
                    n.goal = g;
                    true
                }
                None => false,
            },
            "rule" => {
                let names = ["Fact", "A1", "A2", "A3", "A3s", "A4", "A5", "A6", "A6p", "PairSent", "PairRecv", "T1", "T2"];
                let others: Vec<&&str> = names.iter().filter(|x| **x != n.rule).collect();
                n.rule = others.choose(rng).map(|s| s.to_string()).expect("alternatives");
                true
            }
            "drop_child" if !n.children.is_empty() => {
                let j = rng.gen_range(0..n.children.len());
                n.children.remove(j);
                true
            }
            "binding" if !n.bindings.is_empty() => {
                let keys: Vec<String> = n.bindings.keys().cloned().collect();
                let k = keys.choose(rng).expect("nonempty").clone();
                let v = perturb_term(&n.bindings[&k]);
                n.bindings.insert(k, v);
                true
            }
            "constraint" if !n.emitted.is_empty() => {
                let j = rng.gen_range(0..n.emitted.len());
                n.emitted[j] = match &n.emitted[j] {
                    Atom::Le(a, b) => Atom::Lt(a.clone(), b.clone()),
                    Atom::Lt(a, b) | Atom::Eq(a, b) => Atom::Le(a.clone(), b.clone()),
                };
                true
            }
            _ => false,
        };
        if changed {
            return Some(out);
        }
    }
    None
}

// ---------------------------------------------------------------- generators

const ATOMS: [&str; 5] = ["a", "b", "c", "d", "e"];

fn gen_key(rng: &mut Rng64) -> KeyTerm {
    let p = |rng: &mut Rng64| PartyId::new(["P", "Q"][rng.gen_range(0..2)]);
    match rng.gen_range(0..4) {
        0 => KeyTerm::Public(p(rng)),
        1 => KeyTerm::Private(p(rng)),
        2 => KeyTerm::shared("Kpq", PartyId::new("P"), PartyId::new("Q")),
        _ => KeyTerm::Session(["k1", "k2"][rng.gen_range(0..2)].to_string()),
    }
}

/// Random message of depth at most `depth`.
pub fn gen_msg(rng: &mut Rng64, depth: usize) -> Msg {
    if depth <= 1 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.7) {
            Msg::atom(ATOMS[rng.gen_range(0..ATOMS.len())])
        } else {
            Msg::key(gen_key(rng))
        };
    }
    match rng.gen_range(0..3) {
        0 => Msg::pair(gen_msg(rng, depth - 1), gen_msg(rng, depth - 1)),
        1 => Msg::enc(gen_msg(rng, depth - 1), gen_key(rng)),
        _ => Msg::hash(gen_msg(rng, depth - 1)),
    }
}

/// Up to `max_len` random messages of depth at most `depth`.
pub fn gen_msg_set(rng: &mut Rng64, max_len: usize, depth: usize) -> BTreeSet<Msg> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| gen_msg(rng, depth)).collect()
}

/// A two-variable-per-atom system over up to `max_vars` variables with
/// integer constants in `0..=4`, each variable boxed in `[0, 4]`. Every
/// vertex of such a polytope lies on the half-integer grid.
pub fn gen_system(rng: &mut Rng64, max_vars: usize) -> (ConstraintSystem, Vec<String>) {
    let n = rng.gen_range(1..=max_vars);
    let names: Vec<(String, bool)> = (0..n)
        .map(|i| {
            if rng.gen_bool(0.5) {
                (format!("T{i}"), false)
            } else {
                (format!("d{i}"), true)
            }
        })
        .collect();
    let mut sys = ConstraintSystem::new();
    for (name, delay) in &names {
        let v = var_expr(name, *delay);
        if !*delay {
            sys.push(Atom::Le(TimeExpr::Const(rat(0)), v.clone()));
        }
        sys.push(Atom::Le(v, TimeExpr::Const(rat(4))));
    }
    let m = rng.gen_range(1..=4);
    while sys.atoms.len() < 2 * n + m {
        if let Some(a) = gen_atom(rng, &names) {
            sys.push(a);
        }
    }
    (sys, names.into_iter().map(|(n, _)| n).collect())
}

fn var_expr(name: &str, delay: bool) -> TimeExpr {
    if delay {
        TimeExpr::Const(rat(0)).plus(vec![DelayTerm::Sym(DelaySym::step(name))])
    } else {
        TimeExpr::var(name)
    }
}

/// Builds `sum(left) + cl  op  sum(right) + cr` as time expressions;
/// `None` when a side would need two plain time variables.
fn side(vars: &[&(String, bool)], c: i64) -> Option<TimeExpr> {
    let times: Vec<&&(String, bool)> = vars.iter().filter(|(_, d)| !*d).collect();
    if times.len() > 1 {
        return None;
    }
    let base = match times.first() {
        Some((n, _)) => TimeExpr::var(n.clone()),
        None => TimeExpr::Const(rat(0)),
    };
    let mut ds: Vec<DelayTerm> =
        vars.iter().filter(|(_, d)| *d).map(|(n, _)| DelayTerm::Sym(DelaySym::step(n.clone()))).collect();
    if c > 0 {
        if matches!(base, TimeExpr::Const(_)) && ds.is_empty() {
            return Some(TimeExpr::Const(rat(c)));
        }
        ds.push(DelayTerm::Const(rat(c)));
    }
    Some(base.plus(ds))
}

/// Random atom `a*x + b*y <= c` (or `=`) with `a, b` in `{-1, 0, 1}`.
pub fn gen_atom(rng: &mut Rng64, names: &[(String, bool)]) -> Option<Atom> {
    let x = names.choose(rng)?;
    let y = names.choose(rng)?;
    let cx: i64 = [-1, 1][rng.gen_range(0..2)];
    let cy: i64 = [-1, 0, 1][rng.gen_range(0..3)];
    let c: i64 = rng.gen_range(-4..=4);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (v, k) in [(x, cx), (y, cy)] {
        match k {
            1 => left.push(v),
            -1 => right.push(v),
            _ => {}
        }
    }
    if x == y && cy != 0 {
        return None;
    }
    // left <= right + c
    let (cl, cr) = if c >= 0 { (0, c) } else { (-c, 0) };
    let l = side(&left, cl)?;
    let r = side(&right, cr)?;
    Some(if rng.gen_bool(0.15) { Atom::Eq(l, r) } else { Atom::Le(l, r) })
}

fn pid(i: usize) -> PartyId {
    PartyId::new(format!("P{i}"))
}

/// A random protocol that executes as written: every message is built from
/// what its sender holds plus that step's fresh atoms.
pub fn gen_protocol(rng: &mut Rng64, max_steps: usize, max_parties: usize) -> (ProtocolSpec, EvidenceSpec) {
    let np = rng.gen_range(2..=max_parties.max(2));
    let ttp = if np > 2 && rng.gen_bool(0.5) { Some(np - 1) } else { None };
    let mut spec = ProtocolSpec::default();
    for i in 0..np {
        spec.parties.push(Party { id: pid(i), is_ttp: Some(i) == ttp });
    }
    for i in 0..np {
        spec.keys.push((format!("Kp{i}"), KeyTerm::Public(pid(i))));
    }
    let mut shared = Vec::new();
    for i in 0..np {
        for j in i + 1..np {
            if rng.gen_bool(0.5) {
                let name = format!("K{i}{j}");
                let k = KeyTerm::shared(name.clone(), pid(i), pid(j));
                spec.keys.push((name, k.clone()));
                shared.push((i, j, k));
            }
        }
    }
    if rng.gen_bool(0.5) {
        spec.keys.push(("ks".into(), KeyTerm::Session("ks".into())));
    }
    for i in 0..np {
        let mut set: BTreeSet<Msg> = (0..np).map(|j| Msg::key(KeyTerm::Public(pid(j)))).collect();
        set.insert(Msg::key(KeyTerm::Private(pid(i))));
        for (a, b, k) in &shared {
            if *a == i || *b == i {
                set.insert(Msg::key(k.clone()));
            }
        }
        if rng.gen_bool(0.3) {
            set.insert(Msg::atom(format!("s{i}")));
        }
        spec.initial_knowledge.insert(pid(i), set);
        if rng.gen_bool(0.5) {
            let j = (i + 1) % np;
            spec.beliefs.insert(pid(i), vec![Formula::PubKeyOf(KeyTerm::Public(pid(j)), pid(j))]);
        }
    }
    if rng.gen_bool(0.5) {
        spec.counterparts.push((pid(0), pid(1)));
    }
    if let Some(t) = ttp {
        if rng.gen_bool(0.5) {
            spec.set_channel(&pid(0), &pid(t), ChannelKind::Recoverable);
        }
    }

    let n = rng.gen_range(0..=max_steps);
    let mut sets = spec.initial_knowledge.clone();
    let mut fresh_count = 0;
    for idx in 1..=n {
        let from = rng.gen_range(0..np);
        let mut to = rng.gen_range(0..np - 1);
        if to >= from {
            to += 1;
        }
        let mut fresh = BTreeSet::new();
        for _ in 0..rng.gen_range(0..=2) {
            fresh_count += 1;
            fresh.insert(Msg::atom(format!("f{fresh_count}")));
        }
        let sender = sets.get_mut(&pid(from)).expect("party");
        sender.extend(fresh.iter().cloned());
        let msg = build_from(rng, sender, &pid(from), 3);
        sender.insert(msg.clone());
        sets.get_mut(&pid(to)).expect("party").insert(msg.clone());
        if !fresh.is_empty() {
            spec.fresh.insert(idx, fresh);
        }
        spec.steps.push(Step { index: idx, from: pid(from), to: pid(to), msg, at: format!("T{idx}") });
    }
    for i in 0..np {
        if Some(i) == ttp {
            continue;
        }
        let sends: Vec<usize> = spec.steps.iter().filter(|s| s.from == pid(i)).map(|s| s.index).filter(|s| *s < n).collect();
        if let Some(&after) = sends.choose(rng) {
            if rng.gen_bool(0.6) {
                let expecting = rng.gen_range(after + 1..=n);
                spec.timeouts.insert(
                    pid(i),
                    TimeoutDecl { party: pid(i), waiting: DelaySym::waiting(format!("w{i}")), after_step: after, expecting },
                );
                if rng.gen_bool(0.5) {
                    spec.pins.insert(format!("w{i}"), rat(rng.gen_range(0..=4)));
                }
            }
        }
    }
    if n >= 3 && rng.gen_bool(0.4) {
        spec.constraints.push(Atom::Le(
            TimeExpr::delays(&[DelaySym::step("t1"), DelaySym::step("t2")]),
            TimeExpr::Const(rat(rng.gen_range(0..=6))),
        ));
    }
    if rng.gen_bool(0.5) {
        let premise = Term::parse("proves(?A, sent(?B, hash(?m), ?t))").expect("pattern");
        let conclusion = Term::parse("proves(?A, sent(?B, ?m, ?t))").expect("pattern");
        let mut r = Rule {
            name: "H".into(),
            kind: RuleKind::Assumption,
            premises: vec![premise],
            conclusion,
            side: vec![],
            fresh: vec![],
            counterpart: None,
            text: String::new(),
        };
        r.text = crate::dsl::print::rule_text(&r);
        spec.assumptions.push(r);
    }

    let mut evidence = EvidenceSpec::default();
    if let Some(last) = spec.steps.last() {
        evidence.items.push(EvidenceItem { name: "E1".into(), holder: last.to.clone(), msg: last.msg.clone() });
        let goal = Term::parse(&format!("has({}, {}, ?_t1)", last.to, crate::logic::term::msg_to_term(&last.msg)))
            .expect("goal pattern");
        evidence.goals.push(SufficiencyGoal { evidence: "E1".into(), goal });
        if let Some(first) = spec.steps.first() {
            if first.from != last.to {
                evidence.items.push(EvidenceItem { name: "E2".into(), holder: first.from.clone(), msg: first.msg.clone() });
            }
        }
        if let Some(f) = spec.fresh.values().next().and_then(|s| s.iter().next()) {
            evidence.exchanged.push(ExchangedItem { msg: f.clone(), party: last.to.clone() });
        }
    }
    (spec, evidence)
}

/// Random message constructible from `held` (plus party names).
fn build_from(rng: &mut Rng64, held: &BTreeSet<Msg>, me: &PartyId, depth: usize) -> Msg {
    let pool: Vec<&Msg> = held.iter().filter(|m| !matches!(m, Msg::Key(KeyTerm::Private(p)) if p != me)).collect();
    let keys: Vec<KeyTerm> = held
        .iter()
        .filter_map(|m| match m {
            Msg::Key(k) => Some(k.clone()),
            _ => None,
        })
        .collect();
    let leaf = |rng: &mut Rng64| -> Msg {
        let atoms: Vec<&&Msg> = pool.iter().filter(|m| matches!(m, Msg::Atom(_))).collect();
        match atoms.choose(rng) {
            Some(m) if rng.gen_bool(0.8) => (**m).clone(),
            _ => (*pool.choose(rng).expect("nonempty knowledge")).clone(),
        }
    };
    if depth <= 1 || rng.gen_bool(0.3) {
        return leaf(rng);
    }
    match rng.gen_range(0..4) {
        0 => Msg::pair(build_from(rng, held, me, depth - 1), build_from(rng, held, me, depth - 1)),
        1 => match keys.choose(rng) {
            Some(k) => Msg::enc(build_from(rng, held, me, depth - 1), k.clone()),
            None => leaf(rng),
        },
        2 => Msg::sign(build_from(rng, held, me, depth - 1), me),
        _ => Msg::hash(build_from(rng, held, me, depth - 1)),
    }
}

/// `x` pinned into a [`Model`] check: every value is a rational.
pub fn model_is_rational(m: &Model) -> bool {
    m.values().all(|v| !v.denom().is_zero())
}


// ---------------------------------------------------------------- cross-check

/// Grid `{0, m + 1, 2(m + 1)}` where `m` is the largest pinned delay: wide
/// enough for any single delay to exceed every waiting time.
pub fn default_grid(spec: &ProtocolSpec) -> GridSpec {
    let top = spec.pins.values().cloned().max().unwrap_or_else(|| rat(0)).max(rat(0)) + rat(1);
    GridSpec::new(rat(0), top.clone() * rat(2), top)
}

/// Runs the brute-force checkers against the engine on one protocol and
/// lists every disagreement.
pub fn cross_check(spec: &ProtocolSpec, evidence: &EvidenceSpec) -> Vec<String> {
    use crate::analysis::{evidence_kb, exchange_states, timing_conditions};
    use crate::logic::{prove, replay, ProveOutcome, DEFAULT_DEPTH};
    use crate::message::analyze_closure;
    use crate::protocol::run;
    use crate::time::ConstraintSystem as Sys;

    let mut out = Vec::new();
    if !crate::protocol::validate(spec).is_empty() {
        return out;
    }
    for config in enumerate_truncations(spec) {
        let Ok(r) = run(spec, &config) else {
            out.push(format!("engine rejects legal end {}", config.label()));
            continue;
        };
        let bf = bf_final_sets(spec, &config);
        for p in &spec.parties {
            let set = r.timeline.terminal(&p.id);
            if bf.get(&p.id) != Some(&set) {
                out.push(format!("final set of {} differs at {}", p.id, config.label()));
            }
            if analyze_closure(&set) != bf_closure(&set, 64) {
                out.push(format!("closure of {}'s set differs at {}", p.id, config.label()));
            }
        }
    }
    let engine_ends: BTreeSet<RunConfig> = crate::protocol::terminal_states(spec).into_iter().collect();
    let bf_ends: BTreeSet<RunConfig> = enumerate_truncations(spec).into_iter().collect();
    if engine_ends != bf_ends {
        out.push(format!("terminal states differ: engine {} vs oracle {}", engine_ends.len(), bf_ends.len()));
    }

    if !evidence.sides().is_empty() {
        let states = exchange_states(spec, evidence);
        for v in bf_fairness(spec, evidence, &default_grid(spec)) {
            match states.iter().find(|s| s.config == v.config) {
                Some(s) if s.is_violation() && s.system.satisfied_by(&v.model) => {}
                Some(s) if s.is_violation() => {
                    out.push(format!("oracle timing for {} fails the engine system", v.config.label()))
                }
                _ => out.push(format!("oracle finds a one-sided end the engine misses: {}", v.config.label())),
            }
        }
    }

    if let Ok((sys, conds)) = timing_conditions(spec) {
        for c in conds {
            if c.category == "entailed" {
                let grid = default_grid(spec);
                let mut g = GridSpec::new(grid.lo, grid.hi, grid.step);
                g.variables = sys.variables().into_iter().collect();
                let holds = c.atoms.iter().all(|a| bf_grid_entails(&sys, a, spec, &g));
                if !holds {
                    out.push(format!("grid refutes the entailed waiting condition of {}", c.party));
                }
            }
            if let Some((m, a)) = &c.refuting {
                if !sys.satisfied_by(m) || a.holds(m) != Some(false) {
                    out.push(format!("refuting timing for {} does not substitution-check", c.party));
                }
            }
        }
    }

    let mut chain = Sys::new();
    for g in &evidence.goals {
        let Some(item) = evidence.item(&g.evidence) else { continue };
        let kb = evidence_kb(spec, item);
        if let ProveOutcome::Proved(d, next) = prove(&kb, &g.goal, &chain, DEFAULT_DEPTH) {
            if !replay(&d, &kb) {
                out.push(format!("derivation for {} does not replay", g.evidence));
            }
            chain = next;
        }
    }
    out
}

/// Grid entailment for a full-run system, with step times defined by their
/// delays so the grid only ranges over free quantities.
fn bf_grid_entails(sys: &ConstraintSystem, atom: &Atom, spec: &ProtocolSpec, grid: &GridSpec) -> bool {
    let defs: Vec<Definition> = (1..spec.steps.len())
        .map(|i| (spec.steps[i].at.clone(), spec.steps[i - 1].at.clone(), format!("t{i}")))
        .collect();
    let targets: BTreeSet<&String> = defs.iter().map(|d| &d.0).collect();
    let mut g = grid.clone();
    g.variables.retain(|v| !targets.contains(v));
    let (l, r) = match atom {
        Atom::Le(l, r) | Atom::Lt(l, r) | Atom::Eq(l, r) => (l.clone(), r.clone()),
    };
    let broken = match atom {
        Atom::Le(..) => vec![Atom::Lt(r, l)],
        Atom::Lt(..) => vec![Atom::Le(r, l)],
        Atom::Eq(..) => vec![Atom::Lt(l.clone(), r.clone()), Atom::Lt(r, l)],
    };
    broken.into_iter().all(|b| {
        let mut s = sys.clone();
        s.atoms.push(b);
        search(&s, &g, &defs).is_none()
    })
}
