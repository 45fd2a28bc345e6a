//! Symbolic event times, delay symbols and a linear inequality store.
//!
//! Satisfiability is decided exactly over the rationals by Fourier–Motzkin
//! elimination with strictness tracking; every delay symbol is implicitly
//! nonnegative.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

pub type Rational = BigRational;

pub fn rat(n: i64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn ratio(n: i64, d: i64) -> Rational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `7`, `-3`, `11/2` or `2.5`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits: BigInt = format!("{int}{frac}").parse().ok()?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        return Some(BigRational::new(digits, scale));
    }
    s.parse::<BigInt>().ok().map(BigRational::from_integer)
}

pub fn fmt_rational(q: &Rational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelayRole {
    StepDelay,
    WaitingTime,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelaySym {
    pub name: String,
    pub role: DelayRole,
}

impl DelaySym {
    pub fn step(name: impl Into<String>) -> Self {
        DelaySym { name: name.into(), role: DelayRole::StepDelay }
    }

    pub fn waiting(name: impl Into<String>) -> Self {
        DelaySym { name: name.into(), role: DelayRole::WaitingTime }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelayTerm {
    Sym(DelaySym),
    Const(Rational),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeExpr {
    Const(Rational),
    Var(String),
    Plus(Box<TimeExpr>, Vec<DelayTerm>),
    MaxOf(Box<TimeExpr>, Box<TimeExpr>),
}

impl TimeExpr {
    pub fn var(name: impl Into<String>) -> Self {
        TimeExpr::Var(name.into())
    }

    pub fn constant(q: Rational) -> Self {
        TimeExpr::Const(q)
    }

    pub fn max(a: TimeExpr, b: TimeExpr) -> Self {
        TimeExpr::MaxOf(Box::new(a), Box::new(b))
    }

    /// `self + d1 + d2 + ...`; merges into an existing `Plus`.
    pub fn plus(self, delays: Vec<DelayTerm>) -> Self {
        if delays.is_empty() {
            return self;
        }
        match self {
            TimeExpr::Plus(base, mut ds) => {
                ds.extend(delays);
                TimeExpr::Plus(base, ds)
            }
            other => TimeExpr::Plus(Box::new(other), delays),
        }
    }

    /// Sum of delay symbols with zero base, e.g. `t5 + t6`.
    pub fn delays(syms: &[DelaySym]) -> Self {
        TimeExpr::Const(Rational::zero())
            .plus(syms.iter().cloned().map(DelayTerm::Sym).collect())
    }

    pub fn has_max(&self) -> bool {
        match self {
            TimeExpr::MaxOf(..) => true,
            TimeExpr::Plus(b, _) => b.has_max(),
            _ => false,
        }
    }

    /// Time variables (not delays) occurring in the expression.
    pub fn time_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            TimeExpr::Const(_) => {}
            TimeExpr::Var(v) => {
                out.insert(v.clone());
            }
            TimeExpr::Plus(b, _) => b.time_vars(out),
            TimeExpr::MaxOf(a, b) => {
                a.time_vars(out);
                b.time_vars(out);
            }
        }
    }

    pub fn delay_syms(&self, out: &mut BTreeSet<DelaySym>) {
        match self {
            TimeExpr::Const(_) | TimeExpr::Var(_) => {}
            TimeExpr::Plus(b, ds) => {
                b.delay_syms(out);
                for d in ds {
                    if let DelayTerm::Sym(s) = d {
                        out.insert(s.clone());
                    }
                }
            }
            TimeExpr::MaxOf(a, b) => {
                a.delay_syms(out);
                b.delay_syms(out);
            }
        }
    }

    /// Replaces time variables according to `subst`.
    pub fn substitute(&self, subst: &BTreeMap<String, TimeExpr>) -> TimeExpr {
        match self {
            TimeExpr::Var(v) => subst.get(v).cloned().unwrap_or_else(|| self.clone()),
            TimeExpr::Const(_) => self.clone(),
            TimeExpr::Plus(b, ds) => b.substitute(subst).plus(ds.clone()),
            TimeExpr::MaxOf(a, b) => TimeExpr::max(a.substitute(subst), b.substitute(subst)),
        }
    }

    fn first_max(&self) -> Option<(&TimeExpr, &TimeExpr)> {
        match self {
            TimeExpr::MaxOf(a, b) => Some((a, b)),
            TimeExpr::Plus(b, _) => b.first_max(),
            _ => None,
        }
    }

    fn replace(&self, target: &TimeExpr, with: &TimeExpr) -> TimeExpr {
        if self == target {
            return with.clone();
        }
        match self {
            TimeExpr::Plus(b, ds) => b.replace(target, with).plus(ds.clone()),
            TimeExpr::MaxOf(a, b) => {
                TimeExpr::max(a.replace(target, with), b.replace(target, with))
            }
            other => other.clone(),
        }
    }

    /// Linear form. Panics on `MaxOf`; callers eliminate maxima first.
    pub fn linear(&self) -> LinExpr {
        match self {
            TimeExpr::Const(q) => LinExpr::constant(q.clone()),
            TimeExpr::Var(v) => LinExpr::var(v),
            TimeExpr::Plus(b, ds) => {
                let mut e = b.linear();
                for d in ds {
                    match d {
                        DelayTerm::Sym(s) => e.add_term(&s.name, Rational::one()),
                        DelayTerm::Const(q) => e.constant += q,
                    }
                }
                e
            }
            TimeExpr::MaxOf(..) => panic!("linear form of a max expression"),
        }
    }

    pub fn eval(&self, model: &BTreeMap<String, Rational>) -> Option<Rational> {
        match self {
            TimeExpr::Const(q) => Some(q.clone()),
            TimeExpr::Var(v) => model.get(v).cloned(),
            TimeExpr::Plus(b, ds) => {
                let mut acc = b.eval(model)?;
                for d in ds {
                    acc += match d {
                        DelayTerm::Sym(s) => model.get(&s.name)?.clone(),
                        DelayTerm::Const(q) => q.clone(),
                    };
                }
                Some(acc)
            }
            TimeExpr::MaxOf(a, b) => {
                let (a, b) = (a.eval(model)?, b.eval(model)?);
                Some(if a >= b { a } else { b })
            }
        }
    }
}

impl fmt::Display for TimeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeExpr::Const(q) => f.write_str(&fmt_rational(q)),
            TimeExpr::Var(v) => f.write_str(v),
            TimeExpr::Plus(b, ds) => {
                let mut first = true;
                if !matches!(&**b, TimeExpr::Const(q) if q.is_zero()) {
                    write!(f, "{b}")?;
                    first = false;
                }
                for d in ds {
                    if !first {
                        f.write_str(" + ")?;
                    }
                    first = false;
                    match d {
                        DelayTerm::Sym(s) => f.write_str(&s.name)?,
                        DelayTerm::Const(q) => f.write_str(&fmt_rational(q))?,
                    }
                }
                if first {
                    f.write_str("0")?;
                }
                Ok(())
            }
            TimeExpr::MaxOf(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    /// `[X]`, the whole time domain
    Full,
    /// `[X | X <= bound]`
    UpTo(TimeExpr),
    /// `[x]`, bound to a constant
    Singleton(Rational),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScopedTime {
    pub var: String,
    pub scope: Scope,
}

impl ScopedTime {
    pub fn full(var: impl Into<String>) -> Self {
        ScopedTime { var: var.into(), scope: Scope::Full }
    }

    pub fn up_to(var: impl Into<String>, bound: TimeExpr) -> Self {
        ScopedTime { var: var.into(), scope: Scope::UpTo(bound) }
    }

    /// Constraint atoms implied by the scope.
    pub fn atoms(&self) -> Vec<Atom> {
        let v = TimeExpr::var(self.var.clone());
        match &self.scope {
            Scope::Full => vec![],
            Scope::UpTo(b) => vec![Atom::Le(v, b.clone())],
            Scope::Singleton(q) => vec![Atom::Eq(v, TimeExpr::Const(q.clone()))],
        }
    }
}

impl fmt::Display for ScopedTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.scope {
            Scope::Full => write!(f, "[{}]", self.var),
            Scope::UpTo(b) => write!(f, "[{} | {} <= {}]", self.var, self.var, b),
            Scope::Singleton(q) => write!(f, "[{} | {} = {}]", self.var, self.var, fmt_rational(q)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Le(TimeExpr, TimeExpr),
    Lt(TimeExpr, TimeExpr),
    Eq(TimeExpr, TimeExpr),
}

impl Atom {
    pub fn sides(&self) -> (&TimeExpr, &TimeExpr) {
        match self {
            Atom::Le(a, b) | Atom::Lt(a, b) | Atom::Eq(a, b) => (a, b),
        }
    }

    fn map(&self, f: impl Fn(&TimeExpr) -> TimeExpr) -> Atom {
        match self {
            Atom::Le(a, b) => Atom::Le(f(a), f(b)),
            Atom::Lt(a, b) => Atom::Lt(f(a), f(b)),
            Atom::Eq(a, b) => Atom::Eq(f(a), f(b)),
        }
    }

    pub fn substitute(&self, subst: &BTreeMap<String, TimeExpr>) -> Atom {
        self.map(|e| e.substitute(subst))
    }

    pub fn has_max(&self) -> bool {
        let (a, b) = self.sides();
        a.has_max() || b.has_max()
    }

    /// Exact truth value under a total assignment.
    pub fn holds(&self, model: &BTreeMap<String, Rational>) -> Option<bool> {
        let (a, b) = self.sides();
        let (a, b) = (a.eval(model)?, b.eval(model)?);
        Some(match self {
            Atom::Le(..) => a <= b,
            Atom::Lt(..) => a < b,
            Atom::Eq(..) => a == b,
        })
    }

    /// Disjuncts of the negation.
    pub fn negation(&self) -> Vec<Atom> {
        match self {
            Atom::Le(a, b) => vec![Atom::Lt(b.clone(), a.clone())],
            Atom::Lt(a, b) => vec![Atom::Le(b.clone(), a.clone())],
            Atom::Eq(a, b) => vec![
                Atom::Lt(a.clone(), b.clone()),
                Atom::Lt(b.clone(), a.clone()),
            ],
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Le(a, b) => write!(f, "{a} <= {b}"),
            Atom::Lt(a, b) => write!(f, "{a} < {b}"),
            Atom::Eq(a, b) => write!(f, "{a} = {b}"),
        }
    }
}

pub type Model = BTreeMap<String, Rational>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub atoms: Vec<Atom>,
    /// Pinned delay values.
    pub fixed: BTreeMap<String, Rational>,
}

impl ConstraintSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>) -> Self {
        let mut sys = Self::new();
        for a in atoms {
            sys.push(a);
        }
        sys
    }

    /// Appends an atom unless already present. Insertion order is kept.
    pub fn push(&mut self, atom: Atom) {
        if !self.atoms.contains(&atom) {
            self.atoms.push(atom);
        }
    }

    pub fn with(&self, atom: Atom) -> ConstraintSystem {
        let mut s = self.clone();
        s.push(atom);
        s
    }

    pub fn extend(&mut self, atoms: impl IntoIterator<Item = Atom>) {
        for a in atoms {
            self.push(a);
        }
    }

    pub fn pin(&mut self, delay: impl Into<String>, value: Rational) {
        self.fixed.insert(delay.into(), value);
    }

    pub fn has_max(&self) -> bool {
        self.atoms.iter().any(Atom::has_max)
    }

    pub fn delay_syms(&self) -> BTreeSet<DelaySym> {
        let mut out = BTreeSet::new();
        for a in &self.atoms {
            let (l, r) = a.sides();
            l.delay_syms(&mut out);
            r.delay_syms(&mut out);
        }
        out
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for a in &self.atoms {
            let (l, r) = a.sides();
            l.time_vars(&mut out);
            r.time_vars(&mut out);
        }
        out.extend(self.delay_syms().into_iter().map(|d| d.name));
        out.extend(self.fixed.keys().cloned());
        out
    }

    /// Whether `model` satisfies every atom, every pin and delay nonnegativity.
    pub fn satisfied_by(&self, model: &Model) -> bool {
        let delays_ok = self
            .delay_syms()
            .iter()
            .all(|d| model.get(&d.name).is_some_and(|v| !v.is_negative()));
        let pins_ok = self.fixed.iter().all(|(k, v)| model.get(k) == Some(v));
        delays_ok && pins_ok && self.atoms.iter().all(|a| a.holds(model) == Some(true))
    }

    pub fn render(&self) -> Vec<String> {
        let mut out: Vec<String> = self.atoms.iter().map(ToString::to_string).collect();
        for (k, v) in &self.fixed {
            out.push(format!("{k} = {}", fmt_rational(v)));
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeError {
    #[error("E_CONFLICT: {var} bound to both {first} and {second}")]
    Conflict { var: String, first: String, second: String },
}

/// One syntactic occurrence of a time variable, optionally equated to a value
/// at that position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub var: String,
    pub value: Option<TimeExpr>,
}

impl Occurrence {
    pub fn bare(var: impl Into<String>) -> Self {
        Occurrence { var: var.into(), value: None }
    }

    pub fn bound(var: impl Into<String>, value: TimeExpr) -> Self {
        Occurrence { var: var.into(), value: Some(value) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Binding {
    pub bound: BTreeMap<String, TimeExpr>,
    /// Variables never given a value; their scope is the full domain.
    pub free: BTreeSet<String>,
}

impl Binding {
    pub fn scope_of(&self, var: &str) -> Option<ScopedTime> {
        if self.free.contains(var) {
            return Some(ScopedTime::full(var));
        }
        match self.bound.get(var) {
            Some(TimeExpr::Const(q)) => Some(ScopedTime {
                var: var.to_string(),
                scope: Scope::Singleton(q.clone()),
            }),
            _ => None,
        }
    }
}

/// Binds each variable at its first valued occurrence. Later occurrences reuse
/// that binding; the result is resolved transitively.
pub fn bind_first_occurrence(occurrences: &[Occurrence]) -> Result<Binding, TimeError> {
    let mut bound: BTreeMap<String, TimeExpr> = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for occ in occurrences {
        seen.insert(occ.var.clone());
        let Some(value) = &occ.value else { continue };
        match bound.get(&occ.var) {
            None => {
                bound.insert(occ.var.clone(), value.clone());
            }
            Some(first) => {
                let first_r = resolve(first, &bound, 0);
                let value_r = resolve(value, &bound, 0);
                if let (TimeExpr::Const(a), TimeExpr::Const(b)) = (&first_r, &value_r) {
                    if a != b {
                        return Err(TimeError::Conflict {
                            var: occ.var.clone(),
                            first: fmt_rational(a),
                            second: fmt_rational(b),
                        });
                    }
                }
            }
        }
    }
    let resolved = bound
        .iter()
        .map(|(k, v)| (k.clone(), resolve(v, &bound, 0)))
        .collect::<BTreeMap<_, _>>();
    let free = seen.into_iter().filter(|v| !resolved.contains_key(v)).collect();
    Ok(Binding { bound: resolved, free })
}

fn resolve(e: &TimeExpr, bound: &BTreeMap<String, TimeExpr>, depth: usize) -> TimeExpr {
    if depth > bound.len() {
        return e.clone();
    }
    let next = e.substitute(bound);
    if next == *e {
        next
    } else {
        resolve(&next, bound, depth + 1)
    }
}

/// Splits every `max(a, b)` into the branch `b <= a` (max is `a`) and the
/// branch `a < b` (max is `b`).
pub fn eliminate_max(sys: &ConstraintSystem) -> Vec<ConstraintSystem> {
    let Some(target) = sys.atoms.iter().find_map(|a| {
        let (l, r) = a.sides();
        l.first_max().or_else(|| r.first_max())
    }) else {
        return vec![sys.clone()];
    };
    let (a, b) = (target.0.clone(), target.1.clone());
    let whole = TimeExpr::max(a.clone(), b.clone());

    let branch = |pick: &TimeExpr, guard: Atom| {
        let mut s = ConstraintSystem { atoms: Vec::new(), fixed: sys.fixed.clone() };
        for atom in &sys.atoms {
            s.push(atom.map(|e| e.replace(&whole, pick)));
        }
        s.push(guard);
        s
    };
    let left = branch(&a, Atom::Le(b.clone(), a.clone()));
    let right = branch(&b, Atom::Lt(a.clone(), b.clone()));
    let mut out = eliminate_max(&left);
    out.extend(eliminate_max(&right));
    out
}

/// Decides satisfiability; on success returns a rational model covering every
/// variable of the system.
pub fn is_satisfiable(sys: &ConstraintSystem) -> (bool, Option<Model>) {
    for branch in eliminate_max(sys) {
        if let Some(m) = solve(&branch) {
            return (true, Some(m));
        }
    }
    (false, None)
}

/// `sys` entails `atom` iff no model of `sys` violates it.
pub fn entails(sys: &ConstraintSystem, atom: &Atom) -> bool {
    refute(sys, atom).is_none()
}

/// A model of `sys` violating `atom`, if one exists.
pub fn refute(sys: &ConstraintSystem, atom: &Atom) -> Option<Model> {
    atom.negation()
        .into_iter()
        .find_map(|neg| is_satisfiable(&sys.with(neg)).1)
}

/// `a . x + c` over named variables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LinExpr {
    pub terms: BTreeMap<String, Rational>,
    pub constant: Rational,
}

impl LinExpr {
    pub fn constant(q: Rational) -> Self {
        LinExpr { terms: BTreeMap::new(), constant: q }
    }

    pub fn var(name: &str) -> Self {
        let mut e = LinExpr::constant(Rational::zero());
        e.add_term(name, Rational::one());
        e
    }

    pub fn add_term(&mut self, name: &str, coef: Rational) {
        let entry = self.terms.entry(name.to_string()).or_insert_with(Rational::zero);
        *entry += coef;
        if entry.is_zero() {
            self.terms.remove(name);
        }
    }

    pub fn sub(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        for (v, c) in &other.terms {
            out.add_term(v, -c.clone());
        }
        out.constant -= &other.constant;
        out
    }

    fn scaled(&self, k: &Rational) -> LinExpr {
        LinExpr {
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    fn plus(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        for (v, c) in &other.terms {
            out.add_term(v, c.clone());
        }
        out.constant += &other.constant;
        out
    }
}

/// `expr < 0` when strict, else `expr <= 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Ineq {
    expr: LinExpr,
    strict: bool,
}

impl Ineq {
    fn normalized(mut self) -> Ineq {
        if let Some(lead) = self.expr.terms.values().next().map(|c| c.abs()) {
            let inv = lead.recip();
            self.expr = self.expr.scaled(&inv);
        }
        self
    }

    /// `None` if trivially true, `Some(false)` if trivially false.
    fn trivial(&self) -> Option<bool> {
        if !self.expr.terms.is_empty() {
            return None;
        }
        let c = &self.expr.constant;
        Some(if self.strict { c.is_negative() } else { !c.is_positive() })
    }
}

/// Inequalities of the system plus the equalities (`expr = 0`) from `Eq`
/// atoms and pinned delays.
fn split(sys: &ConstraintSystem) -> (Vec<Ineq>, Vec<LinExpr>) {
    let (mut ineqs, mut eqs) = (Vec::new(), Vec::new());
    for atom in &sys.atoms {
        let (l, r) = atom.sides();
        let diff = l.linear().sub(&r.linear());
        match atom {
            Atom::Le(..) => ineqs.push(Ineq { expr: diff, strict: false }),
            Atom::Lt(..) => ineqs.push(Ineq { expr: diff, strict: true }),
            Atom::Eq(..) => eqs.push(diff),
        }
    }
    for d in sys.delay_syms() {
        ineqs.push(Ineq {
            expr: LinExpr::var(&d.name).scaled(&-Rational::one()),
            strict: false,
        });
    }
    for (k, v) in &sys.fixed {
        eqs.push(LinExpr::var(k).sub(&LinExpr::constant(v.clone())));
    }
    (ineqs, eqs)
}

impl LinExpr {
    /// Replaces `var` by `with`.
    fn subst(&self, var: &str, with: &LinExpr) -> LinExpr {
        match self.terms.get(var) {
            None => self.clone(),
            Some(c) => {
                let mut out = self.clone();
                out.terms.remove(var);
                out.plus(&with.scaled(c))
            }
        }
    }
}

/// Sorts, then keeps only the tightest of inequalities sharing a left side.
fn prune(ineqs: &mut Vec<Ineq>) {
    ineqs.sort_by(|a, b| {
        a.expr.terms.cmp(&b.expr.terms).then_with(|| b.expr.constant.cmp(&a.expr.constant)).then(b.strict.cmp(&a.strict))
    });
    ineqs.dedup_by(|later, kept| later.expr.terms == kept.expr.terms);
}

fn solve(sys: &ConstraintSystem) -> Option<Model> {
    let vars: BTreeSet<String> = sys.variables();
    let (ineqs, mut eqs) = split(sys);

    // Gaussian elimination on the equalities first.
    let mut defs: Vec<(String, LinExpr)> = Vec::new();
    let mut current = ineqs;
    while let Some(eq) = eqs.pop() {
        let Some((v, c)) = eq.terms.iter().next_back().map(|(v, c)| (v.clone(), c.clone())) else {
            if eq.constant.is_zero() {
                continue;
            }
            return None;
        };
        let mut rhs = eq.clone();
        rhs.terms.remove(&v);
        let rhs = rhs.scaled(&-c.recip());
        for e in eqs.iter_mut() {
            *e = e.subst(&v, &rhs);
        }
        for i in current.iter_mut() {
            i.expr = i.expr.subst(&v, &rhs);
        }
        for (_, d) in defs.iter_mut() {
            *d = d.subst(&v, &rhs);
        }
        defs.push((v, rhs));
    }

    let mut kept = Vec::new();
    for ineq in current {
        match ineq.trivial() {
            Some(true) => {}
            Some(false) => return None,
            None => kept.push(ineq.normalized()),
        }
    }
    let mut current = kept;
    prune(&mut current);

    let mut remaining: BTreeSet<String> = vars.iter().filter(|v| !defs.iter().any(|(d, _)| d == *v)).cloned().collect();
    let mut stages: Vec<(String, Vec<Ineq>)> = Vec::new();
    while !remaining.is_empty() {
        // Eliminate the variable producing the fewest new rows.
        let v = remaining
            .iter()
            .min_by_key(|v| {
                let (mut pos, mut neg) = (0usize, 0usize);
                for i in &current {
                    match i.expr.terms.get(*v) {
                        Some(c) if c.is_positive() => pos += 1,
                        Some(_) => neg += 1,
                        None => {}
                    }
                }
                (pos * neg) as isize - (pos + neg) as isize
            })
            .cloned()
            .unwrap();
        remaining.remove(&v);
        let (mut touching, mut rest) = (Vec::new(), Vec::new());
        for ineq in current {
            if ineq.expr.terms.contains_key(&v) {
                touching.push(ineq);
            } else {
                rest.push(ineq);
            }
        }
        let (pos, neg): (Vec<&Ineq>, Vec<&Ineq>) = touching.iter().partition(|i| i.expr.terms[&v].is_positive());
        for p in &pos {
            for n in &neg {
                let a = p.expr.terms[&v].clone();
                let b = -n.expr.terms[&v].clone();
                let combined = Ineq {
                    expr: p.expr.scaled(&b).plus(&n.expr.scaled(&a)),
                    strict: p.strict || n.strict,
                };
                match combined.trivial() {
                    Some(true) => {}
                    Some(false) => return None,
                    None => rest.push(combined.normalized()),
                }
            }
        }
        prune(&mut rest);
        stages.push((v, touching));
        current = rest;
    }
    if current.iter().any(|i| i.trivial() == Some(false)) {
        return None;
    }

    let mut model = Model::new();
    for (v, ineqs) in stages.iter().rev() {
        let value = pick_value(v, ineqs, &model)?;
        model.insert(v.clone(), value);
    }
    for (v, expr) in defs.iter().rev() {
        let mut value = expr.constant.clone();
        for (w, c) in &expr.terms {
            value += c * model.get(w)?;
        }
        model.insert(v.clone(), value);
    }
    Some(model)
}

struct Bound {
    value: Rational,
    strict: bool,
}

fn pick_value(v: &str, ineqs: &[Ineq], model: &Model) -> Option<Rational> {
    let mut lower: Option<Bound> = None;
    let mut upper: Option<Bound> = None;
    for ineq in ineqs {
        let a = ineq.expr.terms[v].clone();
        let mut rest = ineq.expr.constant.clone();
        for (w, c) in &ineq.expr.terms {
            if w != v {
                rest += c * model.get(w)?;
            }
        }
        // a*v + rest (<|<=) 0
        let bound = -rest / &a;
        if a.is_positive() {
            let tighter = match &upper {
                None => true,
                Some(u) => bound < u.value || (bound == u.value && ineq.strict),
            };
            if tighter {
                upper = Some(Bound { value: bound, strict: ineq.strict });
            }
        } else {
            let tighter = match &lower {
                None => true,
                Some(l) => bound > l.value || (bound == l.value && ineq.strict),
            };
            if tighter {
                lower = Some(Bound { value: bound, strict: ineq.strict });
            }
        }
    }
    let fits = |x: &Rational| {
        let lo_ok = lower.as_ref().is_none_or(|l| if l.strict { *x > l.value } else { *x >= l.value });
        let hi_ok = upper.as_ref().is_none_or(|u| if u.strict { *x < u.value } else { *x <= u.value });
        lo_ok && hi_ok
    };
    let mut candidates: Vec<Rational> = Vec::new();
    match (&lower, &upper) {
        (None, None) => candidates.push(Rational::zero()),
        (Some(l), _) => {
            candidates.push(l.value.clone());
            candidates.push(l.value.floor() + Rational::one());
        }
        (None, Some(u)) => {
            candidates.push(Rational::zero());
            candidates.push(u.value.clone());
            candidates.push(u.value.ceil() - Rational::one());
        }
    }
    if let (Some(l), Some(u)) = (&lower, &upper) {
        candidates.push((&l.value + &u.value) / rat(2));
    }
    candidates.into_iter().find(|x| fits(x))
}
