//! Untyped terms with metavariables, used for rule patterns and unification.
//!
//! Every typed value of the logic (formulas, messages, keys, time stamps)
//! has a term encoding. The text form is a plain functional syntax,
//! `enc(atom(Goods), session(k))`, readable without any declarations.

use std::collections::HashMap;
use std::fmt;

use crate::message::{dual_key, KeyTerm, Msg, PartyId};
use crate::time::{fmt_rational, parse_rational, DelayRole, DelaySym, DelayTerm, Scope, ScopedTime, TimeExpr};

use super::{Formula, Stamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Proves,
    Sent,
    Has,
    Recv,
    PubKeyOf,
    SharedKeyOf,
    Conj,
    Atom,
    Pair,
    Enc,
    Hash,
    Key,
    Pk,
    Sk,
    Shared,
    Session,
    TVar,
    TConst,
    Plus,
    Delay,
    Max,
    Scoped,
    Full,
    UpTo,
    Single,
    NoTime,
    /// evaluated: dual of a ground key
    Dual,
    /// evaluated: the time expression carried by a stamp
    TimeOf,
}

const OPS: &[(Op, &str)] = &[
    (Op::Proves, "proves"),
    (Op::Sent, "sent"),
    (Op::Has, "has"),
    (Op::Recv, "recv"),
    (Op::PubKeyOf, "pubkeyof"),
    (Op::SharedKeyOf, "sharedkeyof"),
    (Op::Conj, "conj"),
    (Op::Atom, "atom"),
    (Op::Pair, "pair"),
    (Op::Enc, "enc"),
    (Op::Hash, "hash"),
    (Op::Key, "key"),
    (Op::Pk, "pk"),
    (Op::Sk, "sk"),
    (Op::Shared, "shared"),
    (Op::Session, "session"),
    (Op::TVar, "tvar"),
    (Op::TConst, "tconst"),
    (Op::Plus, "plus"),
    (Op::Delay, "delay"),
    (Op::Max, "max"),
    (Op::Scoped, "scoped"),
    (Op::Full, "full"),
    (Op::UpTo, "upto"),
    (Op::Single, "single"),
    (Op::NoTime, "notime"),
    (Op::Dual, "dual"),
    (Op::TimeOf, "timeof"),
];

impl Op {
    pub fn name(self) -> &'static str {
        OPS.iter().find(|(o, _)| *o == self).map(|(_, n)| *n).unwrap_or("?")
    }

    pub fn from_name(s: &str) -> Option<Op> {
        OPS.iter().find(|(_, n)| *n == s).map(|(o, _)| *o)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Meta(String),
    Sym(String),
    App(Op, Vec<Term>),
}

impl Term {
    pub fn meta(name: impl Into<String>) -> Term {
        Term::Meta(name.into())
    }

    pub fn sym(name: impl Into<String>) -> Term {
        Term::Sym(name.into())
    }

    pub fn app(op: Op, args: Vec<Term>) -> Term {
        Term::App(op, args)
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Meta(_) => false,
            Term::Sym(_) => true,
            Term::App(_, args) => args.iter().all(Term::is_ground),
        }
    }

    pub fn metas(&self, out: &mut Vec<String>) {
        match self {
            Term::Meta(m) => {
                if !out.contains(m) {
                    out.push(m.clone());
                }
            }
            Term::Sym(_) => {}
            Term::App(_, args) => args.iter().for_each(|a| a.metas(out)),
        }
    }

    pub fn has_eval_node(&self) -> bool {
        match self {
            Term::App(Op::Dual | Op::TimeOf, _) => true,
            Term::App(_, args) => args.iter().any(Term::has_eval_node),
            _ => false,
        }
    }

    pub fn rename(&self, f: &impl Fn(&str) -> String) -> Term {
        match self {
            Term::Meta(m) => Term::Meta(f(m)),
            Term::Sym(_) => self.clone(),
            Term::App(op, args) => Term::App(*op, args.iter().map(|a| a.rename(f)).collect()),
        }
    }

    /// Applies `subst` exhaustively, then evaluates `dual` and `timeof`
    /// nodes whose arguments are ground.
    pub fn resolve(&self, subst: &Subst) -> Term {
        match self {
            Term::Meta(m) => match subst.get(m) {
                Some(t) => t.resolve(subst),
                None => self.clone(),
            },
            Term::Sym(_) => self.clone(),
            Term::App(op, args) => {
                let args: Vec<Term> = args.iter().map(|a| a.resolve(subst)).collect();
                evaluate(*op, args)
            }
        }
    }

    /// Variant check: equal up to a consistent renaming of metavariables.
    pub fn is_variant(&self, other: &Term) -> bool {
        fn go<'a>(a: &'a Term, b: &'a Term, fwd: &mut HashMap<&'a str, &'a str>, back: &mut HashMap<&'a str, &'a str>) -> bool {
            match (a, b) {
                (Term::Meta(x), Term::Meta(y)) => {
                    let f = *fwd.entry(x).or_insert(y);
                    let r = *back.entry(y).or_insert(x);
                    f == y && r == x
                }
                (Term::Sym(x), Term::Sym(y)) => x == y,
                (Term::App(o1, a1), Term::App(o2, a2)) => {
                    o1 == o2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| go(x, y, fwd, back))
                }
                _ => false,
            }
        }
        go(self, other, &mut HashMap::new(), &mut HashMap::new())
    }

    pub fn parse(s: &str) -> Result<Term, String> {
        let mut p = TermParser { chars: s.chars().collect(), pos: 0 };
        let t = p.term()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(format!("trailing input at offset {}", p.pos));
        }
        Ok(t)
    }
}

fn evaluate(op: Op, args: Vec<Term>) -> Term {
    match op {
        Op::Dual if args.len() == 1 && args[0].is_ground() => match term_to_key(&args[0]) {
            Ok(k) => key_to_term(&dual_key(&k)),
            Err(_) => Term::App(op, args),
        },
        Op::TimeOf if args.len() == 1 => match &args[0] {
            Term::App(Op::Scoped, inner) if inner.len() == 2 => Term::App(Op::TVar, vec![inner[0].clone()]),
            Term::App(Op::TVar | Op::TConst | Op::Plus | Op::Max, _) => args[0].clone(),
            _ => Term::App(op, args),
        },
        _ => Term::App(op, args),
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Meta(m) => write!(f, "?{m}"),
            Term::Sym(s) => f.write_str(s),
            Term::App(op, args) => {
                write!(f, "{}(", op.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

struct TermParser {
    chars: Vec<char>,
    pos: usize,
}

impl TermParser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_alphanumeric() || matches!(c, '_' | '/' | '-' | '.') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        if self.chars.get(self.pos) == Some(&'?') {
            self.pos += 1;
            let w = self.word();
            if w.is_empty() {
                return Err("empty metavariable name".into());
            }
            return Ok(Term::Meta(w));
        }
        let w = self.word();
        if w.is_empty() {
            return Err(format!("expected a term at offset {}", self.pos));
        }
        self.skip_ws();
        if self.chars.get(self.pos) != Some(&'(') {
            return Ok(Term::Sym(w));
        }
        let op = Op::from_name(&w).ok_or_else(|| format!("unknown operator `{w}`"))?;
        self.pos += 1;
        let mut args = Vec::new();
        self.skip_ws();
        if self.chars.get(self.pos) == Some(&')') {
            self.pos += 1;
            return Ok(Term::App(op, args));
        }
        loop {
            args.push(self.term()?);
            self.skip_ws();
            match self.chars.get(self.pos) {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    return Ok(Term::App(op, args));
                }
                _ => return Err(format!("expected `,` or `)` at offset {}", self.pos)),
            }
        }
    }
}

pub type Subst = HashMap<String, Term>;

fn walk<'a>(t: &'a Term, subst: &'a Subst) -> &'a Term {
    let mut cur = t;
    while let Term::Meta(m) = cur {
        match subst.get(m) {
            Some(next) => cur = next,
            None => break,
        }
    }
    cur
}

fn occurs(m: &str, t: &Term, subst: &Subst) -> bool {
    match walk(t, subst) {
        Term::Meta(x) => x == m,
        Term::Sym(_) => false,
        Term::App(_, args) => args.iter().any(|a| occurs(m, a, subst)),
    }
}

/// Syntactic unification with occurs check. Evaluable nodes are resolved
/// first where possible; unresolved ones only unify with metavariables or
/// identical nodes.
pub fn unify(a: &Term, b: &Term, subst: &mut Subst) -> bool {
    let a = walk(a, subst).clone();
    let b = walk(b, subst).clone();
    let a = if a.has_eval_node() { a.resolve(subst) } else { a };
    let b = if b.has_eval_node() { b.resolve(subst) } else { b };
    match (&a, &b) {
        (Term::Meta(x), Term::Meta(y)) if x == y => true,
        (Term::Meta(x), other) | (other, Term::Meta(x)) => {
            if occurs(x, other, subst) {
                return false;
            }
            subst.insert(x.clone(), other.clone());
            true
        }
        (Term::Sym(x), Term::Sym(y)) => x == y,
        (Term::App(o1, a1), Term::App(o2, a2)) => {
            o1 == o2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| unify(x, y, subst))
        }
        _ => false,
    }
}

/// One-way match of `pattern` against a ground term.
pub fn matches_ground(pattern: &Term, ground: &Term) -> bool {
    let mut s = Subst::new();
    unify(pattern, ground, &mut s)
}

// ---- typed encodings ----

pub fn party_to_term(p: &PartyId) -> Term {
    Term::Sym(p.0.clone())
}

pub fn key_to_term(k: &KeyTerm) -> Term {
    match k {
        KeyTerm::Public(p) => Term::App(Op::Pk, vec![party_to_term(p)]),
        KeyTerm::Private(p) => Term::App(Op::Sk, vec![party_to_term(p)]),
        KeyTerm::Shared { name, endpoints } => Term::App(
            Op::Shared,
            vec![Term::sym(name.clone()), party_to_term(&endpoints.0), party_to_term(&endpoints.1)],
        ),
        KeyTerm::Session(name) => Term::App(Op::Session, vec![Term::sym(name.clone())]),
    }
}

pub fn msg_to_term(m: &Msg) -> Term {
    match m {
        Msg::Atom(a) => Term::App(Op::Atom, vec![Term::sym(a.clone())]),
        Msg::Pair(a, b) => Term::App(Op::Pair, vec![msg_to_term(a), msg_to_term(b)]),
        Msg::Enc(b, k) => Term::App(Op::Enc, vec![msg_to_term(b), key_to_term(k)]),
        Msg::Hash(b) => Term::App(Op::Hash, vec![msg_to_term(b)]),
        Msg::Key(k) => Term::App(Op::Key, vec![key_to_term(k)]),
    }
}

pub fn time_to_term(e: &TimeExpr) -> Term {
    match e {
        TimeExpr::Const(q) => Term::App(Op::TConst, vec![Term::sym(fmt_rational(q))]),
        TimeExpr::Var(v) => Term::App(Op::TVar, vec![Term::sym(v.clone())]),
        TimeExpr::Plus(b, ds) => {
            let mut args = vec![time_to_term(b)];
            for d in ds {
                args.push(match d {
                    DelayTerm::Sym(s) => Term::App(
                        Op::Delay,
                        vec![
                            Term::sym(s.name.clone()),
                            Term::sym(match s.role {
                                DelayRole::StepDelay => "step",
                                DelayRole::WaitingTime => "wait",
                            }),
                        ],
                    ),
                    DelayTerm::Const(q) => Term::App(Op::TConst, vec![Term::sym(fmt_rational(q))]),
                });
            }
            Term::App(Op::Plus, args)
        }
        TimeExpr::MaxOf(a, b) => Term::App(Op::Max, vec![time_to_term(a), time_to_term(b)]),
    }
}

pub fn stamp_to_term(s: &Stamp) -> Term {
    match s {
        Stamp::At(e) => time_to_term(e),
        Stamp::Scoped(st) => {
            let scope = match &st.scope {
                Scope::Full => Term::App(Op::Full, vec![]),
                Scope::UpTo(b) => Term::App(Op::UpTo, vec![time_to_term(b)]),
                Scope::Singleton(q) => Term::App(Op::Single, vec![Term::sym(fmt_rational(q))]),
            };
            Term::App(Op::Scoped, vec![Term::sym(st.var.clone()), scope])
        }
    }
}

pub fn formula_to_term(f: &Formula) -> Term {
    match f {
        Formula::CanProve(a, body) => Term::App(Op::Proves, vec![party_to_term(a), formula_to_term(body)]),
        Formula::Sent(a, m, t) => Term::App(Op::Sent, vec![party_to_term(a), msg_to_term(m), stamp_to_term(t)]),
        Formula::Possesses(a, m, t) => Term::App(
            Op::Has,
            vec![
                party_to_term(a),
                msg_to_term(m),
                t.as_ref().map(stamp_to_term).unwrap_or(Term::App(Op::NoTime, vec![])),
            ],
        ),
        Formula::Received(a, m, t) => Term::App(Op::Recv, vec![party_to_term(a), msg_to_term(m), stamp_to_term(t)]),
        Formula::PubKeyOf(k, a) => Term::App(Op::PubKeyOf, vec![key_to_term(k), party_to_term(a)]),
        Formula::SharedKeyOf(k, a, b) => {
            Term::App(Op::SharedKeyOf, vec![key_to_term(k), party_to_term(a), party_to_term(b)])
        }
        Formula::Conj(fs) => Term::App(Op::Conj, fs.iter().map(formula_to_term).collect()),
    }
}

fn bad(what: &str, t: &Term) -> String {
    format!("not a {what}: {t}")
}

pub fn term_to_party(t: &Term) -> Result<PartyId, String> {
    match t {
        Term::Sym(s) => Ok(PartyId(s.clone())),
        _ => Err(bad("party", t)),
    }
}

fn sym(t: &Term) -> Result<String, String> {
    match t {
        Term::Sym(s) => Ok(s.clone()),
        _ => Err(bad("name", t)),
    }
}

pub fn term_to_key(t: &Term) -> Result<KeyTerm, String> {
    match t {
        Term::App(Op::Pk, a) if a.len() == 1 => Ok(KeyTerm::Public(term_to_party(&a[0])?)),
        Term::App(Op::Sk, a) if a.len() == 1 => Ok(KeyTerm::Private(term_to_party(&a[0])?)),
        Term::App(Op::Shared, a) if a.len() == 3 => Ok(KeyTerm::shared(
            sym(&a[0])?,
            term_to_party(&a[1])?,
            term_to_party(&a[2])?,
        )),
        Term::App(Op::Session, a) if a.len() == 1 => Ok(KeyTerm::Session(sym(&a[0])?)),
        _ => Err(bad("key", t)),
    }
}

pub fn term_to_msg(t: &Term) -> Result<Msg, String> {
    match t {
        Term::App(Op::Atom, a) if a.len() == 1 => Ok(Msg::Atom(sym(&a[0])?)),
        Term::App(Op::Pair, a) if a.len() == 2 => Ok(Msg::pair(term_to_msg(&a[0])?, term_to_msg(&a[1])?)),
        Term::App(Op::Enc, a) if a.len() == 2 => Ok(Msg::enc(term_to_msg(&a[0])?, term_to_key(&a[1])?)),
        Term::App(Op::Hash, a) if a.len() == 1 => Ok(Msg::hash(term_to_msg(&a[0])?)),
        Term::App(Op::Key, a) if a.len() == 1 => Ok(Msg::Key(term_to_key(&a[0])?)),
        _ => Err(bad("message", t)),
    }
}

fn rational(t: &Term) -> Result<crate::time::Rational, String> {
    parse_rational(&sym(t)?).ok_or_else(|| bad("number", t))
}

pub fn term_to_time(t: &Term) -> Result<TimeExpr, String> {
    match t {
        Term::App(Op::TConst, a) if a.len() == 1 => Ok(TimeExpr::Const(rational(&a[0])?)),
        Term::App(Op::TVar, a) if a.len() == 1 => Ok(TimeExpr::Var(sym(&a[0])?)),
        Term::App(Op::Plus, a) if !a.is_empty() => {
            let base = term_to_time(&a[0])?;
            let mut ds = Vec::new();
            for d in &a[1..] {
                ds.push(match d {
                    Term::App(Op::Delay, x) if x.len() == 2 => {
                        let name = sym(&x[0])?;
                        DelayTerm::Sym(match sym(&x[1])?.as_str() {
                            "wait" => DelaySym::waiting(name),
                            _ => DelaySym::step(name),
                        })
                    }
                    Term::App(Op::TConst, x) if x.len() == 1 => DelayTerm::Const(rational(&x[0])?),
                    _ => return Err(bad("delay", d)),
                });
            }
            Ok(TimeExpr::Plus(Box::new(base), ds))
        }
        Term::App(Op::Max, a) if a.len() == 2 => Ok(TimeExpr::max(term_to_time(&a[0])?, term_to_time(&a[1])?)),
        _ => Err(bad("time expression", t)),
    }
}

pub fn term_to_stamp(t: &Term) -> Result<Stamp, String> {
    match t {
        Term::App(Op::Scoped, a) if a.len() == 2 => {
            let var = sym(&a[0])?;
            let scope = match &a[1] {
                Term::App(Op::Full, x) if x.is_empty() => Scope::Full,
                Term::App(Op::UpTo, x) if x.len() == 1 => Scope::UpTo(term_to_time(&x[0])?),
                Term::App(Op::Single, x) if x.len() == 1 => Scope::Singleton(rational(&x[0])?),
                other => return Err(bad("scope", other)),
            };
            Ok(Stamp::Scoped(ScopedTime { var, scope }))
        }
        _ => Ok(Stamp::At(term_to_time(t)?)),
    }
}

pub fn term_to_formula(t: &Term) -> Result<Formula, String> {
    match t {
        Term::App(Op::Proves, a) if a.len() == 2 => {
            Ok(Formula::can_prove(term_to_party(&a[0])?, term_to_formula(&a[1])?))
        }
        Term::App(Op::Sent, a) if a.len() == 3 => Ok(Formula::Sent(
            term_to_party(&a[0])?,
            term_to_msg(&a[1])?,
            term_to_stamp(&a[2])?,
        )),
        Term::App(Op::Has, a) if a.len() == 3 => Ok(Formula::Possesses(
            term_to_party(&a[0])?,
            term_to_msg(&a[1])?,
            match &a[2] {
                Term::App(Op::NoTime, x) if x.is_empty() => None,
                other => Some(term_to_stamp(other)?),
            },
        )),
        Term::App(Op::Recv, a) if a.len() == 3 => Ok(Formula::Received(
            term_to_party(&a[0])?,
            term_to_msg(&a[1])?,
            term_to_stamp(&a[2])?,
        )),
        Term::App(Op::PubKeyOf, a) if a.len() == 2 => {
            Ok(Formula::PubKeyOf(term_to_key(&a[0])?, term_to_party(&a[1])?))
        }
        Term::App(Op::SharedKeyOf, a) if a.len() == 3 => Ok(Formula::SharedKeyOf(
            term_to_key(&a[0])?,
            term_to_party(&a[1])?,
            term_to_party(&a[2])?,
        )),
        Term::App(Op::Conj, a) => Ok(Formula::conj(
            a.iter().map(term_to_formula).collect::<Result<Vec<_>, _>>()?,
        )),
        _ => Err(bad("formula", t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unify_binds_metas() {
        let pat = Term::parse("enc(?m, ?k)").unwrap();
        let ground = Term::parse("enc(atom(Goods), session(k))").unwrap();
        let mut s = Subst::new();
        assert!(unify(&pat, &ground, &mut s));
        assert_eq!(s["m"], Term::parse("atom(Goods)").unwrap());
        assert_eq!(pat.resolve(&s), ground);
    }

    #[test]
    fn occurs_check_rejects_cycles() {
        let mut s = Subst::new();
        assert!(!unify(&Term::meta("x"), &Term::parse("hash(?x)").unwrap(), &mut s));
    }

    #[test]
    fn dual_evaluates_once_ground() {
        let t = Term::parse("key(dual(?k))").unwrap();
        let mut s = Subst::new();
        s.insert("k".into(), Term::parse("sk(N)").unwrap());
        assert_eq!(t.resolve(&s), Term::parse("key(pk(N))").unwrap());
    }

    #[test]
    fn timeof_extracts_scoped_variable() {
        let t = Term::parse("max(timeof(?a), timeof(?b))").unwrap();
        let mut s = Subst::new();
        s.insert("a".into(), Term::parse("scoped(Ta, upto(tvar(Te)))").unwrap());
        s.insert("b".into(), Term::parse("tvar(T4)").unwrap());
        assert_eq!(t.resolve(&s), Term::parse("max(tvar(Ta), tvar(T4))").unwrap());
    }

    #[test]
    fn variants() {
        let a = Term::parse("sent(?x, ?y, ?x)").unwrap();
        let b = Term::parse("sent(?p, ?q, ?p)").unwrap();
        let c = Term::parse("sent(?p, ?q, ?q)").unwrap();
        assert!(a.is_variant(&b));
        assert!(!a.is_variant(&c));
    }

    #[test]
    fn text_round_trip() {
        let src = "proves(C, sent(M, atom(Goods), max(tvar(Tα), tvar(Tβ))))";
        let t = Term::parse(src).unwrap();
        assert_eq!(t.to_string(), src);
        assert!(Term::parse("foo(").is_err());
        assert!(Term::parse("bogus(a)").is_err());
    }
}
