//! Formulas of the accountability logic, its rules and the backward-chaining
//! prover.

mod prover;
mod replay;
mod rules;
pub mod term;

use std::fmt;

use crate::message::{KeyTerm, Msg, PartyId};
use crate::time::{ScopedTime, TimeExpr};

pub use prover::{prove, Derivation, KnowledgeBase, ProveOutcome, DEFAULT_DEPTH};
pub use replay::replay;
pub use rules::{builtin_rules, register_assumption, Rule, RuleError, RuleKind, SideAtom};
pub use term::Term;

/// Time annotation of a formula: a plain expression (`T4`, `max(Ta, Tb)`)
/// or a scoped binding (`[Ty | Ty <= Te]`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stamp {
    At(TimeExpr),
    Scoped(ScopedTime),
}

impl Stamp {
    pub fn at_var(name: impl Into<String>) -> Stamp {
        Stamp::At(TimeExpr::var(name))
    }

    /// The time expression this stamp denotes.
    pub fn expr(&self) -> TimeExpr {
        match self {
            Stamp::At(e) => e.clone(),
            Stamp::Scoped(s) => TimeExpr::var(s.var.clone()),
        }
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stamp::At(e) => write!(f, "{e}"),
            Stamp::Scoped(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    /// `A ≻ x`: A can convince others of x.
    CanProve(PartyId, Box<Formula>),
    Sent(PartyId, Msg, Stamp),
    Possesses(PartyId, Msg, Option<Stamp>),
    Received(PartyId, Msg, Stamp),
    PubKeyOf(KeyTerm, PartyId),
    SharedKeyOf(KeyTerm, PartyId, PartyId),
    Conj(Vec<Formula>),
}

impl Formula {
    /// `A ≻ body`, collapsing `A ≻ A ≻ x` to `A ≻ x`.
    pub fn can_prove(agent: PartyId, body: Formula) -> Formula {
        match body {
            Formula::CanProve(inner, b) if inner == agent => Formula::CanProve(agent, b),
            other => Formula::CanProve(agent, Box::new(other)),
        }
    }

    /// Flattened, sorted and deduplicated conjunction.
    pub fn conj(items: Vec<Formula>) -> Formula {
        let mut flat = Vec::new();
        for f in items {
            match f {
                Formula::Conj(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        Formula::Conj(flat)
    }

    pub fn to_term(&self) -> Term {
        term::formula_to_term(self)
    }

    pub fn from_term(t: &Term) -> Result<Formula, String> {
        term::term_to_formula(t)
    }

    /// Messages mentioned anywhere in the formula.
    pub fn messages(&self, out: &mut Vec<Msg>) {
        match self {
            Formula::CanProve(_, b) => b.messages(out),
            Formula::Sent(_, m, _) | Formula::Possesses(_, m, _) | Formula::Received(_, m, _) => {
                out.push(m.clone())
            }
            Formula::PubKeyOf(k, _) | Formula::SharedKeyOf(k, _, _) => out.push(Msg::Key(k.clone())),
            Formula::Conj(fs) => fs.iter().for_each(|f| f.messages(out)),
        }
    }

    /// Rendering with the logic's usual symbols (≻, →, ∋, ←).
    pub fn symbolic(&self) -> String {
        match self {
            Formula::CanProve(a, b) => format!("{a} ≻ {}", b.symbolic()),
            Formula::Sent(a, m, t) => format!("{a} → {} at {}", symbolic_msg(m), t),
            Formula::Possesses(a, m, Some(t)) => format!("{a} ∋ {} at {}", symbolic_msg(m), t),
            Formula::Possesses(a, m, None) => format!("{a} ∋ {}", symbolic_msg(m)),
            Formula::Received(a, m, t) => format!("{a} ← {} at {}", symbolic_msg(m), t),
            Formula::PubKeyOf(k, a) => format!("→^{{{}}} {a}", symbolic_key(k)),
            Formula::SharedKeyOf(k, a, b) => format!("{a} ←{}→ {b}", symbolic_key(k)),
            Formula::Conj(fs) => {
                let parts: Vec<String> = fs.iter().map(Formula::symbolic).collect();
                format!("({})", parts.join(" ∧ "))
            }
        }
    }
}

/// DSL surface syntax.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::CanProve(a, b) => write!(f, "{a} proves {b}"),
            Formula::Sent(a, m, t) => write!(f, "{a} sent {m} @ {t}"),
            Formula::Possesses(a, m, Some(t)) => write!(f, "{a} has {m} @ {t}"),
            Formula::Possesses(a, m, None) => write!(f, "{a} has {m}"),
            Formula::Received(a, m, t) => write!(f, "{a} received {m} @ {t}"),
            Formula::PubKeyOf(k, a) => write!(f, "pubkey {k} of {a}"),
            Formula::SharedKeyOf(k, a, b) => write!(f, "sharedkey {k} between {a} {b}"),
            Formula::Conj(fs) => {
                f.write_str("(")?;
                for (i, x) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

pub fn symbolic_key(k: &KeyTerm) -> String {
    match k {
        KeyTerm::Public(p) => format!("K_{p}"),
        KeyTerm::Private(p) => format!("K_{p}^-1"),
        KeyTerm::Shared { name, .. } => name.clone(),
        KeyTerm::Session(n) => n.clone(),
    }
}

pub fn symbolic_msg(m: &Msg) -> String {
    match m {
        Msg::Atom(a) => a.clone(),
        Msg::Pair(a, b) => format!("({}, {})", symbolic_msg(a), symbolic_msg(b)),
        Msg::Enc(b, k) => format!("{{{}}}_{}", symbolic_msg(b), symbolic_key(k)),
        Msg::Hash(b) => format!("h({})", symbolic_msg(b)),
        Msg::Key(k) => symbolic_key(k),
    }
}
