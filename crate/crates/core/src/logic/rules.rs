use std::fmt;

use thiserror::Error;

use super::prover::KnowledgeBase;
use super::term::Term;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    /// Pattern-driven axiom.
    Axiom,
    /// Inference principle realized by the search itself (modus ponens) or
    /// by variable-arity handling (conjunction introduction).
    Schema,
    /// User-declared credible assumption.
    Assumption,
}

/// `lhs <= rhs` over time terms, emitted when a rule fires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SideAtom {
    pub lhs: Term,
    pub rhs: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub kind: RuleKind,
    pub premises: Vec<Term>,
    pub conclusion: Term,
    pub side: Vec<SideAtom>,
    /// Conclusion-only metavariables that receive fresh time variable names.
    pub fresh: Vec<String>,
    /// `(b, a)`: metavariable `b` is the declared counterpart of `a`.
    pub counterpart: Option<(String, String)>,
    pub text: String,
}

impl Rule {
    pub fn metas(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.premises {
            p.metas(&mut out);
        }
        self.conclusion.metas(&mut out);
        for s in &self.side {
            s.lhs.metas(&mut out);
            s.rhs.metas(&mut out);
        }
        out
    }

    /// Checks that every conclusion and side-constraint metavariable is
    /// bound by a premise, a fresh declaration or the counterpart clause.
    pub fn check_bound(&self) -> Result<(), RuleError> {
        let mut bound = Vec::new();
        for p in &self.premises {
            p.metas(&mut bound);
        }
        bound.extend(self.fresh.iter().cloned());
        if let Some((b, a)) = &self.counterpart {
            if !bound.contains(a) {
                return Err(RuleError::UnboundMetavar { rule: self.name.clone(), meta: a.clone() });
            }
            bound.push(b.clone());
        }
        let mut used = Vec::new();
        self.conclusion.metas(&mut used);
        for s in &self.side {
            s.lhs.metas(&mut used);
            s.rhs.metas(&mut used);
        }
        match used.into_iter().find(|m| !bound.contains(m)) {
            Some(meta) => Err(RuleError::UnboundMetavar { rule: self.name.clone(), meta }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.text)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("E_UNBOUND_METAVAR: rule {rule} uses ?{meta} in its conclusion without binding it")]
    UnboundMetavar { rule: String, meta: String },
}

fn t(s: &str) -> Term {
    Term::parse(s).unwrap_or_else(|e| panic!("builtin pattern `{s}`: {e}"))
}

fn axiom(name: &str, text: &str, premises: &[&str], conclusion: &str) -> Rule {
    Rule {
        name: name.into(),
        kind: RuleKind::Axiom,
        premises: premises.iter().map(|p| t(p)).collect(),
        conclusion: t(conclusion),
        side: vec![],
        fresh: vec![],
        counterpart: None,
        text: text.into(),
    }
}

fn schema(name: &str, text: &str) -> Rule {
    Rule {
        name: name.into(),
        kind: RuleKind::Schema,
        premises: vec![],
        conclusion: Term::App(super::term::Op::Conj, vec![]),
        side: vec![],
        fresh: vec![],
        counterpart: None,
        text: text.into(),
    }
}

fn origin(name: &str, text: &str, key_premise: &str) -> Rule {
    Rule {
        side: vec![SideAtom { lhs: t("tvar(?Ty)"), rhs: t("timeof(?Tx)") }],
        fresh: vec!["Ty".into()],
        ..axiom(
            name,
            text,
            &["has(?A, enc(?m, ?K), ?Tx)", key_premise],
            "proves(?A, sent(?B, ?m, scoped(?Ty, upto(timeof(?Tx)))))",
        )
    }
}

/// The built-in axioms in search order.
pub fn builtin_rules() -> Vec<Rule> {
    let mut a3 = origin(
        "A3",
        "A has {m}_{K_B^-1} at Tx, A proves pubkey K_B of B => A proves B sent m at [Ty | Ty <= Tx]",
        "proves(?A, pubkeyof(pk(?B), ?B))",
    );
    a3.premises[0] = t("has(?A, enc(?m, sk(?B)), ?Tx)");
    let a3s = origin(
        "A3s",
        "A has {m}_K at Tx, A proves sharedkey K between A B => A proves B sent m at [Ty | Ty <= Tx]",
        "proves(?A, sharedkeyof(?K, ?A, ?B))",
    );
    vec![
        schema("MP", "|- phi, |- (phi => psi) => |- psi; every rule node is one instance"),
        schema("A1", "A proves x, A proves y => A proves (x and y)"),
        axiom(
            "A2",
            "A proves B sent (m, n) at T => A proves B sent m at T",
            &["proves(?A, sent(?B, pair(?m, ?n), ?T))"],
            "proves(?A, sent(?B, ?m, ?T))",
        ),
        axiom(
            "A2",
            "A proves B sent (m, n) at T => A proves B sent n at T",
            &["proves(?A, sent(?B, pair(?m, ?n), ?T))"],
            "proves(?A, sent(?B, ?n, ?T))",
        ),
        axiom(
            "A2",
            "A proves B received (m, n) at T => A proves B received m at T",
            &["proves(?A, recv(?B, pair(?m, ?n), ?T))"],
            "proves(?A, recv(?B, ?m, ?T))",
        ),
        axiom(
            "A2",
            "A proves B received (m, n) at T => A proves B received n at T",
            &["proves(?A, recv(?B, pair(?m, ?n), ?T))"],
            "proves(?A, recv(?B, ?n, ?T))",
        ),
        a3,
        a3s,
        axiom(
            "A4",
            "A proves B sent {m}_k at Tx, A proves B sent k at Ty => A proves B sent m at max(Tx, Ty)",
            &["proves(?A, sent(?B, enc(?m, ?k), ?Tx))", "proves(?A, sent(?B, key(?k), ?Ty))"],
            "proves(?A, sent(?B, ?m, max(timeof(?Tx), timeof(?Ty))))",
        ),
        axiom("A5", "A received m at T => A has m at T", &["recv(?A, ?m, ?T)"], "has(?A, ?m, ?T)"),
        axiom(
            "A6",
            "A received {m}_K at T, A has dual(K) => A received m at T",
            &["recv(?A, enc(?m, ?K), ?T)", "has(?A, key(dual(?K)), ?T2)"],
            "recv(?A, ?m, ?T)",
        ),
        axiom(
            "A6p",
            "A proves B has {m}_K at T1, A proves B has dual(K) at T2 => A proves B has m at max(T1, T2)",
            &["proves(?A, has(?B, enc(?m, ?K), ?T1))", "proves(?A, has(?B, key(dual(?K)), ?T2))"],
            "proves(?A, has(?B, ?m, max(timeof(?T1), timeof(?T2))))",
        ),
        axiom(
            "PairSent",
            "B sent (m, n) at T => B sent m at T",
            &["sent(?B, pair(?m, ?n), ?T)"],
            "sent(?B, ?m, ?T)",
        ),
        axiom(
            "PairSent",
            "B sent (m, n) at T => B sent n at T",
            &["sent(?B, pair(?m, ?n), ?T)"],
            "sent(?B, ?n, ?T)",
        ),
        axiom(
            "PairRecv",
            "B received (m, n) at T => B received m at T",
            &["recv(?B, pair(?m, ?n), ?T)"],
            "recv(?B, ?m, ?T)",
        ),
        axiom(
            "PairRecv",
            "B received (m, n) at T => B received n at T",
            &["recv(?B, pair(?m, ?n), ?T)"],
            "recv(?B, ?n, ?T)",
        ),
    ]
}

/// Adds a credible assumption after checking that it binds all of its
/// metavariables.
pub fn register_assumption(kb: &KnowledgeBase, rule: Rule) -> Result<KnowledgeBase, RuleError> {
    rule.check_bound()?;
    let mut next = kb.clone();
    next.add_rule(Rule { kind: RuleKind::Assumption, ..rule });
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_bind_their_metavariables() {
        for r in builtin_rules() {
            r.check_bound().unwrap_or_else(|e| panic!("{e}"));
        }
    }

    #[test]
    fn builtin_names_in_order() {
        let mut names: Vec<String> = builtin_rules().into_iter().map(|r| r.name).collect();
        names.dedup();
        assert_eq!(names, ["MP", "A1", "A2", "A3", "A3s", "A4", "A5", "A6", "A6p", "PairSent", "PairRecv"]);
    }

    fn rule(premises: &[&str], conclusion: &str, cp: Option<(&str, &str)>) -> Rule {
        Rule {
            name: "T".into(),
            kind: RuleKind::Assumption,
            premises: premises.iter().map(|p| t(p)).collect(),
            conclusion: t(conclusion),
            side: vec![],
            fresh: vec![],
            counterpart: cp.map(|(b, a)| (b.into(), a.into())),
            text: String::new(),
        }
    }

    #[test]
    fn counterpart_binds_conclusion_party() {
        let t1 = rule(
            &["proves(?A, sent(N, key(?k), ?T))"],
            "proves(?A, sent(?B, key(?k), ?T))",
            Some(("B", "A")),
        );
        assert!(register_assumption(&KnowledgeBase::default(), t1).is_ok());
    }

    #[test]
    fn checksum_assumption_is_accepted() {
        let t2 = rule(&["proves(?A, sent(?B, hash(?m), ?T))"], "proves(?A, sent(?B, ?m, ?T))", None);
        assert!(register_assumption(&KnowledgeBase::default(), t2).is_ok());
    }

    #[test]
    fn unbound_conclusion_metavar_is_rejected() {
        let bad = rule(&["proves(?A, sent(N, key(?k), ?T))"], "proves(?A, sent(?B, key(?k), ?T))", None);
        assert_eq!(
            register_assumption(&KnowledgeBase::default(), bad).err(),
            Some(RuleError::UnboundMetavar { rule: "T".into(), meta: "B".into() })
        );
    }
}
