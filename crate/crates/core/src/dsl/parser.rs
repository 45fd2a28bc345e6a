use std::collections::{BTreeMap, BTreeSet};

use crate::analysis::{EvidenceItem, EvidenceSpec, ExchangedItem, SufficiencyGoal};
use crate::diag::Diagnostic;
use crate::logic::term::{key_to_term, party_to_term, term_to_formula, term_to_key, term_to_msg, Op};
use crate::logic::{Rule, RuleKind, Term};
use crate::message::{dual_key, KeyTerm, Msg, Party, PartyId};
use crate::protocol::{ChannelKind, ProtocolSpec, Step, TimeoutDecl};
use crate::time::{parse_rational, Atom, DelaySym, DelayTerm, Scope, ScopedTime, TimeExpr};

use super::lexer::{Tok, Token};
use super::print::rule_text;

type PResult<T> = Result<T, Diagnostic>;

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    spec: ProtocolSpec,
    evidence: EvidenceSpec,
    keys: BTreeMap<String, KeyTerm>,
    waits: BTreeSet<String>,
    auto_meta: usize,
    /// Semantic problems collected while parsing continues.
    errors: Vec<Diagnostic>,
}

fn is_step_delay(name: &str) -> bool {
    name.len() > 1 && name.starts_with('t') && name[1..].chars().all(|c| c.is_ascii_digit())
}

impl Parser {
    pub fn new(toks: Vec<Token>) -> Self {
        // waiting-time names may be used before their timeout line
        let waits = toks
            .windows(2)
            .filter_map(|w| match (&w[0].tok, &w[1].tok) {
                (Tok::Ident(k), Tok::Ident(n)) if k == "waits" => Some(n.clone()),
                _ => None,
            })
            .collect();
        Parser {
            toks,
            pos: 0,
            spec: ProtocolSpec::default(),
            evidence: EvidenceSpec::default(),
            keys: BTreeMap::new(),
            waits,
            auto_meta: 0,
            errors: Vec::new(),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (l, c) = self.here();
        Err(Diagnostic::at_pos("E_PARSE", l, c, msg))
    }

    fn semantic(&mut self, code: &str, line: usize, col: usize, msg: impl Into<String>) {
        self.errors.push(Diagnostic::at_pos(code, line, col, msg));
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected a name, found {}", describe(&other))),
        }
    }

    fn number(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected a number, found {}", describe(&other))),
        }
    }

    fn index(&mut self) -> PResult<usize> {
        let n = self.number()?;
        match n.parse() {
            Ok(i) => Ok(i),
            Err(_) => self.err(format!("expected a step number, found {n}")),
        }
    }

    fn declared_party(&mut self) -> PResult<PartyId> {
        let (l, c) = self.here();
        let name = self.ident()?;
        let id = PartyId::new(name);
        if self.spec.party(&id).is_none() {
            self.semantic("E_UNDECLARED", l, c, format!("party {id} is not declared"));
        }
        Ok(id)
    }

    fn party_term(&mut self) -> PResult<Term> {
        if let Tok::Meta(m) = self.peek().clone() {
            self.bump();
            return Ok(Term::meta(m));
        }
        Ok(party_to_term(&self.declared_party()?))
    }

    fn fresh_meta(&mut self) -> Term {
        self.auto_meta += 1;
        Term::meta(format!("_t{}", self.auto_meta))
    }

    // ---- messages and keys ----

    fn args(&mut self) -> PResult<Vec<Term>> {
        self.expect("(")?;
        let mut out = vec![self.msg()?];
        while self.is_punct(",") {
            self.bump();
            out.push(self.msg()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    fn arity(&self, f: &str, args: &[Term], n: usize, line: usize, col: usize) -> PResult<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Diagnostic::at_pos("E_PARSE", line, col, format!("{f} takes {n} arguments, got {}", args.len())))
        }
    }

    /// Message pattern; metavariables allowed.
    pub fn msg(&mut self) -> PResult<Term> {
        let (l, c) = self.here();
        if let Tok::Meta(m) = self.peek().clone() {
            self.bump();
            return Ok(Term::meta(m));
        }
        let name = self.ident()?;
        if !self.is_punct("(") {
            return Ok(match self.keys.get(&name) {
                Some(k) => Term::app(Op::Key, vec![key_to_term(k)]),
                None => Term::app(Op::Atom, vec![Term::sym(name)]),
            });
        }
        match name.as_str() {
            "pair" | "tuple" => {
                let mut args = self.args()?;
                if args.len() < 2 {
                    return Err(Diagnostic::at_pos("E_PARSE", l, c, format!("{name} needs at least two parts")));
                }
                let mut acc = args.pop().expect("nonempty");
                while let Some(a) = args.pop() {
                    acc = Term::app(Op::Pair, vec![a, acc]);
                }
                Ok(acc)
            }
            "hash" => {
                let args = self.args()?;
                self.arity("hash", &args, 1, l, c)?;
                Ok(Term::app(Op::Hash, args))
            }
            "enc" => {
                self.expect("(")?;
                let body = self.msg()?;
                self.expect(",")?;
                let key = self.key()?;
                self.expect(")")?;
                Ok(Term::app(Op::Enc, vec![body, key]))
            }
            "sign" => {
                self.expect("(")?;
                let body = self.msg()?;
                self.expect(",")?;
                let signer = self.party_term()?;
                self.expect(")")?;
                Ok(Term::app(Op::Enc, vec![body, Term::app(Op::Sk, vec![signer])]))
            }
            "pk" | "sk" | "inv" => {
                self.pos -= 1;
                let k = self.key()?;
                Ok(Term::app(Op::Key, vec![k]))
            }
            other => Err(Diagnostic::at_pos("E_PARSE", l, c, format!("unknown message function {other}"))),
        }
    }

    /// Key pattern: a declared key name, `pk(P)`, `sk(P)`, `inv(K)` or a
    /// metavariable.
    pub fn key(&mut self) -> PResult<Term> {
        let (l, c) = self.here();
        if let Tok::Meta(m) = self.peek().clone() {
            self.bump();
            return Ok(Term::meta(m));
        }
        let name = self.ident()?;
        match name.as_str() {
            "pk" | "sk" if self.is_punct("(") => {
                self.bump();
                let p = self.party_term()?;
                self.expect(")")?;
                Ok(Term::app(if name == "pk" { Op::Pk } else { Op::Sk }, vec![p]))
            }
            "inv" if self.is_punct("(") => {
                self.bump();
                let k = self.key()?;
                self.expect(")")?;
                Ok(match term_to_key(&k) {
                    Ok(ground) => key_to_term(&dual_key(&ground)),
                    Err(_) => Term::app(Op::Dual, vec![k]),
                })
            }
            _ => match self.keys.get(&name) {
                Some(k) => Ok(key_to_term(k)),
                None => Err(Diagnostic::at_pos("E_UNDECLARED", l, c, format!("key {name} is not declared"))),
            },
        }
    }

    fn ground_msg(&mut self) -> PResult<Msg> {
        let (l, c) = self.here();
        let t = self.msg()?;
        term_to_msg(&t).map_err(|_| Diagnostic::at_pos("E_PARSE", l, c, "metavariables are only allowed in assumptions"))
    }

    // ---- time ----

    fn delay_or_var(&self, name: &str) -> Result<DelaySym, String> {
        if self.waits.contains(name) {
            Ok(DelaySym::waiting(name))
        } else if is_step_delay(name) {
            Ok(DelaySym::step(name))
        } else {
            Err(name.to_string())
        }
    }

    fn time_term(&mut self) -> PResult<TimeExpr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                match parse_rational(&n) {
                    Some(q) => Ok(TimeExpr::Const(q)),
                    None => self.err(format!("bad number {n}")),
                }
            }
            Tok::Ident(name) if name == "max" && matches!(self.peek_at(1), Tok::Punct("(")) => {
                self.bump();
                self.expect("(")?;
                let a = self.time_expr()?;
                self.expect(",")?;
                let b = self.time_expr()?;
                self.expect(")")?;
                Ok(TimeExpr::max(a, b))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(match self.delay_or_var(&name) {
                    Ok(d) => TimeExpr::Const(num_traits::Zero::zero()).plus(vec![DelayTerm::Sym(d)]),
                    Err(v) => TimeExpr::Var(v),
                })
            }
            other => self.err(format!("expected a time expression, found {}", describe(&other))),
        }
    }

    pub fn time_expr(&mut self) -> PResult<TimeExpr> {
        let mut acc = self.time_term()?;
        while self.is_punct("+") {
            self.bump();
            let (l, c) = self.here();
            let next = self.time_term()?;
            let delay = match next {
                TimeExpr::Const(q) => DelayTerm::Const(q),
                TimeExpr::Plus(base, ds) if ds.len() == 1 && *base == TimeExpr::Const(num_traits::Zero::zero()) => {
                    ds.into_iter().next().expect("one delay")
                }
                _ => {
                    return Err(Diagnostic::at_pos(
                        "E_PARSE",
                        l,
                        c,
                        "only delays and constants can be added to a time",
                    ))
                }
            };
            acc = acc.plus(vec![delay]);
        }
        Ok(acc)
    }

    fn atom(&mut self) -> PResult<Atom> {
        let lhs = self.time_expr()?;
        let op = match self.peek().clone() {
            Tok::Punct(p) if ["<=", "<", "=", ">=", ">"].contains(&p) => p,
            other => return self.err(format!("expected a comparison, found {}", describe(&other))),
        };
        self.bump();
        let rhs = self.time_expr()?;
        Ok(match op {
            "<=" => Atom::Le(lhs, rhs),
            "<" => Atom::Lt(lhs, rhs),
            "=" => Atom::Eq(lhs, rhs),
            ">=" => Atom::Le(rhs, lhs),
            _ => Atom::Lt(rhs, lhs),
        })
    }

    fn scoped(&mut self) -> PResult<ScopedTime> {
        let (l, c) = self.here();
        self.expect("[")?;
        let var = self.ident()?;
        if self.is_punct("]") {
            self.bump();
            return Ok(ScopedTime::full(var));
        }
        self.expect("|")?;
        let scope_err = |_: &Self| {
            Diagnostic::at_pos(
                "E_SCOPE",
                l,
                c,
                "scopes are limited to [X], [X | X <= T] and [X | X = constant]",
            )
        };
        match self.peek().clone() {
            Tok::Ident(v) if v == var => {
                self.bump();
            }
            _ => return Err(scope_err(self)),
        }
        let scope = if self.is_punct("<=") {
            self.bump();
            Scope::UpTo(self.time_expr()?)
        } else if self.is_punct("=") {
            self.bump();
            let n = self.number().map_err(|_| scope_err(self))?;
            Scope::Singleton(parse_rational(&n).ok_or_else(|| scope_err(self))?)
        } else {
            return Err(scope_err(self));
        };
        if !self.is_punct("]") {
            return Err(scope_err(self));
        }
        self.bump();
        Ok(ScopedTime { var, scope })
    }

    fn stamp(&mut self) -> PResult<Term> {
        use crate::logic::term::{stamp_to_term, time_to_term};
        use crate::logic::Stamp;
        if let Tok::Meta(m) = self.peek().clone() {
            self.bump();
            return Ok(Term::meta(m));
        }
        if self.is_punct("[") {
            return Ok(stamp_to_term(&Stamp::Scoped(self.scoped()?)));
        }
        Ok(time_to_term(&self.time_expr()?))
    }

    // ---- formulas ----

    /// Formula pattern. Omitted stamps become fresh metavariables when
    /// `open` and are otherwise absent (`has`) or an error.
    pub fn formula(&mut self, open: bool) -> PResult<Term> {
        let (l, c) = self.here();
        if self.is_punct("(") {
            self.bump();
            let mut items = vec![self.formula(open)?];
            while self.is_kw("and") {
                self.bump();
                items.push(self.formula(open)?);
            }
            self.expect(")")?;
            return Ok(if items.len() == 1 { items.pop().expect("one") } else { Term::app(Op::Conj, items) });
        }
        if self.is_kw("pubkey") {
            self.bump();
            let k = self.key()?;
            self.keyword("of")?;
            let p = self.party_term()?;
            return Ok(Term::app(Op::PubKeyOf, vec![k, p]));
        }
        if self.is_kw("sharedkey") {
            self.bump();
            let k = self.key()?;
            self.keyword("between")?;
            let a = self.party_term()?;
            let b = self.party_term()?;
            return Ok(Term::app(Op::SharedKeyOf, vec![k, a, b]));
        }
        let agent = self.party_term()?;
        let verb = self.ident()?;
        let op = match verb.as_str() {
            "proves" => {
                let body = self.formula(open)?;
                return Ok(Term::app(Op::Proves, vec![agent, body]));
            }
            "sent" => Op::Sent,
            "has" => Op::Has,
            "received" => Op::Recv,
            other => {
                return Err(Diagnostic::at_pos(
                    "E_PARSE",
                    l,
                    c,
                    format!("expected proves, sent, has or received, found {other}"),
                ))
            }
        };
        let m = self.msg()?;
        let stamp = if self.is_punct("@") {
            self.bump();
            self.stamp()?
        } else if open {
            self.fresh_meta()
        } else if op == Op::Has {
            Term::app(Op::NoTime, vec![])
        } else {
            return self.err(format!("`{verb}` needs a time stamp `@ T`"));
        };
        Ok(Term::app(op, vec![agent, m, stamp]))
    }

    // ---- statements ----

    fn declare_key(&mut self, name: String, key: KeyTerm, line: usize, col: usize) {
        if self.keys.contains_key(&name) {
            self.semantic("E_DUPLICATE", line, col, format!("key {name} declared twice"));
            return;
        }
        self.keys.insert(name.clone(), key.clone());
        self.spec.keys.push((name, key));
    }

    fn statement(&mut self) -> PResult<()> {
        let (l, c) = self.here();
        if let Tok::Num(_) = self.peek() {
            return self.step();
        }
        let kw = self.ident()?;
        match kw.as_str() {
            "party" | "ttp" => loop {
                let (pl, pc) = self.here();
                let id = PartyId::new(self.ident()?);
                if self.spec.party(&id).is_some() {
                    self.semantic("E_DUPLICATE", pl, pc, format!("party {id} declared twice"));
                } else {
                    self.spec.parties.push(Party { id, is_ttp: kw == "ttp" });
                }
                if !self.is_punct(",") {
                    break self.expect(";");
                }
                self.bump();
            },
            "pubkey" => {
                let name = self.ident()?;
                self.keyword("of")?;
                let owner = self.declared_party()?;
                self.declare_key(name, KeyTerm::Public(owner), l, c);
                self.expect(";")
            }
            "sharedkey" => {
                let name = self.ident()?;
                self.keyword("between")?;
                let a = self.declared_party()?;
                let b = self.declared_party()?;
                self.declare_key(name.clone(), KeyTerm::shared(name, a, b), l, c);
                self.expect(";")
            }
            "sessionkey" => loop {
                let name = self.ident()?;
                self.declare_key(name.clone(), KeyTerm::Session(name), l, c);
                if !self.is_punct(",") {
                    break self.expect(";");
                }
                self.bump();
            },
            "channel" => {
                let a = self.declared_party()?;
                let b = self.declared_party()?;
                let kind = match self.ident()?.as_str() {
                    "recoverable" => ChannelKind::Recoverable,
                    "unreliable" => ChannelKind::Unreliable,
                    other => return self.err(format!("unknown channel kind {other}")),
                };
                self.spec.set_channel(&a, &b, kind);
                self.expect(";")
            }
            "counterpart" => {
                let a = self.declared_party()?;
                let b = self.declared_party()?;
                self.spec.counterparts.push((a, b));
                self.expect(";")
            }
            "knows" => {
                let p = self.declared_party()?;
                self.expect(":")?;
                loop {
                    let m = self.ground_msg()?;
                    self.spec.initial_knowledge.entry(p.clone()).or_default().insert(m);
                    if !self.is_punct(",") {
                        break;
                    }
                    self.bump();
                }
                self.expect(";")
            }
            "believes" => {
                let p = self.declared_party()?;
                self.expect(":")?;
                loop {
                    let (fl, fc) = self.here();
                    let t = self.formula(false)?;
                    let f = term_to_formula(&t)
                        .map_err(|_| Diagnostic::at_pos("E_PARSE", fl, fc, "beliefs must be concrete"))?;
                    self.spec.beliefs.entry(p.clone()).or_default().push(f);
                    if !self.is_punct(",") {
                        break;
                    }
                    self.bump();
                }
                self.expect(";")
            }
            "fresh" => {
                let mut ms = vec![self.ground_msg()?];
                while self.is_punct(",") {
                    self.bump();
                    ms.push(self.ground_msg()?);
                }
                self.keyword("at")?;
                self.keyword("step")?;
                let i = self.index()?;
                self.spec.fresh.entry(i).or_default().extend(ms);
                self.expect(";")
            }
            "timeout" => {
                let party = self.declared_party()?;
                self.keyword("waits")?;
                let wait = self.ident()?;
                self.keyword("after")?;
                self.keyword("step")?;
                let after_step = self.index()?;
                self.keyword("expecting")?;
                self.keyword("step")?;
                let expecting = self.index()?;
                if self.spec.timeouts.contains_key(&party) {
                    self.semantic("E_DUPLICATE", l, c, format!("second timeout for {party}"));
                }
                self.spec.timeouts.insert(
                    party.clone(),
                    TimeoutDecl { party, waiting: DelaySym::waiting(wait), after_step, expecting },
                );
                self.expect(";")
            }
            "constraint" => {
                let a = self.atom()?;
                self.spec.constraints.push(a);
                self.expect(";")
            }
            "pin" => {
                let name = self.ident()?;
                self.expect("=")?;
                let n = self.number()?;
                let q = parse_rational(&n).ok_or_else(|| Diagnostic::at_pos("E_PARSE", l, c, "bad number"))?;
                self.spec.pins.insert(name, q);
                self.expect(";")
            }
            "assume" => self.assumption(),
            "evidence" => {
                let name = self.ident()?;
                self.keyword("held_by")?;
                let holder = self.declared_party()?;
                self.expect("=")?;
                let msg = self.ground_msg()?;
                if self.evidence.item(&name).is_some() {
                    self.semantic("E_DUPLICATE", l, c, format!("evidence {name} declared twice"));
                }
                self.evidence.items.push(EvidenceItem { name, holder, msg });
                self.expect(";")
            }
            "goal" => {
                self.keyword("sufficiency")?;
                self.auto_meta = 0;
                let (el, ec) = self.here();
                let evidence = self.ident()?;
                if self.evidence.item(&evidence).is_none() {
                    self.semantic("E_UNDECLARED", el, ec, format!("evidence {evidence} is not declared"));
                }
                self.expect(":")?;
                let goal = self.formula(true)?;
                self.evidence.goals.push(SufficiencyGoal { evidence, goal });
                self.expect(";")
            }
            "item" => {
                let msg = self.ground_msg()?;
                self.keyword("for")?;
                let party = self.declared_party()?;
                self.evidence.exchanged.push(ExchangedItem { msg, party });
                self.expect(";")
            }
            other => Err(Diagnostic::at_pos("E_PARSE", l, c, format!("unknown statement `{other}`"))),
        }
    }

    fn step(&mut self) -> PResult<()> {
        let index = self.index()?;
        self.expect(".")?;
        let from = self.declared_party()?;
        self.expect("->")?;
        let to = self.declared_party()?;
        self.expect(":")?;
        let msg = self.ground_msg()?;
        self.expect("@")?;
        let at = self.ident()?;
        self.spec.steps.push(Step { index, from, to, msg, at });
        self.expect(";")
    }

    fn assumption(&mut self) -> PResult<()> {
        let name = self.ident()?;
        self.expect(":")?;
        self.auto_meta = 0;
        let mut premises = vec![self.formula(true)?];
        while self.is_punct(",") {
            self.bump();
            premises.push(self.formula(true)?);
        }
        self.expect("=>")?;
        let conclusion = self.formula(true)?;
        let counterpart = if self.is_kw("where") {
            self.bump();
            let b = match self.bump() {
                Tok::Meta(m) => m,
                other => return self.err(format!("expected a metavariable, found {}", describe(&other))),
            };
            self.expect("=")?;
            self.keyword("counterpart")?;
            self.expect("(")?;
            let a = match self.bump() {
                Tok::Meta(m) => m,
                other => return self.err(format!("expected a metavariable, found {}", describe(&other))),
            };
            self.expect(")")?;
            Some((b, a))
        } else {
            None
        };
        let mut rule = Rule {
            name,
            kind: RuleKind::Assumption,
            premises,
            conclusion,
            side: vec![],
            fresh: vec![],
            counterpart,
            text: String::new(),
        };
        rule.text = rule_text(&rule);
        self.spec.assumptions.push(rule);
        self.expect(";")
    }

    pub fn file(mut self) -> Result<(ProtocolSpec, EvidenceSpec), Vec<Diagnostic>> {
        if matches!(self.peek(), Tok::Eof) {
            let (l, c) = self.here();
            return Err(vec![Diagnostic::at_pos("E_EMPTY", l, c, "the input declares nothing")]);
        }
        while !matches!(self.peek(), Tok::Eof) {
            if let Err(d) = self.statement() {
                self.errors.push(d);
                return Err(self.errors);
            }
        }
        for (i, s) in self.spec.steps.iter().enumerate() {
            if s.index != i + 1 {
                self.errors.push(Diagnostic::at_step("E_STEP_ORDER", s.index, "steps must be numbered 1, 2, 3, ..."));
            }
        }
        if self.errors.is_empty() {
            Ok((self.spec, self.evidence))
        } else {
            Err(self.errors)
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Meta(s) => format!("`?{s}`"),
        Tok::Num(s) => format!("`{s}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}
