//! Canonical DSL text. `parse(print(x))` reproduces `x`.

use std::fmt::Write;

use crate::analysis::EvidenceSpec;
use crate::logic::term::{term_to_stamp, Op};
use crate::logic::{Rule, Term};
use crate::message::KeyTerm;
use crate::protocol::{ChannelKind, ProtocolSpec};
use crate::time::fmt_rational;

fn key_text(t: &Term) -> String {
    match t {
        Term::Meta(m) => format!("?{m}"),
        Term::App(Op::Pk, a) => format!("pk({})", party_text(&a[0])),
        Term::App(Op::Sk, a) => format!("sk({})", party_text(&a[0])),
        Term::App(Op::Shared | Op::Session, a) => sym_text(&a[0]),
        Term::App(Op::Dual, a) => format!("inv({})", key_text(&a[0])),
        other => other.to_string(),
    }
}

fn sym_text(t: &Term) -> String {
    match t {
        Term::Sym(s) => s.clone(),
        Term::Meta(m) => format!("?{m}"),
        other => other.to_string(),
    }
}

fn party_text(t: &Term) -> String {
    sym_text(t)
}

pub fn msg_text(t: &Term) -> String {
    match t {
        Term::Meta(m) => format!("?{m}"),
        Term::App(Op::Atom, a) => sym_text(&a[0]),
        Term::App(Op::Pair, a) => format!("pair({}, {})", msg_text(&a[0]), msg_text(&a[1])),
        Term::App(Op::Enc, a) => match &a[1] {
            Term::App(Op::Sk, p) => format!("sign({}, {})", msg_text(&a[0]), party_text(&p[0])),
            k => format!("enc({}, {})", msg_text(&a[0]), key_text(k)),
        },
        Term::App(Op::Hash, a) => format!("hash({})", msg_text(&a[0])),
        Term::App(Op::Key, a) => key_text(&a[0]),
        other => other.to_string(),
    }
}

fn stamp_text(t: &Term) -> Option<String> {
    match t {
        Term::Meta(m) if m.starts_with('_') => None,
        Term::Meta(m) => Some(format!("?{m}")),
        Term::App(Op::NoTime, _) => None,
        other => Some(match term_to_stamp(other) {
            Ok(s) => s.to_string(),
            Err(_) => other.to_string(),
        }),
    }
}

/// DSL rendering of a formula pattern; auto-generated stamp variables are
/// left out.
pub fn pattern_text(t: &Term) -> String {
    match t {
        Term::App(Op::Proves, a) => format!("{} proves {}", party_text(&a[0]), pattern_text(&a[1])),
        Term::App(op @ (Op::Sent | Op::Has | Op::Recv), a) => {
            let verb = match op {
                Op::Sent => "sent",
                Op::Has => "has",
                _ => "received",
            };
            let mut s = format!("{} {verb} {}", party_text(&a[0]), msg_text(&a[1]));
            if let Some(st) = stamp_text(&a[2]) {
                s.push_str(" @ ");
                s.push_str(&st);
            }
            s
        }
        Term::App(Op::PubKeyOf, a) => format!("pubkey {} of {}", key_text(&a[0]), party_text(&a[1])),
        Term::App(Op::SharedKeyOf, a) => {
            format!("sharedkey {} between {} {}", key_text(&a[0]), party_text(&a[1]), party_text(&a[2]))
        }
        Term::App(Op::Conj, items) => {
            let parts: Vec<String> = items.iter().map(pattern_text).collect();
            format!("({})", parts.join(" and "))
        }
        other => other.to_string(),
    }
}

/// Body of an `assume` line after the name.
pub fn rule_text(r: &Rule) -> String {
    let premises: Vec<String> = r.premises.iter().map(pattern_text).collect();
    let mut s = format!("{} => {}", premises.join(", "), pattern_text(&r.conclusion));
    if let Some((b, a)) = &r.counterpart {
        let _ = write!(s, " where ?{b} = counterpart(?{a})");
    }
    s
}

pub fn print(spec: &ProtocolSpec, evidence: &EvidenceSpec) -> String {
    let mut out = String::new();
    for p in &spec.parties {
        let _ = writeln!(out, "{} {};", if p.is_ttp { "ttp" } else { "party" }, p.id);
    }
    for (name, k) in &spec.keys {
        let _ = match k {
            KeyTerm::Public(p) => writeln!(out, "pubkey {name} of {p};"),
            KeyTerm::Private(p) => writeln!(out, "# private key {name} of {p} is written sk({p})"),
            KeyTerm::Shared { endpoints, .. } => {
                writeln!(out, "sharedkey {name} between {} {};", endpoints.0, endpoints.1)
            }
            KeyTerm::Session(_) => writeln!(out, "sessionkey {name};"),
        };
    }
    for ((a, b), kind) in &spec.channels {
        let k = match kind {
            ChannelKind::Recoverable => "recoverable",
            ChannelKind::Unreliable => "unreliable",
        };
        let _ = writeln!(out, "channel {a} {b} {k};");
    }
    for (a, b) in &spec.counterparts {
        let _ = writeln!(out, "counterpart {a} {b};");
    }
    for (p, set) in &spec.initial_knowledge {
        if !set.is_empty() {
            let items: Vec<String> = set.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "knows {p}: {};", items.join(", "));
        }
    }
    for (p, fs) in &spec.beliefs {
        if !fs.is_empty() {
            let items: Vec<String> = fs.iter().map(|f| pattern_text(&f.to_term())).collect();
            let _ = writeln!(out, "believes {p}: {};", items.join(", "));
        }
    }
    for (i, set) in &spec.fresh {
        if !set.is_empty() {
            let items: Vec<String> = set.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "fresh {} at step {i};", items.join(", "));
        }
    }
    for s in &spec.steps {
        let _ = writeln!(out, "{}. {} -> {} : {} @ {};", s.index, s.from, s.to, s.msg, s.at);
    }
    for t in spec.timeouts.values() {
        let _ = writeln!(
            out,
            "timeout {} waits {} after step {} expecting step {};",
            t.party, t.waiting.name, t.after_step, t.expecting
        );
    }
    for a in &spec.constraints {
        let _ = writeln!(out, "constraint {a};");
    }
    for (d, v) in &spec.pins {
        let _ = writeln!(out, "pin {d} = {};", fmt_rational(v));
    }
    for r in &spec.assumptions {
        let _ = writeln!(out, "assume {}: {};", r.name, r.text);
    }
    for e in &evidence.items {
        let _ = writeln!(out, "evidence {} held_by {} = {};", e.name, e.holder, e.msg);
    }
    for g in &evidence.goals {
        let _ = writeln!(out, "goal sufficiency {}: {};", g.evidence, pattern_text(&g.goal));
    }
    for x in &evidence.exchanged {
        let _ = writeln!(out, "item {} for {};", x.msg, x.party);
    }
    out
}
