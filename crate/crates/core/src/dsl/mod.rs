//! Protocol description language.
//!
//! A file is a sequence of `;`-terminated statements: declarations
//! (`party`, `ttp`, `pubkey`, `sharedkey`, `sessionkey`, `channel`,
//! `counterpart`), initial sets (`knows`, `believes`), `fresh`, numbered
//! steps (`4. M -> C : msg @ T4;`), `timeout`, `constraint`, `pin`,
//! `assume`, `evidence`, `goal sufficiency` and `item`. Parties and keys
//! must be declared before use; other names in message position are atoms.

mod lexer;
mod parser;
pub mod print;

use std::path::Path;

use crate::analysis::EvidenceSpec;
use crate::diag::Diagnostic;
use crate::protocol::ProtocolSpec;
#[cfg(test)]
use crate::{message::PartyId, protocol::ChannelKind};

pub use print::print;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        SourceFile { path: path.into(), text: text.into() }
    }

    pub fn read(path: &Path) -> Result<Self, Diagnostic> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Diagnostic::new("E_IO", format!("{}: {e}", path.display())))?;
        Ok(SourceFile::new(path.display().to_string(), text))
    }
}

pub fn parse(src: &SourceFile) -> Result<(ProtocolSpec, EvidenceSpec), Vec<Diagnostic>> {
    let toks = lexer::lex(&src.text).map_err(|d| vec![d])?;
    parser::Parser::new(toks).file()
}

/// Parses text without a file name.
pub fn parse_str(text: &str) -> Result<(ProtocolSpec, EvidenceSpec), Vec<Diagnostic>> {
    parse(&SourceFile::new("<input>", text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::NETBILL;
    use crate::oracle;

    const HEAD: &str = "party A; party B; ttp N; pubkey Ka of A; sharedkey Kab between A B; sessionkey k;\n";

    fn accepts(body: &str) -> (ProtocolSpec, EvidenceSpec) {
        parse_str(&format!("{HEAD}{body}")).unwrap_or_else(|e| panic!("{body}: {e:?}"))
    }

    fn rejects(body: &str) -> String {
        match parse_str(&format!("{HEAD}{body}")) {
            Ok(_) => panic!("accepted {body}"),
            Err(ds) => ds[0].code.clone(),
        }
    }

    #[test]
    fn declarations() {
        let (spec, _) = accepts("party C, D;");
        assert_eq!(spec.parties.len(), 5);
        assert!(spec.is_ttp(&PartyId::new("N")));
        assert_eq!(rejects("party ;"), "E_PARSE");
        assert_eq!(rejects("party A;"), "E_DUPLICATE");
        assert_eq!(rejects("pubkey Kz of Z;"), "E_UNDECLARED");
        assert_eq!(rejects("sessionkey k;"), "E_DUPLICATE");
        assert_eq!(rejects("sharedkey Kab between A B;"), "E_DUPLICATE");
    }

    #[test]
    fn channels_and_counterparts() {
        let (spec, _) = accepts("channel A B unreliable; counterpart A B;");
        assert_eq!(spec.channel(&PartyId::new("B"), &PartyId::new("A")), ChannelKind::Unreliable);
        assert_eq!(spec.counterparts.len(), 1);
        assert_eq!(rejects("channel A B lossy;"), "E_PARSE");
        assert_eq!(rejects("counterpart A Z;"), "E_UNDECLARED");
    }

    #[test]
    fn initial_sets() {
        let (spec, _) = accepts("knows A: inv(Ka), Kab, x; believes A: pubkey Ka of A, sharedkey Kab between A B;");
        assert_eq!(spec.knowledge(&PartyId::new("A")).len(), 3);
        assert_eq!(spec.beliefs[&PartyId::new("A")].len(), 2);
        assert_eq!(rejects("knows A: ?x;"), "E_PARSE");
        assert_eq!(rejects("believes A: B sent x;"), "E_PARSE");
        assert_eq!(rejects("believes A: B sent x @ ?t;"), "E_PARSE");
    }

    #[test]
    fn steps_and_fresh() {
        let (spec, _) = accepts("fresh x at step 1;\n1. A -> B : enc(pair(x, hash(k)), Kab) @ T1;\n2. B -> A : sign(x, B) @ T2;");
        assert_eq!(spec.steps.len(), 2);
        assert_eq!(spec.fresh[&1].len(), 1);
        assert_eq!(rejects("1 A -> B : x @ T1;"), "E_PARSE");
        assert_eq!(rejects("2. A -> B : x @ T2;"), "E_STEP_ORDER");
        assert_eq!(rejects("1. A -> Z : x @ T1;"), "E_UNDECLARED");
        assert_eq!(rejects("fresh x step 1;"), "E_PARSE");
        assert_eq!(rejects("1. A -> B : enc(x) @ T1;"), "E_PARSE");
    }

    #[test]
    fn timing_statements() {
        let (spec, _) = accepts(
            "1. A -> B : x @ T1;\n2. B -> A : y @ T2;\ntimeout A waits tA after step 1 expecting step 2;\n\
             constraint t1 + 1/2 <= tA; constraint T2 > max(T1, 3); pin tA = 2.5;",
        );
        assert_eq!(spec.timeouts.len(), 1);
        assert_eq!(spec.constraints.len(), 2);
        assert_eq!(spec.pins["tA"], crate::time::ratio(5, 2));
        assert_eq!(rejects("constraint t1 3;"), "E_PARSE");
        assert_eq!(rejects("pin tA = x;"), "E_PARSE");
        assert_eq!(
            rejects("timeout A waits tA after step 1 expecting step 2; timeout A waits tB after step 1 expecting step 2;"),
            "E_DUPLICATE"
        );
    }

    #[test]
    fn assumptions() {
        let (spec, _) = accepts("assume H: ?A proves ?B sent hash(?m) @ ?t => ?A proves ?B sent ?m @ ?t;");
        assert_eq!(spec.assumptions[0].premises.len(), 1);
        let (spec, _) = accepts("assume W: ?A proves N sent ?x => ?A proves ?B has ?x where ?B = counterpart(?A);");
        assert_eq!(spec.assumptions[0].counterpart, Some(("B".into(), "A".into())));
        assert_eq!(rejects("assume H: ?A knows ?x => ?A has ?x;"), "E_PARSE");
        assert_eq!(rejects("assume H: ?A has ?x;"), "E_PARSE");
        assert_eq!(rejects("assume H: ?A has ?x => ?A has ?x where B = counterpart(?A);"), "E_PARSE");
    }

    #[test]
    fn scopes() {
        accepts("assume S: ?A has ?x @ [X | X <= Te] => ?A has ?x @ [Y];");
        accepts("assume S: ?A has ?x @ [X | X = 3] => ?A has ?x;");
        assert_eq!(rejects("assume S: ?A has ?x @ [X | X < 3] => ?A has ?x;"), "E_SCOPE");
        assert_eq!(rejects("assume S: ?A has ?x @ [X | Y <= 3] => ?A has ?x;"), "E_SCOPE");
    }

    #[test]
    fn evidence_statements() {
        let (_, ev) = accepts("evidence E held_by A = pair(x, y); goal sufficiency E: A proves B sent x; item y for A;");
        assert_eq!((ev.items.len(), ev.goals.len(), ev.exchanged.len()), (1, 1, 1));
        assert_eq!(rejects("evidence E held_by Z = x;"), "E_UNDECLARED");
        assert_eq!(rejects("goal sufficiency F: A proves B sent x;"), "E_UNDECLARED");
        assert_eq!(rejects("evidence E held_by A = x; evidence E held_by A = y;"), "E_DUPLICATE");
        assert_eq!(rejects("item y to A;"), "E_PARSE");
        assert_eq!(rejects("frobnicate;"), "E_PARSE");
    }

    #[test]
    fn empty_input() {
        for text in ["", "   \n", "# only a comment\n"] {
            assert_eq!(parse_str(text).unwrap_err()[0].code, "E_EMPTY");
        }
    }

    #[test]
    fn netbill_shape() {
        let (spec, ev) = parse_str(NETBILL).unwrap();
        assert_eq!((spec.steps.len(), spec.parties.len(), spec.assumptions.len()), (8, 3, 4));
        assert_eq!((ev.items.len(), ev.goals.len(), ev.exchanged.len()), (2, 2, 1));
        assert_eq!(spec.timeouts.len(), 2);
    }

    #[test]
    fn print_parse_round_trip() {
        let (spec, ev) = parse_str(NETBILL).unwrap();
        let text = print(&spec, &ev);
        assert_eq!(parse_str(&text).unwrap(), (spec, ev));
        let mut rng = oracle::rng(11);
        for _ in 0..100 {
            let (spec, ev) = oracle::gen_protocol(&mut rng, 6, 4);
            if spec.steps.is_empty() && spec.parties.is_empty() {
                continue;
            }
            let text = print(&spec, &ev);
            let back = parse_str(&text).unwrap_or_else(|e| panic!("{text}\n{e:?}"));
            assert_eq!(back, (spec, ev), "{text}");
        }
    }
}
