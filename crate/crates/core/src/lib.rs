//! Protocol evidence analysis: message algebra, time constraints, a
//! backtracking prover over timed beliefs, and the checks built on them.

pub mod analysis;
pub mod diag;
pub mod dsl;
pub mod fixtures;
pub mod logic;
pub mod message;
pub mod oracle;
pub mod protocol;
pub mod report;
pub mod time;

pub use analysis::{analyze, AnalysisReport, EvidenceSpec, Options, Property, Status, Verdict};
pub use diag::Diagnostic;
pub use dsl::{parse, parse_str, print, SourceFile};
pub use message::{KeyTerm, Msg, Party, PartyId};
pub use protocol::{run, validate, ProtocolSpec, RunConfig};
pub use time::{ConstraintSystem, Rational};
