use std::fmt;

use serde::Serialize;

/// A positioned or step-indexed problem report.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

impl Diagnostic {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Diagnostic { code: code.into(), message: message.into(), step: None, line: None, col: None }
    }

    pub fn at_step(code: &str, step: usize, message: impl Into<String>) -> Self {
        Diagnostic { step: Some(step), ..Diagnostic::new(code, message) }
    }

    pub fn at_pos(code: &str, line: usize, col: usize, message: impl Into<String>) -> Self {
        Diagnostic { line: Some(line), col: Some(col), ..Diagnostic::new(code, message) }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.col) {
            write!(f, "{l}:{c}: ")?;
        }
        if let Some(s) = self.step {
            write!(f, "step {s}: ")?;
        }
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for Diagnostic {}
