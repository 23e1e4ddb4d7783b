//! Diagnostics produced by the frontend and the planners.
//!
//! Every rejection carries a stable machine-readable code plus a source
//! location, so driver tooling can consume them as JSON (`--diag-json`).

use serde::Serialize;
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[allow(non_camel_case_types)]
pub enum DiagCode {
    SYNTAX_ERROR,
    UNKNOWN_QUALIFIER,
    DUPLICATE_METHOD,
    UNKNOWN_METHOD,
    UNKNOWN_VARIABLE,
    DUPLICATE_VARIABLE,
    TYPE_MISMATCH,
    BAD_INDEXING,
    ARITY_MISMATCH,
    MISSING_RETURN,
    INPUT_ONLY_VIOLATION,
    LOOP_BOUND_NOT_MASTER_COMPUTABLE,
    NON_CANONICAL_PARALLEL_LOOP,
    CONDITIONAL_NESTED_REDUCTION,
    NESTED_REDUCTION_IN_PARALLEL_LOOP,
    UNSUPPORTED_NESTED_SOMD,
    UNKNOWN_STRATEGY,
    UNKNOWN_REDUCER,
    BAD_REDUCE_TYPE,
    DIST_ON_SCALAR,
    DIM_OUT_OF_RANGE,
    VIEW_POLYVIEW_CONFLICT,
    VIEW_SHAPE_MISMATCH,
    DIST_LOCAL_INIT,
    SHARED_NOT_SCALAR,
    SYNC_REDUCE_TARGET,
    GPU_STRATEGY_IGNORED,
    GPU_UNSUPPORTED,
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub severity: Severity,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: DiagCode, span: Span, message: impl Into<String>) -> Self {
        Diagnostic { code, severity: Severity::Error, span, message: message.into() }
    }

    pub fn warning(code: DiagCode, span: Span, message: impl Into<String>) -> Self {
        Diagnostic { code, severity: Severity::Warning, span, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {} [{}] {}", self.span, sev, self.code, self.message)
    }
}

/// Render a diagnostic batch as a JSON array.
pub fn to_json(diags: &[Diagnostic]) -> String {
    serde_json::to_string_pretty(diags).expect("diagnostics serialize")
}
