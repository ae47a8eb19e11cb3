use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("branch {id} has zero series impedance")]
    DegenerateBranch { id: usize },
    #[error("dangling references: {}", .0.join(", "))]
    DanglingReferences(Vec<String>),
    #[error("network is not connected")]
    Disconnected,
    #[error("invalid case: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("missing mpc.{field}")]
    MissingField { field: &'static str },
    #[error("line {line}: mpc.{field} row {row}, column {col}: cannot parse {token:?} as a number")]
    NotANumber {
        field: String,
        line: usize,
        row: usize,
        col: usize,
        token: String,
    },
    #[error("line {line}: mpc.{field} row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        field: String,
        line: usize,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("line {line}: mpc.{field} needs at least {min} columns, found {found}")]
    TooFewColumns {
        field: String,
        line: usize,
        min: usize,
        found: usize,
    },
    #[error("line {line}: unterminated matrix for mpc.{field}")]
    Unterminated { field: String, line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("gencost row {row}: {message}")]
    UnsupportedCost { row: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("Laplace scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("privacy parameter {name} = {value} is out of range ({rule})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("voltage level {kv} kV has no branches")]
    EmptyLevel { kv: f64 },
    #[error("branch {id} has b = {b}; the mechanism requires b < 0")]
    NonNegativeSusceptance { id: usize, b: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}
