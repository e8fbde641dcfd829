//! Error types shared across the crate.

use thiserror::Error;

/// Errors from semiring-level operations (lifting, kernels).
#[derive(Debug, Error, PartialEq)]
pub enum SemiringError {
    /// Input claimed to be a log-probability but is positive.
    #[error("log-probability must be <= 0, got {0}")]
    PositiveLogProb(f64),

    /// The log reverse-KL semiring needs a teacher log-probability to lift.
    #[error("semiring {0} requires a teacher log-probability")]
    MissingTeacher(&'static str),

    /// A teacher log-probability was supplied to a semiring that has no use for it.
    #[error("semiring {0} does not take a teacher log-probability")]
    UnexpectedTeacher(&'static str),

    /// Unknown semiring name on the CLI / in config.
    #[error("unknown semiring {0:?}")]
    UnknownName(String),
}

/// Errors from lattice construction and validation.
#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("edge {index}: src {src} must be < dst {dst} (topological indexing)")]
    EdgeOrder { index: usize, src: u32, dst: u32 },

    #[error("edge {index}: vertex {vertex} out of range (vertex count {count})")]
    VertexOutOfRange {
        index: usize,
        vertex: u32,
        count: usize,
    },

    #[error("root {0} out of range")]
    RootOutOfRange(u32),

    #[error("leaf {0} out of range")]
    LeafOutOfRange(u32),

    #[error("root {0} has incoming edges")]
    RootWithIncoming(u32),

    #[error("leaf {0} has outgoing edges")]
    LeafWithOutgoing(u32),

    #[error("duplicate root {0}")]
    DuplicateRoot(u32),

    #[error("duplicate leaf {0}")]
    DuplicateLeaf(u32),
}

/// Errors from the dynamic-programming engine.
#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("weight table entry {index} has wrong shape for semiring {semiring}")]
    WeightArity { index: usize, semiring: &'static str },

    #[error("weight ref {weight_ref} out of range (table length {table_len})")]
    WeightRefOutOfRange { weight_ref: u32, table_len: usize },

    #[error("gradients are only supported for log-space semirings, not {0}")]
    UnsupportedGradientSemiring(&'static str),

    #[error("semiring {0} requires a teacher weight table")]
    MissingTeacherTable(&'static str),

    #[error(transparent)]
    Semiring(#[from] SemiringError),

    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Errors from CTC lattice construction and computations.
#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("label sequence must be non-empty")]
    EmptyLabels,

    #[error("label token {0} equals blank id {1}")]
    LabelIsBlank(u32, u32),

    #[error("label token {token} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { token: u32, vocab: usize },

    #[error("frame count mismatch: lattice expects {expected}, log-probs have {got}")]
    FrameMismatch { expected: usize, got: usize },

    #[error("log-prob row {row} does not normalize: logsumexp = {lse}")]
    RowNotNormalized { row: usize, lse: f64 },

    #[error("data length {len} does not match {rows} x {cols}")]
    ShapeMismatch { len: usize, rows: usize, cols: usize },

    #[error("operation requires normalized log-probabilities")]
    UnnormalizedInput,

    #[error("infeasible alignment: P(y|x) = 0")]
    InfeasibleAlignment,

    #[error("alignment count exceeds 2^63 - 1")]
    CountOverflow,

    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Errors from RNN-T lattice construction and computations.
#[derive(Debug, Error, PartialEq)]
pub enum RnntError {
    #[error("label token {0} equals blank id {1}")]
    LabelIsBlank(u32, u32),

    #[error("label token {token} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { token: u32, vocab: usize },

    #[error("joint tensor length {len} does not match ({t_rows} x {u_cols} x {vocab})")]
    JointShapeMismatch {
        len: usize,
        t_rows: usize,
        u_cols: usize,
        vocab: usize,
    },

    #[error("label count {labels} does not match U = {u}")]
    LabelCountMismatch { labels: usize, u: usize },

    #[error("grid slice length mismatch: expected {expected}, got {got} for {which}")]
    GridShapeMismatch {
        which: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("joint row (t={t}, u={u}) does not normalize: logsumexp = {lse}")]
    RowNotNormalized { t: usize, u: usize, lse: f64 },

    #[error("grid shapes of teacher and student differ")]
    TeacherStudentMismatch,

    #[error("operation requires normalized log-probabilities")]
    UnnormalizedInput,

    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Errors from loss composition.
#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss weight {name} must be finite and >= 0, got {value}")]
    BadWeight { name: &'static str, value: f64 },

    #[error("state tensors have different lengths: {0} vs {1}")]
    StateShapeMismatch(usize, usize),

    #[error("state tensor length {len} is not a multiple of row length {row}")]
    BadRowLength { len: usize, row: usize },

    #[error(transparent)]
    Ctc(#[from] CtcError),

    #[error(transparent)]
    Rnnt(#[from] RnntError),

    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Errors from path enumeration (the brute-force oracle).
#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("path count exceeds the enumeration guard of {0}")]
    GuardExceeded(u64),

    #[error("binomial overflow for C({0}, {1})")]
    BinomialOverflow(usize, usize),
}
