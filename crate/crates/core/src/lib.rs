//! Semiring dynamic programming over CTC and RNN-T alignment lattices.
//!
//! One generic forward pass ([`engine::compute`]) over a weighted DAG
//! computes whatever the plugged-in semiring encodes: likelihood,
//! Viterbi score, path counts, alignment entropy, or the pieces of a
//! sequence-level distillation KL. The log-space semirings keep every
//! intermediate finite where naive probability-domain accumulation
//! underflows, and hand-derived adjoints give exact reverse-mode
//! gradients of any log-space output component.

pub mod axioms;
pub mod ctc;
pub mod engine;
pub mod error;
pub mod grad;
pub mod io;
pub mod lattice;
pub mod losses;
pub mod oracle;
pub mod rnnt;
pub mod semiring;

pub use engine::{compute, ComputeOptions, ComputeResult, OpCount};
pub use grad::{gradient, GradientTable};
pub use lattice::{Edge, Lattice, Root};
pub use semiring::{SemiringId, SemiringValue};
