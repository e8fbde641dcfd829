//! The semiring algebra: seven concrete semirings behind one value type.
//!
//! A semiring `(R, ⊕, ⊗, 0̄, 1̄)` is a set with two monoids where ⊗
//! distributes over ⊕ and 0̄ annihilates ⊗. Plugging different semirings
//! into the same lattice dynamic program yields likelihood (probability,
//! log), Viterbi scores (tropical), path counts (counting), alignment
//! entropy (entropy, log-entropy) and distillation KL terms
//! (log-reverse-kl) from identical traversal code.
//!
//! The log-space variants are the production semirings: every sum of
//! exponentials goes through [`log_add`] (max-subtraction form) and every
//! `p log p` through [`xlogx_log`], so intermediate values stay finite for
//! inputs that would underflow the probability domain.

use std::fmt;
use std::str::FromStr;

use crate::error::SemiringError;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Identifies one of the seven built-in semirings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SemiringId {
    /// `(R+, +, x, 0, 1)` over raw probabilities. Teaching/oracle use only:
    /// long products underflow.
    Probability,
    /// `(R u {-inf}, logadd, +, -inf, 0)` over log-probabilities.
    Log,
    /// `(R u {-inf}, max, +, -inf, 0)`: best-path (Viterbi) score.
    Tropical,
    /// `(N, +, x, 0, 1)` with every edge lifted to 1: path counting.
    Counting,
    /// Dual numbers `<p, p log p>`: accumulates sum of path `p log p`
    /// alongside the likelihood. Unstable for long sequences.
    Entropy,
    /// Log morphism of the entropy semiring on both slots:
    /// `<log p, log(-p log p)>`.
    LogEntropy,
    /// Four log-space slots
    /// `<log p, log q, log(-q log q), log(-q log p)>` carrying student
    /// likelihood, teacher likelihood, teacher entropy, and the
    /// teacher->student cross term in a single pass.
    LogReverseKl,
}

impl SemiringId {
    pub const ALL: [SemiringId; 7] = [
        SemiringId::Probability,
        SemiringId::Log,
        SemiringId::Tropical,
        SemiringId::Counting,
        SemiringId::Entropy,
        SemiringId::LogEntropy,
        SemiringId::LogReverseKl,
    ];

    /// Number of scalar components in a value of this semiring.
    pub fn arity(self) -> usize {
        match self {
            SemiringId::Probability
            | SemiringId::Log
            | SemiringId::Tropical
            | SemiringId::Counting => 1,
            SemiringId::Entropy | SemiringId::LogEntropy => 2,
            SemiringId::LogReverseKl => 4,
        }
    }

    /// True for semirings whose components live in log space.
    pub fn is_log_space(self) -> bool {
        matches!(
            self,
            SemiringId::Log | SemiringId::Tropical | SemiringId::LogEntropy | SemiringId::LogReverseKl
        )
    }

    /// True for semirings that need a teacher log-probability at lift time.
    pub fn needs_teacher(self) -> bool {
        matches!(self, SemiringId::LogReverseKl)
    }

    pub fn name(self) -> &'static str {
        match self {
            SemiringId::Probability => "probability",
            SemiringId::Log => "log",
            SemiringId::Tropical => "tropical",
            SemiringId::Counting => "counting",
            SemiringId::Entropy => "entropy",
            SemiringId::LogEntropy => "log-entropy",
            SemiringId::LogReverseKl => "log-reverse-kl",
        }
    }

    /// Additive identity 0̄.
    pub fn zero(self) -> SemiringValue {
        match self {
            SemiringId::Probability => SemiringValue::Scalar(0.0),
            SemiringId::Log | SemiringId::Tropical => SemiringValue::Scalar(NEG_INF),
            SemiringId::Counting => SemiringValue::Count(0),
            SemiringId::Entropy => SemiringValue::Pair([0.0, 0.0]),
            SemiringId::LogEntropy => SemiringValue::Pair([NEG_INF, NEG_INF]),
            SemiringId::LogReverseKl => SemiringValue::Quad([NEG_INF; 4]),
        }
    }

    /// Multiplicative identity 1̄.
    pub fn one(self) -> SemiringValue {
        match self {
            SemiringId::Probability => SemiringValue::Scalar(1.0),
            SemiringId::Log | SemiringId::Tropical => SemiringValue::Scalar(0.0),
            SemiringId::Counting => SemiringValue::Count(1),
            SemiringId::Entropy => SemiringValue::Pair([1.0, 0.0]),
            SemiringId::LogEntropy => SemiringValue::Pair([0.0, NEG_INF]),
            SemiringId::LogReverseKl => SemiringValue::Quad([0.0, 0.0, NEG_INF, NEG_INF]),
        }
    }

    /// Semiring addition a ⊕ b.
    ///
    /// Panics if either value does not have the arity of `self` (usage
    /// error). NaN components propagate; they are never repaired.
    pub fn plus(self, a: SemiringValue, b: SemiringValue) -> SemiringValue {
        match self {
            SemiringId::Probability => SemiringValue::Scalar(a.scalar(self) + b.scalar(self)),
            SemiringId::Log => SemiringValue::Scalar(log_add(a.scalar(self), b.scalar(self))),
            SemiringId::Tropical => {
                let (x, y) = (a.scalar(self), b.scalar(self));
                // f64::max would drop a NaN argument; propagate instead.
                if x.is_nan() || y.is_nan() {
                    SemiringValue::Scalar(f64::NAN)
                } else {
                    SemiringValue::Scalar(x.max(y))
                }
            }
            SemiringId::Counting => SemiringValue::Count(a.count(self).saturating_add(b.count(self))),
            SemiringId::Entropy => {
                let (x, y) = (a.pair(self), b.pair(self));
                SemiringValue::Pair([x[0] + y[0], x[1] + y[1]])
            }
            SemiringId::LogEntropy => {
                let (x, y) = (a.pair(self), b.pair(self));
                SemiringValue::Pair([log_add(x[0], y[0]), log_add(x[1], y[1])])
            }
            SemiringId::LogReverseKl => {
                let (x, y) = (a.quad(self), b.quad(self));
                SemiringValue::Quad([
                    log_add(x[0], y[0]),
                    log_add(x[1], y[1]),
                    log_add(x[2], y[2]),
                    log_add(x[3], y[3]),
                ])
            }
        }
    }

    /// Semiring multiplication a ⊗ b.
    ///
    /// Panics on arity mismatch; NaN propagates.
    pub fn times(self, a: SemiringValue, b: SemiringValue) -> SemiringValue {
        match self {
            SemiringId::Probability => SemiringValue::Scalar(a.scalar(self) * b.scalar(self)),
            SemiringId::Log | SemiringId::Tropical => {
                SemiringValue::Scalar(add_log(a.scalar(self), b.scalar(self)))
            }
            SemiringId::Counting => SemiringValue::Count(a.count(self).saturating_mul(b.count(self))),
            SemiringId::Entropy => {
                let (x, y) = (a.pair(self), b.pair(self));
                SemiringValue::Pair([x[0] * y[0], x[0] * y[1] + x[1] * y[0]])
            }
            SemiringId::LogEntropy => {
                let (x, y) = (a.pair(self), b.pair(self));
                SemiringValue::Pair([
                    add_log(x[0], y[0]),
                    log_add(add_log(x[0], y[1]), add_log(x[1], y[0])),
                ])
            }
            SemiringId::LogReverseKl => {
                let (x, y) = (a.quad(self), b.quad(self));
                SemiringValue::Quad([
                    add_log(x[0], y[0]),
                    add_log(x[1], y[1]),
                    log_add(add_log(x[1], y[2]), add_log(x[2], y[1])),
                    log_add(add_log(x[1], y[3]), add_log(x[3], y[1])),
                ])
            }
        }
    }

    /// Lifts a (student) log-probability, and for the log reverse-KL
    /// semiring also a teacher log-probability, into an edge weight.
    ///
    /// `log(-q log p)` is formed as `logq + log(-logp)`; the probability
    /// itself is never exponentiated for the log-space semirings.
    pub fn lift(
        self,
        student_logp: f64,
        teacher_logq: Option<f64>,
    ) -> Result<SemiringValue, SemiringError> {
        if self != SemiringId::Counting {
            if student_logp > 0.0 {
                return Err(SemiringError::PositiveLogProb(student_logp));
            }
            match (self.needs_teacher(), teacher_logq) {
                (true, None) => return Err(SemiringError::MissingTeacher(self.name())),
                (false, Some(_)) => return Err(SemiringError::UnexpectedTeacher(self.name())),
                (true, Some(q)) if q > 0.0 => return Err(SemiringError::PositiveLogProb(q)),
                _ => {}
            }
        }
        Ok(match self {
            SemiringId::Probability => SemiringValue::Scalar(student_logp.exp()),
            SemiringId::Log | SemiringId::Tropical => SemiringValue::Scalar(student_logp),
            SemiringId::Counting => SemiringValue::Count(1),
            SemiringId::Entropy => {
                // p log p -> 0 as p -> 0; branch to avoid 0 * -inf.
                if student_logp == NEG_INF {
                    SemiringValue::Pair([0.0, 0.0])
                } else {
                    let p = student_logp.exp();
                    SemiringValue::Pair([p, p * student_logp])
                }
            }
            SemiringId::LogEntropy => {
                SemiringValue::Pair([student_logp, xlogx_log_unchecked(student_logp)])
            }
            SemiringId::LogReverseKl => {
                let logq = teacher_logq.expect("validated above");
                SemiringValue::Quad([
                    student_logp,
                    logq,
                    xlogx_log_unchecked(logq),
                    neg_xlogy_log(logq, student_logp),
                ])
            }
        })
    }
}

impl fmt::Display for SemiringId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemiringId {
    type Err = SemiringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probability" => Ok(SemiringId::Probability),
            "log" => Ok(SemiringId::Log),
            "tropical" => Ok(SemiringId::Tropical),
            "counting" => Ok(SemiringId::Counting),
            "entropy" => Ok(SemiringId::Entropy),
            "log-entropy" => Ok(SemiringId::LogEntropy),
            "log-reverse-kl" => Ok(SemiringId::LogReverseKl),
            other => Err(SemiringError::UnknownName(other.to_string())),
        }
    }
}

/// A value of one of the semirings. The variant must match the arity of
/// the `SemiringId` it is used with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SemiringValue {
    Scalar(f64),
    Count(u64),
    Pair([f64; 2]),
    Quad([f64; 4]),
}

impl SemiringValue {
    pub fn arity(self) -> usize {
        match self {
            SemiringValue::Scalar(_) | SemiringValue::Count(_) => 1,
            SemiringValue::Pair(_) => 2,
            SemiringValue::Quad(_) => 4,
        }
    }

    /// Component `i` as f64 (counts are converted).
    pub fn component(self, i: usize) -> f64 {
        match self {
            SemiringValue::Scalar(x) => {
                assert_eq!(i, 0, "scalar value has a single component");
                x
            }
            SemiringValue::Count(n) => {
                assert_eq!(i, 0, "count value has a single component");
                n as f64
            }
            SemiringValue::Pair(p) => p[i],
            SemiringValue::Quad(q) => q[i],
        }
    }

    /// Does the variant match what semiring `s` operates on?
    pub fn matches(self, s: SemiringId) -> bool {
        matches!(
            (self, s),
            (SemiringValue::Scalar(_), SemiringId::Probability)
                | (SemiringValue::Scalar(_), SemiringId::Log)
                | (SemiringValue::Scalar(_), SemiringId::Tropical)
                | (SemiringValue::Count(_), SemiringId::Counting)
                | (SemiringValue::Pair(_), SemiringId::Entropy)
                | (SemiringValue::Pair(_), SemiringId::LogEntropy)
                | (SemiringValue::Quad(_), SemiringId::LogReverseKl)
        )
    }

    fn scalar(self, s: SemiringId) -> f64 {
        match self {
            SemiringValue::Scalar(x) => x,
            other => panic!("semiring {s} expects a scalar value, got {other:?}"),
        }
    }

    fn count(self, s: SemiringId) -> u64 {
        match self {
            SemiringValue::Count(n) => n,
            other => panic!("semiring {s} expects a count value, got {other:?}"),
        }
    }

    fn pair(self, s: SemiringId) -> [f64; 2] {
        match self {
            SemiringValue::Pair(p) => p,
            other => panic!("semiring {s} expects a pair value, got {other:?}"),
        }
    }

    fn quad(self, s: SemiringId) -> [f64; 4] {
        match self {
            SemiringValue::Quad(q) => q,
            other => panic!("semiring {s} expects a quad value, got {other:?}"),
        }
    }
}

/// Numerically stable `log(e^a + e^b)` via max-subtraction:
/// `m + log(e^(a-m) + e^(b-m))` with `m = max(a, b)`.
///
/// `(-inf, -inf)` maps to `-inf` by an explicit branch so no
/// `(-inf) - (-inf)` NaN can arise.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-space product `a + b` with `-inf` absorbing: if either argument is
/// `-inf` the product is `-inf`, even if the other is `+inf`.
#[inline]
pub fn add_log(a: f64, b: f64) -> f64 {
    if a == NEG_INF || b == NEG_INF {
        return NEG_INF;
    }
    a + b
}

/// `log(-p log p)` computed from `log p` without forming `p`.
///
/// Limits: `logp = 0` (p = 1) and `logp = -inf` (p = 0) both give `-inf`,
/// since `p log p -> 0` at both ends.
pub fn xlogx_log(logp: f64) -> Result<f64, SemiringError> {
    if logp > 0.0 {
        return Err(SemiringError::PositiveLogProb(logp));
    }
    Ok(xlogx_log_unchecked(logp))
}

#[inline]
pub(crate) fn xlogx_log_unchecked(logp: f64) -> f64 {
    if logp == 0.0 || logp == NEG_INF {
        return NEG_INF;
    }
    if logp.is_nan() {
        return f64::NAN;
    }
    // log(-p log p) = log p + log(-log p); (-logp).ln() is exact-from-logp
    // even for logp within one ulp of 0 where exp(logp) would round to 1.
    logp + (-logp).ln()
}

/// `log(-q log p)` as `logq + log(-logp)`, with the q = 0 and p = 1 limits
/// mapped to `-inf` (zero contribution).
#[inline]
pub(crate) fn neg_xlogy_log(logq: f64, logp: f64) -> f64 {
    if logq == NEG_INF || logp == 0.0 {
        return NEG_INF;
    }
    if logq.is_nan() || logp.is_nan() {
        return f64::NAN;
    }
    // p = 0 with q > 0: the cross term -q log p is genuinely infinite.
    logq + (-logp).ln()
}

/// Maps a log-space value onto its probability-domain counterpart:
/// `log -> probability`, `log-entropy -> entropy` (with the sign of the
/// `p log p` slot restored), `log-reverse-kl -> componentwise exp`,
/// `tropical -> exp` (max becomes max). Identity on the rest.
pub fn to_probability_domain(s: SemiringId, v: SemiringValue) -> SemiringValue {
    match s {
        SemiringId::Probability | SemiringId::Entropy | SemiringId::Counting => v,
        SemiringId::Log | SemiringId::Tropical => match v {
            SemiringValue::Scalar(x) => SemiringValue::Scalar(x.exp()),
            other => panic!("semiring {s} expects a scalar value, got {other:?}"),
        },
        SemiringId::LogEntropy => match v {
            SemiringValue::Pair(p) => SemiringValue::Pair([p[0].exp(), -p[1].exp()]),
            other => panic!("semiring {s} expects a pair value, got {other:?}"),
        },
        SemiringId::LogReverseKl => match v {
            SemiringValue::Quad(q) => {
                SemiringValue::Quad([q[0].exp(), q[1].exp(), q[2].exp(), q[3].exp()])
            }
            other => panic!("semiring {s} expects a quad value, got {other:?}"),
        },
    }
}

/// The probability-domain semiring corresponding to a log-space one
/// (used by the isomorphism checks).
pub fn probability_domain_id(s: SemiringId) -> SemiringId {
    match s {
        SemiringId::Log | SemiringId::Tropical => SemiringId::Probability,
        SemiringId::LogEntropy => SemiringId::Entropy,
        other => other,
    }
}

/// Relative closeness with exact equality (covering infinities) as a
/// fast path: `|a - b| <= tol * max(|a|, |b|)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    if a.is_nan() || b.is_nan() {
        return false;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}
