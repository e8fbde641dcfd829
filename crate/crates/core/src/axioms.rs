//! Randomized semiring-axiom suite.
//!
//! For each semiring, draws random value triples from lifted
//! log-probabilities and checks commutativity of ⊕, associativity of ⊕
//! and ⊗, both distributivity laws, the identity laws, and annihilation.
//! Comparisons happen in the probability domain after exponentiation, at
//! a relative tolerance, so the log-space variants are checked against
//! the same yardstick as their probability-domain counterparts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::semiring::{rel_close, to_probability_domain, SemiringId, SemiringValue};

pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_SEED: u64 = 0x5EB1_19F0;

/// Range the random log-probabilities are drawn from.
const LOGP_RANGE: std::ops::Range<f64> = -30.0..0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Law {
    PlusCommutative,
    PlusAssociative,
    TimesAssociative,
    DistributiveLeft,
    DistributiveRight,
    PlusIdentity,
    TimesIdentity,
    Annihilation,
}

impl Law {
    pub const ALL: [Law; 8] = [
        Law::PlusCommutative,
        Law::PlusAssociative,
        Law::TimesAssociative,
        Law::DistributiveLeft,
        Law::DistributiveRight,
        Law::PlusIdentity,
        Law::TimesIdentity,
        Law::Annihilation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Law::PlusCommutative => "plus-commutative",
            Law::PlusAssociative => "plus-associative",
            Law::TimesAssociative => "times-associative",
            Law::DistributiveLeft => "distributive-left",
            Law::DistributiveRight => "distributive-right",
            Law::PlusIdentity => "plus-identity",
            Law::TimesIdentity => "times-identity",
            Law::Annihilation => "annihilation",
        }
    }
}

/// Outcome of one semiring's run: trial count and any failed laws.
#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub semiring: SemiringId,
    pub trials: usize,
    pub failures: Vec<LawFailure>,
}

#[derive(Debug, Clone)]
pub struct LawFailure {
    pub law: Law,
    pub trial: usize,
    pub lhs: SemiringValue,
    pub rhs: SemiringValue,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_value(s: SemiringId, rng: &mut ChaCha8Rng) -> SemiringValue {
    if s == SemiringId::Counting {
        // Lifted counting weights are all 1, which makes the laws vacuous;
        // draw small raw counts instead so the integer arithmetic is
        // actually exercised.
        return SemiringValue::Count(rng.gen_range(0..1_000_000u64));
    }
    let logp = rng.gen_range(LOGP_RANGE.clone());
    let logq = s.needs_teacher().then(|| rng.gen_range(LOGP_RANGE.clone()));
    s.lift(logp, logq).expect("in-range log-probabilities")
}

fn values_close(s: SemiringId, a: SemiringValue, b: SemiringValue, tol: f64) -> bool {
    if s == SemiringId::Counting {
        return a == b;
    }
    let (pa, pb) = (to_probability_domain(s, a), to_probability_domain(s, b));
    (0..s.arity()).all(|i| rel_close(pa.component(i), pb.component(i), tol))
}

/// Runs all eight laws for one semiring. Deterministic for a fixed seed.
pub fn check_semiring(s: SemiringId, trials: usize, tol: f64, seed: u64) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ s.name().len() as u64);
    let mut failures = Vec::new();
    let (zero, one) = (s.zero(), s.one());

    for trial in 0..trials {
        let a = random_value(s, &mut rng);
        let b = random_value(s, &mut rng);
        let c = random_value(s, &mut rng);

        let mut check = |law: Law, lhs: SemiringValue, rhs: SemiringValue| {
            if !values_close(s, lhs, rhs, tol) {
                failures.push(LawFailure {
                    law,
                    trial,
                    lhs,
                    rhs,
                });
            }
        };

        check(Law::PlusCommutative, s.plus(a, b), s.plus(b, a));
        check(
            Law::PlusAssociative,
            s.plus(s.plus(a, b), c),
            s.plus(a, s.plus(b, c)),
        );
        check(
            Law::TimesAssociative,
            s.times(s.times(a, b), c),
            s.times(a, s.times(b, c)),
        );
        check(
            Law::DistributiveLeft,
            s.times(a, s.plus(b, c)),
            s.plus(s.times(a, b), s.times(a, c)),
        );
        check(
            Law::DistributiveRight,
            s.times(s.plus(b, c), a),
            s.plus(s.times(b, a), s.times(c, a)),
        );
        check(Law::PlusIdentity, s.plus(a, zero), a);
        check(Law::PlusIdentity, s.plus(zero, a), a);
        check(Law::TimesIdentity, s.times(a, one), a);
        check(Law::TimesIdentity, s.times(one, a), a);
        check(Law::Annihilation, s.times(a, zero), zero);
        check(Law::Annihilation, s.times(zero, a), zero);
    }

    AxiomReport {
        semiring: s,
        trials,
        failures,
    }
}

/// Runs the suite over every built-in semiring.
pub fn check_all(trials: usize, tol: f64, seed: u64) -> Vec<AxiomReport> {
    SemiringId::ALL
        .iter()
        .map(|&s| check_semiring(s, trials, tol, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes_for_all_semirings() {
        for report in check_all(500, DEFAULT_TOLERANCE, DEFAULT_SEED) {
            assert!(
                report.passed(),
                "{} failed: {:?}",
                report.semiring,
                report.failures.first()
            );
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = check_semiring(SemiringId::LogEntropy, 100, 1e-9, 7);
        let b = check_semiring(SemiringId::LogEntropy, 100, 1e-9, 7);
        assert_eq!(a.failures.len(), b.failures.len());
    }
}
