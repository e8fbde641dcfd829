//! Brute-force reference computations.
//!
//! Enumerates every maximal path explicitly and sums in the probability
//! domain at 64-bit. This is the ground truth at small scale and the
//! stability foil at large scale: it is expected to underflow where the
//! log-space engine does not, and tests assert that divergence
//! direction.

use crate::error::OracleError;
use crate::lattice::Lattice;

/// Hard cap on enumerated paths.
pub const PATH_GUARD: u64 = 1_000_000;

/// One maximal path: the weight refs it multiplies (root entry first,
/// then edge refs in traversal order), the vertices it visits, and its
/// log-probability under the student (and optionally teacher) table.
#[derive(Debug, Clone)]
pub struct AlignmentPath {
    pub refs: Vec<u32>,
    pub vertices: Vec<u32>,
    pub logp: f64,
    pub logq: Option<f64>,
}

/// Depth-first enumeration of all maximal paths, deterministic: roots in
/// ascending order, outgoing edges in ascending destination order.
pub fn enumerate_paths(
    lattice: &Lattice,
    student_logp: &[f64],
    teacher_logq: Option<&[f64]>,
) -> Result<Vec<AlignmentPath>, OracleError> {
    let mut paths = Vec::new();
    let mut refs = Vec::new();
    let mut vertices = Vec::new();
    for root in lattice.roots() {
        if let Some(entry) = root.entry_ref {
            refs.push(entry);
        }
        vertices.push(root.vertex);
        dfs(
            lattice,
            student_logp,
            teacher_logq,
            root.vertex,
            &mut refs,
            &mut vertices,
            &mut paths,
        )?;
        vertices.pop();
        if root.entry_ref.is_some() {
            refs.pop();
        }
    }
    Ok(paths)
}

fn dfs(
    lattice: &Lattice,
    student_logp: &[f64],
    teacher_logq: Option<&[f64]>,
    v: u32,
    refs: &mut Vec<u32>,
    vertices: &mut Vec<u32>,
    paths: &mut Vec<AlignmentPath>,
) -> Result<(), OracleError> {
    if lattice.is_leaf(v) {
        if paths.len() as u64 >= PATH_GUARD {
            return Err(OracleError::GuardExceeded(PATH_GUARD));
        }
        // in listed order, exactly
        let logp = refs.iter().map(|&r| student_logp[r as usize]).sum();
        let logq = teacher_logq.map(|t| refs.iter().map(|&r| t[r as usize]).sum());
        paths.push(AlignmentPath {
            refs: refs.clone(),
            vertices: vertices.clone(),
            logp,
            logq,
        });
        return Ok(());
    }
    for e in lattice.outgoing(v) {
        refs.push(e.weight_ref);
        vertices.push(e.dst);
        dfs(lattice, student_logp, teacher_logq, e.dst, refs, vertices, paths)?;
        vertices.pop();
        refs.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// `Σ p(π)`
    Likelihood,
    /// `-Σ p(π) log p(π)`
    Entropy,
    /// `Σ q(π) log (q(π) / p(π))`
    Kl,
    /// `-Σ q(π) log p(π)`
    Cross,
}

/// Direct probability-domain summation over enumerated paths.
pub fn oracle_quantities(paths: &[AlignmentPath], mode: OracleMode) -> f64 {
    match mode {
        OracleMode::Likelihood => paths.iter().map(|p| p.logp.exp()).sum(),
        OracleMode::Entropy => paths
            .iter()
            .map(|p| {
                let prob = p.logp.exp();
                if prob == 0.0 {
                    0.0
                } else {
                    -prob * p.logp
                }
            })
            .sum(),
        OracleMode::Kl => paths
            .iter()
            .map(|p| {
                let lq = p.logq.expect("kl mode needs teacher log-probs");
                let q = lq.exp();
                if q == 0.0 {
                    0.0
                } else {
                    q * (lq - p.logp)
                }
            })
            .sum(),
        OracleMode::Cross => paths
            .iter()
            .map(|p| {
                let lq = p.logq.expect("cross mode needs teacher log-probs");
                let q = lq.exp();
                if q == 0.0 {
                    0.0
                } else {
                    -q * p.logp
                }
            })
            .sum(),
    }
}

/// Log-probability of the single heaviest path (tropical reference).
pub fn best_path_logp(paths: &[AlignmentPath]) -> f64 {
    paths
        .iter()
        .map(|p| p.logp)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Probability that a maximal path passes through `vertex`, given the
/// enumerated paths (state-posterior reference).
pub fn oracle_vertex_posterior(paths: &[AlignmentPath], vertex: u32) -> f64 {
    let total: f64 = paths.iter().map(|p| p.logp.exp()).sum();
    let through: f64 = paths
        .iter()
        .filter(|p| p.vertices.contains(&vertex))
        .map(|p| p.logp.exp())
        .sum();
    through / total
}

/// Central finite difference, step 1e-6, of `log(quantity)` with respect
/// to one student log-probability, re-enumerating both times. The log is
/// taken so the result matches the engine's log-space total components.
pub fn oracle_gradient(
    lattice: &Lattice,
    student_logp: &[f64],
    teacher_logq: Option<&[f64]>,
    mode: OracleMode,
    weight_ref: u32,
) -> Result<f64, OracleError> {
    let h = 1e-6;
    let eval = |delta: f64| -> Result<f64, OracleError> {
        let mut t = student_logp.to_vec();
        t[weight_ref as usize] += delta;
        let paths = enumerate_paths(lattice, &t, teacher_logq)?;
        Ok(oracle_quantities(&paths, mode).ln())
    };
    Ok((eval(h)? - eval(-h)?) / (2.0 * h))
}

/// The naive entropy cost model: every path multiplies its `T + U` edge
/// weights (`T + U - 1` multiplications), forms `p log p` (one more) and
/// scales it (one more), then the `N = C(T+U, U)` per-path terms are
/// summed with `N - 1` additions.
pub fn naive_op_count(t: usize, u: usize) -> Result<(u64, u64), OracleError> {
    let n = binomial(t + u, u)?;
    let per_path = (t + u + 1) as u64;
    let muls = n
        .checked_mul(per_path)
        .ok_or(OracleError::BinomialOverflow(t + u, u))?;
    Ok((muls, n - 1))
}

fn binomial(n: usize, k: usize) -> Result<u64, OracleError> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(OracleError::BinomialOverflow(n, k))?
            / (i + 1) as u128;
    }
    u64::try_from(acc).map_err(|_| OracleError::BinomialOverflow(n, k))
}
