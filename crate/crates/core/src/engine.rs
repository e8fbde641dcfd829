//! The generic lattice dynamic program: one forward pass accumulates
//! semiring weights from roots to leaves in linear time, independent of
//! the (possibly exponential) number of maximal paths.
//!
//! Accumulation order is pinned: each vertex folds its incoming edges in
//! ascending `(dst, src)` order and the leaf sum folds leaves in
//! ascending index order, so results are bit-reproducible. The wavefront
//! entry point may evaluate vertices of one group in parallel, but every
//! per-vertex fold stays sequential, so it is bit-identical to the
//! sequential schedule.

use rayon::prelude::*;

use crate::error::EngineError;
use crate::lattice::Lattice;
use crate::semiring::{SemiringId, SemiringValue};

/// Scalar floating multiplications and additions spent inside ⊗ and ⊕.
///
/// Accounting convention: a ⊗ costs (3 mul, 1 add) for the arity-2
/// semirings, (6 mul, 2 add) for the arity-4 one (log-space products
/// count as multiplications), (1 mul, 0 add) for probability/counting
/// and (0 mul, 1 add) for log/tropical. A binary ⊕ costs one addition
/// per component; max-subtraction bookkeeping is excluded. Root
/// initialization is free, but edges out of roots incur a full ⊗.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    pub real_multiplications: u64,
    pub real_additions: u64,
}

impl OpCount {
    fn add(&mut self, (mul, add): (u64, u64), times: u64) {
        self.real_multiplications += mul * times;
        self.real_additions += add * times;
    }
}

fn otimes_cost(s: SemiringId) -> (u64, u64) {
    match s {
        SemiringId::Probability | SemiringId::Counting => (1, 0),
        SemiringId::Log | SemiringId::Tropical => (0, 1),
        SemiringId::Entropy | SemiringId::LogEntropy => (3, 1),
        SemiringId::LogReverseKl => (6, 2),
    }
}

fn oplus_cost(s: SemiringId) -> (u64, u64) {
    (0, s.arity() as u64)
}

/// Expected operation count of one forward pass, derived from the
/// lattice structure alone. [`compute`] with `want_ops` measures actual
/// ⊗/⊕ invocations; the two agree exactly when (and only when) the
/// engine traverses the lattice once.
pub fn count_ops(lattice: &Lattice, s: SemiringId) -> OpCount {
    let mut ops = OpCount::default();
    for v in 0..lattice.vertex_count() as u32 {
        if lattice.is_root(v) {
            continue;
        }
        let k = lattice.in_degree(v) as u64;
        if k > 0 {
            ops.add(otimes_cost(s), k);
            ops.add(oplus_cost(s), k - 1);
        }
    }
    let leaves = lattice.leaves().len() as u64;
    if leaves > 1 {
        ops.add(oplus_cost(s), leaves - 1);
    }
    ops
}

/// Running tally of semiring-operation invocations, converted to scalar
/// op counts via the accounting convention at the end of a pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    otimes: u64,
    oplus: u64,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.otimes += other.otimes;
        self.oplus += other.oplus;
    }

    fn to_ops(self, s: SemiringId) -> OpCount {
        let mut ops = OpCount::default();
        ops.add(otimes_cost(s), self.otimes);
        ops.add(oplus_cost(s), self.oplus);
        ops
    }
}

/// Result of a lattice computation: the leaf sum, optional per-vertex
/// tables, and the optional operation count.
#[derive(Debug, Clone)]
pub struct ComputeResult {
    pub total: SemiringValue,
    pub forward: Option<Vec<SemiringValue>>,
    pub backward: Option<Vec<SemiringValue>>,
    pub ops: Option<OpCount>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ComputeOptions {
    pub want_forward: bool,
    pub want_backward: bool,
    pub want_ops: bool,
}

impl ComputeOptions {
    pub fn tables() -> Self {
        ComputeOptions {
            want_forward: true,
            want_backward: true,
            want_ops: false,
        }
    }

    pub fn ops() -> Self {
        ComputeOptions {
            want_ops: true,
            ..Default::default()
        }
    }
}

fn validate_weights(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
) -> Result<(), EngineError> {
    if let Some(max_ref) = lattice.max_weight_ref() {
        if max_ref as usize >= weights.len() {
            return Err(EngineError::WeightRefOutOfRange {
                weight_ref: max_ref,
                table_len: weights.len(),
            });
        }
    }
    for (index, w) in weights.iter().enumerate() {
        if !w.matches(s) {
            return Err(EngineError::WeightArity {
                index,
                semiring: s.name(),
            });
        }
    }
    Ok(())
}

fn fold_vertex(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
    forward: &[SemiringValue],
    v: u32,
) -> (SemiringValue, Tally) {
    let mut tally = Tally::default();
    if lattice.is_root(v) {
        // 1̄ ⊗ entry collapses to an assignment: initialization is free.
        let val = match lattice.root_entry(v) {
            Some(r) => weights[r as usize],
            None => s.one(),
        };
        return (val, tally);
    }
    let mut acc: Option<SemiringValue> = None;
    for e in lattice.incoming(v) {
        let msg = s.times(forward[e.src as usize], weights[e.weight_ref as usize]);
        tally.otimes += 1;
        acc = Some(match acc {
            None => msg,
            Some(a) => {
                tally.oplus += 1;
                s.plus(a, msg)
            }
        });
    }
    // In-degree-0 non-roots carry no path mass.
    (acc.unwrap_or_else(|| s.zero()), tally)
}

fn leaf_sum(lattice: &Lattice, s: SemiringId, forward: &[SemiringValue], tally: &mut Tally) -> SemiringValue {
    let mut acc: Option<SemiringValue> = None;
    for &l in lattice.leaves() {
        let v = forward[l as usize];
        acc = Some(match acc {
            None => v,
            Some(a) => {
                tally.oplus += 1;
                s.plus(a, v)
            }
        });
    }
    acc.unwrap_or_else(|| s.zero())
}

/// Forward pass over the whole lattice in ascending vertex order.
pub fn forward_table(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
) -> Result<Vec<SemiringValue>, EngineError> {
    validate_weights(lattice, weights, s)?;
    let mut forward = Vec::with_capacity(lattice.vertex_count());
    for v in 0..lattice.vertex_count() as u32 {
        let (val, _) = fold_vertex(lattice, weights, s, &forward, v);
        forward.push(val);
    }
    Ok(forward)
}

/// The full computation: leaf sum plus optional tables and op count.
/// The reported ops are measured from the ⊗/⊕ invocations this call
/// actually performed.
pub fn compute(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
    opts: ComputeOptions,
) -> Result<ComputeResult, EngineError> {
    validate_weights(lattice, weights, s)?;
    let mut tally = Tally::default();
    let mut forward = Vec::with_capacity(lattice.vertex_count());
    for v in 0..lattice.vertex_count() as u32 {
        let (val, t) = fold_vertex(lattice, weights, s, &forward, v);
        tally.merge(t);
        forward.push(val);
    }
    let total = leaf_sum(lattice, s, &forward, &mut tally);
    let backward = if opts.want_backward {
        Some(backward_table(lattice, weights, s)?)
    } else {
        None
    };
    Ok(ComputeResult {
        total,
        forward: opts.want_forward.then_some(forward),
        backward,
        ops: opts.want_ops.then(|| tally.to_ops(s)),
    })
}

/// Forward pass on the edge-reversed lattice: `backward[v]` accumulates
/// the weight of all v-to-leaf path suffixes, with `backward[leaf] = 1̄`.
/// Root entry weights are not folded in (they belong to the forward
/// side), so `forward[v] ⊗ backward[v]` summed over a cut gives the
/// total.
pub fn backward_table(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
) -> Result<Vec<SemiringValue>, EngineError> {
    validate_weights(lattice, weights, s)?;
    let n = lattice.vertex_count();
    let mut backward = vec![s.zero(); n];
    for v in (0..n as u32).rev() {
        backward[v as usize] = if lattice.is_leaf(v) {
            s.one()
        } else {
            let mut acc: Option<SemiringValue> = None;
            for e in lattice.outgoing(v) {
                let msg = s.times(backward[e.dst as usize], weights[e.weight_ref as usize]);
                acc = Some(match acc {
                    None => msg,
                    Some(a) => s.plus(a, msg),
                });
            }
            acc.unwrap_or_else(|| s.zero())
        };
    }
    Ok(backward)
}

/// Like [`compute`], but evaluates the given vertex groups in order,
/// with the vertices inside one group evaluated (potentially) in
/// parallel. Every vertex must appear in exactly one group, and all of a
/// vertex's predecessors must lie in strictly earlier groups.
///
/// `threads = 0` runs sequentially in-place. Results are bit-identical
/// to [`compute`] because per-vertex folds are unchanged and group
/// results are scattered in deterministic order.
pub fn compute_wavefront(
    lattice: &Lattice,
    weights: &[SemiringValue],
    s: SemiringId,
    opts: ComputeOptions,
    groups: &[Vec<u32>],
    threads: usize,
) -> Result<ComputeResult, EngineError> {
    validate_weights(lattice, weights, s)?;
    let n = lattice.vertex_count();
    let mut forward = vec![s.zero(); n];
    let mut tally = Tally::default();

    if threads <= 1 {
        for group in groups {
            for &v in group {
                let (val, t) = fold_vertex(lattice, weights, s, &forward, v);
                tally.merge(t);
                forward[v as usize] = val;
            }
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        for group in groups {
            let results: Vec<(u32, (SemiringValue, Tally))> = pool.install(|| {
                group
                    .par_iter()
                    .map(|&v| (v, fold_vertex(lattice, weights, s, &forward, v)))
                    .collect()
            });
            for (v, (val, t)) in results {
                tally.merge(t);
                forward[v as usize] = val;
            }
        }
    }

    let total = leaf_sum(lattice, s, &forward, &mut tally);
    let backward = if opts.want_backward {
        Some(backward_table(lattice, weights, s)?)
    } else {
        None
    };
    Ok(ComputeResult {
        total,
        forward: opts.want_forward.then_some(forward),
        backward,
        ops: opts.want_ops.then(|| tally.to_ops(s)),
    })
}

/// Lifts a raw log-probability table (and optional teacher table) into
/// semiring weights for `s`.
pub fn lift_table(
    student_logp: &[f64],
    teacher_logq: Option<&[f64]>,
    s: SemiringId,
) -> Result<Vec<SemiringValue>, EngineError> {
    if s.needs_teacher() && teacher_logq.is_none() {
        return Err(EngineError::MissingTeacherTable(s.name()));
    }
    student_logp
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            let lq = teacher_logq.filter(|_| s.needs_teacher()).map(|t| t[i]);
            s.lift(lp, lq).map_err(EngineError::from)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Edge, Root};
    use crate::semiring::rel_close;

    fn diamond() -> Lattice {
        Lattice::new(
            5,
            vec![
                Edge::new(0, 2, 0),
                Edge::new(1, 2, 1),
                Edge::new(2, 3, 2),
                Edge::new(2, 4, 3),
            ],
            vec![Root::bare(0), Root::bare(1)],
            vec![3, 4],
        )
        .unwrap()
    }

    const PROBS: [f64; 4] = [0.2, 0.3, 0.4, 0.6];

    fn lifted(s: SemiringId) -> Vec<SemiringValue> {
        PROBS
            .iter()
            .map(|&p| s.lift(p.ln(), s.needs_teacher().then(|| p.ln())).unwrap())
            .collect()
    }

    #[test]
    fn diamond_probability_total() {
        // (p1 + p2)(p3 + p4) = 0.5 * 1.0
        let r = compute(
            &diamond(),
            &lifted(SemiringId::Probability),
            SemiringId::Probability,
            ComputeOptions::default(),
        )
        .unwrap();
        assert!(rel_close(r.total.component(0), 0.5, 1e-12));
    }

    #[test]
    fn diamond_log_total() {
        let r = compute(
            &diamond(),
            &lifted(SemiringId::Log),
            SemiringId::Log,
            ComputeOptions::default(),
        )
        .unwrap();
        assert!(rel_close(r.total.component(0), 0.5f64.ln(), 1e-12));
    }

    #[test]
    fn single_edge_total_is_edge_weight() {
        let l = Lattice::new(
            2,
            vec![Edge::new(0, 1, 0)],
            vec![Root::bare(0)],
            vec![1],
        )
        .unwrap();
        for s in SemiringId::ALL {
            let w = lift_table(&[-0.35], s.needs_teacher().then(|| vec![-0.6]).as_deref(), s)
                .unwrap();
            let r = compute(&l, &w, s, ComputeOptions::default()).unwrap();
            assert_eq!(r.total, w[0], "semiring {s}");
        }
    }

    #[test]
    fn backward_matches_hand_computation() {
        // backward[v3] = ln(p3 + p4); backward at leaves = 1̄.
        let l = diamond();
        let b = backward_table(&l, &lifted(SemiringId::Log), SemiringId::Log).unwrap();
        assert!(rel_close(b[2].component(0), (0.4f64 + 0.6).ln(), 1e-12));
        assert_eq!(b[3], SemiringId::Log.one());
        assert_eq!(b[4], SemiringId::Log.one());
    }

    #[test]
    fn backward_is_forward_on_reversed_lattice() {
        let l = diamond();
        // Reverse by flipping edges and renumbering v -> 4 - v.
        let rev = Lattice::new(
            5,
            vec![
                Edge::new(4 - 2, 4 - 0, 0),
                Edge::new(4 - 2, 4 - 1, 1),
                Edge::new(4 - 3, 4 - 2, 2),
                Edge::new(4 - 4, 4 - 2, 3),
            ],
            vec![Root::bare(4 - 3), Root::bare(4 - 4)],
            vec![4 - 0, 4 - 1],
        )
        .unwrap();
        let w = lifted(SemiringId::Log);
        let b = backward_table(&l, &w, SemiringId::Log).unwrap();
        let f = forward_table(&rev, &w, SemiringId::Log).unwrap();
        for v in 0..5u32 {
            assert_eq!(b[v as usize], f[(4 - v) as usize], "vertex {v}");
        }
    }

    #[test]
    fn degenerate_lattice_totals_zero() {
        // Root and leaf are disconnected: total must be 0̄, not an error.
        let l = Lattice::new(
            3,
            vec![Edge::new(0, 1, 0)],
            vec![Root::bare(0)],
            vec![2],
        )
        .unwrap();
        let w = lift_table(&[-1.0], None, SemiringId::Log).unwrap();
        let r = compute(&l, &w, SemiringId::Log, ComputeOptions::default()).unwrap();
        assert_eq!(r.total, SemiringId::Log.zero());
    }

    #[test]
    fn cut_identity_log() {
        let l = diamond();
        let w = lifted(SemiringId::Log);
        let r = compute(&l, &w, SemiringId::Log, ComputeOptions::tables()).unwrap();
        let (f, b) = (r.forward.unwrap(), r.backward.unwrap());
        let total = r.total.component(0);
        // cuts: {v1, v2}, {v3}, {v4, v5}
        for cut in [vec![0usize, 1], vec![2], vec![3, 4]] {
            let lse = cut
                .iter()
                .map(|&v| f[v].component(0) + b[v].component(0))
                .fold(f64::NEG_INFINITY, crate::semiring::log_add);
            assert!((lse - total).abs() < 1e-10, "cut {cut:?}: {lse} vs {total}");
        }
    }

    #[test]
    fn op_count_examples() {
        let l = diamond();
        // 4 edges, one in-degree-2 vertex (1 binary ⊕), leaf fold 1 binary ⊕.
        let ops = count_ops(&l, SemiringId::LogEntropy);
        assert_eq!(ops.real_multiplications, 4 * 3);
        assert_eq!(ops.real_additions, 4 + 2 + 2);
        let ops_log = count_ops(&l, SemiringId::Log);
        assert_eq!(ops_log.real_multiplications, 0);
        assert_eq!(ops_log.real_additions, 4 + 1 + 1);
        // pure function of (lattice, semiring)
        assert_eq!(ops, count_ops(&l, SemiringId::LogEntropy));
    }

    #[test]
    fn measured_ops_match_structural_prediction() {
        let l = diamond();
        for s in SemiringId::ALL {
            let w = lift_table(
                &[-1.0, -0.5, -0.25, -2.0],
                s.needs_teacher().then(|| vec![-1.0; 4]).as_deref(),
                s,
            )
            .unwrap();
            let w = if s == SemiringId::Counting {
                vec![SemiringValue::Count(1); 4]
            } else {
                w
            };
            let r = compute(&l, &w, s, ComputeOptions::ops()).unwrap();
            assert_eq!(r.ops.unwrap(), count_ops(&l, s), "semiring {s}");
        }
    }

    #[test]
    fn weight_validation_errors() {
        let l = diamond();
        let short = lift_table(&[-1.0], None, SemiringId::Log).unwrap();
        assert!(matches!(
            compute(&l, &short, SemiringId::Log, ComputeOptions::default()),
            Err(EngineError::WeightRefOutOfRange { .. })
        ));
        let wrong = vec![SemiringValue::Pair([0.0, 0.0]); 4];
        assert!(matches!(
            compute(&l, &wrong, SemiringId::Log, ComputeOptions::default()),
            Err(EngineError::WeightArity { .. })
        ));
    }

    #[test]
    fn wavefront_matches_sequential_bitwise() {
        let l = diamond();
        let w = lifted(SemiringId::LogEntropy);
        let groups = vec![vec![0u32, 1], vec![2], vec![3, 4]];
        let seq = compute(&l, &w, SemiringId::LogEntropy, ComputeOptions::tables()).unwrap();
        for threads in [0, 1, 2, 4] {
            let par = compute_wavefront(
                &l,
                &w,
                SemiringId::LogEntropy,
                ComputeOptions::tables(),
                &groups,
                threads,
            )
            .unwrap();
            assert_eq!(par.total, seq.total);
            assert_eq!(par.forward, seq.forward);
        }
    }
}
