//! Property tests: engine-vs-enumeration equivalence on random DAGs,
//! the log/probability isomorphism, NaN hygiene, schedule equivalence,
//! and the CTC/RNN-T structural invariants.

use proptest::prelude::*;

use semirng_core::ctc::{
    build_ctc_lattice, ctc_alignment_count, ctc_alignment_entropy, ctc_nll, ctc_state_posteriors,
    FrameLogProbs, LabelSequence,
};
use semirng_core::engine::{compute, compute_wavefront, lift_table, ComputeOptions};
use semirng_core::lattice::{Edge, Lattice, Root};
use semirng_core::oracle::{best_path_logp, enumerate_paths, oracle_quantities, OracleMode};
use semirng_core::rnnt::{build_rnnt_lattice, wavefront_schedule, RnntGridLogProbs};
use semirng_core::semiring::{log_add, rel_close, to_probability_domain, SemiringId};
use semirng_core::{gradient, SemiringValue};

fn close(a: f64, b: f64, tol: f64) -> bool {
    rel_close(a, b, tol) || (a - b).abs() < 1e-14
}

/// Random DAG: all in-degree-0 vertices are roots, all out-degree-0
/// vertices are leaves, so every vertex lies on a root-to-leaf path.
#[derive(Debug, Clone)]
struct RandomDag {
    lattice: Lattice,
    table_len: usize,
}

fn random_dag() -> impl Strategy<Value = RandomDag> {
    (2usize..=10)
        .prop_flat_map(|n| {
            let pairs: Vec<(u32, u32)> = (0..n as u32)
                .flat_map(|i| ((i + 1)..n as u32).map(move |j| (i, j)))
                .collect();
            let m = pairs.len();
            (
                Just(n),
                Just(pairs),
                proptest::collection::vec(any::<bool>(), m),
                proptest::collection::vec(0u32..(2 * n as u32), m),
            )
        })
        .prop_map(|(n, pairs, keep, refs)| {
            let mut edges: Vec<Edge> = pairs
                .iter()
                .zip(keep.iter())
                .zip(refs.iter())
                .filter(|((_, &k), _)| k)
                .map(|((&(src, dst), _), &r)| Edge::new(src, dst, r))
                .collect();
            // ensure a connected spine so the DAG has at least one path
            if edges.is_empty() {
                edges.push(Edge::new(0, n as u32 - 1, 0));
            }
            let mut in_deg = vec![0usize; n];
            let mut out_deg = vec![0usize; n];
            for e in &edges {
                in_deg[e.dst as usize] += 1;
                out_deg[e.src as usize] += 1;
            }
            let roots: Vec<Root> = (0..n)
                .filter(|&v| in_deg[v] == 0)
                .map(|v| Root::bare(v as u32))
                .collect();
            let leaves: Vec<u32> = (0..n)
                .filter(|&v| out_deg[v] == 0)
                .map(|v| v as u32)
                .collect();
            let table_len = 2 * n;
            RandomDag {
                lattice: Lattice::new(n, edges, roots, leaves).unwrap(),
                table_len,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Engine totals equal explicit path enumeration, in the probability
    /// domain, for every semiring.
    #[test]
    fn path_sum_equivalence(dag in random_dag(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logp: Vec<f64> = (0..dag.table_len).map(|_| rng.gen_range(-6.0..-0.01)).collect();
        let logq: Vec<f64> = (0..dag.table_len).map(|_| rng.gen_range(-6.0..-0.01)).collect();
        let paths = enumerate_paths(&dag.lattice, &logp, Some(&logq)).unwrap();
        prop_assume!(!paths.is_empty());

        let likelihood = oracle_quantities(&paths, OracleMode::Likelihood);
        let entropy = oracle_quantities(&paths, OracleMode::Entropy);
        let cross = oracle_quantities(&paths, OracleMode::Cross);
        let teacher_like: f64 = paths.iter().map(|p| p.logq.unwrap().exp()).sum();
        let teacher_entropy: f64 = paths
            .iter()
            .map(|p| { let q = p.logq.unwrap(); -q.exp() * q })
            .sum();

        for s in SemiringId::ALL {
            let w = lift_table(&logp, s.needs_teacher().then_some(logq.as_slice()), s).unwrap();
            let total = compute(&dag.lattice, &w, s, ComputeOptions::default()).unwrap().total;
            let p = to_probability_domain(s, total);
            match s {
                SemiringId::Probability | SemiringId::Log => {
                    prop_assert!(close(p.component(0), likelihood, 1e-9), "{s}: {} vs {likelihood}", p.component(0));
                }
                SemiringId::Tropical => {
                    let best = best_path_logp(&paths).exp();
                    prop_assert!(close(p.component(0), best, 1e-9));
                }
                SemiringId::Counting => {
                    prop_assert_eq!(p.component(0) as u64, paths.len() as u64);
                }
                SemiringId::Entropy | SemiringId::LogEntropy => {
                    prop_assert!(close(p.component(0), likelihood, 1e-9));
                    prop_assert!(close(-p.component(1), entropy, 1e-9), "{s} entropy: {} vs {entropy}", -p.component(1));
                }
                SemiringId::LogReverseKl => {
                    prop_assert!(close(p.component(0), likelihood, 1e-9));
                    prop_assert!(close(p.component(1), teacher_like, 1e-9));
                    prop_assert!(close(p.component(2), teacher_entropy, 1e-9));
                    prop_assert!(close(p.component(3), cross, 1e-9));
                }
            }
        }
    }

    /// exp is an isomorphism from the log-space semirings onto their
    /// probability-domain counterparts, at the operation level.
    #[test]
    fn log_probability_isomorphism(
        a0 in -300.0f64..0.0, a1 in -300.0f64..0.0,
        b0 in -300.0f64..0.0, b1 in -300.0f64..0.0,
    ) {
        use semirng_core::semiring::probability_domain_id;
        for s in [SemiringId::Log, SemiringId::LogEntropy] {
            let p = probability_domain_id(s);
            let (va, vb) = match s.arity() {
                1 => (SemiringValue::Scalar(a0), SemiringValue::Scalar(b0)),
                _ => (SemiringValue::Pair([a0, a1]), SemiringValue::Pair([b0, b1])),
            };
            let (pa, pb) = (to_probability_domain(s, va), to_probability_domain(s, vb));
            for (log_side, prob_side) in [
                (s.plus(va, vb), p.plus(pa, pb)),
                (s.times(va, vb), p.times(pa, pb)),
            ] {
                let mapped = to_probability_domain(s, log_side);
                for i in 0..s.arity() {
                    prop_assert!(
                        rel_close(mapped.component(i), prob_side.component(i), 1e-12),
                        "{s} component {i}: {} vs {}", mapped.component(i), prob_side.component(i)
                    );
                }
            }
        }
    }

    /// plus and times never manufacture NaN from lifted-range inputs.
    #[test]
    fn no_nan_from_lifted_inputs(
        lp in proptest::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), Just(0.0), -30.0f64..0.0], 4),
        lq in proptest::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), Just(0.0), -30.0f64..0.0], 4),
    ) {
        for s in SemiringId::ALL {
            let teacher = s.needs_teacher();
            let a = s.lift(lp[0], teacher.then_some(lq[0])).unwrap();
            let b = s.lift(lp[1], teacher.then_some(lq[1])).unwrap();
            for v in [s.plus(a, b), s.times(a, b), s.times(s.plus(a, b), b)] {
                for i in 0..s.arity() {
                    prop_assert!(!v.component(i).is_nan(), "{s} produced NaN: {v:?}");
                }
            }
        }
    }

    /// Wavefront evaluation is bit-identical to the sequential schedule,
    /// for any thread count.
    #[test]
    fn wavefront_bitwise_equal(
        t in 1usize..7, u in 0usize..5, threads in 0usize..5, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rl = build_rnnt_lattice(t, u, false);
        let len = t * (u + 1) + (t + 1) * u;
        let logp: Vec<f64> = (0..len).map(|_| rng.gen_range(-8.0..-0.01)).collect();
        let groups = wavefront_schedule(t, u);
        for s in [SemiringId::Log, SemiringId::LogEntropy] {
            let w = lift_table(&logp, None, s).unwrap();
            let seq = compute(rl.lattice(), &w, s, ComputeOptions::tables()).unwrap();
            let par = compute_wavefront(rl.lattice(), &w, s, ComputeOptions::tables(), &groups, threads).unwrap();
            prop_assert_eq!(seq.total, par.total);
            prop_assert_eq!(seq.forward, par.forward);
        }
    }

    /// Feasible CTC posterior rows sum to one over the reachable states.
    #[test]
    fn ctc_posterior_rows_sum_to_one(
        t in 1usize..6, tokens in proptest::collection::vec(0u32..3, 1..4), seed in any::<u64>(),
    ) {
        let labels = LabelSequence::new(tokens, 3).unwrap();
        let logits = random_logits(t, 4, seed);
        prop_assume!(ctc_nll(&logits, &labels).unwrap().is_finite());
        let post = ctc_state_posteriors(&logits, &labels).unwrap();
        for row in post.chunks(2 * labels.len() + 1) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-8, "row sums to {sum}");
        }
    }

    /// Alignment count never decreases when a frame is added.
    #[test]
    fn ctc_count_monotone_in_frames(tokens in proptest::collection::vec(0u32..2, 1..4)) {
        let labels = LabelSequence::new(tokens, 2).unwrap();
        let mut prev = 0u64;
        for t in 1..=8 {
            let count = ctc_alignment_count(t, &labels).unwrap();
            prop_assert!(count >= prev, "count dropped from {prev} to {count} at T={t}");
            prev = count;
        }
    }

    /// H <= P (log N - log P): entropy of sub-distributions is maximal
    /// when the mass P spreads evenly over the N paths.
    #[test]
    fn ctc_entropy_bound(
        t in 1usize..6, tokens in proptest::collection::vec(0u32..3, 1..4), seed in any::<u64>(),
    ) {
        let labels = LabelSequence::new(tokens, 3).unwrap();
        let logits = random_logits(t, 4, seed);
        let nll = ctc_nll(&logits, &labels).unwrap();
        prop_assume!(nll.is_finite());
        let h = ctc_alignment_entropy(&logits, &labels).unwrap();
        let p = (-nll).exp();
        let n = ctc_alignment_count(t, &labels).unwrap() as f64;
        prop_assert!(h >= 0.0);
        prop_assert!(h <= p * (n.ln() - p.ln()) + 1e-9, "H = {h}, bound = {}", p * (n.ln() - p.ln()));
    }

    /// For the log semiring, NLL gradients of the edges crossing an
    /// anti-diagonal cut sum to the total probability flow of 1.
    /// (Uses RNN-T, where every edge has a unique weight ref.)
    #[test]
    fn rnnt_gradient_flow_sums_to_one(t in 1usize..6, u in 0usize..4, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rl = build_rnnt_lattice(t, u, false);
        let len = t * (u + 1) + (t + 1) * u;
        let logp: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..-0.01)).collect();
        let g = gradient(rl.lattice(), &logp, None, SemiringId::Log, 0).unwrap();

        let groups = wavefront_schedule(t, u);
        let mut group_of = vec![0usize; rl.lattice().vertex_count()];
        for (d, grp) in groups.iter().enumerate() {
            for &v in grp {
                group_of[v as usize] = d;
            }
        }
        for d in 1..=t + u {
            let flow: f64 = rl
                .lattice()
                .edges()
                .iter()
                .filter(|e| group_of[e.dst as usize] == d)
                .map(|e| g.get(e.weight_ref))
                .sum();
            prop_assert!((flow - 1.0).abs() < 1e-8, "cut {d}: flow {flow}");
        }
    }

    /// logsumexp of forward + backward over an antichain cut equals the
    /// total (checked on CTC frames).
    #[test]
    fn ctc_cut_identity(
        t in 2usize..6, tokens in proptest::collection::vec(0u32..3, 1..3), seed in any::<u64>(),
    ) {
        let labels = LabelSequence::new(tokens, 3).unwrap();
        let logits = random_logits(t, 4, seed);
        prop_assume!(ctc_nll(&logits, &labels).unwrap().is_finite());
        let cl = build_ctc_lattice(t, &labels, 4).unwrap();
        let w = lift_table(logits.table(), None, SemiringId::Log).unwrap();
        let r = compute(cl.lattice(), &w, SemiringId::Log, ComputeOptions::tables()).unwrap();
        let (f, b) = (r.forward.unwrap(), r.backward.unwrap());
        let total = r.total.component(0);
        for frame in 0..t {
            let mut lse = f64::NEG_INFINITY;
            for s in 0..2 * labels.len() + 1 {
                if let Some(v) = cl.vertex_of(frame, s) {
                    lse = log_add(lse, f[v as usize].component(0) + b[v as usize].component(0));
                }
            }
            prop_assert!((lse - total).abs() < 1e-10, "frame {frame}: {lse} vs {total}");
        }
    }

    /// One quad pass reproduces enumeration: student NLL, alignment
    /// entropy and sequence KL on random RNN-T grids.
    #[test]
    fn rnnt_quantities_match_enumeration(t in 1usize..5, u in 0usize..4, seed in any::<u64>()) {
        let student = random_grid(t, u, 3, seed);
        let teacher = random_grid(t, u, 3, seed ^ 0x9E37_79B9);
        let rl = build_rnnt_lattice(t, u, false);
        let paths = enumerate_paths(
            rl.lattice(),
            &student.weight_table(),
            Some(&teacher.weight_table()),
        )
        .unwrap();

        let nll = semirng_core::rnnt::rnnt_nll(&student).unwrap();
        prop_assert!(close(nll, -oracle_quantities(&paths, OracleMode::Likelihood).ln(), 1e-9));

        let h = semirng_core::rnnt::rnnt_alignment_entropy(&student).unwrap();
        prop_assert!(close(h, oracle_quantities(&paths, OracleMode::Entropy), 1e-9));

        let kl = semirng_core::rnnt::rnnt_kl_seq(&teacher, &student).unwrap();
        prop_assert!(close(kl.kl_seq, oracle_quantities(&paths, OracleMode::Kl), 1e-9),
            "kl {} vs {}", kl.kl_seq, oracle_quantities(&paths, OracleMode::Kl));
        // component consistency of the quad pass
        prop_assert!(close(kl.student_nll, nll, 1e-12));
        prop_assert!(close(kl.teacher_nll, semirng_core::rnnt::rnnt_nll(&teacher).unwrap(), 1e-12));
    }

    /// Counting-semiring total over the RNN-T grid is C(T+U, U).
    #[test]
    fn rnnt_path_count_identity(t in 1usize..=10, u in 0usize..=10) {
        let rl = build_rnnt_lattice(t, u, false);
        let len = t * (u + 1) + (t + 1) * u;
        let w = vec![SemiringValue::Count(1); len.max(1)];
        let total = compute(rl.lattice(), &w, SemiringId::Counting, ComputeOptions::default())
            .unwrap()
            .total;
        let expected = binomial(t + u, u);
        prop_assert_eq!(total, SemiringValue::Count(expected));
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

fn random_logits(frames: usize, vocab: usize, seed: u64) -> FrameLogProbs {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(frames * vocab);
    for _ in 0..frames {
        let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-4.0..0.0)).collect();
        let lse = raw.iter().copied().fold(f64::NEG_INFINITY, log_add);
        data.extend(raw.iter().map(|x| x - lse));
    }
    FrameLogProbs::new(data, frames, vocab).unwrap()
}

/// RNN-T grids sliced from random normalized joints.
fn random_grid(frames: usize, labels: usize, vocab: usize, seed: u64) -> RnntGridLogProbs {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut blank = Vec::new();
    let mut label = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..(frames + 1) * (labels + 1) {
        let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-4.0..0.0)).collect();
        let lse = raw.iter().copied().fold(f64::NEG_INFINITY, log_add);
        rows.push(raw.iter().map(|x| x - lse).collect::<Vec<f64>>());
    }
    for t in 0..frames {
        for u in 0..=labels {
            blank.push(rows[t * (labels + 1) + u][vocab - 1]);
        }
    }
    for t in 0..=frames {
        for u in 0..labels {
            label.push(rows[t * (labels + 1) + u][u % (vocab - 1)]);
        }
    }
    RnntGridLogProbs::from_parts(frames, labels, blank, label, true).unwrap()
}
