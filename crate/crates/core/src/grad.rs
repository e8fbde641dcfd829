//! Reverse-mode gradients of lattice computations.
//!
//! The DP structure is static, so instead of taping we run the forward
//! pass, then walk vertices in reverse applying hand-derived adjoints of
//! each semiring's ⊕ and ⊗. The adjoint of a log-space ⊕ fold is the
//! softmax ratio `exp(m - F[v])` evaluated from stored forward values;
//! totals are never re-exponentiated. The lift map is part of the chain,
//! so the returned derivatives are with respect to the raw input
//! log-probabilities (student only, for the log reverse-KL semiring).

use std::collections::BTreeMap;

use crate::engine::{forward_table, lift_table};
use crate::error::EngineError;
use crate::lattice::Lattice;
use crate::semiring::{add_log, SemiringId, SemiringValue};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Derivative of one scalar output component with respect to each raw
/// input log-probability, keyed by weight ref. Entries exist exactly for
/// refs on some root-to-leaf path; absent refs have derivative 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientTable {
    entries: BTreeMap<u32, f64>,
}

impl GradientTable {
    pub fn get(&self, weight_ref: u32) -> f64 {
        self.entries.get(&weight_ref).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, weight_ref: u32) -> bool {
        self.entries.contains_key(&weight_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiplies every entry by `c` in place.
    pub fn scale(&mut self, c: f64) {
        for v in self.entries.values_mut() {
            *v *= c;
        }
    }

    /// `self += c * other`, unioning the entry sets.
    pub fn axpy(&mut self, c: f64, other: &GradientTable) {
        for (k, v) in other.iter() {
            *self.entries.entry(k).or_insert(0.0) += c * v;
        }
    }

    fn insert_zero(&mut self, weight_ref: u32) {
        self.entries.entry(weight_ref).or_insert(0.0);
    }

    fn accumulate(&mut self, weight_ref: u32, value: f64) {
        *self.entries.entry(weight_ref).or_insert(0.0) += value;
    }
}

/// `exp(x - t)` with the zero-mass cases branched out so no
/// `(-inf) - (-inf)` NaN arises.
#[inline]
fn softmax_ratio(x: f64, t: f64) -> f64 {
    if x == NEG_INF || t == NEG_INF {
        return 0.0;
    }
    let d = x - t;
    if d.is_nan() {
        // both +inf: the message carries all of the mass
        return if x == t { 1.0 } else { f64::NAN };
    }
    d.exp()
}

fn components(v: SemiringValue, arity: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate().take(arity) {
        *slot = v.component(i);
    }
    out
}

/// Reverse-mode derivative of `total.component(component)` with respect
/// to every referenced input log-probability.
pub fn gradient(
    lattice: &Lattice,
    student_logp: &[f64],
    teacher_logq: Option<&[f64]>,
    s: SemiringId,
    component: usize,
) -> Result<GradientTable, EngineError> {
    if !matches!(
        s,
        SemiringId::Log | SemiringId::LogEntropy | SemiringId::LogReverseKl
    ) {
        return Err(EngineError::UnsupportedGradientSemiring(s.name()));
    }
    assert!(
        component < s.arity(),
        "component {component} out of range for semiring {s}"
    );

    let weights = lift_table(student_logp, teacher_logq, s)?;
    let forward = forward_table(lattice, &weights, s)?;
    let arity = s.arity();
    let n = lattice.vertex_count();

    // total = componentwise logadd over leaves
    let mut total = [NEG_INF; 4];
    for &l in lattice.leaves() {
        let f = components(forward[l as usize], arity);
        for j in 0..arity {
            total[j] = crate::semiring::log_add(total[j], f[j]);
        }
    }

    // Pre-fill zeros for every ref on a root-to-leaf path.
    let mut table = GradientTable::default();
    let rr = lattice.root_reachable();
    let lc = lattice.leaf_coreachable();
    for e in lattice.edges() {
        if rr[e.src as usize] && lc[e.dst as usize] {
            table.insert_zero(e.weight_ref);
        }
    }
    for r in lattice.roots() {
        if let Some(entry) = r.entry_ref {
            if lc[r.vertex as usize] {
                table.insert_zero(entry);
            }
        }
    }

    // adjoint[v * arity + j] = d total[component] / d forward[v][j]
    let mut adjoint = vec![0.0f64; n * arity];
    for &l in lattice.leaves() {
        let f = components(forward[l as usize], arity);
        adjoint[l as usize * arity + component] += softmax_ratio(f[component], total[component]);
    }

    for v in (0..n as u32).rev() {
        let a_v = {
            let base = v as usize * arity;
            let mut a = [0.0; 4];
            a[..arity].copy_from_slice(&adjoint[base..base + arity]);
            a
        };
        if a_v[..arity].iter().all(|&x| x == 0.0) {
            continue;
        }

        if lattice.is_root(v) {
            // forward[root] is the entry weight itself (or 1̄): the vertex
            // adjoint passes straight through the lift map.
            if let Some(entry) = lattice.root_entry(v) {
                accumulate_lift(
                    &mut table,
                    s,
                    entry,
                    student_logp[entry as usize],
                    a_v,
                );
            }
            continue;
        }

        let f_v = components(forward[v as usize], arity);
        for e in lattice.incoming(v) {
            let x = components(forward[e.src as usize], arity);
            let y = components(weights[e.weight_ref as usize], arity);
            let m = components(
                s.times(forward[e.src as usize], weights[e.weight_ref as usize]),
                arity,
            );

            // through the ⊕ fold: componentwise softmax ratios
            let mut a_m = [0.0; 4];
            for j in 0..arity {
                if a_v[j] != 0.0 {
                    a_m[j] = a_v[j] * softmax_ratio(m[j], f_v[j]);
                }
            }
            if a_m[..arity].iter().all(|&x| x == 0.0) {
                continue;
            }

            // through ⊗: adjoints to the source vertex and the edge weight
            let mut a_x = [0.0; 4];
            let mut g_y = [0.0; 4];
            match s {
                SemiringId::Log => {
                    a_x[0] = a_m[0];
                    g_y[0] = a_m[0];
                }
                SemiringId::LogEntropy => {
                    // m1 = logadd(x0 + y1, x1 + y0)
                    let r_xy = softmax_ratio(add_log(x[0], y[1]), m[1]);
                    let r_yx = softmax_ratio(add_log(x[1], y[0]), m[1]);
                    a_x[0] = a_m[0] + a_m[1] * r_xy;
                    a_x[1] = a_m[1] * r_yx;
                    g_y[0] = a_m[0] + a_m[1] * r_yx;
                    g_y[1] = a_m[1] * r_xy;
                }
                SemiringId::LogReverseKl => {
                    // m2 = logadd(x1 + y2, x2 + y1); m3 = logadd(x1 + y3, x3 + y1)
                    let r2a = softmax_ratio(add_log(x[1], y[2]), m[2]);
                    let r2b = softmax_ratio(add_log(x[2], y[1]), m[2]);
                    let r3a = softmax_ratio(add_log(x[1], y[3]), m[3]);
                    let r3b = softmax_ratio(add_log(x[3], y[1]), m[3]);
                    a_x[0] = a_m[0];
                    a_x[1] = a_m[1] + a_m[2] * r2a + a_m[3] * r3a;
                    a_x[2] = a_m[2] * r2b;
                    a_x[3] = a_m[3] * r3b;
                    g_y[0] = a_m[0];
                    g_y[1] = a_m[1] + a_m[2] * r2b + a_m[3] * r3b;
                    g_y[2] = a_m[2] * r2a;
                    g_y[3] = a_m[3] * r3a;
                }
                _ => unreachable!("validated above"),
            }

            let base = e.src as usize * arity;
            for j in 0..arity {
                adjoint[base + j] += a_x[j];
            }
            accumulate_lift(
                &mut table,
                s,
                e.weight_ref,
                student_logp[e.weight_ref as usize],
                g_y,
            );
        }
    }

    Ok(table)
}

/// Chains an edge-weight adjoint through the lift map onto the raw
/// student log-probability.
fn accumulate_lift(table: &mut GradientTable, s: SemiringId, weight_ref: u32, logp: f64, g_y: [f64; 4]) {
    let mut g = 0.0;
    match s {
        SemiringId::Log => {
            // w = logp
            g += g_y[0];
        }
        SemiringId::LogEntropy => {
            // w = <logp, logp + ln(-logp)>: d w1/d logp = 1 + 1/logp.
            g += g_y[0];
            if g_y[1] != 0.0 {
                g += g_y[1] * (1.0 + 1.0 / logp);
            }
        }
        SemiringId::LogReverseKl => {
            // student appears in w0 = logp and w3 = logq + ln(-logp)
            g += g_y[0];
            if g_y[3] != 0.0 {
                g += g_y[3] / logp;
            }
        }
        _ => unreachable!(),
    }
    if g != 0.0 || table.contains(weight_ref) {
        table.accumulate(weight_ref, g);
    }
}
