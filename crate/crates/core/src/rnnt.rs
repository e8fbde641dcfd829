//! RNN-T grid lattices.
//!
//! Vertices are `(t, u)` with `t` frames consumed and `u` labels emitted;
//! blank edges advance `t`, label edges advance `u`. Every maximal path
//! has exactly `T` blank and `U` label edges, so there are `C(T+U, U)`
//! alignments over `2TU + T + U` transitions. Anti-diagonal wavefronts
//! (`t + u` constant) depend only on the previous wavefront, which is
//! what the loop-skewed schedule exploits.

use crate::engine::{compute, ComputeOptions, ComputeResult, OpCount};
use crate::error::RnntError;
use crate::lattice::{Edge, Lattice, Root};
use crate::semiring::{SemiringId, SemiringValue};

/// Tolerance for the per-node `logsumexp = 0` normalization check.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// Full joint log-probabilities over the grid: `(T+1) x (U+1) x V`,
/// row-major. The last time row feeds label edges at `t = T`; its blank
/// column is never read by the lattice.
#[derive(Debug, Clone)]
pub struct RnntJointLogProbs {
    data: Vec<f64>,
    t_rows: usize,
    u_cols: usize,
    vocab: usize,
    normalized: bool,
}

impl RnntJointLogProbs {
    /// Validates every node's distribution and canonicalizes float dust.
    pub fn new(data: Vec<f64>, frames: usize, labels: usize, vocab: usize) -> Result<Self, RnntError> {
        let mut j = Self::shaped(data, frames, labels, vocab)?;
        for t in 0..j.t_rows {
            for u in 0..j.u_cols {
                let row = j.row(t, u);
                let lse = crate::ctc::logsumexp(row);
                if lse.abs() > ROW_TOLERANCE {
                    return Err(RnntError::RowNotNormalized { t, u, lse });
                }
            }
        }
        for x in &mut j.data {
            if *x > 0.0 {
                *x = 0.0;
            }
        }
        j.normalized = true;
        Ok(j)
    }

    pub fn new_attested(
        data: Vec<f64>,
        frames: usize,
        labels: usize,
        vocab: usize,
        normalized: bool,
    ) -> Result<Self, RnntError> {
        let mut j = Self::shaped(data, frames, labels, vocab)?;
        j.normalized = normalized;
        Ok(j)
    }

    fn shaped(data: Vec<f64>, frames: usize, labels: usize, vocab: usize) -> Result<Self, RnntError> {
        let (t_rows, u_cols) = (frames + 1, labels + 1);
        if data.len() != t_rows * u_cols * vocab {
            return Err(RnntError::JointShapeMismatch {
                len: data.len(),
                t_rows,
                u_cols,
                vocab,
            });
        }
        Ok(RnntJointLogProbs {
            data,
            t_rows,
            u_cols,
            vocab,
            normalized: false,
        })
    }

    pub fn frames(&self) -> usize {
        self.t_rows - 1
    }

    pub fn labels(&self) -> usize {
        self.u_cols - 1
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, t: usize, u: usize) -> &[f64] {
        let base = (t * self.u_cols + u) * self.vocab;
        &self.data[base..base + self.vocab]
    }

    pub fn get(&self, t: usize, u: usize, v: usize) -> f64 {
        self.data[(t * self.u_cols + u) * self.vocab + v]
    }

    pub fn table(&self) -> &[f64] {
        &self.data
    }

    /// Flat index of `(t, u, v)` in the joint tensor.
    pub fn flat_index(&self, t: usize, u: usize, v: usize) -> usize {
        (t * self.u_cols + u) * self.vocab + v
    }
}

/// The two per-edge-kind slices the lattice actually consumes:
/// `blank[t][u] = log P(blank | t, u)` for `t < T`, and
/// `label[t][u] = log P(y_{u+1} | t, u)` for `t <= T, u < U`.
#[derive(Debug, Clone)]
pub struct RnntGridLogProbs {
    frames: usize,
    labels: usize,
    /// `T x (U+1)`
    blank: Vec<f64>,
    /// `(T+1) x U`
    label: Vec<f64>,
    normalized: bool,
}

impl RnntGridLogProbs {
    /// Slices blank/label probabilities out of a full joint tensor.
    pub fn from_joint(
        joint: &RnntJointLogProbs,
        label_tokens: &[u32],
        blank_id: u32,
    ) -> Result<Self, RnntError> {
        let (t, u, v) = (joint.frames(), joint.labels(), joint.vocab());
        if label_tokens.len() != u {
            return Err(RnntError::LabelCountMismatch {
                labels: label_tokens.len(),
                u,
            });
        }
        if blank_id as usize >= v {
            return Err(RnntError::TokenOutOfVocab {
                token: blank_id,
                vocab: v,
            });
        }
        for &tok in label_tokens {
            if tok == blank_id {
                return Err(RnntError::LabelIsBlank(tok, blank_id));
            }
            if tok as usize >= v {
                return Err(RnntError::TokenOutOfVocab { token: tok, vocab: v });
            }
        }
        let mut blank = Vec::with_capacity(t * (u + 1));
        for ti in 0..t {
            for ui in 0..=u {
                blank.push(joint.get(ti, ui, blank_id as usize));
            }
        }
        let mut label = Vec::with_capacity((t + 1) * u);
        for ti in 0..=t {
            for ui in 0..u {
                label.push(joint.get(ti, ui, label_tokens[ui] as usize));
            }
        }
        Ok(RnntGridLogProbs {
            frames: t,
            labels: u,
            blank,
            label,
            normalized: joint.normalized(),
        })
    }

    /// Pre-sliced blank/label pairs. `normalized` is the caller's
    /// attestation that the underlying full distributions normalize;
    /// there is nothing left to validate here.
    pub fn from_parts(
        frames: usize,
        labels: usize,
        blank: Vec<f64>,
        label: Vec<f64>,
        normalized: bool,
    ) -> Result<Self, RnntError> {
        if blank.len() != frames * (labels + 1) {
            return Err(RnntError::GridShapeMismatch {
                which: "blank",
                expected: frames * (labels + 1),
                got: blank.len(),
            });
        }
        if label.len() != (frames + 1) * labels {
            return Err(RnntError::GridShapeMismatch {
                which: "label",
                expected: (frames + 1) * labels,
                got: label.len(),
            });
        }
        Ok(RnntGridLogProbs {
            frames,
            labels,
            blank,
            label,
            normalized,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn blank_logp(&self, t: usize, u: usize) -> f64 {
        self.blank[t * (self.labels + 1) + u]
    }

    pub fn label_logp(&self, t: usize, u: usize) -> f64 {
        self.label[t * self.labels + u]
    }

    /// One flat weight table in the lattice's ref layout: all blank
    /// entries, then all label entries.
    pub fn weight_table(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.blank.len() + self.label.len());
        w.extend_from_slice(&self.blank);
        w.extend_from_slice(&self.label);
        w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.labels == other.labels
    }
}

/// Flat ref of the blank edge out of `(t, u)`.
pub fn blank_ref(frames: usize, labels: usize, t: usize, u: usize) -> u32 {
    debug_assert!(t < frames && u <= labels);
    (t * (labels + 1) + u) as u32
}

/// Flat ref of the label edge out of `(t, u)`.
pub fn label_ref(frames: usize, labels: usize, t: usize, u: usize) -> u32 {
    debug_assert!(t <= frames && u < labels);
    (frames * (labels + 1) + t * labels + u) as u32
}

/// An RNN-T lattice with its grid coordinates.
#[derive(Debug, Clone)]
pub struct RnntLattice {
    lattice: Lattice,
    frames: usize,
    labels: usize,
    final_blank: bool,
}

impl RnntLattice {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn final_blank(&self) -> bool {
        self.final_blank
    }

    /// Vertex id of grid node `(t, u)` (default topology).
    pub fn vertex_of(&self, t: usize, u: usize) -> u32 {
        (t * (self.labels + 1) + u) as u32
    }
}

/// Builds the grid lattice. With `require_final_blank`, a dedicated
/// terminal vertex is reachable only through the blank edge out of
/// `(T-1, U)`, so every alignment ends with a blank; path count drops
/// from `C(T+U, U)` to `C(T-1+U, U)`.
pub fn build_rnnt_lattice(frames: usize, labels: usize, require_final_blank: bool) -> RnntLattice {
    assert!(frames >= 1, "frame count must be >= 1");
    let (t_max, u_cols) = (frames, labels + 1);
    let vertex = |t: usize, u: usize| (t * u_cols + u) as u32;

    let mut edges = Vec::new();
    if require_final_blank {
        // grid rows t in 0..T-1 plus terminal
        for t in 0..t_max {
            for u in 0..u_cols {
                if t + 1 < t_max {
                    edges.push(Edge::new(
                        vertex(t, u),
                        vertex(t + 1, u),
                        blank_ref(frames, labels, t, u),
                    ));
                }
                if u + 1 < u_cols {
                    edges.push(Edge::new(
                        vertex(t, u),
                        vertex(t, u + 1),
                        label_ref(frames, labels, t, u),
                    ));
                }
            }
        }
        let terminal = (t_max * u_cols) as u32;
        edges.push(Edge::new(
            vertex(t_max - 1, labels),
            terminal,
            blank_ref(frames, labels, t_max - 1, labels),
        ));
        let lattice = Lattice::new(
            t_max * u_cols + 1,
            edges,
            vec![Root::bare(0)],
            vec![terminal],
        )
        .expect("grid construction is always valid");
        RnntLattice {
            lattice,
            frames,
            labels,
            final_blank: true,
        }
    } else {
        for t in 0..=t_max {
            for u in 0..u_cols {
                if t + 1 <= t_max {
                    edges.push(Edge::new(
                        vertex(t, u),
                        vertex(t + 1, u),
                        blank_ref(frames, labels, t, u),
                    ));
                }
                if u + 1 < u_cols {
                    edges.push(Edge::new(
                        vertex(t, u),
                        vertex(t, u + 1),
                        label_ref(frames, labels, t, u),
                    ));
                }
            }
        }
        let leaf = vertex(t_max, labels);
        let lattice = Lattice::new(
            (t_max + 1) * u_cols,
            edges,
            vec![Root::bare(0)],
            vec![leaf],
        )
        .expect("grid construction is always valid");
        RnntLattice {
            lattice,
            frames,
            labels,
            final_blank: false,
        }
    }
}

/// Anti-diagonal vertex groups for the default grid topology: group `d`
/// holds every `(t, u)` with `t + u = d`, ascending in `t`. All incoming
/// edges of a group-`d` vertex originate in group `d - 1`.
pub fn wavefront_schedule(frames: usize, labels: usize) -> Vec<Vec<u32>> {
    let u_cols = labels + 1;
    (0..=frames + labels)
        .map(|d| {
            let t_lo = d.saturating_sub(labels);
            let t_hi = d.min(frames);
            (t_lo..=t_hi).map(|t| (t * u_cols + (d - t)) as u32).collect()
        })
        .collect()
}

fn log_pass(
    grid: &RnntGridLogProbs,
    s: SemiringId,
    teacher: Option<&RnntGridLogProbs>,
    opts: ComputeOptions,
) -> Result<ComputeResult, RnntError> {
    let rl = build_rnnt_lattice(grid.frames(), grid.labels(), false);
    let student = grid.weight_table();
    let teacher_table = teacher.map(|t| t.weight_table());
    let weights = crate::engine::lift_table(&student, teacher_table.as_deref(), s)?;
    Ok(compute(rl.lattice(), &weights, s, opts)?)
}

/// `-log P(y|x)` over all RNN-T alignments.
pub fn rnnt_nll(grid: &RnntGridLogProbs) -> Result<f64, RnntError> {
    let r = log_pass(grid, SemiringId::Log, None, ComputeOptions::default())?;
    Ok(-r.total.component(0))
}

/// Alignment entropy via one log-entropy pass.
pub fn rnnt_alignment_entropy(grid: &RnntGridLogProbs) -> Result<f64, RnntError> {
    if !grid.normalized() {
        return Err(RnntError::UnnormalizedInput);
    }
    let r = log_pass(grid, SemiringId::LogEntropy, None, ComputeOptions::default())?;
    Ok(r.total.component(1).exp())
}

/// NLL and entropy from the same log-entropy pass.
pub fn rnnt_nll_and_entropy(grid: &RnntGridLogProbs) -> Result<(f64, f64), RnntError> {
    if !grid.normalized() {
        return Err(RnntError::UnnormalizedInput);
    }
    let r = log_pass(grid, SemiringId::LogEntropy, None, ComputeOptions::default())?;
    Ok((-r.total.component(0), r.total.component(1).exp()))
}

/// Everything the single log reverse-KL pass yields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlSeqResult {
    /// `Σ_π q(π) log (q(π) / p(π))`
    pub kl_seq: f64,
    /// `-log P_student(y|x)`
    pub student_nll: f64,
    /// `-log P_teacher(y|x)`
    pub teacher_nll: f64,
    /// `Σ_π q(π) log q(π)` (non-positive)
    pub teacher_neg_entropy: f64,
    /// Cost of the one lattice traversal that produced all of the above.
    pub ops: OpCount,
}

/// Sequence-level KL between teacher and student alignment
/// distributions, in a single forward pass over the lattice.
pub fn rnnt_kl_seq(
    teacher: &RnntGridLogProbs,
    student: &RnntGridLogProbs,
) -> Result<KlSeqResult, RnntError> {
    if !teacher.same_shape(student) {
        return Err(RnntError::TeacherStudentMismatch);
    }
    if !teacher.normalized() {
        return Err(RnntError::UnnormalizedInput);
    }
    let r = log_pass(
        student,
        SemiringId::LogReverseKl,
        Some(teacher),
        ComputeOptions::ops(),
    )?;
    let total = match r.total {
        SemiringValue::Quad(q) => q,
        other => unreachable!("quad semiring returned {other:?}"),
    };
    Ok(KlSeqResult {
        kl_seq: total[3].exp() - total[2].exp(),
        student_nll: -total[0],
        teacher_nll: -total[1],
        teacher_neg_entropy: -total[2].exp(),
        ops: r.ops.expect("ops requested"),
    })
}
