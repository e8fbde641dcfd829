//! Training objectives composed from lattice passes: entropy
//! regularization and hard/soft/semiring distillation.
//!
//! The semiring distillation total needs the student NLL, the
//! sequence-level KL and the teacher entropy term; all three come out of
//! one log reverse-KL pass over the lattice (plus one flat tensor pass
//! for the state-wise KL), never three lattice traversals.

use crate::ctc::{build_ctc_lattice, FrameLogProbs, LabelSequence};
use crate::engine::{compute, lift_table, ComputeOptions, OpCount};
use crate::error::LossError;
use crate::grad::{gradient, GradientTable};
use crate::lattice::Lattice;
use crate::rnnt::{build_rnnt_lattice, RnntGridLogProbs, RnntJointLogProbs};
use crate::semiring::{SemiringId, SemiringValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ctc,
    Rnnt,
}

/// Loss-composition weights. All must be finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha_ent: f64,
    pub alpha_state: f64,
    pub alpha_seq: f64,
    pub alpha_distill: f64,
    pub model_kind: ModelKind,
}

impl LossConfig {
    pub fn new(
        alpha_ent: f64,
        alpha_state: f64,
        alpha_seq: f64,
        alpha_distill: f64,
        model_kind: ModelKind,
    ) -> Result<Self, LossError> {
        for (name, value) in [
            ("alpha_ent", alpha_ent),
            ("alpha_state", alpha_state),
            ("alpha_seq", alpha_seq),
            ("alpha_distill", alpha_distill),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(LossError::BadWeight { name, value });
            }
        }
        Ok(LossConfig {
            alpha_ent,
            alpha_state,
            alpha_seq,
            alpha_distill,
            model_kind,
        })
    }

    /// The plain two-KL distillation shape: no state term, the sequence
    /// term weighted by `alpha_distill`.
    pub fn plain_distill(alpha_distill: f64, model_kind: ModelKind) -> Result<Self, LossError> {
        Self::new(0.0, 0.0, alpha_distill, alpha_distill, model_kind)
    }
}

/// A loss value with the parts it was composed from. `total` is always
/// recomputable from the present parts:
/// `nll - alpha_ent * entropy` for the entropy-regularized loss,
/// `nll + alpha_state * kl_state + alpha_seq * kl_seq` for distillation
/// (missing parts read as absent, not zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub nll: f64,
    pub entropy: Option<f64>,
    pub kl_state: Option<f64>,
    pub kl_seq: Option<f64>,
    /// `Σ_π q(π) log q(π)`, the constant (w.r.t. the student) teacher
    /// term of the three-term decomposition. The cross term is
    /// `kl_seq - teacher_entropy_term`.
    pub teacher_entropy_term: Option<f64>,
    pub total: f64,
}

/// `NLL - alpha_ent * H` over an arbitrary lattice with raw
/// log-probability weights. Infeasible inputs give `total = +inf` with
/// entropy reported as 0.
pub fn entropy_regularized_loss_on_lattice(
    lattice: &Lattice,
    student_logp: &[f64],
    alpha_ent: f64,
) -> Result<LossReport, LossError> {
    let weights = lift_table(student_logp, None, SemiringId::LogEntropy)?;
    let r = compute(lattice, &weights, SemiringId::LogEntropy, ComputeOptions::default())?;
    let nll = -r.total.component(0);
    let entropy = r.total.component(1).exp();
    Ok(LossReport {
        nll,
        entropy: Some(entropy),
        kl_state: None,
        kl_seq: None,
        teacher_entropy_term: None,
        total: nll - alpha_ent * entropy,
    })
}

pub fn ctc_entropy_regularized_loss(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
    alpha_ent: f64,
) -> Result<LossReport, LossError> {
    if !logits.normalized() && alpha_ent != 0.0 {
        return Err(LossError::Ctc(crate::error::CtcError::UnnormalizedInput));
    }
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    entropy_regularized_loss_on_lattice(cl.lattice(), logits.table(), alpha_ent)
}

pub fn rnnt_entropy_regularized_loss(
    grid: &RnntGridLogProbs,
    alpha_ent: f64,
) -> Result<LossReport, LossError> {
    if !grid.normalized() && alpha_ent != 0.0 {
        return Err(LossError::Rnnt(crate::error::RnntError::UnnormalizedInput));
    }
    let rl = build_rnnt_lattice(grid.frames(), grid.labels(), false);
    entropy_regularized_loss_on_lattice(rl.lattice(), &grid.weight_table(), alpha_ent)
}

/// `Σ_i q_i (log q_i - log p_i)` over two flat log-probability tensors of
/// equal shape. Entries with zero teacher mass contribute nothing; a
/// `-inf` student entry under finite teacher mass makes the result
/// `+inf` (defined, not an error).
pub fn kl_state_flat(teacher: &[f64], student: &[f64]) -> Result<f64, LossError> {
    if teacher.len() != student.len() {
        return Err(LossError::StateShapeMismatch(teacher.len(), student.len()));
    }
    let mut total = 0.0;
    for (&lq, &lp) in teacher.iter().zip(student) {
        if lq == f64::NEG_INFINITY {
            continue;
        }
        total += lq.exp() * (lq - lp);
    }
    Ok(total)
}

pub fn ctc_kl_state(teacher: &FrameLogProbs, student: &FrameLogProbs) -> Result<f64, LossError> {
    kl_state_flat(teacher.table(), student.table())
}

pub fn rnnt_kl_state(
    teacher: &RnntJointLogProbs,
    student: &RnntJointLogProbs,
) -> Result<f64, LossError> {
    kl_state_flat(teacher.table(), student.table())
}

fn soft_report(nll: f64, kl_state: f64, cfg: &LossConfig) -> LossReport {
    LossReport {
        nll,
        entropy: None,
        kl_state: Some(kl_state),
        kl_seq: None,
        teacher_entropy_term: None,
        total: nll + cfg.alpha_state * kl_state,
    }
}

/// `L_soft = L_hard + alpha_state * KL_state`, CTC flavor. `labels` are
/// the teacher's (pseudo-)labels; the hard NLL is the student's.
pub fn ctc_soft_distillation_loss(
    teacher: &FrameLogProbs,
    student: &FrameLogProbs,
    labels: &LabelSequence,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    let nll = crate::ctc::ctc_nll(student, labels)?;
    let kl = ctc_kl_state(teacher, student)?;
    Ok(soft_report(nll, kl, cfg))
}

pub fn rnnt_soft_distillation_loss(
    teacher: &RnntJointLogProbs,
    student: &RnntJointLogProbs,
    label_tokens: &[u32],
    blank_id: u32,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    let student_grid = RnntGridLogProbs::from_joint(student, label_tokens, blank_id)?;
    let nll = crate::rnnt::rnnt_nll(&student_grid)?;
    let kl = rnnt_kl_state(teacher, student)?;
    Ok(soft_report(nll, kl, cfg))
}

fn semiring_report(
    lattice: &Lattice,
    student_table: &[f64],
    teacher_table: &[f64],
    kl_state: f64,
    cfg: &LossConfig,
) -> Result<(LossReport, OpCount), LossError> {
    let weights = lift_table(student_table, Some(teacher_table), SemiringId::LogReverseKl)?;
    let r = compute(lattice, &weights, SemiringId::LogReverseKl, ComputeOptions::ops())?;
    let total = match r.total {
        SemiringValue::Quad(q) => q,
        other => unreachable!("quad semiring returned {other:?}"),
    };
    let nll = -total[0];
    let kl_seq = total[3].exp() - total[2].exp();
    let teacher_entropy_term = -total[2].exp();
    Ok((
        LossReport {
            nll,
            entropy: None,
            kl_state: Some(kl_state),
            kl_seq: Some(kl_seq),
            teacher_entropy_term: Some(teacher_entropy_term),
            total: nll + cfg.alpha_state * kl_state + cfg.alpha_seq * kl_seq,
        },
        r.ops.expect("ops requested"),
    ))
}

/// `L_semiring = L_soft + alpha_seq * KL_seq`, CTC flavor. Returns the
/// op count of the single lattice pass that produced the NLL, the KL and
/// the teacher entropy term together.
pub fn ctc_semiring_distillation_loss(
    teacher: &FrameLogProbs,
    student: &FrameLogProbs,
    labels: &LabelSequence,
    cfg: &LossConfig,
) -> Result<(LossReport, OpCount), LossError> {
    if !teacher.normalized() {
        return Err(LossError::Ctc(crate::error::CtcError::UnnormalizedInput));
    }
    let cl = build_ctc_lattice(student.frames(), labels, student.vocab())?;
    let kl_state = ctc_kl_state(teacher, student)?;
    semiring_report(cl.lattice(), student.table(), teacher.table(), kl_state, cfg)
}

pub fn rnnt_semiring_distillation_loss(
    teacher: &RnntJointLogProbs,
    student: &RnntJointLogProbs,
    label_tokens: &[u32],
    blank_id: u32,
    cfg: &LossConfig,
) -> Result<(LossReport, OpCount), LossError> {
    if !teacher.normalized() {
        return Err(LossError::Rnnt(crate::error::RnntError::UnnormalizedInput));
    }
    let teacher_grid = RnntGridLogProbs::from_joint(teacher, label_tokens, blank_id)?;
    let student_grid = RnntGridLogProbs::from_joint(student, label_tokens, blank_id)?;
    let rl = build_rnnt_lattice(student_grid.frames(), student_grid.labels(), false);
    let kl_state = rnnt_kl_state(teacher, student)?;
    semiring_report(
        rl.lattice(),
        &student_grid.weight_table(),
        &teacher_grid.weight_table(),
        kl_state,
        cfg,
    )
}

/// Gradient of the CTC entropy-regularized loss with respect to every
/// student emission log-probability (dense `T x V` layout).
pub fn ctc_entropy_regularized_grad(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
    alpha_ent: f64,
) -> Result<Vec<f64>, LossError> {
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let g = entropy_regularized_grad_on_lattice(cl.lattice(), logits.table(), alpha_ent)?;
    Ok(dense(&g, logits.frames() * logits.vocab()))
}

/// Lattice-level entropy-regularized gradient,
/// `d total / d logp = -g_c0 - alpha * H * g_c1`.
pub fn entropy_regularized_grad_on_lattice(
    lattice: &Lattice,
    student_logp: &[f64],
    alpha_ent: f64,
) -> Result<GradientTable, LossError> {
    let weights = lift_table(student_logp, None, SemiringId::LogEntropy)?;
    let r = compute(lattice, &weights, SemiringId::LogEntropy, ComputeOptions::default())?;
    let entropy = r.total.component(1).exp();

    let mut g = gradient(lattice, student_logp, None, SemiringId::Log, 0)?;
    g.scale(-1.0);
    if alpha_ent != 0.0 && entropy != 0.0 {
        let g_ent = gradient(lattice, student_logp, None, SemiringId::LogEntropy, 1)?;
        g.axpy(-alpha_ent * entropy, &g_ent);
    }
    Ok(g)
}

/// Gradients of the RNN-T semiring distillation loss with respect to the
/// student and teacher joint tensors (dense, same layout as the joint).
/// The teacher is a constant of the loss: its gradient is exactly zero.
pub fn rnnt_semiring_distillation_grad(
    teacher: &RnntJointLogProbs,
    student: &RnntJointLogProbs,
    label_tokens: &[u32],
    blank_id: u32,
    cfg: &LossConfig,
) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    let teacher_grid = RnntGridLogProbs::from_joint(teacher, label_tokens, blank_id)?;
    let student_grid = RnntGridLogProbs::from_joint(student, label_tokens, blank_id)?;
    let (frames, labels) = (student_grid.frames(), student_grid.labels());
    let rl = build_rnnt_lattice(frames, labels, false);
    let student_table = student_grid.weight_table();
    let teacher_table = teacher_grid.weight_table();

    let lattice_grad = semiring_distillation_lattice_grad(
        rl.lattice(),
        &student_table,
        &teacher_table,
        cfg,
    )?;

    // scatter lattice refs onto joint indices
    let mut student_grad = vec![0.0; student.table().len()];
    let blank_block = frames * (labels + 1);
    for (r, v) in lattice_grad.iter() {
        let r = r as usize;
        let idx = if r < blank_block {
            let (t, u) = (r / (labels + 1), r % (labels + 1));
            student.flat_index(t, u, blank_id as usize)
        } else {
            let r = r - blank_block;
            let (t, u) = (r / labels, r % labels);
            student.flat_index(t, u, label_tokens[u] as usize)
        };
        student_grad[idx] += v;
    }

    // state KL: d/d student[i] of q_i (log q_i - log p_i) = -q_i
    if cfg.alpha_state != 0.0 {
        for (i, &lq) in teacher.table().iter().enumerate() {
            if lq != f64::NEG_INFINITY {
                student_grad[i] += cfg.alpha_state * -lq.exp();
            }
        }
    }

    let teacher_grad = vec![0.0; teacher.table().len()];
    Ok((student_grad, teacher_grad))
}

/// Same, CTC flavor: gradients over the dense `T x V` emission tensors.
pub fn ctc_semiring_distillation_grad(
    teacher: &FrameLogProbs,
    student: &FrameLogProbs,
    labels: &LabelSequence,
    cfg: &LossConfig,
) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    let cl = build_ctc_lattice(student.frames(), labels, student.vocab())?;
    let lattice_grad = semiring_distillation_lattice_grad(
        cl.lattice(),
        student.table(),
        teacher.table(),
        cfg,
    )?;
    let mut student_grad = dense(&lattice_grad, student.table().len());
    if cfg.alpha_state != 0.0 {
        for (i, &lq) in teacher.table().iter().enumerate() {
            if lq != f64::NEG_INFINITY {
                student_grad[i] += cfg.alpha_state * -lq.exp();
            }
        }
    }
    let teacher_grad = vec![0.0; teacher.table().len()];
    Ok((student_grad, teacher_grad))
}

/// `d/d logp [ -c0 + alpha_seq * (exp(c3) - exp(c2)) ]` keyed by lattice
/// weight ref. `c2` carries teacher mass only, so its student gradient
/// vanishes structurally.
fn semiring_distillation_lattice_grad(
    lattice: &Lattice,
    student_table: &[f64],
    teacher_table: &[f64],
    cfg: &LossConfig,
) -> Result<GradientTable, LossError> {
    let weights = lift_table(student_table, Some(teacher_table), SemiringId::LogReverseKl)?;
    let r = compute(lattice, &weights, SemiringId::LogReverseKl, ComputeOptions::default())?;
    let cross = r.total.component(3).exp();

    let mut g = gradient(lattice, student_table, Some(teacher_table), SemiringId::LogReverseKl, 0)?;
    g.scale(-1.0);
    if cfg.alpha_seq != 0.0 && cross != 0.0 {
        let g_cross = gradient(
            lattice,
            student_table,
            Some(teacher_table),
            SemiringId::LogReverseKl,
            3,
        )?;
        g.axpy(cfg.alpha_seq * cross, &g_cross);
    }
    Ok(g)
}

fn dense(g: &GradientTable, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (r, v) in g.iter() {
        out[r as usize] = v;
    }
    out
}
