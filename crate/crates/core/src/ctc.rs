//! CTC alignment lattices.
//!
//! States expand the label sequence with blanks (`ε y1 ε y2 ... yU ε`,
//! 2U+1 states). A path consumes one frame per step; collapsing it
//! (drop blanks, merge repeats) recovers the labels. Vertices are
//! `(frame, state)` pairs pruned to those on some root-to-leaf path;
//! edge weights reference the destination frame's emission and roots
//! carry the frame-0 emission as an entry weight, so every path
//! multiplies exactly `T` emissions.

use crate::engine::{compute, ComputeOptions};
use crate::error::CtcError;
use crate::grad::{gradient, GradientTable};
use crate::lattice::{Edge, Lattice, Root};
use crate::semiring::{log_add, SemiringId, SemiringValue};

/// Tolerance for the per-row `logsumexp = 0` normalization check.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// The transcript: vocabulary indices plus the blank id they must avoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    tokens: Vec<u32>,
    blank_id: u32,
}

impl LabelSequence {
    pub fn new(tokens: Vec<u32>, blank_id: u32) -> Result<Self, CtcError> {
        if tokens.is_empty() {
            return Err(CtcError::EmptyLabels);
        }
        for &t in &tokens {
            if t == blank_id {
                return Err(CtcError::LabelIsBlank(t, blank_id));
            }
        }
        Ok(LabelSequence { tokens, blank_id })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn blank_id(&self) -> u32 {
        self.blank_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at expanded state `s`: blank at even positions.
    fn expanded(&self, s: usize) -> u32 {
        if s % 2 == 0 {
            self.blank_id
        } else {
            self.tokens[(s - 1) / 2]
        }
    }

    fn check_vocab(&self, vocab: usize) -> Result<(), CtcError> {
        for &t in self.tokens.iter().chain(std::iter::once(&self.blank_id)) {
            if t as usize >= vocab {
                return Err(CtcError::TokenOutOfVocab { token: t, vocab });
            }
        }
        Ok(())
    }
}

/// Per-frame log-probabilities, row-major `T x V`.
///
/// `new` validates every row's logsumexp against 0 and canonicalizes
/// float dust (entries in `(0, 1e-9]` become 0). `new_attested` skips the
/// check; entropy/KL computations refuse inputs not attested normalized.
#[derive(Debug, Clone)]
pub struct FrameLogProbs {
    data: Vec<f64>,
    frames: usize,
    vocab: usize,
    normalized: bool,
}

impl FrameLogProbs {
    pub fn new(data: Vec<f64>, frames: usize, vocab: usize) -> Result<Self, CtcError> {
        let mut lp = Self::shaped(data, frames, vocab)?;
        for t in 0..frames {
            let lse = logsumexp(&lp.data[t * vocab..(t + 1) * vocab]);
            if lse.abs() > ROW_TOLERANCE {
                return Err(CtcError::RowNotNormalized { row: t, lse });
            }
        }
        for x in &mut lp.data {
            if *x > 0.0 {
                *x = 0.0;
            }
        }
        lp.normalized = true;
        Ok(lp)
    }

    pub fn new_attested(
        data: Vec<f64>,
        frames: usize,
        vocab: usize,
        normalized: bool,
    ) -> Result<Self, CtcError> {
        let mut lp = Self::shaped(data, frames, vocab)?;
        lp.normalized = normalized;
        Ok(lp)
    }

    fn shaped(data: Vec<f64>, frames: usize, vocab: usize) -> Result<Self, CtcError> {
        if data.len() != frames * vocab {
            return Err(CtcError::ShapeMismatch {
                len: data.len(),
                rows: frames,
                cols: vocab,
            });
        }
        Ok(FrameLogProbs {
            data,
            frames,
            vocab,
            normalized: false,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, t: usize, v: usize) -> f64 {
        self.data[t * self.vocab + v]
    }

    pub fn table(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, log_add)
}

/// A CTC lattice together with its `(frame, state)` coordinates.
#[derive(Debug, Clone)]
pub struct CtcLattice {
    lattice: Lattice,
    frames: usize,
    states: usize,
    vocab: usize,
    /// `(t, s) -> vertex index` for kept vertices.
    vertex_of: Vec<Option<u32>>,
    /// inverse map, parallel to vertex indices
    coords: Vec<(u32, u32)>,
}

impl CtcLattice {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Expanded state count 2U + 1.
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn vertex_of(&self, t: usize, s: usize) -> Option<u32> {
        self.vertex_of[t * self.states + s]
    }

    pub fn coords_of(&self, vertex: u32) -> (u32, u32) {
        self.coords[vertex as usize]
    }
}

/// Builds the pruned CTC lattice over `frames` frames. `vocab` fixes the
/// flat weight-ref layout `ref = t * vocab + token` into a `T x V`
/// emission table.
pub fn build_ctc_lattice(
    frames: usize,
    labels: &LabelSequence,
    vocab: usize,
) -> Result<CtcLattice, CtcError> {
    assert!(frames >= 1, "frame count must be >= 1");
    labels.check_vocab(vocab)?;
    let states = 2 * labels.len() + 1;

    // structural moves from state s: stay, advance, and the repeat-aware
    // skip (encoded once here; compute never re-compares labels)
    let moves = |s: usize| {
        let mut out = [None; 3];
        out[0] = Some(s);
        if s + 1 < states {
            out[1] = Some(s + 1);
        }
        if s + 2 < states && (s + 2) % 2 == 1 && labels.expanded(s + 2) != labels.expanded(s) {
            out[2] = Some(s + 2);
        }
        out
    };

    let mut reach = vec![false; frames * states];
    reach[0] = true;
    if states > 1 {
        reach[1] = true;
    }
    for t in 0..frames - 1 {
        for s in 0..states {
            if reach[t * states + s] {
                for m in moves(s).into_iter().flatten() {
                    reach[(t + 1) * states + m] = true;
                }
            }
        }
    }

    let mut coreach = vec![false; frames * states];
    coreach[(frames - 1) * states + (states - 1)] = true;
    if states >= 2 {
        coreach[(frames - 1) * states + (states - 2)] = true;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            coreach[t * states + s] = moves(s)
                .into_iter()
                .flatten()
                .any(|m| coreach[(t + 1) * states + m]);
        }
    }

    let mut vertex_of = vec![None; frames * states];
    let mut coords = Vec::new();
    for t in 0..frames {
        for s in 0..states {
            if reach[t * states + s] && coreach[t * states + s] {
                vertex_of[t * states + s] = Some(coords.len() as u32);
                coords.push((t as u32, s as u32));
            }
        }
    }

    let emission_ref = |t: usize, s: usize| (t * vocab + labels.expanded(s) as usize) as u32;

    let mut edges = Vec::new();
    for (&(t, s), src) in coords.iter().zip(0u32..) {
        let (t, s) = (t as usize, s as usize);
        if t + 1 >= frames {
            continue;
        }
        for m in moves(s).into_iter().flatten() {
            if let Some(dst) = vertex_of[(t + 1) * states + m] {
                edges.push(Edge::new(src, dst, emission_ref(t + 1, m)));
            }
        }
    }

    let mut roots = Vec::new();
    for s in [0usize, 1] {
        if s < states {
            if let Some(v) = vertex_of[s] {
                roots.push(Root::with_entry(v, emission_ref(0, s)));
            }
        }
    }
    let mut leaves = Vec::new();
    for s in [states.saturating_sub(2), states - 1] {
        if let Some(v) = vertex_of[(frames - 1) * states + s] {
            if !leaves.contains(&v) {
                leaves.push(v);
            }
        }
    }

    let lattice = Lattice::new(coords.len(), edges, roots, leaves).map_err(crate::error::EngineError::from)?;
    Ok(CtcLattice {
        lattice,
        frames,
        states,
        vocab,
        vertex_of,
        coords,
    })
}

fn check_shapes(logits: &FrameLogProbs, labels: &LabelSequence) -> Result<(), CtcError> {
    labels.check_vocab(logits.vocab())?;
    Ok(())
}

/// `-log P(y|x)` over all CTC alignments; `+inf` when no alignment exists.
pub fn ctc_nll(logits: &FrameLogProbs, labels: &LabelSequence) -> Result<f64, CtcError> {
    check_shapes(logits, labels)?;
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let weights = crate::engine::lift_table(logits.table(), None, SemiringId::Log)?;
    let r = compute(cl.lattice(), &weights, SemiringId::Log, ComputeOptions::default())?;
    Ok(-r.total.component(0))
}

/// Alignment entropy `H = -Σ_π P(π) log P(π)` over unnormalized path
/// probabilities, via one log-entropy pass.
pub fn ctc_alignment_entropy(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
) -> Result<f64, CtcError> {
    if !logits.normalized() {
        return Err(CtcError::UnnormalizedInput);
    }
    check_shapes(logits, labels)?;
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let weights = crate::engine::lift_table(logits.table(), None, SemiringId::LogEntropy)?;
    let r = compute(
        cl.lattice(),
        &weights,
        SemiringId::LogEntropy,
        ComputeOptions::default(),
    )?;
    Ok(r.total.component(1).exp())
}

/// Both the NLL and the entropy from a single log-entropy pass.
pub fn ctc_nll_and_entropy(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
) -> Result<(f64, f64), CtcError> {
    if !logits.normalized() {
        return Err(CtcError::UnnormalizedInput);
    }
    check_shapes(logits, labels)?;
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let weights = crate::engine::lift_table(logits.table(), None, SemiringId::LogEntropy)?;
    let r = compute(
        cl.lattice(),
        &weights,
        SemiringId::LogEntropy,
        ComputeOptions::default(),
    )?;
    Ok((-r.total.component(0), r.total.component(1).exp()))
}

/// `T x (2U+1)` state-occupancy posteriors,
/// `exp(forward + backward - log P)`. Pruned states have mass 0; each
/// frame's row sums to 1.
pub fn ctc_state_posteriors(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
) -> Result<Vec<f64>, CtcError> {
    check_shapes(logits, labels)?;
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let weights = crate::engine::lift_table(logits.table(), None, SemiringId::Log)?;
    let r = compute(cl.lattice(), &weights, SemiringId::Log, ComputeOptions::tables())?;
    let logp = r.total.component(0);
    if logp == f64::NEG_INFINITY {
        return Err(CtcError::InfeasibleAlignment);
    }
    let (f, b) = (r.forward.unwrap(), r.backward.unwrap());
    let mut posteriors = vec![0.0; cl.frames() * cl.states()];
    for (v, &(t, s)) in cl.coords.iter().enumerate() {
        let mass = f[v].component(0) + b[v].component(0) - logp;
        posteriors[t as usize * cl.states() + s as usize] = mass.exp();
    }
    Ok(posteriors)
}

/// Exact number of maximal alignments, by a counting-semiring pass.
pub fn ctc_alignment_count(frames: usize, labels: &LabelSequence) -> Result<u64, CtcError> {
    let vocab = labels
        .tokens()
        .iter()
        .copied()
        .chain(std::iter::once(labels.blank_id()))
        .max()
        .unwrap() as usize
        + 1;
    let cl = build_ctc_lattice(frames, labels, vocab)?;
    let weights = vec![SemiringValue::Count(1); frames * vocab];
    let r = compute(
        cl.lattice(),
        &weights,
        SemiringId::Counting,
        ComputeOptions::default(),
    )?;
    match r.total {
        SemiringValue::Count(n) if n <= i64::MAX as u64 => Ok(n),
        _ => Err(CtcError::CountOverflow),
    }
}

/// Gradient of the NLL with respect to every emission log-probability,
/// keyed by the flat ref `t * V + token`.
pub fn ctc_nll_grad(
    logits: &FrameLogProbs,
    labels: &LabelSequence,
) -> Result<GradientTable, CtcError> {
    check_shapes(logits, labels)?;
    let cl = build_ctc_lattice(logits.frames(), labels, logits.vocab())?;
    let mut g = gradient(cl.lattice(), logits.table(), None, SemiringId::Log, 0)?;
    g.scale(-1.0);
    Ok(g)
}
