//! File formats: the `SEMIRNG1` binary tensor container, JSON case
//! files, and round-trip-exact JSON number formatting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::ctc::{FrameLogProbs, LabelSequence};
use crate::error::{CtcError, RnntError};
use crate::rnnt::{RnntGridLogProbs, RnntJointLogProbs};

pub const TENSOR_MAGIC: &[u8; 8] = b"SEMIRNG1";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected SEMIRNG1")]
    BadMagic,

    #[error("unsupported tensor version {0}")]
    BadVersion(u32),

    #[error("trailing bytes after payload")]
    TrailingBytes,

    #[error("payload entry {0} is NaN (pass --allow-nan to accept)")]
    NanPayload(usize),

    #[error("tensor dimensions overflow")]
    DimOverflow,
}

/// A dense row-major f64 tensor with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }
}

/// Writes `magic | version | ndim | dims | payload`, all little-endian.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
    for &d in &tensor.dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in &tensor.data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tensor back; rejects trailing bytes, and NaN payload entries
/// unless `allow_nan`.
pub fn read_tensor(path: &Path, allow_nan: bool) -> Result<Tensor, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != TENSOR_VERSION {
        return Err(IoError::BadVersion(version));
    }
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    let mut numel: usize = 1;
    for _ in 0..ndim {
        r.read_exact(&mut u64buf)?;
        let d = u64::from_le_bytes(u64buf);
        let d = usize::try_from(d).map_err(|_| IoError::DimOverflow)?;
        numel = numel.checked_mul(d).ok_or(IoError::DimOverflow)?;
        dims.push(d);
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        r.read_exact(&mut u64buf)?;
        let x = f64::from_le_bytes(u64buf);
        if x.is_nan() && !allow_nan {
            return Err(IoError::NanPayload(i));
        }
        data.push(x);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(IoError::TrailingBytes);
    }
    Ok(Tensor { dims, data })
}

/// Formats an f64 as a JSON token with 17 significant digits, which
/// round-trips bit-exactly. Non-finite values become quoted strings
/// (`"inf"`, `"-inf"`, `"nan"`) since JSON has no literals for them.
pub fn json_number(x: f64) -> String {
    if x.is_nan() {
        "\"nan\"".to_string()
    } else if x == f64::INFINITY {
        "\"inf\"".to_string()
    } else if x == f64::NEG_INFINITY {
        "\"-inf\"".to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error(transparent)]
    Io(#[from] IoError),

    #[error("cannot parse case file: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Schema(String),

    #[error(transparent)]
    Ctc(#[from] CtcError),

    #[error(transparent)]
    Rnnt(#[from] RnntError),
}

fn schema(msg: impl Into<String>) -> CaseError {
    CaseError::Schema(msg.into())
}

/// A tensor field of a case file: either a path to a `SEMIRNG1` file
/// (resolved relative to the case file) or inline nested arrays.
/// Inline entries may be the strings `"inf"`, `"-inf"`, `"nan"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TensorSource {
    Path(String),
    Inline(serde_json::Value),
}

impl TensorSource {
    pub fn resolve(&self, base_dir: &Path, allow_nan: bool) -> Result<Tensor, CaseError> {
        match self {
            TensorSource::Path(p) => {
                let full: PathBuf = base_dir.join(p);
                Ok(read_tensor(&full, allow_nan)?)
            }
            TensorSource::Inline(v) => {
                let mut dims = Vec::new();
                let mut data = Vec::new();
                parse_nested(v, 0, &mut dims, &mut data)?;
                if !allow_nan && data.iter().any(|x| x.is_nan()) {
                    return Err(schema("inline tensor contains NaN"));
                }
                Ok(Tensor { dims, data })
            }
        }
    }
}

fn parse_nested(
    v: &serde_json::Value,
    depth: usize,
    dims: &mut Vec<usize>,
    data: &mut Vec<f64>,
) -> Result<(), CaseError> {
    match v {
        serde_json::Value::Array(items) => {
            if depth == dims.len() {
                dims.push(items.len());
            } else if dims[depth] != items.len() {
                return Err(schema(format!(
                    "ragged tensor: expected {} entries at depth {depth}, got {}",
                    dims[depth],
                    items.len()
                )));
            }
            for item in items {
                parse_nested(item, depth + 1, dims, data)?;
            }
            Ok(())
        }
        serde_json::Value::Number(n) => {
            if depth != dims.len() {
                return Err(schema("ragged tensor: scalar at array depth"));
            }
            data.push(n.as_f64().ok_or_else(|| schema("non-f64 number"))?);
            Ok(())
        }
        serde_json::Value::String(s) => {
            if depth != dims.len() {
                return Err(schema("ragged tensor: scalar at array depth"));
            }
            let x = match s.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                "nan" => f64::NAN,
                other => other
                    .parse::<f64>()
                    .map_err(|_| schema(format!("bad tensor entry {other:?}")))?,
            };
            data.push(x);
            Ok(())
        }
        other => Err(schema(format!("bad tensor entry {other}"))),
    }
}

fn default_true() -> bool {
    true
}

/// The JSON case description the CLI consumes.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub kind: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(default)]
    pub labels: Vec<u32>,
    pub blank_id: u32,
    #[serde(default)]
    pub logits: Option<TensorSource>,
    #[serde(default)]
    pub teacher_logits: Option<TensorSource>,
    /// Pre-sliced RNN-T alternative to `logits`:
    /// blank (`T x (U+1)`) and label (`(T+1) x U`) log-probabilities.
    #[serde(default)]
    pub blank: Option<TensorSource>,
    #[serde(default)]
    pub label: Option<TensorSource>,
    #[serde(default)]
    pub teacher_blank: Option<TensorSource>,
    #[serde(default)]
    pub teacher_label: Option<TensorSource>,
    #[serde(default = "default_true")]
    pub normalized: bool,
}

/// Typed, validated case inputs.
#[derive(Debug)]
pub enum CaseInput {
    Ctc {
        labels: LabelSequence,
        student: FrameLogProbs,
        teacher: Option<FrameLogProbs>,
    },
    Rnnt {
        labels: Vec<u32>,
        blank_id: u32,
        student: RnntGridLogProbs,
        teacher: Option<RnntGridLogProbs>,
        student_joint: Option<RnntJointLogProbs>,
        teacher_joint: Option<RnntJointLogProbs>,
    },
}

pub fn parse_case(text: &str) -> Result<CaseFile, CaseError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_case(path: &Path, allow_nan: bool) -> Result<(CaseFile, CaseInput), CaseError> {
    let text = std::fs::read_to_string(path).map_err(IoError::from)?;
    let case = parse_case(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let input = case.to_input(base, allow_nan)?;
    Ok((case, input))
}

impl CaseFile {
    pub fn to_input(&self, base_dir: &Path, allow_nan: bool) -> Result<CaseInput, CaseError> {
        match self.kind.as_str() {
            "ctc" => self.to_ctc_input(base_dir, allow_nan),
            "rnnt" => self.to_rnnt_input(base_dir, allow_nan),
            other => Err(schema(format!("kind must be \"ctc\" or \"rnnt\", got {other:?}"))),
        }
    }

    fn frame_logprobs(&self, tensor: Tensor) -> Result<FrameLogProbs, CaseError> {
        if tensor.dims != [self.t, self.v] {
            return Err(schema(format!(
                "ctc logits must be T x V = {} x {}, got {:?}",
                self.t, self.v, tensor.dims
            )));
        }
        let lp = if self.normalized {
            FrameLogProbs::new(tensor.data, self.t, self.v)?
        } else {
            FrameLogProbs::new_attested(tensor.data, self.t, self.v, false)?
        };
        Ok(lp)
    }

    fn to_ctc_input(&self, base_dir: &Path, allow_nan: bool) -> Result<CaseInput, CaseError> {
        if self.labels.len() != self.u {
            return Err(schema(format!(
                "labels length {} must equal U = {}",
                self.labels.len(),
                self.u
            )));
        }
        let labels = LabelSequence::new(self.labels.clone(), self.blank_id)?;
        let logits = self
            .logits
            .as_ref()
            .ok_or_else(|| schema("ctc case requires \"logits\""))?;
        let student = self.frame_logprobs(logits.resolve(base_dir, allow_nan)?)?;
        let teacher = match &self.teacher_logits {
            Some(src) => Some(self.frame_logprobs(src.resolve(base_dir, allow_nan)?)?),
            None => None,
        };
        Ok(CaseInput::Ctc {
            labels,
            student,
            teacher,
        })
    }

    fn joint(&self, tensor: Tensor) -> Result<RnntJointLogProbs, CaseError> {
        if tensor.dims != [self.t + 1, self.u + 1, self.v] {
            return Err(schema(format!(
                "rnnt logits must be (T+1) x (U+1) x V = {} x {} x {}, got {:?}",
                self.t + 1,
                self.u + 1,
                self.v,
                tensor.dims
            )));
        }
        let j = if self.normalized {
            RnntJointLogProbs::new(tensor.data, self.t, self.u, self.v)?
        } else {
            RnntJointLogProbs::new_attested(tensor.data, self.t, self.u, self.v, false)?
        };
        Ok(j)
    }

    fn grid_from_parts(
        &self,
        base_dir: &Path,
        allow_nan: bool,
        blank: &TensorSource,
        label: &TensorSource,
    ) -> Result<RnntGridLogProbs, CaseError> {
        let blank = blank.resolve(base_dir, allow_nan)?;
        let label = label.resolve(base_dir, allow_nan)?;
        if blank.dims != [self.t, self.u + 1] {
            return Err(schema(format!(
                "blank slice must be T x (U+1), got {:?}",
                blank.dims
            )));
        }
        if label.dims != [self.t + 1, self.u] {
            return Err(schema(format!(
                "label slice must be (T+1) x U, got {:?}",
                label.dims
            )));
        }
        Ok(RnntGridLogProbs::from_parts(
            self.t,
            self.u,
            blank.data,
            label.data,
            self.normalized,
        )?)
    }

    fn to_rnnt_input(&self, base_dir: &Path, allow_nan: bool) -> Result<CaseInput, CaseError> {
        if self.labels.len() != self.u {
            return Err(schema(format!(
                "labels length {} must equal U = {}",
                self.labels.len(),
                self.u
            )));
        }

        let (student, student_joint) = match (&self.logits, &self.blank, &self.label) {
            (Some(src), None, None) => {
                let joint = self.joint(src.resolve(base_dir, allow_nan)?)?;
                let grid = RnntGridLogProbs::from_joint(&joint, &self.labels, self.blank_id)?;
                (grid, Some(joint))
            }
            (None, Some(b), Some(l)) => {
                (self.grid_from_parts(base_dir, allow_nan, b, l)?, None)
            }
            _ => {
                return Err(schema(
                    "rnnt case requires either \"logits\" or both \"blank\" and \"label\"",
                ))
            }
        };

        let (teacher, teacher_joint) = match (&self.teacher_logits, &self.teacher_blank, &self.teacher_label)
        {
            (Some(src), None, None) => {
                let joint = self.joint(src.resolve(base_dir, allow_nan)?)?;
                let grid = RnntGridLogProbs::from_joint(&joint, &self.labels, self.blank_id)?;
                (Some(grid), Some(joint))
            }
            (None, Some(b), Some(l)) => {
                (Some(self.grid_from_parts(base_dir, allow_nan, b, l)?), None)
            }
            (None, None, None) => (None, None),
            _ => {
                return Err(schema(
                    "teacher tensors must be either \"teacher_logits\" or both \"teacher_blank\" and \"teacher_label\"",
                ))
            }
        };

        Ok(CaseInput::Rnnt {
            labels: self.labels.clone(),
            blank_id: self.blank_id,
            student,
            teacher,
            student_joint,
            teacher_joint,
        })
    }
}
