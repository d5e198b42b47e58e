//! Binary checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! "IFMC"            magic, 4 bytes
//! version           u32 (= CHECKPOINT_VERSION)
//! meta_len          u32
//! meta              meta_len bytes of JSON (CheckpointMeta)
//! tensor_count      u32
//! tensor_count x {
//!     name_len u16, name (UTF-8),
//!     ndim u8, dims u32 x ndim,
//!     data f32 x prod(dims)
//! }
//! crc32             u32 over every preceding byte
//! ```
//!
//! Tensor names are `clf.<param>` for the classifier and `disc<k>.<param>`
//! for the pair discriminators; batch-norm running statistics are stored
//! alongside the trainable arrays.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig, Parameterized};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"IFMC";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version or configuration mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint checksum mismatch (truncated or corrupted file)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Free-form tag, e.g. `best_digit`.
    pub label: String,
    pub epoch: Option<usize>,
    pub val_digit_acc: Option<f64>,
    pub val_texture_acc: Option<f64>,
    pub classifier: ClassifierConfig,
    pub discriminators: Vec<DiscriminatorConfig>,
    /// Echo of the training configuration that produced the weights.
    #[serde(default)]
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub classifier: Classifier<f32>,
    pub discriminators: Vec<Discriminator<f32>>,
}

impl Checkpoint {
    pub fn new(
        label: impl Into<String>,
        classifier: Classifier<f32>,
        discriminators: Vec<Discriminator<f32>>,
    ) -> Self {
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            label: label.into(),
            epoch: None,
            val_digit_acc: None,
            val_texture_acc: None,
            classifier: classifier.config.clone(),
            discriminators: discriminators.iter().map(|d| d.config.clone()).collect(),
            train_config: serde_json::Value::Null,
        };
        Self {
            meta,
            classifier,
            discriminators,
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&ckpt.meta).expect("meta serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);

    let mut tensors = Vec::new();
    let clf = &ckpt.classifier;
    for (name, a) in clf.params().into_iter().chain(clf.buffers()) {
        tensors.push((format!("clf.{name}"), a));
    }
    for (k, d) in ckpt.discriminators.iter().enumerate() {
        for (name, a) in d.params().into_iter().chain(d.buffers()) {
            tensors.push((format!("disc{k}.{name}"), a));
        }
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, a) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(a.ndim() as u8);
        for &d in a.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Malformed("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "file version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "metadata version {}",
            meta.format_version
        )));
    }

    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, &[u8])> = HashMap::new();
    let mut total_elems = 0usize;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut elems = 1usize;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            elems = elems
                .checked_mul(d)
                .ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?;
            dims.push(d);
        }
        let nbytes = elems
            .checked_mul(4)
            .ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?;
        let data = r.take(nbytes)?;
        total_elems += elems;
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }

    // Never allocate a model larger than the data actually present.
    let expected = expected_elements(&meta)
        .ok_or_else(|| CheckpointError::Malformed("configuration is invalid".into()))?;
    if expected != total_elems {
        return Err(CheckpointError::Malformed(format!(
            "configuration needs {expected} values, file holds {total_elems}"
        )));
    }

    let mut classifier = Classifier::<f32>::init(meta.classifier.clone(), 0)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    fill(&mut classifier, "clf.", &tensors)?;
    let mut discriminators = Vec::with_capacity(meta.discriminators.len());
    for (k, cfg) in meta.discriminators.iter().enumerate() {
        let mut d = Discriminator::<f32>::init(cfg.clone(), 0, k as u64)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        fill(&mut d, &format!("disc{k}."), &tensors)?;
        discriminators.push(d);
    }
    Ok(Checkpoint {
        meta,
        classifier,
        discriminators,
    })
}

fn fill<M: Parameterized<f32>>(
    model: &mut M,
    prefix: &str,
    tensors: &HashMap<String, (Vec<usize>, &[u8])>,
) -> Result<(), CheckpointError> {
    let assign = |name: &str, mut dst: ndarray::ArrayViewMutD<'_, f32>| {
        let full = format!("{prefix}{name}");
        let (dims, data) = tensors
            .get(&full)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {full}")))?;
        if dims.as_slice() != dst.shape() {
            return Err(CheckpointError::Malformed(format!(
                "tensor {full} has shape {dims:?}, model expects {:?}",
                dst.shape()
            )));
        }
        for (d, chunk) in dst.iter_mut().zip(data.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    };
    for (name, dst) in model.params_mut() {
        assign(&name, dst)?;
    }
    for (name, dst) in model.buffers_mut() {
        assign(&name, dst)?;
    }
    Ok(())
}

fn expected_elements(meta: &CheckpointMeta) -> Option<usize> {
    let c = &meta.classifier;
    c.validate().ok()?;
    let mut total = 0usize;
    let mut cin = c.in_channels;
    for &cout in &c.conv_channels {
        total = total.checked_add(cout.checked_mul(cin)?.checked_mul(9)?)?;
        total = total.checked_add(cout.checked_mul(4)?)?;
        cin = cout;
    }
    let side = c.tap_size(3);
    let head_in = c.conv_channels[3].checked_mul(side)?.checked_mul(side)?;
    total = total.checked_add(c.num_classes.checked_mul(head_in)?.checked_add(c.num_classes)?)?;
    for d in &meta.discriminators {
        d.validate().ok()?;
        let mut fan_in = d.input_width;
        for &w in &d.hidden {
            total = total.checked_add(w.checked_mul(fan_in)?.checked_add(w.checked_mul(4)?)?)?;
            fan_in = w;
        }
        total = total.checked_add(fan_in.checked_add(1)?)?;
    }
    Some(total)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<u64, CheckpointError> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt);
    std::fs::write(path, &bytes).map_err(|source| CheckpointError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    Ok(bytes.len() as u64)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Loads a checkpoint and insists that its classifier matches `expected`.
    pub fn load_expecting(
        path: impl AsRef<Path>,
        expected: &ClassifierConfig,
    ) -> Result<Self, CheckpointError> {
        let ckpt = load_checkpoint(path)?;
        if &ckpt.meta.classifier != expected {
            return Err(CheckpointError::VersionMismatch(format!(
                "checkpoint classifier {:?} does not match expected {:?}",
                ckpt.meta.classifier.conv_channels, expected.conv_channels
            )));
        }
        Ok(ckpt)
    }
}
