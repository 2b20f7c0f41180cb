//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SDB1"                        magic
//! u32                           format version (1)
//! u32 u32 u32                   input channels, height, width
//! u32                           layer count
//! per layer: u8 tag, then u32 hyperparameters
//!     1 conv2d   out_channels, kernel
//!     2 relu
//!     3 maxpool2x2
//!     4 dropout  rate as f64 bits (low word, high word)
//!     5 flatten
//!     6 dense    out_features
//!     7 softmax
//! per parametric layer, weights then bias:
//!     u32 rank, rank × u32 extents, f64 payload
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use crate::nn::{LayerParams, LayerSpec, NetworkSpec, Parameters, Tensor, KERNEL};

pub const MAGIC: &[u8; 4] = b"SDB1";
pub const FORMAT_VERSION: u32 = 1;
/// Largest tensor accepted while loading.
pub const MAX_TENSOR_ELEMENTS: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt tensor extents: {0}")]
    CorruptExtents(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("model file is truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_DROPOUT: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_DENSE: u8 = 6;
const TAG_SOFTMAX: u8 = 7;

fn u32_of(v: usize, what: &str) -> Result<u32, ModelIoError> {
    u32::try_from(v)
        .map_err(|_| ModelIoError::InvalidArchitecture(format!("{what} {v} exceeds u32")))
}

/// Serialized size of everything before the first tensor.
fn header_bytes(spec: &NetworkSpec) -> Result<Vec<u8>, ModelIoError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in spec.input {
        out.extend_from_slice(&u32_of(d, "input extent")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(spec.layers.len(), "layer count")?.to_le_bytes());
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv2d { out_channels } => {
                out.push(TAG_CONV);
                out.extend_from_slice(&u32_of(out_channels, "out_channels")?.to_le_bytes());
                out.extend_from_slice(&(KERNEL as u32).to_le_bytes());
            }
            LayerSpec::Relu => out.push(TAG_RELU),
            LayerSpec::MaxPool2x2 => out.push(TAG_POOL),
            LayerSpec::Dropout { rate } => {
                out.push(TAG_DROPOUT);
                let bits = rate.to_bits();
                out.extend_from_slice(&(bits as u32).to_le_bytes());
                out.extend_from_slice(&((bits >> 32) as u32).to_le_bytes());
            }
            LayerSpec::Flatten => out.push(TAG_FLATTEN),
            LayerSpec::Dense { out_features } => {
                out.push(TAG_DENSE);
                out.extend_from_slice(&u32_of(out_features, "out_features")?.to_le_bytes());
            }
            LayerSpec::Softmax => out.push(TAG_SOFTMAX),
        }
    }
    Ok(out)
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<(), ModelIoError> {
    out.extend_from_slice(&u32_of(t.rank(), "tensor rank")?.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&u32_of(d, "tensor extent")?.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes a model to bytes.
pub fn to_bytes(spec: &NetworkSpec, params: &Parameters) -> Result<Vec<u8>, ModelIoError> {
    spec.validate()
        .map_err(|e| ModelIoError::InvalidArchitecture(e.to_string()))?;
    let shapes = spec
        .param_shapes()
        .map_err(|e| ModelIoError::InvalidArchitecture(e.to_string()))?;
    let matches = shapes.len() == params.layers.len()
        && shapes
            .iter()
            .zip(&params.layers)
            .all(|((w, b), l)| l.weights.shape() == w && l.bias.shape() == b);
    if !matches {
        return Err(ModelIoError::CorruptExtents(
            "parameters do not match the architecture".into(),
        ));
    }
    let mut out = header_bytes(spec)?;
    out.reserve(params.count() * 8 + params.layers.len() * 32);
    for layer in &params.layers {
        tensor_bytes(&layer.weights, &mut out)?;
        tensor_bytes(&layer.bias, &mut out)?;
    }
    Ok(out)
}

/// Writes the model and returns the number of bytes written.
pub fn save_model<W: Write>(
    spec: &NetworkSpec,
    params: &Parameters,
    mut sink: W,
) -> Result<usize, ModelIoError> {
    let bytes = to_bytes(spec, params)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len())
}

/// Byte length of a saved model, from the architecture alone.
pub fn encoded_len(spec: &NetworkSpec) -> Result<usize, ModelIoError> {
    let header = header_bytes(spec)?.len();
    let shapes = spec
        .param_shapes()
        .map_err(|e| ModelIoError::InvalidArchitecture(e.to_string()))?;
    let tensors: usize = shapes
        .iter()
        .flat_map(|(w, b)| [w, b])
        .map(|s| 4 + 4 * s.len() + 8 * s.iter().product::<usize>())
        .sum();
    Ok(header + tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        let end = self.pos.checked_add(n).ok_or(ModelIoError::Truncated)?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(ModelIoError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ModelIoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn tensor(&mut self, expected: &[usize], what: &str) -> Result<Tensor, ModelIoError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(ModelIoError::CorruptExtents(format!("{what}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let d = self.u32()?;
            elements = elements.saturating_mul(u64::from(d));
            shape.push(d as usize);
        }
        if elements > MAX_TENSOR_ELEMENTS {
            return Err(ModelIoError::CorruptExtents(format!(
                "{what}: {elements} elements exceed the {MAX_TENSOR_ELEMENTS} limit"
            )));
        }
        if shape != expected {
            return Err(ModelIoError::CorruptExtents(format!(
                "{what}: stored shape {shape:?}, architecture requires {expected:?}"
            )));
        }
        let n = elements as usize;
        if self.remaining() < n * 8 {
            return Err(ModelIoError::Truncated);
        }
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| ModelIoError::CorruptExtents(e.to_string()))
    }
}

/// Parses a complete model image. Nothing is returned unless every tensor
/// is present and consistent with the stored architecture.
pub fn from_bytes(bytes: &[u8]) -> Result<(NetworkSpec, Parameters), ModelIoError> {
    let mut cur = Cursor { bytes, pos: 0 };
    match cur.take(4) {
        Ok(m) if m == MAGIC => {}
        Ok(_) => return Err(ModelIoError::BadMagic),
        Err(_) if bytes.is_empty() || !MAGIC.starts_with(bytes) => {
            return Err(ModelIoError::BadMagic)
        }
        Err(e) => return Err(e),
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::VersionUnsupported(version));
    }
    let input = [
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    ];
    let count = cur.u32()? as usize;
    if count > 4096 {
        return Err(ModelIoError::InvalidArchitecture(format!("{count} layers")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let layer = match cur.u8()? {
            TAG_CONV => {
                let out_channels = cur.u32()? as usize;
                let kernel = cur.u32()? as usize;
                if kernel != KERNEL {
                    return Err(ModelIoError::InvalidArchitecture(format!(
                        "layer {i}: kernel {kernel} (only {KERNEL} is supported)"
                    )));
                }
                LayerSpec::Conv2d { out_channels }
            }
            TAG_RELU => LayerSpec::Relu,
            TAG_POOL => LayerSpec::MaxPool2x2,
            TAG_DROPOUT => {
                let lo = u64::from(cur.u32()?);
                let hi = u64::from(cur.u32()?);
                LayerSpec::Dropout {
                    rate: f64::from_bits(hi << 32 | lo),
                }
            }
            TAG_FLATTEN => LayerSpec::Flatten,
            TAG_DENSE => LayerSpec::Dense {
                out_features: cur.u32()? as usize,
            },
            TAG_SOFTMAX => LayerSpec::Softmax,
            tag => {
                return Err(ModelIoError::InvalidArchitecture(format!(
                    "layer {i}: unknown tag {tag}"
                )))
            }
        };
        layers.push(layer);
    }
    let spec = NetworkSpec { input, layers };
    let shapes = spec
        .param_shapes()
        .map_err(|e| ModelIoError::InvalidArchitecture(e.to_string()))?;
    let mut params = Vec::with_capacity(shapes.len());
    for (i, (wshape, bshape)) in shapes.iter().enumerate() {
        let weights = cur.tensor(wshape, &format!("layer {i} weights"))?;
        let bias = cur.tensor(bshape, &format!("layer {i} bias"))?;
        params.push(LayerParams { weights, bias });
    }
    if cur.remaining() != 0 {
        return Err(ModelIoError::CorruptExtents(format!(
            "{} unexpected trailing bytes",
            cur.remaining()
        )));
    }
    Ok((spec, Parameters { layers: params }))
}

pub fn load_model<R: Read>(mut source: R) -> Result<(NetworkSpec, Parameters), ModelIoError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
