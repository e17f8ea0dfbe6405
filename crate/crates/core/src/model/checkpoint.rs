//! Model checkpoint format.
//!
//! Versioned little-endian binary:
//!
//! ```text
//! magic   "CCPM" (4 bytes)
//! version u32 (currently 1)
//! input   height u32, width u32
//! layers  count u32, then per layer: tag u8 + u32 arg for Conv2d/Dense
//! tensors per layer in declaration order: weights len u64 + f64 values,
//!         then bias len u64 + f64 values (zero-length for parameterless
//!         layers)
//! ```
//!
//! Optimizer state is not persisted; a loaded model starts with fresh
//! Adam moments.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerParams, Model, ModelSpec};

const MAGIC: &[u8; 4] = b"CCPM";
const VERSION: u32 = 1;

const TAG_CONV2D: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_MAXPOOL2: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.input_height as u32).to_le_bytes());
    out.extend_from_slice(&(spec.input_width as u32).to_le_bytes());
    out.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for layer in &spec.layers {
        match *layer {
            LayerKind::Conv2d { out_channels } => {
                out.push(TAG_CONV2D);
                out.extend_from_slice(&(out_channels as u32).to_le_bytes());
            }
            LayerKind::Relu => out.push(TAG_RELU),
            LayerKind::MaxPool2 => out.push(TAG_MAXPOOL2),
            LayerKind::Flatten => out.push(TAG_FLATTEN),
            LayerKind::Dense { out_dim } => {
                out.push(TAG_DENSE);
                out.extend_from_slice(&(out_dim as u32).to_le_bytes());
            }
            LayerKind::Softmax => out.push(TAG_SOFTMAX),
        }
    }
    for params in model.params() {
        for tensor in [&params.weights, &params.bias] {
            out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let input_height = r.u32()? as usize;
    let input_width = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u8()?;
        layers.push(match tag {
            TAG_CONV2D => LayerKind::Conv2d {
                out_channels: r.u32()? as usize,
            },
            TAG_RELU => LayerKind::Relu,
            TAG_MAXPOOL2 => LayerKind::MaxPool2,
            TAG_FLATTEN => LayerKind::Flatten,
            TAG_DENSE => LayerKind::Dense {
                out_dim: r.u32()? as usize,
            },
            TAG_SOFTMAX => LayerKind::Softmax,
            other => {
                return Err(Error::format(path, format!("unknown layer tag {other}")));
            }
        });
    }
    let spec = ModelSpec {
        input_height,
        input_width,
        layers,
    };
    let shapes = spec.shapes().map_err(|e| {
        Error::format(path, format!("checkpoint carries an invalid spec: {e}"))
    })?;

    let mut params = Vec::with_capacity(spec.layers.len());
    for _ in 0..spec.layers.len() {
        let weights = r.f64_vec()?;
        let bias = r.f64_vec()?;
        params.push(LayerParams { weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after parameters", bytes.len() - r.pos),
        ));
    }

    // Cross-check tensor sizes against the spec before accepting.
    for (idx, layer) in spec.layers.iter().enumerate() {
        let expected = match (*layer, shapes[idx]) {
            (LayerKind::Conv2d { out_channels }, crate::model::Shape::Spatial { c, .. }) => {
                Some((out_channels * c * 9, out_channels))
            }
            (LayerKind::Dense { out_dim }, crate::model::Shape::Flat(n)) => {
                Some((out_dim * n, out_dim))
            }
            _ => None,
        };
        let (w_len, b_len) = expected.unwrap_or((0, 0));
        if params[idx].weights.len() != w_len || params[idx].bias.len() != b_len {
            return Err(Error::format(
                path,
                format!(
                    "layer {idx} tensor sizes {}x{} do not match spec ({}x{})",
                    params[idx].weights.len(),
                    params[idx].bias.len(),
                    w_len,
                    b_len
                ),
            ));
        }
    }

    Model::from_parts(spec, params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > self.bytes.len() / 8 {
            return Err(Error::format(self.path, "tensor length exceeds file size"));
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
        }
        Ok(out)
    }
}
