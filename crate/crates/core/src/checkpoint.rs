//! Binary checkpoint format (`.gsgn`).
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "GSGN"
//! version      u32      1
//! input shape  3 x u32  channels, height, width
//! num_classes  u32
//! layer count  u32
//! per layer    u8 kind, then
//!                kind 0 conv2d:  u32 in_channels, out_channels, kernel, padding
//!                kind 1 relu, 2 maxpool2x2, 3 flatten: nothing
//!                kind 4 dense:   u32 inputs, outputs
//! tensor count u32
//! per tensor   u32 rank, rank x u64 dims, product(dims) x f64 values
//! ```
//!
//! The file ends right after the last tensor; trailing bytes are an error.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GSGN";
pub const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const KIND_DENSE: u8 = 4;

pub fn encode(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for d in model.input_shape() {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, model.num_classes() as u32);
    put_u32(&mut out, model.layers().len() as u32);
    for layer in model.layers() {
        match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                out.push(KIND_CONV);
                for v in [in_channels, out_channels, kernel, padding] {
                    put_u32(&mut out, v as u32);
                }
            }
            LayerSpec::Relu => out.push(KIND_RELU),
            LayerSpec::MaxPool2x2 => out.push(KIND_POOL),
            LayerSpec::Flatten => out.push(KIND_FLATTEN),
            LayerSpec::Dense { inputs, outputs } => {
                out.push(KIND_DENSE);
                put_u32(&mut out, inputs as u32);
                put_u32(&mut out, outputs as u32);
            }
        }
    }
    put_u32(&mut out, model.params().len() as u32);
    for t in model.params() {
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::CheckpointFormat {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CheckpointFormat {
            offset: 0,
            message: "bad magic bytes".into(),
        });
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::CheckpointFormat {
            offset: version_at,
            message: format!("unsupported version {version}"),
        });
    }
    let input_shape = [r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?];
    let num_classes = r.u32("class count")?;
    let layer_count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..layer_count {
        let kind_at = r.pos;
        let layer = match r.u8("layer kind")? {
            KIND_CONV => LayerSpec::Conv2d {
                in_channels: r.u32("conv")?,
                out_channels: r.u32("conv")?,
                kernel: r.u32("conv")?,
                padding: r.u32("conv")?,
            },
            KIND_RELU => LayerSpec::Relu,
            KIND_POOL => LayerSpec::MaxPool2x2,
            KIND_FLATTEN => LayerSpec::Flatten,
            KIND_DENSE => LayerSpec::Dense {
                inputs: r.u32("dense")?,
                outputs: r.u32("dense")?,
            },
            k => {
                return Err(Error::CheckpointFormat {
                    offset: kind_at,
                    message: format!("unknown layer kind {k}"),
                })
            }
        };
        layers.push(layer);
    }
    let tensor_count = r.u32("tensor count")?;
    let mut params = Vec::new();
    for _ in 0..tensor_count {
        let rank = r.u32("tensor rank")?;
        if rank == 0 || rank > 8 {
            return Err(r.err(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("tensor dims")?;
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n == 0 || n > (bytes.len() / 8) as u64 {
            return Err(r.err(format!("tensor of {n} values cannot fit in the file")));
        }
        let raw = r.take(n as usize * 8, "tensor values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(&shape, values)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last tensor"));
    }
    let arch_at = r.pos;
    ModelParams::from_parts(layers, input_shape, num_classes, params).map_err(|e| {
        Error::CheckpointFormat {
            offset: arch_at,
            message: format!("inconsistent architecture: {e}"),
        }
    })
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Hex SHA-256 of the encoded checkpoint; identifies a model in reports.
pub fn digest(model: &ModelParams) -> String {
    digest_bytes(&encode(model))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
