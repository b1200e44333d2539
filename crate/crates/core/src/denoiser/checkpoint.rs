//! Toy-model checkpoints.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic        8 bytes  "BSTOYNN\0"
//! version      u32
//! latent_ch    u32
//! steps        u32
//! n_layers     u32
//! per layer    u32 out, u32 kernel, u32 activation (0/1)
//! skip         u32 (0/1)
//! n_scales     u32 (0 or steps)
//! scales       n_scales x (f64 a_t, f64 b_t)
//! n_params     u64
//! params       n_params x f32
//! ```

use std::fs;
use std::path::Path;

use super::{Architecture, LayerSpec, ToyDenoiser};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BSTOYNN\0";
const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &ToyDenoiser) -> Vec<u8> {
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        arch.latent_channels as u32,
        arch.steps as u32,
        arch.layers.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &arch.layers {
        for v in [l.out as u32, l.kernel as u32, l.activation as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(arch.skip as u32).to_le_bytes());
    out.extend_from_slice(&(arch.input_scales.len() as u32).to_le_bytes());
    for v in arch.input_scales.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for &p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToyDenoiser> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let latent_channels = r.u32()?;
    let steps = r.u32()?;
    let n_layers = r.u32()?;
    if n_layers > 64 {
        return Err(Error::format("checkpoint", format!("{n_layers} layers")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out = r.u32()?;
        let kernel = r.u32()?;
        let activation = r.u32()? != 0;
        layers.push(LayerSpec {
            out,
            kernel,
            activation,
        });
    }
    let skip = match r.u32()? {
        0 => false,
        1 => true,
        other => return Err(Error::format("checkpoint", format!("skip flag {other}"))),
    };
    let n_scales = r.u32()?;
    if n_scales != 0 && n_scales != steps {
        return Err(Error::format("checkpoint", format!("{n_scales} input scales for {steps} steps")));
    }
    let input_scales = (0..n_scales)
        .map(|_| Ok([r.f64()?, r.f64()?]))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        latent_channels,
        steps,
        layers,
        input_scales,
        skip,
    };
    arch.validate()?;
    let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    if n != arch.param_count() {
        return Err(Error::format(
            "checkpoint",
            format!("{n} parameters, architecture needs {}", arch.param_count()),
        ));
    }
    let params = r
        .take(4 * n)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    ToyDenoiser::from_params(arch, params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ToyDenoiser) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyDenoiser> {
    decode_checkpoint(&fs::read(path)?)
}
