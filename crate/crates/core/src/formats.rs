//! Binary files: the precomputed message set (`FMPM`) and parameter
//! checkpoints (`FMPP`). Little-endian throughout, values stored as `f32`.
//!
//! Message set layout:
//! `"FMPM" | version u32 | N u64 | T u32 | d u32 | (T+1)·N·d × f32`, step-major
//! then row-major.
//!
//! Checkpoint layout:
//! `"FMPP" | version u32 | tensor count u32 | (rows u32, cols u32)* | f32 data`,
//! tensors in declaration order.
//!
//! Values go through `f32`, so reading a file written from `f64` data yields
//! `x as f32 as f64`; writing what was read reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelParams, VariantConfig};
use crate::propagation::{MessageMeta, MessageSet};

pub const MESSAGE_MAGIC: &[u8; 4] = b"FMPM";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMPP";
pub const FORMAT_VERSION: u32 = 1;

fn to_f32(x: f64, what: &str) -> Result<f32> {
    let y = x as f32;
    if !y.is_finite() {
        return Err(Error::numeric(format!("{what} value {x} does not fit a 32-bit float")));
    }
    Ok(y)
}

struct Cursor<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Cursor<R> {
    fn exact<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::input(format!("{} is truncated: {e}", self.what)))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::input(format!("{} declares an impossible size", self.what)))?;
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(bytes as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::input(format!("{} could not be read: {e}", self.what)))?;
        if buf.len() != bytes {
            return Err(Error::input(format!(
                "{} is truncated: expected {bytes} payload bytes, found {}",
                self.what,
                buf.len()
            )));
        }
        let out: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("{} contains NaN or infinite values", self.what)));
        }
        Ok(out)
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.inner.read(&mut rest) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::input(format!("{} has trailing bytes", self.what))),
            Err(e) => Err(Error::input(format!("{} could not be read: {e}", self.what))),
        }
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.exact()?;
        if &m != expected {
            return Err(Error::input(format!(
                "{} has magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::input(format!("{} has unsupported version {version}", self.what)));
        }
        Ok(())
    }
}

pub fn write_message_set(w: &mut impl Write, ms: &MessageSet) -> Result<()> {
    let (n, d, t) = (ms.num_nodes(), ms.dim(), ms.depth());
    let to_u32 = |x: usize, what: &str| {
        u32::try_from(x).map_err(|_| Error::input(format!("{what} {x} exceeds the file format limit")))
    };
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(MESSAGE_MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(n as u64).to_le_bytes());
    header.extend_from_slice(&to_u32(t, "depth")?.to_le_bytes());
    header.extend_from_slice(&to_u32(d, "feature width")?.to_le_bytes());
    let io = |e| Error::input(format!("writing message set: {e}"));
    w.write_all(&header).map_err(io)?;
    let mut buf = Vec::with_capacity(n * d * 4);
    for step in ms.steps() {
        buf.clear();
        for &x in step.as_slice() {
            buf.extend_from_slice(&to_f32(x, "message")?.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn read_message_set(r: impl Read) -> Result<MessageSet> {
    let mut c = Cursor { inner: r, what: "message set file" };
    c.magic(MESSAGE_MAGIC)?;
    let n = usize::try_from(c.u64()?).map_err(|_| Error::input("node count does not fit in memory"))?;
    let t = c.u32()? as usize;
    let d = c.u32()? as usize;
    if n == 0 {
        return Err(Error::input("message set file declares zero nodes"));
    }
    let per_step = n
        .checked_mul(d)
        .ok_or_else(|| Error::input("message set file declares an impossible size"))?;
    let mut steps = Vec::with_capacity(t + 1);
    for _ in 0..=t {
        steps.push(Matrix::from_vec(n, d, c.f32s(per_step)?));
    }
    c.expect_end()?;
    MessageSet::from_steps(steps, MessageMeta { operator: None, restart_alpha: None })
}

pub fn save_message_set(path: &Path, ms: &MessageSet) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_message_set(&mut w, ms)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_message_set(path: &Path) -> Result<MessageSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_message_set(BufReader::new(f))
}

pub fn write_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.shape.0 as u32).to_le_bytes());
        out.extend_from_slice(&(t.shape.1 as u32).to_le_bytes());
    }
    for t in &tensors {
        for &x in t.data {
            out.extend_from_slice(&to_f32(x, &t.name)?.to_le_bytes());
        }
    }
    w.write_all(&out).map_err(|e| Error::input(format!("writing checkpoint: {e}")))
}

/// Rebuilds parameters for `vcfg` over `feature_dim` input features. The class
/// count is taken from the stored output layer; every other shape must match
/// what `vcfg` implies.
pub fn read_checkpoint(r: impl Read, vcfg: &VariantConfig, feature_dim: usize) -> Result<ModelParams> {
    let mut c = Cursor { inner: r, what: "checkpoint file" };
    c.magic(CHECKPOINT_MAGIC)?;
    let count = c.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        shapes.push((c.u32()? as usize, c.u32()? as usize));
    }
    let out_layer = 2 * vcfg.hidden.len();
    let num_classes = shapes
        .get(out_layer)
        .map(|s| s.1)
        .ok_or_else(|| Error::config("checkpoint has fewer layers than the configuration"))?;
    let mut params = ModelParams::init(vcfg, feature_dim, num_classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.shape).collect();
    if expected != shapes {
        return Err(Error::config(format!(
            "checkpoint tensor shapes {shapes:?} do not match the configuration {expected:?}"
        )));
    }
    for t in params.tensors_mut() {
        let data = c.f32s(t.len())?;
        t.copy_from_slice(&data);
    }
    c.expect_end()?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, vcfg: &VariantConfig, feature_dim: usize) -> Result<ModelParams> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f), vcfg, feature_dim)
}
