//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `SPLP`, version `u32`, then `|V|`, `d`,
//! context depth, aggregation code and gating code as `u32`, followed by
//! every tensor in canonical order as `rows u32, cols u32, rows·cols f64`.

use std::fs;
use std::path::Path;

use crate::encoder::{Aggregation, EncoderConfig, EncoderParams, Gating};
use crate::error::{Error, Result};
use crate::kernels::{Matrix, ParamSet};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPLP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes<T: Scalar>(params: &EncoderParams<T>) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        cfg.vocab_size as u32,
        cfg.embed_dim as u32,
        cfg.context_depth as u32,
        cfg.aggregation.code(),
        cfg.gating.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in params.tensors() {
        out.extend_from_slice(&(t.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.value.cols() as u32).to_le_bytes());
        for &x in t.value.as_slice() {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; `max_len` is not stored and must be supplied.
pub fn checkpoint_from_bytes<T: Scalar>(buf: &[u8], max_len: usize) -> Result<EncoderParams<T>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let vocab_size = c.u32()? as usize;
    let embed_dim = c.u32()? as usize;
    let depth = c.u32()?;
    let aggregation = Aggregation::from_code(c.u32()?)?;
    let gating = Gating::from_code(c.u32()?)?;
    if depth > 1 {
        return Err(Error::Format(format!("unsupported context depth {depth}")));
    }
    let config = EncoderConfig {
        vocab_size,
        embed_dim,
        context_depth: depth as u8,
        aggregation,
        gating,
        max_len,
    };
    let count = if depth == 1 { 9 } else { 6 };
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= (buf.len() - c.pos) / 8)
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let data = (0..n).map(|_| c.f64().map(T::from_f64_lossy)).collect::<Result<Vec<_>>>()?;
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    EncoderParams::from_tensors(config, tensors)
}

pub fn write_checkpoint<T: Scalar>(params: &EncoderParams<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: &Path, max_len: usize) -> Result<EncoderParams<T>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&buf, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::InitSpec;

    #[test]
    fn roundtrip_both_depths() {
        for depth in [0u8, 1] {
            let mut cfg = EncoderConfig::new(13, 5);
            cfg.context_depth = depth;
            cfg.gating = Gating::LexicalOnly;
            let p = EncoderParams::<f64>::init(cfg, InitSpec::default()).unwrap();
            let bytes = checkpoint_bytes(&p);
            assert_eq!(&bytes[..4], b"SPLP");
            let back: EncoderParams<f64> = checkpoint_from_bytes(&bytes, 256).unwrap();
            assert_eq!(back, p);
            assert_eq!(checkpoint_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let p = EncoderParams::<f64>::init(EncoderConfig::new(4, 2), InitSpec::default()).unwrap();
        let bytes = checkpoint_bytes(&p);
        assert!(checkpoint_from_bytes::<f64>(&bytes[..bytes.len() - 3], 8).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes::<f64>(&bad, 8).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(checkpoint_from_bytes::<f64>(&bad, 8).is_err());
    }
}
