//! Encoded representation cache.
//!
//! Layout (little-endian): magic `SPLR`, `|V|` u32, count u32, then per
//! item: id length u32, UTF-8 id, `n` u32, `n` token ids u32, `n` f32
//! weights.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseRep;

pub const REPS_MAGIC: &[u8; 4] = b"SPLR";

pub type NamedRep = (String, SparseRep<f32>);

pub fn reps_bytes(vocab_size: usize, items: &[NamedRep]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(REPS_MAGIC);
    out.extend_from_slice(&(vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (id, rep) in items {
        if rep.dim() != vocab_size {
            return Err(Error::VocabMismatch {
                expected: vocab_size,
                found: rep.dim(),
            });
        }
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(rep.nnz() as u32).to_le_bytes());
        for j in rep.token_ids() {
            out.extend_from_slice(&j.to_le_bytes());
        }
        for &(_, w) in rep.entries() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn reps_from_bytes(buf: &[u8]) -> Result<(usize, Vec<NamedRep>)> {
    if buf.len() < 4 || &buf[..4] != REPS_MAGIC {
        return Err(Error::Format("not a representation file (bad magic)".into()));
    }
    read_items(buf)
}

fn read_items(buf: &[u8]) -> Result<(usize, Vec<NamedRep>)> {
    struct R<'a> {
        buf: &'a [u8],
        pos: usize,
    }
    impl<'a> R<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.buf.len() - self.pos < n {
                return Err(Error::Format("truncated representation file".into()));
            }
            let s = &self.buf[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }
    let mut r = R { buf, pos: 4 };
    let vocab_size = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut items = Vec::with_capacity(count.min(buf.len() / 8));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("id is not valid UTF-8".into()))?
            .to_string();
        let n = r.u32()? as usize;
        if n > (buf.len() - r.pos) / 8 {
            return Err(Error::Format("truncated representation file".into()));
        }
        let ids: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        let mut entries = Vec::with_capacity(n);
        for j in ids {
            let w = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            entries.push((j, w));
        }
        let rep = SparseRep::new(vocab_size, entries)
            .map_err(|e| Error::Format(format!("representation {id}: {e}")))?;
        items.push((id, rep));
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after representations".into()));
    }
    Ok((vocab_size, items))
}

pub fn write_reps(path: &Path, vocab_size: usize, items: &[NamedRep]) -> Result<()> {
    fs::write(path, reps_bytes(vocab_size, items)?).map_err(|e| Error::io(path, e))
}

pub fn read_reps(path: &Path) -> Result<(usize, Vec<NamedRep>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    reps_from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_damage() {
        let items = vec![
            ("a".to_string(), SparseRep::new(6, vec![(1, 0.5f32), (4, 2.0)]).unwrap()),
            ("bb".to_string(), SparseRep::empty(6)),
        ];
        let bytes = reps_bytes(6, &items).unwrap();
        assert_eq!(&bytes[..4], b"SPLR");
        assert_eq!(reps_from_bytes(&bytes).unwrap(), (6, items.clone()));
        assert!(reps_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(reps_from_bytes(&bad).is_err());
        assert!(reps_bytes(7, &items).is_err());
    }
}
