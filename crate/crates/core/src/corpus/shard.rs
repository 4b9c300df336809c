//! Binary token shard, little-endian:
//!
//! ```text
//! "ATLB" | u32 version (1) | u32 seq_len | u64 n_sequences
//! | u64 provenance_len | provenance JSON
//! | n_sequences × u32 valid_len
//! | n_sequences × seq_len × u32 token ids
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{SequenceRecord, ShardProvenance, TokenShard};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"ATLB";
pub const SHARD_VERSION: u32 = 1;

pub fn write_shard(shard: &TokenShard, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let prov = serde_json::to_vec(&shard.provenance)?;
    let io = |e| Error::io(path, e);

    w.write_all(SHARD_MAGIC).map_err(io)?;
    w.write_all(&SHARD_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(shard.seq_len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(shard.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(prov.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&prov).map_err(io)?;
    for r in shard.records() {
        w.write_all(&(r.valid_len() as u32).to_le_bytes()).map_err(io)?;
    }
    for r in shard.records() {
        for &t in r.tokens() {
            w.write_all(&t.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: self.offset,
            msg: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<TokenShard> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = OffsetReader {
        inner: BufReader::new(file),
        offset: 0,
    };
    let fail = |offset, msg: String| Error::Format { offset, msg };

    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != SHARD_MAGIC {
        return Err(fail(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != SHARD_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let seq_len = r.u32("seq_len")? as usize;
    let n = r.u64("n_sequences")? as usize;
    if seq_len == 0 || n == 0 {
        return Err(fail(8, format!("empty shard (seq_len {seq_len}, n {n})")));
    }
    let prov_len = r.u64("provenance length")?;
    let prov_at = r.offset;
    let mut prov = vec![0u8; prov_len as usize];
    r.exact(&mut prov, "provenance")?;
    let provenance: ShardProvenance = serde_json::from_slice(&prov)
        .map_err(|e| fail(prov_at, format!("provenance JSON: {e}")))?;

    let mut valid = Vec::with_capacity(n);
    for _ in 0..n {
        valid.push(r.u32("valid_len")? as usize);
    }
    let mut records = Vec::with_capacity(n);
    let mut buf = vec![0u8; seq_len * 4];
    for (i, &v) in valid.iter().enumerate() {
        let at = r.offset;
        r.exact(&mut buf, "token ids")?;
        let tokens = buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rec = SequenceRecord::new(tokens, v, provenance.eos_id)
            .map_err(|e| fail(at, format!("record {i}: {e}")))?;
        records.push(rec);
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(fail(r.offset, "trailing bytes after last record".into()));
    }
    TokenShard::new(records, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shard() -> TokenShard {
        let recs = (0..5)
            .map(|i| SequenceRecord::padded(&vec![i; 1 + i as usize], 8, 9).unwrap())
            .collect();
        TokenShard::new(recs, ShardProvenance::new("unit", 9)).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.atlb");
        let s = shard();
        write_shard(&s, &p).unwrap();
        assert_eq!(read_shard(&p).unwrap(), s);
    }

    #[test]
    fn truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.atlb");
        write_shard(&shard(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_shard(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupted_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.atlb");
        write_shard(&shard(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_shard(&p), Err(Error::Format { offset: 0, .. })));
    }
}
