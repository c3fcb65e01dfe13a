//! Binary embedding files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "SKREMB1\0"
//! dim      u32
//! count    u64
//! records  count x { id_len: u16, id: [u8; id_len] (UTF-8), values: [f32; dim] }
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Embedding;

pub const MAGIC: &[u8; 8] = b"SKREMB1\0";

#[derive(Debug, Error)]
pub enum EmbFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated at record {record}")]
    Truncated { path: PathBuf, record: u64 },
    #[error("{path}: record {record} is not valid UTF-8")]
    BadId { path: PathBuf, record: u64 },
    #[error("{path}: record {record} ({id}) has a non-finite value")]
    NonFinite { path: PathBuf, record: u64, id: String },
    #[error("{path}: trailing bytes after {count} records")]
    TrailingBytes { path: PathBuf, count: u64 },
    #[error("embedding {id} has dim {got}, file dim is {expected}")]
    DimMismatch { id: String, expected: usize, got: usize },
    #[error("embedding id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("zero dimension")]
    ZeroDim,
}

/// Writes `embeddings` to `path`. All entries must share `dim`.
pub fn write_embeddings(path: &Path, dim: usize, embeddings: &[Embedding]) -> Result<(), EmbFileError> {
    let io_err = |source| EmbFileError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    encode(&mut w, dim, embeddings).map_err(|e| match e {
        EncodeError::Io(source) => EmbFileError::Io { path: path.to_path_buf(), source },
        EncodeError::Other(e) => e,
    })?;
    w.flush().map_err(io_err)
}

enum EncodeError {
    Io(io::Error),
    Other(EmbFileError),
}

impl From<io::Error> for EncodeError {
    fn from(e: io::Error) -> Self {
        EncodeError::Io(e)
    }
}

fn encode<W: Write>(w: &mut W, dim: usize, embeddings: &[Embedding]) -> Result<(), EncodeError> {
    if dim == 0 {
        return Err(EncodeError::Other(EmbFileError::ZeroDim));
    }
    let dim32 = u32::try_from(dim).map_err(|_| EncodeError::Other(EmbFileError::ZeroDim))?;
    w.write_all(MAGIC)?;
    w.write_all(&dim32.to_le_bytes())?;
    w.write_all(&(embeddings.len() as u64).to_le_bytes())?;
    for e in embeddings {
        if e.dim() != dim {
            return Err(EncodeError::Other(EmbFileError::DimMismatch {
                id: e.id.clone(),
                expected: dim,
                got: e.dim(),
            }));
        }
        let id_len = u16::try_from(e.id.len())
            .map_err(|_| EncodeError::Other(EmbFileError::IdTooLong(e.id.clone())))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(e.id.as_bytes())?;
        for v in e.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an embedding file, returning its dimension and records in file order.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Embedding>), EmbFileError> {
    let file = File::open(path).map_err(|source| EmbFileError::Io { path: path.to_path_buf(), source })?;
    let mut r = BufReader::new(file);
    let p = || path.to_path_buf();

    let mut magic = [0u8; 8];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(EmbFileError::BadMagic { path: p() });
    }
    let truncated = |record| EmbFileError::Truncated { path: p(), record };
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| truncated(0))?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 {
        return Err(EmbFileError::ZeroDim);
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|_| truncated(0))?;
    let count = u64::from_le_bytes(u64buf);

    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut value_bytes = vec![0u8; dim * 4];
    for record in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|_| truncated(record))?;
        let mut id_bytes = vec![0u8; u16::from_le_bytes(u16buf) as usize];
        r.read_exact(&mut id_bytes).map_err(|_| truncated(record))?;
        let id = String::from_utf8(id_bytes).map_err(|_| EmbFileError::BadId { path: p(), record })?;
        r.read_exact(&mut value_bytes).map_err(|_| truncated(record))?;
        let values: Vec<f32> = value_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbFileError::NonFinite { path: p(), record, id });
        }
        out.push(Embedding::new_unchecked(id, values));
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(EmbFileError::TrailingBytes { path: p(), count }),
        Err(source) => return Err(EmbFileError::Io { path: p(), source }),
    }
    Ok((dim, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        let e = Embedding::new("ab", vec![1.0, -2.5]).unwrap();
        write_embeddings(&path, 2, &[e]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"SKREMB1\0".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        std::fs::write(&path, b"NOTEMB\0\0rest").unwrap();
        assert!(matches!(read_embeddings(&path), Err(EmbFileError::BadMagic { .. })));

        let e = Embedding::new("x", vec![1.0, 2.0, 3.0]).unwrap();
        write_embeddings(&path, 3, &[e.clone(), e]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(EmbFileError::Truncated { record: 1, .. })
        ));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        write_embeddings(&path, 1, &[Embedding::new("x", vec![1.0]).unwrap()]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(EmbFileError::TrailingBytes { .. })));
    }

    #[test]
    fn write_rejects_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        let a = Embedding::new("a", vec![1.0]).unwrap();
        let b = Embedding::new("b", vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            write_embeddings(&dir.path().join("e.emb"), 1, &[a, b]),
            Err(EmbFileError::DimMismatch { .. })
        ));
    }
}
