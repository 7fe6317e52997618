//! Binary embedding store.
//!
//! Little-endian layout:
//!
//! ```text
//! "EMB1" | count: u32 | dimension: u32 | count*dimension f32, row-major
//!        | count x (len: u16 | UTF-8 sample_id)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{EmbedError, Embedding};

pub const STORE_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("truncated store: need {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("store declares {expected} ids but the footer holds {found}")]
    IdCountMismatch { expected: usize, found: usize },
    #[error("{0} trailing bytes after the id footer")]
    TrailingBytes(usize),
    #[error("sample id #{0} is not valid UTF-8")]
    InvalidUtf8(usize),
    #[error("sample id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("vector {id:?} has dimension {found}, store dimension is {expected}")]
    Dimension { id: String, expected: usize, found: usize },
    #[error("vector {id:?}: {source}")]
    Vector {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// An ordered collection of equal-dimension embeddings with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Self {
        EmbeddingStore {
            dimension,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_entries(dimension: usize, entries: Vec<Embedding>) -> Result<Self, StoreError> {
        let mut store = EmbeddingStore::new(dimension);
        for e in entries {
            store.push(e)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, e: Embedding) -> Result<(), StoreError> {
        if e.dimension() != self.dimension {
            return Err(StoreError::Dimension {
                id: e.sample_id,
                expected: self.dimension,
                found: e.vector.len(),
            });
        }
        if self.index.contains_key(&e.sample_id) {
            return Err(StoreError::DuplicateId(e.sample_id));
        }
        self.index.insert(e.sample_id.clone(), self.entries.len());
        self.entries.push(e);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[Embedding] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&Embedding> {
        self.index.get(sample_id).map(|&i| &self.entries[i])
    }

    /// L2-normalizes every entry; degenerate vectors are kept as-is.
    pub fn normalize_all(&mut self) {
        for e in &mut self.entries {
            e.normalize_or_keep();
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * (self.dimension * 4 + 16));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        for e in &self.entries {
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &self.entries {
            let id = e.sample_id.as_bytes();
            let len = u16::try_from(id.len()).map_err(|_| StoreError::IdTooLong(e.sample_id.clone()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if &magic != STORE_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let count = cur.u32()? as usize;
        let dimension = cur.u32()? as usize;
        let payload = cur.take(count.saturating_mul(dimension).saturating_mul(4))?;
        let mut vectors: Vec<Vec<f32>> = payload
            .chunks_exact(4 * dimension.max(1))
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        if dimension == 0 {
            vectors = vec![Vec::new(); count];
        }

        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            if cur.remaining() == 0 {
                return Err(StoreError::IdCountMismatch {
                    expected: count,
                    found: i,
                });
            }
            let len = cur.u16()? as usize;
            let raw = cur.take(len)?;
            ids.push(String::from_utf8(raw.to_vec()).map_err(|_| StoreError::InvalidUtf8(i))?);
        }
        if cur.remaining() > 0 {
            return Err(StoreError::TrailingBytes(cur.remaining()));
        }

        let mut store = EmbeddingStore::new(dimension);
        for (id, vector) in ids.into_iter().zip(vectors) {
            let e = Embedding::new(id.clone(), vector).map_err(|source| StoreError::Vector { id, source })?;
            store.push(e)?;
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        fs::write(path, self.to_bytes()?).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EmbeddingStore::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.remaining() < n {
            return Err(StoreError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}
