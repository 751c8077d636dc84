use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::Modality;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CME1";

/// Named embeddings, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    /// Not persisted by the store file format.
    pub modality: Option<Modality>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} ids with dim {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("embedding store values must be finite".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.len() > u16::MAX as usize {
                return Err(Error::InvalidArgument(format!("id of {} bytes is too long", id.len())));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate id {id:?}")));
            }
        }
        Ok(EmbeddingStore {
            ids,
            dim,
            data,
            index,
            modality: None,
        })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("rows of different lengths".into()));
        }
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(ids, dim, data)
    }

    pub fn with_modality(mut self, m: Modality) -> Self {
        self.modality = Some(m);
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn encode(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| 2 + s.len()).sum();
        let mut out = Vec::with_capacity(12 + id_bytes + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::NotAStoreFile);
        }
        let mut r = Reader { bytes, pos: 4 };
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw)
                .map_err(|_| Error::CorruptFile("id is not valid UTF-8".into()))?;
            ids.push(id.to_string());
        }
        let payload = r.rest();
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptFile("declared size overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::CorruptFile(format!(
                "expected {expected} payload bytes for {count}x{dim}, found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(ids, dim, data).map_err(|e| Error::CorruptFile(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptFile("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Ground-truth partner in the gallery for each query id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pairing(pub BTreeMap<String, String>);

impl Pairing {
    /// Pairs every query with the gallery item of the same id, where one exists.
    pub fn by_id(queries: &EmbeddingStore, gallery: &EmbeddingStore) -> Self {
        Pairing(
            queries
                .ids()
                .iter()
                .filter(|id| gallery.index_of(id).is_some())
                .map(|id| (id.clone(), id.clone()))
                .collect(),
        )
    }

    /// Reads a JSON object mapping query ids to gallery ids.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, query: &str) -> Option<&str> {
        self.0.get(query).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, gallery: &EmbeddingStore) -> Result<()> {
        for (q, g) in &self.0 {
            if gallery.index_of(g).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "query {q:?} is paired with {g:?}, which is not in the gallery"
                )));
            }
        }
        Ok(())
    }
}
