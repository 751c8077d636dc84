//! Precomputed audio clip features.
//!
//! Each 5-second clip is reduced to one vector by averaging the extractor's
//! layers and frames; a track is a sequence of at most 128 such vectors.
//!
//! `.cmf` layout (little-endian): `"CMF1"`, `rows: u32`, `cols: u32`, then
//! `rows * cols` IEEE-754 `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Matrix, Tensor};

pub const CLIP_SECONDS: u32 = 5;
pub const MAX_CLIPS: usize = 128;
const MAGIC: &[u8; 4] = b"CMF1";

/// Extractor output for one clip, `layers × frames × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawClipFeatures {
    pub layers: usize,
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl RawClipFeatures {
    pub fn new(layers: usize, frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::InvalidArgument("clip feature dims must be >= 1".into()));
        }
        if values.len() != layers * frames * dim {
            return Err(Error::ShapeMismatch(format!(
                "{layers}x{frames}x{dim} clip needs {} values, got {}",
                layers * frames * dim,
                values.len()
            )));
        }
        Ok(RawClipFeatures {
            layers,
            frames,
            dim,
            values,
        })
    }
}

/// One row per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl AudioFeatureSequence {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} sequence needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio features contain NaN or inf".into()));
        }
        Ok(AudioFeatureSequence { rows, cols, values })
    }

    pub fn from_clips(clips: &[Vec<f32>]) -> Result<Self> {
        let cols = clips.first().map_or(0, Vec::len);
        if clips.iter().any(|c| c.len() != cols) {
            return Err(Error::ShapeMismatch("clips differ in dimension".into()));
        }
        Self::new(clips.len(), cols, clips.concat())
    }

    pub fn clip(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn duration_seconds(&self) -> u32 {
        self.rows as u32 * CLIP_SECONDS
    }

    /// Keeps the first `MAX_CLIPS` rows.
    pub fn truncated(mut self) -> Self {
        if self.rows > MAX_CLIPS {
            self.rows = MAX_CLIPS;
            self.values.truncate(MAX_CLIPS * self.cols);
        }
        self
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.values.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.rows, self.cols],
            data: self.values.clone(),
        }
    }
}

/// Mean over the layer and frame axes.
pub fn aggregate_clip(raw: &RawClipFeatures) -> Result<Vec<f32>> {
    if raw.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clip features contain NaN or inf".into()));
    }
    let mut acc = vec![0.0f64; raw.dim];
    for frame in raw.values.chunks_exact(raw.dim) {
        for (a, &v) in acc.iter_mut().zip(frame) {
            *a += v as f64;
        }
    }
    let count = (raw.layers * raw.frames) as f64;
    Ok(acc.into_iter().map(|a| (a / count) as f32).collect())
}

pub fn encode_feature_file(seq: &AudioFeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * seq.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(seq.rows as u32).to_le_bytes());
    out.extend_from_slice(&(seq.cols as u32).to_le_bytes());
    for v in &seq.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<AudioFeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotAFeatureFile);
    }
    if bytes.len() < 12 {
        return Err(Error::CorruptFile("header shorter than 12 bytes".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::CorruptFile("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::CorruptFile(format!(
            "{rows}x{cols} needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(AudioFeatureSequence::new(rows, cols, values)?.truncated())
}

pub fn load_feature_file(path: &Path) -> Result<AudioFeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes)
}

pub fn write_feature_file(seq: &AudioFeatureSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_feature_file(seq)).map_err(|e| Error::io(path, e))
}
