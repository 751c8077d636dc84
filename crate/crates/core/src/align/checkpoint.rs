//! Checkpoint directories.
//!
//! A checkpoint is a directory holding `manifest.json` (encoder configs, stage
//! history and one entry per tensor with its shape and byte offset) and
//! `tensors.bin`: the ASCII magic `CMP1` followed by little-endian `f32`
//! values. Offsets are absolute positions in `tensors.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContrastiveConfig, Modality};
use crate::error::{Error, Result};
use crate::nn::{check_params, init_params, EncoderConfig, InputKind, ParamSet, Tensor, TEMPERATURE_PARAM};
use crate::rng::{derive_seed, substream, Stream};

const BLOB_MAGIC: &[u8; 4] = b"CMP1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";
const FORMAT: &str = "clamp-kit-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfigs {
    pub text: EncoderConfig,
    pub symbolic: EncoderConfig,
    pub audio: EncoderConfig,
}

impl EncoderConfigs {
    pub fn desk() -> Self {
        EncoderConfigs {
            text: EncoderConfig::desk(InputKind::TextBytes),
            symbolic: EncoderConfig::desk(InputKind::SymbolicPatches),
            audio: EncoderConfig::desk(InputKind::AudioVectors),
        }
    }

    /// All three encoders read sequences of `input_dim`-wide vectors, as used
    /// for synthetic corpora.
    pub fn vectors(input_dim: usize, max_positions: usize) -> Self {
        let cfg = EncoderConfig {
            input_dim,
            max_positions,
            ..EncoderConfig::desk(InputKind::AudioVectors)
        };
        EncoderConfigs {
            text: cfg.clone(),
            symbolic: cfg.clone(),
            audio: cfg,
        }
    }

    pub fn get(&self, m: Modality) -> &EncoderConfig {
        match m {
            Modality::Text => &self.text,
            Modality::Symbolic => &self.symbolic,
            Modality::Audio => &self.audio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.symbolic.validate()?;
        self.audio.validate()?;
        let d = self.text.out_dim;
        if self.symbolic.out_dim != d || self.audio.out_dim != d {
            return Err(Error::DimensionMismatch(
                "all encoders must share one output dimension".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub music_modality: Modality,
    pub text_trainable: bool,
    pub steps: usize,
    /// Global step count at the end of this stage.
    pub total_steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub temperature: f64,
    pub text_digest_before: String,
    pub text_digest_after: String,
}

/// Parameters of all three encoders plus the training history.
///
/// Each music encoder carries its own learnable log-temperature for its
/// pairing with text, so freezing the text encoder freezes nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSet {
    pub configs: EncoderConfigs,
    pub text: ParamSet,
    pub symbolic: ParamSet,
    pub audio: ParamSet,
    pub stage_history: Vec<StageSummary>,
}

impl CheckpointSet {
    /// Fresh parameters; each encoder draws from its own seeded stream.
    pub fn init(configs: EncoderConfigs, contrastive: &ContrastiveConfig, seed: u64) -> Result<Self> {
        configs.validate()?;
        let draw = |m: Modality| -> Result<ParamSet> {
            let mut rng = substream(derive_seed(seed, &[m.index()]), Stream::Init);
            init_params(configs.get(m), &mut rng)
        };
        let mut ck = CheckpointSet {
            text: draw(Modality::Text)?,
            symbolic: draw(Modality::Symbolic)?,
            audio: draw(Modality::Audio)?,
            configs,
            stage_history: Vec::new(),
        };
        let log_tau = (contrastive.temperature_init as f32).ln();
        for m in [Modality::Symbolic, Modality::Audio] {
            ck.params_mut(m)
                .insert(TEMPERATURE_PARAM, Tensor::new(vec![1], vec![log_tau])?)?;
        }
        Ok(ck)
    }

    pub fn params(&self, m: Modality) -> &ParamSet {
        match m {
            Modality::Text => &self.text,
            Modality::Symbolic => &self.symbolic,
            Modality::Audio => &self.audio,
        }
    }

    pub fn params_mut(&mut self, m: Modality) -> &mut ParamSet {
        match m {
            Modality::Text => &mut self.text,
            Modality::Symbolic => &mut self.symbolic,
            Modality::Audio => &mut self.audio,
        }
    }

    /// Temperature used when aligning text with `music`.
    pub fn temperature(&self, music: Modality) -> Result<f64> {
        self.params(music)
            .get(TEMPERATURE_PARAM)
            .map(|t| (t.data[0] as f64).exp())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{music} encoder has no temperature")))
    }

    pub fn validate(&self) -> Result<()> {
        self.configs.validate()?;
        for m in [Modality::Text, Modality::Symbolic, Modality::Audio] {
            check_params(self.configs.get(m), self.params(m))?;
            if !self.params(m).is_finite() {
                return Err(Error::NonFinite(format!("{m} parameters are not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    model: Modality,
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    configs: EncoderConfigs,
    stage_history: Vec<StageSummary>,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(ck: &CheckpointSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = BLOB_MAGIC.to_vec();
    let mut entries = Vec::new();
    for m in [Modality::Text, Modality::Symbolic, Modality::Audio] {
        for (name, t) in ck.params(m).iter() {
            entries.push(TensorEntry {
                model: m,
                name: name.to_string(),
                shape: t.shape.clone(),
                offset: blob.len() as u64,
                len: t.numel() as u64,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        blob: BLOB.into(),
        configs: ck.configs.clone(),
        stage_history: ck.stage_history.clone(),
        tensors: entries,
    };
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<CheckpointSet> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unsupported format {:?}", manifest.format)));
    }
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() < 4 || &blob[..4] != BLOB_MAGIC {
        return Err(corrupt("tensor blob has no CMP1 magic".into()));
    }

    let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
    for e in &manifest.tensors {
        let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
        if numel != e.len {
            return Err(corrupt(format!(
                "{}/{}: shape {:?} does not hold {} values",
                e.model, e.name, e.shape, e.len
            )));
        }
        let start = e.offset as usize;
        let end = start
            .checked_add(e.len as usize * 4)
            .filter(|&end| end <= blob.len() && start >= 4)
            .ok_or_else(|| corrupt(format!("{}/{}: outside the tensor blob", e.model, e.name)))?;
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        sets[e.model.index() as usize]
            .insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)
            .map_err(|err| corrupt(err.to_string()))?;
    }
    let [text, symbolic, audio] = sets;
    let ck = CheckpointSet {
        configs: manifest.configs,
        text,
        symbolic,
        audio,
        stage_history: manifest.stage_history,
    };
    ck.validate().map_err(|e| match e {
        Error::CorruptCheckpoint(_) => e,
        other => corrupt(other.to_string()),
    })?;
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfigs {
        let mut c = EncoderConfigs::desk();
        for cfg in [&mut c.text, &mut c.symbolic, &mut c.audio] {
            cfg.hidden = 8;
            cfg.n_heads = 2;
            cfg.n_layers = 1;
            cfg.out_dim = 4;
            cfg.max_positions = 16;
            cfg.input_dim = 3;
        }
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ck = CheckpointSet::init(tiny(), &ContrastiveConfig::default(), 4).unwrap();
        save_checkpoint(&ck, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ck);
        for m in [Modality::Text, Modality::Symbolic, Modality::Audio] {
            assert_eq!(back.params(m).digest(), ck.params(m).digest());
        }
        assert!((back.temperature(Modality::Audio).unwrap() - 0.07).abs() < 1e-6);
    }

    #[test]
    fn edited_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ck = CheckpointSet::init(tiny(), &ContrastiveConfig::default(), 4).unwrap();
        save_checkpoint(&ck, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m["tensors"][3]["shape"] = serde_json::json!([2, 2, 2]);
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert_eq!(err.code(), "corrupt_checkpoint");
    }

    #[test]
    fn reshaped_tensor_with_same_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ck = CheckpointSet::init(tiny(), &ContrastiveConfig::default(), 4).unwrap();
        save_checkpoint(&ck, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        // embed.tokens is 259 x 8; 518 x 4 has the same size but the wrong shape
        m["tensors"][0]["shape"] = serde_json::json!([518, 4]);
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap_err().code(), "corrupt_checkpoint");
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ck = CheckpointSet::init(tiny(), &ContrastiveConfig::default(), 4).unwrap();
        save_checkpoint(&ck, dir.path()).unwrap();
        let blob = dir.path().join(BLOB);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap_err().code(), "corrupt_checkpoint");
    }

    #[test]
    fn output_dims_must_agree() {
        let mut c = tiny();
        c.audio.out_dim = 5;
        assert!(CheckpointSet::init(c, &ContrastiveConfig::default(), 0).is_err());
    }
}
