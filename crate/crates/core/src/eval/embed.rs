use std::collections::HashSet;
use std::path::PathBuf;

use log::warn;
use serde::Serialize;

use super::parallel::par_map;
use super::store::EmbeddingStore;
use crate::align::{CheckpointSet, Modality};
use crate::audiofeat::{load_feature_file, AudioFeatureSequence};
use crate::corpus::{compose_text_input, ComposeMode, MetadataRecord};
use crate::error::{Error, Result};
use crate::nn::{dot, tokenize_text, EncoderConfig, EncoderInput, EncoderWeights, InputKind};
use crate::symbolic::{segment_abc, segment_mtf, truncate_patches, SegmentLimits};

/// An item before parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum RawItem {
    Text(String),
    /// Embedded with every non-empty field.
    Record(MetadataRecord),
    Abc(String),
    Mtf(String),
    FeatureFile(PathBuf),
    Features(AudioFeatureSequence),
    Input(EncoderInput),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub raw: RawItem,
}

impl Item {
    pub fn new(id: impl Into<String>, raw: RawItem) -> Self {
        Item { id: id.into(), raw }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemFailure {
    pub id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutcome {
    pub store: EmbeddingStore,
    pub failures: Vec<ItemFailure>,
}

fn kind_mismatch(raw: &RawItem, cfg: &EncoderConfig) -> Error {
    let what = match raw {
        RawItem::Text(_) | RawItem::Record(_) => "text",
        RawItem::Abc(_) | RawItem::Mtf(_) => "symbolic",
        RawItem::FeatureFile(_) | RawItem::Features(_) => "audio",
        RawItem::Input(_) => "prepared",
    };
    Error::ShapeMismatch(format!("{what} item for a {:?} encoder", cfg.input_kind))
}

/// Parses and truncates a raw item to fit `cfg`.
pub fn prepare_input(raw: &RawItem, cfg: &EncoderConfig) -> Result<EncoderInput> {
    let limits = SegmentLimits {
        max_patches: SegmentLimits::default().max_patches.min(cfg.max_positions),
        ..SegmentLimits::default()
    };
    let audio = |seq: AudioFeatureSequence| {
        let mut m = seq.truncated().to_matrix();
        if m.rows > cfg.max_positions {
            m.rows = cfg.max_positions;
            m.data.truncate(m.rows * m.cols);
        }
        EncoderInput::Vectors(m)
    };
    match (cfg.input_kind, raw) {
        (InputKind::TextBytes, RawItem::Text(s)) => Ok(EncoderInput::Tokens(tokenize_text(s, cfg.max_positions))),
        (InputKind::TextBytes, RawItem::Record(r)) => {
            let t = compose_text_input(r, 0, ComposeMode::All)?;
            Ok(EncoderInput::Tokens(tokenize_text(&t.text, cfg.max_positions)))
        }
        (InputKind::SymbolicPatches, RawItem::Abc(s)) => {
            Ok(EncoderInput::Patches(truncate_patches(&segment_abc(s)?, &limits)))
        }
        (InputKind::SymbolicPatches, RawItem::Mtf(s)) => {
            Ok(EncoderInput::Patches(truncate_patches(&segment_mtf(s)?, &limits)))
        }
        (InputKind::AudioVectors, RawItem::FeatureFile(p)) => Ok(audio(load_feature_file(p)?)),
        (InputKind::AudioVectors, RawItem::Features(f)) => Ok(audio(f.clone())),
        (_, RawItem::Input(input)) => Ok(input.clone()),
        _ => Err(kind_mismatch(raw, cfg)),
    }
}

/// Embeds `items` with the `modality` encoder of `ck`. Items that fail to
/// parse or encode are reported and left out of the store. With `normalize`
/// every stored vector has unit length.
pub fn embed_corpus(ck: &CheckpointSet, modality: Modality, items: &[Item], normalize: bool) -> Result<EmbedOutcome> {
    let cfg = ck.configs.get(modality);
    let weights = EncoderWeights::new(cfg, ck.params(modality))?;
    let results = par_map(items, |_, item| -> Result<Vec<f64>> {
        let input = prepare_input(&item.raw, cfg)?;
        let mut v = weights.embed(&input)?;
        if normalize {
            let n = dot(&v, &v).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::NonFinite("embedding has zero or non-finite norm".into()));
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(v)
    });
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut failures = Vec::new();
    let mut seen = HashSet::new();
    for (item, res) in items.iter().zip(results) {
        let res = res.and_then(|v| {
            if seen.insert(item.id.clone()) {
                Ok(v)
            } else {
                Err(Error::InvalidArgument(format!("duplicate id {:?}", item.id)))
            }
        });
        match res {
            Ok(v) => {
                ids.push(item.id.clone());
                data.extend(v.into_iter().map(|x| x as f32));
            }
            Err(e) => {
                warn!("item {:?} skipped: {e}", item.id);
                failures.push(ItemFailure {
                    id: item.id.clone(),
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let store = EmbeddingStore::new(ids, cfg.out_dim, data)?.with_modality(modality);
    Ok(EmbedOutcome { store, failures })
}
