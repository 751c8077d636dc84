use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::align::{EncoderConfigs, Modality, PairedCorpus, TextSource, TrainingData};
use crate::audiofeat::load_feature_file;
use crate::corpus::{rows_as_sequences, MetadataRecord, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::eval::{prepare_input, EmbeddingStore, Item, ItemFailure, RawItem};
use crate::nn::{EncoderConfig, EncoderInput, InputKind, Tensor};
use crate::symbolic::{segment_abc, segment_mtf};

/// Views written by `gen-synth`, as `<split>_<view>.cme`.
pub const SYNTH_VIEWS: [&str; 3] = ["text", "a", "b"];
pub const SYNTH_MANIFEST: &str = "synth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_heldout: usize,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub noise: f64,
}

pub fn synth_view_path(dir: &Path, split: &str, view: &str) -> PathBuf {
    dir.join(format!("{split}_{view}.cme"))
}

/// Writes the train and held-out views of `corpus`; the first `n_train` items
/// form the training split.
pub fn write_synthetic(dir: &Path, corpus: &SyntheticCorpus, manifest: &SynthManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let views = [&corpus.text_views, &corpus.mod_a_views, &corpus.mod_b_views];
    for (split, range) in [("train", 0..manifest.n_train), ("heldout", manifest.n_train..corpus.n)] {
        for (name, view) in SYNTH_VIEWS.iter().zip(views) {
            let ids = corpus.pair_ids[range.clone()].to_vec();
            let d = view.cols();
            let data = view.data[range.start * d..range.end * d].to_vec();
            EmbeddingStore::new(ids, d, data)?.write(&synth_view_path(dir, split, name))?;
        }
    }
    let path = dir.join(SYNTH_MANIFEST);
    let json = serde_json::to_string_pretty(manifest)? + "\n";
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn store_sequences(store: &EmbeddingStore, clip_dim: usize) -> Result<Vec<EncoderInput>> {
    let t = Tensor::new(vec![store.len(), store.dim()], store.values().to_vec())?;
    rows_as_sequences(&t, clip_dim, 0..store.len())
}

fn apply_encoder_keys(cfg: &mut EncoderConfig, rc: &RunConfig) {
    cfg.n_layers = rc.usize("encoder.n_layers");
    cfg.hidden = rc.usize("encoder.hidden");
    cfg.n_heads = rc.usize("encoder.n_heads");
    cfg.ff_mult = rc.usize("encoder.ff_mult");
    cfg.out_dim = rc.usize("encoder.out_dim");
    cfg.positional = rc.bool("encoder.positional");
}

/// Encoder shapes for the configured data kind.
pub fn encoder_configs(rc: &RunConfig, synthetic_obs_dim: Option<usize>) -> Result<EncoderConfigs> {
    let mut cfgs = match rc.str("data.kind") {
        "synthetic" => {
            let clip = rc.usize("data.clip_dim");
            let obs = synthetic_obs_dim.expect("synthetic data loaded");
            if clip == 0 || obs % clip != 0 {
                return Err(Error::Config(format!(
                    "data.clip_dim {clip} does not divide the observed dimension {obs}"
                )));
            }
            EncoderConfigs::vectors(clip, obs / clip)
        }
        "records" => {
            let mut c = EncoderConfigs::desk();
            c.audio.input_dim = rc.usize("data.audio_dim");
            c
        }
        other => return Err(Error::Config(format!("unknown data.kind {other:?} (expected synthetic or records)"))),
    };
    for c in [&mut cfgs.text, &mut cfgs.symbolic, &mut cfgs.audio] {
        apply_encoder_keys(c, rc);
    }
    cfgs.validate()?;
    Ok(cfgs)
}

/// Loads training pairs; returns them with the matching encoder configs.
pub fn load_training_data(rc: &RunConfig) -> Result<(TrainingData, EncoderConfigs)> {
    match rc.str("data.kind") {
        "synthetic" => load_synthetic(rc),
        "records" => {
            let cfgs = encoder_configs(rc, None)?;
            Ok((load_records(rc, &cfgs)?, cfgs))
        }
        other => Err(Error::Config(format!("unknown data.kind {other:?} (expected synthetic or records)"))),
    }
}

fn load_synthetic(rc: &RunConfig) -> Result<(TrainingData, EncoderConfigs)> {
    let dir = rc.path("data.dir")?;
    let split = rc.str("data.split");
    let clip = rc.usize("data.clip_dim");
    let [text, a, b] = SYNTH_VIEWS.map(|v| EmbeddingStore::read(&synth_view_path(&dir, split, v)));
    let (text, a, b) = (text?, a?, b?);
    if text.ids() != a.ids() || text.ids() != b.ids() {
        return Err(Error::InvalidArgument(format!("views in {} list different ids", dir.display())));
    }
    let cfgs = encoder_configs(rc, Some(text.dim()))?;
    let ids = text.ids().to_vec();
    let text_in: Vec<TextSource> = store_sequences(&text, clip)?.into_iter().map(TextSource::Input).collect();
    let data = TrainingData {
        symbolic: Some(PairedCorpus::new(ids.clone(), text_in.clone(), store_sequences(&a, clip)?)?),
        audio: Some(PairedCorpus::new(ids, text_in, store_sequences(&b, clip)?)?),
    };
    Ok((data, cfgs))
}

#[derive(Debug, Clone, Deserialize)]
struct IdRecord {
    id: String,
    #[serde(flatten)]
    record: MetadataRecord,
}

fn read_id_records(path: &Path) -> Result<Vec<IdRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidRecord(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn music_file(dir: &Path, id: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.is_file())
}

fn load_records(rc: &RunConfig, cfgs: &EncoderConfigs) -> Result<TrainingData> {
    let records = read_id_records(&rc.path("data.records")?)?;
    let mut data = TrainingData::default();
    for (key, modality, exts) in [
        ("data.symbolic_dir", Modality::Symbolic, &["abc", "mtf"][..]),
        ("data.audio_dir", Modality::Audio, &["cmf"][..]),
    ] {
        let Some(dir) = rc.opt_path(key) else { continue };
        let (mut ids, mut text, mut music) = (Vec::new(), Vec::new(), Vec::new());
        for r in &records {
            if let Err(e) = r.record.validate() {
                warn!("record {:?} skipped: {e}", r.id);
                continue;
            }
            let Some(path) = music_file(&dir, &r.id, exts) else {
                warn!("no {modality} file for {:?}", r.id);
                continue;
            };
            match load_music_item(&path).and_then(|raw| prepare_input(&raw, cfgs.get(modality))) {
                Ok(input) => {
                    ids.push(r.id.clone());
                    text.push(TextSource::Record(r.record.clone()));
                    music.push(input);
                }
                Err(e) => warn!("{} skipped: {e}", path.display()),
            }
        }
        let corpus = PairedCorpus::new(ids, text, music)?;
        match modality {
            Modality::Symbolic => data.symbolic = Some(corpus),
            _ => data.audio = Some(corpus),
        }
    }
    Ok(data)
}

fn load_music_item(path: &Path) -> Result<RawItem> {
    let read = || fs::read_to_string(path).map_err(|e| Error::io(path, e));
    match path.extension().and_then(|e| e.to_str()) {
        Some("abc") => {
            let s = read()?;
            segment_abc(&s)?;
            Ok(RawItem::Abc(s))
        }
        Some("mtf") => {
            let s = read()?;
            segment_mtf(&s)?;
            Ok(RawItem::Mtf(s))
        }
        Some("txt") => Ok(RawItem::Text(read()?)),
        Some("cmf") => Ok(RawItem::Features(load_feature_file(path)?)),
        _ => Err(Error::InvalidArgument(format!("unsupported file type {}", path.display()))),
    }
}

/// Items to embed from `input`: a `.cme` file of raw vectors, a `.jsonl` file
/// of records, or a directory of `.abc`, `.mtf`, `.cmf` and `.txt` files.
/// Items that cannot be read are returned as failures.
pub fn load_embed_items(input: &Path, cfg: &EncoderConfig) -> Result<(Vec<Item>, Vec<ItemFailure>)> {
    let mut failures = Vec::new();
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(input, err)))
            .collect::<Result<_>>()?;
        paths.retain(|p| p.is_file());
        paths.sort();
        let mut items = Vec::new();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            match load_music_item(&p) {
                Ok(raw) => items.push(Item::new(id, raw)),
                Err(e) => failures.push(ItemFailure {
                    id,
                    code: e.code().into(),
                    message: e.to_string(),
                }),
            }
        }
        return Ok((items, failures));
    }
    match input.extension().and_then(|e| e.to_str()) {
        Some("cme") => {
            if cfg.input_kind != InputKind::AudioVectors {
                return Err(Error::Config(format!(
                    "{} holds vectors but the encoder reads {:?}",
                    input.display(),
                    cfg.input_kind
                )));
            }
            let store = EmbeddingStore::read(input)?;
            let seqs = store_sequences(&store, cfg.input_dim)?;
            let items = store
                .ids()
                .iter()
                .zip(seqs)
                .map(|(id, s)| Item::new(id.clone(), RawItem::Input(s)))
                .collect();
            Ok((items, failures))
        }
        Some("jsonl") => {
            let items = read_id_records(input)?
                .into_iter()
                .map(|r| Item::new(r.id, RawItem::Record(r.record)))
                .collect();
            Ok((items, failures))
        }
        _ => Err(Error::Config(format!(
            "cannot embed {}: expected a .cme file, a .jsonl file or a directory",
            input.display()
        ))),
    }
}
