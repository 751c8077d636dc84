//! The `clamp-kit` command line: a flat dotted-key JSON config, `key=value`
//! overrides and one subcommand per pipeline step.

mod config;
mod data;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::align::{
    build_stage_plan, load_checkpoint, run_training, save_checkpoint, ContrastiveConfig, Modality, Similarity,
    StageReport, Variant,
};
use crate::corpus::gen_synthetic_trimodal;
use crate::error::{Error, Result};
use crate::eval::{
    embed_corpus, eval_probe, fit_linear_probe, mrr_detail, pair_cosine_stats, pca_project, random_baseline_mrr,
    top_k, EmbeddingStore, Labels, Pairing, ProbeConfig,
};
use crate::nn::{Matrix, TrainConfig};

pub use config::{nearest_key, parse_config, valid_keys, RunConfig};
pub use data::{load_embed_items, load_training_data, synth_view_path, SynthManifest, SYNTH_MANIFEST};

#[derive(Debug, Parser)]
#[command(name = "clamp-kit", version, about = "Contrastive text/music alignment toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file with flat dotted keys.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.peak_lr=5e-5`. Repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train the encoders with the configured stage plan.
    Train,
    /// Embed items with one encoder of a checkpoint.
    Embed,
    /// Top-k gallery items for each query.
    Retrieve,
    /// MRR of paired items between two stores.
    EvalRetrieval,
    /// Fit and score a linear probe on embeddings.
    EvalProbe,
    /// PCA coordinates of a store as CSV.
    Project,
    /// Write a synthetic tri-modal corpus.
    GenSynth,
}

/// One-line error for stderr.
pub fn error_json(e: &Error) -> String {
    json!({"error": e.code(), "message": e.to_string()}).to_string()
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let rc = parse_config(cli.config.as_deref(), &cli.overrides)?;
    println!("{}", rc.to_json());
    dispatch(&rc, cli.command)
}

pub fn dispatch(rc: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::Train => train(rc),
        Command::Embed => embed(rc),
        Command::Retrieve => retrieve(rc),
        Command::EvalRetrieval => eval_retrieval(rc),
        Command::EvalProbe => eval_probe_cmd(rc),
        Command::Project => project(rc),
        Command::GenSynth => gen_synth(rc),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn train_config(rc: &RunConfig) -> TrainConfig {
    let steps = rc.usize("steps_per_stage");
    TrainConfig {
        peak_lr: rc.f64("train.peak_lr"),
        warmup_steps: rc
            .int_or_auto("train.warmup_steps")
            .map_or(1000.min(steps / 10), |w| w as usize),
        batch_size: rc.usize("train.batch_size"),
        weight_decay: rc.f64("train.weight_decay"),
        beta1: rc.f64("train.beta1"),
        beta2: rc.f64("train.beta2"),
        eps_adam: rc.f64("train.eps_adam"),
        max_steps: steps,
        seed: rc.u64("seed"),
    }
}

pub fn contrastive_config(rc: &RunConfig) -> Result<ContrastiveConfig> {
    Ok(ContrastiveConfig {
        temperature_init: rc.f64("contrastive.temperature_init"),
        learn_temperature: rc.bool("contrastive.learn_temperature"),
        similarity: Similarity::parse(rc.str("contrastive.similarity"))?,
        symmetric: rc.bool("contrastive.symmetric"),
    })
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    variant: &'a str,
    seed: u64,
    steps_per_stage: usize,
    stages: &'a [StageReport],
}

fn train(rc: &RunConfig) -> Result<()> {
    let variant: Variant = rc.str("variant").parse()?;
    let ck_dir = rc.path("checkpoint")?;
    let steps = rc.usize("steps_per_stage");
    let plan = build_stage_plan(variant, steps, rc.opt_path("init_checkpoint"))?;
    let (data, mut configs) = load_training_data(rc)?;
    if let Some(init) = &plan.init_checkpoint {
        let start = load_checkpoint(init)?;
        if start.configs != configs {
            warn!("encoder settings taken from {}", init.display());
            configs = start.configs;
        }
    }
    let train = train_config(rc);
    let contrastive = contrastive_config(rc)?;
    let (ck, report) = run_training(&plan, &data, &configs, &train, &contrastive)?;
    save_checkpoint(&ck, &ck_dir)?;
    let out = rc.opt_path("out").unwrap_or_else(|| ck_dir.join("report.json"));
    write_json(
        &out,
        &TrainOutput {
            variant: variant.name(),
            seed: report.seed,
            steps_per_stage: steps,
            stages: &report.stages,
        },
    )?;
    info!("checkpoint written to {}", ck_dir.display());
    Ok(())
}

fn embed(rc: &RunConfig) -> Result<()> {
    let ck = load_checkpoint(&rc.path("checkpoint")?)?;
    let modality: Modality = rc.str("embed.modality").parse()?;
    let (items, mut failures) = load_embed_items(&rc.path("embed.input")?, ck.configs.get(modality))?;
    let normalize = contrastive_config(rc)?.similarity == Similarity::Cosine;
    let outcome = embed_corpus(&ck, modality, &items, normalize)?;
    failures.extend(outcome.failures);
    for f in &failures {
        eprintln!("{}", json!({"warning": "item_failed", "id": f.id, "error": f.code, "message": f.message}));
    }
    outcome.store.write(&rc.path("out")?)
}

fn stores(rc: &RunConfig) -> Result<(EmbeddingStore, EmbeddingStore, Pairing)> {
    let q = EmbeddingStore::read(&rc.path("eval.queries")?)?;
    let g = EmbeddingStore::read(&rc.path("eval.gallery")?)?;
    let pairing = match rc.opt_path("eval.pairs") {
        Some(p) => Pairing::read(&p)?,
        None => Pairing::by_id(&q, &g),
    };
    Ok((q, g, pairing))
}

fn retrieve(rc: &RunConfig) -> Result<()> {
    let q = EmbeddingStore::read(&rc.path("eval.queries")?)?;
    let g = EmbeddingStore::read(&rc.path("eval.gallery")?)?;
    let sim = contrastive_config(rc)?.similarity;
    let hits = top_k(&q, &g, rc.usize("eval.k"), sim)?;
    let v: Vec<Value> = hits.into_iter().map(|(query, hits)| json!({"query": query, "hits": hits})).collect();
    write_json(&rc.path("out")?, &v)
}

fn eval_retrieval(rc: &RunConfig) -> Result<()> {
    let (q, g, pairing) = stores(rc)?;
    let sim = contrastive_config(rc)?.similarity;
    let d = mrr_detail(&q, &g, &pairing, sim)?;
    let cosine = pair_cosine_stats(&q, &g, &pairing).ok();
    let report = json!({
        "mrr": d.mrr,
        "n_queries": d.n_queries,
        "n_skipped": d.n_skipped,
        "gallery_size": g.len(),
        "random_baseline": random_baseline_mrr(g.len())?,
        "similarity": rc.str("contrastive.similarity"),
        "paired_cosine": cosine,
    });
    write_json(&rc.path("out")?, &report)
}

/// Labels file: a JSON object from item id to a label, or to a list of labels
/// for multi-label tasks.
fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, Value> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|(id, v)| {
            let labels = match v {
                Value::String(s) => vec![s],
                Value::Array(a) => a
                    .into_iter()
                    .map(|x| x.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::InvalidArgument(format!("labels of {id:?} must be strings")))?,
                _ => return Err(Error::InvalidArgument(format!("labels of {id:?} must be strings"))),
            };
            Ok((id, labels))
        })
        .collect()
}

fn probe_inputs(
    store: &EmbeddingStore,
    labels: &BTreeMap<String, Vec<String>>,
    classes: &[String],
    multi: bool,
) -> Result<(Matrix, Labels)> {
    let mut rows = Vec::new();
    let mut single = Vec::new();
    let mut multi_rows = Vec::new();
    for (i, id) in store.ids().iter().enumerate() {
        let Some(ls) = labels.get(id) else {
            warn!("{id:?} has no label and is skipped");
            continue;
        };
        let idx: Vec<usize> = ls
            .iter()
            .map(|l| {
                classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {l:?} of {id:?} does not occur in training")))
            })
            .collect::<Result<_>>()?;
        if multi {
            let mut r = vec![0.0; classes.len()];
            idx.iter().for_each(|&c| r[c] = 1.0);
            multi_rows.push(r);
        } else {
            let [c] = idx[..] else {
                return Err(Error::InvalidArgument(format!("{id:?} needs exactly one label for single_label")));
            };
            single.push(c);
        }
        rows.push(store.row_f64(i));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no labelled items".into()));
    }
    let y = if multi {
        Labels::Multi(Matrix::from_rows(&multi_rows)?)
    } else {
        Labels::Single(single)
    };
    Ok((Matrix::from_rows(&rows)?, y))
}

fn eval_probe_cmd(rc: &RunConfig) -> Result<()> {
    let multi = match rc.str("probe.task") {
        "single_label" => false,
        "multi_label" => true,
        other => return Err(Error::Config(format!("unknown probe.task {other:?}"))),
    };
    let train_store = EmbeddingStore::read(&rc.path("probe.train")?)?;
    let train_labels = read_labels(&rc.path("probe.train_labels")?)?;
    let classes: Vec<String> = train_labels
        .iter()
        .filter(|(id, _)| train_store.index_of(id).is_some())
        .flat_map(|(_, ls)| ls.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (x, y) = probe_inputs(&train_store, &train_labels, &classes, multi)?;
    let cfg = ProbeConfig {
        l2: rc.f64("probe.l2"),
        max_iter: rc.usize("probe.max_iter"),
        lr: rc.f64("probe.lr"),
        seed: rc.u64("seed"),
    };
    let model = fit_linear_probe(&x, &y, classes.clone(), &cfg)?;
    let train_metrics = eval_probe(&model, &x, &y)?;
    let test_metrics = match (rc.opt_path("probe.test"), rc.opt_path("probe.test_labels")) {
        (Some(s), Some(l)) => {
            let (xt, yt) = probe_inputs(&EmbeddingStore::read(&s)?, &read_labels(&l)?, &classes, multi)?;
            Some(eval_probe(&model, &xt, &yt)?)
        }
        (None, None) => None,
        _ => return Err(Error::Config("probe.test and probe.test_labels must be given together".into())),
    };
    let report = json!({
        "classes": classes,
        "iterations": model.iterations,
        "converged": model.converged,
        "train": train_metrics,
        "test": test_metrics,
    });
    write_json(&rc.path("out")?, &report)
}

fn project(rc: &RunConfig) -> Result<()> {
    let store = EmbeddingStore::read(&rc.path("project.input")?)?;
    let p = pca_project(&store, rc.usize("project.k"))?;
    let out = rc.path("out")?;
    fs::write(&out, p.to_csv(store.ids())).map_err(|e| Error::io(&out, e))?;
    info!("explained variance ratios {:?}", p.explained_variance_ratio);
    Ok(())
}

fn gen_synth(rc: &RunConfig) -> Result<()> {
    let m = SynthManifest {
        seed: rc.u64("seed"),
        n_train: rc.usize("synth.n_train"),
        n_heldout: rc.usize("synth.n_heldout"),
        latent_dim: rc.usize("synth.latent_dim"),
        obs_dim: rc.usize("synth.obs_dim"),
        noise: rc.f64("synth.noise"),
    };
    let corpus = gen_synthetic_trimodal(m.seed, m.n_train + m.n_heldout, m.latent_dim, m.obs_dim, m.noise)?;
    data::write_synthetic(&rc.path("out")?, &corpus, &m)
}
