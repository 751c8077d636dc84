//! Multi-stage contrastive training.
//!
//! Stages run in order. Each stage pairs the text encoder with one music
//! encoder; when the stage freezes text, the text parameters are bitwise
//! identical before and after it. Optimiser moments start fresh every stage.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, CheckpointSet, EncoderConfigs, StageSummary};
use super::infonce::{info_nce, ContrastiveBatch, ContrastiveConfig, InfoNceOutput};
use super::plan::StagePlan;
use super::Modality;
use crate::corpus::{compose_text_input, ComposeMode, MetadataRecord};
use crate::error::{Error, Result};
use crate::nn::{
    adamw_step, lr_at, tokenize_text, AdamState, EncoderInput, EncoderWeights, Matrix, ParamSet,
    TrainConfig, TEMPERATURE_PARAM,
};
use crate::rng::{derive_seed, substream, Stream};

/// Temperature is clamped to this range after every update.
pub const TEMPERATURE_RANGE: (f64, f64) = (1e-3, 100.0);

/// Where the text side of a pair comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TextSource {
    /// A ready encoder input, used as is.
    Input(EncoderInput),
    /// A metadata record; a fresh field subset is drawn each time it is used.
    Record(MetadataRecord),
}

/// Positive text/music pairs for one music modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCorpus {
    pub ids: Vec<String>,
    pub text: Vec<TextSource>,
    pub music: Vec<EncoderInput>,
}

impl PairedCorpus {
    pub fn new(ids: Vec<String>, text: Vec<TextSource>, music: Vec<EncoderInput>) -> Result<Self> {
        if ids.len() != text.len() || ids.len() != music.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} texts, {} music items",
                ids.len(),
                text.len(),
                music.len()
            )));
        }
        Ok(PairedCorpus { ids, text, music })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub symbolic: Option<PairedCorpus>,
    pub audio: Option<PairedCorpus>,
}

impl TrainingData {
    pub fn get(&self, m: Modality) -> Option<&PairedCorpus> {
        match m {
            Modality::Symbolic => self.symbolic.as_ref(),
            Modality::Audio => self.audio.as_ref(),
            Modality::Text => None,
        }
    }
}

/// Per-epoch shuffled batches for one stage; the last partial batch of an
/// epoch is dropped.
#[derive(Debug)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    rng: crate::rng::Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, stage_index: usize, n: usize, batch_size: usize) -> Self {
        BatchSampler {
            n,
            batch_size,
            rng: substream(derive_seed(seed, &[stage_index as u64]), Stream::DataShuffle),
            order: Vec::new(),
            cursor: usize::MAX,
            epoch: 0,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    /// Zero-based epoch of the most recent batch.
    pub fn epoch(&self) -> usize {
        self.epoch.saturating_sub(1)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor == usize::MAX || self.cursor + self.batch_size > self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub summary: StageSummary,
    pub batches_per_epoch: usize,
    /// Loss of every step, evaluated before that step's update.
    pub losses: Vec<f64>,
    /// Mean loss of each complete or partial epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

/// Loss and in-batch accuracy of a fixed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub loss: f64,
    pub top1_accuracy: f64,
}

fn text_input(
    source: &TextSource,
    max_positions: usize,
    seed: u64,
    stage: usize,
    step: usize,
    item: usize,
) -> Result<EncoderInput> {
    match source {
        TextSource::Input(input) => Ok(input.clone()),
        TextSource::Record(record) => {
            let s = derive_seed(seed, &[0x5a4d, stage as u64, step as u64, item as u64]);
            let t = compose_text_input(record, s, ComposeMode::Sample)?;
            Ok(EncoderInput::Tokens(tokenize_text(&t.text, max_positions)))
        }
    }
}

struct Forward<'a> {
    tapes: Vec<(crate::nn::Tape<'a>, usize)>,
    outputs: Matrix,
}

fn forward_batch<'a>(weights: &'a EncoderWeights, inputs: &[EncoderInput]) -> Result<Forward<'a>> {
    let mut tapes = Vec::with_capacity(inputs.len());
    let mut rows = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (tape, _, out) = weights.forward(input)?;
        rows.push(tape.value(out).data.clone());
        tapes.push((tape, out));
    }
    Ok(Forward {
        tapes,
        outputs: Matrix::from_rows(&rows)?,
    })
}

fn backward_batch(fwd: &Forward<'_>, grad_out: &Matrix, params: &ParamSet) -> Vec<Matrix> {
    let mut grads = params.zero_grads();
    for (i, (tape, out)) in fwd.tapes.iter().enumerate() {
        let seed = Matrix::from_vec(1, grad_out.cols, grad_out.row(i).to_vec()).expect("row shape");
        tape.backward(*out, seed, &mut grads);
    }
    grads
}

fn batch_inputs(
    ck: &CheckpointSet,
    corpus: &PairedCorpus,
    indices: &[usize],
    seed: u64,
    stage: usize,
    step: usize,
) -> Result<(Vec<EncoderInput>, Vec<EncoderInput>)> {
    let max_pos = ck.configs.text.max_positions;
    let text = indices
        .iter()
        .map(|&i| text_input(&corpus.text[i], max_pos, seed, stage, step, i))
        .collect::<Result<Vec<_>>>()?;
    let music = indices.iter().map(|&i| corpus.music[i].clone()).collect();
    Ok((text, music))
}

/// Evaluates the loss on one batch without updating anything. Records are
/// sampled exactly as the trainer would at (`stage`, `step`).
pub fn evaluate_batch(
    ck: &CheckpointSet,
    corpus: &PairedCorpus,
    music: Modality,
    indices: &[usize],
    contrastive: &ContrastiveConfig,
    seed: u64,
    stage: usize,
    step: usize,
) -> Result<BatchEval> {
    let (text_in, music_in) = batch_inputs(ck, corpus, indices, seed, stage, step)?;
    let tw = EncoderWeights::new(&ck.configs.text, &ck.text)?;
    let mw = EncoderWeights::new(ck.configs.get(music), ck.params(music))?;
    let t = forward_batch(&tw, &text_in)?.outputs;
    let m = forward_batch(&mw, &music_in)?.outputs;
    let out = info_nce(
        &ContrastiveBatch::new(t, m)?,
        ck.temperature(music)?,
        contrastive,
    )?;
    Ok(BatchEval {
        loss: out.loss,
        top1_accuracy: out.top1_accuracy(),
    })
}

/// Runs `plan`, starting from `plan.init_checkpoint` when set and from fresh
/// parameters otherwise.
pub fn run_training(
    plan: &StagePlan,
    data: &TrainingData,
    configs: &EncoderConfigs,
    train: &TrainConfig,
    contrastive: &ContrastiveConfig,
) -> Result<(CheckpointSet, TrainReport)> {
    let start = match &plan.init_checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.configs != *configs {
                return Err(Error::Config(format!(
                    "encoder configs of {} differ from the requested ones",
                    path.display()
                )));
            }
            ck
        }
        None => CheckpointSet::init(configs.clone(), contrastive, train.seed)?,
    };
    run_training_from(start, plan, data, train, contrastive)
}

pub fn run_training_from(
    ck: CheckpointSet,
    plan: &StagePlan,
    data: &TrainingData,
    train: &TrainConfig,
    contrastive: &ContrastiveConfig,
) -> Result<(CheckpointSet, TrainReport)> {
    run_training_observed(ck, plan, data, train, contrastive, &mut |_| EpochControl::Continue)
}

/// State at the end of a full pass over a stage's pairs.
#[derive(Debug)]
pub struct EpochEnd<'a> {
    /// Index into the plan's stages.
    pub stage_index: usize,
    /// Zero-based.
    pub epoch: usize,
    /// Steps taken so far in this stage.
    pub step: usize,
    pub mean_loss: f64,
    pub checkpoint: &'a CheckpointSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    /// Ends the current stage; the plan moves on to the next one.
    EndStage,
}

/// [`run_training_from`] with a callback after every completed epoch.
pub fn run_training_observed(
    mut ck: CheckpointSet,
    plan: &StagePlan,
    data: &TrainingData,
    train: &TrainConfig,
    contrastive: &ContrastiveConfig,
    on_epoch: &mut dyn FnMut(EpochEnd<'_>) -> EpochControl,
) -> Result<(CheckpointSet, TrainReport)> {
    plan.validate()?;
    train.validate()?;
    ck.validate()?;
    for (i, stage) in plan.stages.iter().enumerate() {
        let corpus = data.get(stage.music_modality).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "stage {} needs {} pairs; none provided",
                i + 1,
                stage.music_modality
            ))
        })?;
        if corpus.len() < train.batch_size {
            return Err(Error::InvalidArgument(format!(
                "stage {}: {} pairs is fewer than batch_size {}",
                i + 1,
                corpus.len(),
                train.batch_size
            )));
        }
    }

    let log_range = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut report = TrainReport {
        seed: train.seed,
        stages: Vec::new(),
    };
    let mut total_steps = ck.stage_history.last().map_or(0, |s| s.total_steps);

    for (stage_idx, stage) in plan.stages.iter().enumerate() {
        let music = stage.music_modality;
        let corpus = data.get(music).expect("checked above");
        let stage_no = ck.stage_history.len() + 1;
        let stage_cfg = TrainConfig {
            max_steps: stage.max_steps,
            ..train.clone()
        };

        ck.text.freeze_all(!stage.text_trainable);
        ck.params_mut(music).freeze_all(false);
        if !contrastive.learn_temperature {
            let i = ck.params(music).index_of(TEMPERATURE_PARAM).expect("validated");
            ck.params_mut(music).set_frozen(i, true);
        }
        let temp_idx = ck.params(music).index_of(TEMPERATURE_PARAM).expect("validated");
        let text_before = ck.text.digest();
        let mut text_state = AdamState::new(&ck.text);
        let mut music_state = AdamState::new(ck.params(music));
        let mut sampler = BatchSampler::new(train.seed, stage_idx, corpus.len(), train.batch_size);

        let mut losses = Vec::with_capacity(stage.max_steps);
        let mut epoch_losses: Vec<(f64, usize)> = Vec::new();

        for step in 1..=stage.max_steps {
            let indices = sampler.next_batch();
            let (text_in, music_in) =
                batch_inputs(&ck, corpus, &indices, train.seed, stage_idx, step)?;
            let tau = ck.temperature(music)?;

            let diverged = |detail: String| Error::Divergence {
                stage: stage_no,
                detail,
            };
            let (out, text_grads, mut music_grads) = {
                let tw = EncoderWeights::new(&ck.configs.text, &ck.text)?;
                let mw = EncoderWeights::new(ck.configs.get(music), ck.params(music))?;
                let t_fwd = forward_batch(&tw, &text_in)?;
                let m_fwd = forward_batch(&mw, &music_in)?;
                let out: InfoNceOutput = info_nce(
                    &ContrastiveBatch::new(t_fwd.outputs.clone(), m_fwd.outputs.clone())?,
                    tau,
                    contrastive,
                )
                .map_err(|e| match e {
                    Error::NonFinite(d) => diverged(d),
                    other => other,
                })?;
                if !out.loss.is_finite() {
                    return Err(diverged(format!("loss is {} at step {step}", out.loss)));
                }
                let music_grads = backward_batch(&m_fwd, &out.grad_music, ck.params(music));
                let text_grads = stage
                    .text_trainable
                    .then(|| backward_batch(&t_fwd, &out.grad_text, &ck.text));
                (out, text_grads, music_grads)
            };

            let lr = lr_at(step, &stage_cfg);
            music_grads[temp_idx].data[0] = out.grad_tau * tau;
            if let Some(g) = text_grads {
                adamw_step(&mut ck.text, &g, &mut text_state, step, lr, &stage_cfg)
                    .map_err(|e| diverged(e.to_string()))?;
            }
            adamw_step(ck.params_mut(music), &music_grads, &mut music_state, step, lr, &stage_cfg)
                .map_err(|e| diverged(e.to_string()))?;

            let log_tau = &mut ck.params_mut(music).tensors_mut()[temp_idx].data[0];
            *log_tau = (*log_tau as f64).clamp(log_range.0, log_range.1) as f32;

            losses.push(out.loss);
            let epoch = sampler.epoch();
            if epoch_losses.len() <= epoch {
                epoch_losses.push((0.0, 0));
            }
            epoch_losses[epoch].0 += out.loss;
            epoch_losses[epoch].1 += 1;
            total_steps += 1;

            if epoch_losses[epoch].1 == sampler.batches_per_epoch() {
                let (sum, n) = epoch_losses[epoch];
                let control = on_epoch(EpochEnd {
                    stage_index: stage_idx,
                    epoch,
                    step,
                    mean_loss: sum / n as f64,
                    checkpoint: &ck,
                });
                if control == EpochControl::EndStage {
                    break;
                }
            }
        }

        let text_after = ck.text.digest();
        if !stage.text_trainable && text_after != text_before {
            return Err(Error::InvalidArgument(format!(
                "internal: frozen text encoder changed during stage {stage_no}"
            )));
        }
        ck.text.freeze_all(false);
        ck.params_mut(music).freeze_all(false);

        let summary = StageSummary {
            stage: stage_no,
            music_modality: music,
            text_trainable: stage.text_trainable,
            steps: losses.len(),
            total_steps,
            initial_loss: losses[0],
            final_loss: *losses.last().expect("max_steps >= 1"),
            temperature: ck.temperature(music)?,
            text_digest_before: text_before,
            text_digest_after: text_after,
        };
        log::info!(
            "stage {stage_no} ({music}, text {}): loss {:.4} -> {:.4}",
            if stage.text_trainable { "trainable" } else { "frozen" },
            summary.initial_loss,
            summary.final_loss
        );
        ck.stage_history.push(summary.clone());
        report.stages.push(StageReport {
            summary,
            batches_per_epoch: sampler.batches_per_epoch(),
            losses,
            epoch_losses: epoch_losses.iter().map(|(s, n)| s / *n as f64).collect(),
        });
    }
    Ok((ck, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(3, 0, 10, 3);
        assert_eq!(s.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        assert_eq!(s.epoch(), 0);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        s.next_batch();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn sampler_is_seeded() {
        let a: Vec<_> = {
            let mut s = BatchSampler::new(9, 1, 20, 4);
            (0..6).map(|_| s.next_batch()).collect()
        };
        let b: Vec<_> = {
            let mut s = BatchSampler::new(9, 1, 20, 4);
            (0..6).map(|_| s.next_batch()).collect()
        };
        assert_eq!(a, b);
    }
}
