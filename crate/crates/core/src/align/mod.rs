//! Contrastive alignment: the InfoNCE objective, stage plans, the multi-stage
//! trainer with its freeze contract, and checkpoints.

mod checkpoint;
mod infonce;
mod plan;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointSet, EncoderConfigs, StageSummary};
pub use infonce::{info_nce, ContrastiveBatch, ContrastiveConfig, InfoNceOutput, Similarity};
pub use plan::{build_stage_plan, Stage, StagePlan, Variant};
pub use trainer::{
    evaluate_batch, run_training, run_training_from, run_training_observed, EpochControl, EpochEnd, BatchSampler, BatchEval, PairedCorpus,
    StageReport, TextSource, TrainReport, TrainingData, TEMPERATURE_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Symbolic,
    Audio,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Symbolic => "symbolic",
            Modality::Audio => "audio",
        }
    }

    fn index(self) -> u64 {
        match self {
            Modality::Text => 0,
            Modality::Symbolic => 1,
            Modality::Audio => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "symbolic" => Ok(Modality::Symbolic),
            "audio" => Ok(Modality::Audio),
            other => Err(Error::Config(format!(
                "unknown modality {other:?} (expected text, symbolic or audio)"
            ))),
        }
    }
}
