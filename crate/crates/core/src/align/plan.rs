use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Modality;
use crate::error::{Error, Result};

/// Training orders: `sa` aligns text with symbolic music first, then audio
/// with the text encoder frozen; `as` is the reverse; four-stage variants
/// return to the first modality; `_c2` variants start from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    As,
    Sa,
    SaC2,
    Assa,
    Saas,
    SaasC2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::As,
        Variant::Sa,
        Variant::SaC2,
        Variant::Assa,
        Variant::Saas,
        Variant::SaasC2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::As => "as",
            Variant::Sa => "sa",
            Variant::SaC2 => "sa_c2",
            Variant::Assa => "assa",
            Variant::Saas => "saas",
            Variant::SaasC2 => "saas_c2",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Variant::SaC2 | Variant::SaasC2)
    }

    fn schedule(self) -> &'static [(Modality, bool)] {
        use Modality::{Audio, Symbolic};
        match self {
            Variant::Sa | Variant::SaC2 => &[(Symbolic, true), (Audio, false)],
            Variant::As => &[(Audio, true), (Symbolic, false)],
            Variant::Saas | Variant::SaasC2 => {
                &[(Symbolic, true), (Audio, false), (Audio, true), (Symbolic, false)]
            }
            Variant::Assa => &[(Audio, true), (Symbolic, false), (Symbolic, true), (Audio, false)],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; valid: {}",
                    Variant::ALL.map(Variant::name).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub music_modality: Modality,
    pub text_trainable: bool,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub init_checkpoint: Option<PathBuf>,
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("stage plan has no stages".into()));
        }
        if let Some(i) = self.stages.iter().position(|s| s.max_steps == 0) {
            return Err(Error::InvalidArgument(format!("stage {} has zero steps", i + 1)));
        }
        if self.stages.iter().any(|s| s.music_modality == Modality::Text) {
            return Err(Error::InvalidArgument(
                "each stage must name a music modality".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_stage_plan(
    variant: Variant,
    steps_per_stage: usize,
    init_checkpoint: Option<PathBuf>,
) -> Result<StagePlan> {
    if steps_per_stage == 0 {
        return Err(Error::InvalidArgument("steps_per_stage must be at least 1".into()));
    }
    if variant.needs_checkpoint() && init_checkpoint.is_none() {
        return Err(Error::InvalidArgument(format!(
            "variant {variant} starts from a checkpoint; none given"
        )));
    }
    let stages = variant
        .schedule()
        .iter()
        .map(|&(music_modality, text_trainable)| Stage {
            music_modality,
            text_trainable,
            max_steps: steps_per_stage,
        })
        .collect();
    Ok(StagePlan {
        stages,
        init_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(p: &StagePlan) -> Vec<bool> {
        p.stages.iter().map(|s| s.text_trainable).collect()
    }

    #[test]
    fn four_stage_plans_freeze_text_in_stages_two_and_four() {
        let p = build_stage_plan(Variant::Saas, 10, None).unwrap();
        assert_eq!(flags(&p), vec![true, false, true, false]);
        let mods: Vec<_> = p.stages.iter().map(|s| s.music_modality).collect();
        assert_eq!(mods, vec![Modality::Symbolic, Modality::Audio, Modality::Audio, Modality::Symbolic]);
        let p = build_stage_plan(Variant::Assa, 10, None).unwrap();
        assert_eq!(flags(&p), vec![true, false, true, false]);
        assert_eq!(p.stages[0].music_modality, Modality::Audio);
    }

    #[test]
    fn two_stage_plans() {
        let p = build_stage_plan(Variant::Sa, 3, None).unwrap();
        assert_eq!(flags(&p), vec![true, false]);
        assert_eq!(p.stages[1].music_modality, Modality::Audio);
        let p = build_stage_plan(Variant::As, 3, None).unwrap();
        assert_eq!(p.stages[1].music_modality, Modality::Symbolic);
    }

    #[test]
    fn c2_variants_need_a_checkpoint() {
        assert!(build_stage_plan(Variant::SaC2, 5, None).is_err());
        let p = build_stage_plan(Variant::SaasC2, 5, Some("ck".into())).unwrap();
        assert_eq!(p.stages, build_stage_plan(Variant::Saas, 5, None).unwrap().stages);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(build_stage_plan(Variant::Sa, 0, None).is_err());
        let mut p = build_stage_plan(Variant::Sa, 1, None).unwrap();
        p.stages[1].max_steps = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("sas".parse::<Variant>().is_err());
    }
}
