//! Dense math, reverse-mode autodiff, the transformer encoder, AdamW and the
//! learning-rate schedule.

mod encoder;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;
mod tokenize;

pub use encoder::{check_params, init_params, EncoderConfig, EncoderInput, EncoderWeights, InputKind};
pub use gradcheck::grad_check;
pub use optim::{adamw_step, lr_at, AdamState, TrainConfig, TEMPERATURE_PARAM};
pub use params::ParamSet;
pub use tape::{NodeId, Tape};
pub use tensor::{dot, l2_norm, Matrix, Tensor};
pub use tokenize::{tokenize_text, BOS, EOS, PAD, VOCAB_SIZE};
