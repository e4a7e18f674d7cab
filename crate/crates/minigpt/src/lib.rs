//! A character-level GPT built on a small reverse-mode autodiff engine.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use autograd::{Gradients, Tape, Var};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use dataset::{Batch, Split, TokenStore};
pub use error::{CheckpointError, Error, Result};
pub use model::{ForwardOutput, Gpt, GptParams, ModelConfig, Recorded};
pub use optim::{AdamW, AdamWConfig, LrSchedule, ParamGroups, ScheduleConfig};
pub use rng::RandomState;
pub use sampler::SampleConfig;
pub use tensor::{IdTensor, Scalar, Tensor};
pub use tokenizer::Vocabulary;
#[cfg(feature = "mimalloc")]
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub use trainer::{BestCheckpoint, CheckpointPolicy, LossRecord, TrainConfig, TrainObserver, TrainOutcome};
