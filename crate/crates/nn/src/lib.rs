//! Multi-task encoder/decoder cascade.
//!
//! One encoder reads the input characters; decoders for the enabled tasks
//! run in a fixed order and each attends over the encoder states and the
//! hidden states of every earlier decoder. Everything is computed in f64
//! on the CPU with a small reverse-mode tape ([`graph`]).

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod params;
pub mod predict;
pub mod tensor;
pub mod train;

pub use checkpoint::CheckpointError;
pub use config::{Backbone, ConfigError, InitScheme, ModelConfig};
pub use forward::{argmax, Batch, CascadeOutput, DecodeMode, TargetBatch, TaskOutput};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::{compute_global_loss, LossBundle};
pub use model::{Cascade, ModelError, Source};
pub use params::{xavier_limit, ParamId, ParamKind, ParamStore};
pub use predict::{align_units, predict_sentence, predict_sentences, SentencePrediction};
pub use tensor::Tensor;
pub use train::{evaluate_loss, train, Control, EpochRecord, TrainError, TrainLog, TrainSchedule};
