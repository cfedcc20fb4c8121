//! Networks, data, optimizer, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{Checkpoint, RngState};
pub use config::{TaskKind, TrainConfig};
pub use data::{synth_dataset, BatchTargets, Dataset, Targets};
pub use metrics::{MetricRow, StepRecord};
pub use model::{classifier, segmenter, ConvKind, ConvSpec, Layer, Network, Node};
pub use optim::{adam_step, lr_schedule, AdamState};
pub use train::{evaluate, resume, task_loss, train, TrainOutcome, Trainer};
