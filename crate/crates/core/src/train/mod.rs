//! Training loop, optimizer, schedule and run artifacts.

mod config;
mod data;
mod optim;
mod step;

pub use config::{ExperimentConfig, TrainConfig};
pub use data::{
    experiment_windows, prepare, read_dataset, synthetic_split, volume_to_sample, write_dataset, PreparedSample,
    DATASET_ANNOTATIONS_FILE, DATASET_VOLUMES_DIR,
};
pub use optim::{clip_grad_norm, lr_schedule, Sgd};
pub use step::{
    batch_gradients, load_checkpoint, predict, read_loss_trace, save_checkpoint, train_step, write_loss_trace,
    LossRecord, Trainer, LOSS_TRACE_HEADER,
};
