//! Federated training simulation: FedAvg and FedSGD with a server optimizer,
//! learning-rate schedules and personalization evaluation.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod personalize;
pub mod sweep;
pub mod synth;
pub mod text;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use model::{BigramLm, LinearRegression, Model, RegressionBatch, SequenceBatch};
pub use optim::{
    aggregate, client_update, lr_schedule, AdamState, Algorithm, ClientUpdate, ScheduleKind, ScheduleSpec,
    ServerKind, ServerOptimizer,
};
pub use personalize::{personalize_and_eval, personalize_dataset, PersonalizationReport, PersonalizationRow};
pub use sweep::{best_point, default_lr_grid, run_sweep, SweepPoint};
pub use synth::{make_synthetic_task, SynthConfig};
pub use text::{pack_sequences, tokenize_hashed, PAD};
pub use train::{
    client_batches, init_params, run_rounds, run_training, write_metrics_csv, PreparedClient, RoundLoop,
    RoundMetrics, TrainConfig, TrainRun,
};
