//! Corpus ingestion, batching, the training loss, the Noam/Adam optimizer,
//! checkpoints and a synthetic corpus generator.

pub mod batch;
pub mod checkpoint;
pub mod corpus;
pub mod manifest;
pub mod schedule;
pub mod train;

pub use batch::{collate, collate_padded, forward_batch, loss_graph, loss_total, Batch, LossBreakdown, LossVars};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{fitted_slope, generate_synthetic_corpus, generate_utterances, Contour, CorpusSpec};
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use schedule::{noam_lr, optimizer_step, AdamState, TrainingSchedule};
pub use train::{resume, train, Corpus, LossRow, TrainConfig, TrainOutcome, Trainer};
