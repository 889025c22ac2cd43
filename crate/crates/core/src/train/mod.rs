//! Synthetic corpus, optimizer, checkpoints, the training loop and the hue
//! evaluation.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{parse_train_config, read_train_config};
pub use corpus::{generate_corpus, read_corpus, write_corpus, CorpusSample, Palette, SyntheticCorpusSpec};
pub use eval::{eval_hue_shift, gap_closure, hue_shift_ratios};
pub use trainer::{train_step, TrainConfig, Trainer};
