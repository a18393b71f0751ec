//! Synthetic scenes, the training loop and the split-mode comparison.

pub mod experiment;
pub mod synth;
pub mod train;

pub use experiment::{compare_experiment, Comparison, ComparisonRow, ExperimentConfig, TargetRule};
pub use synth::{init_scene, synth_scene, SynthData, BACKGROUND};
pub use train::{desk_config, l1_loss, train, MetricsLog, RunConfig, Schedule, SplitMode, TrainOutput};
