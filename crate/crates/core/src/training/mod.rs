//! Paired SGD training under a controlled mini-batch noise schedule.

mod schedule;
mod trainer;

pub use schedule::{derive_seed, NoiseMode, NoiseSchedule, ALIGNMENT_RULE};
pub use trainer::{train_pair, train_single, MetricRow, PairRun, RunRecord, TrainConfig};
