//! Synthetic point-scatterer GPR simulation, labelled B-scan pairs, and
//! the on-disk trajectory layout.

pub mod dataset;
pub mod pairs;
pub mod record;
pub mod scene;
pub mod split;

pub use dataset::{generate_dataset, load_dataset, save_dataset, trajectory_name, Dataset, DatasetConfig};
pub use pairs::{derive_seed, generate_pairs, make_pair, sample_motions, MotionConfig, OdomPair, PairConfig};
pub use record::{
    load_trajectories, load_trajectory, write_trajectory, DistanceSample, GprTrace, ImuSample, PositionSample,
    TrajectoryRecord, WheelSample,
};
pub use scene::{clean_trace, ricker, simulate_ascan, simulate_ascan_with, Scatterer, Scene, SceneConfig, TraceGeometry};
pub use split::{split, SplitSpec, Tagged};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("motion step range [{min}, {max}] m must satisfy 0 <= min <= max < {limit} m (half a B-scan)")]
    MotionRange { min: f64, max: f64, limit: f64 },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{file}: timestamps not strictly increasing at data row {row}")]
    NonMonotone { file: String, row: usize },
    #[error("invalid record: {0}")]
    Record(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
}
