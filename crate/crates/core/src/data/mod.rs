//! C-MAPSS ingestion, operating-condition clustering, per-condition z-scoring
//! and sliding windows.

pub mod artifact;
mod cmapss;
mod condition;
pub mod synthetic;
mod window;

pub use artifact::{Split, WindowedDataset};
pub use cmapss::{
    dataset_files, load_dataset, load_trajectories, load_truth, parse_cmapss, parse_rul_truth, write_cmapss, Dataset,
    RawTrajectory, Row,
};
pub use condition::{
    cluster_conditions, cluster_conditions_with, kmeans, nearest, ConditionModel, ConditionStats, KMeans,
    KMeansOptions, NormalizedTrajectory, Point, CONSTANT_STD,
};
pub use window::{
    fill_window, piecewise_rul, window_count, window_split, Labels, WindowRef, WindowSet, WindowedSample,
};

pub const SETTINGS: usize = 3;
pub const SENSORS: usize = 21;
/// Model input channels per cycle: the settings followed by the sensors.
pub const CHANNELS: usize = SETTINGS + SENSORS;
