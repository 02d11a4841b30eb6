//! Ground-penetrating-radar odometry toolkit.
//!
//! * [`preprocess`]: bandpass, gain, dewow and wavelet denoising of A-scans,
//!   and distance-uniform B-scan assembly.
//! * [`autonn`]: a small reverse-mode autodiff engine with the layers the
//!   network needs.
//! * [`odomnet`]: the two-frame difference/similarity distance regressor.
//! * [`datagen`]: synthetic scatterer scenes, labelled B-scan pairs and the
//!   on-disk trajectory layout.
//! * [`trainer`]: training loop, relative-distance evaluation and ablations.
//! * [`fusion`]: planar factor-graph odometry with IMU preintegration,
//!   wheel speed and radar distance factors, plus trajectory metrics.

pub mod autonn;
pub mod datagen;
pub mod fusion;
pub mod odomnet;
pub mod par;
pub mod preprocess;
pub mod trainer;
