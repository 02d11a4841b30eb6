//! Planar factor-graph fusion of IMU, wheel speed and GPR step distances,
//! solved with Levenberg-Marquardt over banded normal equations.

pub mod factors;
pub mod metrics;
pub mod pipeline;
pub mod preint;
pub mod sim;
pub mod solver;

pub use factors::{Factor, FactorKind, GprForm, Linearized};
pub use metrics::{associate, ate_rmse, overall_weighted};
pub use pipeline::{
    build_graph, distances_from_model, fuse_record, initial_guess, render_svg, state_times, write_svg,
    write_trajectory_csv, FusionConfig, FusionResult, NoiseConfig, Sensors,
};
pub use preint::{preintegrate_imu, ImuGrid, Preintegrated};
pub use sim::{simulate_scenario, ScenarioConfig};
pub use solver::{FactorGraph, SolveReport, SolverConfig};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("invalid fusion config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Interval(String),
    #[error("normal equations are rank-deficient; under-constrained: {}", .0.join(", "))]
    UnderConstrained(Vec<String>),
    #[error("factor {factor} links non-adjacent states {a} and {b}")]
    Structure { factor: usize, a: usize, b: usize },
    #[error("no estimated pose lies within {tol_s} s of a ground-truth timestamp")]
    NoAssociation { tol_s: f64 },
    #[error("{0}")]
    Input(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Net(#[from] crate::odomnet::OdomNetError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DatagenError),
}

pub(crate) fn io_err(path: &std::path::Path, e: impl ToString) -> FusionError {
    FusionError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Number of scalar variables per state.
pub const STATE_DIM: usize = 6;

/// Component names in state-vector order.
pub const COMPONENTS: [&str; STATE_DIM] = ["x", "y", "theta", "v", "gyro_bias", "accel_bias"];

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Pose, forward speed and IMU biases at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl State {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.theta, self.v, self.gyro_bias, self.accel_bias]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            theta: wrap_angle(a[2]),
            v: a[3],
            gyro_bias: a[4],
            accel_bias: a[5],
        }
    }

    /// Applies an additive increment, keeping the heading wrapped.
    pub fn retract(&self, d: &[f64]) -> Self {
        let mut a = self.to_array();
        for (x, dx) in a.iter_mut().zip(d) {
            *x += dx;
        }
        Self::from_array(a)
    }
}

#[cfg(test)]
mod tests;
