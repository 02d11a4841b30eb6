use serde::{Deserialize, Serialize};

use super::preint::ImuGrid;
use super::{wrap_angle, State, STATE_DIM};

/// Below this baseline length the distance Jacobian is damped.
pub const MIN_BASELINE_M: f64 = 1e-9;
const DAMPING_M: f64 = 1e-6;

/// How a GPR step estimate enters the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GprForm {
    /// `‖p_b − p_a‖ − d`.
    #[default]
    Distance,
    /// Mean speed of the two states against `d / Δt`.
    Speed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    Prior {
        state: usize,
        mean: State,
        std: [f64; STATE_DIM],
    },
    Imu {
        from: usize,
        to: usize,
        grid: ImuGrid,
        /// Whitening for (θ, v, px, py).
        std: [f64; 4],
    },
    Wheel {
        state: usize,
        speed_mps: f64,
        std: f64,
    },
    Gpr {
        from: usize,
        to: usize,
        distance_m: f64,
        dt_s: f64,
        std: f64,
        form: GprForm,
    },
    BiasWalk {
        from: usize,
        to: usize,
        /// Whitening for (gyro, accel) bias increments.
        std: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
}

/// Whitened residual and its Jacobian blocks, one row-major `dim × 6`
/// block per connected state.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub residual: Vec<f64>,
    pub blocks: Vec<(usize, Vec<[f64; STATE_DIM]>)>,
}

impl Factor {
    pub fn new(kind: FactorKind) -> Self {
        Self { kind }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FactorKind::Prior { .. } => "prior",
            FactorKind::Imu { .. } => "imu",
            FactorKind::Wheel { .. } => "wheel",
            FactorKind::Gpr { .. } => "gpr_odom",
            FactorKind::BiasWalk { .. } => "bias",
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FactorKind::Prior { .. } => STATE_DIM,
            FactorKind::Imu { .. } => 4,
            FactorKind::Wheel { .. } | FactorKind::Gpr { .. } => 1,
            FactorKind::BiasWalk { .. } => 2,
        }
    }

    pub fn states(&self) -> Vec<usize> {
        match self.kind {
            FactorKind::Prior { state, .. } | FactorKind::Wheel { state, .. } => vec![state],
            FactorKind::Imu { from, to, .. } | FactorKind::Gpr { from, to, .. } | FactorKind::BiasWalk { from, to, .. } => {
                vec![from, to]
            }
        }
    }

    pub fn linearize(&self, states: &[State]) -> Linearized {
        match &self.kind {
            FactorKind::Prior { state, mean, std } => {
                let s = states[*state].to_array();
                let m = mean.to_array();
                let mut r = vec![0.0; STATE_DIM];
                let mut j = vec![[0.0; STATE_DIM]; STATE_DIM];
                for k in 0..STATE_DIM {
                    let d = s[k] - m[k];
                    r[k] = if k == 2 { wrap_angle(d) } else { d } / std[k];
                    j[k][k] = 1.0 / std[k];
                }
                Linearized {
                    residual: r,
                    blocks: vec![(*state, j)],
                }
            }
            FactorKind::Wheel { state, speed_mps, std } => {
                let mut j = [0.0; STATE_DIM];
                j[3] = 1.0 / std;
                Linearized {
                    residual: vec![(states[*state].v - speed_mps) / std],
                    blocks: vec![(*state, vec![j])],
                }
            }
            FactorKind::Gpr {
                from,
                to,
                distance_m,
                dt_s,
                std,
                form,
            } => {
                let (a, b) = (&states[*from], &states[*to]);
                let mut ja = [0.0; STATE_DIM];
                let mut jb = [0.0; STATE_DIM];
                let r = match form {
                    GprForm::Distance => {
                        let (dx, dy) = (b.x - a.x, b.y - a.y);
                        let d = dx.hypot(dy);
                        let n = if d < MIN_BASELINE_M { d.hypot(DAMPING_M) } else { d };
                        let (ux, uy) = (dx / n / std, dy / n / std);
                        ja[0] = -ux;
                        ja[1] = -uy;
                        jb[0] = ux;
                        jb[1] = uy;
                        (d - distance_m) / std
                    }
                    GprForm::Speed => {
                        let s = std / dt_s;
                        ja[3] = 0.5 / s;
                        jb[3] = 0.5 / s;
                        (0.5 * (a.v + b.v) - distance_m / dt_s) / s
                    }
                };
                Linearized {
                    residual: vec![r],
                    blocks: vec![(*from, vec![ja]), (*to, vec![jb])],
                }
            }
            FactorKind::BiasWalk { from, to, std } => {
                let (a, b) = (&states[*from], &states[*to]);
                let mut ja = vec![[0.0; STATE_DIM]; 2];
                let mut jb = vec![[0.0; STATE_DIM]; 2];
                for k in 0..2 {
                    ja[k][4 + k] = -1.0 / std[k];
                    jb[k][4 + k] = 1.0 / std[k];
                }
                Linearized {
                    residual: vec![(b.gyro_bias - a.gyro_bias) / std[0], (b.accel_bias - a.accel_bias) / std[1]],
                    blocks: vec![(*from, ja), (*to, jb)],
                }
            }
            FactorKind::Imu { from, to, grid, std } => imu_linearize(*from, *to, grid, std, states),
        }
    }
}

fn imu_linearize(from: usize, to: usize, grid: &ImuGrid, std: &[f64; 4], states: &[State]) -> Linearized {
    let (a, b) = (&states[from], &states[to]);
    let pre = grid.integrate(a.gyro_bias, a.accel_bias);
    let (s, c) = a.theta.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    // Displacement rotated into the start frame.
    let q = [c * dx + s * dy, -s * dx + c * dy];
    let dq_dtheta = [-s * dx + c * dy, -c * dx - s * dy];
    let pred = [
        a.v * pre.dp_unit[0] + pre.dp[0],
        a.v * pre.dp_unit[1] + pre.dp[1],
    ];

    let r = vec![
        wrap_angle(b.theta - a.theta - pre.dtheta) / std[0],
        (b.v - a.v - pre.dv) / std[1],
        (q[0] - pred[0]) / std[2],
        (q[1] - pred[1]) / std[3],
    ];
    let mut ja = vec![[0.0; STATE_DIM]; 4];
    let mut jb = vec![[0.0; STATE_DIM]; 4];

    ja[0][2] = -1.0;
    jb[0][2] = 1.0;
    ja[0][4] = pre.dt;

    ja[1][3] = -1.0;
    jb[1][3] = 1.0;
    ja[1][5] = pre.dt;

    let rot = [[c, s], [-s, c]];
    for k in 0..2 {
        let row = 2 + k;
        ja[row][0] = -rot[k][0];
        ja[row][1] = -rot[k][1];
        jb[row][0] = rot[k][0];
        jb[row][1] = rot[k][1];
        ja[row][2] = dq_dtheta[k];
        ja[row][3] = -pre.dp_unit[k];
        ja[row][4] = -(a.v * pre.dp_unit_dbg[k] + pre.dp_dbg[k]);
        ja[row][5] = -pre.dp_dba[k];
    }
    for (row, sd) in std.iter().enumerate() {
        for col in 0..STATE_DIM {
            ja[row][col] /= sd;
            jb[row][col] /= sd;
        }
    }
    Linearized {
        residual: r,
        blocks: vec![(from, ja), (to, jb)],
    }
}
