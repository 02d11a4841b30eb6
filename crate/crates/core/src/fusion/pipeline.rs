use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::factors::{Factor, FactorKind, GprForm};
use super::preint::ImuGrid;
use super::solver::{FactorGraph, SolveReport, SolverConfig};
use super::{ate_rmse, io_err, FusionError, State};
use crate::datagen::{DatagenError, DistanceSample, PositionSample, TrajectoryRecord, WheelSample};
use crate::preprocess::{self, bscan_at, normalize, AScan, PreprocessConfig};
use crate::trainer::DistancePredictor;

/// Measurement and prior standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub prior_position_m: f64,
    pub prior_heading_rad: f64,
    pub prior_speed_mps: f64,
    pub prior_gyro_bias_rps: f64,
    pub prior_accel_bias_mps2: f64,
    /// Per-sample gyro noise.
    pub gyro_noise_rps: f64,
    /// Per-sample accelerometer noise.
    pub accel_noise_mps2: f64,
    /// Bias random-walk densities (per √s).
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub wheel_mps: f64,
    /// GPR step uncertainty; set it to the model's validation RMSE.
    pub gpr_m: f64,
    /// Floor applied to every derived standard deviation.
    pub min_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            prior_position_m: 0.01,
            prior_heading_rad: 0.01,
            prior_speed_mps: 0.01,
            prior_gyro_bias_rps: 0.02,
            prior_accel_bias_mps2: 0.1,
            gyro_noise_rps: 0.01,
            accel_noise_mps2: 0.05,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
            wheel_mps: 0.05,
            gpr_m: 0.02,
            min_std: 1e-6,
        }
    }
}

/// Which optional measurement streams enter the graph. IMU factors are
/// always present since nothing else observes heading changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sensors {
    pub wheel: bool,
    pub gpr: bool,
}

impl Default for Sensors {
    fn default() -> Self {
        Self { wheel: true, gpr: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    pub gpr_form: GprForm,
    pub sensors: Sensors,
    /// Estimate/ground-truth association window for ATE.
    pub association_tol_s: f64,
    /// State spacing when no GPR step timestamps are available.
    pub frame_period_s: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            solver: SolverConfig::default(),
            gpr_form: GprForm::Distance,
            sensors: Sensors::default(),
            association_tol_s: 0.05,
            frame_period_s: 0.4,
        }
    }
}

impl FusionConfig {
    pub fn check(&self) -> Vec<String> {
        let mut e = self.solver.check();
        let n = &self.noise;
        for (name, v) in [
            ("prior_position_m", n.prior_position_m),
            ("prior_heading_rad", n.prior_heading_rad),
            ("prior_speed_mps", n.prior_speed_mps),
            ("prior_gyro_bias_rps", n.prior_gyro_bias_rps),
            ("prior_accel_bias_mps2", n.prior_accel_bias_mps2),
            ("gyro_bias_walk", n.gyro_bias_walk),
            ("accel_bias_walk", n.accel_bias_walk),
            ("wheel_mps", n.wheel_mps),
            ("gpr_m", n.gpr_m),
            ("min_std", n.min_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                e.push(format!("noise.{name}: must be positive"));
            }
        }
        if !(n.gyro_noise_rps >= 0.0 && n.accel_noise_mps2 >= 0.0) {
            e.push("noise.gyro_noise_rps/accel_noise_mps2: must be non-negative".into());
        }
        if !(self.association_tol_s >= 0.0) {
            e.push("association_tol_s: must be non-negative".into());
        }
        if !(self.frame_period_s > 0.0) {
            e.push("frame_period_s: must be positive".into());
        }
        e
    }
}

fn interp_wheel(wheel: &[WheelSample], t: f64) -> Option<f64> {
    let hi = wheel.partition_point(|w| w.time_s < t);
    if hi < wheel.len() && wheel[hi].time_s == t {
        return Some(wheel[hi].speed_mps);
    }
    if hi == 0 || hi == wheel.len() {
        return None;
    }
    let (a, b) = (&wheel[hi - 1], &wheel[hi]);
    let w = (t - a.time_s) / (b.time_s - a.time_s);
    Some(a.speed_mps + w * (b.speed_mps - a.speed_mps))
}

fn interp_truth(truth: &[PositionSample], t: f64) -> (f64, f64) {
    let hi = truth.partition_point(|p| p.time_s < t);
    if hi == 0 {
        return (truth[0].x_m, truth[0].y_m);
    }
    if hi == truth.len() {
        let p = &truth[hi - 1];
        return (p.x_m, p.y_m);
    }
    let (a, b) = (&truth[hi - 1], &truth[hi]);
    let w = (t - a.time_s) / (b.time_s - a.time_s);
    (a.x_m + w * (b.x_m - a.x_m), a.y_m + w * (b.y_m - a.y_m))
}

/// Graph state timestamps: the IMU start, then every GPR step timestamp,
/// or a fixed grid when the record carries no step estimates.
pub fn state_times(record: &TrajectoryRecord, cfg: &FusionConfig) -> Result<Vec<f64>, FusionError> {
    let (Some(first), Some(last)) = (record.imu.first(), record.imu.last()) else {
        return Err(FusionError::Input(format!("{}: no IMU samples", record.name)));
    };
    let t0 = first.time_s;
    let mut times = vec![t0];
    match record.gpr_odom.as_deref() {
        Some(d) if !d.is_empty() => {
            for s in d {
                if s.time_s > *times.last().unwrap() && s.time_s <= last.time_s {
                    times.push(s.time_s);
                }
            }
        }
        _ => {
            let n = ((last.time_s - t0) / cfg.frame_period_s + 1e-9).floor() as usize;
            times.extend((1..=n).map(|k| t0 + k as f64 * cfg.frame_period_s));
        }
    }
    if times.len() < 2 {
        return Err(FusionError::Input(format!("{}: fewer than two graph states", record.name)));
    }
    Ok(times)
}

/// Prior state at the first timestamp: ground-truth position, heading
/// along the first ground-truth segment longer than 5 cm, and wheel speed.
fn prior_mean(record: &TrajectoryRecord, t0: f64) -> Result<State, FusionError> {
    let gt = &record.ground_truth;
    if gt.is_empty() {
        return Err(FusionError::Input(format!("{}: ground truth is needed to anchor the prior", record.name)));
    }
    let (x, y) = interp_truth(gt, t0);
    let theta = gt
        .iter()
        .filter(|p| p.time_s > t0)
        .find(|p| (p.x_m - x).hypot(p.y_m - y) > 0.05)
        .map_or(0.0, |p| (p.y_m - y).atan2(p.x_m - x));
    let v = interp_wheel(&record.wheel, t0).unwrap_or(0.0);
    Ok(State {
        x,
        y,
        theta,
        v,
        ..State::default()
    })
}

/// Dead-reckoned starting point: IMU headings, wheel speeds where
/// available, and preintegrated displacements.
pub fn initial_guess(record: &TrajectoryRecord, times: &[f64]) -> Result<Vec<State>, FusionError> {
    let mut states = vec![prior_mean(record, times[0])?];
    for w in times.windows(2) {
        let a = *states.last().unwrap();
        let p = ImuGrid::between(&record.imu, w[0], w[1])?.integrate(0.0, 0.0);
        let (s, c) = a.theta.sin_cos();
        let dx = a.v * p.dp_unit[0] + p.dp[0];
        let dy = a.v * p.dp_unit[1] + p.dp[1];
        states.push(State::from_array([
            a.x + c * dx - s * dy,
            a.y + s * dx + c * dy,
            a.theta + p.dtheta,
            interp_wheel(&record.wheel, w[1]).unwrap_or(a.v + p.dv),
            0.0,
            0.0,
        ]));
    }
    Ok(states)
}

fn imu_std(noise: &NoiseConfig, grid: &ImuGrid, speed: f64) -> [f64; 4] {
    let dt = grid.t[grid.t.len() - 1] - grid.t[0];
    let h = dt / (grid.t.len() - 1) as f64;
    let sg = noise.gyro_noise_rps * (dt * h).sqrt();
    let sa = noise.accel_noise_mps2 * (dt * h).sqrt();
    let sp = (sa.hypot(speed.abs() * sg)) * dt / 3f64.sqrt();
    [sg, sa, sp, sp].map(|v| v.max(noise.min_std))
}

/// Assembles the factor graph for one record. `distances` supplies the
/// GPR step estimates, matched to states by timestamp.
pub fn build_graph(
    record: &TrajectoryRecord,
    times: &[f64],
    distances: &[DistanceSample],
    cfg: &FusionConfig,
) -> Result<FactorGraph, FusionError> {
    let errs = cfg.check();
    if !errs.is_empty() {
        return Err(FusionError::Config(errs));
    }
    let states = initial_guess(record, times)?;
    let n = &cfg.noise;
    let mut g = FactorGraph::new(states.clone());
    g.add(Factor::new(FactorKind::Prior {
        state: 0,
        mean: states[0],
        std: [
            n.prior_position_m,
            n.prior_position_m,
            n.prior_heading_rad,
            n.prior_speed_mps,
            n.prior_gyro_bias_rps,
            n.prior_accel_bias_mps2,
        ],
    }));
    for (i, w) in times.windows(2).enumerate() {
        let grid = ImuGrid::between(&record.imu, w[0], w[1])?;
        let std = imu_std(n, &grid, states[i].v);
        let dt = w[1] - w[0];
        g.add(Factor::new(FactorKind::Imu {
            from: i,
            to: i + 1,
            grid,
            std,
        }));
        g.add(Factor::new(FactorKind::BiasWalk {
            from: i,
            to: i + 1,
            std: [n.gyro_bias_walk * dt.sqrt(), n.accel_bias_walk * dt.sqrt()].map(|v| v.max(n.min_std)),
        }));
    }
    if cfg.sensors.wheel {
        for (i, &t) in times.iter().enumerate() {
            if let Some(speed) = interp_wheel(&record.wheel, t) {
                g.add(Factor::new(FactorKind::Wheel {
                    state: i,
                    speed_mps: speed,
                    std: n.wheel_mps,
                }));
            }
        }
    }
    if cfg.sensors.gpr {
        for d in distances {
            let k = times.partition_point(|&t| t < d.time_s - 1e-6);
            if k == 0 || k >= times.len() || (times[k] - d.time_s).abs() > 1e-6 {
                continue;
            }
            g.add(Factor::new(FactorKind::Gpr {
                from: k - 1,
                to: k,
                distance_m: d.distance_m,
                dt_s: times[k] - times[k - 1],
                std: n.gpr_m,
                form: cfg.gpr_form,
            }));
        }
    }
    Ok(g)
}

/// Runs the network over consecutive frames of the record's raw traces.
/// Frames whose B-scan window runs past the recorded traces are skipped.
pub fn distances_from_model<P: DistancePredictor + ?Sized>(
    record: &TrajectoryRecord,
    predictor: &P,
    preprocess_cfg: &PreprocessConfig,
    times: &[f64],
) -> Result<Vec<DistanceSample>, FusionError> {
    let dt = record
        .gpr_dt_s
        .ok_or_else(|| FusionError::Input(format!("{}: GPR sample interval unknown", record.name)))?;
    if record.gpr.len() < 2 {
        return Err(FusionError::Input(format!("{}: not enough GPR traces", record.name)));
    }
    let raw = record
        .gpr
        .iter()
        .map(|g| AScan::new(g.samples.clone(), dt, 0.0, Some(g.along_track_m)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(DatagenError::from)?;
    let traces = preprocess::preprocess_all(&raw, preprocess_cfg).map_err(DatagenError::from)?;
    let along = |t: f64| {
        let g = &record.gpr;
        let hi = g.partition_point(|s| s.time_s < t).clamp(1, g.len() - 1);
        let (a, b) = (&g[hi - 1], &g[hi]);
        let w = ((t - a.time_s) / (b.time_s - a.time_s)).clamp(0.0, 1.0);
        a.along_track_m + w * (b.along_track_m - a.along_track_m)
    };
    let width = preprocess_cfg.bscan_width;
    let spacing = preprocess_cfg.trace_spacing_m;
    let scans: Vec<Option<preprocess::BScan>> = times
        .iter()
        .map(|&t| bscan_at(&traces, along(t), width, spacing).ok().map(|b| normalize(&b)))
        .collect();
    let mut pairs = Vec::new();
    let mut stamps = Vec::new();
    for (k, w) in scans.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (&w[0], &w[1]) {
            pairs.push((a, b));
            stamps.push(times[k + 1]);
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let preds = predictor.predict_pairs(&pairs)?;
    Ok(stamps
        .into_iter()
        .zip(preds)
        .map(|(time_s, distance_m)| DistanceSample { time_s, distance_m })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionResult {
    pub name: String,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub report: SolveReport,
    /// Absolute trajectory error (m), when ground truth is available.
    pub ate_m: Option<f64>,
    pub path_length_m: f64,
    pub gpr_factors: usize,
}

impl FusionResult {
    pub fn positions(&self) -> Vec<PositionSample> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| PositionSample {
                time_s: t,
                x_m: s.x,
                y_m: s.y,
            })
            .collect()
    }
}

/// Builds and solves the graph for one record and scores it against its
/// ground truth.
pub fn fuse_record(
    record: &TrajectoryRecord,
    distances: &[DistanceSample],
    cfg: &FusionConfig,
) -> Result<FusionResult, FusionError> {
    let times = state_times(record, cfg)?;
    let mut graph = build_graph(record, &times, distances, cfg)?;
    let gpr_factors = graph.factors.iter().filter(|f| matches!(f.kind, FactorKind::Gpr { .. })).count();
    let report = graph.optimize(&cfg.solver)?;
    let mut out = FusionResult {
        name: record.name.clone(),
        times,
        states: graph.states,
        report,
        ate_m: None,
        path_length_m: record.path_length(),
        gpr_factors,
    };
    if !record.ground_truth.is_empty() {
        out.ate_m = Some(ate_rmse(&out.positions(), &record.ground_truth, cfg.association_tol_s)?);
    }
    Ok(out)
}

pub fn write_trajectory_csv(path: &Path, times: &[f64], states: &[State]) -> Result<(), FusionError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["time_s", "x_m", "y_m", "theta_rad", "v_mps"])
        .map_err(|e| io_err(path, e))?;
    for (t, s) in times.iter().zip(states) {
        w.write_record([t, &s.x, &s.y, &s.theta, &s.v].map(|v| v.to_string()))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Plots labelled x/y polylines on equal axes as a standalone SVG.
pub fn write_svg(path: &Path, title: &str, series: &[(&str, &str, Vec<(f64, f64)>)]) -> Result<(), FusionError> {
    std::fs::write(path, render_svg(title, series)).map_err(|e| io_err(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(title: &str, series: &[(&str, &str, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 520.0, 50.0);
    let pts = series.iter().flat_map(|s| s.2.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = ((w - 2.0 * m) / span).min((h - 2.0 * m) / span);
    let tx = |x: f64| m + (x - x0) * scale;
    let ty = |y: f64| h - m - (y - y0) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">x (m), {:.2} m per 100 px</text>"#,
        w / 2.0,
        h - 12.0,
        100.0 / scale
    );
    for (i, (label, color, p)) in series.iter().enumerate() {
        let mut d = String::new();
        for (k, &(x, y)) in p.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "" } else { " " }, tx(x), ty(y));
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>"#
        );
        let ly = 44.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - 170.0,
            w - 150.0,
            w - 144.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
