use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::datagen::{
    derive_seed, simulate_ascan_with, DistanceSample, GprTrace, ImuSample, PairConfig, PositionSample,
    TrajectoryRecord, WheelSample,
};

/// Smooth planar drive with noisy IMU, wheel and GPR step measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub wheel_rate_hz: f64,
    pub truth_rate_hz: f64,
    /// Interval between GPR frames, i.e. between graph states.
    pub frame_period_s: f64,
    pub initial_heading_rad: f64,
    pub speed_mps: f64,
    pub speed_amplitude_mps: f64,
    pub speed_period_s: f64,
    pub yaw_rate_amplitude_rps: f64,
    pub yaw_period_s: f64,
    pub gyro_noise_rps: f64,
    pub accel_noise_mps2: f64,
    pub gyro_bias_rps: f64,
    pub accel_bias_mps2: f64,
    pub wheel_noise_mps: f64,
    /// Multiplicative wheel-speed error (slip or a wrong radius).
    pub wheel_scale: f64,
    pub gpr_noise_m: f64,
    /// Also simulate raw GPR traces along the path.
    pub gpr_traces: bool,
    /// Scene, trace geometry and column spacing for the raw traces.
    pub radar: PairConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            imu_rate_hz: 100.0,
            wheel_rate_hz: 20.0,
            truth_rate_hz: 20.0,
            frame_period_s: 0.4,
            initial_heading_rad: 0.3,
            speed_mps: 0.6,
            speed_amplitude_mps: 0.15,
            speed_period_s: 17.0,
            yaw_rate_amplitude_rps: 0.2,
            yaw_period_s: 23.0,
            gyro_noise_rps: 0.01,
            accel_noise_mps2: 0.05,
            gyro_bias_rps: 0.005,
            accel_bias_mps2: 0.03,
            wheel_noise_mps: 0.03,
            wheel_scale: 1.05,
            gpr_noise_m: 0.01,
            gpr_traces: false,
            radar: PairConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Noise-free straight drive at constant acceleration.
    pub fn noiseless_line(duration_s: f64) -> Self {
        Self {
            duration_s,
            speed_mps: 0.5,
            speed_amplitude_mps: 0.0,
            yaw_rate_amplitude_rps: 0.0,
            gyro_noise_rps: 0.0,
            accel_noise_mps2: 0.0,
            gyro_bias_rps: 0.0,
            accel_bias_mps2: 0.0,
            wheel_noise_mps: 0.0,
            wheel_scale: 1.0,
            gpr_noise_m: 0.0,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Vec<String> {
        let mut e = Vec::new();
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("imu_rate_hz", self.imu_rate_hz),
            ("wheel_rate_hz", self.wheel_rate_hz),
            ("truth_rate_hz", self.truth_rate_hz),
            ("frame_period_s", self.frame_period_s),
            ("speed_period_s", self.speed_period_s),
            ("yaw_period_s", self.yaw_period_s),
            ("wheel_scale", self.wheel_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                e.push(format!("{name}: must be positive"));
            }
        }
        for (name, v) in [
            ("gyro_noise_rps", self.gyro_noise_rps),
            ("accel_noise_mps2", self.accel_noise_mps2),
            ("wheel_noise_mps", self.wheel_noise_mps),
            ("gpr_noise_m", self.gpr_noise_m),
        ] {
            if !(v >= 0.0) {
                e.push(format!("{name}: must be non-negative"));
            }
        }
        if self.frame_period_s > self.duration_s {
            e.push("frame_period_s: must not exceed duration_s".into());
        }
        if self.speed_amplitude_mps.abs() >= self.speed_mps {
            e.push("speed_amplitude_mps: must stay below speed_mps so the vehicle keeps moving".into());
        }
        if self.gpr_traces {
            e.extend(self.radar.validate().into_iter().map(|m| format!("radar.{m}")));
        }
        e
    }

    fn speed(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU / self.speed_period_s;
        self.speed_mps + self.speed_amplitude_mps * (w * t).sin()
    }

    fn accel(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU / self.speed_period_s;
        self.speed_amplitude_mps * w * (w * t).cos()
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU / self.yaw_period_s;
        self.yaw_rate_amplitude_rps * (w * t).sin()
    }

    fn heading(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU / self.yaw_period_s;
        self.initial_heading_rad + self.yaw_rate_amplitude_rps / w * (1.0 - (w * t).cos())
    }
}

/// True pose along the drive, integrated with Simpson's rule on a fine grid.
struct Truth {
    h: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
}

impl Truth {
    fn new(cfg: &ScenarioConfig) -> Self {
        let h = 1e-3;
        let n = (cfg.duration_s / h).ceil() as usize + 2;
        let (mut x, mut y, mut s) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let vel = |t: f64| {
            let (sn, c) = cfg.heading(t).sin_cos();
            let v = cfg.speed(t);
            (v * c, v * sn, v)
        };
        for k in 1..n {
            let t0 = (k - 1) as f64 * h;
            let (a, b, c) = (vel(t0), vel(t0 + 0.5 * h), vel(t0 + h));
            x[k] = x[k - 1] + h / 6.0 * (a.0 + 4.0 * b.0 + c.0);
            y[k] = y[k - 1] + h / 6.0 * (a.1 + 4.0 * b.1 + c.1);
            s[k] = s[k - 1] + h / 6.0 * (a.2 + 4.0 * b.2 + c.2);
        }
        Self { h, x, y, s }
    }

    fn interp(&self, v: &[f64], t: f64) -> f64 {
        let u = (t / self.h).max(0.0);
        let k = (u.floor() as usize).min(v.len() - 2);
        let w = u - k as f64;
        v[k] + w * (v[k + 1] - v[k])
    }

    fn pos(&self, t: f64) -> (f64, f64) {
        (self.interp(&self.x, t), self.interp(&self.y, t))
    }

    /// First time the arc length reaches `s`.
    fn time_at(&self, s: f64) -> f64 {
        let k = self.s.partition_point(|&v| v < s).clamp(1, self.s.len() - 1);
        let (a, b) = (self.s[k - 1], self.s[k]);
        let w = if b > a { (s - a) / (b - a) } else { 0.0 };
        (k - 1) as f64 * self.h + w * self.h
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("non-negative std")
}

fn grid(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(move |k| k as f64 / rate)
}

/// Generates one synthetic trajectory record. GPR step estimates land in
/// `gpr_odom`, one per frame, measured from the previous frame.
pub fn simulate_scenario(cfg: &ScenarioConfig, name: &str, seed: u64) -> Result<TrajectoryRecord, FusionError> {
    let errs = cfg.check();
    if !errs.is_empty() {
        return Err(FusionError::Config(errs));
    }
    let truth = Truth::new(cfg);
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(derive_seed(seed, k));

    let mut rng = stream(1);
    let (ng, na) = (normal(cfg.gyro_noise_rps), normal(cfg.accel_noise_mps2));
    let imu = grid(cfg.duration_s, cfg.imu_rate_hz)
        .map(|t| ImuSample {
            time_s: t,
            yaw_rate: cfg.yaw_rate(t) + cfg.gyro_bias_rps + ng.sample(&mut rng),
            ax: cfg.accel(t) + cfg.accel_bias_mps2 + na.sample(&mut rng),
            ay: cfg.speed(t) * cfg.yaw_rate(t) + na.sample(&mut rng),
        })
        .collect();

    let mut rng = stream(2);
    let nw = normal(cfg.wheel_noise_mps);
    let wheel = grid(cfg.duration_s, cfg.wheel_rate_hz)
        .map(|t| WheelSample {
            time_s: t,
            speed_mps: cfg.wheel_scale * cfg.speed(t) + nw.sample(&mut rng),
        })
        .collect();

    let ground_truth = grid(cfg.duration_s, cfg.truth_rate_hz)
        .map(|t| {
            let (x, y) = truth.pos(t);
            PositionSample { time_s: t, x_m: x, y_m: y }
        })
        .collect();

    let mut rng = stream(3);
    let nd = normal(cfg.gpr_noise_m);
    let frames: Vec<f64> = grid(cfg.duration_s, 1.0 / cfg.frame_period_s).collect();
    let gpr_odom = frames
        .windows(2)
        .map(|w| {
            let (a, b) = (truth.pos(w[0]), truth.pos(w[1]));
            DistanceSample {
                time_s: w[1],
                distance_m: (b.0 - a.0).hypot(b.1 - a.1) + nd.sample(&mut rng),
            }
        })
        .collect();

    let (gpr, gpr_dt_s) = if cfg.gpr_traces {
        (simulate_traces(cfg, &truth, seed)?, Some(cfg.radar.geometry.dt_s))
    } else {
        (Vec::new(), None)
    };
    Ok(TrajectoryRecord {
        name: name.to_string(),
        gpr_dt_s,
        gpr,
        imu,
        wheel,
        ground_truth,
        gpr_odom: Some(gpr_odom),
    })
}

fn simulate_traces(cfg: &ScenarioConfig, truth: &Truth, seed: u64) -> Result<Vec<GprTrace>, FusionError> {
    let r = &cfg.radar;
    let path = truth.s[truth.s.len() - 1];
    let mut scene_cfg = r.scene;
    scene_cfg.track_length_m = path + 1.0;
    let scene = scene_cfg.sample(r.geometry.center_freq_hz, derive_seed(seed, 4));
    let dx = r.preprocess.trace_spacing_m * r.acquisition_ratio;
    let count = (path / dx).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5));
    let mut out = Vec::with_capacity(count);
    let mut last_t = f64::NEG_INFINITY;
    for k in 0..count {
        let s = k as f64 * dx;
        let t = truth.time_at(s).max(last_t + 1e-9);
        last_t = t;
        let a = simulate_ascan_with(&scene, s, r.geometry.dt_s, r.geometry.n_samples, &mut rng)?;
        out.push(GprTrace {
            time_s: t,
            along_track_m: s,
            samples: a.samples,
        });
    }
    Ok(out)
}
