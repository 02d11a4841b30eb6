use crate::datagen::ImuSample;

use super::FusionError;

/// Planar preintegration over one interval, expressed in the body frame at
/// the interval start. Position terms are split so the start velocity can
/// stay a free variable: the displacement is `v0 · dp_unit + dp`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Preintegrated {
    pub dt: f64,
    pub dtheta: f64,
    pub dv: f64,
    /// Displacement per unit start speed, `∫ (cos φ, sin φ) dτ`.
    pub dp_unit: [f64; 2],
    /// Displacement from a standing start, `∫ Δv(τ) (cos φ, sin φ) dτ`.
    pub dp: [f64; 2],
    /// Derivatives with respect to the gyro bias.
    pub dp_unit_dbg: [f64; 2],
    pub dp_dbg: [f64; 2],
    /// Derivative of `dp` with respect to the accelerometer bias.
    pub dp_dba: [f64; 2],
}

/// Raw (unbiased) yaw rate and forward acceleration on a time grid that
/// starts and ends exactly at the interval bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuGrid {
    pub t: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub accel: Vec<f64>,
}

fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> (f64, f64) {
    let span = b.time_s - a.time_s;
    let w = if span > 0.0 { ((t - a.time_s) / span).clamp(0.0, 1.0) } else { 0.0 };
    (
        a.yaw_rate + w * (b.yaw_rate - a.yaw_rate),
        a.ax + w * (b.ax - a.ax),
    )
}

fn value_at(samples: &[ImuSample], t: f64) -> (f64, f64) {
    let hi = samples.partition_point(|s| s.time_s < t);
    if hi == 0 {
        (samples[0].yaw_rate, samples[0].ax)
    } else if hi == samples.len() {
        let s = samples[hi - 1];
        (s.yaw_rate, s.ax)
    } else {
        lerp(&samples[hi - 1], &samples[hi], t)
    }
}

impl ImuGrid {
    /// Samples inside `[t0, t1]` plus linearly interpolated end points
    /// (held constant beyond the stream ends).
    pub fn between(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Self, FusionError> {
        if !(t1 > t0) {
            return Err(FusionError::Interval(format!("empty IMU interval [{t0}, {t1}]")));
        }
        let inside: Vec<&ImuSample> = samples.iter().filter(|s| s.time_s >= t0 && s.time_s <= t1).collect();
        if inside.is_empty() {
            return Err(FusionError::Interval(format!("no IMU samples in [{t0}, {t1}]")));
        }
        let mut g = ImuGrid {
            t: vec![t0],
            yaw_rate: Vec::new(),
            accel: Vec::new(),
        };
        let (w0, a0) = value_at(samples, t0);
        g.yaw_rate.push(w0);
        g.accel.push(a0);
        for s in inside {
            if s.time_s > t0 && s.time_s < t1 {
                g.t.push(s.time_s);
                g.yaw_rate.push(s.yaw_rate);
                g.accel.push(s.ax);
            }
        }
        let (w1, a1) = value_at(samples, t1);
        g.t.push(t1);
        g.yaw_rate.push(w1);
        g.accel.push(a1);
        Ok(g)
    }

    /// Midpoint integration of the bias-corrected signals.
    pub fn integrate(&self, gyro_bias: f64, accel_bias: f64) -> Preintegrated {
        let mut p = Preintegrated::default();
        let mut dphi_dbg = 0.0;
        let mut dv_dba = 0.0;
        for k in 1..self.t.len() {
            let h = self.t[k] - self.t[k - 1];
            let w = 0.5 * (self.yaw_rate[k - 1] + self.yaw_rate[k]) - gyro_bias;
            let a = 0.5 * (self.accel[k - 1] + self.accel[k]) - accel_bias;
            let phi_m = p.dtheta + 0.5 * w * h;
            let dphi_m = dphi_dbg - 0.5 * h;
            let v_m = p.dv + 0.5 * a * h;
            let dv_m = dv_dba - 0.5 * h;
            let (s, c) = phi_m.sin_cos();
            p.dp_unit[0] += c * h;
            p.dp_unit[1] += s * h;
            p.dp_unit_dbg[0] += -s * dphi_m * h;
            p.dp_unit_dbg[1] += c * dphi_m * h;
            p.dp[0] += v_m * c * h;
            p.dp[1] += v_m * s * h;
            p.dp_dbg[0] += -v_m * s * dphi_m * h;
            p.dp_dbg[1] += v_m * c * dphi_m * h;
            p.dp_dba[0] += dv_m * c * h;
            p.dp_dba[1] += dv_m * s * h;
            p.dtheta += w * h;
            p.dv += a * h;
            dphi_dbg -= h;
            dv_dba -= h;
        }
        p.dt = self.t[self.t.len() - 1] - self.t[0];
        p
    }
}

/// Preintegrates the IMU stream between `t0` and `t1` with the given
/// bias estimates.
pub fn preintegrate_imu(
    samples: &[ImuSample],
    t0: f64,
    t1: f64,
    gyro_bias: f64,
    accel_bias: f64,
) -> Result<Preintegrated, FusionError> {
    if let Some(i) = samples.windows(2).position(|w| !(w[1].time_s > w[0].time_s)) {
        return Err(FusionError::Interval(format!(
            "IMU timestamps not increasing at sample {}",
            i + 1
        )));
    }
    Ok(ImuGrid::between(samples, t0, t1)?.integrate(gyro_bias, accel_bias))
}
