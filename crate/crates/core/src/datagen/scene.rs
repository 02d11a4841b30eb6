use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::preprocess::AScan;

/// Point reflector buried at `depth_m` below along-track position `x0_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x0_m: f64,
    pub depth_m: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    /// Propagation velocity in the ground (m/s).
    pub velocity_mps: f64,
    /// Ricker source centre frequency (Hz).
    pub center_freq_hz: f64,
    /// Additive white-noise standard deviation.
    pub noise_std: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.velocity_mps > 0.0) {
            return Err(DatagenError::Config("scene velocity must be positive".into()));
        }
        if self.scatterers.is_empty() {
            return Err(DatagenError::Config("scene needs at least one scatterer".into()));
        }
        if let Some(s) = self.scatterers.iter().find(|s| !(s.depth_m > 0.0)) {
            return Err(DatagenError::Config(format!(
                "scatterer at x0 = {} has non-positive depth {}",
                s.x0_m, s.depth_m
            )));
        }
        if !(self.center_freq_hz > 0.0) || self.noise_std < 0.0 {
            return Err(DatagenError::Config(
                "centre frequency must be positive and noise std non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Two-way travel time to scatterer `s` from antenna position `x`.
    pub fn delay(&self, s: &Scatterer, x: f64) -> f64 {
        2.0 * (s.depth_m * s.depth_m + (x - s.x0_m).powi(2)).sqrt() / self.velocity_mps
    }
}

/// Sampling of simulated traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceGeometry {
    pub dt_s: f64,
    pub n_samples: usize,
    pub center_freq_hz: f64,
}

impl Default for TraceGeometry {
    fn default() -> Self {
        Self {
            dt_s: 0.3125e-9,
            n_samples: 64,
            center_freq_hz: 400e6,
        }
    }
}

/// Parameters for drawing random scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub track_length_m: f64,
    pub scatterers_per_m: f64,
    pub depth_min_m: f64,
    pub depth_max_m: f64,
    pub reflectivity_min: f64,
    pub reflectivity_max: f64,
    pub velocity_mps: f64,
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            track_length_m: 30.0,
            scatterers_per_m: 3.0,
            depth_min_m: 0.15,
            depth_max_m: 0.8,
            reflectivity_min: 0.5,
            reflectivity_max: 1.5,
            velocity_mps: 1.0e8,
            noise_std: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.track_length_m > 0.0) {
            e.push("scene.track_length_m: must be positive".into());
        }
        if !(self.scatterers_per_m > 0.0) {
            e.push("scene.scatterers_per_m: must be positive".into());
        }
        if !(self.depth_min_m > 0.0 && self.depth_min_m <= self.depth_max_m) {
            e.push("scene.depth_min_m: must satisfy 0 < depth_min_m <= depth_max_m".into());
        }
        if self.reflectivity_min > self.reflectivity_max {
            e.push("scene.reflectivity_min: must not exceed reflectivity_max".into());
        }
        if !(self.velocity_mps > 0.0) {
            e.push("scene.velocity_mps: must be positive".into());
        }
        if self.noise_std < 0.0 {
            e.push("scene.noise_std: must be non-negative".into());
        }
        e
    }

    /// Draws scatterers uniformly along the track with random sign and
    /// magnitude of reflectivity.
    pub fn sample(&self, center_freq_hz: f64, seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = ((self.track_length_m * self.scatterers_per_m).round() as usize).max(1);
        let scatterers = (0..count)
            .map(|_| {
                let mag = rng.random_range(self.reflectivity_min..=self.reflectivity_max);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Scatterer {
                    x0_m: rng.random_range(0.0..self.track_length_m),
                    depth_m: rng.random_range(self.depth_min_m..=self.depth_max_m),
                    reflectivity: sign * mag,
                }
            })
            .collect();
        Scene {
            scatterers,
            velocity_mps: self.velocity_mps,
            center_freq_hz,
            noise_std: self.noise_std,
        }
    }
}

/// Ricker wavelet of peak frequency `f` evaluated at time offset `t`.
pub fn ricker(t: f64, f: f64) -> f64 {
    let a = (PI * f * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Noise-free trace at along-track position `x`: each scatterer contributes
/// a Ricker pulse at its two-way delay scaled by `reflectivity / (v·τ)`.
/// Echoes falling outside the window are truncated.
pub fn clean_trace(scene: &Scene, x: f64, dt: f64, n_samples: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_samples];
    let t_end = dt * n_samples as f64;
    let tail = 2.0 / scene.center_freq_hz;
    for s in &scene.scatterers {
        let tau = scene.delay(s, x);
        if tau - tail > t_end {
            continue;
        }
        let amp = s.reflectivity / (scene.velocity_mps * tau);
        let k_lo = ((tau - tail) / dt).floor().max(0.0) as usize;
        let k_hi = (((tau + tail) / dt).ceil() as usize).min(n_samples);
        for (k, o) in out.iter_mut().enumerate().take(k_hi).skip(k_lo) {
            *o += amp * ricker(k as f64 * dt - tau, scene.center_freq_hz);
        }
    }
    out
}

pub fn simulate_ascan_with<R: Rng>(
    scene: &Scene,
    x: f64,
    dt: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<AScan, DatagenError> {
    scene.validate()?;
    let mut samples = clean_trace(scene, x, dt, n_samples);
    if scene.noise_std > 0.0 {
        let noise = Normal::new(0.0, scene.noise_std).unwrap();
        samples.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    Ok(AScan::new(samples, dt, 0.0, Some(x))?)
}

/// Simulated A-scan at along-track position `x` with noise drawn from `seed`.
pub fn simulate_ascan(scene: &Scene, x: f64, dt: f64, n_samples: usize, seed: u64) -> Result<AScan, DatagenError> {
    simulate_ascan_with(scene, x, dt, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))
}
