use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{simulate_ascan_with, Scene, SceneConfig, TraceGeometry};
use super::DatagenError;
use crate::preprocess::{self, bscan_at, normalize, BScan, PreprocessConfig};

/// Inter-frame step distribution: `δ ~ U[min_step_m, max_step_m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub min_step_m: f64,
    pub max_step_m: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            min_step_m: 0.05,
            max_step_m: 0.45,
        }
    }
}

impl MotionConfig {
    pub fn mean(&self) -> f64 {
        0.5 * (self.min_step_m + self.max_step_m)
    }

    /// Checks `0 ≤ min ≤ max < L·spacing/2`.
    pub fn validate(&self, bscan_width: usize, spacing: f64) -> Result<(), DatagenError> {
        let limit = bscan_width as f64 * spacing / 2.0;
        if !(self.min_step_m >= 0.0 && self.min_step_m <= self.max_step_m && self.max_step_m < limit) {
            return Err(DatagenError::MotionRange {
                min: self.min_step_m,
                max: self.max_step_m,
                limit,
            });
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max_step_m > self.min_step_m {
            rng.random_range(self.min_step_m..=self.max_step_m)
        } else {
            self.min_step_m
        }
    }
}

/// Everything `generate_pairs` needs besides count and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub scene: SceneConfig,
    pub geometry: TraceGeometry,
    pub motion: MotionConfig,
    pub preprocess: PreprocessConfig,
    /// Raw acquisition interval as a fraction of the B-scan column spacing.
    pub acquisition_ratio: f64,
    /// Uniform jitter on raw trace positions, as a fraction of the raw interval.
    pub position_jitter: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            geometry: TraceGeometry::default(),
            motion: MotionConfig::default(),
            preprocess: PreprocessConfig::default(),
            acquisition_ratio: 0.5,
            position_jitter: 0.2,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut e = self.scene.validate();
        e.extend(self.preprocess.validate().into_iter().map(|m| format!("preprocess.{m}")));
        if let Err(err) = self
            .motion
            .validate(self.preprocess.bscan_width, self.preprocess.trace_spacing_m)
        {
            e.push(format!("motion: {err}"));
        }
        if !(self.geometry.dt_s > 0.0) {
            e.push("geometry.dt_s: must be positive".into());
        }
        if self.geometry.n_samples < crate::preprocess::MIN_TRACE_LEN {
            e.push(format!(
                "geometry.n_samples: must be at least {}",
                crate::preprocess::MIN_TRACE_LEN
            ));
        }
        if !(self.geometry.center_freq_hz > 0.0) {
            e.push("geometry.center_freq_hz: must be positive".into());
        }
        if !(self.acquisition_ratio > 0.0 && self.acquisition_ratio <= 1.0) {
            e.push("acquisition_ratio: must lie in (0, 1]".into());
        }
        if !(0.0..0.5).contains(&self.position_jitter) {
            e.push("position_jitter: must lie in [0, 0.5)".into());
        }
        let window = self.window_length();
        if self.preprocess.sec.time_zero_s < 0.0 {
            e.push("preprocess.sec.time_zero_s: must be non-negative".into());
        }
        if window > self.scene.track_length_m {
            e.push(format!(
                "scene.track_length_m: must exceed the {window:.3} m a pair needs"
            ));
        }
        e
    }

    /// Along-track extent covered by one pair, including the maximum step.
    fn window_length(&self) -> f64 {
        let p = &self.preprocess;
        (p.bscan_width as f64 + 1.0) * p.trace_spacing_m + self.motion.max_step_m
    }
}

/// Two consecutive B-scans with the distance travelled between them.
#[derive(Debug, Clone, PartialEq)]
pub struct OdomPair {
    pub prev: BScan,
    pub cur: BScan,
    /// Ground-truth step O between the frames (m).
    pub label: f64,
    /// Trajectory the pair was drawn from.
    pub trajectory: String,
}

/// Mixes a base seed with a stream index (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `count` step labels exactly as [`generate_pairs`] does, without
/// simulating the radar data.
pub fn sample_motions(motion: &MotionConfig, count: usize, seed: u64) -> Vec<f64> {
    (0..count)
        .map(|i| motion.sample(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64))))
        .collect()
}

/// Builds one pair with a given step `delta` at a random track offset.
pub fn make_pair(
    scene: &Scene,
    cfg: &PairConfig,
    delta: f64,
    rng: &mut ChaCha8Rng,
    trajectory: &str,
) -> Result<OdomPair, DatagenError> {
    let p = &cfg.preprocess;
    let spacing = p.trace_spacing_m;
    let width = p.bscan_width;
    let margin = spacing;
    let span = (width - 1) as f64 * spacing + delta;
    let hi = cfg.scene.track_length_m - margin - span;
    let start = if hi > margin { rng.random_range(margin..hi) } else { margin };

    // Dense jittered pass bracketing [start, start + span].
    let raw_dx = spacing * cfg.acquisition_ratio;
    let first = start - raw_dx;
    let n_raw = ((span + 2.0 * raw_dx) / raw_dx).ceil() as usize + 1;
    let g = &cfg.geometry;
    let mut traces = Vec::with_capacity(n_raw);
    for k in 0..n_raw {
        let jitter = if k == 0 || k + 1 == n_raw || cfg.position_jitter == 0.0 {
            0.0
        } else {
            rng.random_range(-cfg.position_jitter..cfg.position_jitter) * raw_dx
        };
        let x = first + k as f64 * raw_dx + jitter;
        traces.push(simulate_ascan_with(scene, x, g.dt_s, g.n_samples, rng)?);
    }
    let traces = preprocess::preprocess_all(&traces, p)?;
    let prev = normalize(&bscan_at(&traces, start, width, spacing)?);
    let cur = normalize(&bscan_at(&traces, start + delta, width, spacing)?);
    Ok(OdomPair {
        prev,
        cur,
        label: delta,
        trajectory: trajectory.to_string(),
    })
}

/// Generates `count` labelled pairs from one scene drawn from `seed`. Pair
/// `i` depends only on `(seed, i)`, so the result is independent of thread
/// count.
pub fn generate_pairs(
    cfg: &PairConfig,
    count: usize,
    seed: u64,
    trajectory: &str,
) -> Result<Vec<OdomPair>, DatagenError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        cfg.motion
            .validate(cfg.preprocess.bscan_width, cfg.preprocess.trace_spacing_m)?;
        return Err(DatagenError::Config(errs.join("; ")));
    }
    let scene = cfg.scene.sample(cfg.geometry.center_freq_hz, derive_seed(seed, u64::MAX));
    let labels = sample_motions(&cfg.motion, count, seed);
    crate::par::map_range(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, i as u64), 1));
        make_pair(&scene, cfg, labels[i], &mut rng, trajectory)
    })
    .into_iter()
    .collect()
}
