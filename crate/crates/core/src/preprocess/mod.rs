//! A-scan conditioning chain (bandpass, SEC gain, dewow, wavelet denoise)
//! and distance-uniform B-scan assembly.

pub mod bscan;
pub mod butterworth;
pub mod io;
pub mod wavelet;

use serde::{Deserialize, Serialize};

pub use bscan::{assemble_bscan, bscan_at, normalize, BScan};
pub use butterworth::BandpassFilter;
pub use wavelet::WaveletFamily;

pub const MIN_TRACE_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("band [{f_lo}, {f_hi}] Hz must satisfy 0 < f_lo < f_hi < nyquist ({nyquist} Hz)")]
    Band { f_lo: f64, f_hi: f64, nyquist: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{what} needs at least {needed} samples, trace has {len}")]
    TooShort { len: usize, needed: usize, what: String },
    #[error("trace positions must be strictly monotone (violated at trace {index})")]
    NonMonotone { index: usize },
    #[error("along-track span {span} m is shorter than the {needed} m a B-scan needs")]
    InsufficientSpan { span: f64, needed: f64 },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// One radar trace: amplitude against two-way travel time.
#[derive(Debug, Clone, PartialEq)]
pub struct AScan {
    pub samples: Vec<f64>,
    /// Sample interval (s).
    pub dt: f64,
    /// Time of the first sample (s).
    pub t0: f64,
    /// Along-track coordinate (m), once known.
    pub position: Option<f64>,
}

impl AScan {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64, position: Option<f64>) -> Result<Self, PreprocessError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(PreprocessError::Trace(format!("dt must be positive, got {dt}")));
        }
        if samples.len() < MIN_TRACE_LEN {
            return Err(PreprocessError::Trace(format!(
                "trace has {} samples, need at least {MIN_TRACE_LEN}",
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            dt,
            t0,
            position,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassConfig {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub order: usize,
}

/// Spreading and exponential compensation:
/// `g(t) = (t / t_ref)^p · exp(α t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecConfig {
    /// Attenuation compensation α (1/s).
    pub alpha_per_s: f64,
    /// Spreading exponent p.
    pub spreading_exponent: f64,
    /// Time treated as zero travel time (s).
    pub time_zero_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdRule {
    Universal,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletConfig {
    pub family: WaveletFamily,
    pub levels: usize,
    pub threshold: ThresholdRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bandpass: BandpassConfig,
    pub sec: SecConfig,
    /// Running-mean window in samples (odd, ≥ 3).
    pub dewow_window: usize,
    pub wavelet: WaveletConfig,
    /// B-scan width L in columns.
    pub bscan_width: usize,
    /// Along-track distance between B-scan columns (m).
    pub trace_spacing_m: f64,
    /// Column offset between consecutive B-scan windows.
    pub window_stride: usize,
}

impl PreprocessConfig {
    /// Defaults for traces of `n_samples` at interval `dt` whose dominant
    /// echo frequency is `dominant_hz`: order-4 band over 0.1–0.8 of
    /// Nyquist, p = 1 with α giving 20 dB at the last sample, a dewow
    /// window of about three dominant periods, and a 4-level Db4 universal
    /// soft threshold.
    pub fn default_for(dt: f64, n_samples: usize, dominant_hz: f64) -> Self {
        let nyquist = 0.5 / dt;
        let t_max = dt * (n_samples.max(2) - 1) as f64;
        let period_samples = (1.0 / (dominant_hz * dt)).max(1.0);
        let mut window = (3.0 * period_samples).round() as usize;
        window = window.clamp(3, n_samples.max(3));
        if window % 2 == 0 {
            window = if window + 1 <= n_samples { window + 1 } else { window - 1 };
        }
        Self {
            bandpass: BandpassConfig {
                f_lo_hz: 0.1 * nyquist,
                f_hi_hz: 0.8 * nyquist,
                order: 4,
            },
            sec: SecConfig {
                alpha_per_s: 10f64.ln() / t_max,
                spreading_exponent: 1.0,
                time_zero_s: 0.0,
            },
            dewow_window: window.max(3),
            wavelet: WaveletConfig {
                family: WaveletFamily::Db4,
                levels: 4,
                threshold: ThresholdRule::Universal,
            },
            bscan_width: 64,
            trace_spacing_m: 0.02,
            window_stride: 32,
        }
    }

    /// Every violated constraint, keyed by config path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let b = &self.bandpass;
        if !(b.f_lo_hz > 0.0 && b.f_lo_hz < b.f_hi_hz) {
            errs.push("bandpass.f_lo_hz: must satisfy 0 < f_lo_hz < f_hi_hz".to_string());
        }
        if b.order < 1 {
            errs.push("bandpass.order: must be at least 1".to_string());
        }
        if self.sec.alpha_per_s < 0.0 {
            errs.push("sec.alpha_per_s: must be non-negative".to_string());
        }
        if self.sec.spreading_exponent < 0.0 {
            errs.push("sec.spreading_exponent: must be non-negative".to_string());
        }
        if self.dewow_window < 3 || self.dewow_window % 2 == 0 {
            errs.push("dewow_window: must be odd and at least 3".to_string());
        }
        if self.wavelet.levels < 1 {
            errs.push("wavelet.levels: must be at least 1".to_string());
        }
        if let ThresholdRule::Fixed { value } = self.wavelet.threshold {
            if value < 0.0 {
                errs.push("wavelet.threshold.value: must be non-negative".to_string());
            }
        }
        if self.bscan_width < 2 {
            errs.push("bscan_width: must be at least 2".to_string());
        }
        if !(self.trace_spacing_m > 0.0) {
            errs.push("trace_spacing_m: must be positive".to_string());
        }
        if self.window_stride < 1 {
            errs.push("window_stride: must be at least 1".to_string());
        }
        errs
    }
}

impl Default for PreprocessConfig {
    /// Defaults matched to the synthetic simulator's trace geometry.
    fn default() -> Self {
        let sim = crate::datagen::TraceGeometry::default();
        Self::default_for(sim.dt_s, sim.n_samples, sim.center_freq_hz)
    }
}

/// Zero-phase Butterworth bandpass.
pub fn butterworth_bandpass(trace: &AScan, cfg: &BandpassConfig) -> Result<AScan, PreprocessError> {
    let filter = BandpassFilter::design(cfg.order, cfg.f_lo_hz, cfg.f_hi_hz, trace.sample_rate())?;
    Ok(trace.with_samples(filter.filtfilt(&trace.samples)))
}

/// Gain applied to sample `k` of `trace` under `cfg`.
pub fn sec_gain_curve(trace: &AScan, cfg: &SecConfig) -> Vec<f64> {
    let times: Vec<f64> = (0..trace.len())
        .map(|k| (trace.t0 + k as f64 * trace.dt - cfg.time_zero_s).max(0.0))
        .collect();
    let t_ref = times.iter().copied().find(|&t| t > 0.0).unwrap_or(1.0);
    times
        .iter()
        .map(|&t| (t / t_ref).powf(cfg.spreading_exponent) * (cfg.alpha_per_s * t).exp())
        .collect()
}

/// Time-varying spreading and exponential compensation gain.
pub fn sec_gain(trace: &AScan, cfg: &SecConfig) -> Result<AScan, PreprocessError> {
    if cfg.alpha_per_s < 0.0 || cfg.spreading_exponent < 0.0 {
        return Err(PreprocessError::Config(format!(
            "SEC parameters must be non-negative (alpha {}, p {})",
            cfg.alpha_per_s, cfg.spreading_exponent
        )));
    }
    let gain = sec_gain_curve(trace, cfg);
    Ok(trace.with_samples(trace.samples.iter().zip(&gain).map(|(s, g)| s * g).collect()))
}

/// Subtracts a running mean of `window` samples. The window is centred
/// where it fits and slides inward at the trace ends so that it always
/// spans exactly `window` samples.
pub fn dewow(trace: &AScan, window: usize) -> Result<AScan, PreprocessError> {
    let n = trace.len();
    if window < 3 || window % 2 == 0 || window > n {
        return Err(PreprocessError::Config(format!(
            "dewow window must be odd and within [3, {n}], got {window}"
        )));
    }
    let half = window / 2;
    let x = &trace.samples;
    let out = (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - window);
            let mean = x[start..start + window].iter().sum::<f64>() / window as f64;
            x[i] - mean
        })
        .collect();
    Ok(trace.with_samples(out))
}

pub fn wavelet_denoise(trace: &AScan, cfg: &WaveletConfig) -> Result<AScan, PreprocessError> {
    let n = trace.len();
    let rule = cfg.threshold;
    let out = wavelet::denoise(&trace.samples, cfg.family, cfg.levels, |finest| match rule {
        ThresholdRule::Universal => wavelet::universal_threshold(finest, n),
        ThresholdRule::Fixed { value } => value,
    })?;
    Ok(trace.with_samples(out))
}

/// Bandpass → SEC gain → dewow → wavelet denoise.
pub fn preprocess_chain(trace: &AScan, cfg: &PreprocessConfig) -> Result<AScan, PreprocessError> {
    let t = butterworth_bandpass(trace, &cfg.bandpass)?;
    let t = sec_gain(&t, &cfg.sec)?;
    let t = dewow(&t, cfg.dewow_window)?;
    wavelet_denoise(&t, &cfg.wavelet)
}

/// Runs the chain over many traces, in parallel when enabled.
pub fn preprocess_all(traces: &[AScan], cfg: &PreprocessConfig) -> Result<Vec<AScan>, PreprocessError> {
    crate::par::map_slice(traces, |t| preprocess_chain(t, cfg))
        .into_iter()
        .collect()
}
