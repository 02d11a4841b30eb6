//! Periodised orthogonal discrete wavelet transform and soft-threshold
//! denoising.

use serde::{Deserialize, Serialize};

use super::PreprocessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    Haar,
    /// Daubechies wavelet with four vanishing moments (8 taps).
    Db4,
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

impl WaveletFamily {
    /// Scaling (low-pass) filter.
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Self::Haar => &HAAR,
            Self::Db4 => &DB4,
        }
    }

    /// Wavelet (high-pass) filter, the quadrature mirror of the low-pass.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|j| if j % 2 == 0 { h[l - 1 - j] } else { -h[l - 1 - j] })
            .collect()
    }
}

/// One analysis level on an even-length periodic signal.
pub fn dwt_step(x: &[f64], family: WaveletFamily) -> (Vec<f64>, Vec<f64>) {
    let h = family.lowpass();
    let g = family.highpass();
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        for (j, (&hj, &gj)) in h.iter().zip(&g).enumerate() {
            let v = x[(2 * k + j) % n];
            a[k] += hj * v;
            d[k] += gj * v;
        }
    }
    (a, d)
}

/// Inverse of [`dwt_step`].
pub fn idwt_step(a: &[f64], d: &[f64], family: WaveletFamily) -> Vec<f64> {
    let h = family.lowpass();
    let g = family.highpass();
    let n = a.len() * 2;
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for (j, (&hj, &gj)) in h.iter().zip(&g).enumerate() {
            x[(2 * k + j) % n] += hj * a[k] + gj * d[k];
        }
    }
    x
}

/// Multi-level decomposition: returns the coarsest approximation and the
/// detail bands ordered finest first. `x.len()` must be divisible by
/// `2^levels`.
pub fn decompose(x: &[f64], family: WaveletFamily, levels: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = dwt_step(&approx, family);
        details.push(d);
        approx = a;
    }
    (approx, details)
}

pub fn reconstruct(approx: &[f64], details: &[Vec<f64>], family: WaveletFamily) -> Vec<f64> {
    details
        .iter()
        .rev()
        .fold(approx.to_vec(), |a, d| idwt_step(&a, d, family))
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}

/// Universal threshold `σ·√(2 ln N)` with `σ` estimated from the median
/// absolute deviation of the finest detail band.
pub fn universal_threshold(finest: &[f64], n: usize) -> f64 {
    let mut abs: Vec<f64> = finest.iter().map(|v| v.abs()).collect();
    let sigma = median(&mut abs) / 0.6745;
    sigma * (2.0 * (n.max(2) as f64).ln()).sqrt()
}

/// Decomposes, soft-thresholds every detail band with `threshold(finest)`,
/// and reconstructs. Signals whose length is not a multiple of `2^levels`
/// are symmetrically extended and cropped back.
pub fn denoise(
    x: &[f64],
    family: WaveletFamily,
    levels: usize,
    threshold: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>, PreprocessError> {
    let n = x.len();
    if levels == 0 {
        return Err(PreprocessError::Config("wavelet levels must be at least 1".into()));
    }
    let block = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| PreprocessError::Config(format!("{levels} wavelet levels is too many")))?;
    if n < block {
        return Err(PreprocessError::TooShort {
            len: n,
            needed: block,
            what: format!("{levels}-level wavelet decomposition"),
        });
    }
    let padded_len = n.div_ceil(block) * block;
    let mut padded = x.to_vec();
    for i in 0..padded_len - n {
        padded.push(x[n - 1 - (i % n)]);
    }
    let (approx, mut details) = decompose(&padded, family, levels);
    let t = threshold(&details[0]);
    for band in &mut details {
        band.iter_mut().for_each(|v| *v = soft_threshold(*v, t));
    }
    let mut y = reconstruct(&approx, &details, family);
    y.truncate(n);
    Ok(y)
}
