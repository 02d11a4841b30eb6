//! Digital Butterworth bandpass as a cascade of second-order sections,
//! designed through the bilinear transform with frequency prewarping.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::PreprocessError;

/// Second-order section `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        (self.b[0] + zinv * self.b[1] + z2 * self.b[2]) / (1.0 + zinv * self.a[0] + z2 * self.a[1])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state transposed-direct-form state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[1] * g]
    }
}

#[derive(Debug, Clone)]
pub struct BandpassFilter {
    sections: Vec<Section>,
    fs: f64,
    center_hz: f64,
}

impl BandpassFilter {
    /// Order-`order` Butterworth bandpass between `f_lo` and `f_hi` (Hz) at
    /// sample rate `fs`. The resulting filter has `order` sections.
    pub fn design(order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Result<Self, PreprocessError> {
        let nyquist = fs / 2.0;
        if order == 0 {
            return Err(PreprocessError::Config("filter order must be at least 1".into()));
        }
        if !(f_lo > 0.0 && f_lo < f_hi && f_hi < nyquist) {
            return Err(PreprocessError::Band { f_lo, f_hi, nyquist });
        }
        // Bilinear transform at normalised rate 2 (so 2·fs = 4).
        let k2 = 4.0;
        let warp = |f: f64| k2 * (PI * f / nyquist / 2.0).tan();
        let (wl, wh) = (warp(f_lo), warp(f_hi));
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();

        let n = order as f64;
        let mut digital_poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let m = -(order as f64) + 1.0 + 2.0 * k as f64;
            let proto = -Complex64::from_polar(1.0, PI * m / (2.0 * n));
            let lp = proto * (bw / 2.0);
            let root = (lp * lp - w0 * w0).sqrt();
            for s in [lp + root, lp - root] {
                digital_poles.push((k2 + s) / (k2 - s));
            }
        }

        let tol = 1e-12;
        let mut complex: Vec<Complex64> = digital_poles.iter().copied().filter(|p| p.im > tol).collect();
        let mut real: Vec<f64> = digital_poles
            .iter()
            .filter(|p| p.im.abs() <= tol)
            .map(|p| p.re)
            .collect();
        complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.sort_by(|a, b| a.total_cmp(b));
        if complex.len() * 2 + real.len() != 2 * order || real.len() % 2 != 0 {
            return Err(PreprocessError::Config("unbalanced pole set in filter design".into()));
        }

        let numerator = [1.0, 0.0, -1.0];
        let mut sections: Vec<Section> = complex
            .iter()
            .map(|p| Section {
                b: numerator,
                a: [-2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            sections.push(Section {
                b: numerator,
                a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
            });
        }

        // Unit gain at the centre frequency.
        let omega0 = 2.0 * (w0 / k2).atan();
        let center_hz = omega0 / PI * nyquist;
        let mut filter = Self {
            sections,
            fs,
            center_hz,
        };
        let g = filter.response(center_hz).norm();
        let per = g.powf(-1.0 / order as f64);
        for s in &mut filter.sections {
            s.b.iter_mut().for_each(|b| *b *= per);
        }
        Ok(filter)
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn center_hz(&self) -> f64 {
        self.center_hz
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    /// Complex single-pass response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    /// Single causal pass from the given initial states.
    fn run(&self, x: &mut [f64], init: Option<f64>) {
        let mut scale = 1.0;
        for s in &self.sections {
            let mut z = match init {
                Some(x0) => {
                    let st = s.step_state();
                    [st[0] * scale * x0, st[1] * scale * x0]
                }
                None => [0.0, 0.0],
            };
            scale *= s.dc_gain();
            for v in x.iter_mut() {
                let xi = *v;
                let y = s.b[0] * xi + z[0];
                z[0] = s.b[1] * xi - s.a[0] * y + z[1];
                z[1] = s.b[2] * xi - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Single causal pass from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, None);
        y
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        if len > 0 {
            x[0] = 1.0;
        }
        self.filter(&x)
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions. Output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let ntaps = 2 * self.sections.len() + 1;
        let pad = (3 * ntaps).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, Some(first));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn fft_mag(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf.iter().map(|c| c.norm()).collect()
    }

    fn db(m: f64) -> f64 {
        20.0 * m.log10()
    }

    #[test]
    fn cutoffs_are_minus_three_db_from_impulse_spectrum() {
        let fs = 10_000.0;
        for order in [1, 2, 4, 6] {
            let f = BandpassFilter::design(order, 1000.0, 4000.0, fs).unwrap();
            let spec = fft_mag(&f.impulse_response(10_000));
            // bin k sits at k Hz for a 10 000-point transform at 10 kHz
            for bin in [1000, 4000] {
                let gain = db(spec[bin]);
                assert!((gain + 3.0103).abs() <= 0.2, "order {order} bin {bin}: {gain} dB");
            }
            let centre = f.center_hz().round() as usize;
            assert!(db(spec[centre]).abs() < 0.05);
        }
    }

    #[test]
    fn analytic_response_matches_fft() {
        let f = BandpassFilter::design(3, 500.0, 2500.0, 10_000.0).unwrap();
        let spec = fft_mag(&f.impulse_response(10_000));
        for bin in [200, 500, 1200, 2500, 4000] {
            assert!((f.response(bin as f64).norm() - spec[bin]).abs() < 1e-6);
        }
    }

    #[test]
    fn dc_is_rejected() {
        let f = BandpassFilter::design(4, 100.0, 800.0, 2000.0).unwrap();
        let x = vec![3.5; 400];
        let y = f.filtfilt(&x);
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3 * 3.5, "max {max}");
    }

    #[test]
    fn centre_sine_keeps_amplitude() {
        let fs = 1000.0;
        let f = BandpassFilter::design(4, 50.0, 400.0, fs).unwrap();
        let fc = f.center_hz();
        let x: Vec<f64> = (0..2000).map(|k| (2.0 * PI * fc * k as f64 / fs).sin()).collect();
        let y = f.filtfilt(&x);
        let trimmed = &y[200..1800];
        let amp = trimmed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.05, "amplitude {amp}");
    }

    #[test]
    fn filtfilt_is_zero_phase() {
        let fs = 1000.0;
        let f = BandpassFilter::design(2, 20.0, 300.0, fs).unwrap();
        let mut x = vec![0.0; 401];
        x[200] = 1.0;
        let y = f.filtfilt(&x);
        for k in 1..150 {
            assert!((y[200 + k] - y[200 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn filtfilt_matches_reference_values() {
        // reference: scipy.signal.sosfiltfilt(butter(2, [0.2, 0.7], 'band'), x, padlen=15)
        let x: Vec<f64> = (0..40)
            .map(|k| {
                let k = k as f64;
                (0.7 * k).sin() + 0.3 * (2.1 * k).cos() + 0.05 * k
            })
            .collect();
        let f = BandpassFilter::design(2, 0.1, 0.35, 1.0).unwrap();
        let y = f.filtfilt(&x);
        let expect = [
            (0, 0.0003910612279766079),
            (5, -0.27303418766879173),
            (13, 0.09897726381706928),
            (22, 0.08093425725686043),
            (39, 0.0031480008896481726),
        ];
        for (k, v) in expect {
            assert!((y[k] - v).abs() < 1e-10, "sample {k}: {} vs {v}", y[k]);
        }
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(BandpassFilter::design(4, 0.0, 100.0, 1000.0).is_err());
        assert!(BandpassFilter::design(4, 200.0, 100.0, 1000.0).is_err());
        assert!(BandpassFilter::design(4, 100.0, 500.0, 1000.0).is_err());
        assert!(BandpassFilter::design(0, 100.0, 200.0, 1000.0).is_err());
    }
}
