//! im2col convolution kernels (cross-correlation, no kernel flip).

use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with `op` selecting a
/// transpose via the stride pair.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![0.0; g.n * g.o * p];
    par::for_each_chunk(&mut out, g.o * p, |n, out_n| {
        let mut cols = vec![0.0; k * p];
        im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        gemm(g.o, k, p, w, false, &cols, false, 0.0, out_n);
        if let Some(b) = b {
            for (oc, row) in out_n.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
    });
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub fn backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    // Per-sample partials, reduced afterwards in sample order.
    let per_sample = par::map_range(g.n, |n| {
        let dout_n = &dout[n * g.o * p..(n + 1) * g.o * p];
        let mut cols = vec![0.0; k * p];
        let dw_n = if want_dw {
            im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
            let mut dw_n = vec![0.0; g.o * k];
            gemm(g.o, p, k, dout_n, false, &cols, true, 0.0, &mut dw_n);
            Some(dw_n)
        } else {
            None
        };
        let dx_n = if want_dx {
            gemm(k, g.o, p, w, true, dout_n, false, 0.0, &mut cols);
            let mut dx_n = vec![0.0; g.in_len()];
            col2im(g, &cols, &mut dx_n);
            Some(dx_n)
        } else {
            None
        };
        (dx_n, dw_n)
    });
    let mut dx = want_dx.then(|| Vec::with_capacity(g.n * g.in_len()));
    let mut dw = want_dw.then(|| vec![0.0; g.o * k]);
    for (dx_n, dw_n) in per_sample {
        if let (Some(dx), Some(dx_n)) = (dx.as_mut(), dx_n) {
            dx.extend_from_slice(&dx_n);
        }
        if let (Some(dw), Some(dw_n)) = (dw.as_mut(), dw_n) {
            dw.iter_mut().zip(&dw_n).for_each(|(a, b)| *a += b);
        }
    }
    let db = want_db.then(|| {
        let mut db = vec![0.0; g.o];
        for n in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                let base = (n * g.o + oc) * p;
                *acc += dout[base..base + p].iter().sum::<f64>();
            }
        }
        db
    });
    ConvGrads { dx, dw, db }
}
