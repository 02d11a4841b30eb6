use super::{AScan, PreprocessConfig, PreprocessError};

/// Radar image: `samples` rows (travel time) by `width` columns (distance),
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub samples: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub dt: f64,
    /// Along-track distance between columns (m).
    pub trace_spacing: f64,
    /// Along-track position of column 0 (m).
    pub origin: f64,
}

impl BScan {
    pub fn from_columns(columns: &[Vec<f64>], dt: f64, trace_spacing: f64, origin: f64) -> Self {
        let width = columns.len();
        let samples = columns.first().map_or(0, |c| c.len());
        let mut data = vec![0.0; samples * width];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * width + j] = *v;
            }
        }
        Self {
            samples,
            width,
            data,
            dt,
            trace_spacing,
            origin,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.samples).map(|r| self.at(r, col)).collect()
    }
}

/// Per-image zero mean, unit variance. A constant image becomes all zeros.
pub fn normalize(b: &BScan) -> BScan {
    let n = b.data.len().max(1) as f64;
    let mean = b.data.iter().sum::<f64>() / n;
    let var = b.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    BScan {
        data: b.data.iter().map(|v| (v - mean) * scale).collect(),
        ..b.clone()
    }
}

struct Sorted<'a> {
    positions: Vec<f64>,
    traces: Vec<&'a AScan>,
}

fn sorted_traces(traces: &[AScan]) -> Result<Sorted<'_>, PreprocessError> {
    let mut positions = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let p = t.position.ok_or_else(|| {
            PreprocessError::Trace(format!("trace {i} has no along-track position"))
        })?;
        positions.push(p);
    }
    if let Some(first) = traces.first() {
        if let Some((i, _)) = traces
            .iter()
            .enumerate()
            .find(|(_, t)| t.len() != first.len() || t.dt != first.dt)
        {
            return Err(PreprocessError::Trace(format!(
                "trace {i} differs in length or sample interval from trace 0"
            )));
        }
    }
    let mut refs: Vec<&AScan> = traces.iter().collect();
    if positions.len() >= 2 && positions[1] < positions[0] {
        positions.reverse();
        refs.reverse();
    }
    for i in 1..positions.len() {
        if !(positions[i] > positions[i - 1]) {
            return Err(PreprocessError::NonMonotone { index: i });
        }
    }
    Ok(Sorted {
        positions,
        traces: refs,
    })
}

fn interpolate(s: &Sorted<'_>, q: f64, spacing: f64) -> Vec<f64> {
    let pos = &s.positions;
    let snap = 1e-9 * spacing.max(1e-12);
    let hi = pos.partition_point(|&p| p < q);
    if hi < pos.len() && (pos[hi] - q).abs() <= snap {
        return s.traces[hi].samples.clone();
    }
    if hi > 0 && (q - pos[hi - 1]).abs() <= snap {
        return s.traces[hi - 1].samples.clone();
    }
    let hi = hi.clamp(1, pos.len() - 1);
    let lo = hi - 1;
    let w = (q - pos[lo]) / (pos[hi] - pos[lo]);
    s.traces[lo]
        .samples
        .iter()
        .zip(&s.traces[hi].samples)
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect()
}

fn columns(s: &Sorted<'_>, origin: f64, width: usize, spacing: f64) -> Vec<Vec<f64>> {
    (0..width)
        .map(|k| interpolate(s, origin + k as f64 * spacing, spacing))
        .collect()
}

/// Resamples traces onto a uniform along-track grid starting at the first
/// position and cuts it into width-L windows every `window_stride` columns.
pub fn assemble_bscan(traces: &[AScan], cfg: &PreprocessConfig) -> Result<Vec<BScan>, PreprocessError> {
    let width = cfg.bscan_width;
    let spacing = cfg.trace_spacing_m;
    if width < 2 || !(spacing > 0.0) || cfg.window_stride == 0 {
        return Err(PreprocessError::Config(
            "bscan_width ≥ 2, trace_spacing_m > 0 and window_stride ≥ 1 required".into(),
        ));
    }
    let s = sorted_traces(traces)?;
    let needed = width as f64 * spacing;
    let span = match (s.positions.first(), s.positions.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    if span < needed {
        return Err(PreprocessError::InsufficientSpan { span, needed });
    }
    let origin = s.positions[0];
    let grid_len = (span / spacing + 1e-9).floor() as usize + 1;
    let grid = columns(&s, origin, grid_len, spacing);
    let dt = s.traces[0].dt;
    let mut out = Vec::new();
    let mut start = 0;
    while start + width <= grid_len {
        out.push(BScan::from_columns(
            &grid[start..start + width],
            dt,
            spacing,
            origin + start as f64 * spacing,
        ));
        start += cfg.window_stride;
    }
    Ok(out)
}

/// One width-L B-scan whose first column sits at `origin`. The traces must
/// cover `[origin, origin + (L-1)·spacing]`.
pub fn bscan_at(traces: &[AScan], origin: f64, width: usize, spacing: f64) -> Result<BScan, PreprocessError> {
    let s = sorted_traces(traces)?;
    let end = origin + (width.max(1) - 1) as f64 * spacing;
    let (first, last) = match (s.positions.first(), s.positions.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(PreprocessError::InsufficientSpan { span: 0.0, needed: end - origin }),
    };
    let tol = 1e-9 * spacing;
    if first > origin + tol || last < end - tol || s.positions.len() < 2 {
        return Err(PreprocessError::InsufficientSpan {
            span: last - first,
            needed: end - origin,
        });
    }
    Ok(BScan::from_columns(
        &columns(&s, origin, width, spacing),
        s.traces[0].dt,
        spacing,
        origin,
    ))
}
