use crate::datagen::PositionSample;

use super::FusionError;

/// Pairs each estimate with the nearest ground-truth sample in time,
/// dropping estimates with no sample within `tol_s`. Returns index pairs
/// `(estimate, truth)`.
pub fn associate(estimate: &[PositionSample], truth: &[PositionSample], tol_s: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if truth.is_empty() {
        return out;
    }
    for (i, e) in estimate.iter().enumerate() {
        let hi = truth.partition_point(|t| t.time_s < e.time_s);
        let best = [hi.checked_sub(1), (hi < truth.len()).then_some(hi)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (truth[a].time_s - e.time_s)
                    .abs()
                    .total_cmp(&(truth[b].time_s - e.time_s).abs())
            });
        if let Some(j) = best {
            if (truth[j].time_s - e.time_s).abs() <= tol_s {
                out.push((i, j));
            }
        }
    }
    out
}

/// Absolute trajectory error in metres: `sqrt(Σ (dx² + dy²) / 2T)` over the
/// T associated poses.
pub fn ate_rmse(estimate: &[PositionSample], truth: &[PositionSample], tol_s: f64) -> Result<f64, FusionError> {
    let pairs = associate(estimate, truth, tol_s);
    if pairs.is_empty() {
        return Err(FusionError::NoAssociation { tol_s });
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let (e, t) = (&estimate[i], &truth[j]);
            (e.x_m - t.x_m).powi(2) + (e.y_m - t.y_m).powi(2)
        })
        .sum();
    Ok((sum / (2.0 * pairs.len() as f64)).sqrt())
}

/// Length-weighted mean of per-trajectory errors.
pub fn overall_weighted(errors: &[f64], lengths: &[f64]) -> Result<f64, FusionError> {
    if errors.len() != lengths.len() {
        return Err(FusionError::Input(format!(
            "{} errors but {} trajectory lengths",
            errors.len(),
            lengths.len()
        )));
    }
    if errors.is_empty() {
        return Err(FusionError::Input("no trajectories to average".into()));
    }
    if lengths.iter().any(|l| !(*l >= 0.0)) {
        return Err(FusionError::Input("trajectory lengths must be non-negative".into()));
    }
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return Err(FusionError::Input("total trajectory length is zero".into()));
    }
    Ok(errors.iter().zip(lengths).map(|(e, l)| e * l).sum::<f64>() / total)
}
