use std::path::Path;

use serde::Serialize;

use super::{io_err, train, TrainConfig, TrainError};
use crate::datagen::{split, Dataset, OdomPair, SplitSpec};
use crate::odomnet::{NetConfig, OdomNet, OdomNetError, Variant};
use crate::preprocess::BScan;

/// Anything that maps B-scan pairs to step estimates (m).
pub trait DistancePredictor {
    fn predict_pairs(&self, pairs: &[(&BScan, &BScan)]) -> Result<Vec<f64>, OdomNetError>;

    fn id(&self) -> String;
}

impl DistancePredictor for OdomNet {
    fn predict_pairs(&self, pairs: &[(&BScan, &BScan)]) -> Result<Vec<f64>, OdomNetError> {
        self.predict(pairs, 32)
    }

    fn id(&self) -> String {
        self.variant().id().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRmse {
    pub trajectory: String,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub variant: String,
    /// Unit of every RMSE in the report.
    pub unit: String,
    pub per_trajectory: Vec<TrajectoryRmse>,
    /// RMSE over the union of all test pairs.
    pub overall_rmse: f64,
    pub count: usize,
}

impl EvalReport {
    /// Builds a report from per-pair errors tagged with their trajectory.
    pub fn from_errors(variant: &str, errors: &[(String, f64)]) -> Self {
        let mut per: Vec<(String, f64, usize)> = Vec::new();
        for (name, e) in errors {
            match per.iter_mut().find(|(n, _, _)| n == name) {
                Some(slot) => {
                    slot.1 += e * e;
                    slot.2 += 1;
                }
                None => per.push((name.clone(), e * e, 1)),
            }
        }
        let total: f64 = errors.iter().map(|(_, e)| e * e).sum();
        Self {
            variant: variant.to_string(),
            unit: "m".into(),
            per_trajectory: per
                .into_iter()
                .map(|(trajectory, sq, count)| TrajectoryRmse {
                    trajectory,
                    rmse: (sq / count as f64).sqrt(),
                    count,
                })
                .collect(),
            overall_rmse: (total / errors.len().max(1) as f64).sqrt(),
            count: errors.len(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        w.write_record(["variant", "trajectory", "rmse", "count", "unit"])
            .map_err(|e| io_err(path, e))?;
        let rows = self
            .per_trajectory
            .iter()
            .map(|t| (t.trajectory.as_str(), t.rmse, t.count))
            .chain(std::iter::once(("overall", self.overall_rmse, self.count)));
        for (name, rmse, count) in rows {
            w.write_record([
                self.variant.as_str(),
                name,
                &rmse.to_string(),
                &count.to_string(),
                &self.unit,
            ])
            .map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Eval-mode RMSE per trajectory and pooled over all pairs.
pub fn evaluate_relative<P: DistancePredictor + ?Sized>(predictor: &P, test: &[OdomPair]) -> Result<EvalReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::Empty("test set"));
    }
    let refs: Vec<_> = test.iter().map(|p| (&p.prev, &p.cur)).collect();
    let preds = predictor.predict_pairs(&refs)?;
    let errors: Vec<(String, f64)> = test
        .iter()
        .zip(&preds)
        .map(|(p, y)| (p.trajectory.clone(), y - p.label))
        .collect();
    Ok(EvalReport::from_errors(&predictor.id(), &errors))
}

/// Row label used in ablation tables.
pub fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::FeatureConcat => "Feature Concatenation",
        Variant::SimilarityOnly => "Similarity Only",
        Variant::DifferenceOnly => "Difference Only",
        Variant::Full => "Full Network",
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub report: EvalReport,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// One row per variant: overall RMSE in centimetres, then one column per
    /// test trajectory.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        let trajectories: Vec<String> = self
            .rows
            .first()
            .map(|r| r.report.per_trajectory.iter().map(|t| t.trajectory.clone()).collect())
            .unwrap_or_default();
        let mut header = vec!["method".to_string(), "variant".into(), "parameters".into()];
        header.extend(trajectories.iter().map(|t| format!("{t}_rmse_cm")));
        header.push("overall_rmse_cm".into());
        w.write_record(&header).map_err(|e| io_err(path, e))?;
        for r in &self.rows {
            let mut row = vec![
                variant_label(r.variant).to_string(),
                r.variant.id().to_string(),
                r.parameters.to_string(),
            ];
            for t in &trajectories {
                let v = r.report.per_trajectory.iter().find(|p| &p.trajectory == t).map_or(f64::NAN, |p| p.rmse);
                row.push(format!("{:.3}", 100.0 * v));
            }
            row.push(format!("{:.3}", 100.0 * r.report.overall_rmse));
            w.write_record(&row).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

/// Trains and evaluates each variant on the same split with the same seed.
pub fn run_ablation(
    dataset: &Dataset,
    spec: &SplitSpec,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<AblationReport, TrainError> {
    let (train_set, test_set) = split(&dataset.pairs, spec)?;
    if test_set.is_empty() {
        return Err(TrainError::Empty("test split"));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let vcfg = TrainConfig {
            variant: v,
            checkpoint: None,
            ..cfg.clone()
        };
        let out = train(&train_set, net_cfg, &vcfg)?;
        rows.push(AblationRow {
            variant: v,
            parameters: out.net.store.trainable_count(),
            report: evaluate_relative(&out.net, &test_set)?,
            best_epoch: out.history.best_epoch,
        });
    }
    Ok(AblationReport { rows })
}
