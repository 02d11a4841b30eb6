use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pairs::{derive_seed, generate_pairs, OdomPair, PairConfig};
use super::DatagenError;
use crate::autonn::{checkpoint, Tensor};
use crate::preprocess::BScan;

/// A set of named synthetic trajectories, each its own scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub pairs: PairConfig,
    pub trajectories: usize,
    pub pairs_per_trajectory: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pairs: PairConfig::default(),
            trajectories: 10,
            pairs_per_trajectory: 200,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut e: Vec<String> = self.pairs.validate().into_iter().map(|m| format!("pairs.{m}")).collect();
        if self.trajectories == 0 {
            e.push("trajectories: must be at least 1".into());
        }
        if self.pairs_per_trajectory == 0 {
            e.push("pairs_per_trajectory: must be at least 1".into());
        }
        e
    }
}

pub fn trajectory_name(i: usize) -> String {
    format!("synth_{i:02}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pairs: Vec<OdomPair>,
}

impl Dataset {
    /// Distinct trajectory names in order of first appearance.
    pub fn trajectories(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.pairs {
            if names.last() != Some(&p.trajectory) && !names.contains(&p.trajectory) {
                names.push(p.trajectory.clone());
            }
        }
        names
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Trajectory `i` is generated from `derive_seed(seed, i)`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset, DatagenError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(DatagenError::Config(errs.join("; ")));
    }
    let mut pairs = Vec::with_capacity(cfg.trajectories * cfg.pairs_per_trajectory);
    for t in 0..cfg.trajectories {
        pairs.extend(generate_pairs(
            &cfg.pairs,
            cfg.pairs_per_trajectory,
            derive_seed(seed, t as u64),
            &trajectory_name(t),
        )?);
    }
    Ok(Dataset { pairs })
}

fn io_err(path: &Path, e: impl ToString) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn image(b: &BScan) -> Tensor {
    Tensor::new(&[b.samples, b.width], b.data.clone()).expect("B-scan buffer matches its extents")
}

/// `pairs.bin` holds the images and `pairs.csv` indexes labels and
/// trajectories.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<(), DatagenError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::with_capacity(ds.pairs.len() * 3);
    for (i, p) in ds.pairs.iter().enumerate() {
        records.push((format!("pair_{i:06}.prev"), image(&p.prev)));
        records.push((format!("pair_{i:06}.cur"), image(&p.cur)));
        records.push((
            format!("pair_{i:06}.meta"),
            Tensor::from_vec(vec![p.prev.dt, p.prev.trace_spacing, p.prev.origin, p.cur.origin]),
        ));
    }
    let bin = dir.join("pairs.bin");
    checkpoint::save(&bin, &records).map_err(|e| io_err(&bin, e))?;
    let index = dir.join("pairs.csv");
    let mut w = csv::Writer::from_path(&index).map_err(|e| io_err(&index, e))?;
    w.write_record(["index", "trajectory", "label_m"]).map_err(|e| io_err(&index, e))?;
    for (i, p) in ds.pairs.iter().enumerate() {
        w.write_record([i.to_string(), p.trajectory.clone(), p.label.to_string()])
            .map_err(|e| io_err(&index, e))?;
    }
    w.flush().map_err(|e| io_err(&index, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatagenError> {
    let index = dir.join("pairs.csv");
    let bin = dir.join("pairs.bin");
    for p in [&index, &bin] {
        if !p.exists() {
            return Err(DatagenError::MissingFile(p.display().to_string()));
        }
    }
    let records = checkpoint::load(&bin).map_err(|e| io_err(&bin, e))?;
    let mut rdr = csv::Reader::from_path(&index).map_err(|e| io_err(&index, e))?;
    let mut pairs = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(&index, e))?;
        let bad = || io_err(&index, format!("row {}: malformed", row + 1));
        let i: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let trajectory = rec.get(1).ok_or_else(bad)?.to_string();
        let label: f64 = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let slot = |k: usize| records.get(3 * i + k).ok_or_else(|| io_err(&bin, format!("pair {i} missing")));
        let (prev, cur, meta) = (&slot(0)?.1, &slot(1)?.1, &slot(2)?.1);
        if prev.rank() != 2 || cur.shape() != prev.shape() || meta.len() != 4 {
            return Err(io_err(&bin, format!("pair {i} has inconsistent records")));
        }
        let m = meta.data();
        let scan = |t: &Tensor, origin: f64| BScan {
            samples: t.shape()[0],
            width: t.shape()[1],
            data: t.data().to_vec(),
            dt: m[0],
            trace_spacing: m[1],
            origin,
        };
        pairs.push(OdomPair {
            prev: scan(prev, m[2]),
            cur: scan(cur, m[3]),
            label,
            trajectory,
        });
    }
    Ok(Dataset { pairs })
}
