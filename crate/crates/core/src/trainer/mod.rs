//! Mini-batch training with validation-based early stopping, relative
//! distance evaluation, and the variant ablation harness.

pub mod eval;
pub mod run;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autonn::{checkpoint, Graph, Mode, Optimizer, OptimizerConfig, ParamStore};
use crate::datagen::{derive_seed, OdomPair};
use crate::odomnet::{rmse, rmse_loss, NetConfig, OdomNet, OdomNetError, Variant};

pub use eval::{evaluate_relative, run_ablation, variant_label, AblationReport, AblationRow, DistancePredictor, EvalReport, TrajectoryRmse};
pub use run::{dataset_hash, RunMetadata};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}; best parameters retained")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// Best parameters seen before the divergence.
        best: Box<OdomNet>,
        history: History,
    },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Net(#[from] OdomNetError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DatagenError),
}

impl From<crate::autonn::AutonnError> for TrainError {
    fn from(e: crate::autonn::AutonnError) -> Self {
        TrainError::Net(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Validate every `eval_every` epochs (the last epoch always validates).
    pub eval_every: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Share of training pairs held out for validation.
    pub validation_fraction: f64,
    /// Where the best parameters are written, if anywhere.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            eval_every: 1,
            patience: 10,
            validation_fraction: 0.1,
            checkpoint: None,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.epochs == 0 {
            e.push("epochs: must be at least 1".into());
        }
        if self.batch_size == 0 {
            e.push("batch_size: must be at least 1".into());
        }
        if self.eval_every == 0 {
            e.push("eval_every: must be at least 1".into());
        }
        if self.patience == 0 {
            e.push("patience: must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            e.push("validation_fraction: must lie in [0, 1)".into());
        }
        if let Err(err) = self.optimizer.validate() {
            e.push(format!("optimizer: {err}"));
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Pair-weighted mean of the batch losses (m).
    pub train_loss: f64,
    /// Validation RMSE (m); NaN on epochs that skip validation.
    pub eval_rmse: f64,
    /// Best validation RMSE so far (m).
    pub best_eval_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn io_err(path: &Path, e: impl ToString) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        w.write_record(["epoch", "train_loss_m", "eval_rmse_m", "best_eval_rmse_m"])
            .map_err(|e| io_err(path, e))?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.eval_rmse.to_string(),
                r.best_eval_rmse.to_string(),
            ])
            .map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network holding the best validation parameters.
    pub net: OdomNet,
    pub history: History,
}

/// Splits pair indices into (train, validation) deterministically.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5EED)));
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (idx, val)
}

fn batch_loss(
    net: &OdomNet,
    pairs: &[&OdomPair],
    seed: u64,
) -> Result<(f64, Graph, crate::autonn::Var), TrainError> {
    let prev: Vec<_> = pairs.iter().map(|p| &p.prev).collect();
    let cur: Vec<_> = pairs.iter().map(|p| &p.cur).collect();
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    let mut g = Graph::new();
    let a = g.constant(net.batch_input(&prev)?);
    let b = g.constant(net.batch_input(&cur)?);
    let y = net.forward(&mut g, a, b, Mode::Train, Some(seed))?;
    let loss = rmse_loss(&mut g, y, &labels)?;
    Ok((g.value(loss).item(), g, loss))
}

/// Eval-mode RMSE of `net` over `pairs`.
pub fn pair_rmse(net: &OdomNet, pairs: &[&OdomPair]) -> Result<f64, TrainError> {
    let refs: Vec<_> = pairs.iter().map(|p| (&p.prev, &p.cur)).collect();
    let preds = net.predict(&refs, 32)?;
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    Ok(rmse(&preds, &labels))
}

/// Writes the parameters to `path` and the network config beside it.
pub fn save_model(path: &Path, net: &OdomNet) -> Result<(), TrainError> {
    checkpoint::save(path, &net.store.to_records()).map_err(|e| io_err(path, e))?;
    let cfg_path = config_path(path);
    std::fs::write(&cfg_path, net.cfg.to_json()).map_err(|e| io_err(&cfg_path, e))
}

pub fn load_model(path: &Path) -> Result<OdomNet, TrainError> {
    let cfg_path = config_path(path);
    let body = std::fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let cfg = NetConfig::from_json(&body)?;
    let records = checkpoint::load(path).map_err(|e| io_err(path, e))?;
    Ok(OdomNet::from_records(cfg, &records)?)
}

fn config_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Trains `cfg.variant` on `pairs`, holding out `validation_fraction` of
/// them. The returned network carries the best-on-validation parameters
/// (the last parameters when nothing is held out).
pub fn train(pairs: &[OdomPair], net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let errs = cfg.check();
    if !errs.is_empty() {
        return Err(TrainError::Config(errs));
    }
    if pairs.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    let net_cfg = NetConfig {
        variant: cfg.variant,
        ..net_cfg.clone()
    };
    let mut net = OdomNet::new(net_cfg, derive_seed(cfg.seed, 1))?;
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let (train_idx, val_idx) = validation_split(pairs.len(), cfg.validation_fraction, cfg.seed);
    let val: Vec<&OdomPair> = val_idx.iter().map(|&i| &pairs[i]).collect();

    let mut history = History::default();
    let mut best_store: ParamStore = net.store.clone();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.clone_from(&train_idx);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64)));
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&OdomPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | b as u64);
            let (loss, mut g, lv) = batch_loss(&net, &batch, seed)?;
            if !loss.is_finite() {
                let mut best_net = net.clone();
                best_net.store = best_store;
                if let Some(path) = &cfg.checkpoint {
                    save_model(path, &best_net)?;
                }
                return Err(TrainError::Diverged {
                    epoch,
                    batch: b,
                    best: Box::new(best_net),
                    history,
                });
            }
            g.backward(lv)?;
            let grads = net.store.gradients(&g);
            opt.step(&mut net.store, &grads)?;
            net.store.apply_stat_updates(&g.take_stat_updates())?;
            sum += loss * batch.len() as f64;
        }
        let train_loss = sum / order.len() as f64;
        let validate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let eval_rmse = if !validate {
            f64::NAN
        } else if val.is_empty() {
            train_loss
        } else {
            pair_rmse(&net, &val)?
        };
        if validate {
            if eval_rmse < best || val.is_empty() {
                best = eval_rmse;
                best_store = net.store.clone();
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += cfg.eval_every;
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            eval_rmse,
            best_eval_rmse: best,
        });
        if since_best >= cfg.patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    net.store = best_store;
    if let Some(path) = &cfg.checkpoint {
        save_model(path, &net)?;
    }
    Ok(TrainOutcome { net, history })
}

#[cfg(test)]
mod tests;
