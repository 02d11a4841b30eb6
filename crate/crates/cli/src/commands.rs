use std::path::{Path, PathBuf};

use gpr_odom::datagen::{
    derive_seed, generate_dataset, load_dataset, load_trajectories, load_trajectory, save_dataset, split,
    write_trajectory, Dataset, DatasetConfig, SplitSpec, TrajectoryRecord,
};
use gpr_odom::fusion::{
    distances_from_model, fuse_record, overall_weighted, simulate_scenario, state_times, write_svg,
    write_trajectory_csv, FusionConfig, FusionResult, ScenarioConfig,
};
use gpr_odom::odomnet::{NetConfig, OdomNet, Variant};
use gpr_odom::preprocess::io::{read_traces, save_bscans};
use gpr_odom::preprocess::{assemble_bscan, preprocess_all, AScan, PreprocessConfig};
use gpr_odom::trainer::{
    dataset_hash, evaluate_relative, load_model, run_ablation, save_model, train as train_net, variant_label,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{load, RunConfig};
use crate::run::RunDir;
use crate::{CliError, Globals};

fn prefixed(prefix: &str, errs: Vec<String>) -> Vec<String> {
    errs.into_iter().map(|e| format!("{prefix}.{e}")).collect()
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Number of fusion trajectories written beside the pair dataset.
    pub scenarios: usize,
    pub scenario: ScenarioConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            dataset: DatasetConfig::default(),
            scenarios: 2,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig for SimulateConfig {
    fn check(&self) -> Vec<String> {
        let mut e = prefixed("dataset", self.dataset.validate());
        if self.scenarios > 0 {
            e.extend(prefixed("scenario", self.scenario.check()));
        }
        e
    }

    fn notes() -> &'static str {
        "Writes dataset/ (pairs.bin, pairs.csv) and trajectories/<name>/ with gpr.csv, imu.csv, wheel.csv,\nground_truth.csv and gpr_odom.csv."
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessRunConfig {
    pub input: Option<PathBuf>,
    /// Defaults to `positions.csv` beside a traces CSV.
    pub positions: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
}

impl Default for PreprocessRunConfig {
    fn default() -> Self {
        Self {
            input: None,
            positions: None,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl RunConfig for PreprocessRunConfig {
    fn check(&self) -> Vec<String> {
        let mut e = prefixed("preprocess", self.preprocess.validate());
        match &self.input {
            None => e.push("input: required (or pass --input)".into()),
            Some(p) if !p.exists() => e.push(format!("input: {} does not exist", p.display())),
            _ => {}
        }
        e
    }

    fn notes() -> &'static str {
        "Writes bscans.bin (binary tensor container) and bscans.csv (index, origin_m, samples, width)."
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: u64,
    /// Dataset directory written by `simulate`; generated from `dataset`
    /// when absent.
    pub data: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            data: None,
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn check_training(data: &Option<PathBuf>, dataset: &DatasetConfig, net: &NetConfig, train: &TrainConfig) -> Vec<String> {
    let mut e = Vec::new();
    match data {
        None => e.extend(prefixed("dataset", dataset.validate())),
        Some(p) if !p.is_dir() => e.push(format!("data: {} is not a directory", p.display())),
        _ => {}
    }
    e.extend(prefixed("net", net.check()));
    e.extend(prefixed("train", train.check()));
    if train.checkpoint.is_some() {
        e.push("train.checkpoint: written to the run directory; leave unset".into());
    }
    e
}

const SPLIT_NOTE: &str = "An empty split.test holds out the last fifth of the trajectories (at least one).\ntrain.variant selects the network variant; net.variant is set from it.";

impl RunConfig for TrainRunConfig {
    fn alternatives() -> Vec<Self> {
        let mut alt = Self::default();
        alt.train.optimizer = gpr_odom::autonn::OptimizerConfig::sgd(0.01);
        vec![alt]
    }

    fn check(&self) -> Vec<String> {
        check_training(&self.data, &self.dataset, &self.net, &self.train)
    }

    fn notes() -> &'static str {
        SPLIT_NOTE
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            checkpoint: None,
            data: None,
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

impl RunConfig for EvalRunConfig {
    fn check(&self) -> Vec<String> {
        let mut e = Vec::new();
        match &self.checkpoint {
            None => e.push("checkpoint: required (or pass --checkpoint)".into()),
            Some(p) if !p.is_file() => e.push(format!("checkpoint: {} is not a file", p.display())),
            _ => {}
        }
        match &self.data {
            None => e.extend(prefixed("dataset", self.dataset.validate())),
            Some(p) if !p.is_dir() => e.push(format!("data: {} is not a directory", p.display())),
            _ => {}
        }
        e
    }

    fn notes() -> &'static str {
        "An empty split.test evaluates every pair."
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
}

impl Default for AblateRunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            data: None,
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl RunConfig for AblateRunConfig {
    fn alternatives() -> Vec<Self> {
        let mut alt = Self::default();
        alt.train.optimizer = gpr_odom::autonn::OptimizerConfig::sgd(0.01);
        vec![alt]
    }

    fn check(&self) -> Vec<String> {
        let mut e = check_training(&self.data, &self.dataset, &self.net, &self.train);
        if self.variants.is_empty() {
            e.push("variants: list at least one variant".into());
        }
        e
    }

    fn notes() -> &'static str {
        SPLIT_NOTE
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseRunConfig {
    pub seed: u64,
    /// Directory of trajectory directories; simulated when absent.
    pub trajectories: Option<PathBuf>,
    /// Network checkpoint supplying GPR distances.
    pub checkpoint: Option<PathBuf>,
    pub scenarios: usize,
    pub scenario: ScenarioConfig,
    pub fusion: FusionConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for FuseRunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            trajectories: None,
            checkpoint: None,
            scenarios: 3,
            scenario: ScenarioConfig::default(),
            fusion: FusionConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl RunConfig for FuseRunConfig {
    fn check(&self) -> Vec<String> {
        let mut e = prefixed("fusion", self.fusion.check());
        match &self.trajectories {
            None => {
                e.extend(prefixed("scenario", self.scenario.check()));
                if self.scenarios == 0 {
                    e.push("scenarios: must be at least 1".into());
                }
            }
            Some(p) if !p.is_dir() => e.push(format!("trajectories: {} is not a directory", p.display())),
            _ => {}
        }
        if let Some(p) = &self.checkpoint {
            if !p.is_file() {
                e.push(format!("checkpoint: {} is not a file", p.display()));
            }
            e.extend(prefixed("preprocess", self.preprocess.validate()));
        }
        e
    }

    fn notes() -> &'static str {
        "Each trajectory is solved twice: with every sensor and without GPR factors (the baseline).\nA checkpoint switches on scenario.gpr_traces for simulated trajectories.\nWrites <name>/trajectory.csv, <name>/baseline.csv, <name>/paths.svg, metrics.csv and metrics.json."
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub title: String,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            title: "Trajectories".into(),
        }
    }
}

impl RunConfig for PlotConfig {
    fn check(&self) -> Vec<String> {
        Vec::new()
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn simulate(g: &Globals) -> Result<PathBuf, CliError> {
    let cfg: SimulateConfig = load(g.config.as_deref(), |c: &mut SimulateConfig| {
        if let Some(s) = g.seed {
            c.seed = s;
        }
    })?;
    let ds = generate_dataset(&cfg.dataset, cfg.seed)?;
    let hash = dataset_hash(&ds);
    let run = RunDir::create(&g.out, "simulate", &cfg, cfg.seed, Some(hash), g.quiet)?;
    save_dataset(&run.file("dataset"), &ds)?;
    run.note(format!("{} pairs over {} trajectories", ds.len(), ds.trajectories().len()));
    for i in 0..cfg.scenarios {
        let name = format!("scenario_{i:02}");
        let rec = simulate_scenario(&cfg.scenario, &name, derive_seed(cfg.seed, 100 + i as u64))?;
        write_trajectory(&run.file("trajectories").join(&name), &rec)?;
    }
    Ok(run.path)
}

pub fn preprocess(g: &Globals, input: Option<PathBuf>, positions: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let cfg: PreprocessRunConfig = load(g.config.as_deref(), |c: &mut PreprocessRunConfig| {
        if input.is_some() {
            c.input = input;
        }
        if positions.is_some() {
            c.positions = positions;
        }
    })?;
    let input = cfg.input.clone().expect("checked");
    let traces = if input.is_dir() {
        let rec = load_trajectory(&input)?;
        if rec.gpr.is_empty() {
            return Err(CliError::Run(format!(
                "{}: no GPR traces in gpr.csv (simulate with scenario.gpr_traces = true)",
                input.display()
            )));
        }
        let dt = rec
            .gpr_dt_s
            .ok_or_else(|| CliError::Run(format!("{}: GPR sample interval unknown", input.display())))?;
        rec.gpr
            .iter()
            .map(|t| AScan::new(t.samples.clone(), dt, 0.0, Some(t.along_track_m)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let pos = cfg.positions.clone().unwrap_or_else(|| input.with_file_name("positions.csv"));
        read_traces(&input, &pos)?
    };
    let run = RunDir::create(&g.out, "preprocess", &cfg, 0, None, g.quiet)?;
    let clean = preprocess_all(&traces, &cfg.preprocess)?;
    let scans = assemble_bscan(&clean, &cfg.preprocess)?;
    save_bscans(&run.file("bscans.bin"), &scans)?;
    let mut index = String::from("index,origin_m,samples,width\n");
    for (i, b) in scans.iter().enumerate() {
        index.push_str(&format!("{i},{},{},{}\n", b.origin, b.samples, b.width));
    }
    run.write("bscans.csv", index)?;
    run.note(format!("{} traces -> {} B-scans", traces.len(), scans.len()));
    Ok(run.path)
}

fn dataset_for(data: &Option<PathBuf>, cfg: &DatasetConfig, seed: u64) -> Result<Dataset, CliError> {
    Ok(match data {
        Some(dir) => load_dataset(dir)?,
        None => generate_dataset(cfg, seed)?,
    })
}

/// Fills an empty test list with the last fifth of the trajectories.
fn resolve_split(spec: &SplitSpec, ds: &Dataset) -> Result<SplitSpec, CliError> {
    if !spec.test.is_empty() {
        return Ok(spec.clone());
    }
    let names = ds.trajectories();
    if names.len() < 2 {
        return Err(CliError::Run("need at least two trajectories to hold one out".into()));
    }
    Ok(SplitSpec {
        train: spec.train.clone(),
        ..SplitSpec::last_fifth(&names)
    })
}

fn seed_override(seed: Option<u64>, top: &mut u64, train: &mut TrainConfig) {
    if let Some(s) = seed {
        *top = s;
        train.seed = s;
    }
}

#[derive(Serialize)]
struct TrainMetrics {
    test_rmse_m: f64,
    mean_predictor_rmse_m: f64,
    ratio: f64,
    best_epoch: usize,
    epochs_run: usize,
    stopped_early: bool,
    test_pairs: usize,
}

pub fn train(g: &Globals, data: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let mut cfg: TrainRunConfig = load(g.config.as_deref(), |c: &mut TrainRunConfig| {
        seed_override(g.seed, &mut c.seed, &mut c.train);
        if data.is_some() {
            c.data = data;
        }
        c.net.variant = c.train.variant;
    })?;
    let ds = dataset_for(&cfg.data, &cfg.dataset, cfg.seed)?;
    cfg.split = resolve_split(&cfg.split, &ds)?;
    let (train_set, test_set) = split(&ds.pairs, &cfg.split)?;
    let run = RunDir::create(&g.out, "train", &cfg, cfg.seed, Some(dataset_hash(&ds)), g.quiet)?;
    run.note(format!(
        "training {} on {} pairs, testing on {}",
        cfg.train.variant.id(),
        train_set.len(),
        test_set.len()
    ));
    let out = train_net(&train_set, &cfg.net, &cfg.train)?;
    save_model(&run.file("model.bin"), &out.net)?;
    out.history.write_csv(&run.file("history.csv"))?;
    let report = evaluate_relative(&out.net, &test_set)?;
    report.write_csv(&run.file("eval.csv"))?;
    let mean = train_set.iter().map(|p| p.label).sum::<f64>() / train_set.len() as f64;
    let baseline = (test_set.iter().map(|p| (p.label - mean).powi(2)).sum::<f64>() / test_set.len() as f64).sqrt();
    let metrics = TrainMetrics {
        test_rmse_m: report.overall_rmse,
        mean_predictor_rmse_m: baseline,
        ratio: report.overall_rmse / baseline,
        best_epoch: out.history.best_epoch,
        epochs_run: out.history.epochs.len(),
        stopped_early: out.history.stopped_early,
        test_pairs: report.count,
    };
    run.write("metrics.json", serde_json::to_string_pretty(&metrics).expect("metrics serialise"))?;
    run.note(format!(
        "test RMSE {:.2} cm (mean predictor {:.2} cm)",
        100.0 * report.overall_rmse,
        100.0 * baseline
    ));
    Ok(run.path)
}

pub fn eval(g: &Globals, checkpoint: Option<PathBuf>, data: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let cfg: EvalRunConfig = load(g.config.as_deref(), |c: &mut EvalRunConfig| {
        if let Some(s) = g.seed {
            c.seed = s;
        }
        if checkpoint.is_some() {
            c.checkpoint = checkpoint;
        }
        if data.is_some() {
            c.data = data;
        }
    })?;
    let net = load_model(cfg.checkpoint.as_deref().expect("checked"))?;
    let ds = dataset_for(&cfg.data, &cfg.dataset, cfg.seed)?;
    let test = if cfg.split.test.is_empty() {
        ds.pairs.clone()
    } else {
        split(&ds.pairs, &cfg.split)?.1
    };
    let run = RunDir::create(&g.out, "eval", &cfg, cfg.seed, Some(dataset_hash(&ds)), g.quiet)?;
    let report = evaluate_relative(&net, &test)?;
    report.write_csv(&run.file("eval.csv"))?;
    run.note(format!("{} pairs, RMSE {:.2} cm", report.count, 100.0 * report.overall_rmse));
    Ok(run.path)
}

pub fn ablate(g: &Globals, data: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let mut cfg: AblateRunConfig = load(g.config.as_deref(), |c: &mut AblateRunConfig| {
        seed_override(g.seed, &mut c.seed, &mut c.train);
        if data.is_some() {
            c.data = data;
        }
    })?;
    let ds = dataset_for(&cfg.data, &cfg.dataset, cfg.seed)?;
    cfg.split = resolve_split(&cfg.split, &ds)?;
    let run = RunDir::create(&g.out, "ablate", &cfg, cfg.seed, Some(dataset_hash(&ds)), g.quiet)?;
    let report = run_ablation(&ds, &cfg.split, &cfg.net, &cfg.train, &cfg.variants)?;
    report.write_csv(&run.file("ablation.csv"))?;
    for row in &report.rows {
        row.report.write_csv(&run.file(&format!("eval_{}.csv", row.variant.id())))?;
        run.note(format!(
            "{:<22} {:>8} params  RMSE {:.2} cm",
            variant_label(row.variant),
            row.parameters,
            100.0 * row.report.overall_rmse
        ));
    }
    Ok(run.path)
}

#[derive(Serialize)]
struct FuseRow {
    trajectory: String,
    path_length_m: f64,
    ate_m: Option<f64>,
    baseline_ate_m: Option<f64>,
    gpr_factors: usize,
    iterations: usize,
    final_cost: f64,
}

#[derive(Serialize)]
struct FuseMetrics {
    trajectories: Vec<FuseRow>,
    overall_ate_m: Option<f64>,
    baseline_overall_ate_m: Option<f64>,
}

fn weighted(rows: &[FuseRow], pick: impl Fn(&FuseRow) -> Option<f64>) -> Result<Option<f64>, CliError> {
    let vals: Option<Vec<f64>> = rows.iter().map(&pick).collect();
    match vals {
        Some(v) if !v.is_empty() => {
            let lengths: Vec<f64> = rows.iter().map(|r| r.path_length_m).collect();
            Ok(Some(overall_weighted(&v, &lengths)?))
        }
        _ => Ok(None),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn fuse(g: &Globals, trajectories: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let cfg: FuseRunConfig = load(g.config.as_deref(), |c: &mut FuseRunConfig| {
        if let Some(s) = g.seed {
            c.seed = s;
        }
        if trajectories.is_some() {
            c.trajectories = trajectories;
        }
        if checkpoint.is_some() {
            c.checkpoint = checkpoint;
        }
        if c.checkpoint.is_some() {
            c.scenario.gpr_traces = true;
        }
    })?;
    let net: Option<OdomNet> = cfg.checkpoint.as_deref().map(load_model).transpose()?;
    let records: Vec<TrajectoryRecord> = match &cfg.trajectories {
        Some(dir) => load_trajectories(dir)?,
        None => (0..cfg.scenarios)
            .map(|i| simulate_scenario(&cfg.scenario, &format!("scenario_{i:02}"), derive_seed(cfg.seed, 100 + i as u64)))
            .collect::<Result<_, _>>()?,
    };
    if records.is_empty() {
        return Err(CliError::Run("no trajectories to fuse".into()));
    }
    let run = RunDir::create(&g.out, "fuse", &cfg, cfg.seed, None, g.quiet)?;
    let mut baseline_cfg = cfg.fusion.clone();
    baseline_cfg.sensors.gpr = false;
    let mut rows = Vec::new();
    for rec in &records {
        let distances = match &net {
            Some(net) => {
                let times = state_times(rec, &cfg.fusion)?;
                distances_from_model(rec, net, &cfg.preprocess, &times)?
            }
            None => rec.gpr_odom.clone().unwrap_or_default(),
        };
        let fused = fuse_record(rec, &distances, &cfg.fusion)?;
        let base = fuse_record(rec, &[], &baseline_cfg)?;
        let dir = run.file(&rec.name);
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &fused.times, &fused.states)?;
        write_trajectory_csv(&dir.join("baseline.csv"), &base.times, &base.states)?;
        let xy = |r: &FusionResult| r.states.iter().map(|s| (s.x, s.y)).collect::<Vec<_>>();
        let truth: Vec<(f64, f64)> = rec.ground_truth.iter().map(|p| (p.x_m, p.y_m)).collect();
        write_svg(
            &dir.join("paths.svg"),
            &rec.name,
            &[
                ("ground truth", "#222222", truth),
                ("imu + wheel", "#d95f02", xy(&base)),
                ("imu + wheel + gpr", "#1b9e77", xy(&fused)),
            ],
        )?;
        run.note(format!(
            "{}: ATE {} m (baseline {} m), {} GPR factors",
            rec.name,
            opt(fused.ate_m.map(|v| (v * 1e4).round() / 1e4)),
            opt(base.ate_m.map(|v| (v * 1e4).round() / 1e4)),
            fused.gpr_factors
        ));
        rows.push(FuseRow {
            trajectory: rec.name.clone(),
            path_length_m: fused.path_length_m,
            ate_m: fused.ate_m,
            baseline_ate_m: base.ate_m,
            gpr_factors: fused.gpr_factors,
            iterations: fused.report.iterations,
            final_cost: fused.report.final_cost,
        });
    }
    let metrics = FuseMetrics {
        overall_ate_m: weighted(&rows, |r| r.ate_m)?,
        baseline_overall_ate_m: weighted(&rows, |r| r.baseline_ate_m)?,
        trajectories: rows,
    };
    let mut csv = String::from("trajectory,path_length_m,ate_m,baseline_ate_m,gpr_factors,iterations,final_cost\n");
    for r in &metrics.trajectories {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.trajectory,
            r.path_length_m,
            opt(r.ate_m),
            opt(r.baseline_ate_m),
            r.gpr_factors,
            r.iterations,
            r.final_cost
        ));
    }
    let total: f64 = metrics.trajectories.iter().map(|r| r.path_length_m).sum();
    csv.push_str(&format!(
        "overall,{total},{},{},,,\n",
        opt(metrics.overall_ate_m),
        opt(metrics.baseline_overall_ate_m)
    ));
    run.write("metrics.csv", csv)?;
    run.write("metrics.json", serde_json::to_string_pretty(&metrics).expect("metrics serialise"))?;
    Ok(run.path)
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#222222"];

fn read_xy(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let header = rdr.headers().map_err(|e| io(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Run(format!("{}: no '{name}' column", path.display())))
    };
    let (xi, yi) = (col("x_m")?, col("y_m")?);
    let mut pts = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io(path, e))?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::Run(format!("{}: row {}: bad number", path.display(), r + 1)))
        };
        pts.push((num(xi)?, num(yi)?));
    }
    Ok(pts)
}

pub fn plot(g: &Globals, inputs: Vec<PathBuf>) -> Result<PathBuf, CliError> {
    let cfg: PlotConfig = load(g.config.as_deref(), |_| {})?;
    let series: Vec<(String, Vec<(f64, f64)>)> = inputs
        .iter()
        .map(|p| {
            let label = match (p.parent().and_then(|d| d.file_name()), p.file_stem()) {
                (Some(d), Some(s)) => format!("{}/{}", d.to_string_lossy(), s.to_string_lossy()),
                (None, Some(s)) => s.to_string_lossy().into_owned(),
                _ => p.display().to_string(),
            };
            read_xy(p).map(|pts| (label, pts))
        })
        .collect::<Result<_, _>>()?;
    let run = RunDir::create(&g.out, "plot", &cfg, 0, None, g.quiet)?;
    let refs: Vec<(&str, &str, Vec<(f64, f64)>)> = series
        .iter()
        .enumerate()
        .map(|(i, (l, pts))| (l.as_str(), PALETTE[i % PALETTE.len()], pts.clone()))
        .collect();
    write_svg(&run.file("plot.svg"), &cfg.title, &refs)?;
    Ok(run.path)
}
