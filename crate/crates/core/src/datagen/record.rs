//! Per-trajectory sensor logs and their CSV directory layout.
//!
//! ```text
//! <trajectory>/gpr.csv           time_s,along_track_m,s0,...,sN
//! <trajectory>/gpr_meta.json     {"dt_s": ...}              (optional)
//! <trajectory>/imu.csv           time_s,yaw_rate,ax,ay
//! <trajectory>/wheel.csv         time_s,speed_mps
//! <trajectory>/ground_truth.csv  time_s,x_m,y_m
//! <trajectory>/gpr_odom.csv      time_s,distance_m          (optional)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatagenError;

#[derive(Debug, Clone, PartialEq)]
pub struct GprTrace {
    pub time_s: f64,
    pub along_track_m: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time_s: f64,
    /// Body yaw rate (rad/s).
    pub yaw_rate: f64,
    /// Body-frame forward acceleration (m/s²).
    pub ax: f64,
    /// Body-frame lateral acceleration (m/s²).
    pub ay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSample {
    pub time_s: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionSample {
    pub time_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

/// Distance travelled since the previous entry (the first entry's distance
/// is measured from the start of the record).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSample {
    pub time_s: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub name: String,
    /// Sample interval of the GPR traces, when known.
    pub gpr_dt_s: Option<f64>,
    pub gpr: Vec<GprTrace>,
    pub imu: Vec<ImuSample>,
    pub wheel: Vec<WheelSample>,
    pub ground_truth: Vec<PositionSample>,
    /// Precomputed GPR odometry, when available.
    pub gpr_odom: Option<Vec<DistanceSample>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GprMeta {
    dt_s: f64,
}

fn check_monotone(file: &str, times: impl Iterator<Item = f64>) -> Result<(), DatagenError> {
    let mut prev = f64::NEG_INFINITY;
    for (row, t) in times.enumerate() {
        if !t.is_finite() || t <= prev {
            return Err(DatagenError::NonMonotone {
                file: file.to_string(),
                row: row + 1,
            });
        }
        prev = t;
    }
    Ok(())
}

impl TrajectoryRecord {
    /// Time-monotone streams, consistent trace lengths, and ground truth
    /// covering every other stream. Rows are 1-based data rows.
    pub fn validate(&self) -> Result<(), DatagenError> {
        check_monotone("gpr.csv", self.gpr.iter().map(|s| s.time_s))?;
        check_monotone("imu.csv", self.imu.iter().map(|s| s.time_s))?;
        check_monotone("wheel.csv", self.wheel.iter().map(|s| s.time_s))?;
        check_monotone("ground_truth.csv", self.ground_truth.iter().map(|s| s.time_s))?;
        if let Some(odom) = &self.gpr_odom {
            check_monotone("gpr_odom.csv", odom.iter().map(|s| s.time_s))?;
        }
        if let Some(first) = self.gpr.first() {
            if let Some(i) = self.gpr.iter().position(|t| t.samples.len() != first.samples.len()) {
                return Err(DatagenError::Record(format!(
                    "{}: gpr.csv row {} has a different trace length",
                    self.name,
                    i + 1
                )));
            }
        }
        let (Some(g0), Some(g1)) = (self.ground_truth.first(), self.ground_truth.last()) else {
            return Err(DatagenError::Record(format!("{}: ground truth is empty", self.name)));
        };
        let (lo, hi) = self.time_span();
        if lo < g0.time_s || hi > g1.time_s {
            return Err(DatagenError::Record(format!(
                "{}: ground truth [{}, {}] s does not cover sensor span [{lo}, {hi}] s",
                self.name, g0.time_s, g1.time_s
            )));
        }
        Ok(())
    }

    /// Earliest and latest timestamp over all streams.
    pub fn time_span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut see = |t: f64| {
            lo = lo.min(t);
            hi = hi.max(t);
        };
        self.gpr.iter().for_each(|s| see(s.time_s));
        self.imu.iter().for_each(|s| see(s.time_s));
        self.wheel.iter().for_each(|s| see(s.time_s));
        self.ground_truth.iter().for_each(|s| see(s.time_s));
        self.gpr_odom.iter().flatten().for_each(|s| see(s.time_s));
        (lo, hi)
    }

    /// Length of the ground-truth path (m).
    pub fn path_length(&self) -> f64 {
        self.ground_truth
            .windows(2)
            .map(|w| (w[1].x_m - w[0].x_m).hypot(w[1].y_m - w[0].y_m))
            .sum()
    }
}

fn io_err(path: &Path, e: impl ToString) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), DatagenError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn strs(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

/// Reads a numeric CSV, checking that the header starts with `expected`
/// and that every row has at least `expected.len()` columns.
fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>, DatagenError> {
    if !path.exists() {
        return Err(DatagenError::MissingFile(path.display().to_string()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    for (i, name) in expected.iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*name) {
            return Err(io_err(path, format!("column {i} must be '{name}'")));
        }
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| io_err(path, format!("row {}: {e}", r + 1)))?;
        if row.len() < expected.len() {
            return Err(io_err(path, format!("row {}: too few columns", r + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `rec` into `dir` (created if needed).
pub fn write_trajectory(dir: &Path, rec: &TrajectoryRecord) -> Result<(), DatagenError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let n = rec.gpr.first().map_or(0, |t| t.samples.len());
    let mut header = strs(&["time_s", "along_track_m"]);
    header.extend((0..n).map(|i| format!("s{i}")));
    write_csv(
        &dir.join("gpr.csv"),
        &header,
        rec.gpr.iter().map(|t| {
            let mut row = vec![t.time_s, t.along_track_m];
            row.extend_from_slice(&t.samples);
            row
        }),
    )?;
    if let Some(dt_s) = rec.gpr_dt_s {
        let path = dir.join("gpr_meta.json");
        let body = serde_json::to_string_pretty(&GprMeta { dt_s }).map_err(|e| io_err(&path, e))?;
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
    }
    write_csv(
        &dir.join("imu.csv"),
        &strs(&["time_s", "yaw_rate", "ax", "ay"]),
        rec.imu.iter().map(|s| vec![s.time_s, s.yaw_rate, s.ax, s.ay]),
    )?;
    write_csv(
        &dir.join("wheel.csv"),
        &strs(&["time_s", "speed_mps"]),
        rec.wheel.iter().map(|s| vec![s.time_s, s.speed_mps]),
    )?;
    write_csv(
        &dir.join("ground_truth.csv"),
        &strs(&["time_s", "x_m", "y_m"]),
        rec.ground_truth.iter().map(|s| vec![s.time_s, s.x_m, s.y_m]),
    )?;
    if let Some(odom) = &rec.gpr_odom {
        write_csv(
            &dir.join("gpr_odom.csv"),
            &strs(&["time_s", "distance_m"]),
            odom.iter().map(|s| vec![s.time_s, s.distance_m]),
        )?;
    }
    Ok(())
}

/// Loads and validates one trajectory directory. The record is named after
/// the directory.
pub fn load_trajectory(dir: &Path) -> Result<TrajectoryRecord, DatagenError> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let gpr = read_csv(&dir.join("gpr.csv"), &["time_s", "along_track_m"])?
        .into_iter()
        .map(|r| GprTrace {
            time_s: r[0],
            along_track_m: r[1],
            samples: r[2..].to_vec(),
        })
        .collect();
    let meta_path = dir.join("gpr_meta.json");
    let gpr_dt_s = if meta_path.exists() {
        let body = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let meta: GprMeta = serde_json::from_str(&body).map_err(|e| io_err(&meta_path, e))?;
        Some(meta.dt_s)
    } else {
        None
    };
    let imu = read_csv(&dir.join("imu.csv"), &["time_s", "yaw_rate", "ax", "ay"])?
        .into_iter()
        .map(|r| ImuSample {
            time_s: r[0],
            yaw_rate: r[1],
            ax: r[2],
            ay: r[3],
        })
        .collect();
    let wheel = read_csv(&dir.join("wheel.csv"), &["time_s", "speed_mps"])?
        .into_iter()
        .map(|r| WheelSample {
            time_s: r[0],
            speed_mps: r[1],
        })
        .collect();
    let ground_truth = read_csv(&dir.join("ground_truth.csv"), &["time_s", "x_m", "y_m"])?
        .into_iter()
        .map(|r| PositionSample {
            time_s: r[0],
            x_m: r[1],
            y_m: r[2],
        })
        .collect();
    let odom_path = dir.join("gpr_odom.csv");
    let gpr_odom = if odom_path.exists() {
        Some(
            read_csv(&odom_path, &["time_s", "distance_m"])?
                .into_iter()
                .map(|r| DistanceSample {
                    time_s: r[0],
                    distance_m: r[1],
                })
                .collect(),
        )
    } else {
        None
    };
    let rec = TrajectoryRecord {
        name,
        gpr_dt_s,
        gpr,
        imu,
        wheel,
        ground_truth,
        gpr_odom,
    };
    rec.validate()?;
    Ok(rec)
}

/// Loads every subdirectory of `dir` as a trajectory, sorted by name.
pub fn load_trajectories(dir: &Path) -> Result<Vec<TrajectoryRecord>, DatagenError> {
    if !dir.is_dir() {
        return Err(DatagenError::MissingFile(dir.display().to_string()));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    subdirs.iter().map(|d| load_trajectory(d)).collect()
}
