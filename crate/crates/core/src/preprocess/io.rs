//! Trace ingestion (`time_s` + one column per trace, with a `positions.csv`
//! sidecar) and the binary B-scan store.

use std::path::Path;

use super::{AScan, BScan, PreprocessError};
use crate::autonn::{checkpoint, Tensor};

fn io_err(path: &Path, msg: impl ToString) -> PreprocessError {
    PreprocessError::Io {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Reads traces from `traces_csv` and their along-track positions from
/// `positions_csv` (`trace_index,along_track_m`).
pub fn read_traces(traces_csv: &Path, positions_csv: &Path) -> Result<Vec<AScan>, PreprocessError> {
    let mut rdr = csv::Reader::from_path(traces_csv).map_err(|e| io_err(traces_csv, e))?;
    let headers = rdr.headers().map_err(|e| io_err(traces_csv, e))?.clone();
    if headers.get(0).map(str::trim) != Some("time_s") {
        return Err(io_err(traces_csv, "first column must be time_s"));
    }
    let n_traces = headers.len() - 1;
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); n_traces];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(traces_csv, e))?;
        let parse = |i: usize| -> Result<f64, PreprocessError> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| io_err(traces_csv, format!("row {}: bad value in column {i}", row + 1)))
        };
        times.push(parse(0)?);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse(c + 1)?);
        }
    }
    if times.len() < 2 {
        return Err(io_err(traces_csv, "need at least two time samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;

    let mut positions = vec![None; n_traces];
    let mut prdr = csv::Reader::from_path(positions_csv).map_err(|e| io_err(positions_csv, e))?;
    for (row, rec) in prdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(positions_csv, e))?;
        let idx: usize = rec
            .get(0)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| io_err(positions_csv, format!("row {}: bad trace_index", row + 1)))?;
        let pos: f64 = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| io_err(positions_csv, format!("row {}: bad along_track_m", row + 1)))?;
        if idx >= n_traces {
            return Err(io_err(positions_csv, format!("trace_index {idx} out of range")));
        }
        positions[idx] = Some(pos);
    }
    columns
        .into_iter()
        .zip(positions)
        .enumerate()
        .map(|(i, (samples, pos))| {
            let pos = pos.ok_or_else(|| io_err(positions_csv, format!("no position for trace {i}")))?;
            AScan::new(samples, dt, times[0], Some(pos))
        })
        .collect()
}

/// Writes traces in the ingestion layout.
pub fn write_traces(traces: &[AScan], traces_csv: &Path, positions_csv: &Path) -> Result<(), PreprocessError> {
    let mut w = csv::Writer::from_path(traces_csv).map_err(|e| io_err(traces_csv, e))?;
    let mut header = vec!["time_s".to_string()];
    header.extend((0..traces.len()).map(|i| format!("trace_{i}")));
    w.write_record(&header).map_err(|e| io_err(traces_csv, e))?;
    let n = traces.first().map_or(0, |t| t.len());
    for k in 0..n {
        let mut row = vec![format!("{:e}", traces[0].t0 + k as f64 * traces[0].dt)];
        row.extend(traces.iter().map(|t| format!("{:e}", t.samples[k])));
        w.write_record(&row).map_err(|e| io_err(traces_csv, e))?;
    }
    w.flush().map_err(|e| io_err(traces_csv, e))?;
    let mut p = csv::Writer::from_path(positions_csv).map_err(|e| io_err(positions_csv, e))?;
    p.write_record(["trace_index", "along_track_m"]).map_err(|e| io_err(positions_csv, e))?;
    for (i, t) in traces.iter().enumerate() {
        p.write_record([i.to_string(), format!("{:e}", t.position.unwrap_or(0.0))])
            .map_err(|e| io_err(positions_csv, e))?;
    }
    p.flush().map_err(|e| io_err(positions_csv, e))?;
    Ok(())
}

/// Each B-scan becomes a 2-D record `bscan_NNNNNN` plus a 3-element
/// `bscan_NNNNNN.meta` record holding `[dt, trace_spacing, origin]`.
pub fn save_bscans(path: &Path, scans: &[BScan]) -> Result<(), PreprocessError> {
    let mut records = Vec::with_capacity(scans.len() * 2);
    for (i, b) in scans.iter().enumerate() {
        let name = format!("bscan_{i:06}");
        let t = Tensor::new(&[b.samples, b.width], b.data.clone()).map_err(|e| io_err(path, e))?;
        records.push((name.clone(), t));
        records.push((
            format!("{name}.meta"),
            Tensor::from_vec(vec![b.dt, b.trace_spacing, b.origin]),
        ));
    }
    checkpoint::save(path, &records).map_err(|e| io_err(path, e))
}

pub fn load_bscans(path: &Path) -> Result<Vec<BScan>, PreprocessError> {
    let records = checkpoint::load(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut iter = records.into_iter().peekable();
    while let Some((name, t)) = iter.next() {
        if name.ends_with(".meta") || t.rank() != 2 {
            continue;
        }
        let meta = match iter.peek() {
            Some((m, mt)) if *m == format!("{name}.meta") && mt.len() == 3 => mt.data().to_vec(),
            _ => return Err(io_err(path, format!("missing metadata for {name}"))),
        };
        let (samples, width) = (t.shape()[0], t.shape()[1]);
        out.push(BScan {
            samples,
            width,
            data: t.into_data(),
            dt: meta[0],
            trace_spacing: meta[1],
            origin: meta[2],
        });
    }
    Ok(out)
}
