use std::fs;
use std::path::{Path, PathBuf};

use super::{csv_writer, io_err, CampaignError};

/// Cross-seed statistics of `log10(regret)` after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub mean_log10_regret: f64,
    pub q05: f64,
    pub q95: f64,
    pub n_seeds: usize,
}

/// Regret after the initial design and after each iteration, read from a
/// per-seed trial CSV (the last row of each iteration).
pub fn read_regret_trace(path: &Path) -> Result<Vec<f64>, CampaignError> {
    let fmt = |reason: String| CampaignError::Format { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| fmt(format!("no `{name}` column")));
    let (ic, rc) = (col("iteration")?, col("regret")?);
    let mut trace: Vec<f64> = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        let bad = |what: &str| fmt(format!("row {}: bad {what}", line + 2));
        let k: usize = row[ic].parse().map_err(|_| bad("iteration"))?;
        let r: f64 = row[rc].parse().map_err(|_| bad("regret"))?;
        if k + 1 < trace.len() || k > trace.len() {
            return Err(bad("iteration order"));
        }
        if k == trace.len() {
            trace.push(r);
        } else {
            trace[k] = r;
        }
    }
    Ok(trace)
}

fn log10_regret(r: f64) -> f64 {
    // Exact (or round-off negative) regret maps to −∞; only plots clamp it.
    if r <= 0.0 {
        f64::NEG_INFINITY
    } else {
        r.log10()
    }
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted
/// data. Interpolating towards an infinite order statistic yields it.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    let frac = h - lo as f64;
    if frac == 0.0 || a == b {
        a
    } else if a.is_infinite() {
        a
    } else if b.is_infinite() {
        b
    } else {
        a + frac * (b - a)
    }
}

/// Per-iteration statistics over seeds; iteration `k` uses the seeds whose
/// traces reach it. A seed with no feasible trial yet contributes `+∞`,
/// which dominates the mean.
pub fn aggregate(traces: &[Vec<f64>]) -> Vec<AggregateRow> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let mut logs: Vec<f64> = traces.iter().filter_map(|t| t.get(k)).map(|&r| log10_regret(r)).collect();
            logs.sort_by(f64::total_cmp);
            let mean = if logs.iter().any(|v| *v == f64::INFINITY) {
                f64::INFINITY
            } else {
                logs.iter().sum::<f64>() / logs.len() as f64
            };
            AggregateRow { iteration: k, mean_log10_regret: mean, q05: quantile(&logs, 0.05), q95: quantile(&logs, 0.95), n_seeds: logs.len() }
        })
        .collect()
}

pub fn write_aggregate(rows: &[AggregateRow]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["iteration", "mean_log10_regret", "q05", "q95", "n_seeds"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.iteration.to_string(), r.mean_log10_regret.to_string(), r.q05.to_string(), r.q95.to_string(), r.n_seeds.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Aggregate every `seed-*.csv` in `dir`, in file-name order.
pub fn aggregate_dir(dir: &Path) -> Result<Vec<AggregateRow>, CampaignError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("seed-") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CampaignError::Format { path: dir.to_path_buf(), reason: "no seed-*.csv files".into() });
    }
    let traces = files.iter().map(|f| read_regret_trace(f)).collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(&traces))
}
