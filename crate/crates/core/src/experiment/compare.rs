//! Side-by-side comparison of two runs' final records.

use std::path::Path;

use crate::error::{Error, Result};

use super::mean_std;

/// Columns of a finals file that are not metrics.
const NON_METRIC: [&str; 3] = ["seed", "n_samples", "convention_id"];

/// Parsed `finals.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl FinalsTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn metric_names(&self) -> Vec<&str> {
        self.header
            .iter()
            .map(String::as_str)
            .filter(|h| !NON_METRIC.contains(h))
            .collect()
    }

    fn seed(&self, row: usize) -> Option<&str> {
        self.column("seed").map(|c| self.rows[row][c].as_str())
    }

    fn value(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let s = &self.rows[row][col];
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| Error::Schema(format!("non-numeric {:?} in column {}", s, self.header[col])))
    }

    fn conventions(&self) -> Vec<&str> {
        let mut v: Vec<&str> = match self.column("convention_id") {
            Some(c) => self.rows.iter().map(|r| r[c].as_str()).collect(),
            None => Vec::new(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Reads `finals.csv` from a run directory, or the given CSV file.
pub fn read_finals(path: &Path) -> Result<FinalsTable> {
    let file = if path.is_dir() { path.join("finals.csv") } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::Schema(format!("{} has no finals.csv", path.display())));
    }
    let mut r = csv::Reader::from_path(&file)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Schema(format!("{} has no rows", file.display())));
    }
    Ok(FinalsTable { header, rows })
}

/// One metric of a comparison. `delta = mean_b − mean_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub delta: f64,
    /// `+`, `-` or `0`.
    pub sign: char,
    /// Paired seeds on which B is strictly better (lower NLL, higher BLEU).
    pub b_better: usize,
    pub paired: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics: Vec<MetricDelta>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "mean_a", "mean_b", "delta", "sign", "b_better", "paired_seeds"])
            .expect("in-memory write");
        for m in &self.metrics {
            w.write_record([
                m.metric.clone(),
                m.mean_a.to_string(),
                m.mean_b.to_string(),
                m.delta.to_string(),
                m.sign.to_string(),
                m.b_better.to_string(),
                m.paired.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn get(&self, metric: &str) -> Option<&MetricDelta> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

fn lower_is_better(metric: &str) -> bool {
    metric.starts_with("nll")
}

/// Per-metric deltas, signs and paired-seed wins of `b` over `a`.
pub fn compare(a: &FinalsTable, b: &FinalsTable) -> Result<Comparison> {
    if a.header != b.header {
        return Err(Error::Schema(format!(
            "columns differ: [{}] vs [{}]",
            a.header.join(","),
            b.header.join(",")
        )));
    }
    let (ca, cb) = (a.conventions(), b.conventions());
    if ca != cb {
        return Err(Error::Schema(format!("BLEU conventions differ: {ca:?} vs {cb:?}")));
    }
    let mut metrics = Vec::new();
    for name in a.metric_names() {
        let col = a.column(name).expect("listed column");
        let va: Vec<Option<f64>> = (0..a.rows.len()).map(|r| a.value(r, col)).collect::<Result<_>>()?;
        let vb: Vec<Option<f64>> = (0..b.rows.len()).map(|r| b.value(r, col)).collect::<Result<_>>()?;
        let fa: Vec<f64> = va.iter().flatten().copied().collect();
        let fb: Vec<f64> = vb.iter().flatten().copied().collect();
        if fa.is_empty() && fb.is_empty() {
            continue;
        }
        if fa.is_empty() || fb.is_empty() {
            return Err(Error::Schema(format!("metric {name} present in only one report")));
        }
        let (mean_a, _) = mean_std(&fa);
        let (mean_b, _) = mean_std(&fb);
        let delta = mean_b - mean_a;
        let sign = if delta > 0.0 {
            '+'
        } else if delta < 0.0 {
            '-'
        } else {
            '0'
        };
        let mut b_better = 0;
        let mut paired = 0;
        for (ra, x) in va.iter().enumerate() {
            let Some(seed) = a.seed(ra) else { break };
            let Some(rb) = (0..b.rows.len()).find(|&r| b.seed(r) == Some(seed)) else {
                continue;
            };
            if let (Some(x), Some(y)) = (x, vb[rb]) {
                paired += 1;
                let better = if lower_is_better(name) { y < *x } else { y > *x };
                b_better += usize::from(better);
            }
        }
        metrics.push(MetricDelta {
            metric: name.to_string(),
            mean_a,
            mean_b,
            delta,
            sign,
            b_better,
            paired,
        });
    }
    Ok(Comparison { metrics })
}
