//! Multi-seed experiment runner and report tooling.
//!
//! `run` writes, under the configured output directory:
//!
//! ```text
//! config.txt              verbatim copy of the config file
//! overrides.txt           command-line overrides, if any
//! test.txt                the test corpus
//! seed_<s>/curve.csv      one row per epoch
//! seed_<s>/final.csv      final metric record
//! seed_<s>/checkpoint/    config.txt, generator.bin, discriminator.bin,
//!                         rng_state.txt, vocab.txt, oracle.bin (synthetic)
//! finals.csv              final record of every seed
//! aggregate.csv           mean and sample std of each metric over seeds
//! curves.png              NLL curves of every seed
//! ```

mod compare;
pub mod plot;

pub use compare::{compare, read_finals, Comparison, FinalsTable, MetricDelta};

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{TrainConfig, TrainingPath};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::metrics::{evaluate_checkpoint, MetricRecord};
use crate::oracle::OracleModel;
use crate::seg_relgan::train_relgan;
use crate::seg_rl::train_seqgan;
use crate::training::{seeded, EpochRow, Stream, TrainData, TrainOutcome};
use crate::corpus::{encode_corpus, read_lines, write_lines, Vocab};

use plot::{line_plot, Series, PALETTE};

/// Curve and final record of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    pub final_record: MetricRecord,
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    /// `None` with fewer than two seeds.
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seeds: Vec<SeedReport>,
    pub aggregate: Vec<AggregateRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_header(relaxed: bool) -> Vec<&'static str> {
    let mut h = vec!["epoch", "phase", "nll_oracle", "nll_gen", "d_loss", "g_objective", "wall_s"];
    if relaxed {
        h.push("temperature");
    }
    h
}

/// Writes a training curve CSV.
pub fn write_curve(path: &Path, rows: &[EpochRow], relaxed: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(curve_header(relaxed))?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.phase.as_str().to_string(),
            fmt_opt(r.nll_oracle),
            r.nll_gen.to_string(),
            fmt_opt(r.d_loss),
            fmt_opt(r.g_objective),
            fmt_opt(r.wall_s),
        ];
        if relaxed {
            rec.push(fmt_opt(r.temperature));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_records(path: &Path, seeded_records: &[(Option<u64>, &MetricRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_seed = seeded_records.iter().any(|(s, _)| s.is_some());
    let mut header: Vec<&str> = Vec::new();
    if with_seed {
        header.push("seed");
    }
    header.extend(MetricRecord::COLUMNS);
    w.write_record(&header)?;
    for (seed, rec) in seeded_records {
        let mut fields = Vec::new();
        if with_seed {
            fields.push(seed.map(|s| s.to_string()).unwrap_or_default());
        }
        fields.extend(rec.fields());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one metric record (no seed column).
pub fn write_metric_record(path: &Path, rec: &MetricRecord) -> Result<()> {
    write_records(path, &[(None, rec)])
}

/// Numeric metrics of a record, by column name.
pub fn metric_values(rec: &MetricRecord) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("bleu2", Some(rec.bleu[0])),
        ("bleu3", Some(rec.bleu[1])),
        ("bleu4", Some(rec.bleu[2])),
        ("bleu5", Some(rec.bleu[3])),
        ("nll_gen", Some(rec.nll_gen)),
        ("nll_oracle", rec.nll_oracle),
    ]
}

/// Mean and sample standard deviation (n − 1) of `values`.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Aggregates final records over seeds; metrics absent in any seed are
/// skipped.
pub fn aggregate(records: &[&MetricRecord]) -> Vec<AggregateRow> {
    if records.is_empty() {
        return Vec::new();
    }
    metric_values(records[0])
        .into_iter()
        .filter_map(|(name, _)| {
            let vals: Option<Vec<f64>> = records
                .iter()
                .map(|r| metric_values(r).into_iter().find(|(n, _)| *n == name).and_then(|(_, v)| v))
                .collect();
            let vals = vals?;
            let (mean, std) = mean_std(&vals);
            Some(AggregateRow {
                metric: name.to_string(),
                mean,
                std,
                n: vals.len(),
            })
        })
        .collect()
}

fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "mean", "std", "n"])?;
    for r in rows {
        w.write_record([r.metric.clone(), r.mean.to_string(), fmt_opt(r.std), r.n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(dir: &Path, cfg: &TrainConfig, data: &TrainData, out: &TrainOutcome) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    out.generator.save(&dir.join("generator.bin"))?;
    out.discriminator.save(&dir.join("discriminator.bin"))?;
    data.vocab.save(&dir.join("vocab.txt"))?;
    if let Some(o) = &data.oracle {
        o.save(&dir.join("oracle.bin"))?;
    }
    let rng = &out.rng;
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    write_text(
        &dir.join("rng_state.txt"),
        &format!(
            "algorithm = chacha8\nseed = {seed}\nstream = {}\nword_pos = {}\n",
            rng.get_stream(),
            rng.get_word_pos()
        ),
    )
}

/// Trains one seed on the configured path.
pub fn train_one(cfg: &TrainConfig, data: &TrainData, seed: u64) -> Result<TrainOutcome> {
    match cfg.path {
        TrainingPath::PolicyGradient => train_seqgan(cfg, data, cfg.variant, seed),
        TrainingPath::Relaxed => train_relgan(cfg, data, cfg.variant, seed),
    }
}

/// Final metric record of a trained generator for `seed`.
pub fn final_record(cfg: &TrainConfig, data: &TrainData, gen: &GeneratorModel, seed: u64) -> MetricRecord {
    let mut rng = seeded(seed, Stream::FinalEval);
    evaluate_checkpoint(gen, &data.test, data.oracle.as_ref(), cfg.eval_samples, &mut rng)
}

fn plot_curves(path: &Path, cfg: &TrainConfig, seeds: &[SeedReport]) -> Result<()> {
    let mut series = Vec::new();
    for (k, s) in seeds.iter().enumerate() {
        let shade = |c: [u8; 3]| {
            let f = 1.0 - 0.5 * k as f64 / seeds.len().max(1) as f64;
            c.map(|v| (255.0 - (255.0 - v as f64) * f).round() as u8)
        };
        series.push(Series {
            label: "nll_gen".into(),
            points: s.rows.iter().map(|r| (r.epoch as f64, r.nll_gen)).collect(),
            color: shade(PALETTE[0]),
        });
        if s.rows.iter().any(|r| r.nll_oracle.is_some()) {
            series.push(Series {
                label: "nll_oracle".into(),
                points: s
                    .rows
                    .iter()
                    .filter_map(|r| r.nll_oracle.map(|v| (r.epoch as f64, v)))
                    .collect(),
                color: shade(PALETTE[1]),
            });
        }
    }
    let title = format!("{} / {}", cfg.path.as_str(), cfg.variant.as_str());
    line_plot(path, &title, "epoch", "nll (nats)", &series)
}

/// Runs every seed of `cfg`. `config_text` is copied verbatim into the
/// output directory. On a training failure the partial outputs (curve,
/// checkpoint of the last good state, finals of completed seeds) are written
/// before the error is returned.
pub fn run(cfg: &TrainConfig, config_text: &str, overrides: &[String]) -> Result<RunReport> {
    cfg.validate()?;
    let data = TrainData::prepare(cfg)?;
    let out = &cfg.output;
    create_dir(out)?;
    write_text(&out.join("config.txt"), config_text)?;
    let overrides_path = out.join("overrides.txt");
    if overrides.is_empty() {
        if overrides_path.exists() {
            fs::remove_file(&overrides_path).map_err(|e| Error::io(&overrides_path, e))?;
        }
    } else {
        write_text(&overrides_path, &(overrides.join("\n") + "\n"))?;
    }
    write_lines(&out.join("test.txt"), &data.test.to_lines(&data.vocab))?;

    let relaxed = cfg.path == TrainingPath::Relaxed;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut failure = None;
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        let outcome = train_one(cfg, &data, seed)?;
        write_curve(&dir.join("curve.csv"), &outcome.rows, relaxed)?;
        save_checkpoint(&dir.join("checkpoint"), cfg, &data, &outcome)?;
        if let Some(e) = outcome.failure {
            failure = Some(e);
            break;
        }
        let rec = final_record(cfg, &data, &outcome.generator, seed);
        write_metric_record(&dir.join("final.csv"), &rec)?;
        seeds.push(SeedReport {
            seed,
            rows: outcome.rows,
            final_record: rec,
        });
    }

    let finals: Vec<(Option<u64>, &MetricRecord)> = seeds.iter().map(|s| (Some(s.seed), &s.final_record)).collect();
    if !finals.is_empty() {
        write_records(&out.join("finals.csv"), &finals)?;
    }
    let agg = aggregate(&seeds.iter().map(|s| &s.final_record).collect::<Vec<_>>());
    write_aggregate(&out.join("aggregate.csv"), &agg)?;
    plot_curves(&out.join("curves.png"), cfg, &seeds)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunReport { seeds, aggregate: agg })
}

/// Inputs of [`eval`].
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub generator: PathBuf,
    pub test: PathBuf,
    /// Defaults to `vocab.txt` next to the generator.
    pub vocab: Option<PathBuf>,
    /// Defaults to `oracle.bin` next to the generator, when present.
    pub oracle: Option<PathBuf>,
    /// Defaults to `seq_len` of `config.txt` next to the generator, else the
    /// longest test line.
    pub max_len: Option<usize>,
    pub samples: usize,
    pub seed: u64,
}

/// Scores a saved generator against a test file.
pub fn eval(req: &EvalRequest) -> Result<MetricRecord> {
    let dir = req.generator.parent().unwrap_or(Path::new("."));
    let gen = GeneratorModel::load(&req.generator)?;
    let vocab = Vocab::load(&req.vocab.clone().unwrap_or_else(|| dir.join("vocab.txt")))?;
    if vocab.len() != gen.lm().vocab_size() {
        return Err(Error::config(
            "--vocab",
            format!("{} entries but the generator has {}", vocab.len(), gen.lm().vocab_size()),
        ));
    }
    let lines = read_lines(&req.test)?;
    if lines.is_empty() {
        return Err(Error::EmptyInput("test corpus"));
    }
    let max_len = match req.max_len {
        Some(m) => m,
        None => {
            let snapshot = dir.join("config.txt");
            let from_cfg = snapshot
                .is_file()
                .then(|| TrainConfig::load(&snapshot).ok().map(|c| c.seq_len))
                .flatten();
            from_cfg.unwrap_or_else(|| lines.iter().map(|l| l.split_whitespace().count()).max().unwrap_or(1))
        }
    };
    let test = encode_corpus(&lines, &vocab, max_len)?;
    let oracle_path = req.oracle.clone().or_else(|| Some(dir.join("oracle.bin")).filter(|p| p.is_file()));
    let oracle = oracle_path.map(|p| OracleModel::load(&p)).transpose()?;
    let mut rng = seeded(req.seed, Stream::FinalEval);
    Ok(evaluate_checkpoint(&gen, &test, oracle.as_ref(), req.samples, &mut rng))
}

/// The record as CSV text with header.
pub fn metric_record_csv(rec: &MetricRecord) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MetricRecord::COLUMNS).expect("in-memory write");
    w.write_record(rec.fields()).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(nll: f64) -> MetricRecord {
        MetricRecord {
            bleu: [0.5, 0.4, 0.3, 0.2],
            nll_gen: nll,
            nll_oracle: None,
            n_samples: 10,
            convention_id: "c".into(),
        }
    }

    #[test]
    fn aggregate_uses_the_sample_std() {
        let a = rec(1.0);
        let b = rec(3.0);
        let agg = aggregate(&[&a, &b]);
        let nll = agg.iter().find(|r| r.metric == "nll_gen").unwrap();
        assert_eq!(nll.mean, 2.0);
        assert!((nll.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(agg.iter().all(|r| r.metric != "nll_oracle"));
        let single = aggregate(&[&a]);
        assert!(single.iter().all(|r| r.std.is_none()));
    }

    #[test]
    fn record_csv_has_the_documented_columns() {
        let text = metric_record_csv(&rec(1.5));
        assert_eq!(
            text.lines().next().unwrap(),
            "bleu2,bleu3,bleu4,bleu5,nll_gen,nll_oracle,n_samples,convention_id"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,0.4,0.3,0.2,1.5,,10,c");
    }
}
