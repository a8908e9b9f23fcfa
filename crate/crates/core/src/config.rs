//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Command-line
//! overrides use the same keys (`--key=value`) and are applied after the
//! file. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::seg_relgan::ScheduleShape;
use crate::seg_rl::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    /// Training and test data drawn from a random LSTM oracle.
    Synthetic,
    /// Training and test data read from text files.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingPath {
    PolicyGradient,
    Relaxed,
}

impl TrainingPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainingPath::PolicyGradient => "policy_gradient",
            TrainingPath::Relaxed => "relaxed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: DataMode,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub path: TrainingPath,
    pub variant: Variant,

    /// Sequence length `T`.
    pub seq_len: usize,
    /// Word tokens of the synthetic oracle.
    pub vocab_size: usize,
    /// Largest vocabulary accepted from a real corpus, pad and start included.
    pub vocab_cap: usize,
    pub oracle_hidden: usize,
    pub oracle_seed: u64,
    pub n_train: usize,
    pub n_test: usize,

    pub gen_hidden: usize,
    pub disc_emb: usize,
    pub disc_widths: Vec<usize>,
    pub disc_filters: usize,
    /// Scoring heads; defaults to 1 on the policy-gradient path and 2 on the
    /// relaxed path.
    pub disc_heads: Option<usize>,

    /// Overrides the middle cut derived from the average training length.
    pub cut_mid: Option<usize>,
    pub rollouts: usize,
    pub reward_baseline: bool,

    pub temperature: f64,
    pub temperature_shape: ScheduleShape,
    /// Iterations to reach the target; defaults to all adversarial g-steps.
    pub temperature_warmup: Option<usize>,

    pub pretrain_epochs: usize,
    pub disc_pretrain_steps: usize,
    pub adv_epochs: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub batch_size: usize,
    pub gen_lr_pretrain: f64,
    pub gen_lr_adv: f64,
    pub disc_lr: f64,

    pub eval_samples: usize,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: DataMode::Synthetic,
            train_path: None,
            test_path: None,
            path: TrainingPath::PolicyGradient,
            variant: Variant::TwoSegment,
            seq_len: 10,
            vocab_size: 50,
            vocab_cap: 5000,
            oracle_hidden: 32,
            oracle_seed: 0,
            n_train: 2000,
            n_test: 500,
            gen_hidden: 32,
            disc_emb: 32,
            disc_widths: vec![2, 3, 4, 5],
            disc_filters: 16,
            disc_heads: None,
            cut_mid: None,
            rollouts: 16,
            reward_baseline: false,
            temperature: 10.0,
            temperature_shape: ScheduleShape::Exponential,
            temperature_warmup: None,
            pretrain_epochs: 20,
            disc_pretrain_steps: 20,
            adv_epochs: 20,
            g_steps: 1,
            d_steps: 5,
            batch_size: 64,
            gen_lr_pretrain: 0.01,
            gen_lr_adv: 0.001,
            disc_lr: 0.001,
            eval_samples: 1000,
            seeds: vec![1],
            output: PathBuf::from("runs/default"),
            record_wall_time: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got {value:?}"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl TrainConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => {
                self.mode = match value {
                    "synthetic" => DataMode::Synthetic,
                    "real" => DataMode::Real,
                    _ => return Err(Error::config(key, "expected synthetic or real")),
                }
            }
            "train_path" => self.train_path = Some(PathBuf::from(value)),
            "test_path" => self.test_path = Some(PathBuf::from(value)),
            "path" => {
                self.path = match value {
                    "policy_gradient" => TrainingPath::PolicyGradient,
                    "relaxed" => TrainingPath::Relaxed,
                    _ => return Err(Error::config(key, "expected policy_gradient or relaxed")),
                }
            }
            "variant" => self.variant = value.parse().map_err(|e: String| Error::config(key, e))?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "oracle_hidden" => self.oracle_hidden = parse(key, value)?,
            "oracle_seed" => self.oracle_seed = parse(key, value)?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "gen_hidden" => self.gen_hidden = parse(key, value)?,
            "disc_emb" => self.disc_emb = parse(key, value)?,
            "disc_widths" => self.disc_widths = parse_list(key, value)?,
            "disc_filters" => self.disc_filters = parse(key, value)?,
            "disc_heads" => self.disc_heads = optional(key, value)?,
            "cut_mid" => self.cut_mid = optional(key, value)?,
            "rollouts" => self.rollouts = parse(key, value)?,
            "reward_baseline" => self.reward_baseline = parse_bool(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "temperature_shape" => {
                self.temperature_shape = match value {
                    "constant" => ScheduleShape::Constant,
                    "exponential" => ScheduleShape::Exponential,
                    _ => return Err(Error::config(key, "expected constant or exponential")),
                }
            }
            "temperature_warmup" => self.temperature_warmup = optional(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "disc_pretrain_steps" => self.disc_pretrain_steps = parse(key, value)?,
            "adv_epochs" => self.adv_epochs = parse(key, value)?,
            "g_steps" => self.g_steps = parse(key, value)?,
            "d_steps" => self.d_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "gen_lr_pretrain" => self.gen_lr_pretrain = parse(key, value)?,
            "gen_lr_adv" => self.gen_lr_adv = parse(key, value)?,
            "disc_lr" => self.disc_lr = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "record_wall_time" => self.record_wall_time = parse_bool(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Does not validate.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected `key = value`, got {line:?}"))
            })?;
            let value = value.split(" #").next().unwrap_or("");
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `--key=value` (or `key=value`) overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let body = o.strip_prefix("--").unwrap_or(o);
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like --key=value"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Field-level checks.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("vocab_size", self.vocab_size),
            ("vocab_cap", self.vocab_cap),
            ("oracle_hidden", self.oracle_hidden),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("gen_hidden", self.gen_hidden),
            ("disc_emb", self.disc_emb),
            ("disc_filters", self.disc_filters),
            ("rollouts", self.rollouts),
            ("g_steps", self.g_steps),
            ("d_steps", self.d_steps),
            ("batch_size", self.batch_size),
            ("eval_samples", self.eval_samples),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [
            ("gen_lr_pretrain", self.gen_lr_pretrain),
            ("gen_lr_adv", self.gen_lr_adv),
            ("disc_lr", self.disc_lr),
            ("temperature", self.temperature),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be a positive number, got {v}")));
            }
        }
        if self.temperature < 1.0 {
            return Err(Error::config("temperature", "target must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "need at least 2 word tokens"));
        }
        if self.seq_len < 2 && self.variant == Variant::TwoSegment {
            return Err(Error::config("seq_len", "two_segment needs seq_len ≥ 2"));
        }
        if self.disc_widths.is_empty() || self.disc_widths.contains(&0) {
            return Err(Error::config("disc_widths", "need a nonempty list of positive widths"));
        }
        if !self.disc_widths.iter().any(|&w| w <= self.seq_len) {
            return Err(Error::config("disc_widths", "no width fits within seq_len"));
        }
        if self.disc_heads == Some(0) {
            return Err(Error::config("disc_heads", "must be positive"));
        }
        if self.temperature_warmup == Some(0) {
            return Err(Error::config("temperature_warmup", "must be positive"));
        }
        if let Some(m) = self.cut_mid {
            if m == 0 || m >= self.seq_len {
                return Err(Error::config("cut_mid", format!("must lie in 1..{}", self.seq_len)));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.mode == DataMode::Real {
            for (field, p) in [("train_path", &self.train_path), ("test_path", &self.test_path)] {
                match p {
                    None => return Err(Error::config(field, "required in real mode")),
                    Some(p) if !p.is_file() => {
                        return Err(Error::config(field, format!("{} does not exist", p.display())))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn heads(&self) -> usize {
        self.disc_heads.unwrap_or(match self.path {
            TrainingPath::PolicyGradient => 1,
            TrainingPath::Relaxed => 2,
        })
    }

    /// Every field in canonical `key = value` form; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            DataMode::Synthetic => "synthetic",
            DataMode::Real => "real",
        };
        let shape = match self.temperature_shape {
            ScheduleShape::Constant => "constant",
            ScheduleShape::Exponential => "exponential",
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", mode.into());
        if let Some(p) = path(&self.train_path) {
            kv("train_path", p);
        }
        if let Some(p) = path(&self.test_path) {
            kv("test_path", p);
        }
        kv("path", self.path.as_str().into());
        kv("variant", self.variant.as_str().into());
        kv("seq_len", self.seq_len.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("vocab_cap", self.vocab_cap.to_string());
        kv("oracle_hidden", self.oracle_hidden.to_string());
        kv("oracle_seed", self.oracle_seed.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        kv("gen_hidden", self.gen_hidden.to_string());
        kv("disc_emb", self.disc_emb.to_string());
        kv("disc_widths", join(&self.disc_widths));
        kv("disc_filters", self.disc_filters.to_string());
        kv("disc_heads", show(&self.disc_heads));
        kv("cut_mid", show(&self.cut_mid));
        kv("rollouts", self.rollouts.to_string());
        kv("reward_baseline", self.reward_baseline.to_string());
        kv("temperature", self.temperature.to_string());
        kv("temperature_shape", shape.into());
        kv("temperature_warmup", show(&self.temperature_warmup));
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("disc_pretrain_steps", self.disc_pretrain_steps.to_string());
        kv("adv_epochs", self.adv_epochs.to_string());
        kv("g_steps", self.g_steps.to_string());
        kv("d_steps", self.d_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("gen_lr_pretrain", self.gen_lr_pretrain.to_string());
        kv("gen_lr_adv", self.gen_lr_adv.to_string());
        kv("disc_lr", self.disc_lr.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("seeds", join(&self.seeds));
        kv("output", self.output.display().to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        s
    }
}
