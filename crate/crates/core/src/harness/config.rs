//! Experiment configuration and its flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional and falls back to [`ExperimentConfig::default`]; unknown or
//! repeated keys are errors. Lists are comma-separated and integer ranges
//! are written `lo..hi` (inclusive).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{load_dataset, make_synthetic, LabeledSet, MissingClassPolicy, SyntheticSpec};
use crate::error::{Error, Result};
use crate::explainer::{ExplainerKind, Truncation};
use crate::model::{ModelKind, TrainConfig};
use crate::strategy::Criterion;
use crate::tuner::{IntRange, Theta, ThetaSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategySpec {
    Explanation(Criterion),
    Entropy,
    Margin,
    Random,
}

impl StrategySpec {
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Explanation(Criterion::PredDisagreeExplainSimilar) => f.write_str("explanation"),
            StrategySpec::Explanation(c) => write!(f, "explanation:{c}"),
            StrategySpec::Entropy => f.write_str("entropy"),
            StrategySpec::Margin => f.write_str("margin"),
            StrategySpec::Random => f.write_str("random"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explanation" => Ok(StrategySpec::Explanation(Criterion::default())),
            "entropy" => Ok(StrategySpec::Entropy),
            "margin" => Ok(StrategySpec::Margin),
            "random" => Ok(StrategySpec::Random),
            other => match other.strip_prefix("explanation:") {
                Some(c) => Ok(StrategySpec::Explanation(c.parse()?)),
                None => Err(Error::invalid(format!("unknown strategy {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TuneMode {
    #[default]
    Off,
    First,
    Every,
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneMode::Off => "off",
            TuneMode::First => "first",
            TuneMode::Every => "every",
        })
    }
}

impl FromStr for TuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(TuneMode::Off),
            "first" => Ok(TuneMode::First),
            "every" => Ok(TuneMode::Every),
            other => Err(Error::invalid(format!("unknown tune mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub n_orig: usize,
    pub n_inc: usize,
    pub n_test: usize,
    /// Labeling budget per iteration.
    pub b_l: usize,
    /// Explanation budget per iteration.
    pub b_e: usize,
    pub iterations: usize,
    pub strategies: Vec<StrategySpec>,
    pub model: ModelKind,
    /// `seed` is ignored; per-run seeds are derived from `seeds`.
    pub train: TrainConfig,
    pub explainer: ExplainerKind,
    pub theta: Theta,
    pub truncation: Truncation,
    pub normalize: bool,
    pub tune: TuneMode,
    pub tune_trials: usize,
    pub theta_space: ThetaSpace,
    pub validation_fraction: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub diagnostics: bool,
    pub missing_class: MissingClassPolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                confusion_fraction: 0.2,
                ..SyntheticSpec::default()
            }),
            n_orig: 100,
            n_inc: 2900,
            n_test: 2000,
            b_l: 200,
            b_e: 200,
            iterations: 5,
            strategies: vec![
                StrategySpec::Explanation(Criterion::default()),
                StrategySpec::Entropy,
                StrategySpec::Margin,
                StrategySpec::Random,
            ],
            model: ModelKind::Svm,
            train: TrainConfig::default(),
            explainer: ExplainerKind::Shapley,
            theta: Theta {
                eval_budget: 170,
                top_k: 16,
                batch_eval_limit: 64,
            },
            truncation: Truncation::Product,
            normalize: false,
            tune: TuneMode::Off,
            tune_trials: 8,
            theta_space: ThetaSpace {
                eval_budget: IntRange::new(17, 510),
                top_k: IntRange::new(1, 16),
                batch_eval_limit: IntRange::new(1, 256),
            },
            validation_fraction: 0.2,
            seeds: vec![0, 1, 2, 3],
            output_dir: PathBuf::from("results"),
            diagnostics: false,
            missing_class: MissingClassPolicy::Warn,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.n_orig == 0 || self.n_inc == 0 {
            return bad("n_orig and n_inc must be positive".into());
        }
        if self.b_l == 0 || self.b_e == 0 {
            return bad("b_l and b_e must be positive".into());
        }
        if self.b_e > self.n_inc {
            return bad(format!("b_e = {} exceeds n_inc = {}", self.b_e, self.n_inc));
        }
        if self.b_l * self.iterations > self.n_inc {
            return bad(format!(
                "b_l * iterations = {} exceeds n_inc = {}",
                self.b_l * self.iterations,
                self.n_inc
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)".into());
        }
        if self.tune != TuneMode::Off && self.tune_trials == 0 {
            return bad("tune_trials must be positive when tuning".into());
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Loads the dataset or generates the synthetic one.
    pub fn load_data(&self) -> Result<LabeledSet> {
        match &self.dataset {
            DatasetSource::Csv(path) => load_dataset(path),
            DatasetSource::Synthetic(spec) => make_synthetic(spec),
        }
    }

    pub fn has_explanation_strategy(&self) -> bool {
        self.strategies
            .iter()
            .any(|s| matches!(s, StrategySpec::Explanation(_)))
    }

    /// Parses the text format. Relative paths stay as written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            let k = k.trim();
            if entries.insert(k, (i + 1, v.trim())).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
        }

        let mut cfg = ExperimentConfig::default();
        let mut synth = SyntheticSpec {
            confusion_fraction: 0.2,
            ..SyntheticSpec::default()
        };
        let mut synthetic_keys = false;
        let mut dataset: Option<String> = None;

        for (&key, &(line, value)) in &entries {
            let err = |msg: String| Error::Parse { line, msg };
            let num = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| err(format!("{key}: expected an integer, got {v:?}")))
            };
            let real = |v: &str| -> Result<f64> {
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(err(format!("{key}: expected a finite number, got {v:?}"))),
                }
            };
            let boolean = |v: &str| -> Result<bool> {
                v.parse().map_err(|_| err(format!("{key}: expected true or false, got {v:?}")))
            };
            let range = |v: &str| -> Result<IntRange> {
                let (lo, hi) = v
                    .split_once("..")
                    .ok_or_else(|| err(format!("{key}: expected `lo..hi`, got {v:?}")))?;
                Ok(IntRange::new(num(lo.trim())?, num(hi.trim())?))
            };
            let list = |v: &str| -> Vec<String> {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            let wrap = |e: Error| err(format!("{key}: {e}"));

            match key {
                "dataset" => dataset = Some(value.to_string()),
                "synthetic_classes" => (synthetic_keys, synth.num_classes) = (true, num(value)?),
                "synthetic_dims" => (synthetic_keys, synth.dims) = (true, num(value)?),
                "synthetic_rows" => (synthetic_keys, synth.rows) = (true, num(value)?),
                "synthetic_confusion" => (synthetic_keys, synth.confusion_fraction) = (true, real(value)?),
                "synthetic_separation" => (synthetic_keys, synth.separation) = (true, real(value)?),
                "synthetic_noise" => (synthetic_keys, synth.noise_std) = (true, real(value)?),
                "synthetic_pull" => (synthetic_keys, synth.confusion_pull) = (true, real(value)?),
                "synthetic_seed" => {
                    synthetic_keys = true;
                    synth.seed = value.parse().map_err(|_| err(format!("{key}: bad seed {value:?}")))?;
                }
                "n_orig" => cfg.n_orig = num(value)?,
                "n_inc" => cfg.n_inc = num(value)?,
                "n_test" => cfg.n_test = num(value)?,
                "b_l" => cfg.b_l = num(value)?,
                "b_e" => cfg.b_e = num(value)?,
                "iterations" => cfg.iterations = num(value)?,
                "strategies" => {
                    cfg.strategies = list(value)
                        .iter()
                        .map(|s| s.parse())
                        .collect::<Result<_>>()
                        .map_err(wrap)?
                }
                "model" => cfg.model = value.parse().map_err(wrap)?,
                "learning_rate" => cfg.train.learning_rate = real(value)?,
                "epochs" => cfg.train.epochs = num(value)?,
                "tolerance" => cfg.train.tolerance = real(value)?,
                "c_grid" => {
                    cfg.train.c_grid = list(value).iter().map(|s| real(s)).collect::<Result<_>>()?
                }
                "folds" => cfg.train.folds = num(value)?,
                "explainer" => cfg.explainer = value.parse().map_err(wrap)?,
                "eval_budget" => cfg.theta.eval_budget = num(value)?,
                "top_k" => cfg.theta.top_k = num(value)?,
                "batch_eval_limit" => cfg.theta.batch_eval_limit = num(value)?,
                "truncation" => cfg.truncation = value.parse().map_err(wrap)?,
                "normalize" => cfg.normalize = boolean(value)?,
                "tune" => cfg.tune = value.parse().map_err(wrap)?,
                "tune_trials" => cfg.tune_trials = num(value)?,
                "space_eval_budget" => cfg.theta_space.eval_budget = range(value)?,
                "space_top_k" => cfg.theta_space.top_k = range(value)?,
                "space_batch_eval_limit" => cfg.theta_space.batch_eval_limit = range(value)?,
                "validation_fraction" => cfg.validation_fraction = real(value)?,
                "seeds" => {
                    cfg.seeds = list(value)
                        .iter()
                        .map(|s| s.parse().map_err(|_| err(format!("seeds: bad seed {s:?}"))))
                        .collect::<Result<_>>()?
                }
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "diagnostics" => cfg.diagnostics = boolean(value)?,
                "missing_class" => {
                    cfg.missing_class = match value {
                        "warn" => MissingClassPolicy::Warn,
                        "error" => MissingClassPolicy::Error,
                        other => return Err(err(format!("missing_class: unknown policy {other:?}"))),
                    }
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }

        cfg.dataset = match dataset.as_deref() {
            None | Some("synthetic") => DatasetSource::Synthetic(synth),
            Some(path) => {
                if synthetic_keys {
                    return Err(Error::Config(
                        "synthetic_* keys require `dataset = synthetic`".into(),
                    ));
                }
                DatasetSource::Csv(PathBuf::from(path))
            }
        };
        Ok(cfg)
    }

    /// Reads a config file. Relative dataset and output paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSource::Csv(p) = &mut cfg.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Writes every key, so the output parses back to an equal config.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dataset {
            DatasetSource::Csv(p) => writeln!(f, "dataset = {}", p.display())?,
            DatasetSource::Synthetic(s) => {
                writeln!(f, "dataset = synthetic")?;
                writeln!(f, "synthetic_classes = {}", s.num_classes)?;
                writeln!(f, "synthetic_dims = {}", s.dims)?;
                writeln!(f, "synthetic_rows = {}", s.rows)?;
                writeln!(f, "synthetic_confusion = {}", s.confusion_fraction)?;
                writeln!(f, "synthetic_separation = {}", s.separation)?;
                writeln!(f, "synthetic_noise = {}", s.noise_std)?;
                writeln!(f, "synthetic_pull = {}", s.confusion_pull)?;
                writeln!(f, "synthetic_seed = {}", s.seed)?;
            }
        }
        writeln!(f, "n_orig = {}", self.n_orig)?;
        writeln!(f, "n_inc = {}", self.n_inc)?;
        writeln!(f, "n_test = {}", self.n_test)?;
        writeln!(f, "b_l = {}", self.b_l)?;
        writeln!(f, "b_e = {}", self.b_e)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "strategies = {}", join(&self.strategies))?;
        writeln!(f, "model = {}", self.model)?;
        writeln!(f, "learning_rate = {}", self.train.learning_rate)?;
        writeln!(f, "epochs = {}", self.train.epochs)?;
        writeln!(f, "tolerance = {}", self.train.tolerance)?;
        writeln!(f, "c_grid = {}", join(&self.train.c_grid))?;
        writeln!(f, "folds = {}", self.train.folds)?;
        writeln!(f, "explainer = {}", self.explainer)?;
        writeln!(f, "eval_budget = {}", self.theta.eval_budget)?;
        writeln!(f, "top_k = {}", self.theta.top_k)?;
        writeln!(f, "batch_eval_limit = {}", self.theta.batch_eval_limit)?;
        writeln!(f, "truncation = {}", self.truncation)?;
        writeln!(f, "normalize = {}", self.normalize)?;
        writeln!(f, "tune = {}", self.tune)?;
        writeln!(f, "tune_trials = {}", self.tune_trials)?;
        let r = |r: IntRange| format!("{}..{}", r.lo, r.hi);
        writeln!(f, "space_eval_budget = {}", r(self.theta_space.eval_budget))?;
        writeln!(f, "space_top_k = {}", r(self.theta_space.top_k))?;
        writeln!(f, "space_batch_eval_limit = {}", r(self.theta_space.batch_eval_limit))?;
        writeln!(f, "validation_fraction = {}", self.validation_fraction)?;
        writeln!(f, "seeds = {}", join(&self.seeds))?;
        writeln!(f, "output_dir = {}", self.output_dir.display())?;
        writeln!(f, "diagnostics = {}", self.diagnostics)?;
        writeln!(
            f,
            "missing_class = {}",
            match self.missing_class {
                MissingClassPolicy::Warn => "warn",
                MissingClassPolicy::Error => "error",
            }
        )
    }
}
