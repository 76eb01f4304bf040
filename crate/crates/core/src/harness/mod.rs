//! Simulated active-learning loop, experiment driver and result files.

mod config;
mod results;

pub use config::{DatasetSource, ExperimentConfig, StrategySpec, TuneMode};
pub use results::{
    emit_results, parse_curves_csv, read_curves_csv, report, summarize, CurveRow, StrategySummary,
    Summary, SummaryPoint,
};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{split_initial, LabeledSet, PoolState, SplitSizes};
use crate::error::{Error, Result};
use crate::model::{f1_macro, grid_search_cv, predict, train, LinearModel, TrainConfig};
use crate::rng::{self, derive_seed};
use crate::strategy::{
    entropy_query, explanation_query, margin_query, random_query, ExplanationQuery, QueryResult,
};
use crate::tuner::{optimize_theta, Theta, TrialRecord, TrialSettings};

const TAG_SPLIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_QUERY: u64 = 3;
const TAG_TUNE: u64 = 4;

/// Student-t confidence interval of the mean: returns `(mean, half_width)`.
/// A single value has half-width 0.
pub fn aggregate_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok((mean, t * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub labeled_size: usize,
    pub f1_macro: f64,
}

/// One (strategy, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    /// Original pool indices selected at each iteration.
    pub selections: Vec<Vec<usize>>,
    /// Hidden labels revealed over the run.
    pub oracle_reads: usize,
    /// Iterations whose explanation-guided selection fell back to random.
    pub random_fallbacks: usize,
    /// Tuning trials run for this cell, in order.
    pub trials: Vec<TrialRecord>,
    /// Why the run stopped before the configured number of iterations, or
    /// took a short final batch.
    pub stop_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub strategy: String,
    pub runs: Vec<SeedCurve>,
}

impl LearningCurve {
    /// Rows in `curves.csv` order.
    pub fn rows(&self) -> Vec<CurveRow> {
        self.runs
            .iter()
            .flat_map(|run| {
                run.points.iter().map(move |p| CurveRow {
                    strategy: self.strategy.clone(),
                    seed: run.seed,
                    iteration: p.iteration,
                    labeled_size: p.labeled_size,
                    f1_macro: p.f1_macro,
                })
            })
            .collect()
    }
}

fn train_config(cfg: &ExperimentConfig, seed: u64, iteration: usize) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, &[TAG_TRAIN, iteration as u64]),
        ..cfg.train.clone()
    }
}

fn fit(cfg: &ExperimentConfig, data: &LabeledSet, seed: u64, iteration: usize) -> Result<LinearModel> {
    let tc = train_config(cfg, seed, iteration);
    let (c, _) = grid_search_cv(data, cfg.model, &tc)?;
    train(data, cfg.model, c, &tc)
}

fn test_f1(model: &LinearModel, pool: &PoolState) -> Result<f64> {
    let test = pool.test();
    let pred = predict(model, test.features())?;
    f1_macro(test.labels(), &pred, test.num_classes())
}

/// The initial split for a seed. It depends only on the seed, so every
/// strategy sees the same partition.
pub fn initial_pool(cfg: &ExperimentConfig, data: &LabeledSet, seed: u64) -> Result<PoolState> {
    split_initial(
        data,
        SplitSizes {
            orig: cfg.n_orig,
            inc: cfg.n_inc,
            test: cfg.n_test,
        },
        derive_seed(seed, &[TAG_SPLIT]),
        cfg.missing_class,
    )
}

fn trial_settings(cfg: &ExperimentConfig, query: &ExplanationQuery, seed: u64) -> TrialSettings {
    TrialSettings {
        query: query.clone(),
        truncation: cfg.truncation,
        model: cfg.model,
        train: train_config(cfg, seed, usize::MAX),
        validation_fraction: cfg.validation_fraction,
    }
}

/// Runs the loop for one strategy and seed and returns the final pool with
/// the curve.
pub fn run_single_with_pool(
    cfg: &ExperimentConfig,
    data: &LabeledSet,
    strategy: StrategySpec,
    seed: u64,
) -> Result<(SeedCurve, PoolState)> {
    let mut pool = initial_pool(cfg, data, seed)?;
    let mut model = fit(cfg, pool.labeled(), seed, 0)?;
    let mut curve = SeedCurve {
        seed,
        points: vec![CurvePoint {
            iteration: 0,
            labeled_size: pool.labeled().len(),
            f1_macro: test_f1(&model, &pool)?,
        }],
        selections: Vec::new(),
        oracle_reads: 0,
        random_fallbacks: 0,
        trials: Vec::new(),
        stop_reason: None,
    };
    let mut theta: Theta = cfg.theta;

    for t in 1..=cfg.iterations {
        if pool.pool_len() == 0 {
            curve.stop_reason = Some(format!("pool exhausted before iteration {t}"));
            break;
        }
        let qseed = derive_seed(seed, &[TAG_QUERY, t as u64]);
        let result: QueryResult = match strategy {
            StrategySpec::Random => random_query(pool.pool_len(), cfg.b_l, qseed)?,
            StrategySpec::Entropy => entropy_query(&model, pool.pool_features(), cfg.b_l)?,
            StrategySpec::Margin => margin_query(&model, pool.pool_features(), cfg.b_l)?,
            StrategySpec::Explanation(criterion) => {
                let query = ExplanationQuery {
                    criterion,
                    explainer: cfg.explainer,
                    explain_budget: cfg.b_e,
                    label_budget: cfg.b_l,
                    normalize: cfg.normalize,
                    diagnostics: cfg.diagnostics,
                };
                let retune = match cfg.tune {
                    TuneMode::Off => false,
                    TuneMode::First => t == 1,
                    TuneMode::Every => true,
                };
                if retune {
                    let tseed = derive_seed(seed, &[TAG_TUNE, t as u64]);
                    let settings = trial_settings(cfg, &query, seed);
                    let (best, history) =
                        optimize_theta(&cfg.theta_space, cfg.tune_trials, &pool, &settings, tseed)?;
                    theta = best.theta;
                    curve.trials.extend(history);
                }
                let params = theta.params(pool.labeled().features().column_means(), cfg.truncation);
                let r = explanation_query(&model, &pool, &query, &params, qseed)?;
                if r.random_fallback {
                    curve.random_fallbacks += 1;
                }
                if let Some(diag) = &r.diagnostics {
                    let dir = cfg.output_dir.join("diagnostics");
                    diag.write_csv(&dir, &format!("{}_seed{seed}_iter{t}", strategy.name().replace(':', "-")))?;
                }
                r
            }
        };

        if result.selected.len() < cfg.b_l {
            curve.stop_reason = Some(format!(
                "pool exhausted at iteration {t}: selected {} of {}",
                result.selected.len(),
                cfg.b_l
            ));
        }
        curve
            .selections
            .push(result.selected.iter().map(|&i| pool.pool_ids()[i]).collect());
        pool.commit_batch(&result.selected)?;
        model = fit(cfg, pool.labeled(), seed, t)?;
        curve.points.push(CurvePoint {
            iteration: t,
            labeled_size: pool.labeled().len(),
            f1_macro: test_f1(&model, &pool)?,
        });
    }
    curve.oracle_reads = pool.oracle_reads();
    Ok((curve, pool))
}

/// Runs the loop for one strategy and seed.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &LabeledSet,
    strategy: StrategySpec,
    seed: u64,
) -> Result<SeedCurve> {
    run_single_with_pool(cfg, data, strategy, seed).map(|(c, _)| c)
}

/// Runs every (strategy, seed) cell and returns one curve per strategy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<LearningCurve>> {
    if cfg.strategies.is_empty() {
        return Err(Error::Config("strategies list is empty".into()));
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    run_experiment_on(cfg, &data)
}

/// As [`run_experiment`], with an already-loaded dataset.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &LabeledSet) -> Result<Vec<LearningCurve>> {
    if cfg.strategies.is_empty() {
        return Err(Error::Config("strategies list is empty".into()));
    }
    cfg.validate()?;
    let mut curves = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let mut runs = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            log::info!("running {strategy} with seed {seed}");
            let run = run_single(cfg, data, strategy, seed).map_err(|e| Error::Cell {
                strategy: strategy.name(),
                seed,
                source: Box::new(e),
            })?;
            runs.push(run);
        }
        curves.push(LearningCurve {
            strategy: strategy.name(),
            runs,
        });
    }
    Ok(curves)
}

/// Tunes the explainer parameters on the initial pool of the first seed,
/// using the first explanation strategy in the config (or the default
/// criterion when there is none).
pub fn sweep(cfg: &ExperimentConfig, trials: usize) -> Result<(TrialRecord, Vec<TrialRecord>)> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    let seed = cfg.seeds[0];
    let pool = initial_pool(cfg, &data, seed)?;
    let criterion = cfg
        .strategies
        .iter()
        .find_map(|s| match s {
            StrategySpec::Explanation(c) => Some(*c),
            _ => None,
        })
        .unwrap_or_default();
    let query = ExplanationQuery {
        criterion,
        explainer: cfg.explainer,
        explain_budget: cfg.b_e,
        label_budget: cfg.b_l,
        normalize: cfg.normalize,
        diagnostics: false,
    };
    let settings = trial_settings(cfg, &query, seed);
    optimize_theta(
        &cfg.theta_space,
        trials,
        &pool,
        &settings,
        rng::derive_seed(seed, &[TAG_TUNE, 0]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_examples() {
        assert_eq!(aggregate_ci(&[1.0; 4], 0.95).unwrap(), (1.0, 0.0));
        assert_eq!(aggregate_ci(&[0.7], 0.95).unwrap(), (0.7, 0.0));
        let (m, h) = aggregate_ci(&[0.0, 1.0], 0.95).unwrap();
        assert_eq!(m, 0.5);
        // t_{1,0.975} = 12.7062; s/√n = 0.7071/1.4142 = 0.5
        assert!((h - 12.7062 * 0.5).abs() < 1e-3, "{h}");
        assert!(aggregate_ci(&[], 0.95).is_err());
    }
}
