//! Outer search over explainer parameters with an inner cross-validated
//! choice of the regularization coefficient.
//!
//! Each trial simulates one selection round on a copy of the pool and scores
//! the retrained model on a held-out part of the labeled set. The outer
//! search is a deterministic sequential model-based scheme: seeded uniform
//! exploration for the first half of the trials, then integer perturbations
//! around the incumbent with a shrinking radius, each chosen from a batch of
//! candidates by a kernel-regression surrogate of the objective.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{holdout_indices, PoolState};
use crate::error::{Error, Result};
use crate::explainer::{ExplainerKind, ExplainerParams, Truncation};
use crate::model::{f1_macro, fit_with_cv, grid_search_cv, predict, train, ModelKind, TrainConfig};
use crate::rng;
use crate::strategy::{explanation_query, ExplanationQuery};

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    fn span(&self) -> usize {
        self.hi - self.lo
    }

    fn sample(&self, r: &mut rng::Rng) -> usize {
        r.random_range(self.lo..=self.hi)
    }

    fn perturb(&self, v: usize, radius: usize, r: &mut rng::Rng) -> usize {
        let radius = radius as i64;
        let step = r.random_range(-radius..=radius);
        (v as i64 + step).clamp(self.lo as i64, self.hi as i64) as usize
    }
}

/// The tunable explainer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Theta {
    pub eval_budget: usize,
    pub top_k: usize,
    pub batch_eval_limit: usize,
}

impl Theta {
    pub fn params(&self, baseline: Vec<f64>, truncation: Truncation) -> ExplainerParams {
        ExplainerParams {
            eval_budget: self.eval_budget,
            batch_eval_limit: self.batch_eval_limit,
            top_k: self.top_k,
            baseline,
            truncation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaSpace {
    pub eval_budget: IntRange,
    pub top_k: IntRange,
    pub batch_eval_limit: IntRange,
}

impl ThetaSpace {
    /// Checks that every point of the space is a feasible parameter set for
    /// `dims` features.
    pub fn validate(&self, dims: usize, explainer: ExplainerKind) -> Result<()> {
        for (name, r) in [
            ("eval_budget", self.eval_budget),
            ("top_k", self.top_k),
            ("batch_eval_limit", self.batch_eval_limit),
        ] {
            if r.lo > r.hi {
                return Err(Error::invalid(format!("empty {name} range {}..{}", r.lo, r.hi)));
            }
        }
        if self.top_k.lo < 1 || self.top_k.hi > dims {
            return Err(Error::invalid(format!("top_k range must lie within 1..={dims}")));
        }
        if self.batch_eval_limit.lo < 1 {
            return Err(Error::invalid("batch_eval_limit range must start at 1 or above"));
        }
        if explainer == ExplainerKind::Shapley && self.eval_budget.lo < dims + 1 {
            return Err(Error::BudgetBelowPermutation {
                budget: self.eval_budget.lo,
                required: dims + 1,
            });
        }
        Ok(())
    }

    pub fn contains(&self, t: &Theta) -> bool {
        self.eval_budget.contains(t.eval_budget)
            && self.top_k.contains(t.top_k)
            && self.batch_eval_limit.contains(t.batch_eval_limit)
    }

    fn sample(&self, r: &mut rng::Rng) -> Theta {
        Theta {
            eval_budget: self.eval_budget.sample(r),
            top_k: self.top_k.sample(r),
            batch_eval_limit: self.batch_eval_limit.sample(r),
        }
    }

    fn perturb(&self, t: &Theta, shrink: f64, r: &mut rng::Rng) -> Theta {
        let radius = |range: IntRange| ((range.span() as f64 * 0.25 * shrink).round() as usize).max(1);
        Theta {
            eval_budget: self.eval_budget.perturb(t.eval_budget, radius(self.eval_budget), r),
            top_k: self.top_k.perturb(t.top_k, radius(self.top_k), r),
            batch_eval_limit: self
                .batch_eval_limit
                .perturb(t.batch_eval_limit, radius(self.batch_eval_limit), r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub theta: Theta,
    pub inner_best_c: f64,
    /// Validation loss, `1 − F1-macro`.
    pub objective: f64,
    pub seed: u64,
}

/// Everything a trial needs besides the parameters under test.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    pub query: ExplanationQuery,
    pub truncation: Truncation,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub validation_fraction: f64,
}

/// Scores one parameter set: hold out a validation split, fit on the rest,
/// run one explanation-guided selection on a private copy of the pool, refit
/// with cross-validated C and measure validation F1-macro.
pub fn evaluate_theta(
    theta: &Theta,
    pool: &PoolState,
    settings: &TrialSettings,
    seed: u64,
) -> Result<TrialRecord> {
    let explainer = settings.query.explainer;
    let dims = pool.dims();
    let probe = theta.params(vec![0.0; dims], settings.truncation);
    probe.validate(dims, explainer == ExplainerKind::Shapley)?;
    if pool.labeled().is_empty() {
        return Err(Error::invalid("tuning needs a non-empty labeled set"));
    }

    let (train_rows, val_rows) =
        holdout_indices(pool.labeled(), settings.validation_fraction, rng::derive_seed(seed, &[10]))?;
    let mut sim = pool.fork_with_labeled_rows(&train_rows);
    let val = pool.labeled().subset(&val_rows);

    let model = fit_with_cv(sim.labeled(), settings.model, &settings.train)?;
    let params = theta.params(sim.labeled().features().column_means(), settings.truncation);
    let query = ExplanationQuery {
        diagnostics: false,
        ..settings.query.clone()
    };
    let picked = explanation_query(&model, &sim, &query, &params, rng::derive_seed(seed, &[11]))?;
    sim.commit_batch(&picked.selected)?;

    let (best_c, _) = grid_search_cv(sim.labeled(), settings.model, &settings.train)?;
    let refit = train(sim.labeled(), settings.model, best_c, &settings.train)?;
    let pred = predict(&refit, val.features())?;
    let f1 = f1_macro(val.labels(), &pred, val.num_classes())?;
    Ok(TrialRecord {
        theta: *theta,
        inner_best_c: best_c,
        objective: 1.0 - f1,
        seed,
    })
}

const REFINE_CANDIDATES: usize = 32;
const SURROGATE_BANDWIDTH: f64 = 0.15;
const EXPLORATION_WEIGHT: f64 = 0.5;

impl ThetaSpace {
    /// Coordinates scaled to [0, 1] per dimension.
    fn unit(&self, t: &Theta) -> [f64; 3] {
        let u = |r: IntRange, v: usize| (v - r.lo) as f64 / r.span().max(1) as f64;
        [
            u(self.eval_budget, t.eval_budget),
            u(self.top_k, t.top_k),
            u(self.batch_eval_limit, t.batch_eval_limit),
        ]
    }
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Draws perturbations of the incumbent and returns the one with the lowest
/// acquisition value: a Nadaraya-Watson estimate of the objective from the
/// history, minus a bonus for distance to the nearest evaluated point.
fn propose_refinement(
    space: &ThetaSpace,
    history: &[TrialRecord],
    best: usize,
    shrink: f64,
    r: &mut rng::Rng,
) -> Theta {
    let incumbent = history[best].theta;
    let seen: Vec<[f64; 3]> = history.iter().map(|h| space.unit(&h.theta)).collect();
    let mut pick: Option<(f64, Theta)> = None;
    for _ in 0..REFINE_CANDIDATES {
        let cand = space.perturb(&incumbent, shrink, r);
        if history.iter().any(|h| h.theta == cand) {
            continue;
        }
        let u = space.unit(&cand);
        let (mut num, mut den, mut nearest) = (0.0, 0.0, f64::INFINITY);
        for (h, p) in history.iter().zip(&seen) {
            let d2 = sq_dist(&u, p);
            let w = (-d2 / (2.0 * SURROGATE_BANDWIDTH * SURROGATE_BANDWIDTH)).exp();
            num += w * h.objective;
            den += w;
            nearest = nearest.min(d2);
        }
        let predicted = if den > 0.0 { num / den } else { history[best].objective };
        let acq = predicted - EXPLORATION_WEIGHT * nearest.sqrt();
        if pick.as_ref().is_none_or(|(a, _)| acq < *a) {
            pick = Some((acq, cand));
        }
    }
    pick.map_or_else(|| space.perturb(&incumbent, 1.0, r), |(_, t)| t)
}

/// Runs `trials` evaluations of `objective` and returns the best record
/// (lowest objective, earliest on ties) with the full history. The objective
/// receives the proposed parameters and the evaluation seed.
pub fn optimize_with<F>(
    space: &ThetaSpace,
    trials: usize,
    seed: u64,
    mut objective: F,
) -> Result<(TrialRecord, Vec<TrialRecord>)>
where
    F: FnMut(&Theta, u64) -> Result<TrialRecord>,
{
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    for r in [space.eval_budget, space.top_k, space.batch_eval_limit] {
        if r.lo > r.hi {
            return Err(Error::invalid("empty search space"));
        }
    }

    let mut r = rng::seeded(rng::derive_seed(seed, &[20]));
    let explore = trials.div_ceil(2);
    let mut history: Vec<TrialRecord> = Vec::with_capacity(trials);
    let mut best = 0;

    for t in 0..trials {
        let theta = if t < explore {
            space.sample(&mut r)
        } else {
            let shrink = 0.85f64.powi((t - explore) as i32);
            propose_refinement(space, &history, best, shrink, &mut r)
        };
        let rec = objective(&theta, seed)?;
        if !(0.0..=1.0).contains(&rec.objective) {
            return Err(Error::invalid(format!(
                "objective {} outside [0, 1]",
                rec.objective
            )));
        }
        history.push(rec);
        if history[t].objective < history[best].objective {
            best = t;
        }
    }
    Ok((history[best].clone(), history))
}

/// Tunes the explainer parameters against the given pool snapshot. Every
/// trial is evaluated with the same seed so trials differ only in `theta`.
pub fn optimize_theta(
    space: &ThetaSpace,
    trials: usize,
    pool: &PoolState,
    settings: &TrialSettings,
    seed: u64,
) -> Result<(TrialRecord, Vec<TrialRecord>)> {
    space.validate(pool.dims(), settings.query.explainer)?;
    optimize_with(space, trials, seed, |theta, s| evaluate_theta(theta, pool, settings, s))
}

/// Writes one JSON object per trial, one per line.
pub fn write_history_jsonl<W: Write>(history: &[TrialRecord], mut out: W) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<trial history>", e))?;
    }
    Ok(())
}
