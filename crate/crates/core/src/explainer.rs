//! Per-instance explanation weight vectors.
//!
//! Two explainers are provided: a direct read of a linear model's class
//! coefficients, and a model-agnostic Monte-Carlo permutation Shapley
//! estimator whose cost is bounded by an evaluation budget. Both finish with
//! the same top-k truncation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::dataset::ExplanationSample;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::LinearModel;
use crate::rng;

/// Anything that produces a per-class score for a batch of input rows.
pub trait ClassScorer {
    fn num_features(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Score of `class` for every row of `rows`. One call is one model
    /// invocation; its row count is the number of predictions it costs.
    fn score_rows(&self, rows: &Matrix, class: usize) -> Vec<f64>;
}

impl ClassScorer for LinearModel {
    fn num_features(&self) -> usize {
        self.dims()
    }

    fn num_classes(&self) -> usize {
        LinearModel::num_classes(self)
    }

    fn score_rows(&self, rows: &Matrix, class: usize) -> Vec<f64> {
        rows.iter_rows().map(|x| self.class_score(x, class)).collect()
    }
}

/// How features are ranked when truncating to `top_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Rank by `|q_j · x_j|`, the magnitude the similarity matrix consumes.
    #[default]
    Product,
    /// Rank by `|q_j|`.
    Magnitude,
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truncation::Product => "product",
            Truncation::Magnitude => "magnitude",
        })
    }
}

impl FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Truncation::Product),
            "magnitude" => Ok(Truncation::Magnitude),
            other => Err(Error::invalid(format!("unknown truncation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExplainerKind {
    /// Class coefficients of a linear model.
    Linear,
    /// Monte-Carlo permutation Shapley values.
    #[default]
    Shapley,
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExplainerKind::Linear => "linear",
            ExplainerKind::Shapley => "shapley",
        })
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ExplainerKind::Linear),
            "shapley" => Ok(ExplainerKind::Shapley),
            other => Err(Error::invalid(format!("unknown explainer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerParams {
    /// Maximum number of model predictions spent on one instance.
    pub eval_budget: usize,
    /// Maximum number of rows per model invocation.
    pub batch_eval_limit: usize,
    pub top_k: usize,
    /// Reference input features are replaced from. Empty means "use the
    /// labeled-set feature means", filled in by the caller.
    pub baseline: Vec<f64>,
    pub truncation: Truncation,
}

impl ExplainerParams {
    pub fn new(eval_budget: usize, batch_eval_limit: usize, top_k: usize, baseline: Vec<f64>) -> Self {
        Self {
            eval_budget,
            batch_eval_limit,
            top_k,
            baseline,
            truncation: Truncation::default(),
        }
    }

    /// Checks the parameters against a feature dimension. `needs_sampling`
    /// adds the Shapley requirement of at least one full permutation.
    pub fn validate(&self, dims: usize, needs_sampling: bool) -> Result<()> {
        if self.top_k == 0 || self.top_k > dims {
            return Err(Error::invalid(format!(
                "top_k {} must lie in 1..={dims}",
                self.top_k
            )));
        }
        if self.batch_eval_limit == 0 {
            return Err(Error::invalid("batch_eval_limit must be at least 1"));
        }
        if self.baseline.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.baseline.len(),
            });
        }
        if needs_sampling && self.eval_budget < dims + 1 {
            return Err(Error::BudgetBelowPermutation {
                budget: self.eval_budget,
                required: dims + 1,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub weights: Vec<f64>,
    pub target_class: usize,
    pub instance_index: usize,
    pub evals_used: usize,
}

/// Keeps the `top_k` entries of `q` ranked by the chosen criterion and zeroes
/// the rest. Equal ranks fall back to `|q_j|`, then to the lower index.
pub fn truncate_top_k(q: &mut [f64], x: &[f64], top_k: usize, mode: Truncation) {
    let rank = |j: usize| match mode {
        Truncation::Product => (q[j] * x[j]).abs(),
        Truncation::Magnitude => q[j].abs(),
    };
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        rank(b)
            .total_cmp(&rank(a))
            .then(q[b].abs().total_cmp(&q[a].abs()))
            .then(a.cmp(&b))
    });
    for &j in order.iter().skip(top_k) {
        q[j] = 0.0;
    }
}

fn check_class(class: usize, num_classes: usize) -> Result<()> {
    if class >= num_classes {
        return Err(Error::invalid(format!(
            "class {class} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

pub fn explain_linear(
    model: &LinearModel,
    x: &[f64],
    class: usize,
    params: &ExplainerParams,
) -> Result<Explanation> {
    check_class(class, model.num_classes())?;
    if x.len() != model.dims() {
        return Err(Error::DimensionMismatch {
            expected: model.dims(),
            actual: x.len(),
        });
    }
    let mut q = model.weights().row(class).to_vec();
    let keep = params.top_k.min(q.len());
    truncate_top_k(&mut q, x, keep, params.truncation);
    Ok(Explanation {
        weights: q,
        target_class: class,
        instance_index: 0,
        evals_used: 0,
    })
}

/// Untruncated Monte-Carlo permutation Shapley attributions of the
/// `class` score at `x` relative to `baseline`. Returns the attributions and
/// the number of model predictions spent.
///
/// Each permutation costs `d + 1` predictions: the baseline followed by one
/// row per feature switched from baseline to `x`. Sampling stops when the
/// next full permutation would exceed `eval_budget`.
pub fn shapley_mc_raw<S: ClassScorer + ?Sized>(
    scorer: &S,
    x: &[f64],
    class: usize,
    baseline: &[f64],
    eval_budget: usize,
    batch_eval_limit: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let d = scorer.num_features();
    check_class(class, scorer.num_classes())?;
    if x.len() != d || baseline.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if x.len() != d { x.len() } else { baseline.len() },
        });
    }
    if batch_eval_limit == 0 {
        return Err(Error::invalid("batch_eval_limit must be at least 1"));
    }
    let cost = d + 1;
    if eval_budget < cost {
        return Err(Error::BudgetBelowPermutation {
            budget: eval_budget,
            required: cost,
        });
    }
    let n_perm = eval_budget / cost;

    let mut r = rng::seeded(seed);
    let mut perm: Vec<usize> = (0..d).collect();
    let mut phi = vec![0.0; d];
    let mut used = 0;

    // Coalition rows for a chunk of permutations are laid out back to back
    // and scored in invocations of at most `batch_eval_limit` rows.
    let mut perms = Vec::new();
    let perms_per_chunk = (batch_eval_limit / cost).max(1);
    let mut remaining = n_perm;
    while remaining > 0 {
        let take = remaining.min(perms_per_chunk);
        let mut coalition = Matrix::zeros(0, d);
        perms.clear();
        for _ in 0..take {
            perm.shuffle(&mut r);
            perms.push(perm.clone());
            let mut z = baseline.to_vec();
            coalition.push_row(&z)?;
            for &j in &perm {
                z[j] = x[j];
                coalition.push_row(&z)?;
            }
        }
        let scores = score_in_chunks(scorer, &coalition, class, batch_eval_limit);
        used += coalition.rows();
        for (p, order) in perms.iter().enumerate() {
            let s = &scores[p * cost..(p + 1) * cost];
            for (step, &j) in order.iter().enumerate() {
                phi[j] += s[step + 1] - s[step];
            }
        }
        remaining -= take;
    }

    let n = n_perm as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    Ok((phi, used))
}

fn score_in_chunks<S: ClassScorer + ?Sized>(
    scorer: &S,
    rows: &Matrix,
    class: usize,
    limit: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.rows());
    let mut start = 0;
    while start < rows.rows() {
        let end = (start + limit).min(rows.rows());
        let idx: Vec<usize> = (start..end).collect();
        out.extend(scorer.score_rows(&rows.select_rows(&idx), class));
        start = end;
    }
    out
}

/// Monte-Carlo permutation Shapley explanation, truncated to `top_k`.
pub fn explain_shapley_mc<S: ClassScorer + ?Sized>(
    scorer: &S,
    x: &[f64],
    class: usize,
    params: &ExplainerParams,
    seed: u64,
) -> Result<Explanation> {
    params.validate(scorer.num_features(), true)?;
    let (mut q, used) = shapley_mc_raw(
        scorer,
        x,
        class,
        &params.baseline,
        params.eval_budget,
        params.batch_eval_limit,
        seed,
    )?;
    truncate_top_k(&mut q, x, params.top_k, params.truncation);
    Ok(Explanation {
        weights: q,
        target_class: class,
        instance_index: 0,
        evals_used: used,
    })
}

/// Explains every sample row for its given class and stacks the weight
/// vectors. Instance `i` uses seed `seed + i`, so the result does not depend
/// on evaluation order or chunking.
pub fn batch_explain(
    kind: ExplainerKind,
    model: &LinearModel,
    sample: &ExplanationSample,
    classes: &[usize],
    params: &ExplainerParams,
    seed: u64,
) -> Result<Matrix> {
    if classes.len() != sample.len() {
        return Err(Error::DimensionMismatch {
            expected: sample.len(),
            actual: classes.len(),
        });
    }
    let d = model.dims();
    if sample.features.dims() != d && !sample.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: sample.features.dims(),
        });
    }
    params.validate(d, kind == ExplainerKind::Shapley)?;
    let mut q = Matrix::zeros(sample.len(), d);
    for (i, &class) in classes.iter().enumerate() {
        let x = sample.features.row(i);
        let mut e = match kind {
            ExplainerKind::Linear => explain_linear(model, x, class, params)?,
            ExplainerKind::Shapley => {
                explain_shapley_mc(model, x, class, params, seed.wrapping_add(i as u64))?
            }
        };
        e.instance_index = sample.indices[i];
        q.row_mut(i).copy_from_slice(&e.weights);
    }
    Ok(q)
}
