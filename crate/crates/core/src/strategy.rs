//! Query strategies.
//!
//! The explanation-guided strategy works on a small explained sample `X_s`
//! with explanation matrix `Q`:
//!
//! ```text
//! A = (Q ⊙ X_s)(Q ⊙ X_s)ᵀ          pairwise explanation similarity
//! B_ij = 1[label_i ≠ label_j]       pairwise disagreement
//! C = (A ⊙ B)·1                     preference weight per sample row
//! S = X_pool (C·1ᵀ ⊙ X_s)ᵀ          pool-vs-sample scores
//! W = S·1                           retrieval weight per pool row
//! ```
//!
//! The staged functions materialize every intermediate. [`fused_weights`]
//! computes the same `W` without any `N × N` matrix: since
//! `C_i = u_i · Σ_{j: label_j ≠ label_i} u_j` with `u = q ⊙ x`, and
//! `W = X_pool · Σ_j C_j x_j`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{
    sample_explanation_set, sample_labeled_explanation_set, ExplanationSample, FeatureMatrix,
    PoolState,
};
use crate::error::{Error, Result};
use crate::explainer::{batch_explain, ExplainerKind, ExplainerParams};
use crate::linalg::{dot, l2_norm, Matrix};
use crate::model::{predict, predict_proba, LinearModel};
use crate::rng;

/// Which unintended-behavior pattern drives selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Criterion {
    /// Different predicted labels, similar explanations.
    #[default]
    PredDisagreeExplainSimilar,
    /// Misclassified instance whose predicted-class and true-class
    /// explanations are similar.
    MisclassifiedSelfSimilar,
    /// Different true labels, similar explanations for those labels.
    TrueLabelPairSimilar,
}

impl Criterion {
    pub fn needs_true_labels(self) -> bool {
        !matches!(self, Criterion::PredDisagreeExplainSimilar)
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::PredDisagreeExplainSimilar => "disagree",
            Criterion::MisclassifiedSelfSimilar => "misclassified",
            Criterion::TrueLabelPairSimilar => "true_pair",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disagree" => Ok(Criterion::PredDisagreeExplainSimilar),
            "misclassified" => Ok(Criterion::MisclassifiedSelfSimilar),
            "true_pair" => Ok(Criterion::TrueLabelPairSimilar),
            other => Err(Error::invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Inputs shared by the pairwise computations over the explained sample.
#[derive(Debug, Clone)]
pub struct PairwiseContext {
    /// Sample rows in explanation space.
    pub sample: Matrix,
    /// Explanation weights, one row per sample row. For the true-pair
    /// criterion these target the true label.
    pub q: Matrix,
    pub pred_labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
    /// Explanations targeting the true label; the misclassified criterion
    /// reads them. Rows of correctly classified instances are ignored.
    pub q_true: Option<Matrix>,
    /// Scale every `q ⊙ x` row to unit length before taking dot products.
    pub normalize: bool,
}

impl PairwiseContext {
    pub fn new(sample: Matrix, q: Matrix, pred_labels: Vec<usize>) -> Result<Self> {
        let ctx = Self {
            sample,
            q,
            pred_labels,
            true_labels: None,
            q_true: None,
            normalize: false,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_true_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.true_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_true_explanations(mut self, q_true: Matrix) -> Result<Self> {
        self.q_true = Some(q_true);
        self.validate()?;
        Ok(self)
    }

    pub fn with_normalization(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn len(&self) -> usize {
        self.sample.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.sample.cols()
    }

    fn validate(&self) -> Result<()> {
        let n = self.sample.rows();
        let mismatch = |actual| Error::DimensionMismatch { expected: n, actual };
        if self.q.rows() != n {
            return Err(mismatch(self.q.rows()));
        }
        if n > 0 && self.q.cols() != self.sample.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.sample.cols(),
                actual: self.q.cols(),
            });
        }
        if self.pred_labels.len() != n {
            return Err(mismatch(self.pred_labels.len()));
        }
        if let Some(t) = &self.true_labels {
            if t.len() != n {
                return Err(mismatch(t.len()));
            }
        }
        if let Some(qt) = &self.q_true {
            if qt.rows() != n || (n > 0 && qt.cols() != self.sample.cols()) {
                return Err(mismatch(qt.rows()));
            }
        }
        Ok(())
    }

    /// Rows of `q ⊙ x'`, optionally normalized.
    pub fn weighted_rows(&self) -> Matrix {
        weighted(&self.q, &self.sample, self.normalize)
    }

    fn labels_for(&self, criterion: Criterion) -> Result<&[usize]> {
        match criterion {
            Criterion::TrueLabelPairSimilar | Criterion::MisclassifiedSelfSimilar => self
                .true_labels
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("criterion {criterion} needs true labels"))),
            Criterion::PredDisagreeExplainSimilar => Ok(&self.pred_labels),
        }
    }
}

fn weighted(q: &Matrix, x: &Matrix, normalize: bool) -> Matrix {
    let mut u = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = u.row_mut(i);
        for ((r, a), b) in row.iter_mut().zip(q.row(i)).zip(x.row(i)) {
            *r = a * b;
        }
        if normalize {
            let n = l2_norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    u
}

/// `A_ij = (q_i ⊙ x_i) · (q_j ⊙ x_j)`.
pub fn build_similarity_a(ctx: &PairwiseContext) -> Result<Matrix> {
    let u = ctx.weighted_rows();
    let n = u.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(u.row(i), u.row(j));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    Ok(a)
}

/// `B_ij = 1` iff the labels differ.
pub fn disagreement_matrix(labels: &[usize]) -> Matrix {
    let n = labels.len();
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                b.set(i, j, 1.0);
            }
        }
    }
    b
}

/// Disagreement matrix over predicted labels, or over true labels for the
/// true-pair criterion.
pub fn build_disagreement_b(ctx: &PairwiseContext, criterion: Criterion) -> Result<Matrix> {
    let labels = match criterion {
        Criterion::TrueLabelPairSimilar => ctx.labels_for(criterion)?,
        _ => &ctx.pred_labels,
    };
    Ok(disagreement_matrix(labels))
}

/// `C = (A ⊙ B)·1`.
pub fn preference_weights_c(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::invalid("A must be square"));
    }
    Ok(a.hadamard(b)?.row_sums())
}

/// Preference weights of the misclassified criterion:
/// `C_i = 1[pred_i ≠ true_i] · (q_i^pred ⊙ x_i) · (q_i^true ⊙ x_i)`.
pub fn criterion_weights_c2(ctx: &PairwiseContext) -> Result<Vec<f64>> {
    let truth = ctx
        .true_labels
        .as_deref()
        .ok_or_else(|| Error::invalid("misclassified criterion needs true labels"))?;
    let q_true = ctx
        .q_true
        .as_ref()
        .ok_or_else(|| Error::invalid("misclassified criterion needs true-class explanations"))?;
    let u_pred = ctx.weighted_rows();
    let u_true = weighted(q_true, &ctx.sample, ctx.normalize);
    Ok((0..ctx.len())
        .map(|i| {
            if ctx.pred_labels[i] == truth[i] {
                0.0
            } else {
                dot(u_pred.row(i), u_true.row(i))
            }
        })
        .collect())
}

/// `S = X_pool (C·1ᵀ ⊙ X_s)ᵀ`, i.e. `S_ij = x_i · (C_j x_j)`.
pub fn score_matrix_s(pool: &Matrix, sample: &Matrix, c: &[f64]) -> Result<Matrix> {
    if c.len() != sample.rows() {
        return Err(Error::DimensionMismatch {
            expected: sample.rows(),
            actual: c.len(),
        });
    }
    let mut scaled = sample.clone();
    for (j, &cj) in c.iter().enumerate() {
        scaled.row_mut(j).iter_mut().for_each(|v| *v *= cj);
    }
    if sample.rows() == 0 {
        return Ok(Matrix::zeros(pool.rows(), 0));
    }
    pool.matmul_transposed(&scaled)
}

/// `W = S·1`.
pub fn retrieval_weights_w(s: &Matrix) -> Vec<f64> {
    s.row_sums()
}

/// Staged preference weights for any criterion, with the intermediates the
/// criterion defines.
pub fn staged_preferences(
    ctx: &PairwiseContext,
    criterion: Criterion,
) -> Result<(Option<Matrix>, Option<Matrix>, Vec<f64>)> {
    match criterion {
        Criterion::MisclassifiedSelfSimilar => Ok((None, None, criterion_weights_c2(ctx)?)),
        _ => {
            let a = build_similarity_a(ctx)?;
            let b = build_disagreement_b(ctx, criterion)?;
            let c = preference_weights_c(&a, &b)?;
            Ok((Some(a), Some(b), c))
        }
    }
}

/// Retrieval weights through every intermediate matrix. Returns the
/// diagnostics alongside `W`.
pub fn staged_weights(
    pool: &Matrix,
    ctx: &PairwiseContext,
    criterion: Criterion,
) -> Result<(Vec<f64>, Diagnostics)> {
    check_pool_dims(pool, ctx)?;
    let (a, b, c) = staged_preferences(ctx, criterion)?;
    let s = score_matrix_s(pool, &ctx.sample, &c)?;
    let w = retrieval_weights_w(&s);
    Ok((
        w.clone(),
        Diagnostics {
            a,
            b,
            c,
            w,
            random_fallback: false,
        },
    ))
}

fn check_pool_dims(pool: &Matrix, ctx: &PairwiseContext) -> Result<()> {
    if !ctx.is_empty() && pool.rows() > 0 && pool.cols() != ctx.dims() {
        return Err(Error::DimensionMismatch {
            expected: ctx.dims(),
            actual: pool.cols(),
        });
    }
    Ok(())
}

/// Single-pass retrieval weights, equal to [`staged_weights`] up to
/// floating-point reassociation.
pub fn fused_weights(pool: &Matrix, ctx: &PairwiseContext, criterion: Criterion) -> Result<Vec<f64>> {
    check_pool_dims(pool, ctx)?;
    let d = ctx.dims();
    let c = match criterion {
        Criterion::MisclassifiedSelfSimilar => criterion_weights_c2(ctx)?,
        _ => {
            let labels = match criterion {
                Criterion::TrueLabelPairSimilar => ctx.labels_for(criterion)?,
                _ => &ctx.pred_labels,
            };
            let u = ctx.weighted_rows();
            // C_i = u_i · (Σ_all u − Σ_{same label} u)
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut total = vec![0.0; d];
            let mut per_label = vec![vec![0.0; d]; k];
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..d {
                    total[j] += u.get(i, j);
                    per_label[y][j] += u.get(i, j);
                }
            }
            labels
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let other: Vec<f64> =
                        total.iter().zip(&per_label[y]).map(|(t, s)| t - s).collect();
                    dot(u.row(i), &other)
                })
                .collect()
        }
    };
    // v = Σ_j C_j x_j, then W = X_pool · v
    let mut v = vec![0.0; d];
    for (j, &cj) in c.iter().enumerate() {
        for (vk, xk) in v.iter_mut().zip(ctx.sample.row(j)) {
            *vk += cj * xk;
        }
    }
    Ok(pool.iter_rows().map(|x| dot(x, &v)).collect())
}

/// Intermediates of one explanation-guided selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub a: Option<Matrix>,
    pub b: Option<Matrix>,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    pub random_fallback: bool,
}

impl Diagnostics {
    /// Writes `<prefix>_A.csv`, `<prefix>_B.csv`, `<prefix>_C.csv` and
    /// `<prefix>_W.csv` into `dir`. Matrices are written one row per line.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, rows: Vec<&[f64]>| -> Result<()> {
            let path = dir.join(format!("{prefix}_{name}.csv"));
            let mut f = std::io::BufWriter::new(
                std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            );
            for r in rows {
                let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(&path, e))?;
            }
            f.flush().map_err(|e| Error::io(&path, e))
        };
        if let Some(a) = &self.a {
            write("A", a.iter_rows().collect())?;
        }
        if let Some(b) = &self.b {
            write("B", b.iter_rows().collect())?;
        }
        write("C", self.c.iter().map(std::slice::from_ref).collect())?;
        write("W", self.w.iter().map(std::slice::from_ref).collect())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Selected pool indices in rank order.
    pub selected: Vec<usize>,
    /// Per-pool-row ranking score (retrieval weight, entropy or margin);
    /// empty for random selection.
    pub weights: Vec<f64>,
    pub diagnostics: Option<Diagnostics>,
    /// Set when an all-zero weight vector forced a random selection.
    pub random_fallback: bool,
}

/// Indices of the `budget` largest scores, ties to the lower index.
pub fn top_indices(scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Takes the `budget` pool rows with the largest retrieval weight. An
/// all-zero `W` carries no preference and falls back to a seeded uniform
/// draw.
pub fn select_top(w: Vec<f64>, budget: usize, seed: u64) -> Result<QueryResult> {
    if budget < 1 {
        return Err(Error::invalid("labeling budget must be at least 1"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("retrieval weights must be finite"));
    }
    if w.iter().all(|&v| v == 0.0) {
        log::debug!("all retrieval weights are zero; selecting at random");
        let mut r = random_query(w.len(), budget, seed)?;
        r.weights = w;
        r.random_fallback = true;
        return Ok(r);
    }
    Ok(QueryResult {
        selected: top_indices(&w, budget),
        weights: w,
        diagnostics: None,
        random_fallback: false,
    })
}

/// Shannon entropy (natural log) of a probability row; `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Difference between the two largest probabilities.
pub fn margin(p: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}

pub fn entropy_ranking(proba: &Matrix, budget: usize) -> QueryResult {
    let scores: Vec<f64> = proba.iter_rows().map(entropy).collect();
    QueryResult {
        selected: top_indices(&scores, budget),
        weights: scores,
        diagnostics: None,
        random_fallback: false,
    }
}

pub fn margin_ranking(proba: &Matrix, budget: usize) -> QueryResult {
    let margins: Vec<f64> = proba.iter_rows().map(margin).collect();
    let neg: Vec<f64> = margins.iter().map(|m| -m).collect();
    QueryResult {
        selected: top_indices(&neg, budget),
        weights: margins,
        diagnostics: None,
        random_fallback: false,
    }
}

/// Highest-entropy pool rows first.
pub fn entropy_query(model: &LinearModel, pool: &FeatureMatrix, budget: usize) -> Result<QueryResult> {
    if budget < 1 {
        return Err(Error::invalid("labeling budget must be at least 1"));
    }
    Ok(entropy_ranking(&predict_proba(model, pool)?, budget))
}

/// Smallest top-1/top-2 probability margin first.
pub fn margin_query(model: &LinearModel, pool: &FeatureMatrix, budget: usize) -> Result<QueryResult> {
    if budget < 1 {
        return Err(Error::invalid("labeling budget must be at least 1"));
    }
    if model.num_classes() < 2 {
        return Err(Error::invalid("margin sampling needs at least two classes"));
    }
    Ok(margin_ranking(&predict_proba(model, pool)?, budget))
}

/// Uniform draw without replacement, clamped to the pool size.
pub fn random_query(pool_len: usize, budget: usize, seed: u64) -> Result<QueryResult> {
    if budget < 1 {
        return Err(Error::invalid("labeling budget must be at least 1"));
    }
    let mut r = rng::seeded(seed);
    let n = budget.min(pool_len);
    Ok(QueryResult {
        selected: rand::seq::index::sample(&mut r, pool_len, n).into_vec(),
        weights: Vec::new(),
        diagnostics: None,
        random_fallback: false,
    })
}

/// Settings of the explanation-guided strategy that are not tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationQuery {
    pub criterion: Criterion,
    pub explainer: ExplainerKind,
    /// Explanation budget: maximum rows explained per selection.
    pub explain_budget: usize,
    /// Labeling budget: rows selected per iteration.
    pub label_budget: usize,
    pub normalize: bool,
    /// Keep the `A`, `B`, `C`, `W` intermediates in the result.
    pub diagnostics: bool,
}

/// One explanation-guided selection against the current pool.
///
/// The default criterion explains a random pool sample for its predicted
/// labels. The true-label criteria sample the labeled set instead, since
/// they need ground truth. Either way the resulting preference weights
/// score every remaining pool row. `params.baseline` must already be set.
pub fn explanation_query(
    model: &LinearModel,
    pool: &PoolState,
    query: &ExplanationQuery,
    params: &ExplainerParams,
    seed: u64,
) -> Result<QueryResult> {
    params.validate(pool.dims(), query.explainer == ExplainerKind::Shapley)?;
    let sample_seed = rng::derive_seed(seed, &[1]);
    let explain_seed = rng::derive_seed(seed, &[2]);
    let sample = match query.criterion {
        Criterion::PredDisagreeExplainSimilar => {
            sample_explanation_set(pool, query.explain_budget, sample_seed)?
        }
        _ => sample_labeled_explanation_set(pool.labeled(), query.explain_budget, sample_seed)?,
    };
    let preds = predict(model, &sample.features)?;

    let ctx = match query.criterion {
        Criterion::PredDisagreeExplainSimilar => {
            let q = batch_explain(query.explainer, model, &sample, &preds, params, explain_seed)?;
            PairwiseContext::new(sample.features.matrix().clone(), q, preds)?
        }
        Criterion::TrueLabelPairSimilar => {
            let truth: Vec<usize> = sample.indices.iter().map(|&i| pool.labeled().labels()[i]).collect();
            let q = batch_explain(query.explainer, model, &sample, &truth, params, explain_seed)?;
            PairwiseContext::new(sample.features.matrix().clone(), q, preds)?.with_true_labels(truth)?
        }
        Criterion::MisclassifiedSelfSimilar => {
            let truth: Vec<usize> = sample.indices.iter().map(|&i| pool.labeled().labels()[i]).collect();
            let q = batch_explain(query.explainer, model, &sample, &preds, params, explain_seed)?;
            // true-class explanations are only needed where the prediction is wrong
            let wrong: Vec<usize> = (0..sample.len()).filter(|&i| preds[i] != truth[i]).collect();
            let sub = ExplanationSample {
                indices: wrong.iter().map(|&i| sample.indices[i]).collect(),
                features: sample.features.select(&wrong),
            };
            let sub_truth: Vec<usize> = wrong.iter().map(|&i| truth[i]).collect();
            let q_sub = batch_explain(
                query.explainer,
                model,
                &sub,
                &sub_truth,
                params,
                rng::derive_seed(seed, &[3]),
            )?;
            let mut q_true = Matrix::zeros(sample.len(), pool.dims());
            for (r, &i) in wrong.iter().enumerate() {
                q_true.row_mut(i).copy_from_slice(q_sub.row(r));
            }
            PairwiseContext::new(sample.features.matrix().clone(), q, preds)?
                .with_true_labels(truth)?
                .with_true_explanations(q_true)?
        }
    }
    .with_normalization(query.normalize);

    let pool_x = pool.pool_features().matrix();
    let (w, diagnostics) = if query.diagnostics {
        let (_, mut diag) = staged_weights(pool_x, &ctx, query.criterion)?;
        let w = fused_weights(pool_x, &ctx, query.criterion)?;
        diag.w = w.clone();
        (w, Some(diag))
    } else {
        (fused_weights(pool_x, &ctx, query.criterion)?, None)
    };

    let mut result = select_top(w, query.label_budget, rng::derive_seed(seed, &[4]))?;
    if let Some(mut diag) = diagnostics {
        diag.random_fallback = result.random_fallback;
        result.diagnostics = Some(diag);
    }
    Ok(result)
}
