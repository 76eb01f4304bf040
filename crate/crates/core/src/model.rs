//! Linear classifiers trained by full-batch gradient descent, cross-validated
//! selection of the regularization coefficient and the F1-macro metric.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::dataset::{FeatureMatrix, LabeledSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Multinomial logistic regression (softmax cross-entropy).
    Logistic,
    /// One-vs-rest linear SVM with squared hinge loss.
    Svm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Svm => "svm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "svm" => Ok(ModelKind::Svm),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Matrix,
    bias: Vec<f64>,
    kind: ModelKind,
    reg_c: f64,
}

impl LinearModel {
    pub fn new(weights: Matrix, bias: Vec<f64>, kind: ModelKind, reg_c: f64) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                expected: weights.rows(),
                actual: bias.len(),
            });
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if !(reg_c > 0.0) {
            return Err(Error::invalid("regularization coefficient must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            kind,
            reg_c,
        })
    }

    pub fn zeros(num_classes: usize, dims: usize, kind: ModelKind, reg_c: f64) -> Self {
        Self {
            weights: Matrix::zeros(num_classes, dims),
            bias: vec![0.0; num_classes],
            kind,
            reg_c,
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn reg_c(&self) -> f64 {
        self.reg_c
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dims(&self) -> usize {
        self.weights.cols()
    }

    /// Decision value of `class` for a single input row.
    #[inline]
    pub fn class_score(&self, x: &[f64], class: usize) -> f64 {
        dot(self.weights.row(class), x) + self.bias[class]
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        if d != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: d,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Step size relative to a Lipschitz bound of the loss gradient; values
    /// below 2 are stable.
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop once the absolute change in loss between epochs drops below this.
    pub tolerance: f64,
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 300,
            tolerance: 1e-7,
            c_grid: vec![0.1, 1.0, 10.0],
            folds: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.c_grid.is_empty() {
            return Err(Error::invalid("c_grid must be non-empty"));
        }
        if self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("c_grid entries must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        Ok(())
    }
}

/// Regularized training loss and its gradient with respect to weights and bias.
///
/// The loss is the mean per-instance loss plus `‖W‖² / (2·C·n)`; the bias is
/// not regularized.
pub fn loss_and_gradient(
    kind: ModelKind,
    data: &LabeledSet,
    weights: &Matrix,
    bias: &[f64],
    reg_c: f64,
) -> (f64, Matrix, Vec<f64>) {
    let n = data.len();
    let k = weights.rows();
    let d = weights.cols();
    let nf = n as f64;
    let mut grad_w = Matrix::zeros(k, d);
    let mut grad_b = vec![0.0; k];
    let mut loss = 0.0;
    let mut dscore = vec![0.0; k];

    for (i, &y) in data.labels().iter().enumerate() {
        let x = data.features().row(i);
        let scores: Vec<f64> = (0..k).map(|c| dot(weights.row(c), x) + bias[c]).collect();
        match kind {
            ModelKind::Logistic => {
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                let lse = m + z.ln();
                loss += lse - scores[y];
                for c in 0..k {
                    let p = (scores[c] - lse).exp();
                    dscore[c] = p - if c == y { 1.0 } else { 0.0 };
                }
            }
            ModelKind::Svm => {
                for c in 0..k {
                    let t = if c == y { 1.0 } else { -1.0 };
                    let slack = (1.0 - t * scores[c]).max(0.0);
                    loss += slack * slack;
                    dscore[c] = -2.0 * t * slack;
                }
            }
        }
        for c in 0..k {
            let g = dscore[c];
            if g != 0.0 {
                grad_b[c] += g;
                for (gw, xv) in grad_w.row_mut(c).iter_mut().zip(x) {
                    *gw += g * xv;
                }
            }
        }
    }

    let lambda = 1.0 / (reg_c * nf);
    let sq: f64 = weights.as_slice().iter().map(|w| w * w).sum();
    loss = loss / nf + 0.5 * lambda * sq;
    for c in 0..k {
        for (gw, w) in grad_w.row_mut(c).iter_mut().zip(weights.row(c)) {
            *gw = *gw / nf + lambda * w;
        }
        grad_b[c] /= nf;
    }
    (loss, grad_w, grad_b)
}

fn lipschitz_bound(kind: ModelKind, data: &LabeledSet, reg_c: f64) -> f64 {
    let n = data.len() as f64;
    let mean_sq: f64 = data
        .features()
        .matrix()
        .iter_rows()
        .map(|r| dot(r, r) + 1.0)
        .sum::<f64>()
        / n;
    let curvature = match kind {
        ModelKind::Logistic => 0.5,
        ModelKind::Svm => 2.0,
    };
    curvature * mean_sq + 1.0 / (reg_c * n)
}

/// Trains a linear model from zero initialization by full-batch gradient
/// descent. Returns the lowest-loss iterate, so the final loss never exceeds
/// the initial one.
pub fn train(data: &LabeledSet, kind: ModelKind, reg_c: f64, cfg: &TrainConfig) -> Result<LinearModel> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if !(reg_c > 0.0 && reg_c.is_finite()) {
        return Err(Error::invalid("regularization coefficient must be positive"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning_rate must be positive"));
    }
    let k = data.num_classes();
    let d = data.dims();
    let step = cfg.learning_rate / lipschitz_bound(kind, data, reg_c);

    let mut w = Matrix::zeros(k, d);
    let mut b = vec![0.0; k];
    let mut best = (f64::INFINITY, w.clone(), b.clone());
    let mut prev = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let (loss, gw, gb) = loss_and_gradient(kind, data, &w, &b, reg_c);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if loss < best.0 {
            best = (loss, w.clone(), b.clone());
        }
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
        for c in 0..k {
            for (wv, g) in w.row_mut(c).iter_mut().zip(gw.row(c)) {
                *wv -= step * g;
            }
            b[c] -= step * gb[c];
        }
        if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
    }

    if cfg.epochs > 0 {
        let (loss, _, _) = loss_and_gradient(kind, data, &w, &b, reg_c);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: cfg.epochs });
        }
        if loss < best.0 {
            best = (loss, w, b);
        }
    } else {
        best = (0.0, w, b);
    }
    LinearModel::new(best.1, best.2, kind, reg_c)
}

pub fn predict_scores(model: &LinearModel, x: &FeatureMatrix) -> Result<Matrix> {
    model.check_dims(x.dims())?;
    let mut out = x.matrix().matmul_transposed(model.weights())?;
    for i in 0..out.rows() {
        for (s, b) in out.row_mut(i).iter_mut().zip(model.bias()) {
            *s += b;
        }
    }
    Ok(out)
}

/// Row-wise softmax, stable under a constant shift of a row.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Class probabilities as the softmax of decision scores, for both model kinds.
pub fn predict_proba(model: &LinearModel, x: &FeatureMatrix) -> Result<Matrix> {
    Ok(softmax_rows(&predict_scores(model, x)?))
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(model: &LinearModel, x: &FeatureMatrix) -> Result<Vec<usize>> {
    let scores = predict_scores(model, x)?;
    Ok(scores.iter_rows().map(argmax).collect())
}

/// Unweighted mean of per-class F1 over all `num_classes` classes. A class
/// with precision + recall = 0 (including one absent from both vectors)
/// contributes 0.
pub fn f1_macro(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            actual: y_pred.len(),
        });
    }
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!(
                "label out of range for {num_classes} classes"
            )));
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Stratified fold assignment: rows of each class are shuffled and dealt
/// round-robin across folds.
pub fn stratified_folds(labels: &[usize], num_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut r = rng::seeded(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for idx in &mut by_class {
        idx.shuffle(&mut r);
        for &i in idx.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// Mean validation F1-macro of `reg_c` over the given fold assignment.
pub fn cv_score(
    data: &LabeledSet,
    kind: ModelKind,
    reg_c: f64,
    cfg: &TrainConfig,
    assignment: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for fold in 0..cfg.folds {
        let (val, tr): (Vec<usize>, Vec<usize>) =
            (0..data.len()).partition(|&i| assignment[i] == fold);
        let train_set = data.subset(&tr);
        let val_set = data.subset(&val);
        let model = train(&train_set, kind, reg_c, cfg)?;
        let pred = predict(&model, val_set.features())?;
        total += f1_macro(val_set.labels(), &pred, data.num_classes())?;
    }
    Ok(total / cfg.folds as f64)
}

/// Picks the C from `cfg.c_grid` with the best mean fold F1-macro; ties go
/// to the smaller C.
pub fn grid_search_cv(data: &LabeledSet, kind: ModelKind, cfg: &TrainConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let smallest = data
        .class_counts()
        .into_iter()
        .filter(|&c| c > 0)
        .min()
        .unwrap_or(0);
    if cfg.folds > smallest {
        return Err(Error::invalid(format!(
            "{} folds infeasible: smallest class has {smallest} rows",
            cfg.folds
        )));
    }
    let assignment = stratified_folds(data.labels(), data.num_classes(), cfg.folds, cfg.seed);
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let score = cv_score(data, kind, c, cfg, &assignment)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Grid search followed by a refit on all of `data` with the chosen C.
pub fn fit_with_cv(data: &LabeledSet, kind: ModelKind, cfg: &TrainConfig) -> Result<LinearModel> {
    let (c, _) = grid_search_cv(data, kind, cfg)?;
    train(data, kind, c, cfg)
}
