//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's matrix kernels.

#![allow(dead_code)]

use explain_al::dataset::{FeatureMatrix, LabeledSet};
use explain_al::linalg::Matrix;
use explain_al::rng;
use rand::Rng;

pub fn uniform_matrix(r: &mut impl Rng, rows: usize, cols: usize, half: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-half..half)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn labels(r: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..k)).collect()
}

/// A random pairwise instance: pool, explained sample, explanations and
/// label vectors.
pub struct Instance {
    pub pool: Matrix,
    pub sample: Matrix,
    pub q: Matrix,
    pub q_true: Matrix,
    pub pred: Vec<usize>,
    pub truth: Vec<usize>,
}

pub fn instance(seed: u64, max_s: usize, max_pool: usize, max_d: usize) -> Instance {
    let mut r = rng::seeded(seed);
    let n_s = r.random_range(1..=max_s);
    let n_pool = r.random_range(1..=max_pool);
    let d = r.random_range(1..=max_d);
    let k = r.random_range(1..=4);
    Instance {
        pool: uniform_matrix(&mut r, n_pool, d, 0.5),
        sample: uniform_matrix(&mut r, n_s, d, 0.5),
        q: uniform_matrix(&mut r, n_s, d, 0.5),
        q_true: uniform_matrix(&mut r, n_s, d, 0.5),
        pred: labels(&mut r, n_s, k),
        truth: labels(&mut r, n_s, k),
    }
}

/// `W` by explicit loops over every index of every matrix in the pipeline.
/// `b_labels` are the labels the disagreement matrix is built from.
pub fn brute_force_w(pool: &Matrix, sample: &Matrix, q: &Matrix, b_labels: &[usize]) -> Vec<f64> {
    let n = sample.rows();
    let d = sample.cols();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                a[i][j] += q.get(i, k) * sample.get(i, k) * q.get(j, k) * sample.get(j, k);
            }
        }
    }
    let mut c = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let b = if b_labels[i] != b_labels[j] { 1.0 } else { 0.0 };
            c[i] += a[i][j] * b;
        }
    }
    brute_force_w_from_c(pool, sample, &c)
}

pub fn brute_force_w_from_c(pool: &Matrix, sample: &Matrix, c: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; pool.rows()];
    for (p, wp) in w.iter_mut().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..sample.cols() {
                s += pool.get(p, k) * cj * sample.get(j, k);
            }
            *wp += s;
        }
    }
    w
}

/// Misclassified-criterion preferences by loops.
pub fn brute_force_c2(sample: &Matrix, q: &Matrix, q_true: &Matrix, pred: &[usize], truth: &[usize]) -> Vec<f64> {
    (0..sample.rows())
        .map(|i| {
            if pred[i] == truth[i] {
                return 0.0;
            }
            (0..sample.cols())
                .map(|k| q.get(i, k) * sample.get(i, k) * q_true.get(i, k) * sample.get(i, k))
                .sum()
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Exact Shapley values of `f` at `x` against `baseline`, enumerating all
/// `2^d` coalitions.
pub fn exact_shapley(f: impl Fn(&[f64]) -> f64, x: &[f64], baseline: &[f64]) -> Vec<f64> {
    let d = x.len();
    let value = |mask: usize| {
        let z: Vec<f64> = (0..d)
            .map(|k| if mask & (1 << k) != 0 { x[k] } else { baseline[k] })
            .collect();
        f(&z)
    };
    let values: Vec<f64> = (0..1usize << d).map(value).collect();
    let mut phi = vec![0.0; d];
    for mask in 0..1usize << d {
        let size = mask.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask & (1 << j) != 0 {
                continue;
            }
            let weight = factorial(size) * factorial(d - size - 1) / factorial(d);
            *p += weight * (values[mask | (1 << j)] - values[mask]);
        }
    }
    phi
}

/// Macro F1 straight from the definition, with `F1 = 0` for a class whose
/// precision and recall are both zero.
pub fn reference_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let tp = y_true.iter().zip(y_pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = y_true.iter().zip(y_pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fn_ = y_true.iter().zip(y_pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    total / k as f64
}

/// Small labeled set with `n` rows, `d` features and `k` classes; every
/// class appears at least `n / k` times.
pub fn labeled_set(seed: u64, n: usize, d: usize, k: usize) -> LabeledSet {
    let mut r = rng::seeded(seed);
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut x = uniform_matrix(&mut r, n, d, 1.0);
    for (i, &c) in y.iter().enumerate() {
        let v = x.get(i, c % d) + 1.5;
        x.set(i, c % d, v);
    }
    LabeledSet::new(FeatureMatrix::new(x).unwrap(), y, k).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
