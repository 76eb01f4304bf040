//! Dataset ingestion, synthetic generation, splitting and the simulated
//! label oracle.
//!
//! A [`PoolState`] owns the unlabeled pool together with its hidden labels.
//! The hidden labels have no public accessor: the only code path that reads
//! them is [`PoolState::commit_batch`], which also bumps an audit counter so
//! tests can confirm no strategy peeked.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Dense feature matrix with all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for (row, r) in m.iter_rows().enumerate() {
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row, col });
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn empty(dims: usize) -> Self {
        Self(Matrix::zeros(0, dims))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dims(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select_rows(indices))
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.dims()];
        if self.rows() == 0 {
            return means;
        }
        for r in self.0.iter_rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: FeatureMatrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledSet {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.dims()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    fn push(&mut self, row: &[f64], label: usize) -> Result<()> {
        self.features.0.push_row(row)?;
        self.labels.push(label);
        Ok(())
    }
}

/// Reads a dataset CSV (`id,label,f0,...,f{d-1}`) from disk.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(file)
}

/// Parses a dataset CSV from any reader. The number of classes is inferred
/// as `max label + 1`.
pub fn parse_dataset<R: Read>(reader: R) -> Result<LabeledSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::EmptyDataset),
    };
    let dims = validate_header(&header)?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != dims + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", dims + 2, rec.len()),
            });
        }
        let label_field = &rec[1];
        let label: i64 = label_field.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-integer label {label_field:?}"),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
        for (col, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric feature {field:?} in column f{col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    row: labels.len() - 1,
                    col,
                });
            }
            values.push(v);
        }
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = FeatureMatrix::new(Matrix::from_vec(labels.len(), dims, values)?)?;
    LabeledSet::new(features, labels, num_classes)
}

fn validate_header(header: &csv::StringRecord) -> Result<usize> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    if header.len() < 3 {
        return Err(bad("header needs id, label and at least one feature".into()));
    }
    if &header[0] != "id" || &header[1] != "label" {
        return Err(bad(format!(
            "header must start with `id,label`, found `{},{}`",
            &header[0], &header[1]
        )));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(bad(format!("expected column f{j}, found {name:?}")));
        }
    }
    Ok(header.len() - 2)
}

/// Writes a labeled set in the dataset CSV format.
pub fn write_dataset<W: std::io::Write>(data: &LabeledSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..data.dims()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec = vec![i.to_string(), data.labels()[i].to_string()];
        rec.extend(data.features().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dims: usize,
    pub rows: usize,
    /// Fraction of rows moved next to a foreign class centroid while keeping
    /// their own label.
    pub confusion_fraction: f64,
    /// Distance of every centroid from the origin, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    /// How far a confused row is pulled back from the foreign centroid
    /// towards its own (0 = exactly at the foreign centroid).
    pub confusion_pull: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            dims: 16,
            rows: 5000,
            confusion_fraction: 0.15,
            separation: 3.0,
            noise_std: 1.0,
            confusion_pull: 0.25,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Class centroids. With `K <= d` these are scaled basis vectors; otherwise
    /// random unit directions drawn from the generator's seed.
    pub fn centroids(&self) -> Vec<Vec<f64>> {
        let scale = self.separation * self.noise_std;
        if self.num_classes <= self.dims {
            (0..self.num_classes)
                .map(|k| {
                    let mut c = vec![0.0; self.dims];
                    c[k] = scale;
                    c
                })
                .collect()
        } else {
            let mut r = rng::seeded(rng::derive_seed(self.seed, &[0xC3]));
            (0..self.num_classes)
                .map(|_| {
                    let v: Vec<f64> = (0..self.dims)
                        .map(|_| StandardNormal.sample(&mut r))
                        .collect();
                    let n = crate::linalg::l2_norm(&v).max(f64::MIN_POSITIVE);
                    v.iter().map(|x| x / n * scale).collect()
                })
                .collect()
        }
    }
}

/// Generates Gaussian class blobs. Noise is truncated at 3σ per coordinate,
/// so with `confusion_fraction = 0` every row lies within 3σ (L∞) of its
/// class centroid.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<LabeledSet> {
    if !(0.0..=1.0).contains(&spec.confusion_fraction) {
        return Err(Error::invalid(format!(
            "confusion_fraction {} outside [0, 1]",
            spec.confusion_fraction
        )));
    }
    if spec.num_classes < 2 || spec.dims < 2 || spec.rows == 0 {
        return Err(Error::invalid(
            "synthetic data needs K >= 2, d >= 2 and at least one row",
        ));
    }
    if !(spec.noise_std > 0.0 && spec.noise_std.is_finite() && spec.separation.is_finite()) {
        return Err(Error::invalid("noise_std must be positive and finite"));
    }

    let centroids = spec.centroids();
    let mut r = rng::seeded(spec.seed);

    let mut labels: Vec<usize> = (0..spec.rows).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut r);

    let n_confused = (spec.confusion_fraction * spec.rows as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.rows).collect();
    order.shuffle(&mut r);
    let confused: HashSet<usize> = order.into_iter().take(n_confused).collect();

    let mut values = Vec::with_capacity(spec.rows * spec.dims);
    for (i, &y) in labels.iter().enumerate() {
        let own = &centroids[y];
        let center: Vec<f64> = if confused.contains(&i) {
            let mut other = r.random_range(0..spec.num_classes - 1);
            if other >= y {
                other += 1;
            }
            let foreign = &centroids[other];
            foreign
                .iter()
                .zip(own)
                .map(|(f, o)| f + spec.confusion_pull * (o - f))
                .collect()
        } else {
            own.clone()
        };
        for c in center {
            values.push(c + spec.noise_std * truncated_normal(&mut r, 3.0));
        }
    }

    let features = FeatureMatrix::new(Matrix::from_vec(spec.rows, spec.dims, values)?)?;
    LabeledSet::new(features, labels, spec.num_classes)
}

fn truncated_normal(r: &mut rng::Rng, bound: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(r);
        if z.abs() <= bound {
            return z;
        }
    }
}

/// Splits `total` items over groups proportionally to `counts`, using the
/// largest-remainder rule so the allocation sums to `total` exactly. Ties in
/// the remainder go to the lower group index.
pub(crate) fn allocate_proportional(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let total = total.min(n);
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut rema: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| ((c * total) % n, k))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - alloc.iter().sum::<usize>();
    for &(_, k) in &rema {
        if left == 0 {
            break;
        }
        if alloc[k] < counts[k] {
            alloc[k] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Stratified partition of `labels` into consecutive groups of the given sizes.
/// Returns row indices per group, each group in shuffled order.
fn stratified_partition(
    labels: &[usize],
    num_classes: usize,
    sizes: &[usize],
    r: &mut rng::Rng,
) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(r);
    }

    let mut cursor = vec![0usize; num_classes];
    let mut groups = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let remaining: Vec<usize> = by_class
            .iter()
            .zip(&cursor)
            .map(|(idx, &c)| idx.len() - c)
            .collect();
        let quota = allocate_proportional(&remaining, size);
        let mut group = Vec::with_capacity(size);
        for k in 0..num_classes {
            group.extend_from_slice(&by_class[k][cursor[k]..cursor[k] + quota[k]]);
            cursor[k] += quota[k];
        }
        group.shuffle(r);
        groups.push(group);
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingClassPolicy {
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub orig: usize,
    pub inc: usize,
    pub test: usize,
}

/// Labeled set, unlabeled pool (with hidden oracle labels) and test set for
/// one simulated run.
#[derive(Debug, Clone)]
pub struct PoolState {
    labeled: LabeledSet,
    labeled_source: Vec<usize>,
    n_orig: usize,
    n_inc: usize,
    pool_features: FeatureMatrix,
    pool_hidden_labels: Vec<usize>,
    pool_ids: Vec<usize>,
    pool_source: Vec<usize>,
    test: LabeledSet,
    consumed: BTreeSet<usize>,
    oracle_reads: usize,
}

/// Stratified split into the initial labeled set, the unlabeled pool and the
/// test set.
pub fn split_initial(
    data: &LabeledSet,
    sizes: SplitSizes,
    seed: u64,
    policy: MissingClassPolicy,
) -> Result<PoolState> {
    let needed = sizes.orig + sizes.inc + sizes.test;
    if needed > data.len() {
        return Err(Error::invalid(format!(
            "split sizes {}+{}+{} = {needed} exceed {} rows",
            sizes.orig,
            sizes.inc,
            sizes.test,
            data.len()
        )));
    }
    if sizes.orig == 0 {
        return Err(Error::invalid("initial labeled split must be non-empty"));
    }
    let mut r = rng::seeded(seed);
    let groups = stratified_partition(
        data.labels(),
        data.num_classes(),
        &[sizes.orig, sizes.inc, sizes.test],
        &mut r,
    );
    let [orig, inc, test]: [Vec<usize>; 3] = groups.try_into().expect("three groups");

    let labeled = data.subset(&orig);
    let counts = labeled.class_counts();
    let data_counts = data.class_counts();
    for (k, (&c, &dc)) in counts.iter().zip(&data_counts).enumerate() {
        if c == 0 && dc > 0 {
            match policy {
                MissingClassPolicy::Error => {
                    return Err(Error::MissingClass {
                        class: k,
                        split: "labeled",
                    })
                }
                MissingClassPolicy::Warn => {
                    log::warn!("class {k} absent from the initial labeled split")
                }
            }
        }
    }

    let pool = data.subset(&inc);
    Ok(PoolState {
        labeled,
        labeled_source: orig,
        n_orig: sizes.orig,
        n_inc: sizes.inc,
        pool_features: pool.features,
        pool_hidden_labels: pool.labels,
        pool_ids: (0..sizes.inc).collect(),
        pool_source: inc,
        test: data.subset(&test),
        consumed: BTreeSet::new(),
        oracle_reads: 0,
    })
}

impl PoolState {
    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn pool_features(&self) -> &FeatureMatrix {
        &self.pool_features
    }

    pub fn pool_len(&self) -> usize {
        self.pool_features.rows()
    }

    /// Original `X_inc` index of every row still in the pool.
    pub fn pool_ids(&self) -> &[usize] {
        &self.pool_ids
    }

    pub fn test(&self) -> &LabeledSet {
        &self.test
    }

    pub fn consumed(&self) -> &BTreeSet<usize> {
        &self.consumed
    }

    /// Number of hidden labels revealed so far. Only `commit_batch` moves it.
    pub fn oracle_reads(&self) -> usize {
        self.oracle_reads
    }

    pub fn n_orig(&self) -> usize {
        self.n_orig
    }

    pub fn n_inc(&self) -> usize {
        self.n_inc
    }

    pub fn num_classes(&self) -> usize {
        self.labeled.num_classes()
    }

    pub fn dims(&self) -> usize {
        self.labeled.dims()
    }

    /// Source-dataset row of every labeled instance, in labeled-set order.
    pub fn labeled_source_rows(&self) -> &[usize] {
        &self.labeled_source
    }

    /// Source-dataset row of every pool instance, in pool order.
    pub fn pool_source_rows(&self) -> &[usize] {
        &self.pool_source
    }

    /// Reveals the oracle labels of `selected` (indices into the current
    /// pool), appends those rows to the labeled set in selection order and
    /// removes them from the pool.
    pub fn commit_batch(&mut self, selected: &[usize]) -> Result<()> {
        let len = self.pool_len();
        let mut seen = HashSet::with_capacity(selected.len());
        for &i in selected {
            if i >= len {
                return Err(Error::IndexOutOfRange { index: i, len });
            }
            if !seen.insert(i) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        if selected.is_empty() {
            return Ok(());
        }

        for &i in selected {
            let label = self.pool_hidden_labels[i];
            self.oracle_reads += 1;
            self.labeled.push(self.pool_features.row(i), label)?;
            self.labeled_source.push(self.pool_source[i]);
            let fresh = self.consumed.insert(self.pool_ids[i]);
            debug_assert!(fresh, "pool id committed twice");
        }

        let keep: Vec<usize> = (0..len).filter(|i| !seen.contains(i)).collect();
        self.pool_features = self.pool_features.select(&keep);
        self.pool_hidden_labels = keep.iter().map(|&i| self.pool_hidden_labels[i]).collect();
        self.pool_ids = keep.iter().map(|&i| self.pool_ids[i]).collect();
        self.pool_source = keep.iter().map(|&i| self.pool_source[i]).collect();
        Ok(())
    }

    /// Copy of this state whose labeled set is restricted to `rows`. Used by
    /// the tuner to simulate a selection against a training portion while a
    /// validation portion stays held out.
    pub(crate) fn fork_with_labeled_rows(&self, rows: &[usize]) -> PoolState {
        let mut fork = self.clone();
        fork.labeled = self.labeled.subset(rows);
        fork.labeled_source = rows.iter().map(|&i| self.labeled_source[i]).collect();
        fork.n_orig = rows.len();
        fork
    }
}

/// Rows drawn for explanation, in explanation space (identity map).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSample {
    /// Indices into the set the sample was drawn from (pool or labeled set).
    pub indices: Vec<usize>,
    pub features: FeatureMatrix,
}

impl ExplanationSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn sample_rows(features: &FeatureMatrix, budget: usize, seed: u64) -> Result<ExplanationSample> {
    if budget == 0 {
        return Err(Error::invalid("budget must be positive"));
    }
    if features.rows() == 0 {
        return Err(Error::invalid("cannot sample from an empty set"));
    }
    let mut r = rng::seeded(seed);
    let n = budget.min(features.rows());
    let indices = rand::seq::index::sample(&mut r, features.rows(), n).into_vec();
    Ok(ExplanationSample {
        features: features.select(&indices),
        indices,
    })
}

/// Uniformly samples up to `budget` distinct pool rows without replacement.
pub fn sample_explanation_set(
    pool: &PoolState,
    budget: usize,
    seed: u64,
) -> Result<ExplanationSample> {
    sample_rows(pool.pool_features(), budget, seed)
}

/// Uniformly samples up to `budget` distinct labeled rows; used by criteria
/// that need ground-truth labels.
pub fn sample_labeled_explanation_set(
    labeled: &LabeledSet,
    budget: usize,
    seed: u64,
) -> Result<ExplanationSample> {
    sample_rows(labeled.features(), budget, seed)
}

pub(crate) fn holdout_indices(
    labeled: &LabeledSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = labeled.len();
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::invalid(format!(
            "validation fraction {fraction} leaves a split empty for {n} rows"
        )));
    }
    let mut r = rng::seeded(seed);
    let mut groups =
        stratified_partition(labeled.labels(), labeled.num_classes(), &[n_val, n - n_val], &mut r);
    let train = groups.pop().expect("two groups");
    let val = groups.pop().expect("two groups");
    Ok((train, val))
}

/// Stratified train/validation holdout of a labeled set.
pub fn holdout_validation(
    labeled: &LabeledSet,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    let (train, val) = holdout_indices(labeled, fraction, seed)?;
    Ok((labeled.subset(&train), labeled.subset(&val)))
}
