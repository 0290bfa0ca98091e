//! Dataset loading, validation, preprocessing, splitting and synthesis.
//!
//! On disk a dataset is a directory with `features.csv` (one row per
//! sample), `labels.csv` (one 1-based class id per row), `attributes.csv`
//! (one row per class) and `splits.json`. In memory features are stored
//! column-major (`d x N`, one column per sample) and attributes as
//! `d' x C` (one column per class).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A zero-shot dataset: features, per-sample labels and per-class attributes.
///
/// Labels are 1-based class ids; class `c` owns attribute column `c - 1`.
/// All entries are validated finite at construction and the value is
/// immutable afterwards, so it is safe to share across threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,   // d x N
    labels: Vec<usize>,      // length N, values in 1..=C
    attributes: Array2<f64>, // d' x C
    class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        attributes: Array2<f64>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (d, n) = features.dim();
        let (d_attr, c) = attributes.dim();
        if n < 1 || d < 1 || d_attr < 1 {
            return Err(Error::Dimension(format!(
                "dataset requires N >= 1, d >= 1, d' >= 1; got N={n}, d={d}, d'={d_attr}"
            )));
        }
        if c < 2 {
            return Err(Error::Dimension(format!(
                "dataset requires at least 2 classes, got {c}"
            )));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "labels length {} does not match number of samples {}",
                labels.len(),
                n
            )));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label < 1 || label > c {
                return Err(Error::LabelOutOfRange {
                    label,
                    row,
                    n_classes: c,
                });
            }
        }
        if let Some(names) = &class_names {
            if names.len() != c {
                return Err(Error::Dimension(format!(
                    "class_names length {} does not match number of classes {}",
                    names.len(),
                    c
                )));
            }
        }
        for (name, m) in [("features", &features), ("attributes", &attributes)] {
            if let Some(((i, j), _)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    file: name.to_string(),
                    row: i,
                    col: j,
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            attributes,
            class_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attributes(&self) -> &Array2<f64> {
        &self.attributes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.attributes.ncols()
    }

    /// Sample indices of class `class_id`, ascending.
    pub fn class_samples(&self, class_id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature columns and labels of the given sample indices.
    pub fn gather_features(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((self.feature_dim(), indices.len()));
        let mut labels = Vec::with_capacity(indices.len());
        for (col, &i) in indices.iter().enumerate() {
            x.column_mut(col).assign(&self.features.column(i));
            labels.push(self.labels[i]);
        }
        (x, labels)
    }

    /// Attribute columns of the given class ids, in the given order.
    pub fn class_attribute_columns(&self, classes: &[usize]) -> Array2<f64> {
        let mut a = Array2::zeros((self.attr_dim(), classes.len()));
        for (j, &c) in classes.iter().enumerate() {
            a.column_mut(j).assign(&self.attributes.column(c - 1));
        }
        a
    }
}

/// Write a matrix as plain numeric CSV (shortest round-trip decimals).
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let row: Vec<f64> = row.to_vec();
        out.push_str(&format_row(&row));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Class-level split: train / validation (surrogate unseen) / unseen, plus
/// the per-class fraction of seen samples held out for the generalized
/// protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_classes: Vec<usize>,
    pub val_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub seen_test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.unseen_classes.is_empty() {
            return Err(Error::Invalid("unseen_classes must be non-empty".into()));
        }
        if !(self.seen_test_fraction >= 0.0 && self.seen_test_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "seen_test_fraction must lie in [0, 1), got {}",
                self.seen_test_fraction
            )));
        }
        let mut seen = BTreeSet::new();
        for (name, set) in [
            ("train_classes", &self.train_classes),
            ("val_classes", &self.val_classes),
            ("unseen_classes", &self.unseen_classes),
        ] {
            for &c in set.iter() {
                if c < 1 || c > n_classes {
                    return Err(Error::Invalid(format!(
                        "{name} contains class {c} outside [1..{n_classes}]"
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Invalid(format!(
                        "class {c} appears in more than one split set"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample-index partition produced by [`apply_split`]. The four sets are
/// disjoint and cover exactly the samples of the listed classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPartition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seen_test: Vec<usize>,
    pub unseen_test: Vec<usize>,
}

/// Preprocessing state needed to map new data into model space: the
/// training-class feature mean and the original attribute column norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub feature_mean: Vec<f64>,
    pub attribute_norms: Vec<f64>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a rectangular numeric CSV. Accepts scientific notation; rejects
/// non-finite values and ragged rows. Row/column indices in errors are
/// 1-based to match what an editor shows.
fn parse_matrix_csv(contents: &str, file: &str) -> Result<(Vec<f64>, usize, usize)> {
    let mut data = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (row_idx, line) in contents.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut row_len = 0;
        for (col_idx, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: file.to_string(),
                row: row_idx + 1,
                col: col_idx + 1,
                msg: format!("cannot parse {:?} as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    file: file.to_string(),
                    row: row_idx + 1,
                    col: col_idx + 1,
                });
            }
            data.push(v);
            row_len += 1;
        }
        match n_cols {
            None => n_cols = Some(row_len),
            Some(c) if c != row_len => {
                return Err(Error::Parse {
                    file: file.to_string(),
                    row: row_idx + 1,
                    col: row_len,
                    msg: format!("expected {c} columns, found {row_len}"),
                });
            }
            _ => {}
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| Error::Parse {
        file: file.to_string(),
        row: 1,
        col: 1,
        msg: "file is empty".into(),
    })?;
    Ok((data, n_rows, n_cols))
}

fn format_row(row: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        // `Display` prints the shortest representation that round-trips.
        s.push_str(&format!("{v}"));
    }
    s
}

/// Load a dataset directory. The file-level transposes (samples as rows,
/// classes as rows) are undone here; `splits.json` is required and
/// validated even though the split itself is returned by [`load_split`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features_raw = read_to_string(&dir.join("features.csv"))?;
    let (fdata, n, d) = parse_matrix_csv(&features_raw, "features.csv")?;
    let features_rows =
        Array2::from_shape_vec((n, d), fdata).map_err(|e| Error::Dimension(e.to_string()))?;

    let labels_raw = read_to_string(&dir.join("labels.csv"))?;
    let mut labels = Vec::new();
    for (row_idx, line) in labels_raw.lines().enumerate() {
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let label: usize = line.parse().map_err(|_| Error::Parse {
            file: "labels.csv".into(),
            row: row_idx + 1,
            col: 1,
            msg: format!("cannot parse {line:?} as a class id"),
        })?;
        labels.push(label);
    }

    let attrs_raw = read_to_string(&dir.join("attributes.csv"))?;
    let (adata, c, d_attr) = parse_matrix_csv(&attrs_raw, "attributes.csv")?;
    let attributes_rows =
        Array2::from_shape_vec((c, d_attr), adata).map_err(|e| Error::Dimension(e.to_string()))?;

    let split = load_split(dir)?;
    let ds = Dataset::new(
        features_rows.t().to_owned(),
        labels,
        attributes_rows.t().to_owned(),
        None,
    )?;
    split.validate(ds.n_classes())?;
    Ok(ds)
}

pub fn load_split(dir: &Path) -> Result<SplitSpec> {
    let path = dir.join("splits.json");
    let raw = read_to_string(&path)?;
    serde_json::from_str(&raw).map_err(|source| Error::Json { path, source })
}

/// Write a dataset directory in the on-disk format. Values are written in
/// shortest round-trip decimal form, so `load_dataset(save_dataset(ds))`
/// reproduces the arrays bit-exactly.
pub fn save_dataset(ds: &Dataset, split: &SplitSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut features = String::new();
    for i in 0..ds.n_samples() {
        let col: Vec<f64> = ds.features.column(i).to_vec();
        features.push_str(&format_row(&col));
        features.push('\n');
    }
    write_file(&dir.join("features.csv"), &features)?;

    let mut labels = String::new();
    for &l in &ds.labels {
        labels.push_str(&l.to_string());
        labels.push('\n');
    }
    write_file(&dir.join("labels.csv"), &labels)?;

    let mut attrs = String::new();
    for c in 0..ds.n_classes() {
        let col: Vec<f64> = ds.attributes.column(c).to_vec();
        attrs.push_str(&format_row(&col));
        attrs.push('\n');
    }
    write_file(&dir.join("attributes.csv"), &attrs)?;

    let path = dir.join("splits.json");
    let json = serde_json::to_string_pretty(split).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &json)
}

/// Mean-center features on the training classes and unit-normalize each
/// attribute column.
///
/// The mean is computed over samples of `train_classes` only (all samples
/// of those classes) and subtracted from every sample, so no statistics
/// leak from validation or unseen classes. Attribute normalization touches
/// all columns; a zero-norm column is a hard error.
pub fn preprocess(ds: &Dataset, train_classes: &[usize]) -> Result<(Dataset, PreprocessStats)> {
    let train_set: BTreeSet<usize> = train_classes.iter().copied().collect();
    for &c in &train_set {
        if c < 1 || c > ds.n_classes() {
            return Err(Error::Invalid(format!(
                "train class {c} outside [1..{}]",
                ds.n_classes()
            )));
        }
        if ds.class_samples(c).is_empty() {
            return Err(Error::Invalid(format!("train class {c} has no samples")));
        }
    }
    if train_set.is_empty() {
        return Err(Error::Invalid("no training classes given".into()));
    }

    let d = ds.feature_dim();
    let mut mean = Array1::<f64>::zeros(d);
    let mut count = 0usize;
    for (i, &l) in ds.labels.iter().enumerate() {
        if train_set.contains(&l) {
            mean += &ds.features.column(i);
            count += 1;
        }
    }
    mean.mapv_inplace(|v| v / count as f64);

    let mut norms = Vec::with_capacity(ds.n_classes());
    for c in 0..ds.n_classes() {
        let col = ds.attributes.column(c);
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric(format!(
                "attribute column for class {} has zero norm",
                c + 1
            )));
        }
        norms.push(norm);
    }

    let stats = PreprocessStats {
        feature_mean: mean.to_vec(),
        attribute_norms: norms,
    };
    let out = apply_stats(ds, &stats)?;
    Ok((out, stats))
}

/// Apply previously computed preprocessing statistics. Used at evaluation
/// time so test data goes through exactly the arithmetic of [`preprocess`].
pub fn apply_stats(ds: &Dataset, stats: &PreprocessStats) -> Result<Dataset> {
    if stats.feature_mean.len() != ds.feature_dim() {
        return Err(Error::Dimension(format!(
            "feature_mean length {} does not match d = {}",
            stats.feature_mean.len(),
            ds.feature_dim()
        )));
    }
    if stats.attribute_norms.len() != ds.n_classes() {
        return Err(Error::Dimension(format!(
            "attribute_norms length {} does not match C = {}",
            stats.attribute_norms.len(),
            ds.n_classes()
        )));
    }
    let mut features = ds.features.clone();
    for mut col in features.columns_mut() {
        for (v, m) in col.iter_mut().zip(stats.feature_mean.iter()) {
            *v -= m;
        }
    }
    let mut attributes = ds.attributes.clone();
    for (c, mut col) in attributes.columns_mut().into_iter().enumerate() {
        let norm = stats.attribute_norms[c];
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "attribute norm for class {} must be positive, got {norm}",
                c + 1
            )));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Dataset::new(features, ds.labels.clone(), attributes, ds.class_names.clone())
}

/// Replicate the per-class attributes into a per-sample matrix: column `i`
/// is the attribute column of `labels[i]`.
pub fn replicate_attributes(ds: &Dataset) -> Array2<f64> {
    let mut y = Array2::zeros((ds.attr_dim(), ds.n_samples()));
    for (i, &l) in ds.labels.iter().enumerate() {
        y.column_mut(i).assign(&ds.attributes.column(l - 1));
    }
    y
}

/// Partition sample indices according to the split.
///
/// Each train class loses a `floor(fraction * N_c)`-sized holdout to
/// `seen_test`, chosen by a seeded shuffle of that class's indices; train
/// classes are visited in ascending id order so the partition is a pure
/// function of `(ds, spec)`. All four sets come back sorted.
pub fn apply_split(ds: &Dataset, spec: &SplitSpec) -> Result<SplitPartition> {
    spec.validate(ds.n_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut seen_test = Vec::new();

    let mut train_sorted = spec.train_classes.clone();
    train_sorted.sort_unstable();
    for &c in &train_sorted {
        let mut idxs = ds.class_samples(c);
        if idxs.is_empty() {
            return Err(Error::Invalid(format!("train class {c} has no samples")));
        }
        idxs.shuffle(&mut rng);
        let holdout = (spec.seen_test_fraction * idxs.len() as f64).floor() as usize;
        if holdout >= idxs.len() {
            return Err(Error::Invalid(format!(
                "train class {c} has no samples remaining after holdout"
            )));
        }
        seen_test.extend_from_slice(&idxs[..holdout]);
        train.extend_from_slice(&idxs[holdout..]);
    }

    let mut val = Vec::new();
    for &c in &spec.val_classes {
        val.extend(ds.class_samples(c));
    }
    let mut unseen_test = Vec::new();
    for &c in &spec.unseen_classes {
        unseen_test.extend(ds.class_samples(c));
    }

    train.sort_unstable();
    seen_test.sort_unstable();
    val.sort_unstable();
    unseen_test.sort_unstable();
    Ok(SplitPartition {
        train,
        val,
        seen_test,
        unseen_test,
    })
}

/// Generation arguments recorded next to a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenMeta {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub attr_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Synthesize a dataset where each sample of class `c` is `G a_c + eps`.
///
/// Attributes are standard-normal draws normalized to unit columns; the
/// hidden lift `G` has orthonormal columns obtained from a seeded QR
/// (modified Gram-Schmidt) of a Gaussian matrix; `eps` is isotropic
/// `N(0, noise_sigma^2)`. Fully deterministic for fixed arguments.
pub fn generate_synthetic(
    n_classes: usize,
    per_class: usize,
    d: usize,
    d_attr: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if d_attr < 1 || d < d_attr {
        return Err(Error::Invalid(format!(
            "need d >= d_attr >= 1, got d={d}, d_attr={d_attr}"
        )));
    }
    if n_classes < 2 || per_class < 1 {
        return Err(Error::Invalid(format!(
            "need n_classes >= 2 and per_class >= 1, got {n_classes} and {per_class}"
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Invalid(format!(
            "noise_sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut attributes = Array2::zeros((d_attr, n_classes));
    for c in 0..n_classes {
        for k in 0..d_attr {
            attributes[[k, c]] = rng.sample::<f64, _>(StandardNormal);
        }
        let col = attributes.column(c);
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric("degenerate zero attribute draw".into()));
        }
        attributes.column_mut(c).mapv_inplace(|v| v / norm);
    }

    let mut lift = Array2::zeros((d, d_attr));
    for j in 0..d_attr {
        for i in 0..d {
            lift[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    orthonormalize_columns(&mut lift)?;

    let n = n_classes * per_class;
    let mut features = Array2::zeros((d, n));
    let mut labels = Vec::with_capacity(n);
    let mut col = 0;
    for c in 0..n_classes {
        let clean = lift.dot(&attributes.column(c));
        for _ in 0..per_class {
            for i in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                features[[i, col]] = clean[i] + noise_sigma * eps;
            }
            labels.push(c + 1);
            col += 1;
        }
    }
    Dataset::new(features, labels, attributes, None)
}

/// In-place modified Gram-Schmidt; errors if the columns are numerically
/// dependent.
fn orthonormalize_columns(m: &mut Array2<f64>) -> Result<()> {
    let cols = m.ncols();
    for j in 0..cols {
        for k in 0..j {
            let proj = m.column(k).dot(&m.column(j));
            let qk = m.column(k).to_owned();
            let mut cj = m.column_mut(j);
            cj.iter_mut().zip(qk.iter()).for_each(|(v, q)| *v -= proj * q);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric(
                "rank-deficient matrix in orthonormalization".into(),
            ));
        }
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(())
}

/// Generate a synthetic dataset and write it to `dir` together with a
/// class-level split and `gen_meta.json`.
///
/// Classes are shuffled (seeded) and divided into train/val/unseen by the
/// given fractions of the class count.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_to_dir(
    dir: &Path,
    n_classes: usize,
    per_class: usize,
    d: usize,
    d_attr: usize,
    noise_sigma: f64,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
    seen_test_fraction: f64,
) -> Result<Dataset> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Invalid(format!(
            "class fractions must satisfy train > 0, val >= 0, train + val < 1; got {train_frac} and {val_frac}"
        )));
    }
    let ds = generate_synthetic(n_classes, per_class, d, d_attr, noise_sigma, seed)?;

    let mut class_ids: Vec<usize> = (1..=n_classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1); // independent of the data-generation stream
    class_ids.shuffle(&mut rng);
    let n_train = ((train_frac * n_classes as f64).round() as usize).max(1);
    let n_val = (val_frac * n_classes as f64).round() as usize;
    if n_train + n_val >= n_classes {
        return Err(Error::Invalid(
            "class fractions leave no unseen classes".into(),
        ));
    }
    let mut train_classes: Vec<usize> = class_ids[..n_train].to_vec();
    let mut val_classes: Vec<usize> = class_ids[n_train..n_train + n_val].to_vec();
    let mut unseen_classes: Vec<usize> = class_ids[n_train + n_val..].to_vec();
    train_classes.sort_unstable();
    val_classes.sort_unstable();
    unseen_classes.sort_unstable();

    let split = SplitSpec {
        train_classes,
        val_classes,
        unseen_classes,
        seen_test_fraction,
        seed,
    };
    save_dataset(&ds, &split, dir)?;

    let meta = GenMeta {
        n_classes,
        per_class,
        dim: d,
        attr_dim: d_attr,
        noise_sigma,
        seed,
    };
    let path = dir.join("gen_meta.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &json)?;
    Ok(ds)
}
