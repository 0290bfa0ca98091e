//! Minibatch SGD with RMSprop preconditioning over the projection matrix.
//!
//! Each step draws fresh negatives per sample, averages per-sample
//! gradients and per-sample squared gradients over the batch, updates the
//! moving average `A`, and applies the preconditioned step with an
//! inverse-time decaying learning rate. Per-sample gradients inside a
//! batch may be computed in parallel; the reduction always folds them in
//! sample order, so results are bit-identical to sequential execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessStats};
use crate::error::{Error, Result};
use crate::eval;
use crate::kernels::KernelSpec;
use crate::objective::{
    full_objective, sample_loss_grad, sample_negatives, ObjectiveSpec, TransformStyle, Variant,
};
use crate::parallel::map_collect;

/// Initialization of the projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// i.i.d. `N(0, 1/d)` entries.
    #[serde(rename = "gauss")]
    GaussianScaled,
    /// Ridge-regularized minimizer of `||W^T X - Y||_F^2`.
    #[serde(rename = "lsq")]
    LeastSquares,
}

/// Optimizer hyperparameters. Defaults follow the training recipe:
/// minibatches of 10, squared-gradient decay 0.99, 10 epochs, and an
/// inverse-time learning-rate schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub beta0: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub trace_every: usize,
    /// Weight within-class terms by the true per-class count instead of
    /// the balanced `N / C` simplification.
    #[serde(default)]
    pub true_class_counts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            gamma: 0.99,
            epochs: 10,
            beta0: 0.01,
            decay: 1e-4,
            epsilon: 1e-8,
            seed: 0,
            init: InitStrategy::GaussianScaled,
            trace_every: 1,
            true_class_counts: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Invalid(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return Err(Error::Invalid(format!(
                "beta0 must be finite and > 0, got {}",
                self.beta0
            )));
        }
        if !(self.decay >= 0.0) || !self.decay.is_finite() {
            return Err(Error::Invalid(format!(
                "decay must be finite and >= 0, got {}",
                self.decay
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Invalid(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if self.trace_every < 1 {
            return Err(Error::Invalid("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the training trace. `batch_objective` is the minibatch mean
/// of the per-sample loss; `probe_objective` is the negated full alignment
/// on the probe set so that, like the batch objective, lower is better.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_objective: f64,
    pub probe_objective: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    /// Write `trace.csv` with one row per entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,epoch,batch_objective,probe_objective,val_acc\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.iteration,
                e.epoch,
                e.batch_objective,
                e.probe_objective.map(|v| v.to_string()).unwrap_or_default(),
                e.val_acc.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Run statistics kept with the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub first_epoch_mean_objective: Option<f64>,
    pub final_epoch_mean_objective: Option<f64>,
    pub final_val_acc: Option<f64>,
}

/// Objective description stored in `model.json` (the kernel is stored
/// separately at the top level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub variant: Variant,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    pub transform: TransformStyle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub summary: TrainSummary,
}

/// Row-major matrix encoding used inside `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_array(a: &Array2<f64>) -> Self {
        MatrixJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Dimension(e.to_string()))
    }
}

/// A learned projection together with everything needed to apply it to
/// new data: the kernel, the objective summary, and the preprocessing
/// statistics of the training run.
#[derive(Debug, Clone)]
pub struct Projection {
    pub w: Array2<f64>,
    pub kernel: KernelSpec,
    pub objective: ObjectiveSummary,
    pub preprocess: PreprocessStats,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ProjectionJson {
    w: MatrixJson,
    kernel: KernelSpec,
    objective: ObjectiveSummary,
    preprocess: PreprocessStats,
    train_meta: TrainMeta,
}

impl Projection {
    /// Rebuild the full objective spec from the stored summary.
    pub fn objective_spec(&self) -> Result<ObjectiveSpec> {
        ObjectiveSpec::new(
            self.objective.variant,
            self.kernel,
            self.objective.lambda,
            self.objective.alpha.unwrap_or(0.0),
            self.objective.transform,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = ProjectionJson {
            w: MatrixJson::from_array(&self.w),
            kernel: self.kernel,
            objective: self.objective.clone(),
            preprocess: self.preprocess.clone(),
            train_meta: self.train_meta.clone(),
        };
        let text = serde_json::to_string_pretty(&json).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let json: ProjectionJson =
            serde_json::from_str(&raw).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let w = json.w.to_array()?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model matrix has non-finite entries".into()));
        }
        Ok(Projection {
            w,
            kernel: json.kernel,
            objective: json.objective,
            preprocess: json.preprocess,
            train_meta: json.train_meta,
        })
    }
}

/// Training samples gathered into contiguous arrays: features, replicated
/// attributes, labels, and the sorted list of class ids present.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<usize>,
}

impl TrainSet {
    /// Gather the given sample indices from a preprocessed dataset.
    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let d = ds.feature_dim();
        let d_attr = ds.attr_dim();
        let mut x = Array2::zeros((d, indices.len()));
        let mut y = Array2::zeros((d_attr, indices.len()));
        let mut labels = Vec::with_capacity(indices.len());
        for (col, &i) in indices.iter().enumerate() {
            if i >= ds.n_samples() {
                return Err(Error::Invalid(format!("sample index {i} out of range")));
            }
            let l = ds.labels()[i];
            x.column_mut(col).assign(&ds.features().column(i));
            y.column_mut(col).assign(&ds.attributes().column(l - 1));
            labels.push(l);
        }
        let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(TrainSet { x, y, labels, classes })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }
}

/// Held-out probe evaluated at each epoch end: accuracy against its own
/// candidate classes plus the (negated) full objective.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub labels: Vec<usize>,
    pub candidates: Array2<f64>,
    pub candidate_classes: Vec<usize>,
}

impl ProbeSet {
    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        let set = TrainSet::from_dataset(ds, indices)?;
        let mut candidates = Array2::zeros((ds.attr_dim(), set.classes.len()));
        for (j, &c) in set.classes.iter().enumerate() {
            candidates.column_mut(j).assign(&ds.attributes().column(c - 1));
        }
        Ok(ProbeSet {
            x: set.x,
            y: set.y,
            labels: set.labels,
            candidates,
            candidate_classes: set.classes,
        })
    }
}

/// Inverse-time decaying learning rate `beta0 / (1 + decay * t)`.
pub fn lr_at(t: usize, beta0: f64, decay: f64) -> f64 {
    beta0 / (1.0 + decay * t as f64)
}

/// One RMSprop update. `A' = gamma A + (1 - gamma) sq_bar` followed by
/// `W' = W - beta_t * g_bar / sqrt(A' + epsilon)`, all elementwise; the
/// moving average is refreshed with the current batch before the step.
pub fn rmsprop_step(
    w: &Array2<f64>,
    a: &Array2<f64>,
    g_bar: &Array2<f64>,
    sq_bar: &Array2<f64>,
    beta_t: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if w.dim() != a.dim() || w.dim() != g_bar.dim() || w.dim() != sq_bar.dim() {
        return Err(Error::Dimension("rmsprop_step: shape mismatch".into()));
    }
    for (name, m) in [("gradient", g_bar), ("squared gradient", sq_bar), ("A", a)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {name} in rmsprop_step")));
        }
    }
    let mut a_next = a.clone();
    Zip::from(&mut a_next).and(sq_bar).for_each(|an, &sq| {
        *an = gamma * *an + (1.0 - gamma) * sq;
    });
    let mut w_next = w.clone();
    Zip::from(&mut w_next)
        .and(g_bar)
        .and(&a_next)
        .for_each(|wn, &g, &an| {
            *wn -= beta_t * g / (an + epsilon).sqrt();
        });
    if w_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite weights after rmsprop_step".into()));
    }
    Ok((w_next, a_next))
}

/// Initialize a `d x d_attr` projection. `LeastSquares` solves the
/// ridge-regularized normal equations `(X X^T + 1e-6 I) W = X Y^T` and
/// markedly speeds up convergence on well-conditioned data.
pub fn init_w(
    d: usize,
    d_attr: usize,
    init: InitStrategy,
    seed: u64,
    data: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<Array2<f64>> {
    match init {
        InitStrategy::GaussianScaled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let std = (1.0 / d as f64).sqrt();
            Ok(Array2::from_shape_fn((d, d_attr), |_| {
                std * rng.sample::<f64, _>(StandardNormal)
            }))
        }
        InitStrategy::LeastSquares => {
            let (x, y) = data.ok_or_else(|| {
                Error::Invalid("least-squares initialization needs training data".into())
            })?;
            if x.nrows() != d || y.nrows() != d_attr || x.ncols() != y.ncols() {
                return Err(Error::Dimension(format!(
                    "init_w: X is {:?}, Y is {:?}, expected {d} and {d_attr} rows",
                    x.dim(),
                    y.dim()
                )));
            }
            let mut gram = x.dot(&x.t());
            for i in 0..d {
                gram[[i, i]] += 1e-6;
            }
            let rhs = x.dot(&y.t()); // d x d_attr
            cholesky_solve(&gram, &rhs)
        }
    }
}

/// Solve `A X = B` for symmetric positive definite `A` via an in-place
/// Cholesky factorization.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = a.clone();
    for j in 0..n {
        let mut diag = l[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numeric(
                "singular system beyond ridge tolerance".into(),
            ));
        }
        let diag = diag.sqrt();
        l[[j, j]] = diag;
        for i in (j + 1)..n {
            let mut v = l[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / diag;
        }
    }
    let mut x = b.clone();
    for col in 0..b.ncols() {
        // forward: L z = b
        for i in 0..n {
            let mut v = x[[i, col]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = v / l[[i, i]];
        }
        // backward: L^T x = z
        for i in (0..n).rev() {
            let mut v = x[[i, col]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = v / l[[i, i]];
        }
    }
    Ok(x)
}

fn probe_metrics(
    ospec: &ObjectiveSpec,
    w: &Array2<f64>,
    probe: &ProbeSet,
) -> Result<(f64, f64)> {
    // negated alignment so the probe column decreases alongside the loss
    let obj = -full_objective(ospec, w, probe.x.view(), probe.y.view(), &probe.labels)?;
    let cols: Vec<usize> = (0..probe.x.ncols()).collect();
    let preds = map_collect(&cols, |&i| {
        eval::classify(
            &ospec.kernel,
            ospec.variant,
            w,
            probe.x.column(i),
            probe.candidates.view(),
            &probe.candidate_classes,
        )
    });
    let preds: Vec<usize> = preds.into_iter().collect::<Result<_>>()?;
    let (_, acc) = eval::per_class_top1(&preds, &probe.labels)?;
    Ok((obj, acc))
}

/// Train a projection on the gathered training set.
///
/// Deterministic for a fixed `cfg.seed`: the shuffle and all negative
/// draws come from one seeded stream consumed in sample order, and batch
/// reductions fold per-sample results in a fixed order, so the result is
/// bit-identical regardless of thread count.
pub fn train(
    set: &TrainSet,
    ospec: &ObjectiveSpec,
    cfg: &TrainConfig,
    probe: Option<&ProbeSet>,
    stats: &PreprocessStats,
) -> Result<(Projection, TrainTrace)> {
    cfg.validate()?;
    let n = set.n_samples();
    let n_classes = set.classes.len();
    if n_classes < 2 {
        return Err(Error::Invalid(
            "training needs at least two classes".into(),
        ));
    }
    let d = set.x.nrows();
    let d_attr = set.y.nrows();

    let mut class_count: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &set.labels {
        *class_count.entry(l).or_insert(0usize) += 1;
    }
    let balanced_weight = n as f64 / n_classes as f64;

    let mut w = init_w(d, d_attr, cfg.init, cfg.seed, Some((&set.x, &set.y)))?;
    let mut a = Array2::<f64>::zeros((d, d_attr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1); // keep the shuffle stream independent of init

    let mut trace = TrainTrace::default();
    let mut t = 0usize;
    let mut first_epoch_mean = None;
    let mut final_epoch_mean = None;
    let mut final_val_acc = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        let n_batches = order.len().div_ceil(cfg.batch_size);

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // negatives drawn sequentially so the rng stream is identical
            // for any thread count
            let mut jobs = Vec::with_capacity(batch.len());
            for &i in batch {
                let negs = sample_negatives(&set.labels, &set.classes, set.labels[i], &mut rng)?;
                jobs.push((i, negs));
            }
            let results = map_collect(&jobs, |(i, negs)| {
                let neg_views: Vec<_> = negs.iter().map(|&j| set.y.column(j)).collect();
                let weight = if cfg.true_class_counts {
                    class_count[&set.labels[*i]] as f64
                } else {
                    balanced_weight
                };
                sample_loss_grad(
                    ospec,
                    &w,
                    set.x.column(*i),
                    set.y.column(*i),
                    &neg_views,
                    weight,
                    n,
                )
            });

            let b = batch.len() as f64;
            let mut g_bar = Array2::<f64>::zeros((d, d_attr));
            let mut sq_bar = Array2::<f64>::zeros((d, d_attr));
            let mut value_sum = 0.0;
            for r in results {
                let loss = r.map_err(|e| {
                    Error::Numeric(format!("iteration {}: {e}", t + 1))
                })?;
                value_sum += loss.value;
                Zip::from(&mut g_bar)
                    .and(&mut sq_bar)
                    .and(&loss.grad)
                    .for_each(|g, s, &gi| {
                        *g += gi;
                        *s += gi * gi;
                    });
            }
            g_bar.mapv_inplace(|v| v / b);
            sq_bar.mapv_inplace(|v| v / b);
            let batch_objective = value_sum / b;
            if !batch_objective.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at iteration {}",
                    t + 1
                )));
            }

            let beta_t = lr_at(t, cfg.beta0, cfg.decay);
            let stepped = rmsprop_step(&w, &a, &g_bar, &sq_bar, beta_t, cfg.gamma, cfg.epsilon)
                .map_err(|e| Error::Numeric(format!("iteration {}: {e}", t + 1)))?;
            w = stepped.0;
            a = stepped.1;
            t += 1;
            epoch_sum += batch_objective;
            epoch_batches += 1;

            let epoch_end = batch_idx + 1 == n_batches;
            if t % cfg.trace_every == 0 || epoch_end {
                let (probe_objective, val_acc) = if epoch_end {
                    match probe {
                        Some(p) => {
                            let (obj, acc) = probe_metrics(ospec, &w, p)?;
                            (Some(obj), Some(acc))
                        }
                        None => (None, None),
                    }
                } else {
                    (None, None)
                };
                trace.entries.push(TraceEntry {
                    iteration: t,
                    epoch,
                    batch_objective,
                    probe_objective,
                    val_acc,
                });
            }
        }

        let epoch_mean = epoch_sum / epoch_batches as f64;
        if epoch == 0 {
            first_epoch_mean = Some(epoch_mean);
        }
        final_epoch_mean = Some(epoch_mean);
        if let Some(e) = trace.entries.last() {
            final_val_acc = e.val_acc.or(final_val_acc);
        }
    }

    let projection = Projection {
        w,
        kernel: ospec.kernel,
        objective: ObjectiveSummary {
            variant: ospec.variant,
            lambda: ospec.lambda,
            alpha: if ospec.variant == Variant::PolyPenalized {
                Some(ospec.alpha)
            } else {
                None
            },
            transform: ospec.transform_style,
        },
        preprocess: stats.clone(),
        train_meta: TrainMeta {
            config: cfg.clone(),
            summary: TrainSummary {
                iterations: t,
                first_epoch_mean_objective: first_epoch_mean,
                final_epoch_mean_objective: final_epoch_mean,
                final_val_acc,
            },
        },
    };
    Ok((projection, trace))
}
