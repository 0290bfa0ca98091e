//! Grid-search cross-validation over kernel and objective hyperparameters.
//!
//! Validation classes act as surrogate unseen classes: every grid point
//! trains on the train samples and is scored by standard-protocol top-1
//! accuracy on the validation classes. Grid points are independent and may
//! run in parallel; the result table is keyed by enumeration order, so the
//! selected best cannot depend on completion order.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessStats, SplitPartition};
use crate::error::{Error, Result};
use crate::eval::{evaluate_standard, EvalReport};
use crate::kernels::KernelSpec;
use crate::objective::{ObjectiveSpec, Variant};
use crate::optimizer::{train, Projection, TrainConfig, TrainSet};
use crate::parallel::map_collect;

/// Kernel family selector for CV (the variant alone does not pin down
/// Gaussian vs Cauchy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Cauchy,
    Polynomial,
}

fn default_sigma_grid() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.4, 2.0]
}

fn default_lambda_grid() -> Vec<f64> {
    vec![0.1, 0.3, 0.8, 1.0, 2.0, 5.0, 10.0]
}

fn default_bias_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}

fn default_degree_grid() -> Vec<u32> {
    vec![2, 4, 6]
}

fn default_alpha_grid() -> Vec<f64> {
    vec![1.0]
}

/// Hyperparameter grid. Fields irrelevant to the chosen variant are
/// ignored; missing fields in `grid.json` fall back to these defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    #[serde(default = "default_sigma_grid")]
    pub sigma_values: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_values: Vec<f64>,
    #[serde(default = "default_bias_grid")]
    pub bias_values: Vec<f64>,
    #[serde(default = "default_degree_grid")]
    pub degree_values: Vec<u32>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_values: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            sigma_values: default_sigma_grid(),
            lambda_values: default_lambda_grid(),
            bias_values: default_bias_grid(),
            degree_values: default_degree_grid(),
            alpha_values: default_alpha_grid(),
        }
    }
}

impl HyperGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One point of the grid; only the fields relevant to the variant are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
}

impl HyperPoint {
    pub fn to_objective_spec(&self, family: KernelFamily, variant: Variant) -> Result<ObjectiveSpec> {
        let kernel = match family {
            KernelFamily::Gaussian => KernelSpec::gaussian(
                self.sigma
                    .ok_or_else(|| Error::Invalid("grid point lacks sigma".into()))?,
            )?,
            KernelFamily::Cauchy => KernelSpec::cauchy(
                self.sigma
                    .ok_or_else(|| Error::Invalid("grid point lacks sigma".into()))?,
            )?,
            KernelFamily::Polynomial => KernelSpec::polynomial(
                self.degree
                    .ok_or_else(|| Error::Invalid("grid point lacks degree".into()))?,
                self.bias
                    .ok_or_else(|| Error::Invalid("grid point lacks bias".into()))?,
            )?,
        };
        ObjectiveSpec::new(
            variant,
            kernel,
            self.lambda,
            self.alpha.unwrap_or(0.0),
            ObjectiveSpec::default_transform(variant),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRow {
    #[serde(flatten)]
    pub point: HyperPoint,
    pub val_top1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub table: Vec<CvRow>,
    pub best: HyperPoint,
    pub rule: String,
}

impl CvResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Flat CSV for plotting sweeps.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sigma,lambda,degree,bias,alpha,val_top1,final_objective\n");
        for row in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.point.sigma.map(|v| v.to_string()).unwrap_or_default(),
                row.point.lambda,
                row.point.degree.map(|v| v.to_string()).unwrap_or_default(),
                row.point.bias.map(|v| v.to_string()).unwrap_or_default(),
                row.point.alpha.map(|v| v.to_string()).unwrap_or_default(),
                row.val_top1,
                row.final_objective.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

const TIE_BREAK_RULE: &str =
    "max val_top1; ties prefer larger sigma/bias, then smaller lambda, then smaller degree, then smaller alpha";

/// Enumerate the grid points relevant to a variant, in a fixed order.
fn enumerate_points(
    family: KernelFamily,
    variant: Variant,
    grid: &HyperGrid,
) -> Result<Vec<HyperPoint>> {
    let mut points = Vec::new();
    match variant {
        Variant::RbfOrt | Variant::RbfPlain => {
            if family == KernelFamily::Polynomial {
                return Err(Error::Invalid(
                    "RBF variants need a Gaussian or Cauchy family".into(),
                ));
            }
            if grid.sigma_values.is_empty() || grid.lambda_values.is_empty() {
                return Err(Error::Invalid(
                    "sigma_values and lambda_values must be non-empty".into(),
                ));
            }
            for &sigma in &grid.sigma_values {
                for &lambda in &grid.lambda_values {
                    points.push(HyperPoint {
                        sigma: Some(sigma),
                        lambda,
                        degree: None,
                        bias: None,
                        alpha: None,
                    });
                }
            }
        }
        Variant::PolyPenalized => {
            if family != KernelFamily::Polynomial {
                return Err(Error::Invalid(
                    "the penalized variant needs the polynomial family".into(),
                ));
            }
            if grid.degree_values.is_empty()
                || grid.bias_values.is_empty()
                || grid.lambda_values.is_empty()
                || grid.alpha_values.is_empty()
            {
                return Err(Error::Invalid(
                    "degree, bias, lambda and alpha grids must be non-empty".into(),
                ));
            }
            for &degree in &grid.degree_values {
                for &bias in &grid.bias_values {
                    for &lambda in &grid.lambda_values {
                        for &alpha in &grid.alpha_values {
                            points.push(HyperPoint {
                                sigma: None,
                                lambda,
                                degree: Some(degree),
                                bias: Some(bias),
                                alpha: Some(alpha),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Total order used to pick the best row; `Greater` means preferred.
fn prefer(a: &CvRow, b: &CvRow) -> Ordering {
    a.val_top1
        .partial_cmp(&b.val_top1)
        .unwrap_or(Ordering::Equal)
        // smoother kernels first: larger sigma, then larger bias
        .then_with(|| cmp_opt(a.point.sigma, b.point.sigma))
        .then_with(|| cmp_opt(a.point.bias, b.point.bias))
        // then less regularization pressure: smaller lambda
        .then_with(|| cmp_f64(b.point.lambda, a.point.lambda))
        .then_with(|| cmp_opt(b.point.degree.map(f64::from), a.point.degree.map(f64::from)))
        .then_with(|| cmp_opt(b.point.alpha, a.point.alpha))
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => cmp_f64(x, y),
        _ => Ordering::Equal,
    }
}

/// Everything a CV run needs: the preprocessed dataset, its partition and
/// the preprocessing statistics that will be stored with refit models.
pub struct CvContext<'a> {
    pub ds: &'a Dataset,
    pub partition: &'a SplitPartition,
    pub stats: &'a PreprocessStats,
}

fn val_candidates(ds: &Dataset, val_labels: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut classes: Vec<usize> = val_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut candidates = Array2::zeros((ds.attr_dim(), classes.len()));
    for (j, &c) in classes.iter().enumerate() {
        candidates.column_mut(j).assign(&ds.attributes().column(c - 1));
    }
    (candidates, classes)
}

fn eval_on_val(ctx: &CvContext, proj: &Projection) -> Result<EvalReport> {
    let ds = ctx.ds;
    let val = &ctx.partition.val;
    let mut x_val = Array2::zeros((ds.feature_dim(), val.len()));
    let mut truths = Vec::with_capacity(val.len());
    for (col, &i) in val.iter().enumerate() {
        x_val.column_mut(col).assign(&ds.features().column(i));
        truths.push(ds.labels()[i]);
    }
    let (candidates, classes) = val_candidates(ds, &truths);
    evaluate_standard(proj, x_val.view(), &truths, candidates.view(), &classes)
}

/// Evaluate every grid point with the same seed and pick the best by
/// validation accuracy. The table has exactly one row per point, in
/// enumeration order.
pub fn grid_search(
    ctx: &CvContext,
    family: KernelFamily,
    variant: Variant,
    grid: &HyperGrid,
    cfg: &TrainConfig,
) -> Result<CvResult> {
    if ctx.partition.val.is_empty() {
        return Err(Error::Invalid(
            "cross-validation needs non-empty validation samples".into(),
        ));
    }
    let points = enumerate_points(family, variant, grid)?;
    let train_set = TrainSet::from_dataset(ctx.ds, &ctx.partition.train)?;

    let rows = map_collect(&points, |point| -> Result<CvRow> {
        let ospec = point.to_objective_spec(family, variant)?;
        let (proj, _) = train(&train_set, &ospec, cfg, None, ctx.stats)
            .map_err(|e| Error::Numeric(format!("grid point {point:?}: {e}")))?;
        let report = eval_on_val(ctx, &proj)
            .map_err(|e| Error::Numeric(format!("grid point {point:?}: {e}")))?;
        Ok(CvRow {
            point: point.clone(),
            val_top1: report.top1_mean,
            final_objective: proj.train_meta.summary.final_epoch_mean_objective,
        })
    });
    let table: Vec<CvRow> = rows.into_iter().collect::<Result<_>>()?;

    let best = table
        .iter()
        .max_by(|a, b| prefer(a, b))
        .expect("non-empty grid")
        .point
        .clone();
    Ok(CvResult {
        table,
        best,
        rule: TIE_BREAK_RULE.to_string(),
    })
}

/// Retrain on train + validation samples with the selected point.
pub fn refit_best(
    ctx: &CvContext,
    family: KernelFamily,
    variant: Variant,
    best: &HyperPoint,
    cfg: &TrainConfig,
) -> Result<Projection> {
    let mut indices: Vec<usize> = ctx
        .partition
        .train
        .iter()
        .chain(ctx.partition.val.iter())
        .copied()
        .collect();
    indices.sort_unstable();
    let set = TrainSet::from_dataset(ctx.ds, &indices)?;
    let ospec = best.to_objective_spec(family, variant)?;
    let (proj, _) = train(&set, &ospec, cfg, None, ctx.stats)?;
    Ok(proj)
}
