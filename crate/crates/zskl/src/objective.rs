//! Polarization objective: label kernel, full alignment diagnostic, and
//! the per-sample stochastic loss with its analytic gradient.
//!
//! The full objective aligns the data Gram matrices with a label kernel
//! that carries `+1` for same-label pairs and `-lambda` otherwise. The
//! trainable surrogate `f_i(W)` touches one sample, its own attribute
//! vector, and one randomly drawn representative per other class, which
//! brings the cost of an epoch down from quadratic to linear in `N`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    gram_matrix, transformed_value_grad, Direction, KernelSpec, Sign, SquaredMode, Transform,
};

/// Label kernel `L_lambda`: entry `(i, j)` is `1` if `l_i == l_j`, else
/// `-lambda`. Symmetric with unit diagonal by construction.
#[derive(Debug, Clone)]
pub struct LabelKernel {
    pub matrix: Array2<f64>,
    pub lambda: f64,
}

/// Training variant. `RbfOrt` fits both projection directions, which is
/// what induces the soft incoherence on `W`; `RbfPlain` fits only the
/// `W^T x` direction; `PolyPenalized` pairs the polynomial kernel with an
/// explicit incoherence penalty weighted by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "ort")]
    RbfOrt,
    #[serde(rename = "plain")]
    RbfPlain,
    #[serde(rename = "poly")]
    PolyPenalized,
}

/// Which scalar transform pair the per-sample loss uses: `Squared` maps
/// within/between terms through `(1-k)^2` / `k^2`, `Linear` through
/// `-k` / `k`. Squared is the default for the RBF variants (it converges
/// a little faster); the polynomial variant always uses `Linear` since
/// its kernel values are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformStyle {
    Squared,
    Linear,
}

/// Fully specified training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub variant: Variant,
    pub kernel: KernelSpec,
    pub lambda: f64,
    /// Incoherence penalty weight; only meaningful for [`Variant::PolyPenalized`].
    pub alpha: f64,
    pub transform_style: TransformStyle,
}

impl ObjectiveSpec {
    pub fn new(
        variant: Variant,
        kernel: KernelSpec,
        lambda: f64,
        alpha: f64,
        transform_style: TransformStyle,
    ) -> Result<Self> {
        kernel.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Invalid(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        match variant {
            Variant::RbfOrt | Variant::RbfPlain => {
                if !kernel.is_rbf() {
                    return Err(Error::Invalid(
                        "RBF variants require a Gaussian or Cauchy kernel".into(),
                    ));
                }
            }
            Variant::PolyPenalized => {
                if kernel.is_rbf() {
                    return Err(Error::Invalid(
                        "the penalized variant requires a polynomial kernel".into(),
                    ));
                }
                if transform_style == TransformStyle::Squared {
                    return Err(Error::Invalid(
                        "squared transform is not defined for the polynomial variant".into(),
                    ));
                }
                if !(alpha >= 0.0) || !alpha.is_finite() {
                    return Err(Error::Invalid(format!(
                        "alpha must be finite and >= 0, got {alpha}"
                    )));
                }
            }
        }
        Ok(ObjectiveSpec {
            variant,
            kernel,
            lambda,
            alpha,
            transform_style,
        })
    }

    /// Default transform for a variant: squared for RBF, linear for polynomial.
    pub fn default_transform(variant: Variant) -> TransformStyle {
        match variant {
            Variant::PolyPenalized => TransformStyle::Linear,
            _ => TransformStyle::Squared,
        }
    }

    fn within_transform(&self) -> Transform {
        match self.transform_style {
            TransformStyle::Squared => Transform::Squared(SquaredMode::Within),
            TransformStyle::Linear => Transform::Linear(Sign::Neg),
        }
    }

    fn between_transform(&self) -> Transform {
        match self.transform_style {
            TransformStyle::Squared => Transform::Squared(SquaredMode::Between),
            TransformStyle::Linear => Transform::Linear(Sign::Pos),
        }
    }
}

/// Value and gradient of one per-sample loss term.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Build `L_lambda` from the label vector.
pub fn build_label_kernel(labels: &[usize], lambda: f64) -> Result<LabelKernel> {
    if labels.is_empty() {
        return Err(Error::Invalid("labels must be non-empty".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let n = labels.len();
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| {
        if labels[i] == labels[j] {
            1.0
        } else {
            -lambda
        }
    });
    Ok(LabelKernel { matrix, lambda })
}

/// Frobenius inner product of two equally shaped matrices.
pub fn alignment(k: ArrayView2<f64>, l: ArrayView2<f64>) -> Result<f64> {
    if k.dim() != l.dim() {
        return Err(Error::Dimension(format!(
            "alignment: {:?} vs {:?}",
            k.dim(),
            l.dim()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in k.iter().zip(l.iter()) {
        sum += a * b;
    }
    Ok(sum)
}

/// Full alignment objective (the maximized quantity) on an explicit
/// `(X, Y, labels)` triple. Quadratic in the number of samples, intended
/// for diagnostics and probes rather than training.
pub fn full_objective(
    ospec: &ObjectiveSpec,
    w: &Array2<f64>,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    if labels.len() != x.ncols() || x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "full_objective: {} samples, {} feature columns, {} attribute columns",
            labels.len(),
            x.ncols(),
            y.ncols()
        )));
    }
    let label_kernel = build_label_kernel(labels, ospec.lambda)?;
    let k_x = gram_matrix(&ospec.kernel, w, x, y, Direction::ProjectX)?;
    match ospec.variant {
        Variant::RbfOrt => {
            let k_y = gram_matrix(&ospec.kernel, w, x, y, Direction::ProjectY)?;
            alignment((&k_x + &k_y).view(), label_kernel.matrix.view())
        }
        Variant::RbfPlain => alignment(k_x.view(), label_kernel.matrix.view()),
        Variant::PolyPenalized => {
            let align = alignment(k_x.view(), label_kernel.matrix.view())?;
            let wtw = w.t().dot(w);
            let fro_sq: f64 = wtw.iter().map(|v| v * v).sum();
            let trace: f64 = wtw.diag().sum();
            Ok(align - ospec.alpha * fro_sq + ospec.alpha * trace)
        }
    }
}

/// Draw one sample index per class other than `l_i`, uniformly within each
/// class, visiting classes in ascending id order. A single-sample class
/// contributes its only index without consuming randomness, so the draw is
/// fixed whenever every class has exactly one representative.
pub fn sample_negatives<R: Rng + ?Sized>(
    labels: &[usize],
    class_ids: &[usize],
    l_i: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !class_ids.contains(&l_i) {
        return Err(Error::Invalid(format!(
            "sample label {l_i} is not among the candidate classes"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &c in class_ids {
        by_class.entry(c).or_default();
    }
    for (i, &l) in labels.iter().enumerate() {
        if let Some(v) = by_class.get_mut(&l) {
            v.push(i);
        }
    }
    let mut negatives = Vec::with_capacity(by_class.len().saturating_sub(1));
    for (&c, members) in &by_class {
        if c == l_i {
            continue;
        }
        match members.len() {
            0 => {
                return Err(Error::Invalid(format!(
                    "class {c} has no samples to draw a negative from"
                )))
            }
            1 => negatives.push(members[0]),
            n => negatives.push(members[rng.random_range(0..n)]),
        }
    }
    Ok(negatives)
}

/// Per-sample loss `f_i(W)` and its gradient.
///
/// `negatives` holds the attribute vectors of the drawn representatives
/// (one per other class); `n_per_class` is the within-term weight
/// (`N / C` by default); `n_samples` spreads the polynomial incoherence
/// penalty uniformly across the epoch. The loss is minimized, so the
/// penalty enters sign-flipped relative to the maximized objective.
pub fn sample_loss_grad(
    ospec: &ObjectiveSpec,
    w: &Array2<f64>,
    x_i: ArrayView1<f64>,
    y_i: ArrayView1<f64>,
    negatives: &[ArrayView1<f64>],
    n_per_class: f64,
    n_samples: usize,
) -> Result<SampleLoss> {
    let within = ospec.within_transform();
    let between = ospec.between_transform();
    let both_directions = ospec.variant == Variant::RbfOrt;

    let mut value = 0.0;
    let mut grad = Array2::zeros(w.dim());

    let (v, g) = transformed_value_grad(&ospec.kernel, w, x_i, y_i, Direction::ProjectX, within)?;
    value += n_per_class * v;
    grad.scaled_add(n_per_class, &g);
    if both_directions {
        let (v, g) =
            transformed_value_grad(&ospec.kernel, w, x_i, y_i, Direction::ProjectY, within)?;
        value += n_per_class * v;
        grad.scaled_add(n_per_class, &g);
    }

    for y_j in negatives {
        let (v, g) =
            transformed_value_grad(&ospec.kernel, w, x_i, *y_j, Direction::ProjectX, between)?;
        value += ospec.lambda * v;
        grad.scaled_add(ospec.lambda, &g);
        if both_directions {
            let (v, g) =
                transformed_value_grad(&ospec.kernel, w, x_i, *y_j, Direction::ProjectY, between)?;
            value += ospec.lambda * v;
            grad.scaled_add(ospec.lambda, &g);
        }
    }

    if ospec.variant == Variant::PolyPenalized && ospec.alpha > 0.0 {
        if n_samples == 0 {
            return Err(Error::Invalid(
                "n_samples must be positive for the penalized variant".into(),
            ));
        }
        let share = 1.0 / n_samples as f64;
        let wtw = w.t().dot(w);
        let fro_sq: f64 = wtw.iter().map(|v| v * v).sum();
        let trace: f64 = wtw.diag().sum();
        value += share * ospec.alpha * (fro_sq - trace);
        // d/dW ||W^T W||_F^2 = 4 W (W^T W); d/dW tr(W^T W) = 2 W
        let w_wtw = w.dot(&wtw);
        grad.scaled_add(share * 4.0 * ospec.alpha, &w_wtw);
        grad.scaled_add(-share * 2.0 * ospec.alpha, w);
    }

    if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample loss".into()));
    }
    Ok(SampleLoss { value, grad })
}
