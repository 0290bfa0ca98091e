//! Kernel families evaluated through a learned projection.
//!
//! Each kernel compares a feature vector `x` (dimension `d`) with an
//! attribute vector `y` (dimension `d'`) through the projection matrix
//! `W` (`d x d'`). Two projection directions exist: `ProjectX` evaluates
//! the kernel at `(W^T x, y)` and `ProjectY` at `(x, W y)`. Gradients are
//! taken with respect to `W` and every analytic form here is gated by a
//! central finite-difference oracle in the tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family plus its parameters.
///
/// Gaussian: `exp(-||u - v||^2 / (2 sigma^2))`; Cauchy: `1 / (1 + sigma ||u - v||^2)`;
/// Polynomial: `(x^T W y + bias)^degree`. The RBF families are shift-invariant and
/// take values in `(0, 1]`; the polynomial kernel is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Polynomial { degree: u32, bias: f64 },
    Gaussian { sigma: f64 },
    Cauchy { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Cauchy { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(degree: u32, bias: f64) -> Result<Self> {
        let spec = KernelSpec::Polynomial { degree, bias };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { degree, bias } => {
                if degree < 1 {
                    return Err(Error::Invalid("polynomial degree must be >= 1".into()));
                }
                if !(bias >= 0.0) || !bias.is_finite() {
                    return Err(Error::Invalid(format!(
                        "polynomial bias must be finite and >= 0, got {bias}"
                    )));
                }
            }
            KernelSpec::Gaussian { sigma } | KernelSpec::Cauchy { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Invalid(format!(
                        "kernel radius sigma must be finite and > 0, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// RBF families (Gaussian, Cauchy) have range within `[0, 1]`; the
    /// squared transforms are only meaningful for them.
    pub fn is_rbf(&self) -> bool {
        !matches!(self, KernelSpec::Polynomial { .. })
    }
}

/// Which argument the projection is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Evaluate `k(W^T x, y)`.
    ProjectX,
    /// Evaluate `k(x, W y)`.
    ProjectY,
}

/// Sign applied by the linear transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }
}

/// Squared transform role: within-class terms are pushed toward kernel
/// value 1 via `(1 - k)^2`, between-class terms toward 0 via `k^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquaredMode {
    Within,
    Between,
}

/// Scalar transform applied to a kernel value inside the per-sample loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Linear(Sign),
    Squared(SquaredMode),
}

fn check_shapes(w: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<()> {
    let (d, d_attr) = w.dim();
    if x.len() != d || y.len() != d_attr {
        return Err(Error::Dimension(format!(
            "kernel arguments: W is {}x{}, x has length {}, y has length {}",
            d,
            d_attr,
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `base^exp` by repeated multiplication; keeps the signed base for odd
/// powers, which matters for `(x^T W y + c)^(r-1)` with even `r`.
fn int_pow(base: f64, exp: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Kernel value evaluated on pre-projected arguments.
///
/// For `ProjectX`, `proj = W^T x` and the pair is `(proj, y)`; for
/// `ProjectY`, `proj = W y` and the pair is `(x, proj)`. The polynomial
/// kernel is direction-free (the scalar `x^T W y` is shared), so both
/// directions are computed from the `ProjectX` projection; this makes the
/// direction symmetry exact, not just within rounding.
fn value_projected(
    spec: &KernelSpec,
    proj: &Array1<f64>,
    other: ArrayView1<f64>,
    dir: Direction,
) -> f64 {
    match *spec {
        KernelSpec::Polynomial { degree, bias } => {
            let base = proj.dot(&other) + bias;
            int_pow(base, degree)
        }
        KernelSpec::Gaussian { sigma } => {
            let sq = sq_dist(proj, other, dir);
            (-sq / (2.0 * sigma * sigma)).exp()
        }
        KernelSpec::Cauchy { sigma } => {
            let sq = sq_dist(proj, other, dir);
            1.0 / (1.0 + sigma * sq)
        }
    }
}

/// Squared distance between the projected pair, with a fixed operand
/// order per direction so results are reproducible bit-for-bit.
fn sq_dist(proj: &Array1<f64>, other: ArrayView1<f64>, dir: Direction) -> f64 {
    let mut sq = 0.0;
    match dir {
        // ||W^T x - y||^2
        Direction::ProjectX => {
            for (p, o) in proj.iter().zip(other.iter()) {
                let diff = p - o;
                sq += diff * diff;
            }
        }
        // ||x - W y||^2
        Direction::ProjectY => {
            for (p, o) in proj.iter().zip(other.iter()) {
                let diff = o - p;
                sq += diff * diff;
            }
        }
    }
    sq
}

fn project(spec: &KernelSpec, w: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>, dir: Direction) -> Array1<f64> {
    match (spec, dir) {
        // Polynomial is direction-free; always project x for exact symmetry.
        (KernelSpec::Polynomial { .. }, _) | (_, Direction::ProjectX) => w.t().dot(&x),
        (_, Direction::ProjectY) => w.dot(&y),
    }
}

/// k(x, y; W) for the chosen direction. See [`KernelSpec`] for the formulas.
pub fn kernel_value(
    spec: &KernelSpec,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    dir: Direction,
) -> Result<f64> {
    check_shapes(w, x, y)?;
    let proj = project(spec, w, x, y, dir);
    let other = match (spec, dir) {
        (KernelSpec::Polynomial { .. }, _) | (_, Direction::ProjectX) => y,
        (_, Direction::ProjectY) => x,
    };
    Ok(value_projected(spec, &proj, other, dir))
}

/// dk/dW together with the value (they share all intermediates).
pub fn kernel_value_grad(
    spec: &KernelSpec,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    dir: Direction,
) -> Result<(f64, Array2<f64>)> {
    check_shapes(w, x, y)?;
    match *spec {
        KernelSpec::Polynomial { degree, bias } => {
            let proj = w.t().dot(&x);
            let base = proj.dot(&y) + bias;
            let value = int_pow(base, degree);
            let scale = f64::from(degree) * int_pow(base, degree - 1);
            let mut grad = outer(x, y);
            grad.mapv_inplace(|g| g * scale);
            Ok((value, grad))
        }
        KernelSpec::Gaussian { sigma } => match dir {
            Direction::ProjectX => {
                let proj = w.t().dot(&x);
                let diff = &proj - &y; // W^T x - y
                let sq = diff.dot(&diff);
                let value = (-sq / (2.0 * sigma * sigma)).exp();
                let scale = -value / (sigma * sigma);
                let mut grad = outer(x, diff.view());
                grad.mapv_inplace(|g| g * scale);
                Ok((value, grad))
            }
            Direction::ProjectY => {
                let proj = w.dot(&y);
                let diff = &x - &proj; // x - W y
                let sq = diff.dot(&diff);
                let value = (-sq / (2.0 * sigma * sigma)).exp();
                let scale = value / (sigma * sigma);
                let mut grad = outer(diff.view(), y);
                grad.mapv_inplace(|g| g * scale);
                Ok((value, grad))
            }
        },
        KernelSpec::Cauchy { sigma } => match dir {
            Direction::ProjectX => {
                let proj = w.t().dot(&x);
                let diff = &proj - &y;
                let sq = diff.dot(&diff);
                let denom = 1.0 + sigma * sq;
                let value = 1.0 / denom;
                let scale = -2.0 * sigma / (denom * denom);
                let mut grad = outer(x, diff.view());
                grad.mapv_inplace(|g| g * scale);
                Ok((value, grad))
            }
            Direction::ProjectY => {
                let proj = w.dot(&y);
                let diff = &x - &proj;
                let sq = diff.dot(&diff);
                let denom = 1.0 + sigma * sq;
                let value = 1.0 / denom;
                let scale = 2.0 * sigma / (denom * denom);
                let mut grad = outer(diff.view(), y);
                grad.mapv_inplace(|g| g * scale);
                Ok((value, grad))
            }
        },
    }
}

/// dk/dW alone.
pub fn kernel_grad_w(
    spec: &KernelSpec,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    dir: Direction,
) -> Result<Array2<f64>> {
    Ok(kernel_value_grad(spec, w, x, y, dir)?.1)
}

/// Value and gradient of the transformed kernel `t(k)`.
///
/// `Linear(s)` gives `(s k, s dk)`; `Squared(Within)` gives
/// `((1-k)^2, -2 (1-k) dk)`; `Squared(Between)` gives `(k^2, 2 k dk)`.
/// The squared transforms require an RBF family (range within `[0, 1]`).
pub fn transformed_value_grad(
    spec: &KernelSpec,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    dir: Direction,
    transform: Transform,
) -> Result<(f64, Array2<f64>)> {
    if matches!(transform, Transform::Squared(_)) && !spec.is_rbf() {
        return Err(Error::Invalid(
            "squared transform requires a kernel with range in [0, 1] (Gaussian or Cauchy)".into(),
        ));
    }
    let (k, mut grad) = kernel_value_grad(spec, w, x, y, dir)?;
    let (value, scale) = match transform {
        Transform::Linear(sign) => (sign.value() * k, sign.value()),
        Transform::Squared(SquaredMode::Within) => {
            let one_minus = 1.0 - k;
            (one_minus * one_minus, -2.0 * one_minus)
        }
        Transform::Squared(SquaredMode::Between) => (k * k, 2.0 * k),
    };
    grad.mapv_inplace(|g| g * scale);
    Ok((value, grad))
}

/// Gram matrix `[k(col_i of X, col_j of Y; W)]` of shape `M x P`.
///
/// Entry `(i, j)` equals `kernel_value` on the corresponding columns; the
/// per-column projections are computed once with the same arithmetic as
/// `kernel_value`, so the equality is exact.
pub fn gram_matrix(
    spec: &KernelSpec,
    w: &Array2<f64>,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    dir: Direction,
) -> Result<Array2<f64>> {
    let (d, d_attr) = w.dim();
    if xs.nrows() != d || ys.nrows() != d_attr {
        return Err(Error::Dimension(format!(
            "gram_matrix: W is {}x{}, X has {} rows, Y has {} rows",
            d,
            d_attr,
            xs.nrows(),
            ys.nrows()
        )));
    }
    let m = xs.ncols();
    let p = ys.ncols();
    let mut gram = Array2::zeros((m, p));
    match (spec, dir) {
        (KernelSpec::Polynomial { .. }, _) | (_, Direction::ProjectX) => {
            for i in 0..m {
                let proj = w.t().dot(&xs.column(i));
                for j in 0..p {
                    gram[[i, j]] = value_projected(spec, &proj, ys.column(j), Direction::ProjectX);
                }
            }
        }
        (_, Direction::ProjectY) => {
            for j in 0..p {
                let proj = w.dot(&ys.column(j));
                for i in 0..m {
                    gram[[i, j]] = value_projected(spec, &proj, xs.column(i), Direction::ProjectY);
                }
            }
        }
    }
    Ok(gram)
}
