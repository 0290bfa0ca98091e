//! Kernel-score classification and the standard / generalized zero-shot
//! protocols, plus the incoherence diagnostic on the learned projection.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_value, Direction, KernelSpec};
use crate::objective::Variant;
use crate::optimizer::Projection;
use crate::parallel::map_collect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standard,
    Generalized,
}

/// Evaluation result. Accuracies are fractions in `[0, 1]`; `top1_mean` is
/// the unweighted mean of the per-class accuracies. The seen/unseen triple
/// is present only under the generalized protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_class_acc: BTreeMap<usize, f64>,
    pub top1_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_seen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_unseen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub harmonic_h: Option<f64>,
    pub incoherence: f64,
}

impl EvalReport {
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

    pub fn load_json(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// One row per class followed by the summary rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,value\n");
        for (class, acc) in &self.per_class_acc {
            out.push_str(&format!("{class},{acc}\n"));
        }
        out.push_str(&format!("TOP1_MEAN,{}\n", self.top1_mean));
        if let Some(v) = self.acc_seen {
            out.push_str(&format!("ACC_SEEN,{v}\n"));
        }
        if let Some(v) = self.acc_unseen {
            out.push_str(&format!("ACC_UNSEEN,{v}\n"));
        }
        if let Some(v) = self.harmonic_h {
            out.push_str(&format!("H,{v}\n"));
        }
        out.push_str(&format!("INCOHERENCE,{}\n", self.incoherence));
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Score one candidate attribute vector against a feature vector: the sum
/// of both kernel directions for RBF variants, `2 k` for the polynomial
/// variant (its directions coincide, so one formula serves all variants).
pub fn candidate_score(
    kernel: &KernelSpec,
    variant: Variant,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    match variant {
        Variant::PolyPenalized => {
            Ok(2.0 * kernel_value(kernel, w, x, y, Direction::ProjectX)?)
        }
        _ => Ok(kernel_value(kernel, w, x, y, Direction::ProjectX)?
            + kernel_value(kernel, w, x, y, Direction::ProjectY)?),
    }
}

/// Predict the class of `x` by maximizing the kernel score over candidate
/// attribute vectors. Ties break toward the smallest class id.
pub fn classify(
    kernel: &KernelSpec,
    variant: Variant,
    w: &Array2<f64>,
    x: ArrayView1<f64>,
    candidates: ArrayView2<f64>,
    candidate_ids: &[usize],
) -> Result<usize> {
    if candidates.ncols() == 0 || candidate_ids.is_empty() {
        return Err(Error::Invalid("no candidate classes".into()));
    }
    if candidates.ncols() != candidate_ids.len() {
        return Err(Error::Dimension(format!(
            "{} candidate columns vs {} candidate ids",
            candidates.ncols(),
            candidate_ids.len()
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for (j, &class_id) in candidate_ids.iter().enumerate() {
        let score = candidate_score(kernel, variant, w, x, candidates.column(j))?;
        best = match best {
            None => Some((score, class_id)),
            Some((bs, bc)) => {
                if score > bs || (score == bs && class_id < bc) {
                    Some((score, class_id))
                } else {
                    Some((bs, bc))
                }
            }
        };
    }
    Ok(best.expect("non-empty candidates").1)
}

/// Per-class accuracy and its unweighted mean over the classes present in
/// `truths`.
pub fn per_class_top1(
    predictions: &[usize],
    truths: &[usize],
) -> Result<(BTreeMap<usize, f64>, f64)> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Invalid(format!(
            "need equally sized non-empty prediction/truth vectors, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &t) in predictions.iter().zip(truths.iter()) {
        let slot = counts.entry(t).or_insert((0, 0));
        slot.1 += 1;
        if p == t {
            slot.0 += 1;
        }
    }
    let per_class: BTreeMap<usize, f64> = counts
        .into_iter()
        .map(|(c, (correct, total))| (c, correct as f64 / total as f64))
        .collect();
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

/// `H = 2 a b / (a + b)`, with `H = 0` whenever either accuracy is zero.
pub fn harmonic_mean(acc_s: f64, acc_u: f64) -> Result<f64> {
    if acc_s < 0.0 || acc_u < 0.0 {
        return Err(Error::Invalid(format!(
            "accuracies must be non-negative, got {acc_s} and {acc_u}"
        )));
    }
    if acc_s == 0.0 || acc_u == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * acc_s * acc_u / (acc_s + acc_u))
}

/// `||W_hat^T W_hat - I||_F^2` for column-normalized `W_hat`. Zero for
/// orthonormal-direction columns; larger means more coherent columns.
pub fn incoherence(w: &Array2<f64>) -> Result<f64> {
    let normalized = normalize_columns(w)?;
    let gram = normalized.t().dot(&normalized);
    let mut sum = 0.0;
    for ((i, j), &v) in gram.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        let diff = v - target;
        sum += diff * diff;
    }
    Ok(sum)
}

/// Columns scaled to unit norm; errors on a zero column.
pub fn normalize_columns(w: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = w.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric(format!("column {j} of W has zero norm")));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

fn classify_all(
    model: &Projection,
    x: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    candidate_ids: &[usize],
) -> Result<Vec<usize>> {
    let cols: Vec<usize> = (0..x.ncols()).collect();
    let preds = map_collect(&cols, |&i| {
        classify(
            &model.kernel,
            model.objective.variant,
            &model.w,
            x.column(i),
            candidates,
            candidate_ids,
        )
    });
    preds.into_iter().collect()
}

/// Standard protocol: classify unseen-class test samples against the
/// unseen-class attributes only.
pub fn evaluate_standard(
    model: &Projection,
    x_test: ArrayView2<f64>,
    truths: &[usize],
    candidates: ArrayView2<f64>,
    candidate_ids: &[usize],
) -> Result<EvalReport> {
    if x_test.ncols() == 0 {
        return Err(Error::Invalid("empty test set".into()));
    }
    let preds = classify_all(model, x_test, candidates, candidate_ids)?;
    let (per_class_acc, top1_mean) = per_class_top1(&preds, truths)?;
    Ok(EvalReport {
        protocol: Protocol::Standard,
        per_class_acc,
        top1_mean,
        acc_seen: None,
        acc_unseen: None,
        harmonic_h: None,
        incoherence: incoherence(&model.w)?,
    })
}

/// Generalized protocol: both seen-class and unseen-class test samples are
/// classified against the full candidate set; the report carries the two
/// per-class means and their harmonic mean.
pub fn evaluate_generalized(
    model: &Projection,
    x_seen: ArrayView2<f64>,
    seen_truths: &[usize],
    x_unseen: ArrayView2<f64>,
    unseen_truths: &[usize],
    candidates: ArrayView2<f64>,
    candidate_ids: &[usize],
) -> Result<EvalReport> {
    if x_seen.ncols() == 0 || x_unseen.ncols() == 0 {
        return Err(Error::Invalid(
            "generalized protocol needs both seen and unseen test samples".into(),
        ));
    }
    let seen_preds = classify_all(model, x_seen, candidates, candidate_ids)?;
    let unseen_preds = classify_all(model, x_unseen, candidates, candidate_ids)?;
    let (seen_map, acc_seen) = per_class_top1(&seen_preds, seen_truths)?;
    let (unseen_map, acc_unseen) = per_class_top1(&unseen_preds, unseen_truths)?;
    let mut per_class_acc = seen_map;
    per_class_acc.extend(unseen_map);
    let top1_mean = per_class_acc.values().sum::<f64>() / per_class_acc.len() as f64;
    Ok(EvalReport {
        protocol: Protocol::Generalized,
        per_class_acc,
        top1_mean,
        acc_seen: Some(acc_seen),
        acc_unseen: Some(acc_unseen),
        harmonic_h: Some(harmonic_mean(acc_seen, acc_unseen)?),
        incoherence: incoherence(&model.w)?,
    })
}
