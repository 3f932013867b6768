//! Assignment cost construction: focal classification terms, L1 + GIoU
//! regression terms, and the stacked cost matrix with its background row.

use crate::geometry::{giou, l1_box_distance, BoxList, GeometryError};
use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

/// Floor applied to every log argument so degenerate scores stay finite.
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("scores must lie in [0, 1]; found {value} at row {row}, class {col}")]
    ScoreOutOfRange { value: f64, row: usize, col: usize },
    #[error("scores need at least one class column")]
    NoClasses,
    #[error("cost matrix needs at least one prediction")]
    EmptyPredictions,
    #[error("{what} count mismatch: {left} vs {right}")]
    CountMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("invalid cost matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-prediction classification scores, one row per prediction and one
/// column per class. Entries are validated into `[0, 1]` at construction.
#[derive(Debug, Clone)]
pub struct ClassScores {
    scores: Array2<f64>,
}

impl ClassScores {
    pub fn new(scores: Array2<f64>) -> Result<Self, CostError> {
        if scores.ncols() == 0 {
            return Err(CostError::NoClasses);
        }
        for ((row, col), &value) in scores.indexed_iter() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(CostError::ScoreOutOfRange { value, row, col });
            }
        }
        Ok(Self { scores })
    }

    pub fn num_predictions(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.scores.row(j)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }
}

/// Weights combining the cost terms:
/// `C = lambda_cls * focal + alpha * (lambda_l1 * L1 + lambda_giou * (1 - GIoU))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub alpha: f64,
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_cls: 2.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), CostError> {
        let nonneg = [
            ("alpha", self.alpha),
            ("lambda_cls", self.lambda_cls),
            ("lambda_l1", self.lambda_l1),
            ("lambda_giou", self.lambda_giou),
            ("focal_gamma", self.focal_gamma),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError::InvalidWeights(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.focal_alpha.is_finite() && self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(CostError::InvalidWeights(format!(
                "focal_alpha must lie in (0, 1), got {}",
                self.focal_alpha
            )));
        }
        Ok(())
    }
}

fn focal_positive(p: f64, w: &CostWeights) -> f64 {
    w.focal_alpha * (1.0 - p).powf(w.focal_gamma) * -(p.max(LOG_CLAMP).ln())
}

fn focal_negative(p: f64, w: &CostWeights) -> f64 {
    (1.0 - w.focal_alpha) * p.powf(w.focal_gamma) * -((1.0 - p).max(LOG_CLAMP).ln())
}

/// Focal cost of classifying one prediction as `gt_label`:
/// `focal_alpha * (1 - p)^gamma * (-log p)` on the label's score.
///
/// Finite for any score in `[0, 1]` thanks to the log clamp.
pub fn classification_cost(
    gt_label: usize,
    pred_scores: ArrayView1<'_, f64>,
    w: &CostWeights,
) -> Result<f64, CostError> {
    let classes = pred_scores.len();
    if gt_label >= classes {
        return Err(CostError::LabelOutOfRange {
            label: gt_label,
            classes,
        });
    }
    Ok(focal_positive(pred_scores[gt_label], w))
}

/// Box regression cost `lambda_l1 * L1_cxcywh + lambda_giou * (1 - GIoU)`.
///
/// Zero exactly when the boxes coincide (with positive area).
pub fn regression_cost(
    gt: &crate::geometry::BBox,
    pred: &crate::geometry::BBox,
    w: &CostWeights,
) -> f64 {
    w.lambda_l1 * l1_box_distance(gt, pred) + w.lambda_giou * (1.0 - giou(gt, pred))
}

/// Stacked assignment costs: one row per ground truth plus a final
/// background row, one column per prediction.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    values: Array2<f64>,
    num_gts: usize,
}

impl CostMatrix {
    /// Wraps a raw `(m + 1) x n` matrix whose last row is the background row.
    pub fn from_values(values: Array2<f64>, num_gts: usize) -> Result<Self, CostError> {
        if values.nrows() != num_gts + 1 {
            return Err(CostError::InvalidMatrix(format!(
                "expected {} rows for {} ground truths, got {}",
                num_gts + 1,
                num_gts,
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(CostError::EmptyPredictions);
        }
        if let Some(((i, j), &v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CostError::InvalidMatrix(format!(
                "non-finite entry {v} at ({i}, {j})"
            )));
        }
        Ok(Self { values, num_gts })
    }

    pub fn num_gts(&self) -> usize {
        self.num_gts
    }

    pub fn num_predictions(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Ground-truth rows only, without the background row.
    pub fn gt_rows(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![..self.num_gts, ..])
    }

    pub fn background_row(&self) -> ArrayView1<'_, f64> {
        self.values.row(self.num_gts)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }
}

/// Builds the `(m + 1) x n` cost matrix for a scene.
///
/// Ground-truth row `i`, column `j`:
/// `lambda_cls * classification_cost(label_i, scores_j) + alpha * regression_cost(gt_i, pred_j)`.
/// Background row, column `j`: the focal cost of scoring `j` as background,
/// `(1 - focal_alpha) * p^gamma * (-log(1 - p))` on `j`'s best foreground score.
pub fn build_cost_matrix(
    gts: &BoxList,
    gt_labels: &[usize],
    preds: &BoxList,
    scores: &ClassScores,
    w: &CostWeights,
) -> Result<CostMatrix, CostError> {
    w.validate()?;
    gts.check_same_units(preds)?;
    if preds.is_empty() {
        return Err(CostError::EmptyPredictions);
    }
    if gt_labels.len() != gts.len() {
        return Err(CostError::CountMismatch {
            what: "ground-truth label",
            left: gt_labels.len(),
            right: gts.len(),
        });
    }
    if scores.num_predictions() != preds.len() {
        return Err(CostError::CountMismatch {
            what: "score row",
            left: scores.num_predictions(),
            right: preds.len(),
        });
    }
    let m = gts.len();
    let n = preds.len();
    let mut values = Array2::zeros((m + 1, n));
    for (i, gt) in gts.iter().enumerate() {
        let label = gt_labels[i];
        for (j, pred) in preds.iter().enumerate() {
            let cls = classification_cost(label, scores.row(j), w)?;
            values[[i, j]] = w.lambda_cls * cls + w.alpha * regression_cost(gt, pred, w);
        }
    }
    for j in 0..n {
        let p_max = scores.row(j).iter().fold(0.0f64, |acc, &v| acc.max(v));
        values[[m, j]] = focal_negative(p_max, w);
    }
    CostMatrix::from_values(values, m)
}
