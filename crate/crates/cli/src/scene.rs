//! Scene file loading. The on-disk schema is
//! `{"image_size":[W,H],"gts":[{"box":[x1,y1,x2,y2],"label":l}],"preds":[{"box":[...],"scores":[...]}]}`
//! with box corners in image pixels; coordinates are normalized by the image
//! size before matching so the cost weights act at unit scale.

use ndarray::Array2;
use ota_core::{BBox, BoxList, ClassScores, Units};
use serde::Deserialize;
use std::path::Path;

use crate::error::{input, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    image_size: [f64; 2],
    gts: Vec<GtEntry>,
    preds: Vec<PredEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtEntry {
    #[serde(rename = "box")]
    corners: [f64; 4],
    label: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredEntry {
    #[serde(rename = "box")]
    corners: [f64; 4],
    scores: Vec<f64>,
}

/// A parsed scene, normalized and ready for the matchers.
pub struct LoadedScene {
    pub gts: BoxList,
    pub gt_labels: Vec<usize>,
    pub preds: BoxList,
    pub scores: ClassScores,
}

fn normalized_box(corners: &[f64; 4], size: &[f64; 2], field: &str) -> Result<BBox, CliError> {
    let [x1, y1, x2, y2] = corners;
    BBox::new(x1 / size[0], y1 / size[1], x2 / size[0], y2 / size[1]).map_err(|e| input(field, e))
}

pub fn load_scene(path: &Path) -> Result<LoadedScene, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input(&format!("scene {}", path.display()), e))?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| input(&format!("scene {}", path.display()), e))?;

    for (i, v) in file.image_size.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(CliError::Input(format!(
                "image_size[{i}]: must be finite and positive, got {v}"
            )));
        }
    }
    if file.preds.is_empty() {
        return Err(CliError::Input(
            "preds: at least one prediction is required".into(),
        ));
    }
    let classes = file.preds[0].scores.len();
    if classes == 0 {
        return Err(CliError::Input(
            "preds[0].scores: at least one class is required".into(),
        ));
    }

    let mut gt_boxes = Vec::with_capacity(file.gts.len());
    let mut gt_labels = Vec::with_capacity(file.gts.len());
    for (i, gt) in file.gts.iter().enumerate() {
        gt_boxes.push(normalized_box(
            &gt.corners,
            &file.image_size,
            &format!("gts[{i}].box"),
        )?);
        if gt.label >= classes {
            return Err(CliError::Input(format!(
                "gts[{i}].label: class {} out of range for {classes} classes",
                gt.label
            )));
        }
        gt_labels.push(gt.label);
    }

    let mut pred_boxes = Vec::with_capacity(file.preds.len());
    let mut flat_scores = Vec::with_capacity(file.preds.len() * classes);
    for (j, pred) in file.preds.iter().enumerate() {
        pred_boxes.push(normalized_box(
            &pred.corners,
            &file.image_size,
            &format!("preds[{j}].box"),
        )?);
        if pred.scores.len() != classes {
            return Err(CliError::Input(format!(
                "preds[{j}].scores: expected {classes} entries, got {}",
                pred.scores.len()
            )));
        }
        flat_scores.extend_from_slice(&pred.scores);
    }
    let matrix = Array2::from_shape_vec((file.preds.len(), classes), flat_scores)
        .expect("dimensions counted above");
    let scores = ClassScores::new(matrix).map_err(|e| input("preds scores", e))?;

    Ok(LoadedScene {
        gts: BoxList::new(gt_boxes, Units::Normalized),
        gt_labels,
        preds: BoxList::new(pred_boxes, Units::Normalized),
        scores,
    })
}
