//! Synthetic scenes and a staged refinement emulator: predictions cluster
//! around ground truths with noise that decays stage by stage, so assignment
//! statistics can be studied without a trained network.

use crate::assignment::{
    assign_ota, hungarian_match, transported_cost, AssignError, HardAssignment, Label,
};
use crate::config::{EngineConfig, Matcher};
use crate::cost::{build_cost_matrix, ClassScores, CostError};
use crate::geometry::{iou_matrix, BBox, BoxList, GeometryError, Units};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene has {m} ground truths but only {n} predictions were requested")]
    TooFewPredictions { m: usize, n: usize },
    #[error("stage {t} outside 1..={stages}")]
    StageOutOfRange { t: usize, stages: usize },
    #[error("invalid scene parameters: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A fixed set of ground truths to assign against.
#[derive(Debug, Clone)]
pub struct Scene {
    pub gt_boxes: BoxList,
    pub gt_labels: Vec<usize>,
    /// Number of classes score rows are drawn over; labels lie below it.
    pub classes: usize,
    pub image_size: (f64, f64),
    pub seed: u64,
}

/// Prediction noise model: coordinate noise shrinks linearly from
/// `sigma_max` at stage 1 to `sigma_max / T` at stage `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_max: f64,
    /// Clustered predictions sampled around each ground truth.
    pub preds_per_gt: usize,
}

/// One stage's simulated detector output.
#[derive(Debug, Clone)]
pub struct StagePredictions {
    pub stage: usize,
    pub boxes: BoxList,
    pub scores: ClassScores,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    let bw = rng.random_range(0.05..0.30) * width;
    let bh = rng.random_range(0.05..0.30) * height;
    let cx = rng.random_range(bw / 2.0..width - bw / 2.0);
    let cy = rng.random_range(bh / 2.0..height - bh / 2.0);
    BBox::from_cxcywh(cx, cy, bw, bh).expect("sampled boxes fit the image")
}

/// Draws `m` non-degenerate ground truths uniformly inside the image, with
/// labels below `classes`. Deterministic per seed.
pub fn generate_scene(
    seed: u64,
    m: usize,
    classes: usize,
    size: (f64, f64),
) -> Result<Scene, SimError> {
    if classes == 0 {
        return Err(SimError::InvalidScene("need at least one class".into()));
    }
    let (w, h) = size;
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(SimError::InvalidScene(format!(
            "image size {w}x{h} must be positive and finite"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        boxes.push(random_box(&mut rng, w, h));
        labels.push(rng.random_range(0..classes));
    }
    Ok(Scene {
        gt_boxes: BoxList::new(boxes, Units::Absolute),
        gt_labels: labels,
        classes,
        image_size: size,
        seed,
    })
}

/// Simulates stage `t` of `stages`: each ground truth gets a cluster of
/// perturbed copies whose true-class score decays with displacement, and
/// uniformly scored random distractors fill the remaining slots.
///
/// Noise at stage `t` is `sigma_max * (stages - t + 1) / stages`. The RNG is
/// seeded from the scene and streamed per stage, so every (seed, t) pair is
/// reproducible in isolation.
pub fn simulate_stage_predictions(
    scene: &Scene,
    t: usize,
    stages: usize,
    n: usize,
    noise: &NoiseSchedule,
) -> Result<StagePredictions, SimError> {
    if t == 0 || t > stages {
        return Err(SimError::StageOutOfRange { t, stages });
    }
    let m = scene.gt_boxes.len();
    if n < m || n == 0 {
        return Err(SimError::TooFewPredictions { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(t as u64);
    let sigma = noise.sigma_max * (stages - t + 1) as f64 / stages as f64;
    let sigma_ref = noise.sigma_max;
    let classes = scene.classes;
    let (img_w, img_h) = scene.image_size;
    let min_size = 1e-4 * img_w.min(img_h);
    let clusters = n
        .checked_div(m)
        .map_or(0, |per| noise.preds_per_gt.min(per));

    let mut boxes = Vec::with_capacity(n);
    let mut scores = Array2::zeros((n, classes));
    let mut row = 0usize;
    for (i, gt) in scene.gt_boxes.iter().enumerate() {
        let [_, _, w, h] = gt.cxcywh();
        for _ in 0..clusters {
            let dcx = sigma * standard_normal(&mut rng);
            let dcy = sigma * standard_normal(&mut rng);
            // keep sizes positive by bounding the shrink
            let dw = (sigma * standard_normal(&mut rng)).max(min_size - w);
            let dh = (sigma * standard_normal(&mut rng)).max(min_size - h);
            // perturb corners so zero noise reproduces the box bit-exactly
            let bx = BBox::new(
                gt.x1() + dcx - dw / 2.0,
                gt.y1() + dcy - dh / 2.0,
                gt.x2() + dcx + dw / 2.0,
                gt.y2() + dcy + dh / 2.0,
            )
            .expect("perturbed sizes stay positive");
            let disp2 = dcx * dcx + dcy * dcy + dw * dw + dh * dh;
            let p = if sigma_ref > 0.0 {
                (-disp2 / (2.0 * sigma_ref * sigma_ref)).exp()
            } else {
                1.0
            };
            let residual = if classes > 1 {
                (1.0 - p) / (classes - 1) as f64
            } else {
                0.0
            };
            for c in 0..classes {
                scores[[row, c]] = residual;
            }
            scores[[row, scene.gt_labels[i]]] = p;
            boxes.push(bx);
            row += 1;
        }
    }
    while row < n {
        boxes.push(random_box(&mut rng, img_w, img_h));
        for c in 0..classes {
            scores[[row, c]] = rng.random_range(0.0..0.25);
        }
        row += 1;
    }
    Ok(StagePredictions {
        stage: t,
        boxes: BoxList::new(boxes, Units::Absolute),
        scores: ClassScores::new(scores)?,
    })
}

/// Per-stage assignment statistics.
#[derive(Debug, Clone, Serialize)]
pub struct StageStats {
    pub stage: usize,
    pub mean_positives_per_gt: f64,
    pub min_positives_per_gt: usize,
    pub max_positives_per_gt: usize,
    pub mean_matched_iou: f64,
    pub total_cost: f64,
    pub background_fraction: f64,
    pub marginal_error: f64,
    /// Wall time is reporting-only and deliberately left out of serialized
    /// output so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// One seed's staged run.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub stages: Vec<StageStats>,
}

fn positive_stats(assignment: &HardAssignment) -> (f64, usize, usize) {
    let per_gt = assignment.positives_per_gt();
    if per_gt.is_empty() {
        return (0.0, 0, 0);
    }
    let sum: usize = per_gt.iter().sum();
    let mean = sum as f64 / per_gt.len() as f64;
    let min = *per_gt.iter().min().expect("non-empty");
    let max = *per_gt.iter().max().expect("non-empty");
    (mean, min, max)
}

fn mean_matched_iou(labels: &[Label], ious: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (j, label) in labels.iter().enumerate() {
        if let Label::Gt(i) = label {
            sum += ious[[*i, j]];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs every stage of one scene under the configured matcher and collects
/// statistics.
pub fn run_iterative_assignment(
    scene: &Scene,
    cfg: &EngineConfig,
) -> Result<SimulationReport, SimError> {
    let stages = cfg.solver.stages;
    let n = cfg.simulate.predictions;
    let noise = cfg.simulate.noise();
    let weights = cfg.cost.clone();
    let mut stats = Vec::with_capacity(stages);
    for t in 1..=stages {
        let preds = simulate_stage_predictions(scene, t, stages, n, &noise)?;
        let start = Instant::now();
        let stage_stats = match cfg.solver.matcher {
            Matcher::Ota => {
                let outcome = assign_ota(
                    &scene.gt_boxes,
                    &scene.gt_labels,
                    &preds.boxes,
                    &preds.scores,
                    &weights,
                    &cfg.ota_params(t),
                )?;
                let (mean, min, max) = positive_stats(&outcome.assignment);
                StageStats {
                    stage: t,
                    mean_positives_per_gt: mean,
                    min_positives_per_gt: min,
                    max_positives_per_gt: max,
                    mean_matched_iou: mean_matched_iou(
                        outcome.assignment.labels(),
                        &outcome.iou_matrix,
                    ),
                    total_cost: transported_cost(&outcome.cost, &outcome.plan),
                    background_fraction: outcome.assignment.background_count() as f64 / n as f64,
                    marginal_error: outcome.plan.marginal_error(),
                    wall_time: start.elapsed(),
                }
            }
            Matcher::Hungarian => {
                let cost = build_cost_matrix(
                    &scene.gt_boxes,
                    &scene.gt_labels,
                    &preds.boxes,
                    &preds.scores,
                    &weights,
                )?;
                let result = hungarian_match(cost.gt_rows())?;
                let mut labels = vec![Label::Background; n];
                for (i, &j) in result.assigned.iter().enumerate() {
                    labels[j] = Label::Gt(i);
                }
                let assignment = HardAssignment::from_labels(labels, scene.gt_boxes.len());
                let ious = iou_matrix(&scene.gt_boxes, &preds.boxes)?;
                let (mean, min, max) = positive_stats(&assignment);
                StageStats {
                    stage: t,
                    mean_positives_per_gt: mean,
                    min_positives_per_gt: min,
                    max_positives_per_gt: max,
                    mean_matched_iou: mean_matched_iou(assignment.labels(), &ious),
                    total_cost: result.total_cost,
                    background_fraction: assignment.background_count() as f64 / n as f64,
                    marginal_error: 0.0,
                    wall_time: start.elapsed(),
                }
            }
        };
        stats.push(stage_stats);
    }
    Ok(SimulationReport {
        seed: scene.seed,
        stages: stats,
    })
}

/// Cross-seed aggregate of one stage: means over seeds, extrema over seeds
/// for the min/max columns, worst marginal error.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateStage {
    pub stage: usize,
    pub mean_positives_per_gt: f64,
    pub min_positives_per_gt: usize,
    pub max_positives_per_gt: usize,
    pub mean_matched_iou: f64,
    pub mean_total_cost: f64,
    pub mean_background_fraction: f64,
    pub max_marginal_error: f64,
}

/// Collapses per-seed reports into per-stage aggregates. Every report must
/// cover the same stages.
pub fn aggregate_reports(reports: &[SimulationReport]) -> Vec<AggregateStage> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let stages = first.stages.len();
    assert!(
        reports.iter().all(|r| r.stages.len() == stages),
        "reports must cover identical stage ranges"
    );
    let count = reports.len() as f64;
    (0..stages)
        .map(|s| {
            let rows = reports.iter().map(|r| &r.stages[s]);
            AggregateStage {
                stage: first.stages[s].stage,
                mean_positives_per_gt: rows.clone().map(|r| r.mean_positives_per_gt).sum::<f64>()
                    / count,
                min_positives_per_gt: rows
                    .clone()
                    .map(|r| r.min_positives_per_gt)
                    .min()
                    .expect("non-empty"),
                max_positives_per_gt: rows
                    .clone()
                    .map(|r| r.max_positives_per_gt)
                    .max()
                    .expect("non-empty"),
                mean_matched_iou: rows.clone().map(|r| r.mean_matched_iou).sum::<f64>() / count,
                mean_total_cost: rows.clone().map(|r| r.total_cost).sum::<f64>() / count,
                mean_background_fraction: rows.clone().map(|r| r.background_fraction).sum::<f64>()
                    / count,
                max_marginal_error: rows.clone().map(|r| r.marginal_error).fold(0.0, f64::max),
            }
        })
        .collect()
}

/// Runs `run_iterative_assignment` for every seed, fanning work across
/// `threads` workers (0 means auto). Results come back in seed order, so the
/// output is identical regardless of the worker count.
pub fn run_seeds(
    seeds: &[u64],
    cfg: &EngineConfig,
    threads: usize,
) -> Result<Vec<SimulationReport>, SimError> {
    let workers = if threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        threads
    }
    .min(seeds.len().max(1));
    let slots: Vec<OnceLock<Result<SimulationReport, SimError>>> =
        (0..seeds.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= seeds.len() {
                    break;
                }
                let result = generate_scene(
                    seeds[idx],
                    cfg.simulate.gts,
                    cfg.simulate.classes,
                    (1.0, 1.0),
                )
                .and_then(|scene| run_iterative_assignment(&scene, cfg));
                slots[idx].set(result).expect("each slot is written once");
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("every seed was processed"))
        .collect()
}
