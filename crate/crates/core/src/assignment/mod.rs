//! Label assignment: dynamic supply estimation, a one-to-one matcher, an
//! entropic transport solver, and an exact enumeration oracle.

mod hungarian;
mod oracle;
mod sinkhorn;

pub use hungarian::{hungarian_match, HungarianResult};
pub use oracle::{exact_transport_oracle, ENUMERATION_GUARD};
pub use sinkhorn::{sinkhorn_transport, SinkhornParams};

use crate::cost::{build_cost_matrix, ClassScores, CostError, CostMatrix, CostWeights};
use crate::geometry::{iou_matrix, BoxList};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("need at least as many predictions as ground truths: m={m}, n={n}")]
    TooFewPredictions { m: usize, n: usize },
    #[error("dynamic k needs at least one IoU entry")]
    EmptyIouRow,
    #[error("q must be at least 1")]
    InvalidQ,
    #[error("stage {t} outside 1..={stages}")]
    StageOutOfRange { t: usize, stages: usize },
    #[error("supply units must be positive; index {0} is zero")]
    ZeroUnit(usize),
    #[error("supply plan covers {supply} units but there are {demand} demanders")]
    SupplyDemandMismatch { supply: usize, demand: usize },
    #[error("supply plan has {plan} ground truths but the cost matrix has {matrix}")]
    SupplyShapeMismatch { plan: usize, matrix: usize },
    #[error("{name} must be positive, got {value}")]
    InvalidSolverParam { name: &'static str, value: f64 },
    #[error("enumeration guard exceeded: (m+1)^n = {states:.3e} states, limit {limit}")]
    InstanceTooLarge { states: f64, limit: u64 },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// A prediction's assigned target: a ground-truth index or background.
///
/// Serializes ground truth `i` as the integer `i` and background as the
/// string `"background"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Gt(usize),
    Background,
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Gt(i) => s.serialize_u64(*i as u64),
            Label::Background => s.serialize_str("background"),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LabelVisitor;

        impl serde::de::Visitor<'_> for LabelVisitor {
            type Value = Label;

            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a ground-truth index or \"background\"")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Label, E> {
                Ok(Label::Gt(v as usize))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Label, E> {
                usize::try_from(v)
                    .map(Label::Gt)
                    .map_err(|_| E::custom(format!("negative ground-truth index {v}")))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Label, E> {
                if v == "background" {
                    Ok(Label::Background)
                } else {
                    Err(E::custom(format!("expected \"background\", got {v:?}")))
                }
            }
        }

        d.deserialize_any(LabelVisitor)
    }
}

/// Integral unit budget per supplier: `gt_units[i]` positives owed to ground
/// truth `i`, plus the background remainder. Units always sum to the number
/// of demanders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupplyPlan {
    gt_units: Vec<usize>,
    background_units: usize,
}

impl SupplyPlan {
    /// Assembles a plan; the demand count is the sum of all units.
    pub fn new(gt_units: Vec<usize>, background_units: usize) -> Result<Self, AssignError> {
        if let Some(i) = gt_units.iter().position(|&k| k == 0) {
            return Err(AssignError::ZeroUnit(i));
        }
        Ok(Self {
            gt_units,
            background_units,
        })
    }

    pub fn num_gts(&self) -> usize {
        self.gt_units.len()
    }

    pub fn gt_units(&self) -> &[usize] {
        &self.gt_units
    }

    pub fn background_units(&self) -> usize {
        self.background_units
    }

    /// Total units; equals the demander count by construction.
    pub fn total(&self) -> usize {
        self.gt_units.iter().sum::<usize>() + self.background_units
    }
}

/// A dense transport plan over `(m + 1)` suppliers and `n` demanders, plus
/// the worst marginal deviation achieved by the solver (0 for exact plans).
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pi: Array2<f64>,
    marginal_error: f64,
}

impl TransportPlan {
    pub(crate) fn new(pi: Array2<f64>, marginal_error: f64) -> Self {
        Self { pi, marginal_error }
    }

    pub fn pi(&self) -> &Array2<f64> {
        &self.pi
    }

    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }

    pub fn num_suppliers(&self) -> usize {
        self.pi.nrows()
    }

    pub fn num_demanders(&self) -> usize {
        self.pi.ncols()
    }
}

/// Total transported cost `<C, pi>`.
pub fn transported_cost(cost: &CostMatrix, plan: &TransportPlan) -> f64 {
    cost.values()
        .iter()
        .zip(plan.pi.iter())
        .map(|(c, p)| c * p)
        .sum()
}

/// Hardened one-label-per-prediction assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    labels: Vec<Label>,
    positives_per_gt: Vec<usize>,
}

impl HardAssignment {
    pub fn from_labels(labels: Vec<Label>, num_gts: usize) -> Self {
        let mut positives = vec![0usize; num_gts];
        for label in &labels {
            if let Label::Gt(i) = label {
                positives[*i] += 1;
            }
        }
        Self {
            labels,
            positives_per_gt: positives,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn positives_per_gt(&self) -> &[usize] {
        &self.positives_per_gt
    }

    pub fn background_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::Background)
            .count()
    }

    /// True when per-supplier counts equal the plan's units exactly.
    pub fn matches_supply(&self, supply: &SupplyPlan) -> bool {
        self.positives_per_gt == supply.gt_units()
            && self.background_count() == supply.background_units()
    }
}

/// Cost of an integral assignment under `cost`: each prediction pays its
/// assigned row.
pub fn assignment_cost(cost: &CostMatrix, labels: &[Label]) -> f64 {
    let bg = cost.num_gts();
    labels
        .iter()
        .enumerate()
        .map(|(j, label)| match label {
            Label::Gt(i) => cost.get(*i, j),
            Label::Background => cost.get(bg, j),
        })
        .sum()
}

/// Estimates a ground truth's unit count from its IoU row: the floor of the
/// summed top-`q` IoUs, at least 1.
pub fn dynamic_k_estimate(iou_row: &[f64], q: usize) -> Result<usize, AssignError> {
    if q == 0 {
        return Err(AssignError::InvalidQ);
    }
    if iou_row.is_empty() {
        return Err(AssignError::EmptyIouRow);
    }
    let mut sorted = iou_row.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let sum: f64 = sorted.iter().take(q).sum();
    Ok((sum.floor() as usize).max(1))
}

/// Staged unit schedule: at stage `t` of `stages` the effective count is
/// `max(1, floor(k - 0.5 * (stages - t)))`, reaching `k` at the final stage.
pub fn apply_unit_increase(k: usize, t: usize, stages: usize) -> Result<usize, AssignError> {
    if t == 0 || t > stages {
        return Err(AssignError::StageOutOfRange { t, stages });
    }
    let reduced = k as f64 - 0.5 * (stages - t) as f64;
    Ok(if reduced < 1.0 {
        1
    } else {
        reduced.floor() as usize
    })
}

/// Caps unit requests so background keeps at least a fifth of the demand.
///
/// If the requested units exceed `0.8 * n`, each is rescaled by
/// `0.8 * n / sum` (exact integer floor) and clamped to at least 1; any
/// excess that survives the clamp is trimmed from the largest entries until
/// the total fits. Background receives the remainder. When `m` itself
/// exceeds `0.8 * n` the floor-of-one dominates and background may get less.
pub fn cap_supplies(k_vec: &[usize], n: usize) -> Result<SupplyPlan, AssignError> {
    let m = k_vec.len();
    if n < m {
        return Err(AssignError::TooFewPredictions { m, n });
    }
    if let Some(i) = k_vec.iter().position(|&k| k == 0) {
        return Err(AssignError::ZeroUnit(i));
    }
    let sum: usize = k_vec.iter().sum();
    let mut units: Vec<usize>;
    if 5 * sum > 4 * n {
        units = k_vec
            .iter()
            .map(|&k| ((4 * k * n) / (5 * sum)).max(1))
            .collect();
        let budget = (4 * n / 5).max(m);
        let mut total: usize = units.iter().sum();
        while total > budget {
            // shave the largest entry still above 1; first index wins ties
            let i = units
                .iter()
                .enumerate()
                .filter(|&(_, &u)| u > 1)
                .max_by_key(|&(i, &u)| (u, std::cmp::Reverse(i)))
                .map(|(i, _)| i)
                .expect("total > budget >= m implies some unit exceeds 1");
            units[i] -= 1;
            total -= 1;
        }
    } else {
        units = k_vec.to_vec();
    }
    let total: usize = units.iter().sum();
    SupplyPlan::new(units, n - total)
}

/// Hardens a transport plan: each demander takes its argmax supplier, ties
/// broken toward the lower row index.
pub fn harden(plan: &TransportPlan, supply: &SupplyPlan) -> HardAssignment {
    assert_eq!(
        plan.num_suppliers(),
        supply.num_gts() + 1,
        "plan and supply disagree on the supplier count"
    );
    let bg_row = supply.num_gts();
    let labels = plan
        .pi
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0usize;
            let mut best_mass = col[0];
            for (i, &mass) in col.iter().enumerate().skip(1) {
                if mass > best_mass {
                    best = i;
                    best_mass = mass;
                }
            }
            if best == bg_row {
                Label::Background
            } else {
                Label::Gt(best)
            }
        })
        .collect();
    HardAssignment::from_labels(labels, supply.num_gts())
}

/// Everything produced by one assignment pass.
#[derive(Debug, Clone)]
pub struct OtaOutcome {
    pub assignment: HardAssignment,
    pub plan: TransportPlan,
    pub supply: SupplyPlan,
    pub cost: CostMatrix,
    pub iou_matrix: Array2<f64>,
    /// Raw per-ground-truth unit estimates before the stage schedule.
    pub k_estimates: Vec<usize>,
    /// Unit counts after the stage schedule, before capping.
    pub k_staged: Vec<usize>,
}

/// Knobs for one transport assignment pass.
#[derive(Debug, Clone)]
pub struct OtaParams {
    /// Number of top IoUs summed per ground truth.
    pub q: usize,
    /// Current stage, `1..=stages`.
    pub stage: usize,
    pub stages: usize,
    pub sinkhorn: SinkhornParams,
}

impl Default for OtaParams {
    fn default() -> Self {
        Self {
            q: 8,
            stage: 6,
            stages: 6,
            sinkhorn: SinkhornParams::default(),
        }
    }
}

/// Full assignment pass: estimate units from IoU, apply the stage schedule,
/// cap against the demand budget, solve the transport problem, and harden.
pub fn assign_ota(
    gts: &BoxList,
    gt_labels: &[usize],
    preds: &BoxList,
    scores: &ClassScores,
    weights: &CostWeights,
    params: &OtaParams,
) -> Result<OtaOutcome, AssignError> {
    let m = gts.len();
    let n = preds.len();
    if n < m {
        return Err(AssignError::TooFewPredictions { m, n });
    }
    let ious = iou_matrix(gts, preds)?;
    let mut k_estimates = Vec::with_capacity(m);
    let mut k_staged = Vec::with_capacity(m);
    for i in 0..m {
        let row = ious.row(i);
        let k = dynamic_k_estimate(row.as_slice().expect("iou rows are contiguous"), params.q)?;
        k_estimates.push(k);
        k_staged.push(apply_unit_increase(k, params.stage, params.stages)?);
    }
    let supply = cap_supplies(&k_staged, n)?;
    let cost = build_cost_matrix(gts, gt_labels, preds, scores, weights)?;
    let plan = sinkhorn_transport(&cost, &supply, &params.sinkhorn)?;
    let assignment = harden(&plan, &supply);
    Ok(OtaOutcome {
        assignment,
        plan,
        supply,
        cost,
        iou_matrix: ious,
        k_estimates,
        k_staged,
    })
}
