//! Dynamic proposal generation: a staircase feature aggregator feeding a
//! temperature-softmax gate that mixes per-expert proposal banks.

mod io;
mod staircase;

pub use io::{load_params, save_params, DpgDims};
pub use staircase::{bilinear_resize, depthwise_stride2, staircase_forward};

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpgError {
    #[error("{tensor} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{tensor} declares shape {shape:?} ({expected} values) but carries {got} values")]
    DataSize {
        tensor: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("pyramid: {0}")]
    InvalidPyramid(String),
    #[error("stair into {level}: {detail}")]
    StairShape { level: String, detail: String },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("gating grid size must be at least 1")]
    InvalidGatingSize,
    #[error("expert bank: {0}")]
    InvalidBank(String),
    #[error("expert weights: {0}")]
    InvalidWeights(String),
    #[error("parameter file is missing tensor {0:?}")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How gate weights vary: an independent softmax per proposal row, or one
/// softmax shared by every proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    PerProposal,
    PerExpert,
}

/// Four feature maps `P2..P5`, each `(C, H_l, W_l)` with a shared channel
/// count. Spatial sizes are free here; the staircase checks its own
/// alignment level by level.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: [Array3<f64>; 4],
}

impl FeaturePyramid {
    pub fn new(
        p2: Array3<f64>,
        p3: Array3<f64>,
        p4: Array3<f64>,
        p5: Array3<f64>,
    ) -> Result<Self, DpgError> {
        let levels = [p2, p3, p4, p5];
        let channels = levels[0].dim().0;
        for (idx, level) in levels.iter().enumerate() {
            let (c, h, w) = level.dim();
            if c == 0 || h == 0 || w == 0 {
                return Err(DpgError::InvalidPyramid(format!(
                    "P{} has empty shape {:?}",
                    idx + 2,
                    level.dim()
                )));
            }
            if c != channels {
                return Err(DpgError::InvalidPyramid(format!(
                    "P{} has {} channels, P2 has {}",
                    idx + 2,
                    c,
                    channels
                )));
            }
            if level.iter().any(|v| !v.is_finite()) {
                return Err(DpgError::InvalidPyramid(format!(
                    "P{} contains non-finite values",
                    idx + 2
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn channels(&self) -> usize {
        self.levels[0].dim().0
    }

    /// Level by pyramid name: 0 is P2, 3 is P5.
    pub fn level(&self, idx: usize) -> &Array3<f64> {
        &self.levels[idx]
    }
}

/// Learned tensors for the staircase gate.
#[derive(Debug, Clone)]
pub struct StaircaseParams {
    /// Depthwise 3x3 kernels: `(C, 3, 3)`, `(2C, 3, 3)`, `(3C, 3, 3)`.
    pub dw2: Array3<f64>,
    pub dw3: Array3<f64>,
    pub dw4: Array3<f64>,
    /// Dense layers: `(S^2, D)` then `(D, N_e * N_p)` (or `(D, N_e)` in
    /// per-expert mode).
    pub fc1: Array2<f64>,
    pub fc2: Array2<f64>,
    /// Side of the square gating grid the fused map is resized to.
    pub gating_size: usize,
    /// Softmax temperature.
    pub tau: f64,
    pub weight_mode: WeightMode,
}

impl StaircaseParams {
    /// Checks every tensor against the dimensions the forward pass will use.
    pub fn validate(
        &self,
        channels: usize,
        num_experts: usize,
        num_proposals: usize,
    ) -> Result<(), DpgError> {
        if self.gating_size == 0 {
            return Err(DpgError::InvalidGatingSize);
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(DpgError::InvalidTemperature(self.tau));
        }
        let kernels = [
            ("dw2", &self.dw2, channels),
            ("dw3", &self.dw3, 2 * channels),
            ("dw4", &self.dw4, 3 * channels),
        ];
        for (name, tensor, want_c) in kernels {
            let got = tensor.dim();
            if got != (want_c, 3, 3) {
                return Err(DpgError::ShapeMismatch {
                    tensor: name.into(),
                    expected: vec![want_c, 3, 3],
                    got: vec![got.0, got.1, got.2],
                });
            }
        }
        let s2 = self.gating_size * self.gating_size;
        let (fc1_in, hidden) = self.fc1.dim();
        if fc1_in != s2 || hidden == 0 {
            return Err(DpgError::ShapeMismatch {
                tensor: "fc1".into(),
                expected: vec![s2, hidden.max(1)],
                got: vec![fc1_in, hidden],
            });
        }
        let out = match self.weight_mode {
            WeightMode::PerProposal => num_experts * num_proposals,
            WeightMode::PerExpert => num_experts,
        };
        if self.fc2.dim() != (hidden, out) {
            return Err(DpgError::ShapeMismatch {
                tensor: "fc2".into(),
                expected: vec![hidden, out],
                got: vec![self.fc2.dim().0, self.fc2.dim().1],
            });
        }
        let tensors: [(&str, &[f64]); 5] = [
            ("dw2", self.dw2.as_slice().unwrap_or(&[])),
            ("dw3", self.dw3.as_slice().unwrap_or(&[])),
            ("dw4", self.dw4.as_slice().unwrap_or(&[])),
            ("fc1", self.fc1.as_slice().unwrap_or(&[])),
            ("fc2", self.fc2.as_slice().unwrap_or(&[])),
        ];
        for (name, data) in tensors {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(DpgError::InvalidWeights(format!(
                    "{name} contains non-finite values"
                )));
            }
        }
        Ok(())
    }
}

/// Per-expert proposal banks: boxes `(N_e, N_p, 4)` in center/size form and
/// features `(N_e, N_p, C_f)`. Box widths and heights must be non-negative
/// so every mixture decodes to a valid corner box.
#[derive(Debug, Clone)]
pub struct ExpertBank {
    boxes: Array3<f64>,
    features: Array3<f64>,
}

impl ExpertBank {
    pub fn new(boxes: Array3<f64>, features: Array3<f64>) -> Result<Self, DpgError> {
        let (ne, np, four) = boxes.dim();
        if ne == 0 || np == 0 || four != 4 {
            return Err(DpgError::InvalidBank(format!(
                "boxes must be (experts, proposals, 4), got {:?}",
                boxes.dim()
            )));
        }
        let (fe, fp, fc) = features.dim();
        if (fe, fp) != (ne, np) || fc == 0 {
            return Err(DpgError::InvalidBank(format!(
                "features {:?} do not match boxes {:?}",
                features.dim(),
                boxes.dim()
            )));
        }
        for e in 0..ne {
            for p in 0..np {
                let w = boxes[[e, p, 2]];
                let h = boxes[[e, p, 3]];
                let cx = boxes[[e, p, 0]];
                let cy = boxes[[e, p, 1]];
                if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite())
                    || w < 0.0
                    || h < 0.0
                {
                    return Err(DpgError::InvalidBank(format!(
                        "expert {e} proposal {p} has invalid box [{cx}, {cy}, {w}, {h}]"
                    )));
                }
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DpgError::InvalidBank(
                "features contain non-finite values".into(),
            ));
        }
        Ok(Self { boxes, features })
    }

    pub fn num_experts(&self) -> usize {
        self.boxes.dim().0
    }

    pub fn num_proposals(&self) -> usize {
        self.boxes.dim().1
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim().2
    }

    pub fn boxes(&self) -> &Array3<f64> {
        &self.boxes
    }

    pub fn features(&self) -> &Array3<f64> {
        &self.features
    }
}

/// Gate output: `(N_p, N_e)` with non-negative rows summing to one.
#[derive(Debug, Clone)]
pub struct ExpertWeights {
    w: Array2<f64>,
}

impl ExpertWeights {
    /// Row-sum tolerance accepted at construction.
    pub const ROW_SUM_TOL: f64 = 1e-6;

    pub fn new(w: Array2<f64>) -> Result<Self, DpgError> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(DpgError::InvalidWeights(format!(
                "empty weight matrix {:?}",
                w.dim()
            )));
        }
        for (p, row) in w.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(DpgError::InvalidWeights(format!(
                        "row {p} holds invalid weight {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(DpgError::InvalidWeights(format!(
                    "row {p} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { w })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn num_proposals(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_experts(&self) -> usize {
        self.w.ncols()
    }
}

/// Proposals after expert mixing: boxes `(N_p, 4)` in center/size form and
/// features `(N_p, C_f)`.
#[derive(Debug, Clone)]
pub struct MixedProposals {
    pub boxes: Array2<f64>,
    pub features: Array2<f64>,
}

impl MixedProposals {
    /// Decodes the mixed center/size rows into a box list.
    pub fn to_box_list(
        &self,
        units: crate::geometry::Units,
    ) -> Result<crate::geometry::BoxList, crate::geometry::GeometryError> {
        let boxes = self
            .boxes
            .rows()
            .into_iter()
            .map(|r| crate::geometry::BBox::from_cxcywh(r[0], r[1], r[2], r[3]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(crate::geometry::BoxList::new(boxes, units))
    }
}

fn softmax_row(logits: &[f64], tau: f64) -> Vec<f64> {
    let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - mx) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Maps the flattened gating vector to per-proposal expert weights:
/// `relu(x . fc1) . fc2`, reshaped row-major to `(N_p, N_e)`, then a
/// temperature softmax per row.
pub fn weight_head_forward(
    flat: &Array1<f64>,
    params: &StaircaseParams,
    num_experts: usize,
    num_proposals: usize,
) -> Result<ExpertWeights, DpgError> {
    if num_experts == 0 || num_proposals == 0 {
        return Err(DpgError::InvalidWeights(
            "need at least one expert and one proposal".into(),
        ));
    }
    let s2 = params.gating_size * params.gating_size;
    if flat.len() != s2 {
        return Err(DpgError::ShapeMismatch {
            tensor: "gating input".into(),
            expected: vec![s2],
            got: vec![flat.len()],
        });
    }
    if !(params.tau.is_finite() && params.tau > 0.0) {
        return Err(DpgError::InvalidTemperature(params.tau));
    }
    if params.fc1.nrows() != s2 {
        return Err(DpgError::ShapeMismatch {
            tensor: "fc1".into(),
            expected: vec![s2, params.fc1.ncols()],
            got: vec![params.fc1.nrows(), params.fc1.ncols()],
        });
    }
    let expected_out = match params.weight_mode {
        WeightMode::PerProposal => num_experts * num_proposals,
        WeightMode::PerExpert => num_experts,
    };
    if params.fc2.dim() != (params.fc1.ncols(), expected_out) {
        return Err(DpgError::ShapeMismatch {
            tensor: "fc2".into(),
            expected: vec![params.fc1.ncols(), expected_out],
            got: vec![params.fc2.dim().0, params.fc2.dim().1],
        });
    }
    let mut hidden = flat.dot(&params.fc1);
    hidden.mapv_inplace(|v| v.max(0.0));
    let logits = hidden.dot(&params.fc2);
    let mut w = Array2::zeros((num_proposals, num_experts));
    match params.weight_mode {
        WeightMode::PerProposal => {
            let logits = logits.as_slice().expect("dot output is contiguous");
            for p in 0..num_proposals {
                let row = softmax_row(&logits[p * num_experts..(p + 1) * num_experts], params.tau);
                for (e, v) in row.into_iter().enumerate() {
                    w[[p, e]] = v;
                }
            }
        }
        WeightMode::PerExpert => {
            let row = softmax_row(
                logits.as_slice().expect("dot output is contiguous"),
                params.tau,
            );
            for p in 0..num_proposals {
                for (e, &v) in row.iter().enumerate() {
                    w[[p, e]] = v;
                }
            }
        }
    }
    ExpertWeights::new(w)
}

/// Convex mixture of the expert banks under the gate weights. Proposal `p`
/// becomes `sum_e w[p, e] * bank[e, p]` for both boxes and features.
pub fn mix_proposals(
    bank: &ExpertBank,
    weights: &ExpertWeights,
) -> Result<MixedProposals, DpgError> {
    let ne = bank.num_experts();
    let np = bank.num_proposals();
    if weights.num_proposals() != np || weights.num_experts() != ne {
        return Err(DpgError::ShapeMismatch {
            tensor: "expert weights".into(),
            expected: vec![np, ne],
            got: vec![weights.num_proposals(), weights.num_experts()],
        });
    }
    let cf = bank.feature_dim();
    let w = weights.values();
    let mut boxes = Array2::zeros((np, 4));
    let mut features = Array2::zeros((np, cf));
    for p in 0..np {
        for e in 0..ne {
            let wpe = w[[p, e]];
            for d in 0..4 {
                boxes[[p, d]] += wpe * bank.boxes[[e, p, d]];
            }
            for d in 0..cf {
                features[[p, d]] += wpe * bank.features[[e, p, d]];
            }
        }
    }
    Ok(MixedProposals { boxes, features })
}

/// Full forward pass: staircase aggregation, gate weights, expert mixing.
pub fn generate_dynamic_proposals(
    pyramid: &FeaturePyramid,
    bank: &ExpertBank,
    params: &StaircaseParams,
) -> Result<(MixedProposals, ExpertWeights), DpgError> {
    params.validate(pyramid.channels(), bank.num_experts(), bank.num_proposals())?;
    let flat = staircase_forward(pyramid, params)?;
    let weights = weight_head_forward(&flat, params, bank.num_experts(), bank.num_proposals())?;
    let mixed = mix_proposals(bank, &weights)?;
    Ok((mixed, weights))
}

fn rand_array3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize), lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(lo..hi))
}

/// Deterministic random pyramid for demos and tests. `h2` and `w2` must be
/// multiples of 8 so the levels halve cleanly down to P5.
pub fn random_pyramid(
    seed: u64,
    channels: usize,
    h2: usize,
    w2: usize,
) -> Result<FeaturePyramid, DpgError> {
    if channels == 0 || h2 == 0 || w2 == 0 || !h2.is_multiple_of(8) || !w2.is_multiple_of(8) {
        return Err(DpgError::InvalidPyramid(format!(
            "base level must have positive channels and sizes divisible by 8, got C={channels}, {h2}x{w2}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p2 = rand_array3(&mut rng, (channels, h2, w2), -1.0, 1.0);
    let p3 = rand_array3(&mut rng, (channels, h2 / 2, w2 / 2), -1.0, 1.0);
    let p4 = rand_array3(&mut rng, (channels, h2 / 4, w2 / 4), -1.0, 1.0);
    let p5 = rand_array3(&mut rng, (channels, h2 / 8, w2 / 8), -1.0, 1.0);
    FeaturePyramid::new(p2, p3, p4, p5)
}

/// Deterministic random gate parameters with fan-in scaled dense layers.
#[allow(clippy::too_many_arguments)]
pub fn random_params(
    seed: u64,
    channels: usize,
    gating_size: usize,
    hidden: usize,
    num_experts: usize,
    num_proposals: usize,
    tau: f64,
    weight_mode: WeightMode,
) -> StaircaseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dw2 = rand_array3(&mut rng, (channels, 3, 3), -1.0 / 9.0, 1.0 / 9.0);
    let dw3 = rand_array3(&mut rng, (2 * channels, 3, 3), -1.0 / 9.0, 1.0 / 9.0);
    let dw4 = rand_array3(&mut rng, (3 * channels, 3, 3), -1.0 / 9.0, 1.0 / 9.0);
    let s2 = gating_size * gating_size;
    let fc1_scale = 1.0 / (s2 as f64).sqrt();
    let fc1 =
        Array2::from_shape_simple_fn((s2, hidden), || rng.random_range(-fc1_scale..fc1_scale));
    let out = match weight_mode {
        WeightMode::PerProposal => num_experts * num_proposals,
        WeightMode::PerExpert => num_experts,
    };
    let fc2_scale = 1.0 / (hidden.max(1) as f64).sqrt();
    let fc2 =
        Array2::from_shape_simple_fn((hidden, out), || rng.random_range(-fc2_scale..fc2_scale));
    StaircaseParams {
        dw2,
        dw3,
        dw4,
        fc1,
        fc2,
        gating_size,
        tau,
        weight_mode,
    }
}

/// Deterministic random expert bank with boxes inside the unit image.
pub fn random_bank(
    seed: u64,
    num_experts: usize,
    num_proposals: usize,
    feature_dim: usize,
) -> ExpertBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = Array3::zeros((num_experts, num_proposals, 4));
    for e in 0..num_experts {
        for p in 0..num_proposals {
            boxes[[e, p, 0]] = rng.random_range(0.2..0.8);
            boxes[[e, p, 1]] = rng.random_range(0.2..0.8);
            boxes[[e, p, 2]] = rng.random_range(0.05..0.3);
            boxes[[e, p, 3]] = rng.random_range(0.05..0.3);
        }
    }
    let features = rand_array3(
        &mut rng,
        (num_experts, num_proposals, feature_dim),
        -1.0,
        1.0,
    );
    ExpertBank::new(boxes, features).expect("generated banks are valid by construction")
}
