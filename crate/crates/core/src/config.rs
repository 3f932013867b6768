//! Engine configuration: a flat `section.key=value` text format with strict
//! key checking, plus the defaults every command starts from.

use crate::assignment::{OtaParams, SinkhornParams};
use crate::cost::CostWeights;
use crate::dpg::{DpgDims, WeightMode};
use crate::simulate::NoiseSchedule;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    MissingEquals { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse {value:?} as {ty}")]
    BadValue {
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("key {key}: expected one of [{allowed}], got {value:?}")]
    BadChoice {
        key: String,
        value: String,
        allowed: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which matcher drives assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Hungarian,
    Ota,
}

/// Transport solver and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Top IoUs summed per ground truth when estimating units.
    pub q: usize,
    /// Refinement stages per run.
    pub stages: usize,
    /// Final entropic regularization.
    pub epsilon: f64,
    /// Halvings before `epsilon` is reached.
    pub anneal_steps: u32,
    pub max_iters: usize,
    pub tol: f64,
    pub matcher: Matcher,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            q: 8,
            stages: 6,
            epsilon: 0.01,
            anneal_steps: 3,
            max_iters: 500,
            tol: 1e-6,
            matcher: Matcher::Ota,
        }
    }
}

/// Proposal generation dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DpgConfig {
    /// Experts (config key `dpg.N_e`).
    pub num_experts: usize,
    /// Proposals per expert (`dpg.N_p`).
    pub num_proposals: usize,
    /// Pyramid channels (`dpg.C`).
    pub channels: usize,
    /// Gating grid side (`dpg.S`).
    pub gating_size: usize,
    /// Hidden width of the gate (`dpg.D_h`).
    pub hidden: usize,
    /// Softmax temperature (`dpg.tau`).
    pub tau: f64,
    pub weight_mode: WeightMode,
}

impl Default for DpgConfig {
    fn default() -> Self {
        Self {
            num_experts: 4,
            num_proposals: 300,
            channels: 256,
            gating_size: 30,
            hidden: 1500,
            tau: 1.0,
            weight_mode: WeightMode::PerProposal,
        }
    }
}

impl DpgConfig {
    pub fn dims(&self) -> DpgDims {
        DpgDims {
            channels: self.channels,
            gating_size: self.gating_size,
            hidden: self.hidden,
            num_experts: self.num_experts,
            num_proposals: self.num_proposals,
            feature_dim: self.channels,
        }
    }
}

/// Scene simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Ground truths per scene (`simulate.m`).
    pub gts: usize,
    /// Predictions per stage (`simulate.n`).
    pub predictions: usize,
    /// Classes (`simulate.K`).
    pub classes: usize,
    /// Seeds per sweep (`simulate.seeds`).
    pub seeds: u64,
    /// Stage-1 coordinate noise (`simulate.sigma_max`).
    pub sigma_max: f64,
    /// Clustered predictions per ground truth (`simulate.preds_per_gt`).
    pub preds_per_gt: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gts: 5,
            predictions: 300,
            classes: 80,
            seeds: 10,
            sigma_max: 0.05,
            preds_per_gt: 5,
        }
    }
}

impl SimConfig {
    pub fn noise(&self) -> NoiseSchedule {
        NoiseSchedule {
            sigma_max: self.sigma_max,
            preds_per_gt: self.preds_per_gt,
        }
    }
}

/// Full engine configuration. Parsed from a flat text file of
/// `section.key=value` lines; blank lines and `#` comments are ignored, and
/// unknown keys are rejected by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineConfig {
    pub cost: CostWeights,
    pub solver: SolverConfig,
    pub dpg: DpgConfig,
    pub simulate: SimConfig,
}

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    ty: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        ty,
    })
}

impl EngineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::MissingEquals {
                    line: idx + 1,
                    text: line.to_string(),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "cost.alpha" => self.cost.alpha = parse_num(key, value, "float")?,
            "cost.lambda_cls" => self.cost.lambda_cls = parse_num(key, value, "float")?,
            "cost.lambda_l1" => self.cost.lambda_l1 = parse_num(key, value, "float")?,
            "cost.lambda_giou" => self.cost.lambda_giou = parse_num(key, value, "float")?,
            "cost.focal_gamma" => self.cost.focal_gamma = parse_num(key, value, "float")?,
            "cost.focal_alpha" => self.cost.focal_alpha = parse_num(key, value, "float")?,
            "solver.q" => self.solver.q = parse_num(key, value, "integer")?,
            "solver.stages" => self.solver.stages = parse_num(key, value, "integer")?,
            "solver.epsilon" => self.solver.epsilon = parse_num(key, value, "float")?,
            "solver.anneal_steps" => self.solver.anneal_steps = parse_num(key, value, "integer")?,
            "solver.max_iters" => self.solver.max_iters = parse_num(key, value, "integer")?,
            "solver.tol" => self.solver.tol = parse_num(key, value, "float")?,
            "solver.matcher" => {
                self.solver.matcher = match value {
                    "hungarian" => Matcher::Hungarian,
                    "ota" => Matcher::Ota,
                    _ => {
                        return Err(ConfigError::BadChoice {
                            key: key.to_string(),
                            value: value.to_string(),
                            allowed: "hungarian, ota",
                        })
                    }
                }
            }
            "dpg.N_e" => self.dpg.num_experts = parse_num(key, value, "integer")?,
            "dpg.N_p" => self.dpg.num_proposals = parse_num(key, value, "integer")?,
            "dpg.C" => self.dpg.channels = parse_num(key, value, "integer")?,
            "dpg.S" => self.dpg.gating_size = parse_num(key, value, "integer")?,
            "dpg.D_h" => self.dpg.hidden = parse_num(key, value, "integer")?,
            "dpg.tau" => self.dpg.tau = parse_num(key, value, "float")?,
            "dpg.weight_mode" => {
                self.dpg.weight_mode = match value {
                    "per_proposal" => WeightMode::PerProposal,
                    "per_expert" => WeightMode::PerExpert,
                    _ => {
                        return Err(ConfigError::BadChoice {
                            key: key.to_string(),
                            value: value.to_string(),
                            allowed: "per_proposal, per_expert",
                        })
                    }
                }
            }
            "simulate.m" => self.simulate.gts = parse_num(key, value, "integer")?,
            "simulate.n" => self.simulate.predictions = parse_num(key, value, "integer")?,
            "simulate.K" => self.simulate.classes = parse_num(key, value, "integer")?,
            "simulate.seeds" => self.simulate.seeds = parse_num(key, value, "integer")?,
            "simulate.sigma_max" => self.simulate.sigma_max = parse_num(key, value, "float")?,
            "simulate.preds_per_gt" => {
                self.simulate.preds_per_gt = parse_num(key, value, "integer")?
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cost
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pos_ints = [
            ("solver.q", self.solver.q),
            ("solver.stages", self.solver.stages),
            ("solver.max_iters", self.solver.max_iters),
            ("dpg.N_e", self.dpg.num_experts),
            ("dpg.N_p", self.dpg.num_proposals),
            ("dpg.C", self.dpg.channels),
            ("dpg.S", self.dpg.gating_size),
            ("dpg.D_h", self.dpg.hidden),
            ("simulate.n", self.simulate.predictions),
            ("simulate.K", self.simulate.classes),
        ];
        for (name, v) in pos_ints {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.simulate.seeds == 0 {
            return Err(ConfigError::Invalid(
                "simulate.seeds must be at least 1".into(),
            ));
        }
        let pos_floats = [
            ("solver.epsilon", self.solver.epsilon),
            ("solver.tol", self.solver.tol),
            ("dpg.tau", self.dpg.tau),
        ];
        for (name, v) in pos_floats {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.simulate.sigma_max.is_finite() && self.simulate.sigma_max >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "simulate.sigma_max must be non-negative and finite, got {}",
                self.simulate.sigma_max
            )));
        }
        if self.simulate.gts > self.simulate.predictions {
            return Err(ConfigError::Invalid(format!(
                "simulate.m = {} exceeds simulate.n = {}",
                self.simulate.gts, self.simulate.predictions
            )));
        }
        Ok(())
    }

    pub fn sinkhorn_params(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: self.solver.epsilon,
            anneal_steps: self.solver.anneal_steps,
            max_iters: self.solver.max_iters,
            tol: self.solver.tol,
        }
    }

    pub fn ota_params(&self, stage: usize) -> OtaParams {
        OtaParams {
            q: self.solver.q,
            stage,
            stages: self.solver.stages,
            sinkhorn: self.sinkhorn_params(),
        }
    }
}
