//! Label assignment as optimal transport, plus the machinery around it:
//! box geometry, focal/GIoU cost construction, a Hungarian baseline, an
//! entropic transport solver with dynamic per-target supplies and staged
//! unit schedules, exact enumeration oracles, an expert-mixture proposal
//! generator, and a deterministic scene simulator.

pub mod assignment;
pub mod config;
pub mod cost;
pub mod dpg;
pub mod geometry;
pub mod simulate;

pub use assignment::{
    apply_unit_increase, assign_ota, assignment_cost, cap_supplies, dynamic_k_estimate,
    exact_transport_oracle, harden, hungarian_match, sinkhorn_transport, transported_cost,
    AssignError, HardAssignment, HungarianResult, Label, OtaOutcome, OtaParams, SinkhornParams,
    SupplyPlan, TransportPlan, ENUMERATION_GUARD,
};
pub use config::{ConfigError, EngineConfig, Matcher};
pub use cost::{
    build_cost_matrix, classification_cost, regression_cost, ClassScores, CostError, CostMatrix,
    CostWeights,
};
pub use dpg::{
    generate_dynamic_proposals, load_params, mix_proposals, random_bank, random_params,
    random_pyramid, save_params, staircase_forward, weight_head_forward, DpgDims, DpgError,
    ExpertBank, ExpertWeights, FeaturePyramid, MixedProposals, StaircaseParams, WeightMode,
};
pub use geometry::{
    giou, iou, iou_matrix, l1_box_distance, nms, BBox, BoxList, GeometryError, Units,
};
pub use simulate::{
    aggregate_reports, generate_scene, run_iterative_assignment, run_seeds,
    simulate_stage_predictions, AggregateStage, NoiseSchedule, Scene, SimError, SimulationReport,
    StagePredictions, StageStats,
};
