use std::io::Write;
use std::path::Path;

use ota_core::*;
use serde::Serialize;

use crate::error::{input, CliError};
use crate::scene::load_scene;

fn load_config(path: Option<&Path>) -> Result<EngineConfig, CliError> {
    match path {
        Some(p) => {
            EngineConfig::from_file(p).map_err(|e| input(&format!("config {}", p.display()), e))
        }
        None => Ok(EngineConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| input("serializing output", e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| input(&format!("writing {}", path.display()), e))
}

#[derive(Serialize)]
struct AssignOutput {
    matcher: Matcher,
    labels: Vec<Label>,
    positives_per_gt: Vec<usize>,
    marginal_error: f64,
    total_cost: f64,
}

/// Runs one mature-stage assignment over a scene file and writes the result.
pub fn cmd_assign(
    scene_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let scene = load_scene(scene_path)?;
    let output = match cfg.solver.matcher {
        Matcher::Ota => {
            let params = cfg.ota_params(cfg.solver.stages);
            let outcome = assign_ota(
                &scene.gts,
                &scene.gt_labels,
                &scene.preds,
                &scene.scores,
                &cfg.cost,
                &params,
            )
            .map_err(|e| input("assign", e))?;
            AssignOutput {
                matcher: Matcher::Ota,
                labels: outcome.assignment.labels().to_vec(),
                positives_per_gt: outcome.assignment.positives_per_gt().to_vec(),
                marginal_error: outcome.plan.marginal_error(),
                total_cost: transported_cost(&outcome.cost, &outcome.plan),
            }
        }
        Matcher::Hungarian => {
            let cost = build_cost_matrix(
                &scene.gts,
                &scene.gt_labels,
                &scene.preds,
                &scene.scores,
                &cfg.cost,
            )
            .map_err(|e| input("assign", e))?;
            let result = hungarian_match(cost.gt_rows()).map_err(|e| input("assign", e))?;
            let mut labels = vec![Label::Background; scene.preds.len()];
            for (i, &j) in result.assigned.iter().enumerate() {
                labels[j] = Label::Gt(i);
            }
            let assignment = HardAssignment::from_labels(labels, scene.gts.len());
            AssignOutput {
                matcher: Matcher::Hungarian,
                labels: assignment.labels().to_vec(),
                positives_per_gt: assignment.positives_per_gt().to_vec(),
                marginal_error: 0.0,
                total_cost: result.total_cost,
            }
        }
    };
    write_json(out, &output)?;
    if output.marginal_error > cfg.solver.tol {
        return Err(CliError::NonConvergence {
            achieved: output.marginal_error,
            tol: cfg.solver.tol,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateOutput {
    seeds: Vec<SimulationReport>,
    aggregate: Vec<AggregateStage>,
}

fn write_aggregate_csv(path: &Path, rows: &[AggregateStage]) -> Result<(), CliError> {
    let mut out = Vec::new();
    writeln!(
        out,
        "stage,mean_positives_per_gt,min_positives_per_gt,max_positives_per_gt,\
         mean_matched_iou,mean_total_cost,mean_background_fraction,max_marginal_error"
    )
    .expect("writing to a Vec cannot fail");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.stage,
            r.mean_positives_per_gt,
            r.min_positives_per_gt,
            r.max_positives_per_gt,
            r.mean_matched_iou,
            r.mean_total_cost,
            r.mean_background_fraction,
            r.max_marginal_error
        )
        .expect("writing to a Vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| input(&format!("writing {}", path.display()), e))
}

fn worker_threads() -> Result<usize, CliError> {
    match std::env::var("OTA_ASSIGN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|e| input(&format!("OTA_ASSIGN_THREADS={v}"), e)),
        Err(_) => Ok(0),
    }
}

/// Sweeps seeds through the staged simulator and writes `<report>.csv` with
/// one aggregate row per stage plus `<report>.json` with the full per-seed
/// detail.
pub fn cmd_simulate(
    config_path: Option<&Path>,
    seeds: Option<u64>,
    report: &Path,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seeds {
        cfg.simulate.seeds = s;
    }
    let seed_values: Vec<u64> = (0..cfg.simulate.seeds).collect();
    let reports =
        run_seeds(&seed_values, &cfg, worker_threads()?).map_err(|e| input("simulate", e))?;
    let aggregate = aggregate_reports(&reports);

    let mut csv_name = report.as_os_str().to_owned();
    csv_name.push(".csv");
    let mut json_name = report.as_os_str().to_owned();
    json_name.push(".json");
    let csv_path = std::path::PathBuf::from(csv_name);
    let json_path = std::path::PathBuf::from(json_name);
    write_aggregate_csv(&csv_path, &aggregate)?;
    write_json(
        &json_path,
        &SimulateOutput {
            seeds: reports,
            aggregate: aggregate.clone(),
        },
    )?;

    let worst = aggregate
        .iter()
        .map(|r| r.max_marginal_error)
        .fold(0.0, f64::max);
    if worst > cfg.solver.tol {
        return Err(CliError::NonConvergence {
            achieved: worst,
            tol: cfg.solver.tol,
        });
    }
    Ok(())
}

/// Solves one scene three ways and prints the costs side by side along with
/// how often the hardened transport labels agree with an exact optimum.
pub fn cmd_compare(scene_path: &Path, config_path: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let scene = load_scene(scene_path)?;
    let params = cfg.ota_params(cfg.solver.stages);
    let outcome = assign_ota(
        &scene.gts,
        &scene.gt_labels,
        &scene.preds,
        &scene.scores,
        &cfg.cost,
        &params,
    )
    .map_err(|e| input("compare", e))?;

    let oracle =
        exact_transport_oracle(&outcome.cost, &outcome.supply).map_err(|e| input("compare", e))?;
    let oracle_hard = harden(&oracle, &outcome.supply);
    let hungarian = hungarian_match(outcome.cost.gt_rows()).map_err(|e| input("compare", e))?;

    let n = scene.preds.len();
    let agree = outcome
        .assignment
        .labels()
        .iter()
        .zip(oracle_hard.labels())
        .filter(|(a, b)| a == b)
        .count();

    println!("hungarian_cost sinkhorn_cost oracle_cost label_agreement");
    println!(
        "{} {} {} {}",
        hungarian.total_cost,
        transported_cost(&outcome.cost, &outcome.plan),
        transported_cost(&outcome.cost, &oracle),
        agree as f64 / n as f64
    );

    let achieved = outcome.plan.marginal_error();
    if achieved > cfg.solver.tol {
        return Err(CliError::NonConvergence {
            achieved,
            tol: cfg.solver.tol,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct WeightStats {
    row_entropy: Vec<f64>,
    row_max_weight: Vec<f64>,
    mean_entropy: f64,
    mean_max_weight: f64,
}

#[derive(Serialize)]
struct DpgDemoOutput {
    num_experts: usize,
    num_proposals: usize,
    boxes_cxcywh: Vec<[f64; 4]>,
    features: Vec<Vec<f64>>,
    weight_stats: WeightStats,
}

fn weight_stats(weights: &ExpertWeights) -> WeightStats {
    let w = weights.values();
    let rows = w.nrows();
    let mut row_entropy = Vec::with_capacity(rows);
    let mut row_max_weight = Vec::with_capacity(rows);
    for p in 0..rows {
        let row = w.row(p);
        let entropy: f64 = row
            .iter()
            .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
            .sum();
        row_entropy.push(entropy);
        row_max_weight.push(row.iter().cloned().fold(0.0, f64::max));
    }
    let mean_entropy = row_entropy.iter().sum::<f64>() / rows as f64;
    let mean_max_weight = row_max_weight.iter().sum::<f64>() / rows as f64;
    WeightStats {
        row_entropy,
        row_max_weight,
        mean_entropy,
        mean_max_weight,
    }
}

/// Builds a gate and expert bank (from a params file or a seed), runs the
/// proposal generator over a random pyramid, and writes the mixture along
/// with per-row gating statistics.
pub fn cmd_dpg_demo(
    config_path: Option<&Path>,
    params_path: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let dims = cfg.dpg.dims();
    let (params, bank, pyramid_seed) = match (params_path, seed) {
        (Some(path), None) => {
            let (params, bank) = load_params(path, &dims, cfg.dpg.tau, cfg.dpg.weight_mode)
                .map_err(|e| input(&format!("params {}", path.display()), e))?;
            (params, bank, 0)
        }
        (None, Some(seed)) => {
            let params = random_params(
                seed,
                dims.channels,
                dims.gating_size,
                dims.hidden,
                dims.num_experts,
                dims.num_proposals,
                cfg.dpg.tau,
                cfg.dpg.weight_mode,
            );
            let bank = random_bank(
                seed.wrapping_add(1),
                dims.num_experts,
                dims.num_proposals,
                dims.feature_dim,
            );
            (params, bank, seed.wrapping_add(2))
        }
        _ => {
            return Err(CliError::Input(
                "pass exactly one of --params or --seed".into(),
            ))
        }
    };

    let pyramid =
        random_pyramid(pyramid_seed, dims.channels, 64, 64).map_err(|e| input("pyramid", e))?;
    let (mixed, weights) =
        generate_dynamic_proposals(&pyramid, &bank, &params).map_err(|e| input("dpg", e))?;

    let boxes_cxcywh: Vec<[f64; 4]> = mixed
        .boxes
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect();
    let features: Vec<Vec<f64>> = mixed
        .features
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();

    write_json(
        out,
        &DpgDemoOutput {
            num_experts: bank.num_experts(),
            num_proposals: bank.num_proposals(),
            boxes_cxcywh,
            features,
            weight_stats: weight_stats(&weights),
        },
    )
}
