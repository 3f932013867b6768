//! End-to-end checks that chain the simulator, cost construction, the
//! transport solvers, and proposal generation the way the binary does.

use ota_core::*;

fn tight_solver() -> SinkhornParams {
    SinkhornParams {
        max_iters: 20_000,
        ..SinkhornParams::default()
    }
}

#[test]
fn ota_pipeline_tracks_the_exact_oracle() {
    let scene = generate_scene(3, 2, 4, (1.0, 1.0)).unwrap();
    let noise = NoiseSchedule {
        sigma_max: 0.04,
        preds_per_gt: 4,
    };
    let preds = simulate_stage_predictions(&scene, 4, 6, 8, &noise).unwrap();
    let params = OtaParams {
        stage: 4,
        sinkhorn: tight_solver(),
        ..OtaParams::default()
    };
    let outcome = assign_ota(
        &scene.gt_boxes,
        &scene.gt_labels,
        &preds.boxes,
        &preds.scores,
        &CostWeights::default(),
        &params,
    )
    .unwrap();

    assert!(outcome.plan.marginal_error() <= 1e-6);
    assert!(outcome.assignment.matches_supply(&outcome.supply));

    let oracle = exact_transport_oracle(&outcome.cost, &outcome.supply).unwrap();
    let approx = transported_cost(&outcome.cost, &outcome.plan);
    let exact = transported_cost(&outcome.cost, &oracle);
    assert!(exact <= approx + 1e-9, "oracle is a lower bound");
    assert!(
        approx <= exact.abs() * 0.02 + exact + 1e-6,
        "entropic cost {approx} strays more than 2% from the optimum {exact}"
    );

    // Hardening the integral oracle plan must reproduce it, and the units it
    // spends per ground truth are exactly the supplies.
    let hard_oracle = harden(&oracle, &outcome.supply);
    assert!(hard_oracle.matches_supply(&outcome.supply));
}

#[test]
fn single_stage_report_equals_a_direct_call() {
    let mut cfg = EngineConfig::default();
    cfg.solver.stages = 1;
    cfg.simulate.gts = 3;
    cfg.simulate.predictions = 24;
    cfg.simulate.classes = 5;
    cfg.simulate.preds_per_gt = 4;

    let scene = generate_scene(17, cfg.simulate.gts, cfg.simulate.classes, (1.0, 1.0)).unwrap();
    let report = run_iterative_assignment(&scene, &cfg).unwrap();
    assert_eq!(report.stages.len(), 1);
    let stage = &report.stages[0];

    let preds = simulate_stage_predictions(
        &scene,
        1,
        1,
        cfg.simulate.predictions,
        &cfg.simulate.noise(),
    )
    .unwrap();
    let outcome = assign_ota(
        &scene.gt_boxes,
        &scene.gt_labels,
        &preds.boxes,
        &preds.scores,
        &cfg.cost,
        &cfg.ota_params(1),
    )
    .unwrap();

    assert_eq!(
        stage.total_cost,
        transported_cost(&outcome.cost, &outcome.plan)
    );
    assert_eq!(stage.marginal_error, outcome.plan.marginal_error());
    assert_eq!(
        stage.background_fraction,
        outcome.assignment.background_count() as f64 / cfg.simulate.predictions as f64
    );
    let positives = outcome.assignment.positives_per_gt();
    assert_eq!(stage.min_positives_per_gt, *positives.iter().min().unwrap());
    assert_eq!(stage.max_positives_per_gt, *positives.iter().max().unwrap());
}

#[test]
fn proposal_generation_is_deterministic() {
    let pyramid = random_pyramid(5, 2, 16, 16).unwrap();
    let bank = random_bank(6, 4, 10, 8);
    let params = random_params(7, 2, 5, 16, 4, 10, 1.0, WeightMode::PerProposal);
    let (a_mixed, a_w) = generate_dynamic_proposals(&pyramid, &bank, &params).unwrap();
    let (b_mixed, b_w) = generate_dynamic_proposals(&pyramid, &bank, &params).unwrap();
    assert_eq!(a_w.values(), b_w.values());
    assert_eq!(a_mixed.boxes, b_mixed.boxes);
    assert_eq!(a_mixed.features, b_mixed.features);
}

#[test]
fn mixed_proposals_stay_inside_the_expert_envelope() {
    for seed in 0..20 {
        let pyramid = random_pyramid(seed, 1, 16, 16).unwrap();
        let bank = random_bank(seed + 100, 3, 6, 4);
        let params = random_params(seed + 200, 1, 4, 8, 3, 6, 1.0, WeightMode::PerProposal);
        let (mixed, weights) = generate_dynamic_proposals(&pyramid, &bank, &params).unwrap();

        for p in 0..bank.num_proposals() {
            let row_sum: f64 = weights.values().row(p).sum();
            assert!(
                (row_sum - 1.0).abs() <= 1e-6,
                "weights row {p} sums to {row_sum}"
            );
            for c in 0..4 {
                let over_experts: Vec<f64> = (0..bank.num_experts())
                    .map(|e| bank.boxes()[[e, p, c]])
                    .collect();
                let lo = over_experts.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = over_experts
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let v = mixed.boxes[[p, c]];
                assert!(
                    v >= lo - 1e-9 && v <= hi + 1e-9,
                    "seed {seed}: mixed coordinate {v} escapes [{lo}, {hi}]"
                );
            }
        }
    }
}

#[test]
fn cooler_temperatures_never_soften_the_gating() {
    let pyramid = random_pyramid(31, 2, 16, 16).unwrap();
    let bank = random_bank(32, 5, 12, 6);
    let mut prev_mean_max = 0.0;
    for tau in [1.0, 0.1, 0.01] {
        let mut params = random_params(33, 2, 5, 16, 5, 12, tau, WeightMode::PerProposal);
        // Spread the logits so every row has a clearly distinct maximum; the
        // sharpening bound below presumes non-degenerate gaps.
        params.fc2.mapv_inplace(|v| v * 10.0);
        let (_, weights) = generate_dynamic_proposals(&pyramid, &bank, &params).unwrap();
        let w = weights.values();
        let mean_max: f64 = (0..w.nrows())
            .map(|p| w.row(p).iter().cloned().fold(0.0, f64::max))
            .sum::<f64>()
            / w.nrows() as f64;
        assert!(
            mean_max >= prev_mean_max - 1e-12,
            "tau {tau}: mean max weight {mean_max} dropped below {prev_mean_max}"
        );
        prev_mean_max = mean_max;
    }
    // At tau = 0.01 the gating should be close to a hard routing decision.
    assert!(
        prev_mean_max >= 0.99,
        "expected near one-hot rows, got {prev_mean_max}"
    );
}

#[test]
fn empty_ground_truth_sends_everything_to_background() {
    let boxes = vec![
        BBox::new(0.1, 0.1, 0.3, 0.3).unwrap(),
        BBox::new(0.5, 0.5, 0.8, 0.9).unwrap(),
    ];
    let preds = BoxList::new(boxes, Units::Normalized);
    let scores = ClassScores::new(
        ndarray::Array2::from_shape_vec((2, 3), vec![0.7, 0.1, 0.2, 0.3, 0.4, 0.3]).unwrap(),
    )
    .unwrap();
    let gts = BoxList::new(Vec::new(), Units::Normalized);
    let outcome = assign_ota(
        &gts,
        &[],
        &preds,
        &scores,
        &CostWeights::default(),
        &OtaParams::default(),
    )
    .unwrap();
    assert_eq!(outcome.assignment.background_count(), 2);
    assert!(outcome
        .assignment
        .labels()
        .iter()
        .all(|l| *l == Label::Background));
    assert!(outcome.plan.marginal_error() <= 1e-9);
}
