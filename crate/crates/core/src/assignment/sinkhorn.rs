//! Entropic transport in the log domain with epsilon annealing.

use super::{AssignError, SupplyPlan, TransportPlan};
use crate::cost::CostMatrix;
use ndarray::{Array2, ArrayView2};

/// Solver knobs. Iteration starts at `epsilon * 2^anneal_steps` and halves
/// the regularization down to `epsilon`, warm-starting the potentials at
/// each step; sharper plans come out of small epsilon, larger epsilon keeps
/// early iterations stable.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornParams {
    /// Final entropic regularization strength.
    pub epsilon: f64,
    /// Number of halvings applied before `epsilon` is reached.
    pub anneal_steps: u32,
    /// Iteration budget per annealing step.
    pub max_iters: usize,
    /// Worst-marginal convergence tolerance (absolute).
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            anneal_steps: 3,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

fn lse_over_cols(c: &ArrayView2<'_, f64>, g: &[f64], i: usize, eps: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (j, gj) in g.iter().enumerate() {
        let t = (gj - c[[i, j]]) / eps;
        if t > mx {
            mx = t;
        }
    }
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (j, gj) in g.iter().enumerate() {
        sum += ((gj - c[[i, j]]) / eps - mx).exp();
    }
    mx + sum.ln()
}

fn lse_over_rows(c: &ArrayView2<'_, f64>, f: &[f64], j: usize, eps: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (i, fi) in f.iter().enumerate() {
        let t = (fi - c[[i, j]]) / eps;
        if t > mx {
            mx = t;
        }
    }
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (i, fi) in f.iter().enumerate() {
        sum += ((fi - c[[i, j]]) / eps - mx).exp();
    }
    mx + sum.ln()
}

fn worst_row_deviation(c: &ArrayView2<'_, f64>, f: &[f64], g: &[f64], a: &[f64], eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, fi) in f.iter().enumerate() {
        let mut row_sum = 0.0;
        for (j, gj) in g.iter().enumerate() {
            row_sum += ((fi + gj - c[[i, j]]) / eps).exp();
        }
        worst = worst.max((row_sum - a[i]).abs());
    }
    worst
}

/// Solves the entropic transport problem between the supply plan and one
/// unit of demand per prediction.
///
/// Row and column updates alternate in the log domain, so saturated scores
/// and large cost gaps cannot overflow. Returns the plan achieved when the
/// worst marginal deviation drops below `tol`, or after the iteration budget
/// runs out, with the achieved deviation reported either way.
pub fn sinkhorn_transport(
    cost: &CostMatrix,
    supply: &SupplyPlan,
    params: &SinkhornParams,
) -> Result<TransportPlan, AssignError> {
    for (name, value) in [("epsilon", params.epsilon), ("tol", params.tol)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(AssignError::InvalidSolverParam { name, value });
        }
    }
    if params.max_iters == 0 {
        return Err(AssignError::InvalidSolverParam {
            name: "max_iters",
            value: 0.0,
        });
    }
    if supply.num_gts() != cost.num_gts() {
        return Err(AssignError::SupplyShapeMismatch {
            plan: supply.num_gts(),
            matrix: cost.num_gts(),
        });
    }
    let n = cost.num_predictions();
    if supply.total() != n {
        return Err(AssignError::SupplyDemandMismatch {
            supply: supply.total(),
            demand: n,
        });
    }
    let rows = cost.num_gts() + 1;
    let c = cost.values();
    let mut a: Vec<f64> = supply.gt_units().iter().map(|&k| k as f64).collect();
    a.push(supply.background_units() as f64);
    let log_a: Vec<f64> = a
        .iter()
        .map(|&s| if s > 0.0 { s.ln() } else { f64::NEG_INFINITY })
        .collect();

    // zero-supply rows keep -inf potential and transport nothing
    let mut f: Vec<f64> = log_a
        .iter()
        .map(|&la| {
            if la.is_finite() {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut g = vec![0.0f64; n];

    for step in (0..=params.anneal_steps).rev() {
        let eps = params.epsilon * f64::powi(2.0, step as i32);
        for _ in 0..params.max_iters {
            for i in 0..rows {
                if log_a[i].is_finite() {
                    f[i] = eps * (log_a[i] - lse_over_cols(&c, &g, i, eps));
                }
            }
            for (j, gj) in g.iter_mut().enumerate() {
                *gj = -eps * lse_over_rows(&c, &f, j, eps);
            }
            if worst_row_deviation(&c, &f, &g, &a, eps) <= params.tol {
                break;
            }
        }
    }

    let mut pi = Array2::zeros((rows, n));
    for i in 0..rows {
        for j in 0..n {
            pi[[i, j]] = ((f[i] + g[j] - c[[i, j]]) / params.epsilon).exp();
        }
    }
    let mut err = 0.0f64;
    for (i, &ai) in a.iter().enumerate() {
        err = err.max((pi.row(i).sum() - ai).abs());
    }
    for j in 0..n {
        err = err.max((pi.column(j).sum() - 1.0).abs());
    }
    Ok(TransportPlan::new(pi, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{harden, transported_cost, Label};
    use ndarray::array;

    fn plan_of(
        values: Array2<f64>,
        num_gts: usize,
        units: Vec<usize>,
        bg: usize,
    ) -> (CostMatrix, SupplyPlan) {
        let cost = CostMatrix::from_values(values, num_gts).unwrap();
        let supply = SupplyPlan::new(units, bg).unwrap();
        (cost, supply)
    }

    #[test]
    fn uniform_costs_spread_mass_by_supply() {
        let (cost, supply) = plan_of(Array2::from_elem((3, 4), 1.0), 2, vec![2, 1], 1);
        let plan = sinkhorn_transport(&cost, &supply, &SinkhornParams::default()).unwrap();
        assert!(plan.marginal_error() <= 1e-6);
        for j in 0..4 {
            assert!((plan.pi()[[0, j]] - 2.0 / 4.0).abs() < 1e-6);
            assert!((plan.pi()[[1, j]] - 1.0 / 4.0).abs() < 1e-6);
            assert!((plan.pi()[[2, j]] - 1.0 / 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn separated_costs_harden_to_the_obvious_labels() {
        let values = array![[0.0, 8.0, 8.0], [8.0, 0.0, 8.0], [8.0, 8.0, 0.0],];
        let (cost, supply) = plan_of(values, 2, vec![1, 1], 1);
        let plan = sinkhorn_transport(&cost, &supply, &SinkhornParams::default()).unwrap();
        assert!(plan.marginal_error() <= 1e-6);
        let hard = harden(&plan, &supply);
        assert_eq!(
            hard.labels(),
            &[Label::Gt(0), Label::Gt(1), Label::Background]
        );
        assert!(hard.matches_supply(&supply));
        let total = transported_cost(&cost, &plan);
        assert!(
            total < 0.1,
            "plan cost {total} should be near the sharp optimum 0"
        );
    }

    #[test]
    fn zero_background_supply_is_handled() {
        let values = array![[1.0, 2.0], [3.0, 0.5], [9.0, 9.0]];
        let (cost, supply) = plan_of(values, 2, vec![1, 1], 0);
        let plan = sinkhorn_transport(&cost, &supply, &SinkhornParams::default()).unwrap();
        assert!(plan.marginal_error() <= 1e-6);
        assert!(plan.pi().row(2).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn reports_achieved_error_when_budget_runs_out() {
        let values = array![[0.0, 10.0], [10.0, 0.0], [5.0, 5.0]];
        let (cost, supply) = plan_of(values, 2, vec![1, 1], 0);
        let starved = SinkhornParams {
            max_iters: 1,
            anneal_steps: 0,
            ..SinkhornParams::default()
        };
        let plan = sinkhorn_transport(&cost, &supply, &starved).unwrap();
        assert!(plan.marginal_error().is_finite());
    }

    #[test]
    fn validates_params_and_shapes() {
        let (cost, supply) = plan_of(Array2::zeros((2, 3)), 1, vec![1], 2);
        let bad_eps = SinkhornParams {
            epsilon: 0.0,
            ..SinkhornParams::default()
        };
        assert!(matches!(
            sinkhorn_transport(&cost, &supply, &bad_eps),
            Err(AssignError::InvalidSolverParam {
                name: "epsilon",
                ..
            })
        ));
        let short_supply = SupplyPlan::new(vec![1], 1).unwrap();
        assert!(matches!(
            sinkhorn_transport(&cost, &short_supply, &SinkhornParams::default()),
            Err(AssignError::SupplyDemandMismatch {
                supply: 2,
                demand: 3
            })
        ));
        let wrong_gts = SupplyPlan::new(vec![1, 1], 1).unwrap();
        assert!(matches!(
            sinkhorn_transport(&cost, &wrong_gts, &SinkhornParams::default()),
            Err(AssignError::SupplyShapeMismatch { plan: 2, matrix: 1 })
        ));
    }
}
