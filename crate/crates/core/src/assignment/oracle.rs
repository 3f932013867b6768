//! Exact transport optimum by bounded enumeration of integral assignments.

use super::{AssignError, SupplyPlan, TransportPlan};
use crate::cost::CostMatrix;
use ndarray::{Array2, ArrayView2};

/// Upper bound on `(m + 1)^n` enumeration states.
pub const ENUMERATION_GUARD: u64 = 2_000_000;

struct Search<'a> {
    c: ArrayView2<'a, f64>,
    /// Admissible bound: `suffix[j]` sums the per-column minima from `j` on.
    suffix: Vec<f64>,
    rows: usize,
    n: usize,
    remaining: Vec<usize>,
    current: Vec<usize>,
    best_cost: f64,
    best: Vec<usize>,
    found: bool,
}

impl Search<'_> {
    fn run(&mut self, j: usize, partial: f64) {
        if self.found && partial + self.suffix[j] >= self.best_cost {
            return;
        }
        if j == self.n {
            self.best_cost = partial;
            self.best = self.current.clone();
            self.found = true;
            return;
        }
        for s in 0..self.rows {
            if self.remaining[s] == 0 {
                continue;
            }
            self.remaining[s] -= 1;
            self.current.push(s);
            self.run(j + 1, partial + self.c[[s, j]]);
            self.current.pop();
            self.remaining[s] += 1;
        }
    }
}

/// Finds the exact transport optimum by enumerating integral plans.
///
/// With integral supplies and unit demands the transport polytope has
/// integral vertices, so the best integral plan is also the best fractional
/// one; this gives a ground-truth answer for solver comparisons. Instances
/// beyond [`ENUMERATION_GUARD`] states are refused. Deterministic: among
/// equal-cost optima the first in supplier-lexicographic order wins.
pub fn exact_transport_oracle(
    cost: &CostMatrix,
    supply: &SupplyPlan,
) -> Result<TransportPlan, AssignError> {
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
    let states = (rows as f64).powi(n as i32);
    if states > ENUMERATION_GUARD as f64 {
        return Err(AssignError::InstanceTooLarge {
            states,
            limit: ENUMERATION_GUARD,
        });
    }
    let c = cost.values();
    let mut suffix = vec![0.0f64; n + 1];
    for j in (0..n).rev() {
        let col_min = (0..rows).map(|i| c[[i, j]]).fold(f64::INFINITY, f64::min);
        suffix[j] = suffix[j + 1] + col_min;
    }
    let mut remaining: Vec<usize> = supply.gt_units().to_vec();
    remaining.push(supply.background_units());
    let mut search = Search {
        c,
        suffix,
        rows,
        n,
        remaining,
        current: Vec::with_capacity(n),
        best_cost: f64::INFINITY,
        best: Vec::new(),
        found: false,
    };
    search.run(0, 0.0);
    debug_assert!(search.found, "feasible instances always admit a plan");
    let mut pi = Array2::zeros((rows, n));
    for (j, &s) in search.best.iter().enumerate() {
        pi[[s, j]] = 1.0;
    }
    Ok(TransportPlan::new(pi, 0.0))
}
