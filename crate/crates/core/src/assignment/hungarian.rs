//! One-to-one matching on a rectangular cost matrix via shortest augmenting
//! paths with dual potentials.

use super::AssignError;
use ndarray::ArrayView2;

/// Result of a one-to-one match over an `m x n` cost matrix with `m <= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct HungarianResult {
    /// `assigned[i]` is the column matched to row `i`.
    pub assigned: Vec<usize>,
    /// Sum of the matched entries, accumulated in row order.
    pub total_cost: f64,
}

/// Minimum-cost matching of every row to a distinct column.
///
/// Requires `m <= n` and finite entries; negative costs are fine. Runs the
/// Jonker-Volgenant style augmenting-path scheme in O(m^2 n).
pub fn hungarian_match(cost: ArrayView2<'_, f64>) -> Result<HungarianResult, AssignError> {
    let (m, n) = cost.dim();
    if m > n {
        return Err(AssignError::TooFewPredictions { m, n });
    }
    if let Some(((i, j), &v)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(AssignError::Cost(crate::cost::CostError::InvalidMatrix(
            format!("non-finite entry {v} at ({i}, {j})"),
        )));
    }
    // 1-based potentials over rows (u) and columns (v); col_row[j] is the row
    // currently matched to column j, 0 meaning free.
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=m {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        // walk the augmenting path back, flipping matches
        while j0 != 0 {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }
    let mut assigned = vec![0usize; m];
    for j in 1..=n {
        if col_row[j] != 0 {
            assigned[col_row[j] - 1] = j - 1;
        }
    }
    let total_cost = assigned
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Ok(HungarianResult {
        assigned,
        total_cost,
    })
}
