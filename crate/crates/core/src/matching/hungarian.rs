//! Exact minimum-cost assignment via the Hungarian algorithm
//! (shortest augmenting paths with row/column potentials, O(n³)).

use super::{CostMatrix, MatchResult};
use crate::{Error, Result};

/// Optimal assignment of every column (target) to a distinct row
/// (prediction) of an `N×M` cost matrix with `N ≥ M`.
///
/// The matrix is padded to `N×N` with columns of constant cost
/// `max entry + 1`; a row assigned to a padding column is unmatched. A
/// constant column adds the same amount to every complete assignment, so the
/// optimum over the real columns is unchanged.
pub fn hungarian(cost: &CostMatrix) -> Result<MatchResult> {
    let (n, m) = (cost.rows(), cost.cols());
    if n < m {
        return Err(Error::Contract(format!("{m} targets but only {n} predictions")));
    }
    if let Some(bad) = cost.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite matching cost {bad}")));
    }
    if m == 0 {
        return Ok(MatchResult::new(vec![None; n]));
    }
    let pad = cost.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let at = |i: usize, j: usize| if j < m { cost.get(i, j) } else { pad };

    // 1-based arrays; index 0 is the virtual source row/column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; n];
    for j in 1..=m {
        assignment[row_of_col[j] - 1] = Some(j - 1);
    }
    Ok(MatchResult::new(assignment))
}
