use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{lp_cost, CostMatrix, EmpiricalMeasure};
use crate::error::{ensure_dim, Error, Result};

/// `W_p^p(mu, nu)`: the cheapest expected `||x - y||_p^p` over all couplings.
///
/// Uniform measures of equal size are solved as an assignment problem. Any
/// other pair of weight vectors goes through a dense transportation LP.
pub fn exact_wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    let cost = CostMatrix::new(mu, nu, p)?;
    if mu.is_uniform() && nu.is_uniform() && mu.len() == nu.len() {
        let assignment = hungarian(&cost)?;
        let total: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.get(i, j))
            .sum();
        Ok((total / mu.len() as f64).max(0.0))
    } else {
        transport_lp(&cost, mu.weights(), nu.weights())
    }
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting paths with row/column potentials, `O(n^3)`.
/// Returns `assignment[row] = col`.
pub fn hungarian(cost: &CostMatrix) -> Result<Vec<usize>> {
    let n = cost.rows();
    ensure_dim("assignment matrix columns", n, cost.cols())?;
    if n == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if cost.entries().iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite cost".into()));
    }
    // 1-based arrays; index 0 is the virtual root of each augmenting tree.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = cost.row(i0 - 1);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = row[j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    Ok(assignment)
}

fn transport_lp(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<f64> {
    let (n, m) = (cost.rows(), cost.cols());
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = cost
        .entries()
        .iter()
        .map(|&c| problem.add_var(c, (0.0, f64::INFINITY)))
        .collect();
    for (i, &ai) in a.iter().enumerate() {
        let row: Vec<_> = (0..m).map(|j| (vars[i * m + j], 1.0)).collect();
        problem.add_constraint(&row, ComparisonOp::Eq, ai);
    }
    // The last column constraint is implied by the others.
    for (j, &bj) in b.iter().enumerate().take(m - 1) {
        let col: Vec<_> = (0..n).map(|i| (vars[i * m + j], 1.0)).collect();
        problem.add_constraint(&col, ComparisonOp::Eq, bj);
    }
    let solution = problem
        .solve()
        .map_err(|e| Error::LinearProgram(e.to_string()))?;
    Ok(solution.objective().max(0.0))
}

/// `W_p^p` between two equal-size uniform samples on the real line.
///
/// Pairs order statistics; inputs need not be pre-sorted.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    ensure_dim("1-D sample length", xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::Empty("1-D sample"));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let total: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| lp_cost(&[*x], &[*y], p))
        .sum();
    Ok(total / xs.len() as f64)
}
