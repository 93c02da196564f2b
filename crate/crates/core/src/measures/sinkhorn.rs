use serde::{Deserialize, Serialize};

use super::{CostMatrix, EmpiricalMeasure};
use crate::error::{ensure_dim, Error, Result};

/// Entropic regularization strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Epsilon {
    Absolute(f64),
    /// Fraction of the mean cross cost, so the solver is scale free.
    RelativeToMeanCost(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// L1 violation of the row marginal at which iteration stops.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::RelativeToMeanCost(0.05),
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

/// Dual solution of one entropic transport problem.
#[derive(Debug, Clone)]
pub struct EntropicOt {
    /// Dual objective at the returned potentials.
    pub value: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Debiased value `OT(mu,nu) - OT(mu,mu)/2 - OT(nu,nu)/2`.
///
/// When any of the three inner problems hit `max_iters`, `converged` is
/// false and the fields describe the last iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornDivergence {
    pub value: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl SinkhornDivergence {
    /// Turns a non-converged result into an error.
    pub fn into_result(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                marginal_error: self.marginal_error,
            })
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Problem<'a> {
    cost: &'a CostMatrix,
    cost_t: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(cost: &'a CostMatrix, a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (cost.rows(), cost.cols());
        let mut cost_t = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                cost_t[j * n + i] = cost.get(i, j);
            }
        }
        Self {
            cost,
            cost_t,
            log_a: a.iter().map(|w| w.ln()).collect(),
            log_b: b.iter().map(|w| w.ln()).collect(),
        }
    }

    /// `f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)`.
    fn update_f(&self, g: &[f64], eps: f64, out: &mut [f64]) {
        for (i, fi) in out.iter_mut().enumerate() {
            let row = self.cost.row(i);
            *fi = -eps
                * log_sum_exp(
                    self.log_b
                        .iter()
                        .zip(g)
                        .zip(row)
                        .map(|((lb, gj), c)| lb + (gj - c) / eps),
                );
        }
    }

    fn update_g(&self, f: &[f64], eps: f64, out: &mut [f64]) {
        let n = self.cost.rows();
        for (j, gj) in out.iter_mut().enumerate() {
            let col = &self.cost_t[j * n..(j + 1) * n];
            *gj = -eps
                * log_sum_exp(
                    self.log_a
                        .iter()
                        .zip(f)
                        .zip(col)
                        .map(|((la, fi), c)| la + (fi - c) / eps),
                );
        }
    }

    fn plan(&self, f: &[f64], g: &[f64], eps: f64, i: usize, j: usize) -> f64 {
        (self.log_a[i] + self.log_b[j] + (f[i] + g[j] - self.cost.get(i, j)) / eps).exp()
    }

    fn dual_value(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        let mut mass = 0.0;
        for i in 0..f.len() {
            for j in 0..g.len() {
                mass += self.plan(f, g, eps, i, j);
            }
        }
        let linear: f64 = self.log_a.iter().zip(f).map(|(la, fi)| la.exp() * fi).sum::<f64>()
            + self.log_b.iter().zip(g).map(|(lb, gj)| lb.exp() * gj).sum::<f64>();
        linear - eps * (mass - 1.0)
    }

    /// Partial derivative of the dual objective in `eps` at fixed potentials.
    fn dual_eps_partial(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        let mut out = 1.0;
        for i in 0..f.len() {
            for j in 0..g.len() {
                let p = self.plan(f, g, eps, i, j);
                out += -p + p * (f[i] + g[j] - self.cost.get(i, j)) / eps;
            }
        }
        out
    }
}

fn row_violation(log_a: &[f64], f_old: &[f64], f_new: &[f64], eps: f64) -> f64 {
    log_a
        .iter()
        .zip(f_old.iter().zip(f_new))
        .map(|(la, (fo, fn_))| la.exp() * (((fo - fn_) / eps).exp() - 1.0).abs())
        .sum()
}

/// Log-domain Sinkhorn on a given cost matrix and marginals.
pub fn entropic_ot(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<EntropicOt> {
    ensure_dim("row marginal", cost.rows(), a.len())?;
    ensure_dim("column marginal", cost.cols(), b.len())?;
    check_eps(epsilon)?;
    let problem = Problem::new(cost, a, b);
    Ok(solve_cross(&problem, epsilon, max_iters, tol))
}

fn check_eps(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

/// Geometric schedule from the largest cost down to `eps`, used to warm
/// start the potentials before the final solve.
fn annealing_schedule(cost: &CostMatrix, eps: f64) -> Vec<f64> {
    let top = cost.entries().iter().fold(0.0f64, |a, &c| a.max(c));
    let mut out = Vec::new();
    let mut e = top;
    while e > eps {
        out.push(e);
        e *= ANNEAL_FACTOR;
    }
    out
}

const ANNEAL_FACTOR: f64 = 0.5;
const ANNEAL_STEPS: usize = 3;

fn solve_cross(problem: &Problem<'_>, eps: f64, max_iters: usize, tol: f64) -> EntropicOt {
    let (n, m) = (problem.cost.rows(), problem.cost.cols());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut f_new = vec![0.0; n];
    for stage in annealing_schedule(problem.cost, eps) {
        for _ in 0..ANNEAL_STEPS {
            problem.update_f(&g, stage, &mut f);
            problem.update_g(&f, stage, &mut g);
        }
    }
    problem.update_f(&g, eps, &mut f);
    problem.update_g(&f, eps, &mut g);
    let mut converged = false;
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 1;
    while iterations < max_iters {
        problem.update_f(&g, eps, &mut f_new);
        marginal_error = row_violation(&problem.log_a, &f, &f_new, eps);
        std::mem::swap(&mut f, &mut f_new);
        iterations += 1;
        if marginal_error <= tol {
            converged = true;
            break;
        }
        problem.update_g(&f, eps, &mut g);
    }
    EntropicOt {
        value: problem.dual_value(&f, &g, eps),
        f,
        g,
        epsilon: eps,
        converged,
        iterations,
        marginal_error,
    }
}

/// Self-transport `OT(mu, mu)` with averaged symmetric updates.
fn solve_symmetric(problem: &Problem<'_>, eps: f64, max_iters: usize, tol: f64) -> EntropicOt {
    let n = problem.cost.rows();
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    for stage in annealing_schedule(problem.cost, eps) {
        for _ in 0..ANNEAL_STEPS {
            problem.update_f(&f, stage, &mut t);
            for (fi, ti) in f.iter_mut().zip(&t) {
                *fi = 0.5 * (*fi + ti);
            }
        }
    }
    let mut converged = false;
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        // With a = b, the f-update of the cross solver is the transform T.
        problem.update_f(&f, eps, &mut t);
        marginal_error = row_violation(&problem.log_a, &f, &t, eps);
        iterations += 1;
        if marginal_error <= tol {
            converged = true;
            break;
        }
        for (fi, ti) in f.iter_mut().zip(&t) {
            *fi = 0.5 * (*fi + ti);
        }
    }
    EntropicOt {
        value: problem.dual_value(&f, &f, eps),
        g: f.clone(),
        f,
        epsilon: eps,
        converged,
        iterations,
        marginal_error,
    }
}

/// Debiased Sinkhorn divergence with squared Euclidean cost and an absolute
/// `epsilon`.
pub fn sinkhorn_divergence(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornDivergence> {
    let opts = SinkhornOptions {
        epsilon: Epsilon::Absolute(epsilon),
        max_iters,
        tol,
    };
    Ok(sinkhorn_divergence_with(mu, nu, &opts, false)?.0)
}

/// Debiased Sinkhorn divergence and, on request, its gradient with respect
/// to the points of `mu` (row-major, same layout as `mu.points()`).
///
/// With a relative epsilon the gradient includes the dependence of epsilon
/// on the mean cost.
pub fn sinkhorn_divergence_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    opts: &SinkhornOptions,
    want_grad: bool,
) -> Result<(SinkhornDivergence, Option<Vec<f64>>)> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let c_xy = CostMatrix::squared_euclidean(mu, nu)?;
    let c_xx = CostMatrix::squared_euclidean(mu, mu)?;
    let c_yy = CostMatrix::squared_euclidean(nu, nu)?;
    if c_xy.entries().iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite cost matrix".into()));
    }
    let (eps, relative) = match opts.epsilon {
        Epsilon::Absolute(e) => {
            check_eps(e)?;
            (e, None)
        }
        Epsilon::RelativeToMeanCost(r) => {
            check_eps(r)?;
            let mean = c_xy.mean();
            if mean > 0.0 {
                (r * mean, Some(r))
            } else {
                (r * f64::EPSILON, None)
            }
        }
    };
    let p_xy = Problem::new(&c_xy, mu.weights(), nu.weights());
    let p_xx = Problem::new(&c_xx, mu.weights(), mu.weights());
    let p_yy = Problem::new(&c_yy, nu.weights(), nu.weights());
    let xy = solve_cross(&p_xy, eps, opts.max_iters, opts.tol);
    let xx = solve_symmetric(&p_xx, eps, opts.max_iters, opts.tol);
    let yy = solve_symmetric(&p_yy, eps, opts.max_iters, opts.tol);

    let raw = xy.value - 0.5 * xx.value - 0.5 * yy.value;
    let result = SinkhornDivergence {
        value: raw.max(0.0),
        epsilon: eps,
        converged: xy.converged && xx.converged && yy.converged,
        iterations: xy.iterations.max(xx.iterations).max(yy.iterations),
        marginal_error: xy
            .marginal_error
            .max(xx.marginal_error)
            .max(yy.marginal_error),
    };
    if !want_grad {
        return Ok((result, None));
    }

    let d = mu.dim();
    let (n, m) = (mu.len(), nu.len());
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        let x = mu.point(i);
        let gi = &mut grad[i * d..(i + 1) * d];
        for j in 0..m {
            let w = 2.0 * p_xy.plan(&xy.f, &xy.g, eps, i, j);
            for (k, y) in nu.point(j).iter().enumerate() {
                gi[k] += w * (x[k] - y);
            }
        }
        for j in 0..n {
            // d/dx_i of -OT(mu,mu)/2: the plan is symmetric, so both
            // arguments contribute equally and the halves cancel.
            let w = 2.0 * p_xx.plan(&xx.f, &xx.f, eps, i, j);
            for (k, xj) in mu.point(j).iter().enumerate() {
                gi[k] -= w * (x[k] - xj);
            }
        }
    }
    if let Some(r) = relative {
        let d_eps = p_xy.dual_eps_partial(&xy.f, &xy.g, eps)
            - 0.5 * p_xx.dual_eps_partial(&xx.f, &xx.f, eps)
            - 0.5 * p_yy.dual_eps_partial(&yy.f, &yy.f, eps);
        let mut y_bar = vec![0.0; d];
        for j in 0..m {
            for (k, y) in nu.point(j).iter().enumerate() {
                y_bar[k] += y / m as f64;
            }
        }
        // mean cost = 1/(nm) sum_ij |x_i - y_j|^2
        for i in 0..n {
            for k in 0..d {
                grad[i * d + k] += d_eps * r * 2.0 / n as f64 * (mu.point(i)[k] - y_bar[k]);
            }
        }
    }
    Ok((result, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::exact_wasserstein;

    fn scalars(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(xs).unwrap()
    }

    #[test]
    fn self_divergence_vanishes() {
        let mu = EmpiricalMeasure::uniform(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let s = sinkhorn_divergence(&mu, &mu, 0.1, 500, 1e-9).unwrap();
        assert!(s.converged);
        assert!(s.value.abs() < 1e-9, "{}", s.value);
    }

    #[test]
    fn small_epsilon_recovers_exact_cost() {
        let mu = scalars(&[0.0, 1.0]);
        let nu = scalars(&[2.0, 3.0]);
        let mean_cost = CostMatrix::squared_euclidean(&mu, &nu).unwrap().mean();
        let s = sinkhorn_divergence(&mu, &nu, 1e-3 * mean_cost, 5000, 1e-9).unwrap();
        let exact = exact_wasserstein(&mu, &nu, 2.0).unwrap();
        assert!(s.converged);
        assert!((s.value - exact).abs() / exact < 0.05, "{} vs {exact}", s.value);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mu = scalars(&[0.0, 1.0, 5.0]);
        let nu = scalars(&[2.0, 3.0, -4.0]);
        let s = sinkhorn_divergence(&mu, &nu, 1e-3, 1, 1e-12).unwrap();
        assert!(!s.converged);
        assert!(matches!(s.into_result(), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let mu = scalars(&[0.0, 1.0]);
        assert!(sinkhorn_divergence(&mu, &mu, 0.0, 10, 1e-6).is_err());
        assert!(sinkhorn_divergence(&mu, &mu, -1.0, 10, 1e-6).is_err());
    }

    #[test]
    fn cross_potentials_satisfy_marginals() {
        let mu = scalars(&[0.0, 0.4, 1.0]);
        let nu = EmpiricalMeasure::weighted(1, vec![0.2, 2.0], vec![0.3, 0.7]).unwrap();
        let c = CostMatrix::squared_euclidean(&mu, &nu).unwrap();
        let ot = entropic_ot(&c, mu.weights(), nu.weights(), 0.05, 2000, 1e-12).unwrap();
        assert!(ot.converged);
        let p = Problem::new(&c, mu.weights(), nu.weights());
        for j in 0..2 {
            let col: f64 = (0..3).map(|i| p.plan(&ot.f, &ot.g, 0.05, i, j)).sum();
            assert!((col - nu.weights()[j]).abs() < 1e-9);
        }
    }
}
