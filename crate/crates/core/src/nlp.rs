//! Smooth constrained nonlinear programming.
//!
//! Augmented Lagrangian outer loop with a projected L-BFGS inner solver for
//! the bound-constrained subproblems. Equalities are h(z) = 0, inequalities
//! use the g(z) >= 0 convention, and simple bounds are handled by projection
//! rather than penalties.

use nalgebra::DMatrix;
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Sparse Jacobian in triplet form. Row/column indices may repeat; repeated
/// entries accumulate.
#[derive(Clone, Debug)]
pub struct SparseJacobian {
    pub rows: usize,
    pub cols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseJacobian {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            triplets: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        if value != 0.0 {
            self.triplets.push((row, col, value));
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut jac = Self::new(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                jac.push(r, c, m[(r, c)]);
            }
        }
        jac
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.triplets {
            m[(r, c)] += v;
        }
        m
    }

    /// Accumulates J^T w into `out`.
    pub fn transpose_mul_acc(&self, w: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for &(r, c, v) in &self.triplets {
            out[c] += v * w[r];
        }
    }
}

pub type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Box<dyn Fn(&[f64]) -> SparseJacobian + Send + Sync>;

/// A vector-valued constraint block with an optional analytic Jacobian.
/// Missing Jacobians fall back to central differences.
pub struct ConstraintSet {
    pub count: usize,
    pub eval: VectorFn,
    pub jacobian: Option<JacobianFn>,
}

impl ConstraintSet {
    pub fn new(count: usize, eval: VectorFn) -> Self {
        Self {
            count,
            eval,
            jacobian: None,
        }
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    fn jacobian_at(&self, z: &[f64], fd_step: f64) -> Result<SparseJacobian> {
        match &self.jacobian {
            Some(jac) => Ok(jac(z)),
            None => {
                let dense = numeric_jacobian(|p| (self.eval)(p), z, fd_step)?;
                Ok(SparseJacobian::from_dense(&dense))
            }
        }
    }
}

/// Smooth NLP: minimize objective(z) subject to h(z) = 0, g(z) >= 0 and
/// lower <= z <= upper.
pub struct NlpProblem {
    pub dimension: usize,
    pub objective: ScalarFn,
    pub objective_gradient: Option<VectorFn>,
    pub equality: Option<ConstraintSet>,
    pub inequality: Option<ConstraintSet>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl NlpProblem {
    /// Unconstrained, unbounded problem over `dimension` variables.
    pub fn unconstrained(dimension: usize, objective: ScalarFn) -> Self {
        Self {
            dimension,
            objective,
            objective_gradient: None,
            equality: None,
            inequality: None,
            lower: vec![f64::NEG_INFINITY; dimension],
            upper: vec![f64::INFINITY; dimension],
        }
    }

    fn gradient_at(&self, z: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        match &self.objective_gradient {
            Some(grad) => Ok(grad(z)),
            None => {
                let jac = numeric_jacobian(|p| vec![(self.objective)(p)], z, fd_step)?;
                Ok(jac.row(0).iter().copied().collect())
            }
        }
    }

    fn eq_count(&self) -> usize {
        self.equality.as_ref().map_or(0, |c| c.count)
    }

    fn ineq_count(&self) -> usize {
        self.inequality.as_ref().map_or(0, |c| c.count)
    }
}

/// Termination status of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
    NumericalFailure,
}

/// Solver result. `converged` implies the KKT residual and constraint
/// violation are within the requested tolerances.
#[derive(Clone, Debug)]
pub struct NlpSolution {
    pub point: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    /// Outer (augmented Lagrangian) iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub status: SolveStatus,
    pub multipliers_eq: Vec<f64>,
    pub multipliers_ineq: Vec<f64>,
}

/// Augmented Lagrangian schedule and tolerances.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol_kkt: f64,
    pub tol_feas: f64,
    pub max_outer: usize,
    /// Inner L-BFGS iteration cap per outer iteration.
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Consecutive stalled outer iterations at max penalty before declaring
    /// the problem infeasible.
    pub stall_outer: usize,
    /// Central-difference step for missing derivatives.
    pub fd_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-4,
            tol_feas: 1e-5,
            max_outer: 50,
            max_inner: 600,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            stall_outer: 5,
            fd_step: 1e-6,
        }
    }
}

fn project(z: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(lower[i], upper[i]);
    }
}

/// Infinity norm of z - P(z - grad), the first-order stationarity measure on
/// a box.
fn projected_gradient_norm(z: &[f64], grad: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..z.len() {
        let stepped = (z[i] - grad[i]).clamp(lower[i], upper[i]);
        norm = norm.max((z[i] - stepped).abs());
    }
    norm
}

struct InnerOutcome {
    point: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    iterations: usize,
}

/// Projected L-BFGS over a box. `value_grad` must return the objective and
/// its gradient at the query point. `h0_diag` seeds the inverse Hessian with
/// a diagonal preconditioner (pass an empty slice for the identity); the
/// augmented Lagrangian's curvature varies by orders of magnitude across
/// variable groups, which limited-memory updates alone cannot absorb.
fn minimize_box_lbfgs<F>(
    value_grad: &F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    h0_diag: &[f64],
    tol_pg: f64,
    max_iters: usize,
) -> Result<InnerOutcome>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    const MEMORY: usize = 12;
    const ARMIJO: f64 = 1e-4;
    const ACTIVE_EPS: f64 = 1e-10;

    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut f, mut g) = value_grad(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite objective or gradient at the initial point".into(),
        ));
    }

    let inv_diag: Vec<f64> = if h0_diag.is_empty() {
        vec![1.0; n]
    } else {
        h0_diag.iter().map(|d| 1.0 / d.max(1e-12)).collect()
    };

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        if projected_gradient_norm(&x, &g, lower, upper) <= tol_pg {
            break;
        }
        iterations += 1;

        // Mask out variables pinned at an active bound.
        let mut masked_g = g.clone();
        for i in 0..n {
            let at_lower = x[i] - lower[i] <= ACTIVE_EPS && g[i] > 0.0;
            let at_upper = upper[i] - x[i] <= ACTIVE_EPS && g[i] < 0.0;
            if at_lower || at_upper {
                masked_g[i] = 0.0;
            }
        }

        // Two-loop recursion on the masked gradient.
        let mut d = masked_g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let alpha = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= alpha * y[i];
            }
            alphas.push(alpha);
        }
        // Initial inverse Hessian: gamma * D^-1, with gamma fitted to the
        // most recent curvature pair.
        let mut gamma = 1.0;
        if let Some((s, y, _)) = history.back() {
            let ydy: f64 = y.iter().zip(inv_diag.iter()).map(|(v, w)| v * v * w).sum();
            let sy = dot(s, y);
            if ydy > 0.0 && sy > 0.0 {
                gamma = sy / ydy;
            }
        }
        for i in 0..n {
            d[i] *= gamma * inv_diag[i];
        }
        for ((s, y, rho), alpha) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (alpha - beta) * s[i];
            }
        }
        for v in d.iter_mut() {
            *v = -*v;
        }
        for i in 0..n {
            let at_lower = x[i] - lower[i] <= ACTIVE_EPS && g[i] > 0.0;
            let at_upper = upper[i] - x[i] <= ACTIVE_EPS && g[i] < 0.0;
            if at_lower || at_upper {
                d[i] = 0.0;
            }
        }

        let descent = dot(&g, &d);
        let use_steepest = !descent.is_finite() || descent >= 0.0;
        if use_steepest {
            for i in 0..n {
                d[i] = -masked_g[i] * inv_diag[i];
            }
            history.clear();
        }

        // Backtracking Armijo search along the projected path. If the
        // quasi-Newton direction fails, drop the curvature history and try
        // plain preconditioned steepest descent before declaring the iterate
        // stationary.
        let mut accepted = None;
        'attempts: for attempt in 0..2 {
            let dir: Vec<f64> = if attempt == 0 {
                d.clone()
            } else {
                if use_steepest {
                    break;
                }
                history.clear();
                masked_g
                    .iter()
                    .zip(inv_diag.iter())
                    .map(|(v, w)| -v * w)
                    .collect()
            };
            let dir_inf = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dir_inf == 0.0 {
                break;
            }
            let mut alpha = if (attempt == 1 || history.is_empty()) && dir_inf > 1.0 {
                1.0 / dir_inf
            } else {
                1.0
            };
            for _ in 0..60 {
                let mut x_new = x.clone();
                for i in 0..n {
                    x_new[i] = (x[i] + alpha * dir[i]).clamp(lower[i], upper[i]);
                }
                let step: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if step_norm == 0.0 {
                    break;
                }
                let (f_new, g_new) = value_grad(&x_new)?;
                let slope = dot(&g, &step);
                if f_new.is_finite() && slope < 0.0 && f_new <= f + ARMIJO * slope {
                    accepted = Some((x_new, f_new, g_new, step));
                    break 'attempts;
                }
                alpha *= 0.5;
            }
        }

        let Some((x_new, f_new, g_new, step)) = accepted else {
            // Both directions failed to make progress; the iterate is as
            // good as this model can make it.
            break;
        };

        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&step, &y);
        let s_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((step, y, 1.0 / sy));
        }

        x = x_new;
        f = f_new;
        g = g_new;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "non-finite objective or gradient during inner solve".into(),
            ));
        }
    }

    Ok(InnerOutcome {
        point: x,
        value: f,
        gradient: g,
        iterations,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max equality residual and inequality violation (g < 0 counts).
fn constraint_violation(h: &[f64], g: &[f64]) -> f64 {
    let eq = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ineq = g.iter().fold(0.0f64, |m, v| m.max((-v).max(0.0)));
    eq.max(ineq)
}

/// Solves the problem with an augmented Lagrangian method.
///
/// The initial point is clamped into the variable box. On `Converged` the
/// returned point satisfies the first-order KKT conditions within `tol_kkt`
/// and all constraints within `tol_feas`.
pub fn solve_nlp(
    problem: &NlpProblem,
    initial_point: &[f64],
    options: &SolveOptions,
) -> Result<NlpSolution> {
    if initial_point.len() != problem.dimension {
        return Err(Error::DimensionMismatch {
            expected: problem.dimension,
            actual: initial_point.len(),
            context: "solve_nlp initial point".into(),
        });
    }

    let n = problem.dimension;
    let m_eq = problem.eq_count();
    let m_ineq = problem.ineq_count();
    let mut x = initial_point.to_vec();
    project(&mut x, &problem.lower, &problem.upper);

    let f0 = (problem.objective)(&x);
    if !f0.is_finite() {
        return Err(Error::NumericalFailure(
            "objective non-finite at the initial point".into(),
        ));
    }

    let mut lambda = vec![0.0; m_eq];
    let mut mu = vec![0.0; m_ineq];
    let mut rho = options.initial_penalty;
    let mut inner_tol = 1e-2f64.max(options.tol_kkt);
    let mut previous_violation = f64::INFINITY;
    let mut best_violation = f64::INFINITY;
    let mut stalled = 0usize;
    let mut total_inner = 0usize;

    let mut status = SolveStatus::MaxIters;
    let mut outer_done = 0usize;
    let mut kkt = f64::INFINITY;
    let mut violation = f64::INFINITY;

    for outer in 0..options.max_outer {
        outer_done = outer + 1;

        let lambda_snapshot = lambda.clone();
        let mu_snapshot = mu.clone();
        let value_grad = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut value = (problem.objective)(z);
            let mut grad = problem.gradient_at(z, options.fd_step)?;
            if let Some(eq) = &problem.equality {
                let h = (eq.eval)(z);
                if h.len() != eq.count {
                    return Err(Error::DimensionMismatch {
                        expected: eq.count,
                        actual: h.len(),
                        context: "equality constraint output".into(),
                    });
                }
                let jac = eq.jacobian_at(z, options.fd_step)?;
                let mut w = vec![0.0; eq.count];
                for i in 0..eq.count {
                    value += lambda_snapshot[i] * h[i] + 0.5 * rho * h[i] * h[i];
                    w[i] = lambda_snapshot[i] + rho * h[i];
                }
                jac.transpose_mul_acc(&w, &mut grad);
            }
            if let Some(ineq) = &problem.inequality {
                let gvals = (ineq.eval)(z);
                if gvals.len() != ineq.count {
                    return Err(Error::DimensionMismatch {
                        expected: ineq.count,
                        actual: gvals.len(),
                        context: "inequality constraint output".into(),
                    });
                }
                let jac = ineq.jacobian_at(z, options.fd_step)?;
                let mut w = vec![0.0; ineq.count];
                for j in 0..ineq.count {
                    let shifted = mu_snapshot[j] - rho * gvals[j];
                    let active = shifted.max(0.0);
                    value += (active * active - mu_snapshot[j] * mu_snapshot[j]) / (2.0 * rho);
                    w[j] = -active;
                }
                jac.transpose_mul_acc(&w, &mut grad);
            }
            Ok((value, grad))
        };

        // Diagonal Gauss-Newton curvature of the penalty terms,
        // rho * sum_r J_ri^2 over active rows, seeds the inner solver.
        let mut h0 = vec![0.0; n];
        if let Some(eq) = &problem.equality {
            let jac = eq.jacobian_at(&x, options.fd_step)?;
            for &(_, c, v) in &jac.triplets {
                h0[c] += rho * v * v;
            }
        }
        if let Some(ineq) = &problem.inequality {
            let jac = ineq.jacobian_at(&x, options.fd_step)?;
            let gvals = (ineq.eval)(&x);
            for &(r, c, v) in &jac.triplets {
                if mu[r] - rho * gvals[r] > 0.0 {
                    h0[c] += rho * v * v;
                }
            }
        }
        let max_curv = h0.iter().fold(0.0f64, |m, v| m.max(*v));
        let floor = if max_curv > 0.0 { 1e-6 * max_curv } else { 1.0 };
        for v in h0.iter_mut() {
            *v = v.max(floor);
        }

        let inner = match minimize_box_lbfgs(
            &value_grad,
            &x,
            &problem.lower,
            &problem.upper,
            &h0,
            inner_tol,
            options.max_inner,
        ) {
            Ok(outcome) => outcome,
            Err(Error::NumericalFailure(_)) => {
                return Ok(NlpSolution {
                    objective_value: (problem.objective)(&x),
                    point: x,
                    kkt_residual: kkt,
                    constraint_violation: violation,
                    iterations: outer_done,
                    inner_iterations: total_inner,
                    status: SolveStatus::NumericalFailure,
                    multipliers_eq: lambda,
                    multipliers_ineq: mu,
                });
            }
            Err(e) => return Err(e),
        };
        x = inner.point;
        total_inner += inner.iterations;

        let h = problem
            .equality
            .as_ref()
            .map(|eq| (eq.eval)(&x))
            .unwrap_or_default();
        let g = problem
            .inequality
            .as_ref()
            .map(|ineq| (ineq.eval)(&x))
            .unwrap_or_default();
        if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        violation = constraint_violation(&h, &g);

        // First-order multiplier update.
        for i in 0..m_eq {
            lambda[i] += rho * h[i];
        }
        for j in 0..m_ineq {
            mu[j] = (mu[j] - rho * g[j]).max(0.0);
        }

        // The AL gradient at the inner optimum equals the Lagrangian
        // gradient with the updated multipliers, so reuse it.
        let mut comp: f64 = 0.0;
        for j in 0..m_ineq {
            comp = comp.max((mu[j] * g[j]).abs());
        }
        kkt = projected_gradient_norm(&x, &inner.gradient, &problem.lower, &problem.upper).max(comp);

        if std::env::var_os("QUADCRAWL_NLP_TRACE").is_some() {
            eprintln!(
                "nlp outer {outer}: rho={rho:.1e} viol={violation:.2e} kkt={kkt:.2e} inner={} f={:.6}",
                inner.iterations, inner.value
            );
        }

        if violation <= options.tol_feas && kkt <= options.tol_kkt {
            status = SolveStatus::Converged;
            break;
        }

        // Penalty schedule: grow while infeasible and not improving fast
        // enough. Once feasible the penalty freezes so the subproblem
        // conditioning stops degrading while the KKT residual settles.
        if violation > options.tol_feas && violation > 0.25 * previous_violation {
            rho = (rho * options.penalty_growth).min(options.max_penalty);
        }
        previous_violation = violation;

        if violation < 0.9 * best_violation {
            best_violation = violation;
            stalled = 0;
        } else if rho >= options.max_penalty {
            stalled += 1;
            if stalled >= options.stall_outer && violation > options.tol_feas {
                status = SolveStatus::Infeasible;
                break;
            }
        }

        inner_tol = (inner_tol * 0.2).max(options.tol_kkt * 0.9);
        let _ = inner.value;
    }

    Ok(NlpSolution {
        objective_value: (problem.objective)(&x),
        point: x,
        kkt_residual: kkt,
        constraint_violation: violation,
        iterations: outer_done,
        inner_iterations: total_inner,
        status,
        multipliers_eq: lambda,
        multipliers_ineq: mu,
    })
}

/// Central-difference Jacobian of `f` at `point`; O(step^2) accurate for
/// smooth `f`. Rejects non-finite evaluations.
pub fn numeric_jacobian<F>(f: F, point: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let base = f(point);
    let rows = base.len();
    let cols = point.len();
    let mut jac = DMatrix::zeros(rows, cols);
    let mut work = point.to_vec();
    for j in 0..cols {
        let original = work[j];
        work[j] = original + step;
        let plus = f(&work);
        work[j] = original - step;
        let minus = f(&work);
        work[j] = original;
        if plus.len() != rows || minus.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: plus.len().min(minus.len()),
                context: "numeric_jacobian callback output".into(),
            });
        }
        for i in 0..rows {
            let v = (plus[i] - minus[i]) / (2.0 * step);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "numeric_jacobian entry ({i}, {j})"
                )));
            }
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

/// First-order KKT residual at `point` for the given multipliers, laid out
/// as [equality multipliers..., inequality multipliers...].
///
/// Returns the max of the box-projected Lagrangian gradient norm and the
/// complementarity residual max_j |mu_j g_j|.
pub fn kkt_residual(problem: &NlpProblem, point: &[f64], multipliers: &[f64]) -> Result<f64> {
    if point.len() != problem.dimension {
        return Err(Error::DimensionMismatch {
            expected: problem.dimension,
            actual: point.len(),
            context: "kkt_residual point".into(),
        });
    }
    let m_eq = problem.eq_count();
    let m_ineq = problem.ineq_count();
    if multipliers.len() != m_eq + m_ineq {
        return Err(Error::DimensionMismatch {
            expected: m_eq + m_ineq,
            actual: multipliers.len(),
            context: "kkt_residual multipliers".into(),
        });
    }
    let fd = SolveOptions::default().fd_step;
    let mut grad = problem.gradient_at(point, fd)?;
    if let Some(eq) = &problem.equality {
        let jac = eq.jacobian_at(point, fd)?;
        jac.transpose_mul_acc(&multipliers[..m_eq], &mut grad);
    }
    let mut comp: f64 = 0.0;
    if let Some(ineq) = &problem.inequality {
        let jac = ineq.jacobian_at(point, fd)?;
        let mut w = vec![0.0; m_ineq];
        let gvals = (ineq.eval)(point);
        for j in 0..m_ineq {
            w[j] = -multipliers[m_eq + j];
            comp = comp.max((multipliers[m_eq + j] * gvals[j]).abs());
        }
        jac.transpose_mul_acc(&w, &mut grad);
    }
    Ok(projected_gradient_norm(point, &grad, &problem.lower, &problem.upper).max(comp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quadratic_shift_problem() -> NlpProblem {
        let mut p = NlpProblem::unconstrained(1, Box::new(|z| (z[0] - 3.0).powi(2)));
        p.objective_gradient = Some(Box::new(|z| vec![2.0 * (z[0] - 3.0)]));
        p
    }

    fn sum_constrained_problem() -> NlpProblem {
        // minimize z1^2 + z2^2 subject to z1 + z2 = 1
        let mut p = NlpProblem::unconstrained(2, Box::new(|z| z[0] * z[0] + z[1] * z[1]));
        p.objective_gradient = Some(Box::new(|z| vec![2.0 * z[0], 2.0 * z[1]]));
        p.equality = Some(
            ConstraintSet::new(1, Box::new(|z: &[f64]| vec![z[0] + z[1] - 1.0])).with_jacobian(
                Box::new(|_z: &[f64]| {
                    let mut jac = SparseJacobian::new(1, 2);
                    jac.push(0, 0, 1.0);
                    jac.push(0, 1, 1.0);
                    jac
                }),
            ),
        );
        p
    }

    #[test]
    fn unconstrained_quadratic_reaches_minimum() {
        let p = quadratic_shift_problem();
        let sol = solve_nlp(&p, &[0.0], &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_abs_diff_eq!(sol.point[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective_value, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn equality_constrained_quadratic_matches_lagrange_solution() {
        let p = sum_constrained_problem();
        let sol = solve_nlp(&p, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        // Closed form by Lagrange multipliers: (0.5, 0.5).
        assert_abs_diff_eq!(sol.point[0], 0.5, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.point[1], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn active_inequality_binds() {
        // minimize z subject to z >= 2, bounds [-10, 10]
        let mut p = NlpProblem::unconstrained(1, Box::new(|z| z[0]));
        p.objective_gradient = Some(Box::new(|_| vec![1.0]));
        p.inequality = Some(
            ConstraintSet::new(1, Box::new(|z: &[f64]| vec![z[0] - 2.0])).with_jacobian(
                Box::new(|_z: &[f64]| {
                    let mut jac = SparseJacobian::new(1, 1);
                    jac.push(0, 0, 1.0);
                    jac
                }),
            ),
        );
        p.lower = vec![-10.0];
        p.upper = vec![10.0];
        let sol = solve_nlp(&p, &[5.0], &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_abs_diff_eq!(sol.point[0], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn converged_solution_passes_independent_feasibility_check() {
        let p = sum_constrained_problem();
        let opts = SolveOptions::default();
        let sol = solve_nlp(&p, &[3.0, -1.0], &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        let h = (p.equality.as_ref().unwrap().eval)(&sol.point);
        let viol = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(viol <= opts.tol_feas, "re-evaluated violation {viol}");
        assert!(sol.constraint_violation <= opts.tol_feas);
        assert!(sol.kkt_residual <= opts.tol_kkt);
    }

    #[test]
    fn solver_is_deterministic() {
        let run = || {
            let p = sum_constrained_problem();
            solve_nlp(&p, &[4.0, 4.0], &SolveOptions::default()).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.point, b.point);
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn numerical_failure_is_reported() {
        let p = NlpProblem::unconstrained(
            1,
            Box::new(|z| if z[0] > 1.0 { f64::NAN } else { (z[0] - 3.0).powi(2) }),
        );
        // Gradient falls back to finite differences, which hit the NaN region.
        let result = solve_nlp(&p, &[0.9999999], &SolveOptions::default());
        match result {
            Err(Error::NonFinite(_)) | Err(Error::NumericalFailure(_)) => {}
            Ok(sol) => assert_eq!(sol.status, SolveStatus::NumericalFailure),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn infeasible_problem_is_detected() {
        // z <= -1 and z >= 1 cannot both hold.
        let mut p = NlpProblem::unconstrained(1, Box::new(|z| z[0] * z[0]));
        p.objective_gradient = Some(Box::new(|z| vec![2.0 * z[0]]));
        p.inequality = Some(
            ConstraintSet::new(
                2,
                Box::new(|z: &[f64]| vec![z[0] - 1.0, -z[0] - 1.0]),
            )
            .with_jacobian(Box::new(|_z: &[f64]| {
                let mut jac = SparseJacobian::new(2, 1);
                jac.push(0, 0, 1.0);
                jac.push(1, 0, -1.0);
                jac
            })),
        );
        let mut opts = SolveOptions::default();
        opts.max_outer = 40;
        let sol = solve_nlp(&p, &[0.0], &opts).unwrap();
        assert!(matches!(
            sol.status,
            SolveStatus::Infeasible | SolveStatus::MaxIters
        ));
        assert!(sol.constraint_violation > opts.tol_feas);
    }

    #[test]
    fn numeric_jacobian_recovers_linear_map() {
        let f = |z: &[f64]| vec![z[0] + 2.0 * z[1], 3.0 * z[0] + 4.0 * z[1]];
        let jac = numeric_jacobian(f, &[0.7, -0.3], 1e-6).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(jac[(0, 1)], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(jac[(1, 0)], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(jac[(1, 1)], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn numeric_jacobian_scalar_square() {
        let jac = numeric_jacobian(|z| vec![z[0] * z[0]], &[2.0], 1e-5).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 4.0, epsilon = 1e-9);
    }

    #[test]
    fn numeric_jacobian_constant_is_zero() {
        let jac = numeric_jacobian(|_| vec![7.0, -2.0], &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert_eq!(jac.amax(), 0.0);
    }

    #[test]
    fn numeric_jacobian_rejects_non_finite() {
        let result = numeric_jacobian(|z| vec![z[0].sqrt()], &[0.0], 1e-6);
        assert!(result.is_err());
    }

    #[test]
    fn kkt_residual_zero_at_unconstrained_minimum() {
        let p = quadratic_shift_problem();
        let r = kkt_residual(&p, &[3.0], &[]).unwrap();
        assert!(r <= 1e-10, "kkt residual {r}");
    }

    #[test]
    fn kkt_residual_gradient_magnitude_away_from_minimum() {
        let p = quadratic_shift_problem();
        let r = kkt_residual(&p, &[0.0], &[]).unwrap();
        assert_abs_diff_eq!(r, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn kkt_residual_vanishes_with_correct_multiplier() {
        // At (0.5, 0.5) the stationarity condition needs lambda = -1 in the
        // f + lambda * h convention.
        let p = sum_constrained_problem();
        let r = kkt_residual(&p, &[0.5, 0.5], &[-1.0]).unwrap();
        assert!(r <= 1e-8, "kkt residual {r}");
    }

    #[test]
    fn kkt_residual_rejects_dimension_mismatch() {
        let p = sum_constrained_problem();
        assert!(kkt_residual(&p, &[0.5, 0.5], &[]).is_err());
        assert!(kkt_residual(&p, &[0.5], &[-1.0]).is_err());
    }
}
