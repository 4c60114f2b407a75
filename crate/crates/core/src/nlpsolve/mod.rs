//! Sparse nonlinear programming.
//!
//! Problems have the form
//!
//! ```text
//!   min f(x)   s.t.  c_E(x) = 0,  c_I(x) >= 0,  x_L <= x <= x_U
//! ```
//!
//! and are solved by a primal-dual interior-point method with an exact
//! penalty merit line search. Multipliers follow the convention
//! `L = f + y^T c - z_L^T (x - x_L) - z_U^T (x_U - x)`, so multipliers of
//! active inequalities are non-positive.

mod envelope;
mod ipm;

pub use envelope::{reverse_cuthill_mckee, EnvelopeLdl, EnvelopeMatrix, Inertia};
pub use ipm::{solve, solve_warm};

use serde::{Deserialize, Serialize};

/// Problem callbacks. Constraint rows list equalities first, then inequalities.
pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    /// Lower and upper variable bounds; infinite entries mean unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], c: &mut [f64]);
    /// `(row, col)` pairs of the constraint Jacobian.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]);

    /// Lower-triangle `(row, col)` pairs of the Lagrangian Hessian.
    /// Defaults to a dense lower triangle.
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let n = self.n_vars();
        (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
    }

    /// Hessian of `obj_factor * f + lambda^T c`, in `hessian_structure` order.
    ///
    /// The default differences the analytic Lagrangian gradient and is only
    /// meant for small problems.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        let n = self.n_vars();
        let jac = self.jacobian_structure();
        let lag_grad = |xx: &[f64]| {
            let mut g = vec![0.0; n];
            self.gradient(xx, &mut g);
            g.iter_mut().for_each(|v| *v *= obj_factor);
            let mut jv = vec![0.0; jac.len()];
            self.jacobian_values(xx, &mut jv);
            for (k, &(r, c)) in jac.iter().enumerate() {
                g[c] += lambda[r] * jv[k];
            }
            g
        };
        let mut dense = vec![vec![0.0; n]; n];
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = 1e-5 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let gp = lag_grad(&xp);
            xp[j] = x[j] - h;
            let gm = lag_grad(&xp);
            xp[j] = x[j];
            for i in 0..n {
                dense[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for (k, (r, c)) in self.hessian_structure().into_iter().enumerate() {
            vals[k] = 0.5 * (dense[r][c] + dense[c][r]);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Constraint violation tolerance (infinity norm).
    pub tol_feas: f64,
    /// Scaled stationarity and complementarity tolerance.
    pub tol_opt: f64,
    pub mu_init: f64,
    /// 0 silent, 1 summary, 2 per-iteration log.
    pub verbosity: u8,
    /// Iterations without a 10% feasibility improvement before declaring infeasibility.
    pub infeasible_after: usize,
    /// Multiplies the objective inside the solver.
    pub obj_scale: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            tol_feas: 1e-6,
            tol_opt: 1e-4,
            mu_init: 0.1,
            verbosity: 0,
            infeasible_after: 50,
            obj_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Numerical,
}

/// Multipliers in the sign convention of the module docs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub y: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
}

/// Merit value of an accepted iterate and the barrier/penalty parameters it
/// was measured with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritSample {
    pub iter: usize,
    pub mu: f64,
    pub penalty: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Infinity norm of constraint and bound violation.
    pub feasibility: f64,
    /// Scaled infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    pub complementarity: f64,
    pub objective: f64,
    #[serde(skip)]
    pub wall_time: f64,
    #[serde(skip)]
    pub merit_trace: Vec<MeritSample>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub report: SolveReport,
}

/// First-order optimality residuals of a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `||grad f + J^T y - z_L + z_U||_inf`
    pub stationarity: f64,
    pub primal_feasibility: f64,
    /// Largest product of a multiplier with its constraint slack.
    pub complementarity: f64,
    /// Largest violation of multiplier sign conditions.
    pub dual_sign: f64,
}

/// Maximum violation of equalities, inequalities and bounds.
pub fn primal_violation(nlp: &dyn Nlp, x: &[f64]) -> f64 {
    let (ne, ni) = (nlp.n_eq(), nlp.n_ineq());
    let mut c = vec![0.0; ne + ni];
    nlp.constraints(x, &mut c);
    let (lo, hi) = nlp.bounds();
    let mut v: f64 = 0.0;
    for (i, ci) in c.iter().enumerate() {
        v = v.max(if i < ne { ci.abs() } else { (-ci).max(0.0) });
    }
    for i in 0..x.len() {
        v = v.max(lo[i] - x[i]).max(x[i] - hi[i]);
    }
    v
}

/// Evaluates the KKT conditions independently of the solver's internal state.
pub fn check_kkt(nlp: &dyn Nlp, x: &[f64], mult: &Multipliers) -> KktResiduals {
    let n = nlp.n_vars();
    let (ne, ni) = (nlp.n_eq(), nlp.n_ineq());
    let m = ne + ni;
    let mut g = vec![0.0; n];
    nlp.gradient(x, &mut g);
    let jac = nlp.jacobian_structure();
    let mut jv = vec![0.0; jac.len()];
    nlp.jacobian_values(x, &mut jv);
    let y = if mult.y.len() == m { mult.y.clone() } else { vec![0.0; m] };
    let zl = if mult.z_lower.len() == n { mult.z_lower.clone() } else { vec![0.0; n] };
    let zu = if mult.z_upper.len() == n { mult.z_upper.clone() } else { vec![0.0; n] };
    for (k, &(r, c)) in jac.iter().enumerate() {
        g[c] += y[r] * jv[k];
    }
    let mut stat: f64 = 0.0;
    for i in 0..n {
        stat = stat.max((g[i] - zl[i] + zu[i]).abs());
    }
    let mut c = vec![0.0; m];
    nlp.constraints(x, &mut c);
    let (lo, hi) = nlp.bounds();
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for i in 0..n {
        if lo[i].is_finite() {
            comp = comp.max((zl[i] * (x[i] - lo[i])).abs());
        }
        if hi[i].is_finite() {
            comp = comp.max((zu[i] * (hi[i] - x[i])).abs());
        }
        sign = sign.max(-zl[i]).max(-zu[i]);
    }
    for r in ne..m {
        comp = comp.max((y[r] * c[r]).abs());
        sign = sign.max(y[r]);
    }
    KktResiduals {
        stationarity: stat,
        primal_feasibility: primal_violation(nlp, x),
        complementarity: comp,
        dual_sign: sign,
    }
}

#[cfg(test)]
mod tests;
