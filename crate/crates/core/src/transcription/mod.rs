//! Direct-collocation transcription of one periodic walking step.
//!
//! Decision variables are stored knot by knot: `[q_k, dq_k, u_k]` for
//! `k < N`, then `[q_N, dq_N]`. Dynamics are enforced with trapezoidal defects
//! and a zero-order hold on the torque, so `u_k` drives both endpoints of
//! interval `k`.

mod solution;

pub use solution::{GaitSolution, Knot};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{gradient, jacobian, Dual, Real};
use crate::model::{impact_velocities, relabel, Biped, ModelError, RobotParams, NQ, NU};
use crate::nlpsolve::{self, Nlp, SolveOptions};

/// Variables per knot with torques.
pub const KNOT_VARS: usize = 2 * NQ + NU;
const NX: usize = 2 * NQ;
const HESS_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TranscriptionError {
    #[error("invalid gait problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Gait problem for the transcription.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitProblem {
    /// Forward position of the swing tip at footstrike, m.
    pub stride_length: f64,
    /// Step duration, s.
    pub step_duration: f64,
    /// Knot spacing, s.
    pub h: f64,
    /// Minimum swing-tip height away from the ends of the step, m.
    pub clearance: f64,
    /// Knots at each end of the step exempt from the clearance rule.
    pub clearance_exempt_knots: usize,
    /// Symmetric torque limit, N*m.
    pub torque_bound: f64,
    /// Power regularization, (N*m*rad/s)^2.
    pub epsilon_sq: f64,
    /// Minimum normal ground reaction, N.
    pub grf_margin: f64,
    /// Lower and upper limits on both knee angles, rad.
    pub knee_bounds: [f64; 2],
}

impl Default for GaitProblem {
    fn default() -> Self {
        Self {
            stride_length: 0.6,
            step_duration: 0.6,
            h: 0.01,
            clearance: 0.02,
            clearance_exempt_knots: 5,
            torque_bound: 150.0,
            epsilon_sq: 0.01,
            grf_margin: 1.0,
            knee_bounds: [-1.5, 0.1],
        }
    }
}

impl GaitProblem {
    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        (self.step_duration / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        let bad = |m: &str| Err(TranscriptionError::InvalidProblem(m.to_string()));
        if !(self.h > 0.0 && self.step_duration > 0.0) {
            return bad("h and step_duration must be positive");
        }
        let n = self.intervals();
        if n == 0 || (n as f64 * self.h - self.step_duration).abs() > 1e-9 * self.step_duration {
            return bad("step_duration must be an integer multiple of h");
        }
        if !(self.stride_length > 0.0) {
            return bad("stride_length must be positive");
        }
        if !(self.torque_bound > 0.0) || !(self.epsilon_sq > 0.0) {
            return bad("torque_bound and epsilon_sq must be positive");
        }
        if !(self.knee_bounds[0] < self.knee_bounds[1]) {
            return bad("knee_bounds must be increasing");
        }
        if !(self.clearance >= 0.0 && self.grf_margin >= 0.0) {
            return bad("clearance and grf_margin must be non-negative");
        }
        Ok(())
    }

    /// Knots subject to the clearance rule.
    pub fn clearance_knots(&self) -> std::ops::Range<usize> {
        let n = self.intervals();
        let e = self.clearance_exempt_knots;
        if n < 2 * e {
            0..0
        } else {
            e..n - e + 1
        }
    }
}

/// Trapezoidal defects of one interval for a second-order system with
/// accelerations `fa`, `fb` at the endpoints.
pub fn trapezoid_defect<T: Real, const D: usize>(
    qa: &[T; D],
    dqa: &[T; D],
    qb: &[T; D],
    dqb: &[T; D],
    fa: &[T; D],
    fb: &[T; D],
    h: f64,
) -> ([T; D], [T; D]) {
    let mut dq = [T::zero(); D];
    let mut ddq = [T::zero(); D];
    for i in 0..D {
        dq[i] = qb[i] - qa[i] - (dqa[i] + dqb[i]) * (0.5 * h);
        ddq[i] = dqb[i] - dqa[i] - (fa[i] + fb[i]) * (0.5 * h);
    }
    (dq, ddq)
}

/// Half of one interval's regularized absolute power: torque `u_k` against
/// the rates at one endpoint, before the `h / (M g d)` normalization.
fn half_power<T: Real>(dq: &[T], u: &[T], eps_sq: f64) -> T {
    let mut p = T::zero();
    for n in 0..NU {
        p += (u[n] * dq[n]).abs_smooth(eps_sq);
    }
    p * 0.5
}

/// Discrete cost of transport of a knot trajectory: rates `dq` at `N + 1`
/// knots and zero-order-hold torques at `N` intervals.
pub fn cot_objective(dq: &[[f64; NQ]], torques: &[[f64; NU]], params: &RobotParams, prob: &GaitProblem) -> f64 {
    assert_eq!(dq.len(), torques.len() + 1, "need one more knot than torque blocks");
    let mut sum = 0.0;
    for (k, u) in torques.iter().enumerate() {
        sum += half_power(&dq[k], u, prob.epsilon_sq) + half_power(&dq[k + 1], u, prob.epsilon_sq);
    }
    sum * prob.h / cot_normalizer(params, prob)
}

fn cot_normalizer(params: &RobotParams, prob: &GaitProblem) -> f64 {
    params.total_mass() * params.gravity * prob.stride_length
}

/// Straight-legged, legs-split seed interpolated to the mirrored pose, with a
/// swing-knee bend for clearance and optional seeded jitter on interior knots.
pub fn initial_guess(params: &RobotParams, prob: &GaitProblem, jitter_seed: Option<u64>) -> Vec<f64> {
    let n = prob.intervals();
    let h = prob.h;
    let leg = params.lengths[0] + params.lengths[2];
    let lean = (0.5 * prob.stride_length / leg).clamp(-1.0, 1.0).asin();
    let start = [PI + lean, PI - lean, 0.0, 0.0, 0.0];
    let end = [PI - lean, PI + lean, 0.0, 0.0, 0.0];
    let bend = 0.6_f64.min(-prob.knee_bounds[0]);
    let mut qs: Vec<[f64; NQ]> = (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            let mut q = [0.0; NQ];
            for i in 0..NQ {
                q[i] = (1.0 - s) * start[i] + s * end[i];
            }
            q[3] -= bend * (PI * s).sin();
            q
        })
        .collect();
    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    if let Some(rng) = rng.as_mut() {
        for q in qs.iter_mut().take(n).skip(1) {
            for v in q.iter_mut() {
                *v += rng.gen_range(-0.02..0.02);
            }
        }
    }
    let mut x = vec![0.0; n * KNOT_VARS + NX];
    for k in 0..=n {
        let (a, b, span) = match k {
            0 => (0, 1, h),
            k if k == n => (n - 1, n, h),
            k => (k - 1, k + 1, 2.0 * h),
        };
        let off = k * KNOT_VARS;
        for i in 0..NQ {
            x[off + i] = qs[k][i];
            x[off + NQ + i] = (qs[b][i] - qs[a][i]) / span;
        }
    }
    if let Some(rng) = rng.as_mut() {
        for k in 1..n {
            for i in 0..NQ {
                x[k * KNOT_VARS + NQ + i] += rng.gen_range(-0.05..0.05);
            }
        }
    }
    x
}

/// Row bookkeeping for the constraint vector.
#[derive(Debug, Clone)]
struct Rows {
    n_eq: usize,
    /// First boundary equality row.
    boundary: usize,
    /// Inequality row of the descending-tip condition (global index).
    descending: usize,
    /// Global clearance row per knot.
    clearance: Vec<Option<usize>>,
    /// Global ground-reaction row per knot.
    grf: Vec<usize>,
    total: usize,
}

/// Lower-triangle Hessian slots for one group of local variables.
#[derive(Debug, Clone)]
struct HessBlock {
    slots: Vec<usize>,
}

/// The gait NLP for one walker and gait problem.
#[derive(Debug, Clone)]
pub struct GaitNlp {
    pub biped: Biped,
    pub problem: GaitProblem,
    n: usize,
    rows: Rows,
    hess_struct: Vec<(usize, usize)>,
    piece_a: Vec<HessBlock>,
    piece_b: Vec<HessBlock>,
    boundary_block: HessBlock,
    jac_struct: Vec<(usize, usize)>,
    norm: f64,
}

/// Builds the gait NLP.
pub fn build_nlp(params: &RobotParams, prob: &GaitProblem) -> Result<GaitNlp, TranscriptionError> {
    params.validate()?;
    prob.validate()?;
    GaitNlp::new(params.clone(), prob.clone())
}

/// Dynamic quantities at one knot under one torque block.
struct KnotEval<T> {
    accel: [T; NQ],
    /// Normalized normal ground reaction minus margin.
    grf: T,
    tip_height: T,
}

impl GaitNlp {
    fn new(params: RobotParams, prob: GaitProblem) -> Result<Self, TranscriptionError> {
        let n = prob.intervals();
        let n_eq = NX * n + 2 + NX;
        let boundary = NX * n;
        let descending = n_eq;
        let mut next = n_eq + 1;
        let mut clearance = vec![None; n + 1];
        for k in prob.clearance_knots() {
            clearance[k] = Some(next);
            next += 1;
        }
        let mut grf = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            grf.push(next);
            next += 1;
        }
        let rows = Rows { n_eq, boundary, descending, clearance, grf, total: next };
        let norm = cot_normalizer(&params, &prob);
        let mut nlp = Self {
            biped: Biped::new(params),
            problem: prob,
            n,
            rows,
            hess_struct: Vec::new(),
            piece_a: Vec::new(),
            piece_b: Vec::new(),
            boundary_block: HessBlock { slots: Vec::new() },
            jac_struct: Vec::new(),
            norm,
        };
        nlp.build_hessian_structure();
        let x = initial_guess(&nlp.biped.params, &nlp.problem, None);
        let mut pattern = Vec::new();
        nlp.jacobian_entries(&x, &mut |r, c, _| pattern.push((r, c)))?;
        nlp.jac_struct = pattern;
        Ok(nlp)
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn knot_offset(&self, k: usize) -> usize {
        k * KNOT_VARS
    }

    fn piece_vars(&self, k: usize, endpoint_b: bool) -> Vec<usize> {
        let knot = if endpoint_b { k + 1 } else { k };
        let mut v: Vec<usize> = (0..NX).map(|i| knot * KNOT_VARS + i).collect();
        v.extend((0..NU).map(|i| k * KNOT_VARS + NX + i));
        v
    }

    fn boundary_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..NX).collect();
        v.extend((0..NX).map(|i| self.n * KNOT_VARS + i));
        v
    }

    fn build_hessian_structure(&mut self) {
        let mut map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let block = |vars: Vec<usize>, map: &mut BTreeMap<(usize, usize), usize>| {
            let mut slots = Vec::new();
            for a in 0..vars.len() {
                for b in 0..=a {
                    let (r, c) = if vars[a] >= vars[b] { (vars[a], vars[b]) } else { (vars[b], vars[a]) };
                    let len = map.len();
                    slots.push(*map.entry((r, c)).or_insert(len));
                }
            }
            HessBlock { slots }
        };
        let mut pa = Vec::with_capacity(self.n);
        let mut pb = Vec::with_capacity(self.n);
        for k in 0..self.n {
            pa.push(block(self.piece_vars(k, false), &mut map));
            pb.push(block(self.piece_vars(k, true), &mut map));
        }
        let bb = block(self.boundary_vars(), &mut map);
        let mut entries: Vec<((usize, usize), usize)> = map.into_iter().collect();
        entries.sort_by_key(|e| e.1);
        self.hess_struct = entries.into_iter().map(|e| e.0).collect();
        self.piece_a = pa;
        self.piece_b = pb;
        self.boundary_block = bb;
    }

    /// Accelerations, normalized ground reaction and tip height at one knot.
    fn knot_eval<T: Real>(&self, z: &[T]) -> Result<KnotEval<T>, ModelError> {
        let mut q = [T::zero(); NQ];
        let mut dq = [T::zero(); NQ];
        let mut u = [T::zero(); NU];
        q.copy_from_slice(&z[..NQ]);
        dq.copy_from_slice(&z[NQ..NX]);
        u.copy_from_slice(&z[NX..NX + NU]);
        let accel = self.biped.forward_dynamics(&q, &dq, &u)?;
        let f = self.biped.ground_reaction(&q, &dq, &accel);
        let weight = self.biped.total_mass * self.biped.gravity();
        let grf = (f[1] - self.problem.grf_margin) / weight;
        let tip = self.biped.swing_tip.position(&crate::model::absolute_angles(&q));
        Ok(KnotEval { accel, grf, tip_height: tip[1] - self.problem.clearance })
    }

    /// Boundary rows: tip height, tip stride, periodicity (10), then the
    /// descending-tip inequality.
    fn boundary_eval<T: Real>(&self, z: &[T]) -> Result<[T; 2 + NX + 1], ModelError> {
        let mut q0 = [T::zero(); NQ];
        let mut dq0 = [T::zero(); NQ];
        let mut q = [T::zero(); NQ];
        let mut dq = [T::zero(); NQ];
        q0.copy_from_slice(&z[..NQ]);
        dq0.copy_from_slice(&z[NQ..NX]);
        q.copy_from_slice(&z[NX..NX + NQ]);
        dq.copy_from_slice(&z[NX + NQ..2 * NX]);
        let tip = self.biped.swing_tip.position(&crate::model::absolute_angles(&q));
        let vel = self.biped.swing_tip.velocity(&q, &dq);
        let (dq_plus, _, _) = impact_velocities(&self.biped, &q, &dq)?;
        let q_plus = relabel(&q);
        let dq_plus = relabel(&dq_plus);
        let mut out = [T::zero(); 2 + NX + 1];
        out[0] = tip[1];
        out[1] = tip[0] - self.problem.stride_length;
        for i in 0..NQ {
            out[2 + i] = q_plus[i] - q0[i];
            out[2 + NQ + i] = dq_plus[i] - dq0[i];
        }
        out[2 + NX] = -vel[1];
        Ok(out)
    }

    fn piece_input(&self, x: &[f64], k: usize, endpoint_b: bool) -> [f64; KNOT_VARS] {
        let mut z = [0.0; KNOT_VARS];
        for (i, &v) in self.piece_vars(k, endpoint_b).iter().enumerate() {
            z[i] = x[v];
        }
        z
    }

    fn boundary_input(&self, x: &[f64]) -> [f64; 2 * NX] {
        let mut z = [0.0; 2 * NX];
        for (i, &v) in self.boundary_vars().iter().enumerate() {
            z[i] = x[v];
        }
        z
    }

    /// Emits `(row, col, value)` for every structural Jacobian entry, in a
    /// fixed order independent of the values.
    fn jacobian_entries(
        &self,
        x: &[f64],
        emit: &mut dyn FnMut(usize, usize, f64),
    ) -> Result<(), ModelError> {
        let n = self.n;
        let h = self.problem.h;
        for k in 0..n {
            let za = self.piece_input(x, k, false);
            let zb = self.piece_input(x, k, true);
            let ja = self.knot_jacobian(&za)?;
            let jb = self.knot_jacobian(&zb)?;
            let xa = k * KNOT_VARS;
            let xb = (k + 1) * KNOT_VARS;
            let ua = xa + NX;
            for i in 0..NQ {
                let r = NX * k + i;
                emit(r, xa + i, -1.0);
                emit(r, xa + NQ + i, -0.5 * h);
                emit(r, xb + i, 1.0);
                emit(r, xb + NQ + i, -0.5 * h);
            }
            for i in 0..NQ {
                let r = NX * k + NQ + i;
                for j in 0..NX {
                    let d = if j == NQ + i { -1.0 } else { 0.0 };
                    emit(r, xa + j, d - 0.5 * h * ja[i][j]);
                }
                for j in 0..NU {
                    emit(r, ua + j, -0.5 * h * (ja[i][NX + j] + jb[i][NX + j]));
                }
                for j in 0..NX {
                    let d = if j == NQ + i { 1.0 } else { 0.0 };
                    emit(r, xb + j, d - 0.5 * h * jb[i][j]);
                }
            }
            self.emit_knot_rows(k, xa, ua, &ja, emit);
            if k + 1 == n {
                self.emit_knot_rows(n, xb, ua, &jb, emit);
            }
        }
        let zbd = self.boundary_input(x);
        let jbd = jacobian(
            |z: &[Dual<{ 2 * NX }>; 2 * NX]| match self.boundary_eval(z) {
                Ok(v) => v.to_vec(),
                Err(_) => vec![Dual::constant(f64::NAN); 2 + NX + 1],
            },
            &zbd,
        )
        .map_err(ModelError::SingularInertia)?;
        let vars = self.boundary_vars();
        for r in 0..2 + NX {
            for (j, &v) in vars.iter().enumerate() {
                emit(self.rows.boundary + r, v, jbd[r][j]);
            }
        }
        for (j, &v) in vars.iter().enumerate().skip(NX) {
            emit(self.rows.descending, v, jbd[2 + NX][j]);
        }
        Ok(())
    }

    /// Ground-reaction and clearance rows of knot `k`, whose state starts at
    /// `xk` and whose torque block starts at `uk`.
    fn emit_knot_rows(
        &self,
        k: usize,
        xk: usize,
        uk: usize,
        jac: &[[f64; KNOT_VARS]],
        emit: &mut dyn FnMut(usize, usize, f64),
    ) {
        let r = self.rows.grf[k];
        for j in 0..NX {
            emit(r, xk + j, jac[NQ][j]);
        }
        for j in 0..NU {
            emit(r, uk + j, jac[NQ][NX + j]);
        }
        if let Some(r) = self.rows.clearance[k] {
            for j in 0..NQ {
                emit(r, xk + j, jac[NQ + 1][j]);
            }
        }
    }

    /// Rows: accelerations (5), ground reaction, tip height.
    fn knot_jacobian(&self, z: &[f64; KNOT_VARS]) -> Result<Vec<[f64; KNOT_VARS]>, ModelError> {
        jacobian(
            |z: &[Dual<KNOT_VARS>; KNOT_VARS]| match self.knot_eval(z) {
                Ok(e) => {
                    let mut v = e.accel.to_vec();
                    v.push(e.grf);
                    v.push(e.tip_height);
                    v
                }
                Err(_) => vec![Dual::constant(f64::NAN); NQ + 2],
            },
            z,
        )
        .map_err(ModelError::SingularInertia)
    }

    /// Objective and knot constraints of one half interval, weighted by the
    /// multipliers; its Hessian is the interval's share of the Lagrangian Hessian.
    fn piece_lagrangian<T: Real>(&self, z: &[T], k: usize, endpoint_b: bool, sigma: f64, y: &[f64]) -> T {
        let h = self.problem.h;
        let knot = if endpoint_b { k + 1 } else { k };
        let mut l = half_power(&z[NQ..NX], &z[NX..], self.problem.epsilon_sq) * (sigma * h / self.norm);
        let e = match self.knot_eval(z) {
            Ok(e) => e,
            Err(_) => return T::cst(f64::NAN),
        };
        for i in 0..NQ {
            l += e.accel[i] * (-0.5 * h * y[NX * k + NQ + i]);
        }
        let owns_knot_rows = !endpoint_b || knot == self.n;
        if owns_knot_rows {
            l += e.grf * y[self.rows.grf[knot]];
            if let Some(r) = self.rows.clearance[knot] {
                l += e.tip_height * y[r];
            }
        }
        l
    }

    fn boundary_lagrangian<T: Real>(&self, z: &[T], y: &[f64]) -> T {
        match self.boundary_eval(z) {
            Ok(v) => {
                let mut l = T::zero();
                for r in 0..2 + NX {
                    l += v[r] * y[self.rows.boundary + r];
                }
                l + v[2 + NX] * y[self.rows.descending]
            }
            Err(_) => T::cst(f64::NAN),
        }
    }

    /// Adds the symmetric finite-difference Hessian of an element function,
    /// differenced from its exact gradient.
    fn add_fd_hessian<const M: usize>(
        z: &[f64; M],
        grad: impl Fn(&[f64; M]) -> [f64; M],
        block: &HessBlock,
        vals: &mut [f64],
    ) {
        let mut cols = [[0.0; M]; M];
        let mut zp = *z;
        for j in 0..M {
            let step = HESS_STEP * z[j].abs().max(1.0);
            zp[j] = z[j] + step;
            let gp = grad(&zp);
            zp[j] = z[j] - step;
            let gm = grad(&zp);
            zp[j] = z[j];
            for i in 0..M {
                cols[j][i] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let mut s = 0;
        for a in 0..M {
            for b in 0..=a {
                vals[block.slots[s]] += 0.5 * (cols[a][b] + cols[b][a]);
                s += 1;
            }
        }
    }

    /// Evaluates the constraint vector; errors map to NaN rows.
    fn eval_constraints(&self, x: &[f64], c: &mut [f64]) {
        let n = self.n;
        let h = self.problem.h;
        let split = |z: &[f64; KNOT_VARS]| -> ([f64; NQ], [f64; NQ]) {
            let mut q = [0.0; NQ];
            let mut dq = [0.0; NQ];
            q.copy_from_slice(&z[..NQ]);
            dq.copy_from_slice(&z[NQ..NX]);
            (q, dq)
        };
        let nan = || KnotEval { accel: [f64::NAN; NQ], grf: f64::NAN, tip_height: f64::NAN };
        let mut prev_b: Option<KnotEval<f64>> = None;
        for k in 0..n {
            let za = self.piece_input(x, k, false);
            let zb = self.piece_input(x, k, true);
            let ea = self.knot_eval(&za).unwrap_or_else(|_| nan());
            let eb = self.knot_eval(&zb).unwrap_or_else(|_| nan());
            let (qa, dqa) = split(&za);
            let (qb, dqb) = split(&zb);
            let (d1, d2) = trapezoid_defect(&qa, &dqa, &qb, &dqb, &ea.accel, &eb.accel, h);
            c[NX * k..NX * k + NQ].copy_from_slice(&d1);
            c[NX * k + NQ..NX * (k + 1)].copy_from_slice(&d2);
            c[self.rows.grf[k]] = ea.grf;
            if let Some(r) = self.rows.clearance[k] {
                c[r] = ea.tip_height;
            }
            prev_b = Some(eb);
        }
        if let Some(eb) = prev_b {
            c[self.rows.grf[n]] = eb.grf;
            if let Some(r) = self.rows.clearance[n] {
                c[r] = eb.tip_height;
            }
        }
        let zbd = self.boundary_input(x);
        match self.boundary_eval(&zbd) {
            Ok(v) => {
                c[self.rows.boundary..self.rows.boundary + 2 + NX].copy_from_slice(&v[..2 + NX]);
                c[self.rows.descending] = v[2 + NX];
            }
            Err(_) => {
                c[self.rows.boundary..self.rows.boundary + 2 + NX].iter_mut().for_each(|v| *v = f64::NAN);
                c[self.rows.descending] = f64::NAN;
            }
        }
    }

    /// Largest absolute defect residual.
    pub fn defect_residual(&self, x: &[f64]) -> f64 {
        let mut c = vec![0.0; self.rows.total];
        self.eval_constraints(x, &mut c);
        c[..NX * self.n].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Residuals of the boundary rows: tip height, stride, periodicity (10), descending tip.
    pub fn boundary_residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.rows.total];
        self.eval_constraints(x, &mut c);
        let mut out = c[self.rows.boundary..self.rows.boundary + 2 + NX].to_vec();
        out.push(c[self.rows.descending]);
        out
    }

    /// Splits a variable vector into knot states and torque blocks.
    pub fn unpack(&self, x: &[f64]) -> (Vec<[f64; NQ]>, Vec<[f64; NQ]>, Vec<[f64; NU]>) {
        let mut qs = Vec::with_capacity(self.n + 1);
        let mut dqs = Vec::with_capacity(self.n + 1);
        let mut us = Vec::with_capacity(self.n);
        for k in 0..=self.n {
            let off = k * KNOT_VARS;
            let mut q = [0.0; NQ];
            let mut dq = [0.0; NQ];
            q.copy_from_slice(&x[off..off + NQ]);
            dq.copy_from_slice(&x[off + NQ..off + NX]);
            qs.push(q);
            dqs.push(dq);
            if k < self.n {
                let mut u = [0.0; NU];
                u.copy_from_slice(&x[off + NX..off + KNOT_VARS]);
                us.push(u);
            }
        }
        (qs, dqs, us)
    }
}

impl Nlp for GaitNlp {
    fn n_vars(&self) -> usize {
        self.n * KNOT_VARS + NX
    }

    fn n_eq(&self) -> usize {
        self.rows.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.rows.total - self.rows.n_eq
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nv = self.n_vars();
        let mut lo = vec![f64::NEG_INFINITY; nv];
        let mut hi = vec![f64::INFINITY; nv];
        let [klo, khi] = self.problem.knee_bounds;
        for k in 0..=self.n {
            let off = k * KNOT_VARS;
            for i in [2, 3] {
                lo[off + i] = klo;
                hi[off + i] = khi;
            }
            if k < self.n {
                for i in 0..NU {
                    lo[off + NX + i] = -self.problem.torque_bound;
                    hi[off + NX + i] = self.problem.torque_bound;
                }
            }
        }
        (lo, hi)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let (_, dqs, us) = self.unpack(x);
        cot_objective(&dqs, &us, &self.biped.params, &self.problem)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = self.problem.h / self.norm;
        let eps = self.problem.epsilon_sq;
        for k in 0..self.n {
            for endpoint_b in [false, true] {
                let z = self.piece_input(x, k, endpoint_b);
                let mut w = [0.0; NQ + NU];
                w[..NQ].copy_from_slice(&z[NQ..NX]);
                w[NQ..].copy_from_slice(&z[NX..]);
                let g = gradient(|v: &[Dual<{ NQ + NU }>; NQ + NU]| half_power(&v[..NQ], &v[NQ..], eps) * scale, &w)
                    .unwrap_or([f64::NAN; NQ + NU]);
                let vars = self.piece_vars(k, endpoint_b);
                for i in 0..NQ {
                    grad[vars[NQ + i]] += g[i];
                }
                for i in 0..NU {
                    grad[vars[NX + i]] += g[NQ + i];
                }
            }
        }
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        self.eval_constraints(x, c);
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.jac_struct.clone()
    }

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        let mut i = 0;
        let res = self.jacobian_entries(x, &mut |_, _, v| {
            vals[i] = v;
            i += 1;
        });
        if res.is_err() {
            vals.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hess_struct.clone()
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        vals.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.n {
            for endpoint_b in [false, true] {
                let z = self.piece_input(x, k, endpoint_b);
                let block = if endpoint_b { &self.piece_b[k] } else { &self.piece_a[k] };
                let grad = |zz: &[f64; KNOT_VARS]| {
                    gradient(
                        |v: &[Dual<KNOT_VARS>; KNOT_VARS]| self.piece_lagrangian(v, k, endpoint_b, obj_factor, lambda),
                        zz,
                    )
                    .unwrap_or([f64::NAN; KNOT_VARS])
                };
                Self::add_fd_hessian(&z, grad, block, vals);
            }
        }
        let z = self.boundary_input(x);
        let grad = |zz: &[f64; 2 * NX]| {
            gradient(|v: &[Dual<{ 2 * NX }>; 2 * NX]| self.boundary_lagrangian(v, lambda), zz)
                .unwrap_or([f64::NAN; 2 * NX])
        };
        Self::add_fd_hessian(&z, grad, &self.boundary_block, vals);
    }
}

/// Solver settings used for gait problems unless overridden.
pub fn default_solve_options() -> SolveOptions {
    SolveOptions { obj_scale: 10.0, ..SolveOptions::default() }
}

/// Transcribes and solves one gait from `guess` (or the default seed).
pub fn optimize(
    params: &RobotParams,
    prob: &GaitProblem,
    opts: &SolveOptions,
    guess: Option<&[f64]>,
) -> Result<GaitSolution, TranscriptionError> {
    let nlp = build_nlp(params, prob)?;
    let x0 = match guess {
        Some(g) => g.to_vec(),
        None => initial_guess(params, prob, None),
    };
    if x0.len() != nlp.n_vars() {
        return Err(TranscriptionError::InvalidProblem(format!(
            "initial guess has {} entries, expected {}",
            x0.len(),
            nlp.n_vars()
        )));
    }
    let sol = nlpsolve::solve(&nlp, &x0, opts);
    Ok(GaitSolution::from_vector(&nlp, &sol.x, sol.report))
}
