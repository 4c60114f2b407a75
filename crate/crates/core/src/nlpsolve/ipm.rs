//! Primal-dual interior-point method.
//!
//! Inequalities `c_I(x) >= 0` get slacks `c_I(x) - s = 0, s >= 0`. The slack
//! block is condensed into the Hessian, so the linear system only carries the
//! variables and the equality rows:
//!
//! ```text
//! [ W + Sx + J_I^T Ss J_I + dw I    J_E^T ] [dx ]   [ r_x ]
//! [ J_E                           -dc I   ] [dyE] = [ r_E ]
//! ```
//!
//! Steps are globalized with an l1 exact-penalty merit function, Armijo
//! backtracking and one second-order correction per iteration. The barrier
//! parameter follows the monotone Fiacco-McCormick schedule.

use std::time::Instant;

use log::{debug, info};

use super::envelope::{reverse_cuthill_mckee, EnvelopeLdl, EnvelopeMatrix};
use super::{MeritSample, Multipliers, Nlp, Solution, SolveOptions, SolveReport, SolveStatus};

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO: f64 = 1e-4;
const MAX_SOC: usize = 4;
const STALL_STEP: f64 = 1e-2;
const KAPPA_CURV: f64 = 1e-4;
const MAX_CURV_SHIFT: f64 = 1e2;
const PENALTY_RHO: f64 = 0.1;
const S_MAX: f64 = 100.0;
const PIVOT_TOL: f64 = 1e-15;
const MAX_PENALTY: f64 = 1e20;

/// Fixed sparsity bookkeeping for the condensed KKT matrix.
struct KktLayout {
    n: usize,
    ne: usize,
    /// Position of each unknown (variables then equality rows) in the ordering.
    pos: Vec<usize>,
    mat: EnvelopeMatrix,
    diag_x: Vec<usize>,
    diag_e: Vec<usize>,
    hess_slots: Vec<usize>,
    /// Slot per equality Jacobian entry, `None` for inequality entries.
    jac_eq_slots: Vec<Option<usize>>,
    /// For each inequality row: the Jacobian entry indices touching it.
    ineq_entries: Vec<Vec<usize>>,
    /// Slots for the outer products of each inequality row, row-major over pairs.
    ineq_pair_slots: Vec<Vec<usize>>,
}

impl KktLayout {
    fn new(n: usize, ne: usize, ni: usize, jac: &[(usize, usize)], hess: &[(usize, usize)]) -> Self {
        let m = ne + ni;
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut row_entries: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, &(r, c)) in jac.iter().enumerate() {
            row_cols[r].push(c);
            row_entries[r].push(k);
        }
        // variable adjacency: Hessian couplings plus cliques of each constraint row
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(r, c) in hess {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for cols in &row_cols {
            for &a in cols {
                for &b in cols {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut var_rank = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            var_rank[old] = new;
        }
        // each equality row goes right after the last of its variables
        let mut after: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for r in 0..ne {
            let key = row_cols[r].iter().map(|&c| var_rank[c] + 1).max().unwrap_or(n);
            after[key.min(n)].push(r);
        }
        let mut pos = vec![0usize; n + ne];
        let mut next = 0;
        for r in &after[0] {
            pos[n + r] = next;
            next += 1;
        }
        for (rank, &v) in perm.iter().enumerate() {
            pos[v] = next;
            next += 1;
            if rank + 1 < n {
                for r in &after[rank + 1] {
                    pos[n + r] = next;
                    next += 1;
                }
            }
        }
        for r in &after[n] {
            pos[n + r] = next;
            next += 1;
        }
        debug_assert_eq!(next, n + ne);

        let mut pattern: Vec<(usize, usize)> = Vec::new();
        for i in 0..n + ne {
            pattern.push((pos[i], pos[i]));
        }
        for &(r, c) in hess {
            pattern.push((pos[r], pos[c]));
        }
        for &(r, c) in jac {
            if r < ne {
                pattern.push((pos[n + r], pos[c]));
            }
        }
        for r in ne..m {
            for &a in &row_cols[r] {
                for &b in &row_cols[r] {
                    pattern.push((pos[a], pos[b]));
                }
            }
        }
        let mat = EnvelopeMatrix::from_pattern(n + ne, &pattern);
        let diag_x = (0..n).map(|i| mat.slot(pos[i], pos[i]).unwrap()).collect();
        let diag_e = (0..ne).map(|r| mat.slot(pos[n + r], pos[n + r]).unwrap()).collect();
        let hess_slots = hess.iter().map(|&(r, c)| mat.slot(pos[r], pos[c]).unwrap()).collect();
        let jac_eq_slots = jac
            .iter()
            .map(|&(r, c)| if r < ne { Some(mat.slot(pos[n + r], pos[c]).unwrap()) } else { None })
            .collect();
        let ineq_entries: Vec<Vec<usize>> = (ne..m).map(|r| row_entries[r].clone()).collect();
        let ineq_pair_slots = (ne..m)
            .map(|r| {
                let cols = &row_cols[r];
                let mut slots = Vec::with_capacity(cols.len() * cols.len());
                for &a in cols {
                    for &b in cols {
                        slots.push(mat.slot(pos[a], pos[b]).unwrap());
                    }
                }
                slots
            })
            .collect();
        Self { n, ne, pos, mat, diag_x, diag_e, hess_slots, jac_eq_slots, ineq_entries, ineq_pair_slots }
    }
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    v: Vec<f64>,
}

struct Evals {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dv: Vec<f64>,
}

struct Solver<'a> {
    nlp: &'a dyn Nlp,
    n: usize,
    ne: usize,
    ni: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    jac_struct: Vec<(usize, usize)>,
    hess_struct: Vec<(usize, usize)>,
    layout: KktLayout,
    scale: f64,
}

impl<'a> Solver<'a> {
    fn eval(&self, x: &[f64]) -> Evals {
        let mut grad = vec![0.0; self.n];
        self.nlp.gradient(x, &mut grad);
        grad.iter_mut().for_each(|g| *g *= self.scale);
        let mut c = vec![0.0; self.ne + self.ni];
        self.nlp.constraints(x, &mut c);
        let mut jac = vec![0.0; self.jac_struct.len()];
        self.nlp.jacobian_values(x, &mut jac);
        Evals { f: self.scale * self.nlp.objective(x), grad, c, jac }
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.ne + self.ni];
        self.nlp.constraints(x, &mut c);
        c
    }

    /// Constraint residual of the slack formulation.
    fn residual(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        let mut r = c.to_vec();
        for i in 0..self.ni {
            r[self.ne + i] -= s[i];
        }
        r
    }

    fn barrier(&self, f: f64, x: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut b = f;
        for i in 0..self.n {
            if self.has_lo[i] {
                b -= mu * (x[i] - self.lo[i]).ln();
            }
            if self.has_hi[i] {
                b -= mu * (self.hi[i] - x[i]).ln();
            }
        }
        for si in s {
            b -= mu * si.ln();
        }
        b
    }

    fn fraction_to_boundary(&self, x: &[f64], dx: &[f64], s: &[f64], ds: &[f64], tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for i in 0..self.n {
            if self.has_lo[i] && dx[i] < 0.0 {
                alpha = alpha.min(-tau * (x[i] - self.lo[i]) / dx[i]);
            }
            if self.has_hi[i] && dx[i] > 0.0 {
                alpha = alpha.min(tau * (self.hi[i] - x[i]) / dx[i]);
            }
        }
        for i in 0..self.ni {
            if ds[i] < 0.0 {
                alpha = alpha.min(-tau * s[i] / ds[i]);
            }
        }
        alpha
    }

    fn dual_fraction(&self, it: &Iterate, d: &Direction, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        let mut upd = |z: f64, dz: f64| {
            if dz < 0.0 && z > 0.0 {
                alpha = alpha.min(-tau * z / dz);
            }
        };
        for i in 0..self.n {
            if self.has_lo[i] {
                upd(it.zl[i], d.dzl[i]);
            }
            if self.has_hi[i] {
                upd(it.zu[i], d.dzu[i]);
            }
        }
        for i in 0..self.ni {
            upd(it.v[i], d.dv[i]);
        }
        alpha
    }

    /// Returns (dual infeasibility, primal infeasibility, complementarity at mu, s_d, s_c).
    fn errors(&self, it: &Iterate, ev: &Evals, mu: f64) -> (f64, f64, f64, f64, f64) {
        let mut g = ev.grad.clone();
        for (k, &(r, c)) in self.jac_struct.iter().enumerate() {
            g[c] += it.y[r] * ev.jac[k];
        }
        let mut dual: f64 = 0.0;
        for i in 0..self.n {
            dual = dual.max((g[i] - it.zl[i] + it.zu[i]).abs());
        }
        for i in 0..self.ni {
            dual = dual.max((-it.y[self.ne + i] - it.v[i]).abs());
        }
        let r = self.residual(&ev.c, &it.s);
        let primal = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut comp: f64 = 0.0;
        let mut zsum = 0.0;
        let mut nz = 0usize;
        for i in 0..self.n {
            if self.has_lo[i] {
                comp = comp.max((it.zl[i] * (it.x[i] - self.lo[i]) - mu).abs());
                zsum += it.zl[i].abs();
                nz += 1;
            }
            if self.has_hi[i] {
                comp = comp.max((it.zu[i] * (self.hi[i] - it.x[i]) - mu).abs());
                zsum += it.zu[i].abs();
                nz += 1;
            }
        }
        for i in 0..self.ni {
            comp = comp.max((it.v[i] * it.s[i] - mu).abs());
            zsum += it.v[i].abs();
            nz += 1;
        }
        let ysum: f64 = it.y.iter().map(|v| v.abs()).sum();
        let m = self.ne + self.ni;
        let sd = ((ysum + zsum) / ((m + nz).max(1) as f64)).max(S_MAX) / S_MAX;
        let sc = (zsum / (nz.max(1) as f64)).max(S_MAX) / S_MAX;
        (dual, primal, comp, sd, sc)
    }

    fn sigma(&self, it: &Iterate) -> (Vec<f64>, Vec<f64>) {
        let mut sx = vec![0.0; self.n];
        for i in 0..self.n {
            if self.has_lo[i] {
                sx[i] += it.zl[i] / (it.x[i] - self.lo[i]);
            }
            if self.has_hi[i] {
                sx[i] += it.zu[i] / (self.hi[i] - it.x[i]);
            }
        }
        let ss = (0..self.ni).map(|i| it.v[i] / it.s[i]).collect();
        (sx, ss)
    }

    fn assemble(&mut self, hess: &[f64], jac: &[f64], sx: &[f64], ss: &[f64], dw: f64, dc: f64) {
        let l = &mut self.layout;
        l.mat.clear();
        for (k, &slot) in l.hess_slots.iter().enumerate() {
            l.mat.add_at(slot, hess[k]);
        }
        for i in 0..self.n {
            l.mat.add_at(l.diag_x[i], sx[i] + dw);
        }
        for r in 0..self.ne {
            l.mat.add_at(l.diag_e[r], -dc);
        }
        for (k, slot) in l.jac_eq_slots.iter().enumerate() {
            if let Some(s) = slot {
                l.mat.add_at(*s, jac[k]);
            }
        }
        for (i, entries) in l.ineq_entries.iter().enumerate() {
            let slots = &l.ineq_pair_slots[i];
            let w = ss[i];
            let len = entries.len();
            for a in 0..len {
                for b in 0..len {
                    let (r, c) = (self.jac_struct[entries[a]].1, self.jac_struct[entries[b]].1);
                    // each unordered off-diagonal pair appears twice in the loop
                    if l.pos[r] >= l.pos[c] {
                        l.mat.add_at(slots[a * len + b], w * jac[entries[a]] * jac[entries[b]]);
                    }
                }
            }
        }
    }

    /// Solves the permuted KKT system with iterative refinement.
    fn kkt_solve(&self, fac: &EnvelopeLdl, rhs_x: &[f64], rhs_e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let dim = l.n + l.ne;
        let mut b = vec![0.0; dim];
        for i in 0..l.n {
            b[l.pos[i]] = rhs_x[i];
        }
        for r in 0..l.ne {
            b[l.pos[l.n + r]] = rhs_e[r];
        }
        let mut sol = b.clone();
        fac.solve_in_place(&mut sol);
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut ax = vec![0.0; dim];
        for _ in 0..3 {
            l.mat.mul_vec(&sol, &mut ax);
            let mut res: Vec<f64> = (0..dim).map(|i| b[i] - ax[i]).collect();
            let rn = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rn <= 1e-14 * bnorm {
                break;
            }
            fac.solve_in_place(&mut res);
            for i in 0..dim {
                sol[i] += res[i];
            }
        }
        let dx = (0..l.n).map(|i| sol[l.pos[i]]).collect();
        let dy = (0..l.ne).map(|r| sol[l.pos[l.n + r]]).collect();
        (dx, dy)
    }

    fn hess_times(&self, hess: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &(r, c)) in self.hess_struct.iter().enumerate() {
            out[r] += hess[k] * v[c];
            if r != c {
                out[c] += hess[k] * v[r];
            }
        }
        out
    }

    fn jac_ineq_times(&self, jac: &[f64], dx: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ni];
        for (k, &(r, c)) in self.jac_struct.iter().enumerate() {
            if r >= self.ne {
                out[r - self.ne] += jac[k] * dx[c];
            }
        }
        out
    }
}

fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Solves `nlp` from `x0`.
pub fn solve(nlp: &dyn Nlp, x0: &[f64], opts: &SolveOptions) -> Solution {
    solve_warm(nlp, x0, opts, None)
}

/// Solves `nlp` from `x0`, optionally warm-starting the multipliers.
pub fn solve_warm(nlp: &dyn Nlp, x0: &[f64], opts: &SolveOptions, warm: Option<&Multipliers>) -> Solution {
    let t0 = Instant::now();
    let n = nlp.n_vars();
    let ne = nlp.n_eq();
    let ni = nlp.n_ineq();
    let m = ne + ni;
    assert_eq!(x0.len(), n, "initial point has wrong length");
    let (lo, hi) = nlp.bounds();
    let has_lo: Vec<bool> = lo.iter().map(|v| v.is_finite() && *v > -1e19).collect();
    let has_hi: Vec<bool> = hi.iter().map(|v| v.is_finite() && *v < 1e19).collect();
    let jac_struct = nlp.jacobian_structure();
    let hess_struct = nlp.hessian_structure();
    let layout = KktLayout::new(n, ne, ni, &jac_struct, &hess_struct);
    debug!("kkt dimension {}, envelope entries {}", n + ne, layout.mat.nnz());
    let mut sv = Solver {
        nlp,
        n,
        ne,
        ni,
        lo,
        hi,
        has_lo,
        has_hi,
        jac_struct,
        hess_struct,
        layout,
        scale: opts.obj_scale,
    };

    let warm_scaled = warm.map(|w| Multipliers {
        y: w.y.iter().map(|v| v * opts.obj_scale).collect(),
        z_lower: w.z_lower.iter().map(|v| v * opts.obj_scale).collect(),
        z_upper: w.z_upper.iter().map(|v| v * opts.obj_scale).collect(),
    });
    let push = if warm.is_some() { 1e-9 } else { 1e-2 };

    // project the start into the interior
    let mut x = x0.to_vec();
    for i in 0..n {
        let range = if sv.has_lo[i] && sv.has_hi[i] { sv.hi[i] - sv.lo[i] } else { f64::INFINITY };
        if sv.has_lo[i] {
            let p = (push * sv.lo[i].abs().max(1.0)).min(push * range);
            x[i] = x[i].max(sv.lo[i] + p);
        }
        if sv.has_hi[i] {
            let p = (push * sv.hi[i].abs().max(1.0)).min(push * range);
            x[i] = x[i].min(sv.hi[i] - p);
        }
    }
    let c0 = sv.constraints(&x);
    let s: Vec<f64> = (0..ni).map(|i| c0[ne + i].max(push)).collect();
    let mut it = Iterate {
        x,
        s,
        y: vec![0.0; m],
        zl: (0..n).map(|i| if sv.has_lo[i] { 1.0 } else { 0.0 }).collect(),
        zu: (0..n).map(|i| if sv.has_hi[i] { 1.0 } else { 0.0 }).collect(),
        v: vec![1.0; ni],
    };
    if let Some(w) = &warm_scaled {
        if w.y.len() == m {
            it.y = w.y.clone();
            for i in 0..ni {
                it.v[i] = (-w.y[ne + i]).max(1e-12);
            }
        }
        if w.z_lower.len() == n {
            for i in 0..n {
                if sv.has_lo[i] {
                    it.zl[i] = w.z_lower[i].max(1e-12);
                }
            }
        }
        if w.z_upper.len() == n {
            for i in 0..n {
                if sv.has_hi[i] {
                    it.zu[i] = w.z_upper[i].max(1e-12);
                }
            }
        }
    }

    let mu_min = (opts.tol_opt.min(opts.tol_feas) / 10.0).max(1e-11);
    let mut mu = opts.mu_init.max(mu_min);
    let mut tau = (1.0 - mu).max(0.99);
    let mut penalty: f64 = 1e-6;
    let mut dw_last: f64 = 0.0;
    let mut best_infeas = f64::INFINITY;
    let mut stall = 0usize;
    let mut ls_failures = 0usize;
    let (mut last_ap, mut last_ad) = (0.0, 0.0);
    let mut merit_trace = Vec::new();
    let status;
    let mut iter = 0usize;

    let mut ev = sv.eval(&it.x);
    let mut hess = vec![0.0; sv.hess_struct.len()];
    loop {
        if !ev.f.is_finite() || ev.c.iter().any(|v| !v.is_finite()) || ev.grad.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::Numerical;
            break;
        }
        let (dual, primal, comp0, sd, sc) = sv.errors(&it, &ev, 0.0);
        let viol = primal_violation_slack(&sv, &ev.c, &it.x);
        if opts.verbosity >= 2 {
            info!(
                "iter {iter:4} f {:+.8e} inf_pr {primal:.2e} inf_du {:.2e} compl {:.2e} mu {mu:.1e} nu {penalty:.2e} dw {dw_last:.1e} ap {last_ap:.2e} ad {last_ad:.2e}",
                ev.f / sv.scale,
                dual / sd,
                comp0 / sc
            );
        }
        if viol <= opts.tol_feas && dual / sd <= opts.tol_opt && comp0 / sc <= opts.tol_opt {
            status = SolveStatus::Optimal;
            break;
        }
        if iter >= opts.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }
        // infeasibility: blocked short steps with no 10% improvement over the best feasibility
        if primal > opts.tol_feas {
            if primal < 0.9 * best_infeas {
                best_infeas = primal;
                stall = 0;
            } else if iter > 0 && last_ap < STALL_STEP {
                stall += 1;
                if stall >= opts.infeasible_after {
                    status = SolveStatus::Infeasible;
                    break;
                }
            }
        } else {
            best_infeas = best_infeas.min(primal);
            stall = 0;
        }

        // barrier update
        loop {
            let (d_mu, p_mu, c_mu, sd_mu, sc_mu) = sv.errors(&it, &ev, mu);
            let e_mu = (d_mu / sd_mu).max(p_mu).max(c_mu / sc_mu);
            if e_mu <= KAPPA_EPS * mu && mu > mu_min {
                mu = mu_min.max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
                tau = (1.0 - mu).max(0.99);
            } else {
                break;
            }
        }

        // Newton system
        sv.nlp.hessian_values(&it.x, sv.scale, &it.y, &mut hess);
        let (sx, ss) = sv.sigma(&it);
        let r = sv.residual(&ev.c, &it.s);
        // r_x = grad phi + J^T y
        let mut rx = ev.grad.clone();
        for i in 0..n {
            if sv.has_lo[i] {
                rx[i] -= mu / (it.x[i] - sv.lo[i]);
            }
            if sv.has_hi[i] {
                rx[i] += mu / (sv.hi[i] - it.x[i]);
            }
        }
        for (k, &(row, col)) in sv.jac_struct.iter().enumerate() {
            rx[col] += it.y[row] * ev.jac[k];
        }
        let rs: Vec<f64> = (0..ni).map(|i| -it.y[ne + i] - mu / it.s[i]).collect();
        let ri: Vec<f64> = (0..ni).map(|i| r[ne + i]).collect();
        let mut rhs_x: Vec<f64> = rx.iter().map(|v| -v).collect();
        {
            let w: Vec<f64> = (0..ni).map(|i| ss[i] * ri[i] + rs[i]).collect();
            for (k, &(row, col)) in sv.jac_struct.iter().enumerate() {
                if row >= ne {
                    rhs_x[col] -= ev.jac[k] * w[row - ne];
                }
            }
        }
        let rhs_e: Vec<f64> = (0..ne).map(|i| -r[i]).collect();

        // factorization with inertia correction
        let mut dw = 0.0;
        let mut dc = 0.0;
        let mut fac = None;
        let mut attempts = 0;
        loop {
            sv.assemble(&hess, &ev.jac, &sx, &ss, dw, dc);
            let (f, inertia) = EnvelopeLdl::factor(&sv.layout.mat, PIVOT_TOL);
            attempts += 1;
            if let Some(f) = f {
                if inertia.positive == n && inertia.negative == ne {
                    // curvature test along the computed step
                    let (dx, dy_e) = sv.kkt_solve(&f, &rhs_x, &rhs_e);
                    let wdx = sv.hess_times(&hess, &dx);
                    let jdx = sv.jac_ineq_times(&ev.jac, &dx);
                    let mut curv = 0.0;
                    let mut nrm = 0.0;
                    for i in 0..n {
                        curv += dx[i] * (wdx[i] + (sx[i] + dw) * dx[i]);
                        nrm += dx[i] * dx[i];
                    }
                    for i in 0..ni {
                        curv += ss[i] * jdx[i] * jdx[i];
                    }
                    if curv >= KAPPA_CURV * nrm || dw >= MAX_CURV_SHIFT {
                        fac = Some((f, dx, dy_e));
                        break;
                    }
                }
            } else if inertia.zero > 0 && dc == 0.0 && ne > 0 {
                dc = 1e-8 * mu.powf(0.25);
            }
            if dw == 0.0 {
                dw = if dw_last == 0.0 { 1e-4 } else { (dw_last / 3.0).max(1e-20) };
            } else {
                dw *= if dw_last == 0.0 { 100.0 } else { 8.0 };
            }
            if dw > 1e40 || attempts > 80 {
                break;
            }
        }
        let Some(fac) = fac else {
            status = SolveStatus::Numerical;
            break;
        };
        if dw > 0.0 {
            dw_last = dw;
        }

        let (fac, dx, dy_e) = fac;
        let jdx = sv.jac_ineq_times(&ev.jac, &dx);
        let ds: Vec<f64> = (0..ni).map(|i| jdx[i] + ri[i]).collect();
        let mut dy = vec![0.0; m];
        dy[..ne].copy_from_slice(&dy_e);
        for i in 0..ni {
            dy[ne + i] = ss[i] * ds[i] + rs[i];
        }
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if sv.has_lo[i] {
                let gap = it.x[i] - sv.lo[i];
                dzl[i] = (mu - it.zl[i] * gap - it.zl[i] * dx[i]) / gap;
            }
            if sv.has_hi[i] {
                let gap = sv.hi[i] - it.x[i];
                dzu[i] = (mu - it.zu[i] * gap + it.zu[i] * dx[i]) / gap;
            }
        }
        let dv: Vec<f64> = (0..ni).map(|i| (mu - it.v[i] * it.s[i] - it.v[i] * ds[i]) / it.s[i]).collect();
        let dir = Direction { dx, ds, dy, dzl, dzu, dv };

        // merit and penalty update
        let theta = l1_norm(&r);
        let phi = sv.barrier(ev.f, &it.x, &it.s, mu);
        let mut gphi = 0.0;
        for i in 0..n {
            let mut g = ev.grad[i];
            if sv.has_lo[i] {
                g -= mu / (it.x[i] - sv.lo[i]);
            }
            if sv.has_hi[i] {
                g += mu / (sv.hi[i] - it.x[i]);
            }
            gphi += g * dir.dx[i];
        }
        for i in 0..ni {
            gphi -= mu / it.s[i] * dir.ds[i];
        }
        let wdx = sv.hess_times(&hess, &dir.dx);
        let mut quad = 0.0;
        for i in 0..n {
            quad += dir.dx[i] * (wdx[i] + (sx[i] + dw) * dir.dx[i]);
        }
        for i in 0..ni {
            quad += ss[i] * dir.ds[i] * dir.ds[i];
        }
        if theta > 1e-300 {
            let needed = (gphi + 0.5 * quad.max(0.0)) / ((1.0 - PENALTY_RHO) * theta);
            if penalty < needed {
                penalty = (1.1 * needed + 1e-8).min(MAX_PENALTY);
            }
        }
        let merit0 = phi + penalty * theta;
        let slope = gphi - penalty * theta;

        let alpha_max = sv.fraction_to_boundary(&it.x, &dir.dx, &it.s, &dir.ds, tau);
        let mut alpha = alpha_max;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, f64, Evals)> = None;
        let mut tried_soc = false;
        let alpha_min = 1e-14;
        while alpha >= alpha_min {
            let xt: Vec<f64> = (0..n).map(|i| it.x[i] + alpha * dir.dx[i]).collect();
            let st: Vec<f64> = (0..ni).map(|i| it.s[i] + alpha * dir.ds[i]).collect();
            let ft = sv.scale * sv.nlp.objective(&xt);
            let ct = sv.constraints(&xt);
            let rt = sv.residual(&ct, &st);
            let theta_t = l1_norm(&rt);
            let merit_t = sv.barrier(ft, &xt, &st, mu) + penalty * theta_t;
            if merit_t.is_finite() && merit_t <= merit0 + ARMIJO * alpha * slope {
                let e = sv.eval(&xt);
                accepted = Some((xt, st, alpha, e));
                merit_trace.push(MeritSample { iter, mu, penalty, before: merit0, after: merit_t });
                break;
            }
            if !tried_soc && alpha == alpha_max {
                tried_soc = true;
                // second-order corrections on the constraint residual, accumulated
                let mut acc: Vec<f64> = rt.clone();
                let mut theta_prev = theta_t;
                for _ in 0..MAX_SOC {
                    let ri_t: Vec<f64> = (0..ni).map(|i| acc[ne + i]).collect();
                    let mut rhs_cx = vec![0.0; n];
                    for (k, &(row, col)) in sv.jac_struct.iter().enumerate() {
                        if row >= ne {
                            rhs_cx[col] -= ev.jac[k] * ss[row - ne] * ri_t[row - ne];
                        }
                    }
                    let rhs_ce: Vec<f64> = (0..ne).map(|i| -acc[i]).collect();
                    let (cx, _) = sv.kkt_solve(&fac, &rhs_cx, &rhs_ce);
                    let jcx = sv.jac_ineq_times(&ev.jac, &cx);
                    let tdx: Vec<f64> = (0..n).map(|i| alpha * dir.dx[i] + cx[i]).collect();
                    let tds: Vec<f64> = (0..ni).map(|i| alpha * dir.ds[i] + jcx[i] + ri_t[i]).collect();
                    let a_soc = sv.fraction_to_boundary(&it.x, &tdx, &it.s, &tds, tau);
                    let xs: Vec<f64> = (0..n).map(|i| it.x[i] + a_soc * tdx[i]).collect();
                    let ss_t: Vec<f64> = (0..ni).map(|i| it.s[i] + a_soc * tds[i]).collect();
                    let fs = sv.scale * sv.nlp.objective(&xs);
                    let cs = sv.constraints(&xs);
                    let rs = sv.residual(&cs, &ss_t);
                    let theta_s = l1_norm(&rs);
                    let merit_s = sv.barrier(fs, &xs, &ss_t, mu) + penalty * theta_s;
                    if merit_s.is_finite() && merit_s <= merit0 + ARMIJO * alpha * slope {
                        let e = sv.eval(&xs);
                        accepted = Some((xs, ss_t, alpha, e));
                        merit_trace.push(MeritSample { iter, mu, penalty, before: merit0, after: merit_s });
                        break;
                    }
                    if !(theta_s < 0.99 * theta_prev) {
                        break;
                    }
                    theta_prev = theta_s;
                    for i in 0..m {
                        acc[i] = a_soc * acc[i] + rs[i];
                    }
                }
                if accepted.is_some() {
                    break;
                }
            }
            alpha *= 0.5;
        }

        let (xn, sn, alpha_p, evn) = match accepted {
            Some(a) => {
                ls_failures = 0;
                a
            }
            None => {
                // an infeasible stationary point stalls here; the stall counter ends it
                if primal_violation_slack(&sv, &ev.c, &it.x) <= opts.tol_feas {
                    ls_failures += 1;
                }
                if ls_failures > 4 {
                    status = SolveStatus::Numerical;
                    break;
                }
                // take a short step to escape; merit monotonicity is not claimed for it
                let a = alpha_max * 1e-3;
                let xt: Vec<f64> = (0..n).map(|i| it.x[i] + a * dir.dx[i]).collect();
                let st: Vec<f64> = (0..ni).map(|i| it.s[i] + a * dir.ds[i]).collect();
                let e = sv.eval(&xt);
                (xt, st, a, e)
            }
        };
        let alpha_d = sv.dual_fraction(&it, &dir, tau);
        last_ap = alpha_p;
        last_ad = alpha_d;
        for i in 0..m {
            it.y[i] += alpha_p * dir.dy[i];
        }
        for i in 0..n {
            if sv.has_lo[i] {
                it.zl[i] += alpha_d * dir.dzl[i];
            }
            if sv.has_hi[i] {
                it.zu[i] += alpha_d * dir.dzu[i];
            }
        }
        for i in 0..ni {
            it.v[i] += alpha_d * dir.dv[i];
        }
        it.x = xn;
        it.s = sn;
        for i in 0..n {
            if sv.has_lo[i] {
                let gap = it.x[i] - sv.lo[i];
                it.zl[i] = it.zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
            if sv.has_hi[i] {
                let gap = sv.hi[i] - it.x[i];
                it.zu[i] = it.zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
        }
        for i in 0..ni {
            it.v[i] = it.v[i].clamp(mu / (KAPPA_SIGMA * it.s[i]), KAPPA_SIGMA * mu / it.s[i]);
        }
        ev = evn;
        iter += 1;
    }

    let (dual, _primal, comp0, sd, sc) = sv.errors(&it, &ev, 0.0);
    let feas = primal_violation_slack(&sv, &ev.c, &it.x);
    let report = SolveReport {
        status,
        iterations: iter,
        feasibility: feas,
        stationarity: dual / sd,
        complementarity: comp0 / sc,
        objective: ev.f / sv.scale,
        wall_time: t0.elapsed().as_secs_f64(),
        merit_trace,
    };
    if opts.verbosity >= 1 {
        info!(
            "{:?} after {} iterations: f = {:.10e}, feas {:.2e}, stat {:.2e}, {:.2}s",
            report.status, report.iterations, report.objective, report.feasibility, report.stationarity, report.wall_time
        );
    }
    let inv = 1.0 / sv.scale;
    let mut y = it.y.iter().map(|v| v * inv).collect::<Vec<_>>();
    // inequality multipliers follow the slack duals at the solution
    for i in 0..ni {
        y[ne + i] = -it.v[i] * inv;
    }
    Solution {
        x: it.x,
        multipliers: Multipliers {
            y,
            z_lower: it.zl.iter().map(|v| v * inv).collect(),
            z_upper: it.zu.iter().map(|v| v * inv).collect(),
        },
        report,
    }
}

fn primal_violation_slack(sv: &Solver, c: &[f64], x: &[f64]) -> f64 {
    let mut v: f64 = 0.0;
    for (i, ci) in c.iter().enumerate() {
        v = v.max(if i < sv.ne { ci.abs() } else { (-ci).max(0.0) });
    }
    for i in 0..sv.n {
        if sv.has_lo[i] {
            v = v.max(sv.lo[i] - x[i]);
        }
        if sv.has_hi[i] {
            v = v.max(x[i] - sv.hi[i]);
        }
    }
    v
}
