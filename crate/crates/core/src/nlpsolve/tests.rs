use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type F = fn(&[f64]) -> f64;
type G = fn(&[f64], &mut [f64]);
type C = fn(&[f64], &mut [f64]);

/// Small dense test problem. Without `j` the Jacobian is differenced from `c`.
struct Dense {
    n: usize,
    ne: usize,
    ni: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    f: F,
    g: G,
    c: C,
    j: Option<G>,
}

impl Nlp for Dense {
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_eq(&self) -> usize {
        self.ne
    }
    fn n_ineq(&self) -> usize {
        self.ni
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), self.hi.clone())
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.g)(x, grad)
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        (self.c)(x, c)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let m = self.ne + self.ni;
        (0..m).flat_map(|r| (0..self.n).map(move |c| (r, c))).collect()
    }
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        if let Some(j) = self.j {
            return j(x, vals);
        }
        let m = self.ne + self.ni;
        let mut xp = x.to_vec();
        let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..self.n {
            let h = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            (self.c)(&xp, &mut cp);
            xp[j] = x[j] - h;
            (self.c)(&xp, &mut cm);
            xp[j] = x[j];
            for r in 0..m {
                vals[r * self.n + j] = (cp[r] - cm[r]) / (2.0 * h);
            }
        }
    }
}

fn tight() -> SolveOptions {
    SolveOptions { tol_feas: 1e-12, tol_opt: 1e-10, ..SolveOptions::default() }
}

fn shifted_quadratic() -> Dense {
    Dense {
        n: 1,
        ne: 0,
        ni: 1,
        lo: vec![f64::NEG_INFINITY],
        hi: vec![f64::INFINITY],
        f: |x| (x[0] - 3.0).powi(2),
        g: |x, g| g[0] = 2.0 * (x[0] - 3.0),
        c: |x, c| c[0] = x[0] - 5.0,
        j: None,
    }
}

/// min x1 x4 (x1 + x2 + x3) + x3  s.t.  x1 x2 x3 x4 >= 25,  |x|^2 = 40,  1 <= x <= 5
fn hs071() -> Dense {
    Dense {
        n: 4,
        ne: 1,
        ni: 1,
        lo: vec![1.0; 4],
        hi: vec![5.0; 4],
        f: |x| x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
        g: |x, g| {
            g[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
            g[1] = x[0] * x[3];
            g[2] = x[0] * x[3] + 1.0;
            g[3] = x[0] * (x[0] + x[1] + x[2]);
        },
        c: |x, c| {
            c[0] = x.iter().map(|v| v * v).sum::<f64>() - 40.0;
            c[1] = x[0] * x[1] * x[2] * x[3] - 25.0;
        },
        j: Some(|x, j| {
            for i in 0..4 {
                j[i] = 2.0 * x[i];
                j[4 + i] = (0..4).filter(|&k| k != i).map(|k| x[k]).product();
            }
        }),
    }
}

struct Scaled<'a>(&'a Dense, f64);

impl Nlp for Scaled<'_> {
    fn n_vars(&self) -> usize {
        self.0.n_vars()
    }
    fn n_eq(&self) -> usize {
        self.0.n_eq()
    }
    fn n_ineq(&self) -> usize {
        self.0.n_ineq()
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.0.bounds()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.1 * self.0.objective(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.0.gradient(x, grad);
        grad.iter_mut().for_each(|g| *g *= self.1);
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        self.0.constraints(x, c)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.0.jacobian_structure()
    }
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        self.0.jacobian_values(x, vals)
    }
}

#[test]
fn inequality_becomes_active() {
    let p = shifted_quadratic();
    let sol = solve(&p, &[0.0], &tight());
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 5.0).abs() < 1e-8, "{}", sol.x[0]);
    // multiplier of the active constraint: 2(x - 3) + y = 0
    assert!((sol.multipliers.y[0] + 4.0).abs() < 1e-6);
}

#[test]
fn bound_becomes_active() {
    let mut p = shifted_quadratic();
    p.ni = 0;
    p.lo = vec![5.0];
    p.c = |_, _| {};
    let sol = solve(&p, &[7.0], &tight());
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 5.0).abs() < 1e-8);
    assert!((sol.multipliers.z_lower[0] - 4.0).abs() < 1e-6);
}

#[test]
fn equality_qp_matches_closed_form() {
    // min 1/2 x^T Q x + p^T x  s.t.  A x = b
    const Q: [[f64; 3]; 3] = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
    const P: [f64; 3] = [1.0, -2.0, 0.5];
    let p = Dense {
        n: 3,
        ne: 2,
        ni: 0,
        lo: vec![f64::NEG_INFINITY; 3],
        hi: vec![f64::INFINITY; 3],
        f: |x| {
            let mut v = 0.0;
            for i in 0..3 {
                v += P[i] * x[i];
                for j in 0..3 {
                    v += 0.5 * x[i] * Q[i][j] * x[j];
                }
            }
            v
        },
        g: |x, g| {
            for i in 0..3 {
                g[i] = P[i] + (0..3).map(|j| Q[i][j] * x[j]).sum::<f64>();
            }
        },
        c: |x, c| {
            c[0] = x[0] + x[1] + x[2] - 1.0;
            c[1] = x[0] - 2.0 * x[2] - 0.5;
        },
        j: None,
    };
    let sol = solve(&p, &[0.0; 3], &tight());
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    // KKT: [Q A^T; A 0] [x; y] = [-p; b]
    let k = [
        [4.0, 1.0, 0.0, 1.0, 1.0],
        [1.0, 3.0, -1.0, 1.0, 0.0],
        [0.0, -1.0, 2.0, 1.0, -2.0],
        [1.0, 1.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, -2.0, 0.0, 0.0],
    ];
    let rhs = [-1.0, 2.0, -0.5, 1.0, 0.5];
    let exact = f64::solve(&k, &rhs).unwrap();
    for i in 0..3 {
        assert!((sol.x[i] - exact[i]).abs() < 1e-8);
    }
    for i in 0..2 {
        assert!((sol.multipliers.y[i] - exact[3 + i]).abs() < 1e-7);
    }
}

use crate::autodiff::Real;

#[test]
fn hs071_reaches_known_optimum_with_small_kkt_residuals() {
    let p = hs071();
    let sol = solve(&p, &[1.0, 5.0, 5.0, 1.0], &tight());
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    assert!((sol.report.objective - 17.014_017_289).abs() < 1e-6, "{}", sol.report.objective);
    let r = check_kkt(&p, &sol.x, &sol.multipliers);
    assert!(r.stationarity <= 1e-8, "{r:?}");
    assert!(r.primal_feasibility <= 1e-8, "{r:?}");
    assert!(r.complementarity <= 1e-8, "{r:?}");
    assert!(r.dual_sign <= 1e-8, "{r:?}");
}

#[test]
fn reported_feasibility_is_max_violation() {
    let p = hs071();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..6.0)).collect();
        let mut c = [0.0; 2];
        p.constraints(&x, &mut c);
        let mut want = c[0].abs().max((-c[1]).max(0.0));
        for v in &x {
            want = want.max(1.0 - v).max(v - 5.0);
        }
        assert_eq!(primal_violation(&p, &x), want);
        let opts = SolveOptions { max_iter: 0, ..SolveOptions::default() };
        let sol = solve(&p, &x, &opts);
        assert_eq!(sol.report.status, SolveStatus::MaxIter);
        assert_eq!(sol.report.feasibility, primal_violation(&p, &sol.x));
    }
}

#[test]
fn merit_never_increases_on_accepted_steps() {
    for (p, x0) in [(hs071(), vec![1.0, 5.0, 5.0, 1.0]), (shifted_quadratic(), vec![-4.0])] {
        let sol = solve(&p, &x0, &tight());
        assert!(!sol.report.merit_trace.is_empty());
        for s in &sol.report.merit_trace {
            assert!(s.after <= s.before, "{s:?}");
        }
    }
}

#[test]
fn warm_restart_from_optimum_is_fast() {
    let p = hs071();
    let opts = tight();
    let first = solve(&p, &[1.0, 5.0, 5.0, 1.0], &opts);
    let warm_opts = SolveOptions { mu_init: 1e-11, ..opts.clone() };
    let again = solve_warm(&p, &first.x, &warm_opts, Some(&first.multipliers));
    assert_eq!(again.report.status, SolveStatus::Optimal);
    assert!(again.report.iterations <= 5, "{}", again.report.iterations);
    for i in 0..4 {
        assert!((again.x[i] - first.x[i]).abs() < 1e-7);
    }
}

#[test]
fn objective_scaling_leaves_minimizer_unchanged() {
    let p = hs071();
    let opts = SolveOptions { tol_opt: 1e-8, tol_feas: 1e-10, ..SolveOptions::default() };
    let a = solve(&p, &[1.0, 5.0, 5.0, 1.0], &opts);
    let b = solve(&Scaled(&p, 10.0), &[1.0, 5.0, 5.0, 1.0], &opts);
    let c = solve(&p, &[1.0, 5.0, 5.0, 1.0], &SolveOptions { obj_scale: 10.0, ..opts.clone() });
    for i in 0..4 {
        assert!((a.x[i] - b.x[i]).abs() < 1e-4);
        assert!((a.x[i] - c.x[i]).abs() < 1e-4);
    }
    // multipliers come back in the unscaled problem's units
    assert!((a.multipliers.y[0] - c.multipliers.y[0]).abs() < 1e-3);
}

#[test]
fn contradictory_constraints_are_reported_infeasible() {
    let p = Dense {
        n: 1,
        ne: 0,
        ni: 2,
        lo: vec![f64::NEG_INFINITY],
        hi: vec![f64::INFINITY],
        f: |x| x[0] * x[0],
        g: |x, g| g[0] = 2.0 * x[0],
        c: |x, c| {
            c[0] = x[0] - 1.0;
            c[1] = -x[0];
        },
        j: None,
    };
    let sol = solve(&p, &[0.5], &SolveOptions::default());
    assert_eq!(sol.report.status, SolveStatus::Infeasible);
}
