//! Planar five-link biped with a passive point foot.
//!
//! Coordinates: `q[0]` stance thigh relative to torso, `q[1]` swing thigh
//! relative to torso, `q[2]` stance knee, `q[3]` swing knee, `q[4]` torso
//! angle measured from the world vertical. All angles are counter-clockwise
//! positive. A link at absolute angle `th` points along `(-sin th, cos th)`;
//! legs hang down from the hip and the torso rises above it. The stance foot
//! is pinned at the origin and the ground is `y = 0`.
//!
//! Dynamics follow `D(q) ddq + C(q, dq) dq + G(q) = B u` with `C` built from
//! Christoffel symbols, all written generically over [`Real`] so the same code
//! feeds both simulation and automatic differentiation.

mod impact;

pub use impact::{impact_map, impact_velocities, push_map, relabel, ImpactResult, PushPoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Dual, Real};

/// Number of generalized coordinates.
pub const NQ: usize = 5;
/// Number of actuators (two hips, two knees).
pub const NU: usize = 4;

/// Link indices, matching the masses/lengths ordering.
pub const STANCE_THIGH: usize = 0;
pub const SWING_THIGH: usize = 1;
pub const STANCE_SHIN: usize = 2;
pub const SWING_SHIN: usize = 3;
pub const TORSO: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("inertia matrix is singular: {0}")]
    SingularInertia(AdError),
    #[error("impact is infeasible: normal impulse {normal:.6e} N*s is negative")]
    InfeasibleImpact { normal: f64 },
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),
}

/// Mass and geometry of one walker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    /// `m1..m5` in kg: stance thigh, swing thigh, stance shin, swing shin, torso.
    pub masses: [f64; NQ],
    /// `L1..L5` in m.
    pub lengths: [f64; NQ],
    /// Distance from the proximal joint to each link's centre of mass, m.
    pub coms: [f64; NQ],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl RobotParams {
    /// Rod links with the fixed link lengths and the given mass split.
    pub fn with_masses(thigh: f64, shin: f64, torso: f64) -> Self {
        let lengths = [0.4, 0.4, 0.43, 0.43, 0.77];
        let mut coms = [0.0; NQ];
        for (c, l) in coms.iter_mut().zip(lengths.iter()) {
            *c = 0.5 * l;
        }
        Self {
            masses: [thigh, thigh, shin, shin, torso],
            lengths,
            coms,
            gravity: default_gravity(),
        }
    }

    /// Mass sets 1 through 5.
    pub fn preset(set: usize) -> Option<Self> {
        let (thigh, shin, torso) = match set {
            1 => (7.0, 7.0, 42.0),
            2 => (5.0, 7.0, 46.0),
            3 => (7.0, 5.0, 46.0),
            4 => (5.0, 5.0, 50.0),
            5 => (7.0, 3.0, 50.0),
            _ => return None,
        };
        Some(Self::with_masses(thigh, shin, torso))
    }

    /// Parses `"set1"`..`"set5"` (or a bare digit).
    pub fn preset_by_name(name: &str) -> Option<Self> {
        let digits = name.trim().trim_start_matches("set");
        digits.parse::<usize>().ok().and_then(Self::preset)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for i in 0..NQ {
            if !(self.masses[i] > 0.0) || !(self.lengths[i] > 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "link {} must have positive mass and length",
                    i + 1
                )));
            }
            if !(self.coms[i] >= 0.0 && self.coms[i] <= self.lengths[i]) {
                return Err(ModelError::InvalidParams(format!(
                    "link {} com offset outside the link",
                    i + 1
                )));
            }
        }
        if !(self.gravity > 0.0) {
            return Err(ModelError::InvalidParams("gravity must be positive".into()));
        }
        Ok(())
    }

    /// Rotational inertia of each rod about its centre of mass.
    pub fn rod_inertias(&self) -> [f64; NQ] {
        let mut out = [0.0; NQ];
        for i in 0..NQ {
            out[i] = self.masses[i] * self.lengths[i] * self.lengths[i] / 12.0;
        }
        out
    }
}

/// Joint angles and rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: [f64; NQ],
    pub dq: [f64; NQ],
}

impl State {
    pub fn new(q: [f64; NQ], dq: [f64; NQ]) -> Self {
        Self { q, dq }
    }

    pub fn to_vec(&self) -> [f64; 2 * NQ] {
        let mut out = [0.0; 2 * NQ];
        out[..NQ].copy_from_slice(&self.q);
        out[NQ..].copy_from_slice(&self.dq);
        out
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let mut q = [0.0; NQ];
        let mut dq = [0.0; NQ];
        q.copy_from_slice(&x[..NQ]);
        dq.copy_from_slice(&x[NQ..2 * NQ]);
        Self { q, dq }
    }
}

/// Maps relative coordinates to the absolute angle of each link.
pub const ABS_ANGLE: [[f64; NQ]; NQ] = [
    [1.0, 0.0, 0.0, 0.0, 1.0],
    [0.0, 1.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0, 0.0, 1.0],
    [0.0, 1.0, 0.0, 1.0, 1.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
];

/// Input map: joint torques act on the four relative coordinates.
pub const INPUT_MAP: [[f64; NU]; NQ] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 0.0, 0.0],
];

#[inline]
pub fn absolute_angles<T: Real>(q: &[T; NQ]) -> [T; NQ] {
    [q[4] + q[0], q[4] + q[1], q[4] + q[0] + q[2], q[4] + q[1] + q[3], q[4]]
}

/// A body point written as `sum_j coef[j] * e(th_j)` relative to the stance foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainPoint {
    pub coef: [f64; NQ],
}

impl ChainPoint {
    pub fn position<T: Real>(&self, th: &[T; NQ]) -> [T; 2] {
        let mut p = [T::zero(), T::zero()];
        for j in 0..NQ {
            if self.coef[j] != 0.0 {
                p[0] -= th[j].sin() * self.coef[j];
                p[1] += th[j].cos() * self.coef[j];
            }
        }
        p
    }

    /// `d position / d th_j`, 2 x 5.
    pub fn jacobian_abs<T: Real>(&self, th: &[T; NQ]) -> [[T; NQ]; 2] {
        let mut j = [[T::zero(); NQ]; 2];
        for k in 0..NQ {
            if self.coef[k] != 0.0 {
                j[0][k] = -th[k].cos() * self.coef[k];
                j[1][k] = -th[k].sin() * self.coef[k];
            }
        }
        j
    }

    /// `d position / d q`, 2 x 5.
    pub fn jacobian<T: Real>(&self, q: &[T; NQ]) -> [[T; NQ]; 2] {
        let th = absolute_angles(q);
        let ja = self.jacobian_abs(&th);
        let mut j = [[T::zero(); NQ]; 2];
        for r in 0..2 {
            for c in 0..NQ {
                let mut s = T::zero();
                for k in 0..NQ {
                    if ABS_ANGLE[k][c] != 0.0 {
                        s += ja[r][k];
                    }
                }
                j[r][c] = s;
            }
        }
        j
    }

    pub fn velocity<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ]) -> [T; 2] {
        let th = absolute_angles(q);
        let dth = absolute_angles(dq);
        let mut v = [T::zero(), T::zero()];
        for j in 0..NQ {
            if self.coef[j] != 0.0 {
                v[0] -= th[j].cos() * dth[j] * self.coef[j];
                v[1] -= th[j].sin() * dth[j] * self.coef[j];
            }
        }
        v
    }

    pub fn acceleration<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ], ddq: &[T; NQ]) -> [T; 2] {
        let th = absolute_angles(q);
        let dth = absolute_angles(dq);
        let ddth = absolute_angles(ddq);
        let mut a = [T::zero(), T::zero()];
        for j in 0..NQ {
            if self.coef[j] != 0.0 {
                let (s, c) = (th[j].sin(), th[j].cos());
                let w2 = dth[j] * dth[j];
                a[0] += (s * w2 - c * ddth[j]) * self.coef[j];
                a[1] -= (c * w2 + s * ddth[j]) * self.coef[j];
            }
        }
        a
    }
}

/// Constant coefficient tables derived from [`RobotParams`].
#[derive(Debug, Clone)]
pub struct Biped {
    pub params: RobotParams,
    pub total_mass: f64,
    /// Link centre-of-mass points.
    pub link_com: [ChainPoint; NQ],
    pub com: ChainPoint,
    pub hip: ChainPoint,
    pub stance_knee: ChainPoint,
    pub swing_knee: ChainPoint,
    pub swing_tip: ChainPoint,
    pub torso_top: ChainPoint,
    /// `sum_i m_i a_ij a_ik` in absolute-angle space.
    mass_coupling: [[f64; NQ]; NQ],
    /// `sum_i m_i a_ij`.
    mass_moment: [f64; NQ],
    inertias: [f64; NQ],
}

/// Kinematic landmarks in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Points<T> {
    pub hip: [T; 2],
    pub stance_knee: [T; 2],
    pub swing_knee: [T; 2],
    pub swing_tip: [T; 2],
    pub torso_top: [T; 2],
    pub link_com: [[T; 2]; NQ],
    pub com: [T; 2],
}

/// Manipulator-equation terms.
#[derive(Debug, Clone, Copy)]
pub struct DynTerms<T> {
    pub d: [[T; NQ]; NQ],
    pub c: [[T; NQ]; NQ],
    pub g: [T; NQ],
    pub b: [[f64; NU]; NQ],
}

impl Biped {
    pub fn new(params: RobotParams) -> Self {
        let [l1, l2, l3, l4, l5] = params.lengths;
        let [c1, c2, c3, c4, c5] = params.coms;
        let pt = |coef: [f64; NQ]| ChainPoint { coef };
        // order of coefficients: stance thigh, swing thigh, stance shin, swing shin, torso
        let hip = [-l1, 0.0, -l3, 0.0, 0.0];
        let link_com = [
            pt([-(l1 - c1), 0.0, -l3, 0.0, 0.0]),
            pt([-l1, c2, -l3, 0.0, 0.0]),
            pt([0.0, 0.0, -(l3 - c3), 0.0, 0.0]),
            pt([-l1, l2, -l3, c4, 0.0]),
            pt([-l1, 0.0, -l3, 0.0, c5]),
        ];
        let total_mass = params.total_mass();
        let mut mass_coupling = [[0.0; NQ]; NQ];
        let mut mass_moment = [0.0; NQ];
        let mut com = [0.0; NQ];
        for i in 0..NQ {
            let m = params.masses[i];
            let a = link_com[i].coef;
            for j in 0..NQ {
                mass_moment[j] += m * a[j];
                com[j] += m * a[j] / total_mass;
                for k in 0..NQ {
                    mass_coupling[j][k] += m * a[j] * a[k];
                }
            }
        }
        Self {
            inertias: params.rod_inertias(),
            total_mass,
            link_com,
            com: pt(com),
            hip: pt(hip),
            stance_knee: pt([0.0, 0.0, -l3, 0.0, 0.0]),
            swing_knee: pt([-l1, l2, -l3, 0.0, 0.0]),
            swing_tip: pt([-l1, l2, -l3, l4, 0.0]),
            torso_top: pt([-l1, 0.0, -l3, 0.0, l5]),
            mass_coupling,
            mass_moment,
            params,
        }
    }

    pub fn gravity(&self) -> f64 {
        self.params.gravity
    }

    pub fn forward_kinematics<T: Real>(&self, q: &[T; NQ]) -> Points<T> {
        let th = absolute_angles(q);
        let mut link_com = [[T::zero(); 2]; NQ];
        for i in 0..NQ {
            link_com[i] = self.link_com[i].position(&th);
        }
        Points {
            hip: self.hip.position(&th),
            stance_knee: self.stance_knee.position(&th),
            swing_knee: self.swing_knee.position(&th),
            swing_tip: self.swing_tip.position(&th),
            torso_top: self.torso_top.position(&th),
            link_com,
            com: self.com.position(&th),
        }
    }

    /// Inertia matrix in absolute-angle coordinates.
    fn inertia_abs<T: Real>(&self, th: &[T; NQ]) -> [[T; NQ]; NQ] {
        let mut d = [[T::zero(); NQ]; NQ];
        for j in 0..NQ {
            d[j][j] = T::cst(self.mass_coupling[j][j] + self.inertias[j]);
            for k in 0..j {
                let v = (th[j] - th[k]).cos() * self.mass_coupling[j][k];
                d[j][k] = v;
                d[k][j] = v;
            }
        }
        d
    }

    /// Congruence transform `A^T M A` from absolute to relative coordinates.
    fn to_relative<T: Real>(m: &[[T; NQ]; NQ]) -> [[T; NQ]; NQ] {
        let mut ma = [[T::zero(); NQ]; NQ];
        for r in 0..NQ {
            for c in 0..NQ {
                let mut s = T::zero();
                for k in 0..NQ {
                    if ABS_ANGLE[k][c] != 0.0 {
                        s += m[r][k];
                    }
                }
                ma[r][c] = s;
            }
        }
        let mut out = [[T::zero(); NQ]; NQ];
        for r in 0..NQ {
            for c in 0..NQ {
                let mut s = T::zero();
                for k in 0..NQ {
                    if ABS_ANGLE[k][r] != 0.0 {
                        s += ma[k][c];
                    }
                }
                out[r][c] = s;
            }
        }
        out
    }

    fn to_relative_vec<T: Real>(v: &[T; NQ]) -> [T; NQ] {
        let mut out = [T::zero(); NQ];
        for r in 0..NQ {
            for k in 0..NQ {
                if ABS_ANGLE[k][r] != 0.0 {
                    out[r] += v[k];
                }
            }
        }
        out
    }

    pub fn inertia<T: Real>(&self, q: &[T; NQ]) -> [[T; NQ]; NQ] {
        Self::to_relative(&self.inertia_abs(&absolute_angles(q)))
    }

    /// Gravity torques `dV/dq`.
    pub fn gravity_torques<T: Real>(&self, q: &[T; NQ]) -> [T; NQ] {
        let th = absolute_angles(q);
        let g = self.params.gravity;
        let mut ga = [T::zero(); NQ];
        for j in 0..NQ {
            ga[j] = th[j].sin() * (-g * self.mass_moment[j]);
        }
        Self::to_relative_vec(&ga)
    }

    /// `C(q, dq) dq` without forming `C`.
    pub fn coriolis_times_rate<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ]) -> [T; NQ] {
        let th = absolute_angles(q);
        let w = absolute_angles(dq);
        let mut ca = [T::zero(); NQ];
        for j in 0..NQ {
            for k in 0..NQ {
                if j != k {
                    ca[j] += (th[j] - th[k]).sin() * w[k] * w[k] * self.mass_coupling[j][k];
                }
            }
        }
        Self::to_relative_vec(&ca)
    }

    pub fn dyn_terms<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ]) -> DynTerms<T> {
        let th = absolute_angles(q);
        let w = absolute_angles(dq);
        let mut ca = [[T::zero(); NQ]; NQ];
        for j in 0..NQ {
            for k in 0..NQ {
                if j != k {
                    ca[j][k] = (th[j] - th[k]).sin() * w[k] * self.mass_coupling[j][k];
                }
            }
        }
        DynTerms {
            d: self.inertia(q),
            c: Self::to_relative(&ca),
            g: self.gravity_torques(q),
            b: INPUT_MAP,
        }
    }

    /// Generalized accelerations solving the manipulator equation.
    pub fn forward_dynamics<T: Real>(
        &self,
        q: &[T; NQ],
        dq: &[T; NQ],
        u: &[T; NU],
    ) -> Result<[T; NQ], ModelError> {
        let d = self.inertia(q);
        let cdq = self.coriolis_times_rate(q, dq);
        let g = self.gravity_torques(q);
        let mut rhs = [T::zero(); NQ];
        for i in 0..NQ {
            rhs[i] = -cdq[i] - g[i];
            if i < NU {
                rhs[i] += u[i];
            }
        }
        T::solve(&d, &rhs).map_err(ModelError::SingularInertia)
    }

    /// Contact force at the stance foot from the balance of the total centre of mass.
    pub fn ground_reaction<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ], ddq: &[T; NQ]) -> [T; 2] {
        let a = self.com.acceleration(q, dq, ddq);
        let m = self.total_mass;
        [a[0] * m, (a[1] + self.params.gravity) * m]
    }

    pub fn kinetic_energy<T: Real>(&self, q: &[T; NQ], dq: &[T; NQ]) -> T {
        let d = self.inertia(q);
        let mut e = T::zero();
        for i in 0..NQ {
            for j in 0..NQ {
                e += d[i][j] * dq[i] * dq[j];
            }
        }
        e * 0.5
    }

    pub fn potential_energy<T: Real>(&self, q: &[T; NQ]) -> T {
        let th = absolute_angles(q);
        let mut v = T::zero();
        for j in 0..NQ {
            v += th[j].cos() * (self.params.gravity * self.mass_moment[j]);
        }
        v
    }

    pub fn total_energy(&self, s: &State) -> f64 {
        self.kinetic_energy(&s.q, &s.dq) + self.potential_energy(&s.q)
    }

    /// Centre-of-mass velocity, differentiating the position along `dq`.
    pub fn com_velocity(&self, s: &State) -> [f64; 2] {
        let mut qd = [Dual::<1>::constant(0.0); NQ];
        for i in 0..NQ {
            qd[i] = Dual { re: s.q[i], du: [s.dq[i]] };
        }
        let p = self.com.position(&absolute_angles(&qd));
        [p[0].du[0], p[1].du[0]]
    }

    /// Angular momentum about a world point (z component).
    pub fn angular_momentum_about(&self, s: &State, base_vel: [f64; 2], point: [f64; 2]) -> f64 {
        let th = absolute_angles(&s.q);
        let w = absolute_angles(&s.dq);
        let mut h = 0.0;
        for i in 0..NQ {
            let r = self.link_com[i].position(&th);
            let v = self.link_com[i].velocity(&s.q, &s.dq);
            let m = self.params.masses[i];
            let (rx, ry) = (r[0] - point[0], r[1] - point[1]);
            let (vx, vy) = (v[0] + base_vel[0], v[1] + base_vel[1]);
            h += m * (rx * vy - ry * vx) + self.inertias[i] * w[i];
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn set5() -> Biped {
        Biped::new(RobotParams::preset(5).unwrap())
    }

    pub(crate) fn random_state(rng: &mut ChaCha8Rng) -> State {
        let mut q = [0.0; NQ];
        let mut dq = [0.0; NQ];
        q[0] = PI + rng.gen_range(-0.8..0.8);
        q[1] = PI + rng.gen_range(-0.8..0.8);
        q[2] = rng.gen_range(-1.2..0.1);
        q[3] = rng.gen_range(-1.2..0.1);
        q[4] = rng.gen_range(-0.5..0.5);
        for d in dq.iter_mut() {
            *d = rng.gen_range(-3.0..3.0);
        }
        State { q, dq }
    }

    #[test]
    fn standing_pose_kinematics() {
        let b = set5();
        let q = [PI, PI, 0.0, 0.0, 0.0];
        let p = b.forward_kinematics(&q);
        assert!(p.hip[0].abs() < 1e-12 && (p.hip[1] - 0.83).abs() < 1e-12);
        assert!(p.swing_tip[0].abs() < 1e-12 && p.swing_tip[1].abs() < 1e-12);
        assert!(p.torso_top[0].abs() < 1e-12 && (p.torso_top[1] - 1.6).abs() < 1e-12);
        let g = b.gravity_torques(&q);
        for i in 0..4 {
            assert!(g[i].abs() < 1e-9, "g[{i}] = {}", g[i]);
        }
    }

    #[test]
    fn com_is_mass_weighted_average() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng);
        let p = b.forward_kinematics(&s.q);
        let m = b.params.masses;
        assert!((m.iter().sum::<f64>() - 70.0).abs() < 1e-12);
        for k in 0..2 {
            let avg: f64 = (0..NQ).map(|i| m[i] * p.link_com[i][k]).sum::<f64>() / 70.0;
            assert!((avg - p.com[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn inertia_symmetric_positive_definite() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let d = b.inertia(&s.q);
            for i in 0..NQ {
                for j in 0..NQ {
                    assert!((d[i][j] - d[j][i]).abs() <= 1e-12);
                }
            }
            // Cholesky succeeds
            let mut l = [[0.0; NQ]; NQ];
            for i in 0..NQ {
                for j in 0..=i {
                    let mut s = d[i][j];
                    for k in 0..j {
                        s -= l[i][k] * l[j][k];
                    }
                    if i == j {
                        assert!(s > 0.0);
                        l[i][i] = s.sqrt();
                    } else {
                        l[i][j] = s / l[j][j];
                    }
                }
            }
        }
    }

    #[test]
    fn inertia_rate_minus_twice_coriolis_is_skew() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let qd: [Dual<1>; NQ] = std::array::from_fn(|i| Dual { re: s.q[i], du: [s.dq[i]] });
            let dd = b.inertia(&qd);
            let c = b.dyn_terms(&s.q, &s.dq).c;
            for i in 0..NQ {
                for j in 0..NQ {
                    let n_ij = dd[i][j].du[0] - 2.0 * c[i][j];
                    let n_ji = dd[j][i].du[0] - 2.0 * c[j][i];
                    assert!((n_ij + n_ji).abs() <= 1e-10, "N[{i}][{j}] {n_ij} vs {n_ji}");
                }
            }
        }
    }

    #[test]
    fn forward_dynamics_satisfies_manipulator_equation() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let u = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let ddq = b.forward_dynamics(&s.q, &s.dq, &u).unwrap();
            let t = b.dyn_terms(&s.q, &s.dq);
            for i in 0..NQ {
                let mut r = t.g[i];
                for j in 0..NQ {
                    r += t.d[i][j] * ddq[j] + t.c[i][j] * s.dq[j];
                }
                for j in 0..NU {
                    r -= t.b[i][j] * u[j];
                }
                assert!(r.abs() <= 1e-10, "residual {r}");
            }
        }
    }

    #[test]
    fn static_standing_reaction_is_body_weight() {
        let b = set5();
        let q = [PI, PI, 0.0, 0.0, 0.0];
        let f = b.ground_reaction(&q, &[0.0; NQ], &[0.0; NQ]);
        assert!(f[0].abs() < 1e-12);
        assert!((f[1] - 70.0 * 9.81).abs() < 1e-9);
    }

    #[test]
    fn free_fall_acceleration_gives_zero_reaction() {
        let b = set5();
        let q = [PI + 0.2, PI - 0.3, -0.4, -0.2, 0.1];
        // least-norm ddq with J_com ddq = (0, -g) at rest
        let j = b.com.jacobian(&q);
        let mut jjt = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                jjt[r][c] = (0..NQ).map(|k| j[r][k] * j[c][k]).sum();
            }
        }
        let y = f64::solve(&jjt, &[0.0, -9.81]).unwrap();
        let mut ddq = [0.0; NQ];
        for k in 0..NQ {
            ddq[k] = j[0][k] * y[0] + j[1][k] * y[1];
        }
        let f = b.ground_reaction(&q, &[0.0; NQ], &ddq);
        assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
    }

    #[test]
    fn gravity_is_gradient_of_potential() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng);
        let grad = crate::autodiff::gradient(|q: &[Dual<5>; 5]| b.potential_energy(q), &s.q).unwrap();
        let g = b.gravity_torques(&s.q);
        for i in 0..NQ {
            assert!((grad[i] - g[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_at_rest_is_potential() {
        let b = set5();
        let q = [PI + 0.1, PI - 0.2, -0.3, -0.1, 0.05];
        let s = State::new(q, [0.0; NQ]);
        let p = b.forward_kinematics(&q);
        let v: f64 = (0..NQ).map(|i| b.params.masses[i] * 9.81 * p.link_com[i][1]).sum();
        assert!((b.total_energy(&s) - v).abs() < 1e-10);
    }

    #[test]
    fn com_velocity_matches_finite_difference() {
        let b = set5();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng);
        let v = b.com_velocity(&s);
        let h = 1e-6;
        let mut qp = s.q;
        let mut qm = s.q;
        for i in 0..NQ {
            qp[i] += h * s.dq[i];
            qm[i] -= h * s.dq[i];
        }
        let pp = b.forward_kinematics(&qp).com;
        let pm = b.forward_kinematics(&qm).com;
        for k in 0..2 {
            let fd = (pp[k] - pm[k]) / (2.0 * h);
            assert!((fd - v[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn presets_and_json_keys() {
        for set in 1..=5 {
            let p = RobotParams::preset(set).unwrap();
            assert!((p.total_mass() - 70.0).abs() < 1e-12);
            assert_eq!(p.masses[0], p.masses[1]);
            assert_eq!(p.masses[2], p.masses[3]);
            p.validate().unwrap();
        }
        assert!(RobotParams::preset(6).is_none());
        assert_eq!(RobotParams::preset_by_name("set3"), RobotParams::preset(3));
        let js = serde_json::to_value(RobotParams::preset(5).unwrap()).unwrap();
        for key in ["masses", "lengths", "coms", "gravity"] {
            assert!(js.get(key).is_some());
        }
        let bad = r#"{"masses":[1,1,1,1,1],"lengths":[1,1,1,1,1],"coms":[0.5,0.5,0.5,0.5,0.5],"mass":3}"#;
        assert!(serde_json::from_str::<RobotParams>(bad).is_err());
    }
}
