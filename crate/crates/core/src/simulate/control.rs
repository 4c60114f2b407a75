use serde::{Deserialize, Serialize};

use super::SimError;
use crate::autodiff::Lu;
use crate::model::{Biped, State, INPUT_MAP, NQ, NU};
use crate::transcription::GaitSolution;

/// Rows of the output selection: swing thigh, stance thigh + knee, swing knee, torso.
pub const SELECT: [[f64; NQ]; NU] = [
    [0.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
];

/// How the feedforward torque is read between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardHold {
    #[default]
    Zoh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub omega_n: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    #[serde(default)]
    pub feedforward: FeedforwardHold,
}

fn one() -> f64 {
    1.0
}

impl ControllerConfig {
    pub fn new(omega_n: f64) -> Self {
        Self { omega_n, zeta: 1.0, feedforward: FeedforwardHold::Zoh }
    }

    pub fn kp(&self) -> f64 {
        self.omega_n * self.omega_n
    }

    pub fn kd(&self) -> f64 {
        2.0 * self.zeta * self.omega_n
    }
}

/// Desired state and feedforward torque at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub q: [f64; NQ],
    pub dq: [f64; NQ],
    pub u_ff: [f64; NU],
}

/// Time-indexed view of an optimized step.
#[derive(Debug, Clone)]
pub struct Reference {
    pub h: f64,
    pub duration: f64,
    q: Vec<[f64; NQ]>,
    dq: Vec<[f64; NQ]>,
    u: Vec<[f64; NU]>,
    pub hold: FeedforwardHold,
}

impl Reference {
    pub fn new(gait: &GaitSolution, hold: FeedforwardHold) -> Result<Self, SimError> {
        let n = gait.torques.len();
        if n == 0 || gait.knots.len() != n + 1 {
            return Err(SimError::InvalidGait(format!(
                "{} knots and {} torque blocks",
                gait.knots.len(),
                n
            )));
        }
        Ok(Self {
            h: gait.problem.h,
            duration: gait.problem.h * n as f64,
            q: gait.knots.iter().map(|k| k.q).collect(),
            dq: gait.knots.iter().map(|k| k.dq).collect(),
            u: gait.torques.clone(),
            hold,
        })
    }

    pub fn intervals(&self) -> usize {
        self.u.len()
    }

    /// Knot times, used as integration breakpoints.
    pub fn knot_time(&self, k: usize) -> f64 {
        if k >= self.intervals() {
            self.duration
        } else {
            k as f64 * self.h
        }
    }

    pub fn initial_state(&self) -> State {
        State::new(self.q[0], self.dq[0])
    }

    /// Interval index for `tau`, assuming `tau` lies in `[t_k, t_{k+1})`.
    pub fn interval_at(&self, tau: f64) -> usize {
        let n = self.intervals();
        if tau <= 0.0 {
            return 0;
        }
        ((tau / self.h).floor() as usize).min(n - 1)
    }

    /// Reference at time-within-step `tau`, with the feedforward of interval `k`.
    /// Past the nominal duration the final knot is held.
    pub fn at(&self, tau: f64, k: usize) -> RefPoint {
        let n = self.intervals();
        let tau = tau.clamp(0.0, self.duration);
        let k = k.min(n - 1);
        let s = ((tau - k as f64 * self.h) / self.h).clamp(0.0, 1.0);
        let mut q = [0.0; NQ];
        let mut dq = [0.0; NQ];
        for i in 0..NQ {
            q[i] = (1.0 - s) * self.q[k][i] + s * self.q[k + 1][i];
            dq[i] = (1.0 - s) * self.dq[k][i] + s * self.dq[k + 1][i];
        }
        let u_ff = match self.hold {
            FeedforwardHold::Zoh => self.u[k],
            FeedforwardHold::Linear => {
                let next = self.u[(k + 1).min(n - 1)];
                let mut u = [0.0; NU];
                for i in 0..NU {
                    u[i] = (1.0 - s) * self.u[k][i] + s * next[i];
                }
                u
            }
        };
        RefPoint { q, dq, u_ff }
    }
}

/// Closed-loop torque and the commanded output acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PflCommand {
    pub u: [f64; NU],
    pub u_fb: [f64; NU],
    /// PD acceleration command for the selected outputs.
    pub v: [f64; NU],
}

fn select(x: &[f64; NQ]) -> [f64; NU] {
    let mut out = [0.0; NU];
    for r in 0..NU {
        for c in 0..NQ {
            out[r] += SELECT[r][c] * x[c];
        }
    }
    out
}

/// Partial feedback linearization: `u = u_ff + (S D^-1 B)^-1 (v + S D^-1 (C dq + G))`
/// with `v = -Kp S (q - q_des) - Kd S (dq - dq_des)`.
///
/// Without feedforward the selected outputs obey `S ddq = v` exactly.
pub fn pfl_torque(
    biped: &Biped,
    state: &State,
    r: &RefPoint,
    ctrl: &ControllerConfig,
) -> Result<PflCommand, SimError> {
    let mut e = [0.0; NQ];
    let mut de = [0.0; NQ];
    for i in 0..NQ {
        e[i] = state.q[i] - r.q[i];
        de[i] = state.dq[i] - r.dq[i];
    }
    let (se, sde) = (select(&e), select(&de));
    let mut v = [0.0; NU];
    for i in 0..NU {
        v[i] = -ctrl.kp() * se[i] - ctrl.kd() * sde[i];
    }

    let t = biped.dyn_terms(&state.q, &state.dq);
    let lu = Lu::factor(&t.d).map_err(|e| SimError::Singular(e.to_string()))?;
    // D^-1 B and D^-1 (C dq + G)
    let mut dinv_b = [[0.0; NU]; NQ];
    for j in 0..NU {
        let mut col = [0.0; NQ];
        for i in 0..NQ {
            col[i] = INPUT_MAP[i][j];
        }
        let x = lu.solve(&col);
        for i in 0..NQ {
            dinv_b[i][j] = x[i];
        }
    }
    let mut h = [0.0; NQ];
    for i in 0..NQ {
        h[i] = t.g[i];
        for j in 0..NQ {
            h[i] += t.c[i][j] * state.dq[j];
        }
    }
    let dinv_h = lu.solve(&h);
    let mut a = [[0.0; NU]; NU];
    for r_ in 0..NU {
        for c in 0..NU {
            for k in 0..NQ {
                a[r_][c] += SELECT[r_][k] * dinv_b[k][c];
            }
        }
    }
    let s_dinv_h = select(&dinv_h);
    let mut rhs = [0.0; NU];
    for i in 0..NU {
        rhs[i] = v[i] + s_dinv_h[i];
    }
    let u_fb = Lu::factor(&a).map_err(|e| SimError::Singular(e.to_string()))?.solve(&rhs);
    let mut u = [0.0; NU];
    for i in 0..NU {
        u[i] = r.u_ff[i] + u_fb[i];
    }
    Ok(PflCommand { u, u_fb, v })
}

/// `S ddq` for a given acceleration.
pub fn selected(ddq: &[f64; NQ]) -> [f64; NU] {
    select(ddq)
}
