//! Impulsive events: plastic foot strike and external pushes.

use serde::{Deserialize, Serialize};

use super::{Biped, ChainPoint, ModelError, State, NQ};
use crate::autodiff::Real;

/// Floating-base dimension: five joint coordinates plus the stance-foot position.
const NE: usize = NQ + 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactResult {
    /// Post-impact state with legs relabelled.
    pub state_plus: State,
    /// Impulse at the new stance foot, N*s.
    pub impulse: [f64; 2],
    pub energy_loss: f64,
    /// Velocity of the old stance foot right after impact.
    pub liftoff_velocity: [f64; 2],
}

/// Swaps stance and swing labels. Applying it twice is the identity.
pub fn relabel<T: Copy>(x: &[T; NQ]) -> [T; NQ] {
    [x[1], x[0], x[3], x[2], x[4]]
}

/// Rigid plastic impact at the swing tip, before relabelling.
///
/// Returns the post-impact joint rates, the contact impulse and the
/// post-impact velocity of the old stance foot.
pub fn impact_velocities<T: Real>(
    biped: &Biped,
    q: &[T; NQ],
    dq: &[T; NQ],
) -> Result<([T; NQ], [T; 2], [T; 2]), ModelError> {
    let d = biped.inertia(q);
    let jc = biped.com.jacobian(q);
    let jt = biped.swing_tip.jacobian(q);
    let m = biped.total_mass;

    // [De  -J^T] [dqe+]   [De dqe-]
    // [J    0  ] [ L  ] = [  0    ]
    let mut k = [[T::zero(); NE + 2]; NE + 2];
    let mut rhs = [T::zero(); NE + 2];
    for i in 0..NQ {
        for j in 0..NQ {
            k[i][j] = d[i][j];
        }
        for r in 0..2 {
            let a = jc[r][i] * m;
            k[NQ + r][i] = a;
            k[i][NQ + r] = a;
        }
    }
    for r in 0..2 {
        k[NQ + r][NQ + r] = T::cst(m);
    }
    for r in 0..2 {
        for j in 0..NQ {
            k[NE + r][j] = jt[r][j];
            k[j][NE + r] = -jt[r][j];
        }
        k[NE + r][NQ + r] = T::cst(1.0);
        k[NQ + r][NE + r] = T::cst(-1.0);
    }
    for i in 0..NE {
        let mut s = T::zero();
        for j in 0..NQ {
            s += k[i][j] * dq[j];
        }
        rhs[i] = s;
    }
    let sol = T::solve(&k, &rhs).map_err(ModelError::SingularInertia)?;
    let mut dq_plus = [T::zero(); NQ];
    dq_plus.copy_from_slice(&sol[..NQ]);
    Ok((dq_plus, [sol[NE], sol[NE + 1]], [sol[NQ], sol[NQ + 1]]))
}

/// Footstrike: plastic no-slip impact at the swing tip followed by leg relabelling.
///
/// The new stance foot becomes the origin of the post-impact frame.
pub fn impact_map(biped: &Biped, minus: &State) -> Result<ImpactResult, ModelError> {
    let (dq_plus, impulse, base_vel) = impact_velocities(biped, &minus.q, &minus.dq)?;
    if impulse[1] < 0.0 {
        return Err(ModelError::InfeasibleImpact { normal: impulse[1] });
    }
    let ke_minus = biped.kinetic_energy(&minus.q, &minus.dq);
    // post-impact kinetic energy in the floating frame
    let d = biped.inertia(&minus.q);
    let jc = biped.com.jacobian(&minus.q);
    let m = biped.total_mass;
    let mut ke_plus = 0.5 * m * (base_vel[0] * base_vel[0] + base_vel[1] * base_vel[1]);
    for i in 0..NQ {
        for j in 0..NQ {
            ke_plus += 0.5 * d[i][j] * dq_plus[i] * dq_plus[j];
        }
        for r in 0..2 {
            ke_plus += m * base_vel[r] * jc[r][i] * dq_plus[i];
        }
    }
    Ok(ImpactResult {
        state_plus: State::new(relabel(&minus.q), relabel(&dq_plus)),
        impulse,
        energy_loss: ke_minus - ke_plus,
        liftoff_velocity: base_vel,
    })
}

/// Where an external push is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushPoint {
    Hip,
    StanceKnee,
    Torso,
}

impl PushPoint {
    pub const ALL: [PushPoint; 3] = [PushPoint::Hip, PushPoint::StanceKnee, PushPoint::Torso];

    pub fn name(&self) -> &'static str {
        match self {
            PushPoint::Hip => "hip",
            PushPoint::StanceKnee => "stance_knee",
            PushPoint::Torso => "torso",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hip" => Some(PushPoint::Hip),
            "stance_knee" | "knee" => Some(PushPoint::StanceKnee),
            "torso" => Some(PushPoint::Torso),
            _ => None,
        }
    }

    /// Torso pushes act at the torso centre of mass.
    pub fn chain_point(&self, biped: &Biped) -> ChainPoint {
        match self {
            PushPoint::Hip => biped.hip,
            PushPoint::StanceKnee => biped.stance_knee,
            PushPoint::Torso => biped.link_com[super::TORSO],
        }
    }
}

/// Instantaneous velocity jump from an impulse `impulse` (N*s) at `point`,
/// with the stance foot held by the ground.
pub fn push_map(
    biped: &Biped,
    state: &State,
    point: PushPoint,
    impulse: [f64; 2],
) -> Result<State, ModelError> {
    let e = point.chain_point(biped).jacobian(&state.q);
    let d = biped.inertia(&state.q);
    let mut gen = [0.0; NQ];
    for i in 0..NQ {
        gen[i] = e[0][i] * impulse[0] + e[1][i] * impulse[1];
    }
    let delta = f64::solve(&d, &gen).map_err(ModelError::SingularInertia)?;
    let mut dq = state.dq;
    for i in 0..NQ {
        dq[i] += delta[i];
    }
    Ok(State::new(state.q, dq))
}
