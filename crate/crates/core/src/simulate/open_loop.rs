use super::dopri::{Control, Dopri5, IntegrationError, SegmentEnd, Tolerance};
use super::SimError;
use crate::autodiff::Real;
use crate::model::{Biped, RobotParams, State, NQ, NU};

const NY: usize = 2 * NQ + 1;

/// Result of an open-loop integration without ground contact events.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoop {
    pub final_state: State,
    /// `int sum |u_i dq_i| dt`, J.
    pub work: f64,
    /// Total energy at the end of every accepted integrator step.
    pub energy: Vec<(f64, f64)>,
}

/// Integrates the stance dynamics under a held torque schedule.
///
/// `torques[k]` acts on `[k h, (k+1) h)`; the last block is held past the end
/// of the schedule and an empty schedule means zero torque. Impacts are not
/// detected.
pub fn open_loop(
    params: &RobotParams,
    start: &State,
    torques: &[[f64; NU]],
    h: f64,
    duration: f64,
    tol: Tolerance,
) -> Result<OpenLoop, SimError> {
    params.validate()?;
    if !torques.is_empty() && !(h > 0.0) {
        return Err(SimError::InvalidConfig("torque hold interval must be positive".into()));
    }
    let biped = Biped::new(params.clone());
    let mut cuts: Vec<f64> = (1..torques.len()).map(|k| k as f64 * h).filter(|&c| c < duration).collect();
    cuts.push(duration);

    let mut y = [0.0; NY];
    y[..NQ].copy_from_slice(&start.q);
    y[NQ..2 * NQ].copy_from_slice(&start.dq);
    let mut energy = vec![(0.0, biped.total_energy(start))];
    let mut integ = Dopri5::new(tol);
    let mut t = 0.0;
    for (k, &cut) in cuts.iter().enumerate() {
        let u = torques.get(k).copied().unwrap_or([0.0; NU]);
        let f = |_t: f64, yy: &[f64; NY]| -> Result<[f64; NY], SimError> {
            let s = State::from_slice(&yy[..2 * NQ]);
            let d = biped.dyn_terms(&s.q, &s.dq);
            let mut rhs = [0.0; NQ];
            for i in 0..NQ {
                rhs[i] = -d.g[i];
                for j in 0..NQ {
                    rhs[i] -= d.c[i][j] * s.dq[j];
                }
                if i < NU {
                    rhs[i] += u[i];
                }
            }
            let ddq = f64::solve(&d.d, &rhs).map_err(|e| SimError::Singular(e.to_string()))?;
            let mut out = [0.0; NY];
            out[..NQ].copy_from_slice(&s.dq);
            out[NQ..2 * NQ].copy_from_slice(&ddq);
            out[2 * NQ] = (0..NU).map(|i| (u[i] * s.dq[i]).abs()).sum();
            Ok(out)
        };
        let end = integ
            .integrate(f, t, y, cut, None, |st| {
                energy.push((st.t1, biped.total_energy(&State::from_slice(&st.y1[..2 * NQ]))));
                Control::Continue
            })
            .map_err(|e| match e {
                IntegrationError::Rhs(e) => e,
                IntegrationError::StepTooSmall { t, h } => {
                    SimError::Integration(format!("step size {h:.3e} too small at t = {t}"))
                }
                IntegrationError::TooManySteps { t } => SimError::Integration(format!("step budget exhausted at t = {t}")),
            })?;
        match end {
            SegmentEnd::Reached { y: yr } => y = yr,
            _ => unreachable!("no event or stop was requested"),
        }
        t = cut;
    }
    Ok(OpenLoop { final_state: State::from_slice(&y[..2 * NQ]), work: y[2 * NQ], energy })
}
