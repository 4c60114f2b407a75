use serde::{Deserialize, Serialize};

use crate::model::{PushPoint, RobotParams, State, NQ};
use crate::simulate::{rollout, ControllerConfig, LimitCycle, Perturbation, RolloutOptions};
use crate::transcription::GaitSolution;

use super::AnalysisError;

/// Weight of joint rates relative to angles in the section error, s.
pub const RATE_WEIGHT: f64 = 0.1;
const FIT_FLOOR: f64 = 1e-6;
const FIT_CEILING: f64 = 0.5;
const DEGENERATE: f64 = 1e-10;

/// One push-recovery trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushExperiment {
    pub point: PushPoint,
    /// Horizontal impulse, N*s.
    pub impulse: f64,
    /// Time within the pushed step, s.
    pub time: f64,
    /// Steps simulated after the push.
    pub observe_steps: usize,
}

impl Default for PushExperiment {
    fn default() -> Self {
        Self { point: PushPoint::Hip, impulse: 10.0, time: 0.0, observe_steps: 15 }
    }
}

impl PushExperiment {
    pub fn at(point: PushPoint) -> Self {
        Self { point, ..Self::default() }
    }
}

/// Log-linear fit of an error sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda: f64,
    pub slope: f64,
    pub intercept: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushOutcome {
    pub experiment: PushExperiment,
    /// Section errors; `errors[0]` is right after the push when it lands at the
    /// start of the step, otherwise the first post-impact error.
    pub errors: Vec<f64>,
    /// Recovery rate per step. At least 1 when the walker fell.
    pub lambda: Option<f64>,
    pub fit: Option<RateFit>,
    pub steps_survived: usize,
    pub fell: bool,
    /// The push left the walker on its limit cycle.
    pub degenerate: bool,
}

/// Weighted distance between two section states: angles plus rates times [`RATE_WEIGHT`].
pub fn section_error(a: &State, b: &State) -> f64 {
    let mut s = 0.0;
    for i in 0..NQ {
        s += (a.q[i] - b.q[i]).powi(2) + (RATE_WEIGHT * (a.dq[i] - b.dq[i])).powi(2);
    }
    s.sqrt()
}

/// Fits `ln e_k = a + k ln(lambda)` over `k >= 1` with `1e-6 <= e_k <= 0.5 e_0`.
///
/// Returns `None` with fewer than three usable samples.
pub fn fit_rate(errors: &[f64]) -> Option<RateFit> {
    let e0 = *errors.first()?;
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &e)| e >= FIT_FLOOR && e <= FIT_CEILING * e0)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(RateFit { lambda: slope.exp(), slope, intercept: my - slope * mx, samples: pts.len() })
}

/// Pushes the walker off its limit cycle and measures how fast it returns.
pub fn convergence_rate(
    params: &RobotParams,
    gait: &GaitSolution,
    ctrl: &ControllerConfig,
    push: &PushExperiment,
    cycle: &LimitCycle,
) -> Result<PushOutcome, AnalysisError> {
    if !(push.impulse.is_finite() && push.time >= 0.0) {
        return Err(AnalysisError::InvalidConfig("push needs a finite impulse and a non-negative time".into()));
    }
    let opts = RolloutOptions {
        steps: push.observe_steps,
        initial: Some(cycle.state),
        perturbation: Some(Perturbation::Impulse {
            point: push.point,
            impulse: [push.impulse, 0.0],
            step: 0,
            time: push.time,
        }),
        ..RolloutOptions::default()
    };
    let r = rollout(params, gait, ctrl, &opts)?;
    let mut errors = Vec::with_capacity(r.steps.len() + 1);
    if push.time == 0.0 {
        let biped = crate::model::Biped::new(params.clone());
        let pushed = crate::model::push_map(&biped, &cycle.state, push.point, [push.impulse, 0.0])?;
        errors.push(section_error(&pushed, &cycle.state));
    }
    errors.extend(r.steps.iter().map(|s| section_error(&s.post, &cycle.state)));

    let fell = r.fell();
    let degenerate = !fell && errors.first().map_or(true, |&e| e < DEGENERATE);
    let fit = if degenerate { None } else { fit_rate(&errors) };
    let lambda = if fell {
        Some(fit.map_or(1.0, |f| f.lambda.max(1.0)))
    } else {
        fit.map(|f| f.lambda)
    };
    Ok(PushOutcome {
        experiment: *push,
        errors,
        lambda,
        fit,
        steps_survived: r.steps_completed(),
        fell,
        degenerate,
    })
}
