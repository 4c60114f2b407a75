use serde::{Deserialize, Serialize};

use super::control::{pfl_torque, ControllerConfig, Reference};
use super::dopri::{Control, Dopri5, IntegrationError, SegmentEnd, Tolerance};
use super::SimError;
use crate::autodiff::Real;
use crate::model::{impact_map, push_map, Biped, PushPoint, RobotParams, State, NQ, NU, TORSO};
use crate::transcription::GaitSolution;

/// State layout: `q`, `dq`, accumulated actuator work.
const NY: usize = 2 * NQ + 1;

/// An external disturbance applied during one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Instantaneous impulse (N*s) at time-within-step `time`.
    Impulse { point: PushPoint, impulse: [f64; 2], step: usize, time: f64 },
    /// Constant force (N) over `[start, start + duration)` within the step.
    Force { point: PushPoint, force: [f64; 2], step: usize, start: f64, duration: f64 },
}

impl Perturbation {
    /// Horizontal forward push right after the impact that starts `step`.
    pub fn push(point: PushPoint, impulse: f64, step: usize) -> Self {
        Perturbation::Impulse { point, impulse: [impulse, 0.0], step, time: 0.0 }
    }

    fn step(&self) -> usize {
        match *self {
            Perturbation::Impulse { step, .. } | Perturbation::Force { step, .. } => step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutOptions {
    pub steps: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Keep a dense time series.
    pub record: bool,
    pub perturbation: Option<Perturbation>,
    /// Start state; the gait's first knot when absent.
    pub initial: Option<State>,
    /// Impacts count only once the swing tip is this far ahead of the stance foot.
    pub min_impact_x: f64,
    pub min_hip_height: f64,
    pub max_torso_angle: f64,
    /// A step longer than this multiple of the nominal duration is a fall.
    pub timeout_factor: f64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            steps: 10,
            rtol: 1e-9,
            atol: 1e-9,
            record: false,
            perturbation: None,
            initial: None,
            min_impact_x: 0.3,
            min_hip_height: 0.5,
            max_torso_angle: 1.0,
            timeout_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FallReason {
    HipTooLow,
    TorsoTilt,
    Timeout,
    Singular(String),
    Integration(String),
    InfeasibleImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fall {
    pub t: f64,
    /// Index of the step in progress.
    pub step: usize,
    pub reason: FallReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: [f64; NQ],
    pub dq: [f64; NQ],
    pub u: [f64; NU],
    /// Accumulated actuator work `int sum |u_i dq_i| dt`, J.
    pub work: f64,
    /// World x of the stance foot.
    pub foot_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub index: usize,
    /// Global impact time.
    pub t: f64,
    pub duration: f64,
    pub pre: State,
    /// Post-impact state, legs relabelled.
    pub post: State,
    /// Horizontal distance from the old to the new stance foot.
    pub length: f64,
    /// Actuator work during the step.
    pub work: f64,
    pub impact_impulse: [f64; 2],
    pub energy_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    #[serde(skip)]
    pub samples: Vec<Sample>,
    pub steps: Vec<StepEvent>,
    pub fall: Option<Fall>,
    pub final_state: State,
    pub final_time: f64,
}

impl SimResult {
    pub fn steps_completed(&self) -> usize {
        self.steps.len()
    }

    pub fn fell(&self) -> bool {
        self.fall.is_some()
    }

    /// Dense series as CSV: `t, q1..q5, dq1..dq5, u1..u4, work, foot_x`.
    pub fn samples_csv(&self) -> Result<String, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=NQ).map(|i| format!("q{i}")));
        header.extend((1..=NQ).map(|i| format!("dq{i}")));
        header.extend((1..=NU).map(|i| format!("u{i}")));
        header.push("work".into());
        header.push("foot_x".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.t.to_string()];
            rec.extend(s.q.iter().map(|v| v.to_string()));
            rec.extend(s.dq.iter().map(|v| v.to_string()));
            rec.extend(s.u.iter().map(|v| v.to_string()));
            rec.push(s.work.to_string());
            rec.push(s.foot_x.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

enum StepOutcome {
    Impact(StepEvent, f64),
    Fall(Fall),
}

/// Closed-loop walker: a gait reference tracked by the PFL controller.
#[derive(Debug, Clone)]
pub struct Walker {
    pub biped: Biped,
    pub reference: Reference,
    pub ctrl: ControllerConfig,
    pub opts: RolloutOptions,
}

impl Walker {
    pub fn new(
        params: &RobotParams,
        gait: &GaitSolution,
        ctrl: &ControllerConfig,
        opts: &RolloutOptions,
    ) -> Result<Self, SimError> {
        params.validate()?;
        if !(ctrl.omega_n > 0.0) || !(ctrl.zeta > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "controller needs positive omega_n and zeta, got {} and {}",
                ctrl.omega_n, ctrl.zeta
            )));
        }
        if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
            return Err(SimError::InvalidConfig("integrator tolerances must be positive".into()));
        }
        Ok(Self {
            biped: Biped::new(params.clone()),
            reference: Reference::new(gait, ctrl.feedforward)?,
            ctrl: *ctrl,
            opts: opts.clone(),
        })
    }

    fn rhs(
        &self,
        tau: f64,
        k: usize,
        y: &[f64; NY],
        force: Option<(PushPoint, [f64; 2])>,
    ) -> Result<([f64; NY], [f64; NU]), SimError> {
        let s = State::from_slice(&y[..2 * NQ]);
        let r = self.reference.at(tau, k);
        let cmd = pfl_torque(&self.biped, &s, &r, &self.ctrl)?;
        let t = self.biped.dyn_terms(&s.q, &s.dq);
        let mut rhs = [0.0; NQ];
        for i in 0..NQ {
            rhs[i] = -t.g[i];
            for j in 0..NQ {
                rhs[i] -= t.c[i][j] * s.dq[j];
            }
            if i < NU {
                rhs[i] += cmd.u[i];
            }
        }
        if let Some((point, f)) = force {
            let j = point.chain_point(&self.biped).jacobian(&s.q);
            for i in 0..NQ {
                rhs[i] += j[0][i] * f[0] + j[1][i] * f[1];
            }
        }
        let ddq = f64::solve(&t.d, &rhs).map_err(|e| SimError::Singular(e.to_string()))?;
        let mut out = [0.0; NY];
        let mut power = 0.0;
        for i in 0..NQ {
            out[i] = s.dq[i];
            out[NQ + i] = ddq[i];
        }
        for i in 0..NU {
            power += (cmd.u[i] * s.dq[i]).abs();
        }
        out[2 * NQ] = power;
        Ok((out, cmd.u))
    }

    fn hip_height(&self, q: &[f64; NQ]) -> f64 {
        self.biped.hip.position(&crate::model::absolute_angles(q))[1]
    }

    /// Integrates one step from a post-impact state until the next impact or a fall.
    fn step(
        &self,
        integ: &mut Dopri5,
        index: usize,
        start: &State,
        t_start: f64,
        work_start: f64,
        foot_x: f64,
        mut samples: Option<&mut Vec<Sample>>,
    ) -> StepOutcome {
        let reference = &self.reference;
        let n = reference.intervals();
        let t_end = self.opts.timeout_factor * reference.duration;
        let perturb = self.opts.perturbation.filter(|p| p.step() == index);

        // breakpoints: knots, perturbation edges, timeout
        let mut cuts: Vec<f64> = (1..=n).map(|k| reference.knot_time(k)).collect();
        match perturb {
            Some(Perturbation::Impulse { time, .. }) if time > 0.0 => cuts.push(time),
            Some(Perturbation::Force { start, duration, .. }) => {
                cuts.push(start.max(0.0));
                cuts.push((start + duration).max(0.0));
            }
            _ => {}
        }
        cuts.push(t_end);
        cuts.retain(|&c| c > 0.0 && c <= t_end);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let mut y = [0.0; NY];
        y[..NQ].copy_from_slice(&start.q);
        y[NQ..2 * NQ].copy_from_slice(&start.dq);
        y[2 * NQ] = work_start;
        let fall = |t: f64, reason| StepOutcome::Fall(Fall { t: t_start + t, step: index, reason });

        let mut tau = 0.0;
        let mut impulse_done = false;
        for &cut in &cuts {
            if let Some(Perturbation::Impulse { point, impulse, time, .. }) = perturb {
                if !impulse_done && time <= tau + 1e-12 {
                    let s = State::from_slice(&y[..2 * NQ]);
                    match push_map(&self.biped, &s, point, impulse) {
                        Ok(p) => y[NQ..2 * NQ].copy_from_slice(&p.dq),
                        Err(e) => return fall(tau, FallReason::Singular(e.to_string())),
                    }
                    impulse_done = true;
                }
            }
            let mid = 0.5 * (tau + cut);
            let k = reference.interval_at(mid);
            let force = match perturb {
                Some(Perturbation::Force { point, force, start, duration, .. })
                    if mid > start && mid < start + duration =>
                {
                    Some((point, force))
                }
                _ => None,
            };
            if let Some(buf) = samples.as_deref_mut() {
                if buf.is_empty() || tau == 0.0 {
                    if let Ok((_, u)) = self.rhs(tau, k, &y, force) {
                        buf.push(sample(t_start + tau, &y, u, foot_x));
                    }
                }
            }

            let mut fall_reason: Option<(f64, FallReason)> = None;
            let min_x = self.opts.min_impact_x;
            let biped = &self.biped;
            let mut event = |_t: f64, yy: &[f64; NY]| {
                let q: [f64; NQ] = yy[..NQ].try_into().unwrap();
                let p = biped.swing_tip.position(&crate::model::absolute_angles(&q));
                if p[0] > min_x {
                    p[1]
                } else {
                    1.0
                }
            };
            let res = integ.integrate(
                |t, yy| self.rhs(t, k, yy, force).map(|r| r.0),
                tau,
                y,
                cut,
                Some(&mut event),
                |st| {
                    let q: [f64; NQ] = st.y1[..NQ].try_into().unwrap();
                    if let Some(buf) = samples.as_deref_mut() {
                        let u = self.rhs(st.t1, k, &st.y1, force).map(|r| r.1).unwrap_or([f64::NAN; NU]);
                        buf.push(sample(t_start + st.t1, &st.y1, u, foot_x));
                    }
                    if self.hip_height(&q) < self.opts.min_hip_height {
                        fall_reason = Some((st.t1, FallReason::HipTooLow));
                        return Control::Stop;
                    }
                    if q[TORSO].abs() > self.opts.max_torso_angle {
                        fall_reason = Some((st.t1, FallReason::TorsoTilt));
                        return Control::Stop;
                    }
                    Control::Continue
                },
            );
            match res {
                Err(IntegrationError::Rhs(e)) => return fall(tau, FallReason::Singular(e.to_string())),
                Err(IntegrationError::StepTooSmall { t, h }) => {
                    return fall(t, FallReason::Integration(format!("step size {h:.3e} too small")))
                }
                Err(IntegrationError::TooManySteps { t }) => {
                    return fall(t, FallReason::Integration("step budget exhausted".into()))
                }
                Ok(SegmentEnd::Stopped { t, .. }) => {
                    let (tf, reason) = fall_reason.unwrap_or((t, FallReason::Integration("stopped".into())));
                    return fall(tf, reason);
                }
                Ok(SegmentEnd::Event { t, y: ye }) => {
                    let pre = State::from_slice(&ye[..2 * NQ]);
                    let tip = self.biped.swing_tip.position(&crate::model::absolute_angles(&pre.q));
                    let imp = match impact_map(&self.biped, &pre) {
                        Ok(i) => i,
                        Err(_) => return fall(t, FallReason::InfeasibleImpact),
                    };
                    let work = ye[2 * NQ];
                    return StepOutcome::Impact(
                        StepEvent {
                            index,
                            t: t_start + t,
                            duration: t,
                            pre,
                            post: imp.state_plus,
                            length: tip[0],
                            work: work - work_start,
                            impact_impulse: imp.impulse,
                            energy_loss: imp.energy_loss,
                        },
                        work,
                    );
                }
                Ok(SegmentEnd::Reached { y: yr }) => {
                    y = yr;
                    tau = cut;
                }
            }
        }
        fall(tau, FallReason::Timeout)
    }

    /// Walks up to `opts.steps` steps.
    pub fn run(&self) -> SimResult {
        let mut integ = Dopri5::new(Tolerance { rtol: self.opts.rtol, atol: self.opts.atol });
        let mut state = self.opts.initial.unwrap_or_else(|| self.reference.initial_state());
        let mut t = 0.0;
        let mut work = 0.0;
        let mut foot_x = 0.0;
        let mut steps = Vec::new();
        let mut samples = Vec::new();
        let mut fall = None;
        for index in 0..self.opts.steps {
            let buf = if self.opts.record { Some(&mut samples) } else { None };
            match self.step(&mut integ, index, &state, t, work, foot_x, buf) {
                StepOutcome::Impact(ev, w) => {
                    t = ev.t;
                    work = w;
                    foot_x += ev.length;
                    state = ev.post;
                    steps.push(ev);
                }
                StepOutcome::Fall(f) => {
                    t = f.t;
                    fall = Some(f);
                    break;
                }
            }
        }
        SimResult { samples, steps, fall, final_state: state, final_time: t }
    }
}

fn sample(t: f64, y: &[f64; NY], u: [f64; NU], foot_x: f64) -> Sample {
    Sample {
        t,
        q: y[..NQ].try_into().unwrap(),
        dq: y[NQ..2 * NQ].try_into().unwrap(),
        u,
        work: y[2 * NQ],
        foot_x,
    }
}

/// Closed-loop simulation of `opts.steps` steps of `gait`.
pub fn rollout(
    params: &RobotParams,
    gait: &GaitSolution,
    ctrl: &ControllerConfig,
    opts: &RolloutOptions,
) -> Result<SimResult, SimError> {
    Ok(Walker::new(params, gait, ctrl, opts)?.run())
}

/// Measured cost of transport: actuator work over weight times distance.
///
/// The first step is treated as a transient and skipped when more than one
/// step completed.
pub fn measure_cot(result: &SimResult, params: &RobotParams) -> Result<f64, SimError> {
    let steps = &result.steps;
    if steps.is_empty() {
        return Err(SimError::NoCompletedStep);
    }
    let used = if steps.len() > 1 { &steps[1..] } else { &steps[..] };
    let work: f64 = used.iter().map(|s| s.work).sum();
    let dist: f64 = used.iter().map(|s| s.length).sum();
    if !(dist > 0.0) {
        return Err(SimError::NoCompletedStep);
    }
    Ok(work / (params.total_mass() * params.gravity * dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    /// Post-impact fixed point.
    pub state: State,
    pub steps: usize,
    /// Max-norm difference of the last two post-impact states.
    pub residual: f64,
}

/// Iterates the closed-loop step map until successive post-impact states agree to `tol`.
pub fn find_limit_cycle(
    params: &RobotParams,
    gait: &GaitSolution,
    ctrl: &ControllerConfig,
    opts: &RolloutOptions,
    tol: f64,
    max_steps: usize,
) -> Result<LimitCycle, SimError> {
    let mut o = opts.clone();
    o.steps = 1;
    o.record = false;
    o.perturbation = None;
    let mut walker = Walker::new(params, gait, ctrl, &o)?;
    let mut state = opts.initial.unwrap_or_else(|| walker.reference.initial_state());
    let mut residual = f64::INFINITY;
    for k in 0..max_steps {
        walker.opts.initial = Some(state);
        let r = walker.run();
        if let Some(f) = r.fall {
            return Err(SimError::NonConvergent { steps: k, residual, fall: Some(f.reason) });
        }
        let next = r.final_state;
        residual = max_diff(&next, &state);
        state = next;
        if residual <= tol {
            return Ok(LimitCycle { state, steps: k + 1, residual });
        }
    }
    Err(SimError::NonConvergent { steps: max_steps, residual, fall: None })
}

pub(crate) fn max_diff(a: &State, b: &State) -> f64 {
    let mut m = 0.0f64;
    for i in 0..NQ {
        m = m.max((a.q[i] - b.q[i]).abs()).max((a.dq[i] - b.dq[i]).abs());
    }
    m
}
