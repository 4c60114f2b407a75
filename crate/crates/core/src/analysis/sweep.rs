use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::PushPoint;
use crate::simulate::{find_limit_cycle, measure_cot, rollout, ControllerConfig, FeedforwardHold, RolloutOptions};
use crate::transcription::GaitSolution;

use super::push::{convergence_rate, PushExperiment};
use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Steps walked from the gait start to measure cost of transport.
    pub cot_steps: usize,
    pub impulse: f64,
    /// Push time within the step, s.
    pub push_time: f64,
    pub observe_steps: usize,
    pub cycle_tol: f64,
    pub cycle_max_steps: usize,
    pub zeta: f64,
    pub feedforward: FeedforwardHold,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cot_steps: 10,
            impulse: 10.0,
            push_time: 0.0,
            observe_steps: 15,
            cycle_tol: 1e-9,
            cycle_max_steps: 200,
            zeta: 1.0,
            feedforward: FeedforwardHold::Zoh,
        }
    }
}

/// Outcome at one (gait, gain) grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub set: String,
    pub omega_n: f64,
    pub cot_opt: f64,
    pub cot_meas: Option<f64>,
    pub ratio: Option<f64>,
    pub lambda_hip: Option<f64>,
    pub lambda_knee: Option<f64>,
    pub lambda_torso: Option<f64>,
    /// Mean of the three push rates, when all are defined.
    pub lambda_avg: Option<f64>,
    /// Steps completed in the cost-of-transport run.
    pub steps: usize,
    pub fell: bool,
    pub error: Option<String>,
}

fn run_point(set: &str, gait: &GaitSolution, omega: f64, cfg: &SweepConfig) -> SweepRecord {
    let ctrl = ControllerConfig { omega_n: omega, zeta: cfg.zeta, feedforward: cfg.feedforward };
    let mut rec = SweepRecord {
        set: set.to_string(),
        omega_n: omega,
        cot_opt: gait.cot_opt,
        cot_meas: None,
        ratio: None,
        lambda_hip: None,
        lambda_knee: None,
        lambda_torso: None,
        lambda_avg: None,
        steps: 0,
        fell: false,
        error: None,
    };
    let params = &gait.params;
    let walk = RolloutOptions { steps: cfg.cot_steps, ..RolloutOptions::default() };
    match rollout(params, gait, &ctrl, &walk) {
        Ok(r) => {
            rec.steps = r.steps_completed();
            rec.fell = r.fell();
            if let Ok(c) = measure_cot(&r, params) {
                rec.cot_meas = Some(c);
                rec.ratio = Some(c / gait.cot_opt);
            }
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    }
    let cycle = match find_limit_cycle(params, gait, &ctrl, &RolloutOptions::default(), cfg.cycle_tol, cfg.cycle_max_steps)
    {
        Ok(c) => c,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let mut lambdas = [None; 3];
    for (slot, point) in lambdas.iter_mut().zip(PushPoint::ALL) {
        let push = PushExperiment { point, impulse: cfg.impulse, time: cfg.push_time, observe_steps: cfg.observe_steps };
        match convergence_rate(params, gait, &ctrl, &push, &cycle) {
            Ok(o) => *slot = o.lambda,
            Err(e) => rec.error = Some(e.to_string()),
        }
    }
    [rec.lambda_hip, rec.lambda_knee, rec.lambda_torso] = lambdas;
    if let [Some(a), Some(b), Some(c)] = lambdas {
        rec.lambda_avg = Some((a + b + c) / 3.0);
    }
    rec
}

/// Measured cost of transport and push-recovery rates over a grid of gains.
///
/// Grid points run in parallel; records come back ordered by gait, then gain.
pub fn sweep_omega(
    gaits: &[(String, GaitSolution)],
    omegas: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRecord>, AnalysisError> {
    if gaits.is_empty() || omegas.is_empty() {
        return Err(AnalysisError::InvalidConfig("sweep needs at least one gait and one gain".into()));
    }
    if let Some(w) = omegas.iter().find(|w| !(**w > 0.0)) {
        return Err(AnalysisError::InvalidConfig(format!("omega_n must be positive, got {w}")));
    }
    let jobs: Vec<(usize, f64)> = (0..gaits.len()).flat_map(|g| omegas.iter().map(move |&w| (g, w))).collect();
    Ok(jobs
        .par_iter()
        .map(|&(g, w)| run_point(&gaits[g].0, &gaits[g].1, w, cfg))
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Long-format table, one row per record.
pub fn records_csv(records: &[SweepRecord]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "set",
        "omega_n",
        "cot_opt",
        "cot_meas",
        "ratio",
        "lambda_hip",
        "lambda_knee",
        "lambda_torso",
        "lambda_avg",
        "steps",
    ])?;
    for r in records {
        w.write_record([
            r.set.clone(),
            r.omega_n.to_string(),
            r.cot_opt.to_string(),
            opt(r.cot_meas),
            opt(r.ratio),
            opt(r.lambda_hip),
            opt(r.lambda_knee),
            opt(r.lambda_torso),
            opt(r.lambda_avg),
            r.steps.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
