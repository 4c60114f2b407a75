use std::path::{Path, PathBuf};

use gaitlab::analysis::{Segment, SweepConfig};
use gaitlab::model::{PushPoint, RobotParams};
use gaitlab::nlpsolve::SolveOptions;
use gaitlab::simulate::{ControllerConfig, FeedforwardHold};
use gaitlab::transcription::{default_solve_options, GaitProblem};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run depends on. Loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `set1` to `set5`.
    pub preset: Option<String>,
    /// Explicit walker; takes precedence over `preset`.
    pub robot: Option<RobotParams>,
    pub problem: GaitProblem,
    pub solver: SolveOptions,
    pub controller: ControllerConfig,
    /// Steps walked by `simulate` and by the sweep's cost measurement.
    pub steps: usize,
    pub push: PushSpec,
    pub sweep: SweepSpec,
    pub mass: MassSpec,
    pub output_dir: Option<PathBuf>,
    /// Perturbs the optimizer's initial guess when set.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            robot: None,
            problem: GaitProblem::default(),
            solver: default_solve_options(),
            controller: ControllerConfig::new(80.0),
            steps: 10,
            push: PushSpec::default(),
            sweep: SweepSpec::default(),
            mass: MassSpec::default(),
            output_dir: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushSpec {
    /// Push points; all three when empty.
    pub points: Vec<PushPoint>,
    /// Horizontal impulse, N*s.
    pub impulse: f64,
    /// Time within the step, s.
    pub time: f64,
    pub observe_steps: usize,
}

impl Default for PushSpec {
    fn default() -> Self {
        Self { points: Vec::new(), impulse: 10.0, time: 0.0, observe_steps: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub presets: Vec<String>,
    /// `start:step:stop`, inclusive.
    pub omega: String,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { presets: vec!["all".into()], omega: "60:10:100".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MassSpec {
    pub base: String,
    pub vary: Segment,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Default for MassSpec {
    fn default() -> Self {
        Self { base: "set5".into(), vary: Segment::Lower, from: 3.0, to: 9.0, step: 1.0 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn robot(&self) -> Result<RobotParams, CliError> {
        let p = match (&self.robot, &self.preset) {
            (Some(r), _) => r.clone(),
            (None, Some(name)) => preset(name)?,
            (None, None) => preset("set5")?,
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            cot_steps: self.steps,
            impulse: self.push.impulse,
            push_time: self.push.time,
            observe_steps: self.push.observe_steps,
            zeta: self.controller.zeta,
            feedforward: self.controller.feedforward,
            ..SweepConfig::default()
        }
    }

    pub fn push_points(&self) -> Vec<PushPoint> {
        if self.push.points.is_empty() {
            PushPoint::ALL.to_vec()
        } else {
            self.push.points.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.robot()?;
        self.problem.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let c = &self.controller;
        if !(c.omega_n > 0.0 && c.zeta > 0.0) {
            return Err(CliError::Config("omega_n and zeta must be positive".into()));
        }
        if self.steps == 0 {
            return Err(CliError::Config("steps must be at least 1".into()));
        }
        if !self.push.impulse.is_finite() || !(self.push.time >= 0.0) {
            return Err(CliError::Config("push impulse must be finite and push time non-negative".into()));
        }
        Ok(())
    }
}

/// Mass set index from `setN` or `N`.
pub fn preset_index(name: &str) -> Result<usize, CliError> {
    let digits = name.strip_prefix("set").unwrap_or(name);
    digits
        .parse::<usize>()
        .ok()
        .filter(|&i| RobotParams::preset(i).is_some())
        .ok_or_else(|| CliError::Usage(format!("unknown preset '{name}', expected set1..set5")))
}

pub fn preset(name: &str) -> Result<RobotParams, CliError> {
    Ok(RobotParams::preset(preset_index(name)?).expect("index checked"))
}

/// Expands `all` and comma lists into preset indices.
pub fn preset_list(names: &[String]) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for n in names.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        if n == "all" {
            out.extend(1..=5);
        } else {
            out.push(preset_index(n)?);
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::Config("no presets selected".into()));
    }
    Ok(out)
}

/// Inclusive grid `start:step:stop`; a single number is a one-point grid.
pub fn parse_range(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("invalid range '{s}', expected start:step:stop"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let (a, step, b) = match parts[..] {
        [a] => (a, 1.0, a),
        [a, step, b] => (a, step, b),
        _ => return Err(bad()),
    };
    grid(a, b, step)
}

pub fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(from.is_finite() && to.is_finite() && step > 0.0 && step.is_finite()) {
        return Err(CliError::Config(format!("invalid grid {from}:{step}:{to}")));
    }
    let n = ((to - from) / step + 1e-9).floor();
    if n < 0.0 {
        return Err(CliError::Config(format!("empty grid {from}:{step}:{to}")));
    }
    Ok((0..=n as usize).map(|i| from + i as f64 * step).collect())
}

pub fn parse_point(s: &str) -> Result<PushPoint, CliError> {
    PushPoint::parse(s).ok_or_else(|| CliError::Usage(format!("unknown push point '{s}', expected hip|stance_knee|torso")))
}

pub fn parse_hold(s: &str) -> Result<FeedforwardHold, CliError> {
    match s {
        "zoh" => Ok(FeedforwardHold::Zoh),
        "linear" => Ok(FeedforwardHold::Linear),
        _ => Err(CliError::Usage(format!("unknown feedforward hold '{s}', expected zoh|linear"))),
    }
}
