use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_hold, parse_point, preset_index, ExperimentConfig};
use crate::error::CliError;

/// Energy-optimal gaits for a five-link planar biped: optimization, closed-loop
/// simulation, push recovery and parameter sweeps.
#[derive(Debug, Parser)]
#[command(name = "gaitlab", version)]
pub struct Cli {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides GAITLAB_OUT_DIR and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for the optimizer's initial-guess perturbation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    pub no_plots: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one periodic step.
    Optimize(OptimizeArgs),
    /// Walk an optimized gait under feedback control.
    Simulate(SimulateArgs),
    /// Push the walker on its limit cycle and fit recovery rates.
    Push(PushArgs),
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Cost/recovery dominance table from omega sweep records.
    Pareto(ParetoArgs),
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Cost of transport and recovery rates over controller gains.
    Omega(OmegaArgs),
    /// Re-optimized cost over a leg-segment mass grid.
    Mass(MassArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Mass set, set1..set5.
    #[arg(long)]
    pub preset: Option<String>,
    /// Knot spacing, s.
    #[arg(long)]
    pub h: Option<f64>,
    /// Stride length, m.
    #[arg(long)]
    pub stride: Option<f64>,
    /// Step duration, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Swing-tip clearance, m.
    #[arg(long)]
    pub clearance: Option<f64>,
    /// Power smoothing constant, W^2.
    #[arg(long)]
    pub epsilon_sq: Option<f64>,
    /// Joint torque bound, N*m.
    #[arg(long)]
    pub torque_bound: Option<f64>,
    /// Solver iteration limit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Constraint violation tolerance.
    #[arg(long)]
    pub tol_feas: Option<f64>,
    /// Optimality tolerance.
    #[arg(long)]
    pub tol_opt: Option<f64>,
    /// Solver log level, 0 to 2.
    #[arg(long)]
    pub verbosity: Option<u8>,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// Closed-loop natural frequency, rad/s.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Damping ratio.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Feedforward hold between knots: zoh or linear.
    #[arg(long)]
    pub feedforward: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Warm start from a gait file with the same knot count.
    #[arg(long)]
    pub guess: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Gait JSON written by `optimize`.
    #[arg(long)]
    pub gait: PathBuf,
    #[command(flatten)]
    pub control: ControlArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Apply a horizontal push at this point: hip, stance_knee or torso.
    #[arg(long)]
    pub push: Option<String>,
    /// Push impulse, N*s.
    #[arg(long)]
    pub impulse: Option<f64>,
    /// Step in which the push acts.
    #[arg(long, default_value_t = 0)]
    pub at_step: usize,
    /// Push time within the step, s.
    #[arg(long)]
    pub push_time: Option<f64>,
    /// Skip the dense time series.
    #[arg(long)]
    pub no_dense: bool,
}

#[derive(Debug, Args)]
pub struct PushArgs {
    #[arg(long)]
    pub gait: PathBuf,
    #[command(flatten)]
    pub control: ControlArgs,
    /// Push points (repeatable); all three by default.
    #[arg(long)]
    pub point: Vec<String>,
    #[arg(long)]
    pub impulse: Option<f64>,
    #[arg(long)]
    pub push_time: Option<f64>,
    /// Post-impact sections observed after the push.
    #[arg(long)]
    pub observe: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OmegaArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Damping ratio.
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub feedforward: Option<String>,
    /// `all` or a comma list such as set2,set5.
    #[arg(long)]
    pub presets: Option<String>,
    /// Gains as start:step:stop.
    #[arg(long)]
    pub range: Option<String>,
    /// Read setN.json gaits from this directory instead of optimizing.
    #[arg(long)]
    pub gaits: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub impulse: Option<f64>,
    #[arg(long)]
    pub observe: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MassArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Base mass set.
    #[arg(long)]
    pub base: Option<String>,
    /// Segment varied: upper or lower.
    #[arg(long)]
    pub vary: Option<String>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// sweep_omega.json from `sweep omega`.
    #[arg(long)]
    pub records: PathBuf,
}

impl ProblemArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(p) = &self.preset {
            preset_index(p)?;
            cfg.preset = Some(p.clone());
            cfg.robot = None;
        }
        let pr = &mut cfg.problem;
        set(&mut pr.h, self.h);
        set(&mut pr.stride_length, self.stride);
        set(&mut pr.step_duration, self.duration);
        set(&mut pr.clearance, self.clearance);
        set(&mut pr.epsilon_sq, self.epsilon_sq);
        set(&mut pr.torque_bound, self.torque_bound);
        let s = &mut cfg.solver;
        set(&mut s.max_iter, self.max_iter);
        set(&mut s.tol_feas, self.tol_feas);
        set(&mut s.tol_opt, self.tol_opt);
        set(&mut s.verbosity, self.verbosity);
        Ok(())
    }
}

impl ControlArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        set(&mut cfg.controller.omega_n, self.omega);
        set(&mut cfg.controller.zeta, self.zeta);
        if let Some(f) = &self.feedforward {
            cfg.controller.feedforward = parse_hold(f)?;
        }
        Ok(())
    }
}

impl PushArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        self.control.apply(cfg)?;
        if !self.point.is_empty() {
            let mut pts = Vec::new();
            for p in self.point.iter().flat_map(|s| s.split(',')) {
                if p == "all" {
                    pts.clear();
                    break;
                }
                pts.push(parse_point(p)?);
            }
            cfg.push.points = pts;
        }
        set(&mut cfg.push.impulse, self.impulse);
        set(&mut cfg.push.time, self.push_time);
        set(&mut cfg.push.observe_steps, self.observe);
        Ok(())
    }
}

impl OmegaArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        self.problem.apply(cfg)?;
        set(&mut cfg.controller.zeta, self.zeta);
        if let Some(f) = &self.feedforward {
            cfg.controller.feedforward = parse_hold(f)?;
        }
        if let Some(p) = &self.presets {
            cfg.sweep.presets = vec![p.clone()];
        }
        if let Some(r) = &self.range {
            cfg.sweep.omega = r.clone();
        }
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.push.impulse, self.impulse);
        set(&mut cfg.push.observe_steps, self.observe);
        Ok(())
    }
}

impl MassArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        self.problem.apply(cfg)?;
        if let Some(b) = &self.base {
            preset_index(b)?;
            cfg.mass.base = b.clone();
        }
        if let Some(v) = &self.vary {
            cfg.mass.vary = gaitlab::analysis::Segment::parse(v)
                .ok_or_else(|| CliError::Usage(format!("unknown segment '{v}', expected upper|lower")))?;
        }
        set(&mut cfg.mass.from, self.from);
        set(&mut cfg.mass.to, self.to);
        set(&mut cfg.mass.step, self.step);
        Ok(())
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
