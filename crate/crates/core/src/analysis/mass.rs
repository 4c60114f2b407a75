use serde::{Deserialize, Serialize};

use crate::model::{RobotParams, NQ, TORSO};
use crate::nlpsolve::{SolveOptions, SolveStatus};
use crate::transcription::{default_solve_options, optimize, GaitProblem, GaitSolution};

use super::presets::GuessSource;
use super::AnalysisError;

/// Leg segment whose mass is varied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Upper,
    Lower,
}

impl Segment {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "upper" | "upper_leg" | "thigh" => Some(Segment::Upper),
            "lower" | "lower_leg" | "shin" => Some(Segment::Lower),
            _ => None,
        }
    }

    fn links(self) -> [usize; 2] {
        match self {
            Segment::Upper => [0, 1],
            Segment::Lower => [2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSweepConfig {
    pub base: RobotParams,
    pub segment: Segment,
    /// Mass of the varied segment in each leg, kg.
    pub masses: Vec<f64>,
    #[serde(default)]
    pub problem: GaitProblem,
    #[serde(default = "default_solve_options")]
    pub solve: SolveOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub mass: f64,
    pub torso_mass: f64,
    pub cot_opt: Option<f64>,
    pub status: Option<SolveStatus>,
    pub source: Option<GuessSource>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSweep {
    pub segment: Segment,
    pub records: Vec<MassRecord>,
    /// Least-squares line through the optimal points.
    pub fit: Option<LinearFit>,
}

/// Least-squares line; `None` with fewer than two distinct abscissae.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r2, samples: pts.len() })
}

/// Walker with the segment mass set in both legs and the torso absorbing the difference.
fn rebalanced(base: &RobotParams, seg: Segment, mass: f64) -> RobotParams {
    let total = base.total_mass();
    let mut p = base.clone();
    for l in seg.links() {
        p.masses[l] = mass;
    }
    let others: f64 = (0..NQ).filter(|&i| i != TORSO).map(|i| p.masses[i]).sum();
    p.masses[TORSO] = total - others;
    p
}

/// Re-optimizes the gait along a mass grid at constant total mass.
///
/// A forward pass solves each point from the default guess and from the
/// previous point's optimum. A backward pass then re-solves each point from
/// the next point's optimum. The best optimal result per point is kept. A
/// failed point is recorded and the sweep continues.
pub fn sweep_mass(cfg: &MassSweepConfig) -> Result<MassSweep, AnalysisError> {
    cfg.base.validate()?;
    cfg.problem.validate()?;
    if cfg.masses.is_empty() {
        return Err(AnalysisError::InvalidConfig("mass grid is empty".into()));
    }
    let n = cfg.masses.len();
    let params: Vec<RobotParams> = cfg.masses.iter().map(|&m| rebalanced(&cfg.base, cfg.segment, m)).collect();
    let mut records: Vec<MassRecord> = cfg
        .masses
        .iter()
        .zip(&params)
        .map(|(&m, p)| MassRecord {
            mass: m,
            torso_mass: p.masses[TORSO],
            cot_opt: None,
            status: None,
            source: None,
            iterations: 0,
            error: p.validate().err().map(|e| e.to_string()),
        })
        .collect();
    let mut best: Vec<Option<GaitSolution>> = vec![None; n];

    let attempt = |i: usize, src: GuessSource, warm: Option<&[f64]>, rec: &mut MassRecord, best: &mut Option<GaitSolution>| {
        let g = optimize(&params[i], &cfg.problem, &cfg.solve, warm)?;
        rec.iterations += g.report.iterations;
        if rec.status.is_none() {
            rec.status = Some(g.report.status);
        }
        let improves = g.report.status == SolveStatus::Optimal
            && best.as_ref().map_or(true, |b| g.cot_opt < b.cot_opt);
        if improves {
            rec.cot_opt = Some(g.cot_opt);
            rec.status = Some(g.report.status);
            rec.source = Some(src);
            *best = Some(g);
        }
        Ok::<(), AnalysisError>(())
    };

    let mut prev: Option<Vec<f64>> = None;
    for i in 0..n {
        if records[i].error.is_some() {
            continue;
        }
        attempt(i, GuessSource::Default, None, &mut records[i], &mut best[i])?;
        if let Some(w) = &prev {
            attempt(i, GuessSource::Continuation, Some(w), &mut records[i], &mut best[i])?;
        }
        if let Some(b) = &best[i] {
            prev = Some(b.to_vector());
        }
    }
    let mut next: Option<Vec<f64>> = None;
    for i in (0..n).rev() {
        if records[i].error.is_some() {
            continue;
        }
        if let Some(w) = &next {
            attempt(i, GuessSource::Continuation, Some(w), &mut records[i], &mut best[i])?;
        }
        if let Some(b) = &best[i] {
            next = Some(b.to_vector());
        }
    }
    for (r, b) in records.iter_mut().zip(&best) {
        if b.is_none() && r.error.is_none() {
            r.error = Some("no start reached an optimal solution".into());
        }
    }

    let pts: Vec<(f64, f64)> = records.iter().filter_map(|r| Some((r.mass, r.cot_opt?))).collect();
    Ok(MassSweep { segment: cfg.segment, fit: linear_fit(&pts), records })
}
