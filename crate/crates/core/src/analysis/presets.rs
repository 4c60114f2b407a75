use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::RobotParams;
use crate::nlpsolve::{SolveOptions, SolveStatus};
use crate::transcription::{optimize, GaitProblem, GaitSolution};

use super::AnalysisError;

/// Published optimal cost of transport for mass sets 1 to 5.
pub const REFERENCE_COT: [f64; 5] = [0.0992, 0.0996, 0.0861, 0.0853, 0.0705];

/// Preset whose optimum seeds the others.
const BASE_SET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessSource {
    /// The straight-leg default guess.
    Default,
    /// The base preset's optimum.
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub source: GuessSource,
    pub status: SolveStatus,
    pub cot_opt: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetGait {
    pub set: usize,
    pub name: String,
    pub gait: GaitSolution,
    pub source: GuessSource,
    pub attempts: Vec<Attempt>,
}

fn better(a: &GaitSolution, b: &GaitSolution) -> bool {
    let ok = |g: &GaitSolution| g.report.status == SolveStatus::Optimal;
    match (ok(a), ok(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a.cot_opt < b.cot_opt,
    }
}

/// Optimizes the requested presets.
///
/// The base preset is solved from the default guess. Every other preset is
/// solved from the default guess and from the base optimum, keeping the better
/// optimal result.
pub fn optimize_presets(
    sets: &[usize],
    problem: &GaitProblem,
    solve: &SolveOptions,
) -> Result<Vec<PresetGait>, AnalysisError> {
    for &s in sets {
        if RobotParams::preset(s).is_none() {
            return Err(AnalysisError::InvalidConfig(format!("unknown preset set{s}")));
        }
    }
    let base_params = RobotParams::preset(BASE_SET).expect("base preset exists");
    let base = optimize(&base_params, problem, solve, None)?;
    let warm = base.to_vector();

    let jobs: Vec<(usize, GuessSource)> = sets
        .iter()
        .filter(|&&s| s != BASE_SET)
        .flat_map(|&s| [(s, GuessSource::Default), (s, GuessSource::Continuation)])
        .collect();
    let solved: Vec<(usize, GuessSource, GaitSolution)> = jobs
        .par_iter()
        .map(|&(s, src)| {
            let params = RobotParams::preset(s).expect("checked above");
            let guess = match src {
                GuessSource::Default => None,
                GuessSource::Continuation => Some(warm.as_slice()),
            };
            optimize(&params, problem, solve, guess).map(|g| (s, src, g))
        })
        .collect::<Result<_, _>>()?;

    let attempt = |src, g: &GaitSolution| Attempt {
        source: src,
        status: g.report.status,
        cot_opt: g.cot_opt,
        iterations: g.report.iterations,
    };
    let mut out = Vec::with_capacity(sets.len());
    for &s in sets {
        let name = format!("set{s}");
        if s == BASE_SET {
            out.push(PresetGait {
                set: s,
                name,
                attempts: vec![attempt(GuessSource::Default, &base)],
                gait: base.clone(),
                source: GuessSource::Default,
            });
            continue;
        }
        let mine: Vec<&(usize, GuessSource, GaitSolution)> = solved.iter().filter(|j| j.0 == s).collect();
        let mut best = mine[0];
        for j in &mine[1..] {
            if better(&j.2, &best.2) {
                best = j;
            }
        }
        out.push(PresetGait {
            set: s,
            name,
            gait: best.2.clone(),
            source: best.1,
            attempts: mine.iter().map(|j| attempt(j.1, &j.2)).collect(),
        });
    }
    Ok(out)
}
