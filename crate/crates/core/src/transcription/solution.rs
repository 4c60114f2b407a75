use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cot_objective, GaitNlp, GaitProblem, TranscriptionError, KNOT_VARS};
use crate::model::{RobotParams, State, NQ, NU};
use crate::nlpsolve::SolveReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub q: [f64; NQ],
    pub dq: [f64; NQ],
}

/// An optimized step: knot states, zero-order-hold torques and solver metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSolution {
    pub params: RobotParams,
    pub problem: GaitProblem,
    pub knots: Vec<Knot>,
    /// `torques[k]` acts over `[t_k, t_{k+1})`.
    pub torques: Vec<[f64; NU]>,
    pub cot_opt: f64,
    pub report: SolveReport,
}

impl GaitSolution {
    pub fn from_vector(nlp: &GaitNlp, x: &[f64], report: SolveReport) -> Self {
        let (qs, dqs, torques) = nlp.unpack(x);
        let h = nlp.problem.h;
        let knots = qs
            .iter()
            .zip(&dqs)
            .enumerate()
            .map(|(k, (q, dq))| Knot { t: k as f64 * h, q: *q, dq: *dq })
            .collect();
        let cot_opt = cot_objective(&dqs, &torques, &nlp.biped.params, &nlp.problem);
        Self { params: nlp.biped.params.clone(), problem: nlp.problem.clone(), knots, torques, cot_opt, report }
    }

    /// Flattened decision vector in transcription order.
    pub fn to_vector(&self) -> Vec<f64> {
        let n = self.torques.len();
        let mut x = Vec::with_capacity(n * KNOT_VARS + 2 * NQ);
        for (k, knot) in self.knots.iter().enumerate() {
            x.extend_from_slice(&knot.q);
            x.extend_from_slice(&knot.dq);
            if k < n {
                x.extend_from_slice(&self.torques[k]);
            }
        }
        x
    }

    pub fn intervals(&self) -> usize {
        self.torques.len()
    }

    pub fn duration(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }

    pub fn state(&self, k: usize) -> State {
        State::new(self.knots[k].q, self.knots[k].dq)
    }

    /// Recomputes the objective from the stored knots.
    pub fn recompute_cot(&self) -> f64 {
        let dqs: Vec<[f64; NQ]> = self.knots.iter().map(|k| k.dq).collect();
        cot_objective(&dqs, &self.torques, &self.params, &self.problem)
    }

    pub fn to_json(&self) -> Result<String, TranscriptionError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, TranscriptionError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TranscriptionError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, TranscriptionError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One row per knot; the torque columns of the final knot are empty.
    pub fn to_csv(&self) -> Result<String, TranscriptionError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=NQ).map(|i| format!("q{i}")));
        header.extend((1..=NQ).map(|i| format!("dq{i}")));
        header.extend((1..=NU).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (k, knot) in self.knots.iter().enumerate() {
            let mut rec = vec![knot.t.to_string()];
            rec.extend(knot.q.iter().map(|v| v.to_string()));
            rec.extend(knot.dq.iter().map(|v| v.to_string()));
            match self.torques.get(k) {
                Some(u) => rec.extend(u.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat(String::new()).take(NU)),
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TranscriptionError> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}
