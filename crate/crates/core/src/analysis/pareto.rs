use serde::{Deserialize, Serialize};

use super::sweep::SweepRecord;

/// Measured cost of transport against averaged recovery rate. Lower is better in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub set: String,
    pub omega_n: f64,
    pub cot: f64,
    pub lambda: f64,
    /// Some other set at the same gain is at least as good in both and better in one.
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub set: String,
    pub points: usize,
    /// Dominated at every gain where it has a point.
    pub dominated: bool,
}

/// At `omega_n`, `efficient` walks cheaper but recovers slower than `fast`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub omega_n: f64,
    pub efficient: String,
    pub fast: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    pub points: Vec<ParetoPoint>,
    pub sets: Vec<SetSummary>,
    pub tradeoffs: Vec<Tradeoff>,
}

fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.cot <= b.cot && a.lambda <= b.lambda && (a.cot < b.cot || a.lambda < b.lambda)
}

/// Per-gain dominance between sets, using records with both a measured cost and an averaged rate.
pub fn pareto_table(records: &[SweepRecord]) -> ParetoTable {
    let mut points: Vec<ParetoPoint> = records
        .iter()
        .filter(|r| !r.fell)
        .filter_map(|r| {
            Some(ParetoPoint {
                set: r.set.clone(),
                omega_n: r.omega_n,
                cot: r.cot_meas?,
                lambda: r.lambda_avg?,
                dominated: false,
            })
        })
        .collect();
    let n = points.len();
    for i in 0..n {
        let dom = (0..n).any(|j| {
            j != i
                && points[j].omega_n == points[i].omega_n
                && points[j].set != points[i].set
                && dominates(&points[j], &points[i])
        });
        points[i].dominated = dom;
    }

    let mut names: Vec<String> = Vec::new();
    for r in records {
        if !names.contains(&r.set) {
            names.push(r.set.clone());
        }
    }
    let sets = names
        .into_iter()
        .map(|set| {
            let mine: Vec<&ParetoPoint> = points.iter().filter(|p| p.set == set).collect();
            SetSummary { points: mine.len(), dominated: !mine.is_empty() && mine.iter().all(|p| p.dominated), set }
        })
        .collect();

    let mut tradeoffs = Vec::new();
    for a in &points {
        for b in &points {
            if a.omega_n == b.omega_n && a.set != b.set && a.cot < b.cot && a.lambda > b.lambda {
                tradeoffs.push(Tradeoff { omega_n: a.omega_n, efficient: a.set.clone(), fast: b.set.clone() });
            }
        }
    }
    ParetoTable { points, sets, tradeoffs }
}
