use serde::{Deserialize, Serialize};

use crate::model::{absolute_angles, Biped, STANCE_SHIN, STANCE_THIGH};
use crate::transcription::GaitSolution;

/// Clearance counts as active within this distance of its bound, m.
const ACTIVE_TOL: f64 = 1e-3;

/// Qualitative shape of an optimized step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitFeatures {
    /// Lowest swing-tip height over the knots under the clearance rule, m.
    pub min_clearance: f64,
    pub clearance_active: bool,
    pub com_speed_start: f64,
    pub com_speed_end: f64,
    /// Peak-to-peak centre-of-mass height over the middle half of the step, m.
    pub com_height_variation: f64,
    /// Height variation of a rigid leg of the same length over the same horizontal span, m.
    pub compass_variation: f64,
}

impl GaitFeatures {
    pub fn speeds_up(&self) -> bool {
        self.com_speed_end > self.com_speed_start
    }

    pub fn flatter_than_compass(&self) -> bool {
        self.com_height_variation < self.compass_variation
    }
}

pub fn gait_features(gait: &GaitSolution) -> GaitFeatures {
    let biped = Biped::new(gait.params.clone());
    let n = gait.intervals();
    let states: Vec<_> = (0..=n).map(|k| gait.state(k)).collect();

    let min_clearance = gait
        .problem
        .clearance_knots()
        .map(|k| biped.swing_tip.position(&absolute_angles(&states[k].q))[1])
        .fold(f64::INFINITY, f64::min);
    let speed = |k: usize| {
        let v = biped.com_velocity(&states[k]);
        v[0].hypot(v[1])
    };

    let com: Vec<[f64; 2]> = states[n / 4..=3 * n / 4]
        .iter()
        .map(|s| biped.com.position(&absolute_angles(&s.q)))
        .collect();
    let (ylo, yhi) = com.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
    let (xlo, xhi) = com.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    let leg = gait.params.lengths[STANCE_THIGH] + gait.params.lengths[STANCE_SHIN];
    let arc = |x: f64| (leg * leg - x * x).max(0.0).sqrt();
    let top = if xlo <= 0.0 && xhi >= 0.0 { leg } else { arc(xlo).max(arc(xhi)) };
    let compass_variation = top - arc(xlo).min(arc(xhi));

    GaitFeatures {
        min_clearance,
        clearance_active: (min_clearance - gait.problem.clearance).abs() <= ACTIVE_TOL,
        com_speed_start: speed(0),
        com_speed_end: speed(n),
        com_height_variation: yhi - ylo,
        compass_variation,
    }
}
