use std::sync::OnceLock;

use crate::model::RobotParams;
use crate::nlpsolve::SolveStatus;
use crate::transcription::{default_solve_options, optimize, GaitProblem, GaitSolution};

/// Set 5 optimum at the default problem, solved once per test binary.
pub fn set5_gait() -> &'static GaitSolution {
    static GAIT: OnceLock<GaitSolution> = OnceLock::new();
    GAIT.get_or_init(|| {
        let params = RobotParams::preset(5).unwrap();
        let g = optimize(&params, &GaitProblem::default(), &default_solve_options(), None).unwrap();
        assert_eq!(g.report.status, SolveStatus::Optimal);
        g
    })
}
