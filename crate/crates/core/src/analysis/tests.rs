use super::*;
use crate::model::{PushPoint, RobotParams, State, NQ};
use crate::simulate::{find_limit_cycle, ControllerConfig, RolloutOptions};
use crate::test_support::set5_gait;
use crate::transcription::GaitProblem;

fn record(set: &str, omega: f64, cot: f64, lambda: f64) -> SweepRecord {
    SweepRecord {
        set: set.into(),
        omega_n: omega,
        cot_opt: 0.07,
        cot_meas: Some(cot),
        ratio: Some(cot / 0.07),
        lambda_hip: Some(lambda),
        lambda_knee: Some(lambda),
        lambda_torso: Some(lambda),
        lambda_avg: Some(lambda),
        steps: 10,
        fell: false,
        error: None,
    }
}

#[test]
fn geometric_decay_gives_its_ratio() {
    for r in [0.2, 0.55, 0.9] {
        let e: Vec<f64> = (0..40).map(|k| 0.3 * f64::powi(r, k)).collect();
        let f = fit_rate(&e).unwrap();
        assert!((f.lambda - r).abs() < 1e-12, "{r}: {f:?}");
        // samples lie in [1e-6, 0.5 e0]
        let expect = e.iter().skip(1).filter(|&&x| x >= 1e-6 && x <= 0.15).count();
        assert_eq!(f.samples, expect);
    }
}

#[test]
fn rate_fit_ignores_uniform_error_scaling() {
    let e: Vec<f64> = [1.0, 0.45, 0.31, 0.12, 0.07, 0.02, 0.011, 0.004].to_vec();
    let a = fit_rate(&e).unwrap();
    for s in [1e-3, 0.1, 7.0, 1e4] {
        let b = fit_rate(&e.iter().map(|x| x * s).collect::<Vec<_>>()).unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-12);
        assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn rate_fit_needs_three_samples() {
    assert!(fit_rate(&[]).is_none());
    assert!(fit_rate(&[1.0, 0.4, 0.2]).is_none());
    assert!(fit_rate(&[1.0, 0.4, 0.2, 0.1]).is_some());
    // growing errors never enter the window below half the initial error
    assert!(fit_rate(&[0.1, 0.2, 0.4, 0.8, 1.6]).is_none());
}

#[test]
fn section_error_weights_rates() {
    let a = State::new([0.0; NQ], [0.0; NQ]);
    let mut b = a;
    b.q[2] = 0.3;
    assert!((section_error(&a, &b) - 0.3).abs() < 1e-15);
    let mut c = a;
    c.dq[4] = 4.0;
    assert!((section_error(&a, &c) - 4.0 * RATE_WEIGHT).abs() < 1e-15);
    assert_eq!(section_error(&b, &b), 0.0);
}

#[test]
fn zero_push_is_degenerate() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(80.0);
    let lc = find_limit_cycle(&g.params, g, &ctrl, &RolloutOptions::default(), 1e-9, 200).unwrap();
    let push = PushExperiment { impulse: 0.0, observe_steps: 4, ..PushExperiment::default() };
    let o = convergence_rate(&g.params, g, &ctrl, &push, &lc).unwrap();
    assert!(o.degenerate && !o.fell);
    assert!(o.lambda.is_none());
    assert!(o.errors.iter().all(|&e| e < 1e-7), "{:?}", o.errors);
    assert_eq!(o.steps_survived, 4);
}

#[test]
fn knee_push_recovers_geometrically() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(80.0);
    let lc = find_limit_cycle(&g.params, g, &ctrl, &RolloutOptions::default(), 1e-9, 200).unwrap();
    let o = convergence_rate(&g.params, g, &ctrl, &PushExperiment::at(PushPoint::StanceKnee), &lc).unwrap();
    assert!(!o.fell && !o.degenerate);
    assert_eq!(o.steps_survived, 15);
    assert!(o.errors.iter().all(|&e| e >= 0.0));
    let lambda = o.lambda.unwrap();
    assert!(lambda > 0.0 && lambda < 1.0, "{lambda}");
    assert!(o.errors.last().unwrap() < &(1e-3 * o.errors[0]));
    assert!(convergence_rate(
        &g.params,
        g,
        &ctrl,
        &PushExperiment { time: -0.1, ..PushExperiment::default() },
        &lc
    )
    .is_err());
}

#[test]
fn sweep_averages_push_rates_and_is_deterministic() {
    let g = set5_gait();
    let gaits = vec![("set5".to_string(), g.clone())];
    let cfg = SweepConfig::default();
    let a = sweep_omega(&gaits, &[100.0], &cfg).unwrap();
    let b = sweep_omega(&gaits, &[100.0], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 1);
    let r = &a[0];
    let (h, k, t) = (r.lambda_hip.unwrap(), r.lambda_knee.unwrap(), r.lambda_torso.unwrap());
    assert!((r.lambda_avg.unwrap() - (h + k + t) / 3.0).abs() < 1e-15);
    assert_eq!(r.steps, 10);
    assert!(r.ratio.unwrap() >= 1.0);
    assert_eq!(records_csv(&a).unwrap(), records_csv(&b).unwrap());
}

#[test]
fn sweep_rejects_empty_grids() {
    let g = set5_gait();
    let gaits = vec![("set5".to_string(), g.clone())];
    assert!(sweep_omega(&gaits, &[], &SweepConfig::default()).is_err());
    assert!(sweep_omega(&[], &[80.0], &SweepConfig::default()).is_err());
    assert!(sweep_omega(&gaits, &[-5.0], &SweepConfig::default()).is_err());
}

#[test]
fn csv_has_long_format_columns() {
    let mut r = record("set2", 70.0, 0.09, 0.4);
    r.lambda_torso = None;
    r.lambda_avg = None;
    let csv = records_csv(&[r]).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "set,omega_n,cot_opt,cot_meas,ratio,lambda_hip,lambda_knee,lambda_torso,lambda_avg,steps"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 10);
    assert_eq!(row[0], "set2");
    assert_eq!(row[7], "");
    assert_eq!(row[9], "10");
}

#[test]
fn set_dominated_at_every_gain_is_flagged() {
    let recs = vec![
        record("a", 60.0, 0.08, 0.5),
        record("b", 60.0, 0.09, 0.6),
        record("c", 60.0, 0.07, 0.7),
        record("a", 80.0, 0.075, 0.45),
        record("b", 80.0, 0.08, 0.5),
        record("c", 80.0, 0.07, 0.65),
    ];
    let t = pareto_table(&recs);
    let flag = |s: &str| t.sets.iter().find(|x| x.set == s).unwrap().dominated;
    assert!(!flag("a"));
    assert!(flag("b"));
    assert!(!flag("c"));
    assert!(t.tradeoffs.iter().any(|x| x.efficient == "c" && x.fast == "a" && x.omega_n == 60.0));
    assert!(t.tradeoffs.iter().all(|x| x.efficient != "b"));
}

#[test]
fn dominance_needs_every_gain() {
    let recs = vec![
        record("a", 60.0, 0.08, 0.5),
        record("b", 60.0, 0.09, 0.6),
        record("a", 80.0, 0.08, 0.5),
        record("b", 80.0, 0.07, 0.6),
    ];
    let t = pareto_table(&recs);
    assert!(t.sets.iter().all(|s| !s.dominated));
}

#[test]
fn single_set_is_never_dominated() {
    let recs = vec![record("only", 60.0, 0.1, 0.9), record("only", 80.0, 0.12, 0.95)];
    let t = pareto_table(&recs);
    assert_eq!(t.sets.len(), 1);
    assert!(!t.sets[0].dominated);
    assert_eq!(t.sets[0].points, 2);
    assert!(t.tradeoffs.is_empty());
}

#[test]
fn incomplete_records_are_left_out_of_the_table() {
    let mut fell = record("b", 60.0, 0.05, 0.1);
    fell.fell = true;
    let mut partial = record("c", 60.0, 0.05, 0.1);
    partial.lambda_avg = None;
    let t = pareto_table(&[record("a", 60.0, 0.08, 0.5), fell, partial]);
    assert_eq!(t.points.len(), 1);
    assert!(!t.sets[0].dominated);
    assert_eq!(t.sets.len(), 3);
}

#[test]
fn linear_fit_recovers_a_line() {
    let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 0.5 - 0.25 * i as f64)).collect();
    let f = linear_fit(&pts).unwrap();
    assert!((f.slope + 0.25).abs() < 1e-14 && (f.intercept - 0.5).abs() < 1e-14);
    assert!((f.r2 - 1.0).abs() < 1e-14);
    let noisy = [(0.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 5.0)];
    let f = linear_fit(&noisy).unwrap();
    // numpy.polyfit: slope 1.1, intercept 1.1; corrcoef^2 = 0.691428...
    assert!((f.slope - 1.1).abs() < 1e-12 && (f.intercept - 1.1).abs() < 1e-12);
    assert!((f.r2 - 0.691_428_571_428_571_4).abs() < 1e-12);
    assert!(linear_fit(&[(1.0, 2.0)]).is_none());
    assert!(linear_fit(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
}

#[test]
fn mass_sweep_records_impossible_points_and_rejects_empty_grid() {
    let base = RobotParams::preset(5).unwrap();
    let cfg = MassSweepConfig {
        base: base.clone(),
        segment: Segment::Lower,
        masses: vec![40.0],
        problem: GaitProblem::default(),
        solve: crate::transcription::default_solve_options(),
    };
    let m = sweep_mass(&cfg).unwrap();
    assert_eq!(m.records.len(), 1);
    assert!(m.records[0].error.is_some() && m.records[0].cot_opt.is_none());
    assert!((m.records[0].torso_mass - (70.0 - 14.0 - 80.0)).abs() < 1e-12);
    assert!(m.fit.is_none());
    assert!(sweep_mass(&MassSweepConfig { masses: vec![], ..cfg }).is_err());
    assert_eq!(Segment::parse("upper"), Some(Segment::Upper));
    assert_eq!(Segment::parse("shin"), Some(Segment::Lower));
    assert_eq!(Segment::parse("arm"), None);
}

#[test]
fn unknown_preset_is_rejected() {
    let r = optimize_presets(&[6], &GaitProblem::default(), &crate::transcription::default_solve_options());
    assert!(matches!(r, Err(AnalysisError::InvalidConfig(_))));
}

#[test]
fn optimized_step_has_the_expected_shape() {
    let f = gait_features(set5_gait());
    assert!(f.clearance_active, "{f:?}");
    assert!(f.min_clearance >= 0.02 - 1e-6);
    assert!(f.speeds_up(), "{f:?}");
    assert!(f.com_height_variation > 0.0 && f.compass_variation > 0.0);
}
