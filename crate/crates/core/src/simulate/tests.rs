use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dopri::{Control, Dopri5, SegmentEnd, Tolerance};
use super::*;
use crate::model::{absolute_angles, Biped, PushPoint, RobotParams, State, NQ, NU};
use crate::test_support::set5_gait;
use crate::transcription::Knot;

fn max_state_diff(a: &State, b: &State) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..NQ {
        m = m.max((a.q[i] - b.q[i]).abs()).max((a.dq[i] - b.dq[i]).abs());
    }
    m
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    let mut q = [0.0; NQ];
    let mut dq = [0.0; NQ];
    q[0] = std::f64::consts::PI + rng.gen_range(-0.4..0.4);
    q[1] = std::f64::consts::PI + rng.gen_range(-0.4..0.4);
    q[2] = rng.gen_range(-1.0..0.0);
    q[3] = rng.gen_range(-1.0..0.0);
    q[4] = rng.gen_range(-0.3..0.3);
    for v in dq.iter_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    State::new(q, dq)
}

fn model_terms(b: &Biped, s: &State) -> ([f64; NU], [[f64; NU]; NU]) {
    // S D^-1 (C dq + G) and S D^-1 B, through forward dynamics
    let zero = b.forward_dynamics(&s.q, &s.dq, &[0.0; NU]).unwrap();
    let mut sdb = [[0.0; NU]; NU];
    for j in 0..NU {
        let mut u = [0.0; NU];
        u[j] = 1.0;
        let a = b.forward_dynamics(&s.q, &s.dq, &u).unwrap();
        let mut d = [0.0; NQ];
        for i in 0..NQ {
            d[i] = a[i] - zero[i];
        }
        let col = selected(&d);
        for i in 0..NU {
            sdb[i][j] = col[i];
        }
    }
    let sz = selected(&zero);
    (sz.map(|v| -v), sdb)
}

#[test]
fn gains_follow_natural_frequency() {
    let c = ControllerConfig::new(80.0);
    assert_eq!(c.kp(), 6400.0);
    assert_eq!(c.kd(), 160.0);
    let c = ControllerConfig { zeta: 0.5, ..c };
    assert_eq!(c.kd(), 80.0);
}

#[test]
fn selected_outputs_track_pd_command_exactly_without_feedforward() {
    let b = Biped::new(RobotParams::preset(5).unwrap());
    let ctrl = ControllerConfig::new(80.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let s = random_state(&mut rng);
        let d = random_state(&mut rng);
        let r = RefPoint { q: d.q, dq: d.dq, u_ff: [0.0; NU] };
        let cmd = pfl_torque(&b, &s, &r, &ctrl).unwrap();
        let ddq = b.forward_dynamics(&s.q, &s.dq, &cmd.u).unwrap();
        let sq = selected(&ddq);
        let scale = cmd.v.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..NU {
            assert!((sq[i] - cmd.v[i]).abs() <= 1e-9 * scale, "{i}: {} vs {}", sq[i], cmd.v[i]);
        }
    }
}

#[test]
fn feedforward_adds_its_open_loop_output_acceleration() {
    let b = Biped::new(RobotParams::preset(5).unwrap());
    let ctrl = ControllerConfig::new(70.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let s = random_state(&mut rng);
        let d = random_state(&mut rng);
        let u_ff = [0; NU].map(|_| rng.gen_range(-80.0..80.0));
        let cmd = pfl_torque(&b, &s, &RefPoint { q: d.q, dq: d.dq, u_ff }, &ctrl).unwrap();
        let (_, sdb) = model_terms(&b, &s);
        let sq = selected(&b.forward_dynamics(&s.q, &s.dq, &cmd.u).unwrap());
        for i in 0..NU {
            let expect = cmd.v[i] + (0..NU).map(|j| sdb[i][j] * u_ff[j]).sum::<f64>();
            assert!((sq[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{i}");
        }
    }
}

#[test]
fn zero_error_feedback_cancels_model_terms() {
    let g = set5_gait();
    let b = Biped::new(g.params.clone());
    let ctrl = ControllerConfig::new(80.0);
    for k in [0, 17, 40] {
        let s = g.state(k);
        let cmd = pfl_torque(&b, &s, &RefPoint { q: s.q, dq: s.dq, u_ff: g.torques[k] }, &ctrl).unwrap();
        assert_eq!(cmd.v, [0.0; NU]);
        let (sh, sdb) = model_terms(&b, &s);
        // S D^-1 B u_fb = S D^-1 (C dq + G)
        for i in 0..NU {
            let lhs: f64 = (0..NU).map(|j| sdb[i][j] * cmd.u_fb[j]).sum();
            assert!((lhs - sh[i]).abs() <= 1e-8 * sh[i].abs().max(1.0), "{k} {i}: {lhs} vs {}", sh[i]);
        }
        for i in 0..NU {
            assert!((cmd.u[i] - g.torques[k][i] - cmd.u_fb[i]).abs() < 1e-12);
        }
    }
}

/// Closed loop around a fixed posture: the selected error obeys `e'' + Kd e' + Kp e = 0`.
fn integrate_fixed_reference(omega: f64, e0: [f64; NQ], de0: [f64; NQ], t_end: f64) -> (State, State) {
    let b = Biped::new(RobotParams::preset(5).unwrap());
    let ctrl = ControllerConfig::new(omega);
    let target = set5_gait().state(30);
    let r = RefPoint { q: target.q, dq: [0.0; NQ], u_ff: [0.0; NU] };
    let mut y0 = [0.0; 2 * NQ];
    for i in 0..NQ {
        y0[i] = target.q[i] + e0[i];
        y0[NQ + i] = de0[i];
    }
    let mut integ = Dopri5::new(Tolerance { rtol: 1e-11, atol: 1e-12 });
    let end = integ
        .integrate(
            |_t, y: &[f64; 2 * NQ]| -> Result<[f64; 2 * NQ], SimError> {
                let s = State::from_slice(y);
                let u = pfl_torque(&b, &s, &r, &ctrl)?.u;
                let a = b.forward_dynamics(&s.q, &s.dq, &u)?;
                let mut out = [0.0; 2 * NQ];
                out[..NQ].copy_from_slice(&s.dq);
                out[NQ..].copy_from_slice(&a);
                Ok(out)
            },
            0.0,
            y0,
            t_end,
            None,
            |_| Control::Continue,
        )
        .unwrap();
    let SegmentEnd::Reached { y } = end else { panic!("segment did not complete") };
    (State::from_slice(&y), State::new(r.q, r.dq))
}

#[test]
fn selected_error_follows_critically_damped_response() {
    let omega = 80.0;
    let e0 = [0.01, -0.02, 0.015, 0.01, -0.01];
    for t in [0.5 / omega, 2.0 / omega, 5.0 / omega] {
        let (s, r) = integrate_fixed_reference(omega, e0, [0.0; NQ], t);
        let mut e = [0.0; NQ];
        let mut de = [0.0; NQ];
        for i in 0..NQ {
            e[i] = s.q[i] - r.q[i];
            de[i] = s.dq[i] - r.dq[i];
        }
        let (se, sde, se0) = (selected(&e), selected(&de), selected(&e0));
        let decay = (-omega * t).exp();
        for i in 0..NU {
            let exact = se0[i] * (1.0 + omega * t) * decay;
            let exact_rate = -se0[i] * omega * omega * t * decay;
            assert!((se[i] - exact).abs() < 1e-8, "t {t} output {i}: {} vs {exact}", se[i]);
            assert!((sde[i] - exact_rate).abs() < 1e-6, "t {t} output {i}: {} vs {exact_rate}", sde[i]);
        }
    }
}

#[test]
fn offset_along_the_double_pole_decays_99_percent_in_five_time_constants() {
    let omega = 80.0;
    let e0 = [0.004, -0.003, 0.002, 0.005, -0.002];
    let de0 = e0.map(|v| -omega * v);
    let (s, r) = integrate_fixed_reference(omega, e0, de0, 5.0 / omega);
    let mut e = [0.0; NQ];
    for i in 0..NQ {
        e[i] = s.q[i] - r.q[i];
    }
    let (se, se0) = (selected(&e), selected(&e0));
    let norm = |v: &[f64; NU]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(&se) <= 0.01 * norm(&se0), "{} of {}", norm(&se), norm(&se0));
}

#[test]
fn reference_interpolates_states_and_holds_torque() {
    let g = set5_gait();
    let zoh = Reference::new(g, FeedforwardHold::Zoh).unwrap();
    let lin = Reference::new(g, FeedforwardHold::Linear).unwrap();
    let h = g.problem.h;
    let tau = 7.25 * h;
    let k = zoh.interval_at(tau);
    assert_eq!(k, 7);
    let a = zoh.at(tau, k);
    for i in 0..NQ {
        let expect = 0.75 * g.knots[7].q[i] + 0.25 * g.knots[8].q[i];
        assert!((a.q[i] - expect).abs() < 1e-12);
    }
    assert_eq!(a.u_ff, g.torques[7]);
    let b = lin.at(tau, k);
    for i in 0..NU {
        let expect = 0.75 * g.torques[7][i] + 0.25 * g.torques[8][i];
        assert!((b.u_ff[i] - expect).abs() < 1e-12);
    }
    // late impact: the final knot is held
    let late = zoh.at(1.5 * zoh.duration, zoh.interval_at(1.5 * zoh.duration));
    assert_eq!(late.q, g.knots.last().unwrap().q);
    assert_eq!(late.u_ff, *g.torques.last().unwrap());
}

#[test]
fn malformed_gait_and_controller_are_rejected() {
    let g = set5_gait();
    let mut bad = g.clone();
    bad.knots.pop();
    assert!(matches!(Reference::new(&bad, FeedforwardHold::Zoh), Err(SimError::InvalidGait(_))));
    let o = RolloutOptions::default();
    let ctrl = ControllerConfig::new(0.0);
    assert!(matches!(rollout(&g.params, g, &ctrl, &o), Err(SimError::InvalidConfig(_))));
    let o = RolloutOptions { rtol: -1.0, ..o };
    assert!(matches!(rollout(&g.params, g, &ControllerConfig::new(80.0), &o), Err(SimError::InvalidConfig(_))));
}

#[test]
fn passive_flow_conserves_energy() {
    let g = set5_gait();
    let ol = open_loop(&g.params, &g.state(0), &[], 0.0, 0.5, Tolerance::default()).unwrap();
    let e0 = ol.energy[0].1;
    assert!(ol.energy.len() > 10);
    for &(t, e) in &ol.energy {
        assert!(((e - e0) / e0).abs() <= 1e-6, "t {t}: {e} vs {e0}");
    }
    assert!((ol.energy.last().unwrap().0 - 0.5).abs() < 1e-12);
}

#[test]
fn held_torque_open_loop_matches_optimized_cost() {
    let g = set5_gait();
    let p = &g.params;
    let mut work = 0.0;
    for k in 0..g.intervals() {
        let o = open_loop(p, &g.state(k), &g.torques[k..k + 1], g.problem.h, g.problem.h, Tolerance::default())
            .unwrap();
        work += o.work;
    }
    let mgd = p.total_mass() * p.gravity * g.problem.stride_length;
    let cot = work / mgd;
    // smoothing adds at most eps per channel; trapezoid quadrature of |P| adds a little more
    let smoothing = NU as f64 * g.problem.epsilon_sq.sqrt() * g.duration() / mgd;
    assert!((cot - g.cot_opt).abs() <= smoothing + 1e-3, "{cot} vs {}", g.cot_opt);
}

#[test]
fn measured_cost_of_zero_work_is_zero() {
    let p = RobotParams::preset(5).unwrap();
    let s = State::new([0.0; NQ], [0.0; NQ]);
    let ev = |index| StepEvent {
        index,
        t: 0.6 * (index + 1) as f64,
        duration: 0.6,
        pre: s,
        post: s,
        length: 0.6,
        work: 0.0,
        impact_impulse: [0.0; 2],
        energy_loss: 0.0,
    };
    let mut r = SimResult { samples: vec![], steps: vec![ev(0), ev(1), ev(2)], fall: None, final_state: s, final_time: 1.8 };
    assert_eq!(measure_cot(&r, &p).unwrap(), 0.0);
    r.steps[1].work = 41.2;
    let expect = 41.2 / (p.total_mass() * p.gravity * 1.2);
    assert!((measure_cot(&r, &p).unwrap() - expect).abs() < 1e-15);
    r.steps.clear();
    assert!(matches!(measure_cot(&r, &p), Err(SimError::NoCompletedStep)));
}

#[test]
fn walker_completes_ten_steps_and_impacts_are_clean() {
    let g = set5_gait();
    let b = Biped::new(g.params.clone());
    let o = RolloutOptions { record: true, ..RolloutOptions::default() };
    let r = rollout(&g.params, g, &ControllerConfig::new(80.0), &o).unwrap();
    assert!(r.fall.is_none(), "{:?}", r.fall);
    assert_eq!(r.steps_completed(), 10);
    for ev in &r.steps {
        let tip = b.swing_tip.position(&absolute_angles(&ev.pre.q));
        assert!(tip[1].abs() < 1e-8, "step {}: tip height {}", ev.index, tip[1]);
        assert!(tip[0] > o.min_impact_x);
        let ke_pre = b.kinetic_energy(&ev.pre.q, &ev.pre.dq);
        let ke_post = b.kinetic_energy(&ev.post.q, &ev.post.dq);
        assert!(ke_post < ke_pre, "step {}", ev.index);
        assert!((ke_pre - ke_post - ev.energy_loss).abs() < 1e-9 * ke_pre);
    }
    for w in r.samples.windows(2) {
        assert!(w[1].t >= w[0].t);
    }
    // the swing tip stays above ground between the exempt ends of every step
    let mut start = 0.0;
    for ev in &r.steps {
        for s in r.samples.iter().filter(|s| s.t > start + 0.1 && s.t < ev.t - 0.1) {
            let tip = b.swing_tip.position(&absolute_angles(&s.q));
            assert!(tip[1] > 0.0, "t {}: {}", s.t, tip[1]);
        }
        start = ev.t;
    }
    let csv = r.samples_csv().unwrap();
    assert_eq!(csv.lines().count(), r.samples.len() + 1);
    assert!(csv.starts_with("t,q1,q2,q3,q4,q5,dq1"));
}

#[test]
fn halving_tolerance_barely_moves_one_step() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(80.0);
    let a = rollout(&g.params, g, &ctrl, &RolloutOptions { steps: 1, ..Default::default() }).unwrap();
    let b = rollout(&g.params, g, &ctrl, &RolloutOptions { steps: 1, rtol: 5e-10, atol: 5e-10, ..Default::default() })
        .unwrap();
    assert_eq!(a.steps_completed(), 1);
    let d = max_state_diff(&a.final_state, &b.final_state);
    assert!(d <= 1e-7, "{d}");
}

#[test]
fn rollouts_are_deterministic() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(90.0);
    let o = RolloutOptions { steps: 3, perturbation: Some(Perturbation::push(PushPoint::Torso, 10.0, 1)), ..Default::default() };
    let a = rollout(&g.params, g, &ctrl, &o).unwrap();
    let b = rollout(&g.params, g, &ctrl, &o).unwrap();
    assert_eq!(a, b);
}

#[test]
fn short_force_pulses_converge_to_the_impulse() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(80.0);
    let run = |p| rollout(&g.params, g, &ctrl, &RolloutOptions { steps: 1, perturbation: Some(p), ..Default::default() }).unwrap();
    let imp = run(Perturbation::Impulse { point: PushPoint::Hip, impulse: [10.0, 0.0], step: 0, time: 0.1 });
    let errs: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&d| {
            let f = run(Perturbation::Force { point: PushPoint::Hip, force: [10.0 / d, 0.0], step: 0, start: 0.1, duration: d });
            assert!(f.fall.is_none());
            max_state_diff(&f.final_state, &imp.final_state)
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.4..0.6).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn higher_gains_front_load_step_work() {
    let g = set5_gait();
    let frac = |omega: f64| {
        let o = RolloutOptions { steps: 6, record: true, ..Default::default() };
        let r = rollout(&g.params, g, &ControllerConfig::new(omega), &o).unwrap();
        let st = &r.steps[5];
        let t0 = st.t - st.duration;
        let at = |t: f64| r.samples.iter().find(|s| s.t >= t).unwrap().work;
        (at(t0 + 0.01) - at(t0)) / st.work
    };
    let (lo, hi) = (frac(60.0), frac(100.0));
    // far above the 10 ms share of a 0.6 s step
    assert!(lo > 0.05 && hi > lo, "{lo} {hi}");
}

#[test]
fn closed_loop_cost_exceeds_optimum_and_falls_with_gain() {
    let g = set5_gait();
    let mut last = f64::INFINITY;
    for omega in [60.0, 80.0, 100.0] {
        let r = rollout(&g.params, g, &ControllerConfig::new(omega), &RolloutOptions { steps: 8, ..Default::default() })
            .unwrap();
        assert!(r.fall.is_none());
        let ratio = measure_cot(&r, &g.params).unwrap() / g.cot_opt;
        assert!(ratio >= 1.0 && ratio < last, "omega {omega}: {ratio}");
        last = ratio;
    }
}

#[test]
fn limit_cycle_is_a_fixed_point_near_the_gait_start() {
    let g = set5_gait();
    let ctrl = ControllerConfig::new(80.0);
    let lc = find_limit_cycle(&g.params, g, &ctrl, &RolloutOptions::default(), 1e-8, 100).unwrap();
    assert!(lc.residual <= 1e-8);
    let once =
        rollout(&g.params, g, &ctrl, &RolloutOptions { steps: 1, initial: Some(lc.state), ..Default::default() }).unwrap();
    assert!(max_state_diff(&once.final_state, &lc.state) <= 1e-6);
    let start = g.state(0);
    for i in 0..NQ {
        assert!((lc.state.q[i] - start.q[i]).abs() < 0.05, "q{}", i + 1);
    }
}

#[test]
fn limit_cycle_search_reports_a_fall() {
    let g = set5_gait();
    let mut s = g.state(0);
    s.dq[4] += 8.0;
    let o = RolloutOptions { initial: Some(s), ..Default::default() };
    match find_limit_cycle(&g.params, g, &ControllerConfig::new(80.0), &o, 1e-8, 30) {
        Err(SimError::NonConvergent { fall: Some(_), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_interval_gait_gives_a_valid_reference() {
    let g = set5_gait();
    let mut one = g.clone();
    one.knots.truncate(2);
    one.knots[1] = Knot { t: one.problem.h, ..one.knots[1] };
    one.torques.truncate(1);
    let r = Reference::new(&one, FeedforwardHold::Zoh).unwrap();
    assert_eq!(r.intervals(), 1);
    assert!((r.duration - g.problem.h).abs() < 1e-15);
}

#[test]
fn dopri_is_accurate_and_locates_events() {
    let mut integ = Dopri5::new(Tolerance { rtol: 1e-10, atol: 1e-12 });
    let f = |_t: f64, y: &[f64; 2]| -> Result<[f64; 2], ()> { Ok([y[1], -y[0]]) };
    let end = integ.integrate(f, 0.0, [0.0, 1.0], 3.0, None, |_| Control::Continue).unwrap();
    let SegmentEnd::Reached { y } = end else { panic!() };
    assert!((y[0] - 3.0f64.sin()).abs() < 1e-8 && (y[1] - 3.0f64.cos()).abs() < 1e-8);

    integ.reset();
    let mut ev = |_t: f64, y: &[f64; 2]| y[1];
    let mut seen = 0;
    let end = integ
        .integrate(f, 0.0, [0.0, 1.0], 3.0, Some(&mut ev), |st| {
            let mid = 0.5 * (st.t0 + st.t1);
            assert!((st.eval(mid)[0] - mid.sin()).abs() < 1e-8);
            seen += 1;
            Control::Continue
        })
        .unwrap();
    let SegmentEnd::Event { t, .. } = end else { panic!("{end:?}") };
    assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "{t}");
    assert!(seen > 3);
}
