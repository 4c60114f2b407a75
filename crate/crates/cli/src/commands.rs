use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gaitlab::analysis::{
    convergence_rate, optimize_presets, pareto_table, records_csv, sweep_mass, sweep_omega, MassSweep,
    MassSweepConfig, ParetoTable, PushOutcome, Segment, SweepRecord, REFERENCE_COT,
};
use gaitlab::model::NQ;
use gaitlab::nlpsolve::SolveStatus;
use gaitlab::simulate::{find_limit_cycle, measure_cot, rollout, Perturbation, RolloutOptions, SimResult};
use gaitlab::transcription::{initial_guess, optimize, GaitSolution};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Cli, Command, MassArgs, OmegaArgs, OptimizeArgs, ParetoArgs, PushArgs, SimulateArgs, SweepKind};
use crate::config::{grid, parse_point, parse_range, preset, preset_index, preset_list, ExperimentConfig};
use crate::error::{runtime, CliError};
use crate::output::{sha256_hex, OutDir, Stamp, OUT_DIR_ENV};
use crate::plot::LinePlot;

const CYCLE_TOL: f64 = 1e-9;
const CYCLE_MAX_STEPS: usize = 200;

/// Shared state of one invocation.
struct Run {
    command: &'static str,
    cfg: ExperimentConfig,
    out: OutDir,
    plots: bool,
    inputs: BTreeMap<String, String>,
    extra: Value,
}

impl Run {
    fn stamp(&self) -> Result<Stamp, CliError> {
        let mut cfg = self.cfg.clone();
        cfg.output_dir = None;
        let hashed = json!({ "command": self.command, "config": cfg, "inputs": self.inputs, "extra": self.extra });
        Stamp::new(&hashed, self.cfg.seed)
    }

    fn load_gait(&mut self, key: &str, path: &Path) -> Result<GaitSolution, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read gait file {}: {e}", path.display())))?;
        let gait = GaitSolution::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.inputs.insert(key.to_string(), sha256_hex(text.as_bytes()));
        Ok(gait)
    }

    fn plot(&mut self, name: &str, plot: LinePlot) -> Result<(), CliError> {
        if self.plots {
            self.out.write(name, plot.to_svg().as_bytes())?;
        }
        Ok(())
    }

    /// Writes `run.json` and returns it for printing.
    fn finish(mut self, summary: Value) -> Result<Value, CliError> {
        let stamp = self.stamp()?;
        let mut files: Vec<String> = self.out.written().to_vec();
        files.push("run.json".into());
        let run = json!({
            "command": self.command,
            "stamp": stamp,
            "config": self.cfg,
            "inputs": self.inputs,
            "options": self.extra,
            "files": files,
            "summary": summary,
        });
        self.out.write_json("run.json", &run)?;
        Ok(json!({ "command": self.command, "stamp": run["stamp"], "files": run["files"], "summary": run["summary"] }))
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("gaitlab-out"))
}

pub fn run(cli: Cli) -> Result<Value, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let command = match &cli.command {
        Command::Optimize(_) => "optimize",
        Command::Simulate(_) => "simulate",
        Command::Push(_) => "push",
        Command::Sweep { kind: SweepKind::Omega(_) } => "sweep omega",
        Command::Sweep { kind: SweepKind::Mass(_) } => "sweep mass",
        Command::Pareto(_) => "pareto",
    };
    match &cli.command {
        Command::Optimize(a) => a.problem.apply(&mut cfg)?,
        Command::Simulate(a) => {
            a.control.apply(&mut cfg)?;
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            if let Some(i) = a.impulse {
                cfg.push.impulse = i;
            }
            if let Some(t) = a.push_time {
                cfg.push.time = t;
            }
        }
        Command::Push(a) => a.apply(&mut cfg)?,
        Command::Sweep { kind: SweepKind::Omega(a) } => a.apply(&mut cfg)?,
        Command::Sweep { kind: SweepKind::Mass(a) } => a.apply(&mut cfg)?,
        Command::Pareto(_) => {}
    }
    cfg.validate()?;
    let out = OutDir::create(out_dir(&cli.out, &cfg))?;
    let run =
        Run { command, cfg, out, plots: !cli.no_plots, inputs: BTreeMap::new(), extra: Value::Object(Default::default()) };
    match &cli.command {
        Command::Optimize(a) => cmd_optimize(run, a),
        Command::Simulate(a) => cmd_simulate(run, a),
        Command::Push(a) => cmd_push(run, a),
        Command::Sweep { kind: SweepKind::Omega(a) } => cmd_sweep_omega(run, a),
        Command::Sweep { kind: SweepKind::Mass(a) } => cmd_sweep_mass(run, a),
        Command::Pareto(a) => cmd_pareto(run, a),
    }
}

fn reference_cot(cfg: &ExperimentConfig) -> Option<f64> {
    match (&cfg.robot, &cfg.preset) {
        (None, Some(p)) => preset_index(p).ok().map(|i| REFERENCE_COT[i - 1]),
        (None, None) => Some(REFERENCE_COT[4]),
        _ => None,
    }
}

fn cmd_optimize(mut run: Run, a: &OptimizeArgs) -> Result<Value, CliError> {
    let params = run.cfg.robot()?;
    let problem = run.cfg.problem.clone();
    let guess = match &a.guess {
        Some(p) => run.load_gait("guess", p)?.to_vector(),
        None => initial_guess(&params, &problem, run.cfg.seed),
    };
    let gait = optimize(&params, &problem, &run.cfg.solver, Some(&guess)).map_err(|e| CliError::Config(e.to_string()))?;

    run.out.write("gait.json", gait.to_json().map_err(runtime)?.as_bytes())?;
    run.out.write("gait.csv", gait.to_csv().map_err(runtime)?.as_bytes())?;
    let status = gait.report.status;
    let summary = json!({
        "status": status,
        "cot_opt": gait.cot_opt,
        "reference_cot": reference_cot(&run.cfg),
        "knots": gait.knots.len(),
        "intervals": gait.intervals(),
        "iterations": gait.report.iterations,
        "feasibility": gait.report.feasibility,
        "stationarity": gait.report.stationarity,
        "complementarity": gait.report.complementarity,
    });
    run.out.write_json("solve_report.json", &json!({ "stamp": run.stamp()?, "report": summary }))?;
    let done = run.finish(summary)?;
    if status != SolveStatus::Optimal {
        return Err(CliError::Solver(format!("solver stopped with status {status:?}")));
    }
    Ok(done)
}

fn events_csv(r: &SimResult) -> Result<String, CliError> {
    let mut header: Vec<String> =
        ["step", "t", "duration", "length", "work", "energy_loss", "impulse_x", "impulse_y"].map(String::from).to_vec();
    header.extend((1..=NQ).map(|i| format!("q{i}")));
    header.extend((1..=NQ).map(|i| format!("dq{i}")));
    let mut s = header.join(",");
    s.push('\n');
    for e in &r.steps {
        let mut row = vec![
            e.index.to_string(),
            e.t.to_string(),
            e.duration.to_string(),
            e.length.to_string(),
            e.work.to_string(),
            e.energy_loss.to_string(),
            e.impact_impulse[0].to_string(),
            e.impact_impulse[1].to_string(),
        ];
        row.extend(e.post.q.iter().map(|v| v.to_string()));
        row.extend(e.post.dq.iter().map(|v| v.to_string()));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

fn cmd_simulate(mut run: Run, a: &SimulateArgs) -> Result<Value, CliError> {
    let gait = run.load_gait("gait", &a.gait)?;
    let perturbation = match &a.push {
        Some(p) => Some(Perturbation::Impulse {
            point: parse_point(p)?,
            impulse: [run.cfg.push.impulse, 0.0],
            step: a.at_step,
            time: run.cfg.push.time,
        }),
        None => None,
    };
    run.extra = json!({ "perturbation": perturbation, "dense": !a.no_dense });
    let opts = RolloutOptions { steps: run.cfg.steps, record: !a.no_dense, perturbation, ..RolloutOptions::default() };
    let r = rollout(&gait.params, &gait, &run.cfg.controller, &opts).map_err(runtime)?;
    let cot = measure_cot(&r, &gait.params).ok();

    run.out.write("events.csv", events_csv(&r)?.as_bytes())?;
    if !a.no_dense {
        run.out.write("samples.csv", r.samples_csv().map_err(runtime)?.as_bytes())?;
    }
    let summary = json!({
        "steps_completed": r.steps_completed(),
        "fell": r.fell(),
        "fall": r.fall,
        "cot_meas": cot,
        "cot_opt": gait.cot_opt,
        "ratio": cot.map(|c| c / gait.cot_opt),
    });
    run.out.write_json("simulation.json", &json!({ "stamp": run.stamp()?, "summary": summary, "result": r }))?;
    if run.plots && !r.samples.is_empty() {
        let pts = |i: usize| r.samples.iter().map(|s| (s.t, s.q[i])).collect::<Vec<_>>();
        let mut p = LinePlot::new("Joint angles", "t (s)", "angle (rad)");
        for (i, name) in ["stance hip", "swing hip", "stance knee", "swing knee", "torso"].iter().enumerate() {
            p = p.series(name, pts(i));
        }
        run.plot("angles.svg", p)?;
    }
    run.finish(summary)
}

fn cmd_push(mut run: Run, a: &PushArgs) -> Result<Value, CliError> {
    let gait = run.load_gait("gait", &a.gait)?;
    let ctrl = run.cfg.controller;
    let cycle = find_limit_cycle(&gait.params, &gait, &ctrl, &RolloutOptions::default(), CYCLE_TOL, CYCLE_MAX_STEPS)
        .map_err(runtime)?;
    let mut outcomes: Vec<PushOutcome> = Vec::new();
    for point in run.cfg.push_points() {
        let exp = gaitlab::analysis::PushExperiment {
            point,
            impulse: run.cfg.push.impulse,
            time: run.cfg.push.time,
            observe_steps: run.cfg.push.observe_steps,
        };
        outcomes.push(convergence_rate(&gait.params, &gait, &ctrl, &exp, &cycle).map_err(runtime)?);
    }
    let mut csv = String::from("point,k,error\n");
    for o in &outcomes {
        for (k, e) in o.errors.iter().enumerate() {
            csv.push_str(&format!("{},{k},{e}\n", o.experiment.point.name()));
        }
    }
    run.out.write("push.csv", csv.as_bytes())?;
    let rows: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "point": o.experiment.point,
                "lambda": o.lambda,
                "fell": o.fell,
                "steps_survived": o.steps_survived,
                "degenerate": o.degenerate,
            })
        })
        .collect();
    let summary = json!({ "omega_n": ctrl.omega_n, "cycle_residual": cycle.residual, "pushes": rows });
    run.out.write_json("push.json", &json!({ "stamp": run.stamp()?, "limit_cycle": cycle, "outcomes": outcomes }))?;
    if run.plots {
        let mut p = LinePlot::new("Post-impact error after a push", "step", "log10 error");
        for o in &outcomes {
            let pts = o.errors.iter().enumerate().filter(|e| *e.1 > 0.0).map(|(k, e)| (k as f64, e.log10())).collect();
            p = p.series(o.experiment.point.name(), pts);
        }
        run.plot("push_errors.svg", p)?;
    }
    run.finish(summary)
}

fn per_set(records: &[SweepRecord], f: impl Fn(&SweepRecord) -> Option<(f64, f64)>) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut out: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in records {
        let Some(p) = f(r) else { continue };
        match out.iter_mut().find(|s| s.0 == r.set) {
            Some(s) => s.1.push(p),
            None => out.push((r.set.clone(), vec![p])),
        }
    }
    out
}

fn plot_records(run: &mut Run, records: &[SweepRecord], gains: bool) -> Result<(), CliError> {
    let mut lam = LinePlot::new("Cost of transport against recovery rate", "lambda (averaged)", "measured COT");
    for (name, pts) in per_set(records, |r| Some((r.lambda_avg?, r.cot_meas?))) {
        lam = lam.series(&name, pts);
    }
    run.plot("cot_vs_lambda.svg", lam)?;
    if gains {
        let mut cot = LinePlot::new("Measured cost of transport", "omega_n (rad/s)", "COT");
        for (name, pts) in per_set(records, |r| Some((r.omega_n, r.cot_meas?))) {
            cot = cot.series(&name, pts);
        }
        run.plot("cot_vs_omega.svg", cot)?;
        let mut l = LinePlot::new("Recovery rate", "omega_n (rad/s)", "lambda (averaged)");
        for (name, pts) in per_set(records, |r| Some((r.omega_n, r.lambda_avg?))) {
            l = l.series(&name, pts);
        }
        run.plot("lambda_vs_omega.svg", l)?;
    }
    Ok(())
}

fn pareto_csv(t: &ParetoTable) -> String {
    let mut s = String::from("set,omega_n,cot,lambda,dominated\n");
    for p in &t.points {
        s.push_str(&format!("{},{},{},{},{}\n", p.set, p.omega_n, p.cot, p.lambda, p.dominated));
    }
    s
}

#[derive(Serialize)]
struct PresetRow {
    set: String,
    status: SolveStatus,
    cot_opt: f64,
    reference_cot: f64,
    source: gaitlab::analysis::GuessSource,
    attempts: Vec<gaitlab::analysis::Attempt>,
}

fn cmd_sweep_omega(mut run: Run, a: &OmegaArgs) -> Result<Value, CliError> {
    let sets = preset_list(&run.cfg.sweep.presets)?;
    let omegas = parse_range(&run.cfg.sweep.omega)?;
    let gaits: Vec<(String, GaitSolution)> = match &a.gaits {
        Some(dir) => {
            let mut v = Vec::new();
            for s in &sets {
                let name = format!("set{s}");
                let g = run.load_gait(&name, &dir.join(format!("{name}.json")))?;
                v.push((name, g));
            }
            v
        }
        None => {
            let solved = optimize_presets(&sets, &run.cfg.problem, &run.cfg.solver).map_err(runtime)?;
            let mut rows = Vec::new();
            for p in &solved {
                run.out.write(&format!("gaits/{}.json", p.name), p.gait.to_json().map_err(runtime)?.as_bytes())?;
                rows.push(PresetRow {
                    set: p.name.clone(),
                    status: p.gait.report.status,
                    cot_opt: p.gait.cot_opt,
                    reference_cot: REFERENCE_COT[p.set - 1],
                    source: p.source,
                    attempts: p.attempts.clone(),
                });
            }
            run.out.write_json("presets.json", &json!({ "stamp": run.stamp()?, "presets": rows }))?;
            solved.into_iter().map(|p| (p.name, p.gait)).collect()
        }
    };
    let records = sweep_omega(&gaits, &omegas, &run.cfg.sweep_config()).map_err(runtime)?;
    let table = pareto_table(&records);
    run.out.write("sweep_omega.csv", records_csv(&records).map_err(runtime)?.as_bytes())?;
    run.out.write_json("sweep_omega.json", &json!({ "stamp": run.stamp()?, "records": records, "pareto": table }))?;
    plot_records(&mut run, &records, true)?;
    let dominated: Vec<&str> = table.sets.iter().filter(|s| s.dominated).map(|s| s.set.as_str()).collect();
    let summary = json!({
        "records": records.len(),
        "sets": sets.len(),
        "gains": omegas.len(),
        "falls": records.iter().filter(|r| r.fell).count(),
        "dominated_sets": dominated,
    });
    run.finish(summary)
}

fn mass_csv(m: &MassSweep) -> String {
    let mut s = String::from("mass,torso_mass,cot_opt,status,source,iterations,error\n");
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &m.records {
        let status = r.status.map(|x| serde_json::to_value(x).ok().and_then(|v| v.as_str().map(String::from)));
        let source = r.source.map(|x| serde_json::to_value(x).ok().and_then(|v| v.as_str().map(String::from)));
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mass,
            r.torso_mass,
            opt(r.cot_opt.map(|c| c.to_string())),
            opt(status.flatten()),
            opt(source.flatten()),
            r.iterations,
            opt(r.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
        ));
    }
    s
}

fn cmd_sweep_mass(mut run: Run, _a: &MassArgs) -> Result<Value, CliError> {
    let spec = run.cfg.mass.clone();
    let masses = grid(spec.from, spec.to, spec.step)?;
    let cfg = MassSweepConfig {
        base: preset(&spec.base)?,
        segment: spec.vary,
        masses,
        problem: run.cfg.problem.clone(),
        solve: run.cfg.solver.clone(),
    };
    let sweep = sweep_mass(&cfg).map_err(runtime)?;
    let seg = match spec.vary {
        Segment::Upper => "upper",
        Segment::Lower => "lower",
    };
    run.out.write(&format!("sweep_mass_{seg}.csv"), mass_csv(&sweep).as_bytes())?;
    run.out.write_json(&format!("sweep_mass_{seg}.json"), &json!({ "stamp": run.stamp()?, "sweep": sweep }))?;
    let pts: Vec<(f64, f64)> = sweep.records.iter().filter_map(|r| Some((r.mass, r.cot_opt?))).collect();
    let mut p = LinePlot::new(&format!("Optimal COT against {seg}-leg mass"), "segment mass (kg)", "COT").series("optimal", pts);
    if let Some(f) = sweep.fit {
        let line = [spec.from, spec.to].iter().map(|&m| (m, f.intercept + f.slope * m)).collect();
        p = p.series("linear fit", line);
    }
    run.plot(&format!("cot_vs_mass_{seg}.svg"), p)?;
    let summary = json!({
        "segment": seg,
        "points": sweep.records.len(),
        "solved": sweep.records.iter().filter(|r| r.cot_opt.is_some()).count(),
        "fit": sweep.fit,
    });
    run.finish(summary)
}

fn cmd_pareto(mut run: Run, a: &ParetoArgs) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(&a.records)
        .map_err(|e| CliError::Config(format!("cannot read records {}: {e}", a.records.display())))?;
    run.inputs.insert("records".into(), sha256_hex(text.as_bytes()));
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", a.records.display())))?;
    let list = match v {
        Value::Object(mut m) => m.remove("records").unwrap_or(Value::Null),
        other => other,
    };
    let records: Vec<SweepRecord> =
        serde_json::from_value(list).map_err(|e| CliError::Config(format!("{}: {e}", a.records.display())))?;
    if records.is_empty() {
        return Err(CliError::Config("no sweep records".into()));
    }
    let table = pareto_table(&records);
    run.out.write("pareto.csv", pareto_csv(&table).as_bytes())?;
    run.out.write_json("pareto.json", &json!({ "stamp": run.stamp()?, "table": table }))?;
    plot_records(&mut run, &records, false)?;
    let summary = json!({ "sets": table.sets, "tradeoffs": table.tradeoffs.len() });
    run.finish(summary)
}
