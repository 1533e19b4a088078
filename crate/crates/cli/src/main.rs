//! `dualmech` command line: configuration-driven runs of the oracle
//! integrator, the dual action solver, DtP diagnostics, the Hamiltonian
//! conservation scan, constraint elimination, periodic search, and
//! constraint-law / gauge comparisons.
//!
//! Every run consumes one JSON config and emits CSV outputs plus a
//! `manifest.json` echoing the config, so runs are archivable and
//! re-runnable. Exit codes: 0 success, 2 configuration error, 3 solver
//! non-convergence, 4 numerical singularity.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde_json::{json, Value};

use config::{CompareParams, Config, GuessSpec, PeriodicBaseSpec};
use dualmech::action::ActionAssembly;
use dualmech::dtp::check_invertibility;
use dualmech::grid::Traj;
use dualmech::hamiltonian::check_conservation;
use dualmech::oracle::{csv_header, integrate_ivp, monitor_invariants, to_csv};
use dualmech::periodic::{
    find_periodic_orbit, multiple_shooting_residual, seed_from_recurrence, PeriodicConfig,
    PeriodicProblem,
};
use dualmech::reduction::{integrate_reduced, LinearConstraint};
use dualmech::solver::{solve_dual_bvp, solve_dual_bvp_two_slab, SolveReport};
use dualmech::system::{tol, StateLayout, SystemId};
use dualmech::{Error, Result};

const USAGE: &str =
    "usage: dualmech <integrate|dual-solve|dtp-check|hamiltonian|reduce|periodic|compare> \
--config <file.json> --out <dir> [--emit-plot-data] [--quiet]
env: DUALMECH_THREADS controls fan-out of independent runs (compare)";

struct Cli {
    subcommand: String,
    config_path: PathBuf,
    out_dir: PathBuf,
    emit_plot_data: bool,
    quiet: bool,
}

fn parse_args() -> std::result::Result<Cli, String> {
    let mut args = std::env::args().skip(1);
    let subcommand = args.next().ok_or_else(|| USAGE.to_string())?;
    let mut config_path = None;
    let mut out_dir = None;
    let mut emit_plot_data = false;
    let mut quiet = false;
    while let Some(a) = args.next() {
        match a.as_str() {
            "--config" => {
                config_path = Some(PathBuf::from(args.next().ok_or("--config needs a path")?))
            }
            "--out" => out_dir = Some(PathBuf::from(args.next().ok_or("--out needs a path")?)),
            "--emit-plot-data" => emit_plot_data = true,
            "--quiet" => quiet = true,
            other => return Err(format!("unknown flag {other}\n{USAGE}")),
        }
    }
    Ok(Cli {
        subcommand,
        config_path: config_path.ok_or(format!("missing --config\n{USAGE}"))?,
        out_dir: out_dir.ok_or(format!("missing --out\n{USAGE}"))?,
        emit_plot_data,
        quiet,
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };

    // parse and validate fully before creating any output
    let text = match std::fs::read_to_string(&cli.config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", cli.config_path.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match Config::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("cannot create output directory: {e}");
        return ExitCode::from(2);
    }

    let started = Instant::now();
    let result = run(&cli, &cfg);
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut manifest = json!({
        "tool": { "name": "dualmech", "version": env!("CARGO_PKG_VERSION") },
        "subcommand": cli.subcommand,
        "config": serde_json::to_value(&cfg).unwrap_or(Value::Null),
        "timing_ms": elapsed_ms,
        "tolerances": {
            "eps_ic": tol::EPS_IC,
            "eps_c": tol::EPS_C,
            "eps_pow": tol::EPS_POW,
            "eps_sing": tol::EPS_SING,
            "eps_dtp": tol::EPS_DTP,
        },
    });

    match result {
        Ok(body) => {
            merge(&mut manifest, body);
            write_manifest(&cli.out_dir, &manifest);
            if !cli.quiet {
                println!("ok: outputs in {}", cli.out_dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            merge(
                &mut manifest,
                json!({ "error": { "message": e.to_string(), "exit_code": code } }),
            );
            // runtime failures still document themselves; config errors
            // never reach this point
            write_manifest(&cli.out_dir, &manifest);
            eprintln!("error: {e}");
            ExitCode::from(code as u8)
        }
    }
}

fn merge(manifest: &mut Value, body: Value) {
    if let (Value::Object(m), Value::Object(b)) = (manifest, body) {
        for (k, v) in b {
            m.insert(k, v);
        }
    }
}

fn write_manifest(dir: &Path, manifest: &Value) {
    let path = dir.join("manifest.json");
    if let Ok(text) = serde_json::to_string_pretty(manifest) {
        let _ = std::fs::write(path, text);
    }
}

fn run(cli: &Cli, cfg: &Config) -> Result<Value> {
    match cli.subcommand.as_str() {
        "integrate" => run_integrate(cli, cfg),
        "dual-solve" => run_dual_solve(cli, cfg),
        "dtp-check" => run_dtp_check(cli, cfg),
        "hamiltonian" => run_hamiltonian(cli, cfg),
        "reduce" => run_reduce(cli, cfg),
        "periodic" => run_periodic(cli, cfg),
        "compare" => run_compare(cli, cfg),
        other => Err(Error::Config(format!(
            "unknown subcommand '{other}'\n{USAGE}"
        ))),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String> {
    std::fs::write(dir.join(name), contents)?;
    Ok(name.to_string())
}

/// CSV for an arbitrary trajectory with named columns.
fn traj_csv(headers: &[String], traj: &Traj) -> String {
    to_csv(headers, traj)
}

fn primal_headers(layout: StateLayout) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 1..=layout.nx {
        cols.push(format!("x{i}"));
    }
    for i in 1..=layout.nv {
        cols.push(format!("v{i}"));
    }
    for i in 1..=layout.nq {
        cols.push(format!("Q{i}"));
    }
    if layout.ns == 1 {
        cols.push("s".to_string());
    }
    cols
}

fn dual_headers(layout: StateLayout) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 1..=layout.nx {
        cols.push(format!("rho{i}"));
    }
    for i in 1..=layout.nv {
        cols.push(format!("lambda{i}"));
    }
    for i in 1..=layout.m {
        cols.push(format!("mu{i}"));
    }
    if layout.ns == 1 {
        cols.push("Lambda".to_string());
    }
    cols
}

fn series_csv(name: &str, times: &[f64], values: &[f64]) -> String {
    let mut out = format!("t,{name}\n");
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

fn solve_to_json(rep: &SolveReport) -> Value {
    json!({
        "converged": rep.converged,
        "residual_norm": rep.residual_norm,
        "iterations": rep.iterations,
        "residual_history": rep.residual_history,
    })
}

fn run_integrate(cli: &Cli, cfg: &Config) -> Result<Value> {
    let traj = integrate_ivp(&cfg.system, cfg.run.t_end, cfg.run.h)?;
    let rep = monitor_invariants(&cfg.system, &traj)?;
    // mechanical systems with a determinate force law also get the implied
    // constraint parameters and slack as columns
    let csv = if matches!(cfg.system.system, SystemId::Pars | SystemId::GenPars) {
        let grid = traj.grid;
        let enriched = dualmech::action::base_for_mech_from_oracle(&cfg.system, grid)?;
        let d = cfg.system.dims().0;
        let layout = StateLayout { nx: d, nv: d, m: 1, nq: d, ns: 1 };
        to_csv(&primal_headers(layout), &enriched.values)
    } else {
        to_csv(&csv_header(&cfg.system), &traj)
    };
    let mut outputs = vec![write_file(&cli.out_dir, "trajectory.csv", &csv)?];
    if cli.emit_plot_data && !rep.kinetic.is_empty() {
        outputs.push(write_file(
            &cli.out_dir,
            "plot_kinetic_energy.csv",
            &series_csv("K", &traj.grid.times(), &rep.kinetic),
        )?);
    }
    Ok(json!({
        "outputs": outputs,
        "invariants": {
            "max_constraint_residual": rep.max_constraint_residual,
            "max_energy_increment": rep.max_energy_increment,
            "max_energy_drift": rep.max_energy_drift,
            "max_constraint_power": rep.max_constraint_power,
            "max_power_residual": rep.max_power_residual,
        },
    }))
}

fn dual_solve_with_diagnostics(cfg: &Config, asm: &ActionAssembly) -> Result<SolveReport> {
    let solve_cfg = cfg.solve_config(asm)?;
    if cfg.run.solve.two_slab {
        let spec = cfg.system.clone();
        let coef = cfg.coef_c();
        let bc = cfg.run.terminal_bc;
        return solve_dual_bvp_two_slab(
            move |grid_half, base_half| {
                let hp = dualmech::dtp::HParams::new(
                    coef,
                    dualmech::dtp::BaseState { values: base_half },
                )?;
                let layout = spec.build_dual_model()?.layout();
                let mut bcv = dualmech::dtp::DualState::zeros(layout);
                for v in bcv.rho.iter_mut().chain(bcv.lam.iter_mut()) {
                    *v = bc;
                }
                ActionAssembly::for_spec(&spec, hp, grid_half, Some(bcv))
            },
            asm,
            &solve_cfg,
        );
    }
    solve_dual_bvp(asm, &solve_cfg)
}

/// On DtP singularity, run the invertibility scan on the failing guess so
/// the manifest carries actionable diagnostics.
fn invertibility_json(cfg: &Config, asm: &ActionAssembly) -> Value {
    let duals = match &cfg.run.solve.initial_guess {
        GuessSpec::Constant(values) if values.len() == asm.layout().dual_width() => {
            let mut t = Traj::zeros(asm.grid, asm.layout().dual_width());
            for k in 0..asm.grid.n {
                t.node_mut(k).copy_from_slice(values);
            }
            t
        }
        _ => asm.zero_duals(),
    };
    let rep = check_invertibility(&asm.dtp, &asm.model, &duals, &asm.hp.c, &asm.hp.base);
    json!({
        "min_sigma": rep.min_sigma,
        "min_node": rep.min_node,
        "solve_failures": rep.solve_failures.len(),
        "flagged": rep.flagged,
        "recommended_c_scale": rep.recommended_c_scale,
    })
}

fn run_dual_solve(cli: &Cli, cfg: &Config) -> Result<Value> {
    let asm = cfg.build_assembly(&cfg.system, cfg.run.terminal_bc)?;
    let rep = match dual_solve_with_diagnostics(cfg, &asm) {
        Ok(r) => r,
        Err(e) => {
            // write the invertibility report before propagating
            let diag = invertibility_json(cfg, &asm);
            let _ = write_file(
                &cli.out_dir,
                "invertibility.json",
                &serde_json::to_string_pretty(&diag).unwrap_or_default(),
            );
            return Err(e);
        }
    };
    let layout = asm.layout();
    let primal = asm.recover_primal(&rep.duals)?;
    let el = asm.el_residual(&rep.duals)?;
    let mut outputs = vec![
        write_file(
            &cli.out_dir,
            "duals.csv",
            &traj_csv(&dual_headers(layout), &rep.duals),
        )?,
        write_file(
            &cli.out_dir,
            "primal.csv",
            &traj_csv(&primal_headers(layout), &primal),
        )?,
    ];
    if cli.emit_plot_data {
        let res_norm: Vec<f64> = (0..asm.grid.n)
            .map(|k| el.grad.node(k).iter().map(|v| v.abs()).fold(0.0, f64::max))
            .collect();
        outputs.push(write_file(
            &cli.out_dir,
            "plot_el_residual.csv",
            &series_csv("el_residual_inf", &asm.grid.times(), &res_norm),
        )?);
    }
    if !rep.converged {
        let body = json!({
            "outputs": outputs,
            "solve": solve_to_json(&rep),
        });
        let _ = write_file(
            &cli.out_dir,
            "solve.json",
            &serde_json::to_string_pretty(&body).unwrap_or_default(),
        );
        return Err(Error::NonConvergence {
            residual: rep.residual_norm,
            iters: rep.iterations,
        });
    }
    Ok(json!({
        "outputs": outputs,
        "solve": solve_to_json(&rep),
        "ic_residual": { "x": el.ic_x, "v": el.ic_v },
    }))
}

fn run_dtp_check(cli: &Cli, cfg: &Config) -> Result<Value> {
    let asm = cfg.build_assembly(&cfg.system, cfg.run.terminal_bc)?;
    let layout = asm.layout();
    let duals = match &cfg.run.solve.initial_guess {
        GuessSpec::Constant(values) => {
            if values.len() != layout.dual_width() {
                return Err(Error::Config(format!(
                    "dtp-check constant duals need {} components",
                    layout.dual_width()
                )));
            }
            let mut t = Traj::zeros(asm.grid, layout.dual_width());
            for k in 0..asm.grid.n {
                t.node_mut(k).copy_from_slice(values);
            }
            t
        }
        _ => asm.zero_duals(),
    };
    let rep = check_invertibility(&asm.dtp, &asm.model, &duals, &asm.hp.c, &asm.hp.base);

    // per-node stationarity residual of the DtP solve
    let dop = asm.diff_op();
    let mut csv = String::from("node,t,stationarity_residual_inf,sigma_min\n");
    for k in 0..asm.grid.n {
        let ext = asm.node_ext(&duals, &dop, k);
        let t = asm.grid.node(k);
        let base = asm.hp.base.node(k);
        let res = match dualmech::dtp::dtp_map(&asm.dtp, &asm.model, &ext, &asm.hp.c, base, t) {
            Ok(u) => {
                let r =
                    dualmech::dtp::stationarity_residual(&asm.model, &u, &ext, &asm.hp.c, base, t);
                r.iter().map(|v| v.abs()).fold(0.0, f64::max)
            }
            Err(_) => f64::NAN,
        };
        let _ = writeln!(csv, "{k},{t},{res},{}", rep.sigma_min[k]);
    }
    let outputs = vec![write_file(&cli.out_dir, "stationarity.csv", &csv)?];
    let flagged = rep.flagged;
    let body = json!({
        "outputs": outputs,
        "invertibility": {
            "min_sigma": rep.min_sigma,
            "min_node": rep.min_node,
            "solve_failures": rep.solve_failures.len(),
            "flagged": rep.flagged,
            "recommended_c_scale": rep.recommended_c_scale,
        },
    });
    if flagged {
        let _ = write_file(
            &cli.out_dir,
            "invertibility.json",
            &serde_json::to_string_pretty(&body["invertibility"]).unwrap_or_default(),
        );
        return Err(Error::DtpSingular {
            t: asm.grid.node(rep.min_node),
            detail: format!(
                "invertibility scan flagged {} failing nodes (min sigma {:.3e})",
                rep.solve_failures.len(),
                rep.min_sigma
            ),
        });
    }
    Ok(body)
}

fn run_hamiltonian(cli: &Cli, cfg: &Config) -> Result<Value> {
    let asm = cfg.build_assembly(&cfg.system, cfg.run.terminal_bc)?;
    let rep = dual_solve_with_diagnostics(cfg, &asm)?;
    let cons = check_conservation(&asm, &rep.duals, rep.converged)?;
    let mut outputs = vec![];
    if cons.valid {
        outputs.push(write_file(
            &cli.out_dir,
            "hamiltonian.csv",
            &series_csv("H", &asm.grid.times(), &cons.h_series),
        )?);
        if cli.emit_plot_data {
            let drift: Vec<f64> = cons.h_series.iter().map(|h| h - cons.h_series[0]).collect();
            outputs.push(write_file(
                &cli.out_dir,
                "plot_h_drift.csv",
                &series_csv("H_drift", &asm.grid.times(), &drift),
            )?);
        }
    }
    Ok(json!({
        "outputs": outputs,
        "solve": solve_to_json(&rep),
        "conservation": {
            "valid": cons.valid,
            "reason": cons.reason,
            "drift": if cons.drift.is_finite() { Value::from(cons.drift) } else { Value::Null },
        },
    }))
}

fn run_reduce(cli: &Cli, cfg: &Config) -> Result<Value> {
    let (l, b) = match cfg.system.system {
        SystemId::Pars => {
            let gp = dualmech::system::GenParsMech::pars();
            (gp.l, gp.b)
        }
        SystemId::GenPars => cfg.system.gen_pars_data()?,
        _ => {
            return Err(Error::Config(
                "reduce runs on the constrained built-ins (pars, gen_pars)".into(),
            ))
        }
    };
    let sys = LinearConstraint { l, b };
    let run = integrate_reduced(
        &sys,
        &cfg.system.initial.x0,
        &cfg.system.initial.v0,
        cfg.run.t_end,
        cfg.run.h,
    )?;
    let d = cfg.system.initial.x0.len();
    let mut headers = vec!["t".to_string()];
    for i in 1..=d {
        headers.push(format!("x{i}"));
    }
    for i in 1..=d {
        headers.push(format!("v{i}"));
    }
    let mut force_headers = vec!["t".to_string()];
    for i in 1..=d {
        force_headers.push(format!("Fc{i}"));
    }
    let outputs = vec![
        write_file(
            &cli.out_dir,
            "trajectory.csv",
            &traj_csv(&headers, &run.traj),
        )?,
        write_file(
            &cli.out_dir,
            "forces.csv",
            &traj_csv(&force_headers, &run.forces),
        )?,
    ];
    Ok(json!({
        "outputs": outputs,
        "max_constraint_residual": run.max_constraint_residual,
        "split_events": run
            .splits
            .iter()
            .map(|s| json!({ "t": s.t, "eliminated": s.indices_s, "sigma": s.sigma_split }))
            .collect::<Vec<_>>(),
    }))
}

fn run_periodic(cli: &Cli, cfg: &Config) -> Result<Value> {
    let pp_cfg = cfg
        .run
        .periodic
        .as_ref()
        .ok_or_else(|| Error::Config("periodic runs need a run.periodic block".into()))?;
    let ode = cfg.system.build_oracle()?;
    let (base, p_guess) = match &pp_cfg.base {
        PeriodicBaseSpec::Explicit { values } => (values.clone(), pp_cfg.p_guess),
        PeriodicBaseSpec::Recurrence => {
            let ode_scan = cfg.system.build_oracle()?;
            let (base, p) = seed_from_recurrence(
                ode_scan.as_ref(),
                &cfg.system.oracle_initial(),
                cfg.run.t_end,
                cfg.run.h,
                cfg.run.t_end / 20.0,
                pp_cfg.n_nodes,
            )?;
            (base, p)
        }
    };
    let n = pp_cfg.n_nodes.div_ceil(5) * 5;
    let pcfg = PeriodicConfig {
        tol_newton: pp_cfg.tol_newton,
        max_iter: pp_cfg.max_iter,
        regularization: cfg.run.solve.regularization,
    };

    // sweep over additional period guesses: independent solves, fanned out
    // across threads when DUALMECH_THREADS allows
    let mut sweep_rows = Vec::new();
    if !pp_cfg.p_guess_sweep.is_empty() {
        let threads: usize = std::env::var("DUALMECH_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(1)
            .max(1);
        let guesses = pp_cfg.p_guess_sweep.clone();
        let solve_one = |guess: f64| -> Result<Value> {
            let ode = cfg.system.build_oracle()?;
            let pp = PeriodicProblem {
                ode,
                n_nodes: n,
                c_x: cfg.run.c,
                base: base.clone(),
                p_guess: guess,
            };
            let r = find_periodic_orbit(&pp, &pcfg)?;
            Ok(json!({
                "guess": guess,
                "converged": r.converged,
                "collapsed": r.collapsed,
                "period_scale": r.p,
                "residual_norm": r.residual_norm,
            }))
        };
        if threads >= 2 {
            let results = std::thread::scope(|scope| {
                let handles: Vec<_> = guesses
                    .iter()
                    .map(|g| scope.spawn(move || solve_one(*g)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap())
                    .collect::<Vec<_>>()
            });
            for r in results {
                sweep_rows.push(r?);
            }
        } else {
            for g in guesses {
                sweep_rows.push(solve_one(g)?);
            }
        }
    }

    let pp = PeriodicProblem {
        ode,
        n_nodes: n,
        c_x: cfg.run.c,
        base,
        p_guess,
    };
    let res = find_periodic_orbit(&pp, &pcfg)?;
    let shoot = cfg.system.build_oracle()?;
    let ms = multiple_shooting_residual(shoot.as_ref(), &res.orbit, res.p, 16)?;

    let nx = res.orbit[0].len();
    let mut csv = String::from("s");
    for i in 1..=nx {
        let _ = write!(csv, ",x{i}");
    }
    csv.push('\n');
    for (k, x) in res.orbit.iter().enumerate() {
        let s = 2.0 * std::f64::consts::PI * k as f64 / res.orbit.len() as f64;
        let _ = write!(csv, "{s}");
        for v in x {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let mut outputs = vec![write_file(&cli.out_dir, "orbit.csv", &csv)?];
    if !sweep_rows.is_empty() {
        let mut table = String::from("guess,converged,collapsed,period_scale,residual_norm\n");
        for row in &sweep_rows {
            let _ = writeln!(
                table,
                "{},{},{},{},{}",
                row["guess"],
                row["converged"],
                row["collapsed"],
                row["period_scale"],
                row["residual_norm"]
            );
        }
        outputs.push(write_file(&cli.out_dir, "sweep.csv", &table)?);
    }
    Ok(json!({
        "outputs": outputs,
        "period_scale": res.p,
        "period": 2.0 * std::f64::consts::PI * res.p,
        "converged": res.converged,
        "collapsed": res.collapsed,
        "residual_norm": res.residual_norm,
        "ode_residual": res.ode_residual,
        "closure": res.closure,
        "multiple_shooting_defect": ms,
        "iterations": res.iterations,
        "sweep": sweep_rows,
    }))
}

fn run_compare(cli: &Cli, cfg: &Config) -> Result<Value> {
    let params = cfg
        .run
        .compare
        .as_ref()
        .ok_or_else(|| Error::Config("compare runs need a run.compare block".into()))?;
    let threads: usize = std::env::var("DUALMECH_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);

    match params {
        CompareParams::Laws { other } => {
            other.validate()?;
            let (a, b) = if threads >= 2 {
                std::thread::scope(|scope| {
                    let ha = scope.spawn(|| integrate_ivp(&cfg.system, cfg.run.t_end, cfg.run.h));
                    let hb = scope.spawn(|| integrate_ivp(other, cfg.run.t_end, cfg.run.h));
                    (ha.join().unwrap(), hb.join().unwrap())
                })
            } else {
                (
                    integrate_ivp(&cfg.system, cfg.run.t_end, cfg.run.h),
                    integrate_ivp(other, cfg.run.t_end, cfg.run.h),
                )
            };
            let (ta, tb) = (a?, b?);
            if ta.width != tb.width || ta.grid.n != tb.grid.n {
                return Err(Error::Config(
                    "compared systems must share the state width".into(),
                ));
            }
            let mut per_component = vec![0.0f64; ta.width];
            for k in 0..ta.grid.n {
                for i in 0..ta.width {
                    per_component[i] = per_component[i].max((ta.node(k)[i] - tb.node(k)[i]).abs());
                }
            }
            let outputs = vec![
                write_file(
                    &cli.out_dir,
                    "trajectory_a.csv",
                    &to_csv(&csv_header(&cfg.system), &ta),
                )?,
                write_file(
                    &cli.out_dir,
                    "trajectory_b.csv",
                    &to_csv(&csv_header(other), &tb),
                )?,
            ];
            Ok(json!({
                "outputs": outputs,
                "max_divergence": per_component.iter().cloned().fold(0.0, f64::max),
                "max_divergence_per_component": per_component,
            }))
        }
        CompareParams::Gauge {
            amplitude,
            other_phase,
            other_terminal_bc,
        } => {
            let mut cfg_a = cfg.clone();
            cfg_a.run.base = config::BaseSpec::PerturbedOracle {
                amplitude: *amplitude,
                phase: 0.0,
            };
            let mut cfg_b = cfg.clone();
            cfg_b.run.base = config::BaseSpec::PerturbedOracle {
                amplitude: *amplitude,
                phase: *other_phase,
            };
            let asm_a = cfg_a.build_assembly(&cfg.system, cfg.run.terminal_bc)?;
            let asm_b = cfg_b.build_assembly(&cfg.system, *other_terminal_bc)?;
            let solve = |cfg: &Config, asm: &ActionAssembly| -> Result<SolveReport> {
                let sc = cfg.solve_config(asm)?;
                solve_dual_bvp(asm, &sc)
            };
            let (ra, rb) = if threads >= 2 {
                std::thread::scope(|scope| {
                    let ha = scope.spawn(|| solve(&cfg_a, &asm_a));
                    let hb = scope.spawn(|| solve(&cfg_b, &asm_b));
                    (ha.join().unwrap(), hb.join().unwrap())
                })
            } else {
                (solve(&cfg_a, &asm_a), solve(&cfg_b, &asm_b))
            };
            let (ra, rb) = (ra?, rb?);
            let pa = asm_a.recover_primal(&ra.duals)?;
            let pb = asm_b.recover_primal(&rb.duals)?;
            let layout = asm_a.layout();
            let outputs = vec![
                write_file(
                    &cli.out_dir,
                    "primal_a.csv",
                    &traj_csv(&primal_headers(layout), &pa),
                )?,
                write_file(
                    &cli.out_dir,
                    "primal_b.csv",
                    &traj_csv(&primal_headers(layout), &pb),
                )?,
            ];
            let inconclusive = !(ra.converged && rb.converged);
            Ok(json!({
                "outputs": outputs,
                "inconclusive": inconclusive,
                "primal_distance": pa.max_abs_diff(&pb),
                "solve_a": solve_to_json(&ra),
                "solve_b": solve_to_json(&rb),
            }))
        }
    }
}
