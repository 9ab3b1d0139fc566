//! Command-line front end: solve / estimate / cap / plan / verify /
//! convergence, each writing machine-readable output plus a run manifest
//! with digests so results can be reproduced bit for bit.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use lchs::error::{LchsError, Result};
use lchs::linalg::{c64, CVector};
use lchs::manifest::RunManifest;
use lchs::operators::{ProblemInstance, ShiftPolicy, TimeDependentGenerator};
use lchs::planner::PlanMode;
use lchs::problem::{ObservableSpec, ProblemSpec};
use lchs::propagators::PropagatorBackend;
use lchs::quadrature::{build_kernel_grid, tail_mass};
use lchs::{cap, estimator, oracle, planner, solver, util};

#[derive(Parser)]
#[command(
    name = "lchs",
    version,
    about = "Solve du/dt = -A(t)u + b(t) through a kernel-weighted combination of Hamiltonian propagators, with estimation, resource planning, and verification tooling"
)]
struct Cli {
    /// Worker threads for the node sweeps (env LCHS_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a JSON problem and write the resulting state and tallies.
    Solve(SolveArgs),
    /// Shot-noise estimate of a Hermitian observable at the final time.
    Estimate(EstimateArgs),
    /// Absorbing-boundary wave-packet demo on a 1D grid.
    Cap(CapArgs),
    /// Closed-form resource counts for a problem at a target accuracy.
    Plan(PlanArgs),
    /// Self-checks: scalar anchor, cutoff sweeps, principal-value decay.
    Verify(VerifyArgs),
    /// Parameter sweeps with fitted log-log convergence slopes.
    Convergence(ConvergenceArgs),
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    /// exact | trotter:p,r | interaction
    #[arg(long, default_value = "exact")]
    backend: String,
    /// Also run the dense reference integrator and report the distance.
    #[arg(long, default_value_t = false)]
    check_oracle: bool,
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    observable: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "exact")]
    backend: String,
    #[arg(long, default_value = "estimate.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CapArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 40.0)]
    length: f64,
    /// x0,p0,sigma
    #[arg(long, default_value = "-8,1.5,2")]
    packet: String,
    /// eta,width,power
    #[arg(long, default_value = "1,8,2")]
    absorber: String,
    #[arg(long = "T", default_value_t = 5.0)]
    t_final: f64,
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    #[arg(long, default_value = "exact")]
    backend: String,
    #[arg(long, default_value_t = 10)]
    snapshots: usize,
    #[arg(long, default_value = "demo.csv")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 2)]
    order: u32,
    /// td | ti | cap
    #[arg(long, default_value = "td")]
    mode: String,
    /// Grid size for cap mode.
    #[arg(long)]
    cap_n: Option<usize>,
    /// max |V_R| for cap mode.
    #[arg(long)]
    cap_vr_max: Option<f64>,
    /// max |dV_R/dt| for cap mode.
    #[arg(long, default_value_t = 0.0)]
    cap_vr_dot: f64,
    #[arg(long, default_value = "plan.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Scalar anchor: L=1, H=0, T=1 against e^{-1}.
    #[arg(long)]
    scalar: bool,
    /// Kernel cutoff for --scalar.
    #[arg(long = "K", default_value_t = 100.0)]
    cutoff: f64,
    /// Kernel intervals for --scalar.
    #[arg(long = "M", default_value_t = 20_000)]
    intervals: usize,
    /// Sweep the cutoff on a JSON problem and fit the error slope.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Comma-separated cutoffs for the problem sweep.
    #[arg(long, default_value = "25,50,100,200")]
    k_sweep: String,
    /// Principal-value residual decay on a fixed pair of 2x2 operators.
    #[arg(long)]
    pv: bool,
    /// Comma-separated integration half-widths for --pv.
    #[arg(long, default_value = "100,1000,10000")]
    r_list: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ConvergenceArgs {
    /// trotter_r=a..b or cutoff=a..b; the parameter doubles from a to b.
    #[arg(long)]
    sweep: String,
    /// Product-formula order for trotter_r sweeps.
    #[arg(long, default_value_t = 2)]
    order: u32,
    /// Optional JSON problem; default is a seeded 4x4 instance.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli
        .threads
        .or_else(|| std::env::var("LCHS_THREADS").ok().and_then(|v| v.parse().ok()))
    {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    let started = Instant::now();
    let outcome = match cli.command {
        Command::Solve(args) => run_solve(args, started),
        Command::Estimate(args) => run_estimate(args, started),
        Command::Cap(args) => run_cap(args, started),
        Command::Plan(args) => run_plan(args, started),
        Command::Verify(args) => run_verify(args, started),
        Command::Convergence(args) => run_convergence(args, started),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                LchsError::Budget(_) | LchsError::DecayedSolution(_) | LchsError::Convergence(_) => {
                    ExitCode::from(3)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn parse_backend(text: &str, eps: f64) -> Result<PropagatorBackend> {
    PropagatorBackend::from_str_spec(text, eps)
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|piece| {
            piece.trim().parse::<f64>().map_err(|_| {
                LchsError::InvalidArgument(format!("bad number {piece:?} in {what} {text:?}"))
            })
        })
        .collect()
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn finalize(
    mut manifest: RunManifest,
    started: Instant,
    outputs: &[&Path],
) -> Result<()> {
    for path in outputs {
        manifest.record_output(path)?;
    }
    manifest.wall_time_ms = started.elapsed().as_millis() as u64;
    let primary = outputs
        .first()
        .ok_or_else(|| LchsError::InvalidArgument("run produced no outputs".into()))?;
    manifest.write_next_to(primary)?;
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    u_tilde: Vec<[f64; 2]>,
    normalized: Vec<[f64; 2]>,
    eta: f64,
    p_succ: f64,
    shift: f64,
    grid: solver::GridSummary,
    tallies: solver::Tallies,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_vs_oracle: Option<f64>,
}

fn run_solve(args: SolveArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("solve", config_json(&args), None);
    let problem = ProblemSpec::from_path(&args.problem)?.instance()?;
    let backend = parse_backend(&args.backend, args.eps)?;
    let mut result = if problem.source.is_some() {
        solver::solve_inhomogeneous(&problem, args.eps, &backend)?
    } else {
        solver::solve_homogeneous(&problem, args.eps, &backend)?
    };
    if args.check_oracle {
        result.error_vs_oracle = Some(solver::oracle_error(&problem, &result, 1e-8)?);
    }
    let output = SolveOutput {
        u_tilde: lchs::problem::encode_vector(&result.u_tilde),
        normalized: lchs::problem::encode_vector(&result.normalized),
        eta: result.eta,
        p_succ: result.p_succ,
        shift: result.shift,
        grid: result.grid,
        tallies: result.tallies,
        error_vs_oracle: result.error_vs_oracle,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&output)?)?;
    println!(
        "solved: p_succ {:.6}, eta {:.6}, wrote {}",
        output.p_succ,
        output.eta,
        args.out.display()
    );
    finalize(manifest, started, &[&args.out])
}

#[derive(Serialize)]
struct EstimateOutput {
    value: f64,
    half_width: f64,
    samples: u64,
    shots_per_point: u64,
    total_shots: u64,
    ae_queries_per_point: u64,
    node_propagations: u64,
    grid_intervals: usize,
    kernel_l1: f64,
    plan: estimator::EstimatorPlan,
}

fn run_estimate(args: EstimateArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("estimate", config_json(&args), Some(args.seed));
    let problem = ProblemSpec::from_path(&args.problem)?.instance()?;
    let observable = ObservableSpec::from_path(&args.observable)?.matrix()?;
    let backend = parse_backend(&args.backend, args.eps)?;
    let report = estimator::estimate_observable(
        &problem,
        &observable,
        args.eps,
        args.delta,
        args.seed,
        &backend,
    )?;
    let output = EstimateOutput {
        value: report.value,
        half_width: report.half_width,
        samples: report.plan.samples,
        shots_per_point: report.plan.shots_per_point,
        total_shots: report.total_shots,
        ae_queries_per_point: report.plan.ae_queries_per_point,
        node_propagations: report.node_propagations,
        grid_intervals: report.grid_intervals,
        kernel_l1: report.kernel_l1,
        plan: report.plan,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&output)?)?;
    println!(
        "estimate: {:.6} +- {:.6} ({} samples, {} shots), wrote {}",
        output.value,
        output.half_width,
        output.samples,
        output.total_shots,
        args.out.display()
    );
    finalize(manifest, started, &[&args.out])
}

#[derive(Serialize)]
struct CapDensityDump {
    times: Vec<f64>,
    grid: Vec<f64>,
    densities: Vec<Vec<f64>>,
    oracle_norms: Vec<f64>,
}

fn run_cap(args: CapArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("cap", config_json(&args), None);
    let packet = parse_numbers(&args.packet, "--packet")?;
    let absorber = parse_numbers(&args.absorber, "--absorber")?;
    if packet.len() != 3 {
        return Err(LchsError::InvalidArgument(
            "--packet takes x0,p0,sigma".into(),
        ));
    }
    if absorber.len() != 3 {
        return Err(LchsError::InvalidArgument(
            "--absorber takes eta,width,power".into(),
        ));
    }
    if absorber[2] < 1.0 || absorber[2].fract() != 0.0 {
        return Err(LchsError::InvalidArgument(format!(
            "absorber power must be a whole number >= 1, got {}",
            absorber[2]
        )));
    }
    let points = cap::grid_points(args.n, args.length);
    let v_i = cap::absorber_profile(&points, args.length, absorber[1], absorber[0], absorber[2] as u32)?;
    let problem = cap::discretize(args.n, args.length, |_| 0.0, v_i, args.t_final)?;
    let u0 = cap::gaussian_packet(&problem.points, packet[0], packet[1], packet[2])?;
    let backend = parse_backend(&args.backend, args.eps)?;
    let demo = cap::run_cap_demo(&problem, &u0, args.t_final, args.eps, &backend, args.snapshots)?;

    let mut writer = csv::Writer::from_path(&args.out)?;
    writer.write_record(["t", "norm", "err_vs_oracle"])?;
    for i in 0..demo.times.len() {
        writer.write_record([
            format!("{}", demo.times[i]),
            format!("{}", demo.lchs_norms[i]),
            format!("{}", demo.errors[i]),
        ])?;
    }
    writer.flush()?;

    let density_path = args.out.with_extension("densities.json");
    let dump = CapDensityDump {
        times: demo.times.clone(),
        grid: problem.points.clone(),
        densities: demo.densities.clone(),
        oracle_norms: demo.oracle_norms.clone(),
    };
    std::fs::write(&density_path, serde_json::to_string_pretty(&dump)?)?;
    println!(
        "cap demo: final norm {:.4} (reference {:.4}), max error {:.2e}, wrote {} and {}",
        demo.lchs_norms.last().unwrap(),
        demo.oracle_norms.last().unwrap(),
        demo.errors.iter().cloned().fold(0.0, f64::max),
        args.out.display(),
        density_path.display()
    );
    finalize(manifest, started, &[&args.out, &density_path])
}

fn run_plan(args: PlanArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("plan", config_json(&args), None);
    let problem = ProblemSpec::from_path(&args.problem)?.instance()?;
    let mode = match args.mode.as_str() {
        "td" => PlanMode::TimeDependent,
        "ti" => PlanMode::TimeIndependent,
        "cap" => {
            let n = args.cap_n.ok_or_else(|| {
                LchsError::InvalidArgument("cap mode needs --cap-n".into())
            })?;
            let v_r_max = args.cap_vr_max.ok_or_else(|| {
                LchsError::InvalidArgument("cap mode needs --cap-vr-max".into())
            })?;
            PlanMode::Cap {
                n,
                v_r_max,
                v_r_dot_max: args.cap_vr_dot,
            }
        }
        other => {
            return Err(LchsError::InvalidArgument(format!(
                "mode {other:?} not recognized; expected td, ti, or cap"
            )))
        }
    };
    let plan = planner::plan(&problem, args.eps, args.order, mode)?;
    let rows = planner::compare_methods(&plan);
    let document = serde_json::json!({ "plan": plan, "comparison": rows });
    std::fs::write(&args.out, serde_json::to_string_pretty(&document)?)?;

    println!("{}", serde_json::to_string_pretty(&plan)?);
    println!();
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.3e}"),
        None => "-".to_string(),
    };
    println!("{:<38} {:>16} {:>16}  note", "method", "state-prep", "T-factor");
    for row in &rows {
        println!(
            "{:<38} {:>16} {:>16}  {}",
            row.method,
            fmt_opt(row.state_prep_queries),
            fmt_opt(row.matrix_query_time_factor),
            row.note
        );
    }
    finalize(manifest, started, &[&args.out])
}

fn scalar_decay_problem() -> Result<ProblemInstance> {
    let gen = TimeDependentGenerator::from_matrix(
        lchs::linalg::CMatrix::from_element(1, 1, c64(1.0, 0.0)),
        1.0,
    )?;
    ProblemInstance::new(
        gen,
        CVector::from_element(1, c64(1.0, 0.0)),
        None,
        ShiftPolicy::None,
    )
}

fn run_verify(args: VerifyArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("verify", config_json(&args), None);
    let modes = args.scalar as u8 + args.problem.is_some() as u8 + args.pv as u8;
    if modes != 1 {
        return Err(LchsError::InvalidArgument(
            "pick exactly one of --scalar, --problem, --pv".into(),
        ));
    }

    let document = if args.scalar {
        let problem = scalar_decay_problem()?;
        let grid = build_kernel_grid(args.cutoff, args.intervals)?;
        let result =
            solver::solve_homogeneous_with_grid(&problem, &grid, &PropagatorBackend::exact(1e-10))?;
        let truth = (-1.0_f64).exp();
        let error = (result.u_tilde[0] - c64(truth, 0.0)).norm();
        // Tail mass plus a crude composite-trapezoid term (second derivative
        // of kernel x phase at T=1 is below 1.4 everywhere).
        let h = 2.0 * args.cutoff / args.intervals as f64;
        let bound = tail_mass(args.cutoff) + 2.0 * args.cutoff * h * h / 12.0 * 1.4;
        println!(
            "scalar decay: |estimate - e^-1| = {error:.3e} (bound {bound:.3e}), K = {}, M = {}",
            args.cutoff, args.intervals
        );
        serde_json::json!({
            "mode": "scalar",
            "K": args.cutoff,
            "M": args.intervals,
            "error": error,
            "bound": bound,
            "rate_fit": null,
        })
    } else if let Some(path) = &args.problem {
        let problem = ProblemSpec::from_path(path)?.instance()?;
        let cutoffs = parse_numbers(&args.k_sweep, "--k-sweep")?;
        if cutoffs.len() < 2 {
            return Err(LchsError::InvalidArgument(
                "cutoff sweep needs at least two values".into(),
            ));
        }
        let gen_s = problem.shifted_generator();
        let horizon = problem.horizon();
        let reference = oracle::time_ordered_exp(&gen_s, 0.0, horizon, 1e-9)?;
        let mut intervals_used = Vec::new();
        let mut errors = Vec::new();
        for &k in &cutoffs {
            let m = 16usize.max(util::even_ceil(4.0 * k));
            let grid = build_kernel_grid(k, m)?;
            let backend = PropagatorBackend::exact((0.032 / k).clamp(1e-10, 1e-3));
            let assembled = solver::assemble_operator(&gen_s, horizon, &grid, &backend)?;
            errors.push(lchs::linalg::spectral_norm(&(&assembled - &reference)));
            intervals_used.push(m);
        }
        let rate_fit = util::fit_log_slope(&cutoffs, &errors)?;
        println!("cutoff sweep: errors {errors:?}, fitted K-slope {rate_fit:.3}");
        serde_json::json!({
            "mode": "cutoff-sweep",
            "K": cutoffs,
            "M": intervals_used,
            "error": errors,
            "bound": cutoffs.iter().map(|&k| tail_mass(k)).collect::<Vec<_>>(),
            "rate_fit": rate_fit,
        })
    } else {
        let h = lchs::linalg::CMatrix::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(-1.0, 0.0)],
        );
        let l = lchs::linalg::CMatrix::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(0.5, 0.0), c64(0.5, 0.0), c64(1.0, 0.0)],
        );
        let rs = parse_numbers(&args.r_list, "--r-list")?;
        let mut residuals = Vec::new();
        for &r in &rs {
            let nodes = oracle::default_pv_nodes(&h, &l, r);
            residuals.push(oracle::verify_principal_value(&h, &l, r, nodes)?);
        }
        let rate_fit = if rs.len() >= 2 {
            Some(util::fit_log_slope(&rs, &residuals)?)
        } else {
            None
        };
        println!("principal value: residuals {residuals:?}, fitted R-slope {rate_fit:?}");
        serde_json::json!({
            "mode": "principal-value",
            "R": rs,
            "error": residuals,
            "bound": rs.iter().map(|&r| 10.0 / r.sqrt()).collect::<Vec<_>>(),
            "rate_fit": rate_fit,
        })
    };

    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&document)?)?;
        finalize(manifest, started, &[out])?;
    }
    Ok(())
}

fn run_convergence(args: ConvergenceArgs, started: Instant) -> Result<()> {
    let manifest = RunManifest::new("convergence", config_json(&args), Some(args.seed));
    let (name, range) = args.sweep.split_once('=').ok_or_else(|| {
        LchsError::InvalidArgument(format!(
            "sweep {:?} must look like trotter_r=8..256 or cutoff=25..200",
            args.sweep
        ))
    })?;
    let (lo, hi) = range.split_once("..").ok_or_else(|| {
        LchsError::InvalidArgument(format!("range {range:?} must look like a..b"))
    })?;
    let lo: f64 = lo.trim().parse().map_err(|_| {
        LchsError::InvalidArgument(format!("bad sweep start {lo:?}"))
    })?;
    let hi: f64 = hi.trim().parse().map_err(|_| {
        LchsError::InvalidArgument(format!("bad sweep end {hi:?}"))
    })?;
    if !(lo > 0.0 && hi >= lo) {
        return Err(LchsError::InvalidArgument(format!(
            "sweep range [{lo}, {hi}] must be positive and increasing"
        )));
    }
    let problem = match &args.problem {
        Some(path) => ProblemSpec::from_path(path)?.instance()?,
        None => lchs::problem::random_static_spec(args.seed, 4, 1.0, 1.0, 1.0).instance()?,
    };
    if problem.source.is_some() {
        return Err(LchsError::InvalidArgument(
            "convergence sweeps drive the homogeneous solver; drop the source".into(),
        ));
    }

    let mut params = Vec::new();
    let mut errors = Vec::new();
    match name.trim() {
        "trotter_r" => {
            // Fixed kernel grid for every r: quadrature error cancels in the
            // comparison against the exact backend, leaving the product-formula
            // error alone.
            let grid = build_kernel_grid(4.0, 32)?;
            let exact =
                solver::solve_homogeneous_with_grid(&problem, &grid, &PropagatorBackend::exact(1e-10))?;
            let mut r = lo.round() as usize;
            while (r as f64) <= hi {
                let backend = PropagatorBackend::trotter(args.order, r)?;
                let approx = solver::solve_homogeneous_with_grid(&problem, &grid, &backend)?;
                params.push(r as f64);
                errors.push((&approx.u_tilde - &exact.u_tilde).norm());
                r *= 2;
            }
        }
        "cutoff" => {
            let reference = solver::reference_solution(&problem, 1e-10)?;
            let mut k = lo;
            while k <= hi {
                let m = 16usize.max(util::even_ceil(4.0 * k));
                let grid = build_kernel_grid(k, m)?;
                let result = solver::solve_homogeneous_with_grid(
                    &problem,
                    &grid,
                    &PropagatorBackend::exact(1e-9),
                )?;
                params.push(k);
                errors.push((&result.u_tilde - &reference).norm());
                k *= 2.0;
            }
        }
        other => {
            return Err(LchsError::InvalidArgument(format!(
                "sweep parameter {other:?} not recognized; expected trotter_r or cutoff"
            )))
        }
    }
    if params.len() < 2 {
        return Err(LchsError::InvalidArgument(
            "sweep range produced fewer than two points; widen it".into(),
        ));
    }

    let mut writer = csv::Writer::from_path(&args.out)?;
    writer.write_record([name.trim(), "error"])?;
    for (p, e) in params.iter().zip(&errors) {
        writer.write_record([format!("{p}"), format!("{e}")])?;
    }
    writer.flush()?;

    let slope = util::fit_log_slope(&params, &errors)?;
    let slope_path = args.out.with_extension("slope.json");
    let document = serde_json::json!({
        "sweep": name.trim(),
        "order": args.order,
        "params": params,
        "errors": errors,
        "slope": slope,
    });
    std::fs::write(&slope_path, serde_json::to_string_pretty(&document)?)?;
    println!(
        "{} sweep: fitted slope {slope:.3}, wrote {} and {}",
        name.trim(),
        args.out.display(),
        slope_path.display()
    );
    finalize(manifest, started, &[&args.out, &slope_path])
}
