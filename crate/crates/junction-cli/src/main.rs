//! Command-line front end. Subcommands map one-to-one onto library entry
//! points; this file only parses flags, moves bytes and sets exit codes:
//! 0 success, 1 runtime failure, 2 usage or config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use junction_sim::config::FileConfig;
use junction_sim::harness::{self, render_sweep_csv, run_sweep};
use junction_sim::{run_scenario, MetricsReport, ScenarioConfig, TraceRow};

#[derive(Parser)]
#[command(
    name = "junction",
    version,
    about = "Microscopic simulator of one intersection shared by scheduled cavs and human drivers"
)]
struct Cli {
    /// Flat key-value config file; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base random seed override.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file. run/replicate-fig5 write the trajectory trace here,
    /// sweep writes the results CSV plus a _stddev sibling.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Integration step override (seconds).
    #[arg(long, global = true, value_name = "S")]
    dt: Option<f64>,
    /// Record per-step vehicle trajectories (run only; needs --out).
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics.
    Run,
    /// Run the penetration x flow study and write per-seed and per-cell CSVs.
    Sweep,
    /// Canned two-vehicle merge: a cav entering at 15 m/s catches a 10 m/s
    /// human and holds the configured gap.
    ReplicateFig5 {
        /// Following gap the cav holds behind the human (m).
        #[arg(long, default_value_t = 10.0, value_name = "M")]
        gap: f64,
        /// Disable gap tracking; the cav keeps its crossing plan instead.
        #[arg(long)]
        no_follow: bool,
    },
    /// Print queueing diagnostics for an arrival rate.
    Saturation {
        /// Arrival rate per lane (veh/h); defaults to the configured flow.
        #[arg(long, value_name = "VEH_H")]
        flow: Option<f64>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run => cmd_run(&file, &cli),
        Command::Sweep => cmd_sweep(&file, &cli),
        Command::ReplicateFig5 { gap, no_follow } => cmd_two_vehicle(&cli, gap, no_follow),
        Command::Saturation { flow } => cmd_saturation(&file, flow),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    FileConfig::parse(&text).map_err(usage)
}

fn cmd_run(file: &FileConfig, cli: &Cli) -> Result<(), Failure> {
    let mut cfg = file.scenario().map_err(usage)?;
    apply_overrides(&mut cfg, cli);
    if cli.trace && cli.out.is_none() {
        return Err(Failure::Usage("--trace needs --out <path> for the trace file".into()));
    }
    cfg.record_trace = cli.out.is_some();
    let report = run_scenario(&cfg).map_err(usage)?;
    print_summary(&cfg, &report);
    if let Some(path) = &cli.out {
        write_trace(path, cfg.seed, &report.trace)?;
        println!("trace written to {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(file: &FileConfig, cli: &Cli) -> Result<(), Failure> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Failure::Usage("sweep needs --out <path> for the results CSV".into()))?;
    let mut spec = file.sweep().map_err(usage)?;
    apply_overrides(&mut spec.base, cli);
    // Per-run traces would dwarf the results; the CSVs are the product here.
    spec.base.record_trace = false;
    if let Some(s) = cli.seed {
        spec.seeds = (s..s + spec.seeds.len() as u64).collect();
    }
    let summary = run_sweep(&spec).map_err(usage)?;
    let csv = render_sweep_csv(&summary);
    write_file(out, &csv.main)?;
    let stddev_path = sibling(out, "stddev");
    write_file(&stddev_path, &csv.stddev)?;
    let runs = summary.rows.len();
    let failed = summary.errors.len();
    println!(
        "variant {}: {} cells, {runs} runs ({failed} failed)",
        summary.variant.label(),
        summary.cells.len()
    );
    println!("results written to {} and {}", out.display(), stddev_path.display());
    if let Some(errors) = &csv.errors {
        let errors_path = sibling(out, "errors");
        write_file(&errors_path, errors)?;
        println!("failed runs listed in {}", errors_path.display());
    }
    Ok(())
}

fn cmd_two_vehicle(cli: &Cli, gap: f64, no_follow: bool) -> Result<(), Failure> {
    if !(gap.is_finite() && gap > 0.0) {
        return Err(Failure::Usage(format!("--gap must be positive, got {gap}")));
    }
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Failure::Usage("replicate-fig5 needs --out <path> for the trace".into()))?;
    let mut cfg = harness::two_vehicle_demo(gap, !no_follow);
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report = run_scenario(&cfg).map_err(usage)?;
    print_separation(&report, gap, no_follow);
    write_trace(out, cfg.seed, &report.trace)?;
    println!("trace written to {}", out.display());
    Ok(())
}

fn cmd_saturation(file: &FileConfig, flow: Option<f64>) -> Result<(), Failure> {
    let cfg = file.scenario().map_err(usage)?;
    let flow = flow.unwrap_or(cfg.flow_rate);
    let d = harness::saturation(flow, &cfg).map_err(usage)?;
    println!(
        "arrival rate {:.0} veh/h/lane, degree of saturation {:.4} (saturation flow {:.0})",
        d.flow, d.degree_of_saturation, d.saturation_flow
    );
    println!("regime: {} (critical flow {:.0} veh/h/lane)", d.regime.label(), d.critical_flow);
    println!(
        "service time {:.2} s/veh, total arrivals {:.3} veh/s, stable: {}",
        d.service_time_s,
        d.total_arrival_rate,
        if d.stable { "yes" } else { "no" }
    );
    Ok(())
}

fn apply_overrides(cfg: &mut ScenarioConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
}

fn print_summary(cfg: &ScenarioConfig, report: &MetricsReport) {
    println!(
        "seed {}  horizon {:.0} s  dt {} s  penetration {:.2}  flow {:.0} veh/h/lane",
        cfg.seed, cfg.horizon, cfg.dt, cfg.penetration, cfg.flow_rate
    );
    println!(
        "spawned {}  completed {}  throughput {} veh",
        report.spawned_veh, report.completed_veh, report.throughput_veh
    );
    println!(
        "mean energy {:.4} per s  mean travel time {:.2} s",
        report.mean_energy_per_s, report.mean_travel_time_s
    );
    println!(
        "rear-end {}  lateral {}  frozen {}",
        report.rear_end_violations, report.lateral_collisions, report.frozen_veh
    );
    if report.halted {
        println!("run halted after a collision");
    }
}

/// Separation between the scripted pair over time, from the trace.
fn print_separation(report: &MetricsReport, gap: f64, no_follow: bool) {
    let mut first_below: Option<f64> = None;
    let mut min_after_10s = f64::INFINITY;
    let mut human_p = f64::NAN;
    let mut t_cur = f64::NAN;
    for row in &report.trace {
        if row.t != t_cur {
            t_cur = row.t;
            human_p = f64::NAN;
        }
        match row.class {
            junction_sim::VehicleClass::Human => human_p = row.p,
            junction_sim::VehicleClass::Cav => {
                let s = human_p - row.p;
                if s.is_nan() {
                    continue;
                }
                if first_below.is_none() && s < gap {
                    first_below = Some(row.t);
                }
                if row.t >= 10.0 {
                    min_after_10s = min_after_10s.min(s);
                }
            }
        }
    }
    let follow = if no_follow { "off" } else { "on" };
    println!("two-vehicle demo: target gap {gap} m, gap tracking {follow}");
    match first_below {
        Some(t) => println!("separation first drops below {gap} m at t = {t:.2} s"),
        None => println!("separation never drops below {gap} m"),
    }
    if min_after_10s.is_finite() {
        println!("minimum separation after t = 10 s: {min_after_10s:.2} m");
    }
}

fn write_trace(path: &Path, run_id: u64, rows: &[TraceRow]) -> Result<(), Failure> {
    let mut csv = String::from("run_id,t,vehicle_id,class,lane,mode,p,v,u\n");
    for r in rows {
        csv.push_str(&format!(
            "{run_id},{:.3},{},{},{},{},{:.4},{:.4},{:.4}\n",
            r.t,
            r.vehicle,
            r.class.label(),
            r.approach.label(),
            r.mode,
            r.p,
            r.v,
            r.u
        ));
    }
    write_file(path, &csv)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}
