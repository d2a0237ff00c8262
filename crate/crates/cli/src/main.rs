//! `lf`: run the radflow load-flow solvers from the command line.

mod config;
mod methods;
mod output;

use std::io::Write;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use radflow::baselines::{lindistflow_solve, solution_compare, VoltageComparison};
use radflow::manifold::ManifoldKind;
use radflow::network::{parse_matpower, parse_network_json, to_radial, RadialNetwork};
use radflow::solvers::{max_voltage_change, pan_first_iteration, solve_pan};
use radflow::LfError;
use serde::Serialize;

use config::{CommonArgs, FileConfig, NetworkFormat, OutFormat, Settings};
use methods::{Method, Outcome};

/// Largest voltage disagreement (p.u.) tolerated between compared methods.
const AGREEMENT_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "lf", version, about = "Load flow for radial distribution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method and report its trajectory and solution.
    Solve(SolveArgs),
    /// Run several methods and compare their voltage profiles.
    Compare(CompareArgs),
    /// Compare LinDistFlow and the one-step approximant with the exact solution.
    Approx(ApproxArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    method: Option<String>,
    /// bfm, qe1 or qe2.
    #[arg(long)]
    retraction: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated method list.
    #[arg(long)]
    method: Option<String>,
    /// Method the others are measured against.
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    common: CommonArgs,
}

/// Outcome classes of a command, mapped to the process exit code.
enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Approx(a) => cmd_approx(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn file_config(common: &CommonArgs) -> anyhow::Result<FileConfig> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn load_network(s: &Settings) -> anyhow::Result<RadialNetwork> {
    let text = std::fs::read_to_string(&s.network).with_context(|| format!("cannot read {}", s.network.display()))?;
    let net = match s.format {
        NetworkFormat::Matpower => to_radial(&parse_matpower(&text)?)?,
        NetworkFormat::Json => parse_network_json(&text)?,
    }
    .scale_loads(s.load_scale);
    Ok(net)
}

/// Send a report to `--out/name`, or to standard output without `--out`.
fn emit(s: &Settings, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    match &s.out {
        Some(dir) => output::write_atomic(dir, name, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            if !bytes.ends_with(b"\n") {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

/// Setup errors caused by the input are reported as input errors; anything
/// else means the method could not produce a solution.
fn run_or_classify(method: Method, net: &RadialNetwork, s: &Settings) -> anyhow::Result<Result<Outcome, LfError>> {
    match methods::run(method, net, &s.solver) {
        Err(e @ LfError::InvalidConfig(_)) => Err(e.into()),
        other => Ok(other),
    }
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<Status> {
    let file = file_config(&a.common)?;
    let s = Settings::resolve(&a.common, &file, a.retraction.as_deref())?;
    let method: Method = a
        .method
        .as_deref()
        .or(file.method.as_deref())
        .unwrap_or("pan-qe")
        .parse()?;
    method.check_retraction(s.solver.retraction)?;
    let net = load_network(&s)?;
    let run = match run_or_classify(method, &net, &s)? {
        Ok(run) => run,
        Err(e) => {
            eprintln!("{method}: failed: {e}");
            return Ok(Status::NotConverged);
        }
    };
    let (name, bytes) = match s.out_format {
        OutFormat::Csv => ("trajectory.csv", output::trajectory_csv(&run.trajectory)?),
        OutFormat::Json => ("trajectory.json", output::trajectory_json(&run.trajectory)?),
    };
    emit(&s, name, &bytes)?;
    if let Some(dir) = &s.out {
        output::write_atomic(dir, "solution.json", &output::solution_json(&net, &run)?)?;
    }
    if run.converged {
        eprintln!("{method}: converged in {} iterations", run.iterations);
        Ok(Status::Ok)
    } else {
        let why = run
            .failure
            .map_or_else(|| "unknown reason".to_string(), |e| e.to_string());
        eprintln!("{method}: not converged after {} iterations: {why}", run.iterations);
        Ok(Status::NotConverged)
    }
}

#[derive(Serialize)]
struct CompareRow {
    method: String,
    converged: bool,
    iterations: Option<usize>,
    /// `max |√v − √v_ref|` against the reference method.
    max_dv: Option<f64>,
    error: Option<String>,
}

fn parse_methods(list: &str) -> anyhow::Result<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>, _>>()?;
    if methods.is_empty() {
        bail!("empty method list");
    }
    Ok(methods)
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<Status> {
    let file = file_config(&a.common)?;
    let s = Settings::resolve(&a.common, &file, None)?;
    let list = a
        .method
        .as_deref()
        .or(file.method.as_deref())
        .unwrap_or("pan-qe,pan-bfm,newton-qe,nr,bfs");
    let methods = parse_methods(list)?;
    let reference: Method = a
        .reference
        .as_deref()
        .or(file.reference.as_deref())
        .unwrap_or("pan-qe")
        .parse()?;
    let net = load_network(&s)?;

    let mut to_run = methods.clone();
    if !to_run.contains(&reference) {
        to_run.push(reference);
    }
    let results: Vec<anyhow::Result<Result<Outcome, LfError>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = to_run
            .iter()
            .map(|&m| {
                let (net, s) = (&net, &s);
                scope.spawn(move || run_or_classify(m, net, s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let reference_run = results[to_run.iter().position(|&m| m == reference).unwrap()]
        .as_ref()
        .ok();

    let mut rows = Vec::new();
    let mut ok = true;
    for (m, r) in methods.iter().zip(&results) {
        let row = match r {
            Ok(run) => CompareRow {
                method: m.to_string(),
                converged: run.converged,
                iterations: Some(run.iterations),
                max_dv: reference_run.map(|rr| max_voltage_change(run.voltages(), rr.voltages())),
                error: run.failure.as_ref().map(ToString::to_string),
            },
            Err(e) => CompareRow {
                method: m.to_string(),
                converged: false,
                iterations: None,
                max_dv: None,
                error: Some(e.to_string()),
            },
        };
        ok &= row.converged;
        rows.push(row);
    }
    let solved: Vec<&Outcome> = results
        .iter()
        .take(methods.len())
        .filter_map(|r| r.as_ref().ok())
        .collect();
    let mut worst: f64 = 0.0;
    for (i, x) in solved.iter().enumerate() {
        for y in &solved[i + 1..] {
            worst = worst.max(max_voltage_change(x.voltages(), y.voltages()));
        }
    }

    let bytes = match s.out_format {
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["method", "converged", "iterations", "max_dv", "error"])?;
            for r in &rows {
                w.write_record([
                    r.method.clone(),
                    r.converged.to_string(),
                    r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                    r.max_dv.map(output::fmt_num).unwrap_or_default(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            w.into_inner()?
        }
        OutFormat::Json => serde_json::to_vec_pretty(&serde_json::json!({
            "reference": reference.name(),
            "max_pairwise_dv": worst,
            "runs": rows,
        }))?,
    };
    let name = match s.out_format {
        OutFormat::Csv => "compare.csv",
        OutFormat::Json => "compare.json",
    };
    emit(&s, name, &bytes)?;
    eprintln!("largest pairwise voltage disagreement: {worst:e} p.u.");
    if ok && worst <= AGREEMENT_TOL {
        Ok(Status::Ok)
    } else {
        Ok(Status::NotConverged)
    }
}

#[derive(Serialize)]
struct ApproxSeries {
    errors: Vec<f64>,
    mean: f64,
    max: f64,
}

impl From<VoltageComparison> for ApproxSeries {
    fn from(c: VoltageComparison) -> Self {
        Self {
            errors: c.errors,
            mean: c.mean,
            max: c.max,
        }
    }
}

fn cmd_approx(a: ApproxArgs) -> anyhow::Result<Status> {
    let file = file_config(&a.common)?;
    let s = Settings::resolve(&a.common, &file, None)?;
    let net = load_network(&s)?;
    let exact = solve_pan(ManifoldKind::Qe, &net, &s.solver)?;
    let lin = lindistflow_solve(&net)?;
    let first = pan_first_iteration(&net, &s.solver)?;
    let lin_err = solution_compare(lin.voltage(), exact.voltages())?;
    let first_err = solution_compare(first.voltage(), exact.voltages())?;
    eprintln!(
        "mean error: lindistflow {:e}, approx1 {:e} p.u.",
        lin_err.mean, first_err.mean
    );
    let ids = &net.node_ids()[1..];
    let bytes = match s.out_format {
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["node", "lindistflow", "approx1"])?;
            for ((id, a), b) in ids.iter().zip(&lin_err.errors).zip(&first_err.errors) {
                w.write_record([id.to_string(), output::fmt_num(*a), output::fmt_num(*b)])?;
            }
            w.into_inner()?
        }
        OutFormat::Json => serde_json::to_vec_pretty(&serde_json::json!({
            "exact_converged": exact.converged,
            "nodes": ids,
            "lindistflow": ApproxSeries::from(lin_err),
            "approx1": ApproxSeries::from(first_err),
        }))?,
    };
    let name = match s.out_format {
        OutFormat::Csv => "approx.csv",
        OutFormat::Json => "approx.json",
    };
    emit(&s, name, &bytes)?;
    if exact.converged {
        Ok(Status::Ok)
    } else {
        eprintln!("exact reference solve did not converge");
        Ok(Status::NotConverged)
    }
}
