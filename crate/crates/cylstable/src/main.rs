//! Command-line front end: seeded simulation, integration, decoupling and
//! verification runs with CSV/JSON outputs for downstream plotting. Every
//! output embeds the resolved configuration, the seed and the crate version
//! so that any artifact can be reproduced from its own header.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use cylstable::decoupling::{conditional_charfn_check, decoupling_ratio};
use cylstable::error::CylError;
use cylstable::hilbert::TruncationConfig;
use cylstable::integrator::{integrate, RefinementSchedule};
use cylstable::processes::{approximate_by_steps, integrand_from_catalog};
use cylstable::sampler::{sample_driving_path, StabilityIndex};
use cylstable::spectral::{calibrate_constants, SphereMeasure};
use cylstable::verify::run_suite;
use cylstable::{HVector, RngStream, TimeGrid};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "cylstable", version, about = "Stochastic integration against canonical alpha-stable cylindrical noise on truncated Hilbert spaces")]
struct Cli {
    /// JSON config file; explicit flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (results are independent of the count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate driving-path scenarios and write them to CSV.
    Sample(SampleArgs),
    /// Integrate a catalog integrand over simulated scenarios.
    Integrate(IntegrateArgs),
    /// Tangent-sequence decoupling report for a catalog integrand.
    Decouple(DecoupleArgs),
    /// Print the calibrated spectral constants as JSON.
    Constants(ConstantsArgs),
    /// Run verification experiment suites.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Truncated dimension of the source space G.
    #[arg(long)]
    dg: Option<usize>,
    /// Truncated dimension of the target space H.
    #[arg(long)]
    dh: Option<usize>,
    /// Grid spec: "MxT" for M uniform cells on [0, T], or explicit times
    /// "0,0.25,0.5,1".
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenarios.
    #[arg(long)]
    samples: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct IntegrateArgs {
    /// Catalog integrand: constant, power_law, path_volatility,
    /// random_partition.
    #[arg(long)]
    integrand: Option<String>,
    /// JSON parameter block for the integrand.
    #[arg(long)]
    params: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Driving grid spec ("MxT" or explicit times); the cell count must be
    /// divisible by 2^levels.
    #[arg(long)]
    grid: Option<String>,
    /// Number of dyadic refinement levels.
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DecoupleArgs {
    #[arg(long)]
    integrand: Option<String>,
    #[arg(long)]
    params: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ConstantsArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Largest sphere dimension for the mass table.
    #[arg(long)]
    max_dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Suite name or "all".
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: failed to build thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let file_config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Sample(args) => run_sample(args, &file_config),
        Command::Integrate(args) => run_integrate(args, &file_config),
        Command::Decouple(args) => run_decouple(args, &file_config),
        Command::Constants(args) => run_constants(args, &file_config),
        Command::Verify(args) => run_verify(args, &file_config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CylError::Config(_) => ExitCode::from(2),
                CylError::Numerical(_) => ExitCode::from(1),
            }
        }
    }
}

fn load_config(path: Option<&std::path::Path>) -> Result<Value, CylError> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CylError::config(format!("cannot read config {p:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CylError::config(format!("config {p:?} is not valid JSON: {e}")))
        }
    }
}

/// Flag value if given, else the config-file entry, else the default.
fn resolve<T: Clone + serde::de::DeserializeOwned>(
    flag: Option<T>,
    config: &Value,
    key: &str,
    default: Option<T>,
) -> Result<T, CylError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = config.get(key) {
        return serde_json::from_value(v.clone())
            .map_err(|e| CylError::config(format!("config key '{key}': {e}")));
    }
    default.ok_or_else(|| CylError::config(format!("missing required option --{key}")))
}

fn parse_grid(spec: &str) -> Result<TimeGrid, CylError> {
    if spec.contains(',') {
        let times: Result<Vec<f64>, _> = spec.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let times = times.map_err(|e| CylError::config(format!("bad grid times: {e}")))?;
        TimeGrid::new(times)
    } else if let Some((m, t)) = spec.split_once('x') {
        let cells: usize = m
            .trim()
            .parse()
            .map_err(|e| CylError::config(format!("bad cell count in grid spec: {e}")))?;
        let horizon: f64 = t
            .trim()
            .parse()
            .map_err(|e| CylError::config(format!("bad horizon in grid spec: {e}")))?;
        TimeGrid::uniform(cells, horizon)
    } else {
        Err(CylError::config(format!(
            "grid spec '{spec}' is neither 'MxT' nor a comma-separated time list"
        )))
    }
}

fn provenance(command: &str, seed: u64, resolved: &Value) -> Value {
    json!({
        "tool": "cylstable",
        "version": VERSION,
        "command": command,
        "seed": seed,
        "config": resolved,
    })
}

fn write_output(out: Option<&PathBuf>, content: &str) -> Result<(), CylError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CylError::config(format!("cannot write {path:?}: {e}"))),
        None => {
            print!("{content}");
            std::io::stdout()
                .flush()
                .map_err(|e| CylError::config(format!("stdout: {e}")))
        }
    }
}

fn run_sample(args: SampleArgs, file_config: &Value) -> Result<ExitCode, CylError> {
    let alpha = StabilityIndex::new(resolve(args.alpha, file_config, "alpha", None)?)?;
    let d_g = resolve(args.dg, file_config, "dg", Some(4))?;
    let d_h = resolve(args.dh, file_config, "dh", Some(4))?;
    let grid = parse_grid(&resolve(args.grid, file_config, "grid", Some("16x1.0".into()))?)?;
    let seed = resolve(args.seed, file_config, "seed", Some(0))?;
    let samples = resolve(args.samples, file_config, "samples", Some(1))?;
    let config = TruncationConfig::new(d_g, d_h)?;

    let resolved = json!({
        "alpha": alpha.value(), "dg": d_g, "dh": d_h,
        "grid": grid.times(), "seed": seed, "samples": samples,
    });
    let mut buf = Vec::new();
    writeln!(buf, "# {}", provenance("sample", seed, &resolved)).unwrap();
    write!(buf, "scenario,t_left,t_right,subordinator").unwrap();
    for d in 0..d_g {
        write!(buf, ",dz_{d}").unwrap();
    }
    writeln!(buf).unwrap();
    for s in 0..samples {
        let mut rng = RngStream::new(seed, s as u64).rng();
        let path = sample_driving_path(alpha, config, &grid, &mut rng);
        let mut row = Vec::new();
        path.write_csv(&mut row).unwrap();
        for line in String::from_utf8(row).unwrap().lines() {
            writeln!(buf, "{s},{line}").unwrap();
        }
    }
    write_output(args.out.as_ref(), &String::from_utf8(buf).unwrap())?;
    Ok(ExitCode::SUCCESS)
}

fn run_integrate(args: IntegrateArgs, file_config: &Value) -> Result<ExitCode, CylError> {
    let name = resolve(args.integrand, file_config, "integrand", None)?;
    let params_text = resolve(args.params, file_config, "params", Some("{}".into()))?;
    let params: Value = serde_json::from_str(&params_text)
        .map_err(|e| CylError::config(format!("--params is not valid JSON: {e}")))?;
    let alpha = StabilityIndex::new(resolve(args.alpha, file_config, "alpha", None)?)?;
    let grid = parse_grid(&resolve(args.grid, file_config, "grid", Some("256x1.0".into()))?)?;
    let levels = resolve(args.levels, file_config, "levels", Some(6))?;
    let scenarios = resolve(args.scenarios, file_config, "scenarios", Some(16))?;
    let seed = resolve(args.seed, file_config, "seed", Some(0))?;

    let psi = integrand_from_catalog(&name, &params)?;
    let (d_h, d_g) = (psi.dims().0, psi.dims().1);
    let config = TruncationConfig::new(d_g, d_h)?;
    if levels == 0 || grid.num_cells() % (1usize << levels) != 0 {
        return Err(CylError::config(format!(
            "grid cell count {} must be divisible by 2^levels = {}",
            grid.num_cells(),
            1u64 << levels
        )));
    }
    let schedule = RefinementSchedule::dyadic(1, levels);

    let resolved = json!({
        "integrand": name, "params": params, "alpha": alpha.value(),
        "grid": grid.times(), "levels": levels, "scenarios": scenarios, "seed": seed,
    });
    let mut buf = Vec::new();
    writeln!(buf, "# {}", provenance("integrate", seed, &resolved)).unwrap();
    write!(buf, "scenario,level_cells,truncation,cauchy_increment,converged").unwrap();
    for d in 0..d_h {
        write!(buf, ",terminal_{d}").unwrap();
    }
    writeln!(buf).unwrap();
    for s in 0..scenarios {
        let mut rng = RngStream::new(seed, s as u64).rng();
        let path = sample_driving_path(alpha, config, &grid, &mut rng);
        let (_, diag) = integrate(psi.clone(), &path, &schedule)?;
        for level in &diag.levels {
            write!(
                buf,
                "{s},{},{},{},{}",
                level.cells, level.truncation, level.cauchy_increment, diag.converged
            )
            .unwrap();
            for v in &level.terminal {
                write!(buf, ",{v}").unwrap();
            }
            writeln!(buf).unwrap();
        }
    }
    write_output(args.out.as_ref(), &String::from_utf8(buf).unwrap())?;
    Ok(ExitCode::SUCCESS)
}

fn run_decouple(args: DecoupleArgs, file_config: &Value) -> Result<ExitCode, CylError> {
    let name = resolve(args.integrand, file_config, "integrand", None)?;
    let params_text = resolve(args.params, file_config, "params", Some("{}".into()))?;
    let params: Value = serde_json::from_str(&params_text)
        .map_err(|e| CylError::config(format!("--params is not valid JSON: {e}")))?;
    let alpha = StabilityIndex::new(resolve(args.alpha, file_config, "alpha", None)?)?;
    let grid = parse_grid(&resolve(args.grid, file_config, "grid", Some("8x1.0".into()))?)?;
    let scenarios = resolve(args.scenarios, file_config, "scenarios", Some(20_000))?;
    let seed = resolve(args.seed, file_config, "seed", Some(0))?;

    let psi = integrand_from_catalog(&name, &params)?;
    let d_h = psi.dims().0;
    let theta = approximate_by_steps(psi, grid.clone(), grid.num_cells() as f64);

    let identity = cylstable::processes::ContractionStepProcess::identity(grid.clone(), d_h);
    let stream = RngStream::new(seed, 0);
    let id_ratios = decoupling_ratio(&theta, &identity, alpha, scenarios, stream.substream(1))?;
    let random_gamma = cylstable::verify::random_contraction_step(&grid, d_h, stream.substream(2));
    let rnd_ratios =
        decoupling_ratio(&theta, &random_gamma, alpha, scenarios, stream.substream(3))?;

    let h = HVector::new((0..d_h).map(|k| if k == 0 { 1.0 } else { 0.5 }).collect());
    let charfn_dev = conditional_charfn_check(
        &theta,
        alpha,
        &h,
        scenarios.min(100_000),
        8,
        stream.substream(4),
    )?;

    let resolved = json!({
        "integrand": name, "params": params, "alpha": alpha.value(),
        "grid": grid.times(), "scenarios": scenarios, "seed": seed,
    });
    let report = json!({
        "provenance": provenance("decouple", seed, &resolved),
        "identity_gamma": id_ratios,
        "random_gamma": rnd_ratios,
        "conditional_charfn_worst_deviation": charfn_dev,
    });
    write_output(
        args.out.as_ref(),
        &format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_constants(args: ConstantsArgs, file_config: &Value) -> Result<ExitCode, CylError> {
    let alpha = StabilityIndex::new(resolve(args.alpha, file_config, "alpha", None)?)?;
    let max_dim = resolve(args.max_dim, file_config, "max_dim", Some(8))?;
    let constants = calibrate_constants(alpha)?;
    let masses: Vec<Value> = (1..=max_dim)
        .map(|n| {
            let m = SphereMeasure::new(n, alpha).unwrap();
            json!({"dim": n, "mass": m.mass})
        })
        .collect();
    let resolved = json!({"alpha": alpha.value(), "max_dim": max_dim});
    let report = json!({
        "provenance": provenance("constants", 0, &resolved),
        "alpha": constants.alpha,
        "c_alpha": constants.c_alpha,
        "tail_constant": constants.tail_constant,
        "ill_conditioned": constants.ill_conditioned,
        "sphere_masses": masses,
    });
    write_output(
        args.out.as_ref(),
        &format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: VerifyArgs, file_config: &Value) -> Result<ExitCode, CylError> {
    let suite = resolve(args.suite, file_config, "suite", Some("all".into()))?;
    let seed = resolve(args.seed, file_config, "seed", Some(42))?;
    let reports = run_suite(&suite, seed)?;
    let mut all_pass = true;
    for report in &reports {
        for criterion in &report.criteria {
            eprintln!(
                "[{}] {}/{}: observed {:.6e} vs threshold {:.6e} ({}) [{:.2}s]",
                if criterion.pass { "PASS" } else { "FAIL" },
                report.experiment,
                criterion.name,
                criterion.observed,
                criterion.threshold,
                criterion.comparison,
                report.runtime_sec,
            );
        }
        all_pass &= report.pass;
    }
    let resolved = json!({"suite": suite, "seed": seed});
    let out = json!({
        "provenance": provenance("verify", seed, &resolved),
        "reports": reports,
    });
    write_output(
        args.out.as_ref(),
        &format!("{}\n", serde_json::to_string_pretty(&out).unwrap()),
    )?;
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
