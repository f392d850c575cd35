use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mipt_core::analysis::fit_power_law;
use mipt_core::ensembles::Family;
use mipt_core::experiment::{
    fit_report, read_tallies_csv, run_experiment, torus_points, FitConfig, FitReport, RunConfig, TallyRow,
};
use mipt_core::oracle::oracle_check;

/// Percolation Monte Carlo for multipartite entanglement in measurement-only circuits.
#[derive(Parser)]
#[command(name = "mipt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the 1+1D ZZ/X circuit on a ring.
    #[command(name = "run-1d")]
    Run1d(RunArgs),
    /// Simulate the 2+1D ZZ/X circuit on a torus.
    #[command(name = "run-2d")]
    Run2d(RunArgs),
    /// Simulate the tree-structured hyperbolic circuit.
    RunHyperbolic(RunArgs),
    /// Simulate the Dyck brickwork circuit.
    RunDyck(RunArgs),
    /// Fit power laws to an existing tally file.
    Fit(FitArgs),
    /// Angle-averaged rates of torus tallies at evenly spaced `eta`.
    AngleAverage(AngleArgs),
    /// Compare cluster partitions with a stabilizer tableau simulation.
    OracleCheck(RunArgs),
    /// Accumulate the entanglement-weighted graph of a 1+1D run.
    WeightedGraph(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of circuit realizations.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    tallies: PathBuf,
    /// Run configuration supplying the fit windows and the torus side.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Torus side length, for 2D tallies without a config.
    #[arg(long)]
    side: Option<usize>,
    /// Write `fit_report.json` here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Gme,
    Mi,
}

#[derive(Args)]
struct AngleArgs {
    #[arg(long)]
    tallies: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, value_enum, default_value = "gme")]
    measure: MeasureArg,
    /// `eta` range of the averaged curve.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.01, 1.0])]
    eta: Vec<f64>,
    /// Write `angle_average.csv` here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A configuration that cannot be run; reported with exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn load_config(args: &RunArgs, family: Option<Family>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = RunConfig::from_json(&text).map_err(config_error)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    if let Some(f) = family {
        if cfg.ensemble.family != f {
            return Err(config_error(format!(
                "invalid run configuration: this subcommand runs the {} family, the config has {}",
                f.name(),
                cfg.ensemble.family.name()
            )));
        }
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn print_summary(report: &FitReport) {
    for f in report.fits.iter().filter(|f| f.width_or_radius.is_none()) {
        match &f.fit {
            Some(fit) => println!(
                "{} {} k={}: alpha = {:.3} ± {:.3} ({} points)",
                f.family, f.measure, f.k, fit.alpha, fit.alpha_err, fit.points
            ),
            None => println!("{} {} k={}: {}", f.family, f.measure, f.k, f.error.as_deref().unwrap_or("no fit")),
        }
    }
    for e in &report.extrapolations {
        println!("{} k={}: extrapolated alpha = {:.3} ± {:.3}", e.measure, e.k, e.estimate.alpha, e.estimate.spread);
    }
    println!("exponent relations: {}", if report.relation_checks.all_pass { "pass" } else { "FAIL" });
}

fn run(args: &RunArgs, family: Family) -> Result<()> {
    let cfg = load_config(args, Some(family))?;
    let out = output_dir(&cfg);
    let (_, outputs) = run_experiment(&cfg, &out)?;
    let report: FitReport = serde_json::from_str(&std::fs::read_to_string(&outputs.report)?)?;
    println!("{} realizations written to {}", cfg.iterations, out.display());
    print_summary(&report);
    Ok(())
}

fn tally_side(rows: &[TallyRow], config: Option<&Path>, side: Option<usize>) -> Result<(Option<usize>, FitConfig)> {
    let cfg = match config {
        Some(p) => Some(RunConfig::load(p).map_err(config_error)?),
        None => None,
    };
    let torus = rows.first().is_some_and(|r| r.family == Family::Moc2d.name());
    let side = side.or_else(|| cfg.as_ref().and_then(|c| c.ensemble.side()));
    if torus && side.is_none() {
        return Err(config_error("invalid run configuration: torus tallies need --side or a config"));
    }
    Ok((side.filter(|_| torus), cfg.map(|c| c.fit).unwrap_or_default()))
}

fn fit(args: &FitArgs) -> Result<()> {
    let rows = read_tallies_csv(&args.tallies).with_context(|| format!("reading {}", args.tallies.display()))?;
    let (side, fit_cfg) = tally_side(&rows, args.config.as_deref(), args.side)?;
    let report = fit_report(&rows, &fit_cfg, side)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("fit_report.json"), json)?;
            print_summary(&report);
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn angle_average(args: &AngleArgs) -> Result<()> {
    let rows = read_tallies_csv(&args.tallies).with_context(|| format!("reading {}", args.tallies.display()))?;
    let (side, fit_cfg) = tally_side(&rows, args.config.as_deref(), args.side)?;
    let Some(side) = side else {
        bail!("angle averaging needs torus tallies");
    };
    let mi = matches!(args.measure, MeasureArg::Mi);
    let mut series: Vec<(usize, u32)> = rows.iter().map(|r| (r.k, r.radius_sq())).collect();
    series.sort_unstable();
    series.dedup();
    let mut out = String::from("k,radius_sq,eta,rate,stderr\n");
    for (k, r2) in series {
        let sel: Vec<&TallyRow> = rows.iter().filter(|r| r.k == k && r.radius_sq() == r2).collect();
        let points = torus_points(&sel, side, mi, (args.eta[0], args.eta[1]), &fit_cfg);
        for p in &points {
            out.push_str(&format!("{k},{r2},{},{},{}\n", p.eta, p.rate, p.stderr));
        }
        if let Ok(f) = fit_power_law(&points, (args.eta[0], args.eta[1])) {
            eprintln!("k={k} r^2={r2}: alpha = {:.3} ± {:.3}", f.alpha, f.alpha_err);
        }
    }
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("angle_average.csv"), out)?;
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn oracle(args: &RunArgs) -> Result<bool> {
    let cfg = load_config(args, None)?;
    if cfg.ensemble.num_sites() > 64 {
        return Err(config_error("invalid run configuration: the tableau oracle is limited to 64 sites"));
    }
    let report = oracle_check(&cfg.ensemble, cfg.master_seed, cfg.iterations)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("oracle_report.json"), &json)?;
    }
    println!("{json}");
    println!("{} of {} realizations match", report.matches, report.realizations);
    Ok(report.passed())
}

fn weighted_graph(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(args, Some(Family::Moc1d))?;
    cfg.measures.weighted_graph = true;
    cfg.validate().map_err(config_error)?;
    let out = output_dir(&cfg);
    let (_, outputs) = run_experiment(&cfg, &out)?;
    if outputs.weighted.is_empty() {
        bail!("no hits in {} realizations; the weighted graph is undefined", cfg.iterations);
    }
    for p in &outputs.weighted {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run1d(a) => run(a, Family::Moc1d)?,
        Command::Run2d(a) => run(a, Family::Moc2d)?,
        Command::RunHyperbolic(a) => run(a, Family::Hyperbolic)?,
        Command::RunDyck(a) => run(a, Family::Dyck)?,
        Command::Fit(a) => fit(a)?,
        Command::AngleAverage(a) => angle_average(a)?,
        Command::OracleCheck(a) => {
            if !oracle(a)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::WeightedGraph(a) => weighted_graph(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
