use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use osnr_bench::runner::load_case_file;
use osnr_bench::{emit_plotdata, run_experiment, BenchError, ConfigPatch, Experiment, ExperimentConfig, Quantity};
use osnr_core::problems::{opf_build, AlphaRule, OpfOptions};
use osnr_core::Algorithm;

#[derive(Parser)]
#[command(name = "osnr-bench", version, about = "Online sketched Newton-Raphson experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write a result bundle.
    Run(RunArgs),
    /// Validate a MATPOWER case file and print a summary.
    ParseCase {
        path: PathBuf,
    },
    /// Emit long-format plot data from a result bundle.
    PlotData {
        /// Bundle directory written by `run`.
        bundle: PathBuf,
        /// regret, violation or steptime.
        #[arg(long, short)]
        quantity: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Sketch percentage; repeat for several.
    #[arg(long)]
    rho: Vec<f64>,
    /// Algorithm (osnr, osnr_ec, ogd, onm); repeat for several.
    #[arg(long)]
    algorithm: Vec<Algorithm>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha_rule: Option<AlphaRule>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum concurrent runs (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    record_decisions: bool,
    /// Also time sketched steps at n = m = 800.
    #[arg(long)]
    cost_probe: bool,
}

impl RunArgs {
    fn patch(&self) -> ConfigPatch {
        ConfigPatch {
            experiment: self.experiment,
            n: self.n,
            m: self.m,
            case: self.case.clone(),
            horizon: self.horizon,
            algorithms: (!self.algorithm.is_empty()).then(|| self.algorithm.clone()),
            rho: (!self.rho.is_empty()).then(|| self.rho.clone()),
            runs: self.runs,
            seed: self.seed,
            eta: self.eta,
            alpha_rule: self.alpha_rule,
            out: self.out.clone(),
            record_decisions: self.record_decisions.then_some(true),
            jobs: self.jobs,
            cost_probe: self.cost_probe.then_some(true),
            drift: None,
            condition: None,
        }
    }
}

fn run(args: &RunArgs) -> Result<ExitCode, BenchError> {
    let file = match &args.config {
        Some(path) => ConfigPatch::load(path)?,
        None => ConfigPatch::default(),
    };
    let cfg = ExperimentConfig::from_patch(&file.merge(args.patch()))?;
    let report = run_experiment(&cfg)?;
    let m = &report.manifest;
    for v in &m.variants {
        eprintln!("{:<20} {}/{} runs ok", v.label, v.succeeded, cfg.runs);
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(p) = &m.cost_probe {
        eprintln!(
            "cost probe: {:.3e} s/step at rho {} vs {:.3e} s/step at rho {} (ratio {:.3})",
            p.low_mean_seconds, p.low_rho, p.high_mean_seconds, p.high_rho, p.ratio
        );
    }
    eprintln!("wrote {} in {:.1} s", report.dir.display(), m.wall_seconds);
    if report.failures() > 0 {
        for r in m.runs.iter().filter(|r| r.error.is_some()) {
            eprintln!("failed: {} seed {}: {}", r.label, r.seed, r.error.as_deref().unwrap_or(""));
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_case(path: &Path) -> Result<(), BenchError> {
    let case = load_case_file(path)?;
    let load: f64 = case.buses.iter().map(|b| b.pd).sum();
    let reference = case.reference_bus().map(|i| case.buses[i].id);
    println!("buses       {}", case.buses.len());
    println!("branches    {}", case.branches.len());
    println!("generators  {}", case.gens.len());
    println!("base_mva    {}", case.base_mva);
    println!("load_mw     {load}");
    if let Some(id) = reference {
        println!("reference   bus {id}");
    }
    let problem = opf_build(&case, &OpfOptions::default())
        .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    let layout = problem.layout();
    let constraints = osnr_core::EqualityConstrained::constraints(&problem);
    println!("variables   {}", layout.n_vars());
    println!("equalities  {}", layout.n_rows());
    println!("free dims   {}", constraints.reduced_dim());
    Ok(())
}

fn plot_data(bundle: &Path, quantity: &str, out: Option<&Path>) -> Result<(), BenchError> {
    let quantity: Quantity = quantity.parse()?;
    let mut buf = Vec::new();
    emit_plotdata(bundle, quantity, &mut buf)?;
    match out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| BenchError::Io { path: path.display().to_string(), source: e }),
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| BenchError::Io { path: "stdout".into(), source: e }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::ParseCase { path } => parse_case(path).map(|()| ExitCode::SUCCESS),
        Command::PlotData { bundle, quantity, out } => {
            plot_data(bundle, quantity, out.as_deref()).map(|()| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
