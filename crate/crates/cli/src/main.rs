use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gausswidth::experiments::{
    assemble_rate_rows, ball_count_list, kernel_table, norm_estimate_row, run, spectral_table, ExperimentConfig,
    NormSpace, OperatorFlavor, RateSpec, Report,
};
use gausswidth::norms::IntegratorConfig;
use gausswidth::ou_kernel::KernelEvalConfig;

#[derive(Parser)]
#[command(name = "gausswidth", version, about = "Gaussian Sobolev widths, norms and kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for `<name>.csv` and `<name>.summary.json`; overrides the config's `output`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact width curves (`kind: spectral-width`).
    Spectral(ConfigArgs),
    /// Assembled-operator convergence (`kind: assemble-rate`).
    AssembleRate(ConfigArgs),
    /// Norm checks (`kind: norm-check` or `norm-estimate`), or a single estimate.
    #[command(args_conflicts_with_subcommands = true)]
    Norms {
        #[command(subcommand)]
        action: Option<NormsAction>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Kernel checks (`kind: kernel-check`), or a kernel table.
    #[command(args_conflicts_with_subcommands = true)]
    Kernel {
        #[command(subcommand)]
        action: Option<KernelAction>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Truncated-norm scan (`kind: counterexample`).
    Counterexample(ConfigArgs),
    /// Flag-driven width tables.
    Widths {
        #[command(subcommand)]
        action: WidthsAction,
    },
}

#[derive(Subcommand)]
enum NormsAction {
    Estimate {
        #[arg(long)]
        function: String,
        #[arg(long)]
        space: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Monte Carlo sample count; tensor quadrature when absent.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum KernelAction {
    Table {
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        y: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlavorArg {
    Linear,
    Sampling,
}

#[derive(Subcommand)]
enum WidthsAction {
    Spectral {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        d: u32,
        #[arg(long, value_delimiter = ',', conflicts_with = "r_max")]
        n_list: Option<Vec<u64>>,
        #[arg(long)]
        r_max: Option<u64>,
    },
    AssembleRate {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, value_enum, default_value = "sampling")]
        flavor: FlavorArg,
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<u64>,
        #[arg(long)]
        function: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.5)]
        theta: f64,
    },
}

fn load(path: &Path, expected: &[&str]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if !expected.contains(&cfg.kind()) {
        bail!("config kind `{}` does not match this subcommand (expected {})", cfg.kind(), expected.join(" or "));
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, report: &Report, out_dir: Option<&Path>) -> Result<bool> {
    let stem = cfg.name.clone().unwrap_or_else(|| cfg.kind().to_string());
    match out_dir.or(cfg.output.as_deref()) {
        Some(dir) => {
            let (csv, json) = report.write(dir, &stem)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
        }
        None => {
            print!("{}", report.csv);
            eprintln!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
    }
    for c in &report.summary.criteria {
        eprintln!("{:?} {} measured={} threshold={}", c.verdict, c.name, c.measured, c.threshold);
    }
    Ok(report.summary.all_passed)
}

fn run_config(path: &Path, out_dir: Option<&Path>, expected: &[&str]) -> Result<bool> {
    let cfg = load(path, expected)?;
    let report = run(&cfg).with_context(|| format!("running {}", path.display()))?;
    emit(&cfg, &report, out_dir)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Spectral(a) => run_config(&a.config, a.out_dir.as_deref(), &["spectral-width"]),
        Command::AssembleRate(a) => run_config(&a.config, a.out_dir.as_deref(), &["assemble-rate"]),
        Command::Counterexample(a) => run_config(&a.config, a.out_dir.as_deref(), &["counterexample"]),
        Command::Norms { action, config, out_dir } => match (action, config) {
            (Some(NormsAction::Estimate { function, space, s, p, d, samples, seed }), _) => {
                let space: NormSpace = space.parse()?;
                let cfg = match samples {
                    Some(n) => IntegratorConfig::monte_carlo(n, seed),
                    None => IntegratorConfig { seed, ..IntegratorConfig::default() },
                };
                cfg.validate()?;
                print!("{}", norm_estimate_row(&function, d, space, s, p, &cfg)?);
                Ok(true)
            }
            (None, Some(path)) => run_config(&path, out_dir.as_deref(), &["norm-check", "norm-estimate"]),
            (None, None) => bail!("norms needs --config or the `estimate` subcommand"),
        },
        Command::Kernel { action, config, out_dir } => match (action, config) {
            (Some(KernelAction::Table { sigma, x, y }), _) => {
                print!("{}", kernel_table(&sigma, &x, &y, &KernelEvalConfig::default())?);
                Ok(true)
            }
            (None, Some(path)) => run_config(&path, out_dir.as_deref(), &["kernel-check"]),
            (None, None) => bail!("kernel needs --config or the `table` subcommand"),
        },
        Command::Widths { action } => match action {
            WidthsAction::Spectral { s, d, n_list, r_max } => {
                let ns = match (n_list, r_max) {
                    (Some(ns), None) => ns,
                    (None, Some(r)) => ball_count_list(d, r)?,
                    _ => bail!("give exactly one of --n-list or --r-max"),
                };
                print!("{}", spectral_table(s, d, &ns)?);
                Ok(true)
            }
            WidthsAction::AssembleRate { p, q, s, d, flavor, n_list, function, seed, theta } => {
                let spec = RateSpec {
                    p,
                    q,
                    s,
                    d,
                    flavor: match flavor {
                        FlavorArg::Linear => OperatorFlavor::Linear,
                        FlavorArg::Sampling => OperatorFlavor::Sampling,
                    },
                    function,
                    theta,
                    seed,
                };
                let (_, csv) = assemble_rate_rows(&spec, &n_list, &IntegratorConfig::default())?;
                print!("{csv}");
                Ok(true)
            }
        },
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
