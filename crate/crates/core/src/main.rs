use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nesterov_sa::harness::{
    algebra_report, parse_config, parse_momentum_spec, plotdata, run_experiment, run_lemma_suite, ExperimentConfig,
    HarnessError, LemmaSuiteConfig, ResultBundle, EXIT_OK,
};

#[derive(Parser)]
#[command(name = "nesterov-sa", version, about = "Nesterov-momentum stochastic approximation experiments")]
struct Cli {
    /// Config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed list (run) or the ensemble seed (lemma).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem instance and write its text dump.
    Gen(ExperimentArgs),
    /// Run an experiment and write trace and summary CSVs.
    Run(ExperimentArgs),
    /// Run the lemma suite.
    Lemma(LemmaArgs),
    /// Print companion products and tail coefficients.
    Algebra {
        /// `constant:T`, `harmonic:S` or `power:C:S:P`.
        #[arg(long, default_value = "constant:0.5")]
        momentum: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Turn a bundle directory into log-log plot columns.
    Plotdata {
        /// Bundle directory.
        bundle: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Use a preset instead of (or before) the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Iteration count override.
    #[arg(long = "iterations")]
    iterations: Option<usize>,
    /// Constant momenta to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
}

#[derive(Args)]
struct LemmaArgs {
    /// Comma-separated lemma ids, or `all`.
    #[arg(long)]
    lemmas: Option<String>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    branches: Option<usize>,
    /// `drift:D` or `theta:T`.
    #[arg(long)]
    negative_control: Option<String>,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn experiment_config(cli: &Cli, args: &ExperimentArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut text = String::new();
    if let Some(preset) = &args.preset {
        text.push_str(&format!("preset = {preset}\n"));
    }
    if let Some(path) = &cli.config {
        text.push_str(&read(path)?);
    }
    let mut config = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        config = config.with_seeds(vec![seed]);
    }
    if let Some(n) = args.iterations {
        config = config.with_iterations(n);
    }
    if !args.sweep.is_empty() {
        config = config.with_sweep(args.sweep.clone());
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config_output: Option<&Path>) -> PathBuf {
    cli.out.clone().or_else(|| config_output.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("results"))
}

fn execute(cli: &Cli) -> Result<i32, HarnessError> {
    match &cli.command {
        Command::Gen(args) => {
            let config = experiment_config(cli, args)?;
            let inst = config.instance()?;
            let dir = out_dir(cli, config.output.as_deref());
            fs::create_dir_all(&dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
            let path = dir.join("instance.txt");
            fs::write(&path, inst.dump()).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            println!("{}", path.display());
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let config = experiment_config(cli, args)?;
            let bundle = run_experiment(&config)?;
            let dir = out_dir(cli, config.output.as_deref());
            bundle.write_to(&dir)?;
            report_runs(&config, &bundle);
            eprintln!("wall time {:.3} s", bundle.wall_time.as_secs_f64());
            Ok(bundle.exit_code(!config.sweep_theta.is_empty()))
        }
        Command::Lemma(args) => {
            let mut config = match &cli.config {
                Some(path) => LemmaSuiteConfig::parse(&read(path)?)?,
                None => LemmaSuiteConfig::default(),
            };
            let mut overrides = String::new();
            if let Some(v) = &args.lemmas {
                overrides.push_str(&format!("lemmas = {v}\n"));
            }
            if let Some(v) = &args.negative_control {
                overrides.push_str(&format!("negative_control = {v}\n"));
            }
            let parsed = LemmaSuiteConfig::parse(&overrides)?;
            if args.lemmas.is_some() {
                config.lemmas = parsed.lemmas;
            }
            if args.negative_control.is_some() {
                config.negative_control = parsed.negative_control;
            }
            config.paths = args.paths.unwrap_or(config.paths);
            config.length = args.length.unwrap_or(config.length);
            config.branches = args.branches.unwrap_or(config.branches);
            config.seed = cli.seed.unwrap_or(config.seed);
            let result = run_lemma_suite(&config)?;
            for line in result.summary_lines() {
                println!("{line}");
            }
            if let Some(dir) = &cli.out {
                result.write_to(dir)?;
            }
            Ok(result.exit_code())
        }
        Command::Algebra { momentum, n } => {
            print!("{}", algebra_report(&parse_momentum_spec(momentum)?, *n)?);
            Ok(EXIT_OK)
        }
        Command::Plotdata { bundle } => {
            print!("{}", plotdata(&ResultBundle::read_files(bundle)?)?);
            Ok(EXIT_OK)
        }
    }
}

fn report_runs(config: &ExperimentConfig, bundle: &ResultBundle) {
    let sweep: Vec<Option<f64>> = if config.sweep_theta.is_empty() {
        vec![None]
    } else {
        config.sweep_theta.iter().copied().map(Some).collect()
    };
    for theta in sweep {
        let label = theta.map(|t| format!("theta={t} ")).unwrap_or_default();
        for r in bundle.runs.iter().filter(|r| r.theta == theta) {
            println!(
                "{label}seed={} final_dist={:.6e} ratio={:.4} diverged={}",
                r.seed,
                r.final_dist(),
                r.ratio(),
                r.trace.diverged()
            );
        }
        println!("{label}median ratio={:.4}", bundle.median_ratio(theta));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
