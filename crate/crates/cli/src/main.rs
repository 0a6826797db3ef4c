//! `pcegp`: fit, apply, inspect and benchmark PCE Gaussian process models.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use pcegp::bench::{refit, run_baseline, run_benchmark, BenchmarkConfig, BenchmarkReport};
use pcegp::data::read_table;
use pcegp::gp::{ModelDocument, TrainingData};
use pcegp::optim::{fit_scalers, run_search, write_history_line};

#[derive(Parser)]
#[command(name = "pcegp", version, about = "Gaussian process regression with polynomial-chaos lengthscales")]
struct Cli {
    /// Worker threads for fold-level parallelism.
    #[arg(long, global = true, env = "PCEGP_THREADS")]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides one configuration key, e.g. `--set search.n_trials=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Search hyperparameters on the configured dataset and save the model.
    Fit(RunArgs),
    /// Predict mean and variance for every row of a CSV file.
    Predict {
        model: PathBuf,
        input: PathBuf,
        /// Output CSV (stdout if absent).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// k-fold RMSE of the PCE-GP on the configured dataset.
    Benchmark(RunArgs),
    /// k-fold RMSE of the stationary ARD baseline on the configured dataset.
    Baseline(RunArgs),
    /// Print the fitted hyperparameter polynomials of a model.
    Inspect {
        model: PathBuf,
        /// Output file (stdout if absent).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Distinguishes bad invocations (exit 2) from failures while running (exit 1).
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(args: &RunArgs) -> Result<BenchmarkConfig, Failure> {
    config::load(args.config.as_deref(), &args.overrides, args.seed).map_err(Failure::Usage)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_fit(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let data = config.data.load().map_err(|e| Failure::Usage(e.into()))?;
    create_dir(&args.output)?;
    let history_path = args.output.join("history.jsonl");
    let mut history = BufWriter::new(
        File::create(&history_path).with_context(|| format!("cannot write {}", history_path.display()))?,
    );
    let outcome = run_search(&data.inputs, &data.outputs, &config.model, &config.search, config.seed, &mut |r| {
        write_history_line(&mut history, r)?;
        history.flush().map_err(|e| pcegp::Error::Model(format!("history: {e}")))
    })
    .map_err(anyhow::Error::from)?;
    drop(history);

    let scalers = fit_scalers(&config.model, &data.inputs, &data.outputs).map_err(anyhow::Error::from)?;
    let (model, theta) = refit(
        &config.model,
        &outcome.best_theta,
        scalers,
        &data.inputs,
        &data.outputs,
        &config.search,
    )
    .map_err(anyhow::Error::from)?;
    let training = TrainingData {
        source: Some(config.data.path.display().to_string()),
        column_names: data.column_names.clone(),
        target_name: data.target_name.clone(),
        inputs: (0..data.len()).map(|i| data.inputs.row(i).iter().copied().collect()).collect(),
        outputs: data.outputs.iter().copied().collect(),
    };
    let doc = ModelDocument::new(
        config.model.clone(),
        theta,
        model.input_scaler.clone(),
        model.output_scaler.clone(),
        training,
    );
    let path = args.output.join("model.json");
    doc.save(&path).map_err(anyhow::Error::from)?;
    eprintln!(
        "best trial {} (cv loss {:.6}); model written to {}",
        outcome.best_trial,
        outcome.best_loss,
        path.display()
    );
    Ok(())
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_predict(model: &Path, input: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let doc = ModelDocument::load(model).map_err(|e| Failure::Usage(e.into()))?;
    let table = read_table(input).map_err(|e| Failure::Usage(e.into()))?;
    let names = &doc.training.column_names;
    let mut out = open_output(output)?;
    writeln!(out, "mean,variance").map_err(anyhow::Error::from)?;
    if table.header.is_empty() && table.rows.is_empty() {
        out.flush().map_err(anyhow::Error::from)?;
        return Ok(());
    }
    let positions = names
        .iter()
        .map(|n| {
            table
                .header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| anyhow!("input is missing column {n:?}"))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Failure::Usage)?;
    if let Some(extra) = table
        .header
        .iter()
        .find(|h| !names.contains(h) && **h != doc.training.target_name)
    {
        return Err(Failure::Usage(anyhow!("input has unexpected column {extra:?}")));
    }
    let fitted = doc.to_model().map_err(anyhow::Error::from)?;
    for row in &table.rows {
        let x: Vec<f64> = positions.iter().map(|&p| row[p]).collect();
        let p = fitted.predict(&x).map_err(anyhow::Error::from)?;
        writeln!(out, "{},{}", p.mean, p.variance.max(0.0)).map_err(anyhow::Error::from)?;
    }
    out.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn write_report(dir: &Path, report: &BenchmarkReport) -> Result<()> {
    write_file(&dir.join("report.json"), &report.to_json()?)?;
    let table = report.render_table();
    write_file(&dir.join("report.txt"), &table)?;
    write_file(
        &dir.join("timing.json"),
        &format!("{{\"wall_time_s\": {}}}\n", report.wall_time_s),
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_benchmark(args: &RunArgs, baseline: bool) -> Result<(), Failure> {
    let config = load_config(args)?;
    if !config.data.path.is_file() {
        return Err(Failure::Usage(anyhow!(
            "dataset {} does not exist",
            config.data.path.display()
        )));
    }
    create_dir(&args.output)?;
    let checkpoint = args.output.join("checkpoint.jsonl");
    let report = if baseline {
        run_baseline(&config, Some(&checkpoint))
    } else {
        run_benchmark(&config, Some(&checkpoint))
    }
    .map_err(anyhow::Error::from)?;
    write_report(&args.output, &report)?;
    Ok(())
}

fn cmd_inspect(model: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let doc = ModelDocument::load(model).map_err(|e| Failure::Runtime(e.into()))?;
    let mut out = open_output(output)?;
    out.write_all(doc.inspect_report().as_bytes())
        .and_then(|_| out.flush())
        .map_err(anyhow::Error::from)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict { model, input, output } => cmd_predict(model, input, output.as_deref()),
        Command::Benchmark(args) => cmd_benchmark(args, false),
        Command::Baseline(args) => cmd_benchmark(args, true),
        Command::Inspect { model, output } => cmd_inspect(model, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
