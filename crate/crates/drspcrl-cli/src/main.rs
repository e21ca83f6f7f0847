//! Command-line front door: train, sweep, verify, plot.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! setup (bad config file, locked output directory, missing checkpoint).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drspcrl_core::agent::trainer::{AgentState, Checkpoint};
use drspcrl_core::agent::MetricsRow;
use drspcrl_core::config::ExperimentConfig;
use drspcrl_core::eval::{evaluate_policy, ControlPolicy, TablePolicy};
use drspcrl_core::tabular::TabularPolicy;
use drspcrl_core::verify::{run_scope, VerifyScope};

mod chart;
mod runs;

use chart::SweepRow;
use runs::RunDir;

#[derive(Debug)]
pub struct CliError {
    message: String,
    exit: u8,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            exit: 2,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            exit: 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(
    name = "drspcrl",
    version,
    about = "Distributionally robust RL with a self-paced curriculum over the robustness budget"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a config file, writing metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<experiment-name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under the configured perturbation sweeps.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<experiment-name>-sweep).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the sweep as an SVG chart.
        #[arg(long)]
        chart: bool,
    },
    /// Run the registered verification suites and report each property.
    Verify {
        /// One of: dual, envelope, mdp, schedulers, gradients, all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 90210)]
        seed: u64,
    },
    /// Render an existing sweep CSV as an SVG chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, out),
        Command::Sweep {
            checkpoint,
            config,
            seed,
            out,
            chart,
        } => cmd_sweep(&checkpoint, &config, seed, out, chart),
        Command::Verify { scope, seed } => cmd_verify(&scope, seed),
        Command::Plot { input, out } => cmd_plot(&input, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit)
        }
    }
}

fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let config = ExperimentConfig::from_toml_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok((config, text))
}

fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (config, config_text) = load_config(config_path)?;
    let master_seed = seed.unwrap_or(config.experiment.master_seed);
    let out_dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&config.experiment.name));
    let mut run = RunDir::create(&out_dir, "train", &config_text, master_seed)?;

    let mut trainer = config
        .build_trainer(seed)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let metrics_path = run.path.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path)
        .map_err(|e| CliError::runtime(format!("creating metrics.csv: {e}")))?;
    writeln!(metrics, "{}", MetricsRow::HEADER)
        .map_err(|e| CliError::runtime(format!("writing metrics.csv: {e}")))?;
    run.record_file("metrics.csv");

    let total = config.agent.total_iterations;
    let interval = config.agent.checkpoint_interval;
    for i in 1..=total {
        let row = match trainer.train_iteration() {
            Ok(row) => row,
            Err(e) => {
                let _ = run.finish("failed");
                return Err(CliError::runtime(format!("iteration {i}: {e}")));
            }
        };
        writeln!(metrics, "{}", row.to_csv())
            .map_err(|e| CliError::runtime(format!("writing metrics.csv: {e}")))?;
        if interval > 0 && i % interval == 0 && i < total {
            let name = format!("checkpoint_{i}.json");
            write_checkpoint(&run.path.join(&name), &trainer.checkpoint())?;
            run.record_file(&name);
        }
    }
    metrics
        .flush()
        .map_err(|e| CliError::runtime(format!("flushing metrics.csv: {e}")))?;

    write_checkpoint(&run.path.join("checkpoint.json"), &trainer.checkpoint())?;
    run.record_file("checkpoint.json");
    run.finish("success")?;
    println!(
        "trained {total} iterations (seed {master_seed}); outputs in {}",
        out_dir.display()
    );
    Ok(())
}

fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CliError> {
    let text = serde_json::to_string(checkpoint)
        .map_err(|e| CliError::runtime(format!("encoding checkpoint: {e}")))?;
    fs::write(path, text).map_err(|e| CliError::runtime(format!("writing checkpoint: {e}")))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: invalid checkpoint: {e}", path.display())))
}

fn cmd_sweep(
    checkpoint_path: &Path,
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    chart: bool,
) -> Result<(), CliError> {
    let (config, config_text) = load_config(config_path)?;
    if config.evaluation.specs.is_empty() {
        return Err(CliError::validation("evaluation.specs is empty"));
    }
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let master_seed = seed.unwrap_or(config.experiment.master_seed);
    let out_dir = out
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-sweep", config.experiment.name)));
    let mut run = RunDir::create(&out_dir, "sweep", &config_text, master_seed)?;

    let policy: Box<dyn ControlPolicy> = match &checkpoint.agent {
        AgentState::Tabular(agent) => Box::new(TablePolicy {
            n_states: agent.n_states,
            n_actions: agent.n_actions,
            policy: TabularPolicy::Deterministic(agent.greedy_policy()),
        }),
        AgentState::Ppo(agent) => Box::new(agent.clone()),
    };

    let mut env = config.build_env();
    let discount = config.eval_discount();
    let mut rows = Vec::new();
    for spec in &config.evaluation.specs {
        for &level in &spec.levels {
            let report = evaluate_policy(
                policy.as_ref(),
                env.as_env_mut(),
                spec.kind,
                level,
                config.evaluation.episodes,
                master_seed,
                discount,
            )
            .map_err(|e| CliError::runtime(e.to_string()))?;
            rows.push(SweepRow {
                kind: spec.kind.name().to_string(),
                level,
                mean_return: report.mean_return,
                std_error: report.std_error,
                ci95_low: report.ci95_low,
                ci95_high: report.ci95_high,
                episodes: report.episodes,
                seed: master_seed,
            });
        }
    }

    let mut text = String::from(SweepRow::HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    fs::write(run.path.join("sweep.csv"), text)
        .map_err(|e| CliError::runtime(format!("writing sweep.csv: {e}")))?;
    run.record_file("sweep.csv");

    if chart {
        let svg = chart::render_sweep_chart(&rows, &config.experiment.name);
        fs::write(run.path.join("sweep.svg"), svg)
            .map_err(|e| CliError::runtime(format!("writing sweep.svg: {e}")))?;
        run.record_file("sweep.svg");
    }
    run.finish("success")?;
    println!(
        "evaluated {} cells x {} episodes; outputs in {}",
        rows.len(),
        config.evaluation.episodes,
        out_dir.display()
    );
    Ok(())
}

fn cmd_verify(scope: &str, seed: u64) -> Result<(), CliError> {
    let scope = VerifyScope::parse(scope)
        .ok_or_else(|| CliError::validation(format!("unknown scope '{scope}'")))?;
    let results = run_scope(scope, seed);
    let mut failures = 0;
    for r in &results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "[{mark}] {:<45} max error {:>12.3e}  {}",
            r.name, r.max_error, r.detail
        );
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::runtime(format!(
            "{failures}/{} properties failed",
            results.len()
        )));
    }
    println!("all {} properties passed", results.len());
    Ok(())
}

fn cmd_plot(input: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", input.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == SweepRow::HEADER => {}
        _ => {
            return Err(CliError::validation(format!(
                "{} is not a sweep CSV (expected header '{}')",
                input.display(),
                SweepRow::HEADER
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = SweepRow::parse_csv(line).ok_or_else(|| {
            CliError::validation(format!("{}: malformed row {}", input.display(), i + 2))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::validation("sweep CSV has no data rows"));
    }
    let name = input
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "sweep".to_string());
    let svg = chart::render_sweep_chart(&rows, &name);
    fs::write(out, svg)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(())
}
