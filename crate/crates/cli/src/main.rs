use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adacot::{checkpoint, experiment, rollout_log, RunConfig};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Adaptive long/short reasoning trainer on a synthetic task.
#[derive(Parser)]
#[command(name = "adacot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoint and evaluation summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shape rewards and advantages for a JSONL rollout log.
    Shape {
        /// Input JSONL, or `-` for stdin.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output JSONL, or `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Training step used by the reward warmup schedule.
        #[arg(long)]
        step: u64,
    },
    /// Evaluate a saved policy with uninstructed and forced-mode prompts.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Summarize a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Training steps averaged when no evaluation rows are present.
        #[arg(long, default_value_t = 50)]
        window: usize,
        /// Also write a wide per-step CSV for plotting.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let report = experiment::run_experiment(&cfg)?;
    let records = experiment::read_metrics(cfg.output.metrics_path())?;
    print!("{}", experiment::summarize(&records, 50));
    let long = &report.eval.long_only.all;
    println!(
        "long-only  accuracy {:.3}  avg_tokens {:.1}",
        long.accuracy, long.avg_tokens
    );
    println!("wrote {}", cfg.output.dir.display());
    Ok(())
}

fn shape(input: &Path, out: &Path, config: &Path, step: u64) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let reader: Box<dyn BufRead> = if is_stdio(input) {
        Box::new(io::stdin().lock())
    } else {
        let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
        Box::new(BufReader::new(f))
    };
    let mut writer: Box<dyn Write> = if is_stdio(out) {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        Box::new(BufWriter::new(f))
    };
    let summary =
        rollout_log::shape_rollouts(reader, &mut writer, &cfg.shaping, &cfg.optimizer, step)
            .with_context(|| format!("shaping {}", input.display()))?;
    eprintln!(
        "shaped {} records in {} groups",
        summary.records, summary.groups
    );
    Ok(())
}

fn eval(config: &Path, policy: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let pol = checkpoint::load(policy, &cfg.task)?;
    let summary = experiment::evaluate_policy(&pol, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report(metrics: &Path, window: usize, plot: Option<PathBuf>) -> Result<()> {
    let records = experiment::read_metrics(metrics)?;
    print!("{}", experiment::summarize(&records, window));
    if let Some(p) = plot {
        std::fs::write(&p, experiment::plot_csv(&records))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Shape {
            input,
            out,
            config,
            step,
        } => shape(&input, &out, &config, step),
        Command::Eval { config, policy } => eval(&config, &policy),
        Command::Report {
            metrics,
            window,
            plot,
        } => report(&metrics, window, plot),
    }
}
