use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use irtime::ml::ModelKind;
use irtime::par::Execution;
use irtime::pipeline::{self, PipelineConfig};

/// Predict execution time from simulated LLVM IR traces.
#[derive(Parser)]
#[command(name = "irtime", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run IR files (or directories of them) and write one .trace per sample.
    Simulate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Turn traces into a feature matrix.
    Features {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Two-column file of sample_id and measured time.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit a model to a labeled feature matrix.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// linear, huber, forest or mlp.
        #[arg(long)]
        model: ModelKind,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Predict times for a feature matrix.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Score a model on labeled features; prints a table, writes CSV rows.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Generate loop programs that repeat one operator.
    GenCorpus {
        #[arg(long = "op", required = true)]
        ops: Vec<String>,
        #[arg(long = "n", required = true)]
        counts: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };

    match cli.command {
        Command::Simulate {
            inputs,
            out,
            max_steps,
        } => {
            if let Some(n) = max_steps {
                cfg.limits.max_steps = n;
            }
            let report = pipeline::cmd_simulate(&inputs, &cfg, &out, exec)?;
            println!(
                "wrote {} trace(s) to {}",
                report.written.len(),
                out.display()
            );
            for (sample, err) in &report.failures {
                eprintln!("error: {sample}: {err}");
            }
            if !report.is_success() {
                eprintln!("{} sample(s) failed", report.failures.len());
            }
            Ok(report.is_success())
        }
        Command::Features {
            traces,
            labels,
            out,
        } => {
            let ds = pipeline::cmd_features(&traces, labels.as_deref(), &cfg, Some(&out))?;
            println!("wrote {} row(s) to {}", ds.len(), out.display());
            Ok(true)
        }
        Command::Train {
            features,
            model,
            out,
        } => {
            let m = pipeline::cmd_train(&features, model, &cfg, &out, exec)?;
            println!(
                "trained {} on {} sample(s), wrote {}",
                m.kind,
                m.metadata.training_samples,
                out.display()
            );
            Ok(true)
        }
        Command::Predict {
            model,
            features,
            out,
        } => {
            let rows = pipeline::cmd_predict(&model, &features, out.as_deref(), exec)?;
            if out.is_none() {
                for (id, p) in rows {
                    println!("{id}\t{p}");
                }
            }
            Ok(true)
        }
        Command::Eval {
            model,
            features,
            out,
        } => {
            let report = pipeline::cmd_eval(&model, &features, out.as_deref(), exec)?;
            print!("{}", report.render_table());
            Ok(true)
        }
        Command::GenCorpus { ops, counts, out } => {
            let files = pipeline::cmd_gen_corpus(&ops, &counts, cfg.master_seed, &out)
                .with_context(|| format!("generating into {}", out.display()))?;
            println!("wrote {} program(s) to {}", files.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
