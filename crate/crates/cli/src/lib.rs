//! `colab`: profile models, run the layered collaboration, score the results.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use commands::{build_pool, Context, Overrides};
use config::{LoadedConfig, Mode};

#[derive(Debug, Parser)]
#[command(name = "colab", version, about = "Adaptive cluster collaboration for LLM ensembles")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "colab.toml")]
    pub config: PathBuf,
    /// Overrides io.mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Overrides io.parallelism.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Overrides io.output_dir.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure self-diversity of every model and select the cluster.
    Profile,
    /// Run the collaboration and write one trace per question.
    Run {
        /// Only this question id.
        #[arg(long)]
        question: Option<String>,
        /// Recompute traces that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Score the traces and write the report.
    Eval {
        /// Exit with status 2 if any discipline is below the threshold.
        #[arg(long)]
        enforce_pass: bool,
    },
    /// Print the table of an existing report.
    Report,
    /// Profile and run against live endpoints, storing every completion.
    RecordFixtures,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Run { .. } => "run",
            Command::Eval { .. } => "eval",
            Command::Report => "report",
            Command::RecordFixtures => "record-fixtures",
        }
    }
}

pub fn context(cli: &Cli) -> Result<Context> {
    let cfg = LoadedConfig::load(&cli.config)?;
    let mode = match cli.command {
        Command::RecordFixtures => Some(Mode::Record),
        _ => cli.mode,
    };
    Context::new(cfg, Overrides { mode, parallelism: cli.parallelism, output_dir: cli.output_dir.clone() })
}

/// Runs one command, printing its human-readable result to stdout.
pub fn execute(cli: &Cli) -> Result<ExitCode> {
    let ctx = context(cli)?;
    let started = commands::now();
    let code = match &cli.command {
        Command::Profile => profile(&ctx)?,
        Command::Run { question, force } => run(&ctx, question.as_deref(), *force)?,
        Command::Eval { enforce_pass } => {
            let report = commands::cmd_eval(&ctx)?;
            print!("{}", colab_core::harness::render_table(&report));
            if *enforce_pass && !report.all_disciplines_pass {
                eprintln!("failing disciplines: {}", report.failing_disciplines().join(", "));
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Report => {
            print!("{}", commands::cmd_report(&ctx)?);
            ExitCode::SUCCESS
        }
        Command::RecordFixtures => {
            let profiled = profile(&ctx)?;
            if profiled != ExitCode::SUCCESS {
                return Ok(profiled);
            }
            run(&ctx, None, false)?
        }
    };
    if !matches!(cli.command, Command::Report) {
        commands::update_manifest(&ctx, cli.command.name(), started)?;
    }
    Ok(code)
}

fn profile(ctx: &Context) -> Result<ExitCode> {
    let outcome = commands::cmd_profile(ctx, &build_pool(ctx)?)?;
    print!("{}", outcome.table);
    if outcome.plan.is_none() {
        bail!(
            "only {} of {} models profiled, cluster of {} not selected",
            outcome.profiles.len(),
            ctx.cfg.config.models.len(),
            ctx.cfg.config.cluster.size
        );
    }
    Ok(if outcome.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(ctx: &Context, question: Option<&str>, force: bool) -> Result<ExitCode> {
    let outcome = commands::cmd_run(ctx, &build_pool(ctx)?, question, force)?;
    println!(
        "{} trace(s) written, {} already present, {} failed",
        outcome.written.len(),
        outcome.skipped.len(),
        outcome.failed.len()
    );
    for (id, err) in &outcome.failed {
        eprintln!("question {id}: {err}");
    }
    Ok(if outcome.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
