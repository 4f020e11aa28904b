use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use softworld::apps::AppId;
use softworld::synthesis::Policy;

mod commands;
mod config;

use commands::RunArgs;
use config::CliConfig;

/// Outcome classes other than success, each with a fixed exit code.
#[derive(Debug)]
pub enum Failure {
    /// At least one task (or gate) did not fully pass; output is already printed.
    TaskFailure,
    Usage(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::TaskFailure => 1,
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

pub fn emit<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("output serializes")
    );
}

/// One app or `all`.
#[derive(Clone, Debug)]
struct AppSelection(Vec<AppId>);

fn parse_apps(s: &str) -> Result<AppSelection, String> {
    if s == "all" {
        return Ok(AppSelection(AppId::ALL.to_vec()));
    }
    s.parse::<AppId>()
        .map(|a| AppSelection(vec![a]))
        .map_err(|_| format!("unknown app `{s}`; valid apps: vault, workbook, media, all"))
}

fn parse_app(s: &str) -> Result<AppId, String> {
    s.parse::<AppId>()
        .map_err(|_| format!("unknown app `{s}`; valid apps: vault, workbook, media"))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Calibration,
    Benchmark,
}

#[derive(Parser)]
#[command(
    name = "softworld",
    version,
    about = "Generate, run, verify and repair tasks over sandboxed desktop-app state"
)]
struct Cli {
    /// Workspace root; `WORLD_WORKSPACE` takes precedence.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize tasks from the shipped templates.
    Generate {
        #[arg(long, default_value = "all", value_parser = parse_apps)]
        app: AppSelection,
        /// Tasks per app.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "benchmark")]
        policy: PolicyArg,
    },
    /// Run a task (or a directory of tasks) and print the reward.
    Run {
        /// task.json, a directory holding one, or a directory of task directories.
        task: PathBuf,
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Repair the verifier config against a frozen run.
    Evolve {
        run_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Agreement and reward statistics over every run below a directory.
    Report {
        runs_dir: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Run the verifier fixtures and report whether it is gated.
    Selftest {
        #[arg(long, default_value = "all", value_parser = parse_apps)]
        app: AppSelection,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Invoke one verifier endpoint against a sandbox.
    Verifier {
        app: String,
        endpoint: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
    /// List an app's endpoints.
    Endpoints {
        #[arg(value_parser = parse_app)]
        app: AppId,
    },
    /// Write the shipped task bundles.
    Bundles {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Command::Verifier {
        app,
        endpoint,
        rest,
    } = &cli.command
    {
        return commands::cmd_verifier(app, endpoint, rest);
    }
    if let Command::Report { runs_dir, pretty } = &cli.command {
        return commands::cmd_report(runs_dir, *pretty);
    }
    if let Command::Endpoints { app } = &cli.command {
        return commands::cmd_endpoints(*app);
    }
    let cfg = CliConfig::discover(cli.workspace.as_deref())?;
    match cli.command {
        Command::Generate {
            app,
            count,
            seed,
            out,
            policy,
        } => {
            let policy = match policy {
                PolicyArg::Calibration => Policy::Calibration,
                PolicyArg::Benchmark => Policy::Benchmark,
            };
            commands::cmd_generate(&cfg, app.0, count, seed, out, policy)
        }
        Command::Run {
            task,
            agent,
            config,
            out,
            jobs,
            seed,
            budget,
        } => commands::cmd_run(
            &cfg,
            RunArgs {
                task,
                agent,
                config,
                out,
                jobs,
                seed,
                budget,
            },
        ),
        Command::Evolve {
            run_dir,
            config,
            budget,
        } => commands::cmd_evolve(&cfg, &run_dir, config.as_deref(), budget),
        Command::Selftest { app, config } => commands::cmd_selftest(&cfg, app.0, config.as_deref()),
        Command::Bundles { out } => commands::cmd_bundles(&cfg, out),
        Command::Verifier { .. } | Command::Report { .. } | Command::Endpoints { .. } => {
            unreachable!()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Internal(m) => eprintln!("internal error: {m}"),
                Failure::TaskFailure => {}
            }
            ExitCode::from(f.code())
        }
    }
}
