//! `ptco`: runs each pipeline phase through the HTTP service, either a
//! remote one (`--server`) or one embedded in this process.

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptco_client::{Client, ClientError};
use ptco_core::api::{self, JobOptions};
use ptco_core::config::RunConfig;
use ptco_core::pipeline::{
    BuildKbRequest, EvaluateRequest, IdentifyRequest, LearnRequest, MineRequest, UpdateRequestFiles,
};
use ptco_server::AppState;
use serde::Serialize;

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "ptco", version, about = "Find and repair unit tests made obsolete by production changes")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Chat provider override: `scripted:<transcript file>`.
    #[arg(long, global = true, value_name = "SPEC")]
    provider: Option<String>,
    /// Service base URL. Without it an in-process server is started.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine change pairs from a commit range.
    Mine(MineArgs),
    /// Build the retrieval store from positive change pairs.
    BuildKb {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn identification experiences from labelled pairs.
    LearnExperience {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decide which tests are obsolete.
    Identify(IdentifyArgs),
    /// Repair obsolete tests under validation.
    Update {
        /// Verdicts or change pairs.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Score verdicts and update sessions.
    Evaluate {
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Directory written by `update`.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long)]
    repo: PathBuf,
    /// Older end of the range (exclusive).
    #[arg(long)]
    from: String,
    #[arg(long, default_value = "HEAD")]
    to: String,
    #[arg(long)]
    out: PathBuf,
    /// JSONL of `{id, label}` records overriding the heuristic labels.
    #[arg(long)]
    label_from: Option<PathBuf>,
    /// Leave every pair unlabelled.
    #[arg(long, conflicts_with = "label_from")]
    unlabeled: bool,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    experiences: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Learn experiences first, from this file or from `--pairs`.
    #[arg(long, value_name = "FILE", num_args = 0..=1)]
    experience_learn: Option<Option<PathBuf>>,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn abs_opt(p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| absolute(&p))
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn print_json<T: Serialize>(value: &T) -> ExitCode {
    match serde_json::to_string_pretty(value) {
        Ok(s) => {
            println!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_INTERNAL, e),
    }
}

fn report<T>(result: Result<T, ClientError>, show: impl FnOnce(T) -> ExitCode) -> ExitCode {
    match result {
        Ok(v) => show(v),
        Err(e) if e.is_input_error() => fail(EXIT_INPUT, e),
        Err(e) => fail(EXIT_INTERNAL, e),
    }
}

fn job_options(cli: &Cli) -> Result<JobOptions, String> {
    let provider = match &cli.provider {
        Some(spec) => {
            let path = api::scripted_transcript(spec)?;
            Some(format!("{}{}", api::SCRIPTED_PREFIX, absolute(&path).display()))
        }
        None => None,
    };
    Ok(JobOptions { config: abs_opt(cli.config.clone()), provider })
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(RunConfig::default()),
    }
}

async fn serve(config: RunConfig, bind: SocketAddr) -> ExitCode {
    match ptco_server::spawn(bind, AppState::new(config)).await {
        Ok((addr, handle)) => {
            println!("listening on http://{addr}");
            match handle.await {
                Ok(Ok(())) => ExitCode::SUCCESS,
                Ok(Err(e)) => fail(EXIT_INTERNAL, e),
                Err(e) => fail(EXIT_INTERNAL, e),
            }
        }
        Err(e) => fail(EXIT_INPUT, format!("cannot bind {bind}: {e}")),
    }
}

async fn run(cli: Cli) -> ExitCode {
    let options = match job_options(&cli) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    if let Command::Serve { bind } = cli.command {
        return match load_config(&cli) {
            Ok(config) => serve(config, bind).await,
            Err(e) => fail(EXIT_INPUT, e),
        };
    }
    let base = match &cli.server {
        Some(url) => url.clone(),
        None => {
            // Fail on a bad config before any work starts.
            if let Err(e) = load_config(&cli) {
                return fail(EXIT_INPUT, e);
            }
            let local = SocketAddr::from(([127, 0, 0, 1], 0));
            match ptco_server::spawn(local, AppState::new(RunConfig::default())).await {
                Ok((addr, _)) => format!("http://{addr}"),
                Err(e) => return fail(EXIT_INTERNAL, format!("cannot start embedded server: {e}")),
            }
        }
    };
    let client = Client::new(&base).with_options(options);

    match cli.command {
        Command::Mine(a) => {
            let req = MineRequest {
                repo: absolute(&a.repo),
                from: a.from,
                to: a.to,
                out: absolute(&a.out),
                label_from: abs_opt(a.label_from),
                unlabeled: a.unlabeled,
                pairing: None,
            };
            report(client.mine(req).await, |s| print_json(&s))
        }
        Command::BuildKb { pairs, out } => {
            let req = BuildKbRequest { pairs: absolute(&pairs), out: absolute(&out) };
            report(client.build_kb(req).await, |s| {
                for w in &s.warnings {
                    eprintln!("warning: {w}");
                }
                print_json(&s)
            })
        }
        Command::LearnExperience { pairs, out } => {
            let req = LearnRequest { pairs: absolute(&pairs), out: absolute(&out) };
            report(client.learn(req).await, |s| print_json(&s))
        }
        Command::Identify(a) => {
            let learn_from = a.experience_learn.map(|p| p.unwrap_or_else(|| a.pairs.clone()));
            let req = IdentifyRequest {
                pairs: absolute(&a.pairs),
                experiences: absolute(&a.experiences),
                out: absolute(&a.out),
                learn_from: abs_opt(learn_from),
            };
            report(client.identify(req).await, |s| {
                for f in &s.failures {
                    eprintln!("warning: {}: {}", f.id, f.error);
                }
                print_json(&s)
            })
        }
        Command::Update { input, out_dir, kb } => {
            let req = UpdateRequestFiles { input: absolute(&input), out_dir: absolute(&out_dir), kb: abs_opt(kb) };
            report(client.update(req).await, |s| print_json(&s))
        }
        Command::Evaluate { verdicts, sessions, ground_truth, out_dir } => {
            let req = EvaluateRequest {
                verdicts: abs_opt(verdicts),
                sessions: abs_opt(sessions),
                ground_truth: abs_opt(ground_truth),
                out_dir: absolute(&out_dir),
            };
            report(client.evaluate(req).await, |r| {
                print!("{}", r.render_text());
                ExitCode::SUCCESS
            })
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
    run(cli).await
}
