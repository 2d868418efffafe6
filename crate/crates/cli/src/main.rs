use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use report_qc_cli::eval::{cmd_eval, EvalArgs};
use report_qc_cli::run::{cmd_run, RunArgs};
use report_qc_cli::trace_cmd::{cmd_trace, TraceArgs};

#[derive(Parser)]
#[command(name = "report-qc", version, about = "Checklist-driven QC loop for slide-level pathology reports")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the QC loop over every slide in a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slides processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score generated reports against references.
    Eval {
        /// Directory with one sub-directory per slide.
        #[arg(long)]
        pred: PathBuf,
        /// JSONL of {"slide_id", "reference"}.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        checklist: PathBuf,
        /// Where metrics.json and per_slide.csv go (default: --pred).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize or replay a run trace.
    Trace {
        trace: PathBuf,
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        replay: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let mut stdout = std::io::stdout();
    let code = match cli.command {
        Command::Run {
            config,
            manifest,
            out,
            jobs,
            seed,
        } => cmd_run(
            &RunArgs {
                config,
                manifest,
                out,
                jobs,
                seed,
            },
            &mut stdout,
        ),
        Command::Eval {
            pred,
            refs,
            checklist,
            out,
        } => cmd_eval(
            &EvalArgs {
                pred,
                refs,
                checklist,
                out,
            },
            &mut stdout,
        ),
        Command::Trace {
            trace,
            round,
            field,
            replay,
        } => cmd_trace(
            &TraceArgs {
                trace,
                round,
                field,
                replay,
            },
            &mut stdout,
        ),
    };
    ExitCode::from(code as u8)
}
