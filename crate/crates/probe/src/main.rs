use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use probe::commands::{self, CHECKPOINT_FILE, EXPLANATION_DIR, REPORT_FILE};
use probe::config::parse_node_list;
use probe::report::ReportFormat;
use probe::{ExperimentConfig, HarnessError};

#[derive(Parser, Debug)]
#[command(name = "probe", version, about = "Reliability probes for GNN explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint; defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated node ids.
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Exit with code 3 if any bound is violated.
    #[arg(long)]
    fail_on_violation: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    Train(Common),
    Explain(Common),
    Evaluate(Common),
    Report(Common),
}

fn config_of(c: &Common, required: bool) -> Result<ExperimentConfig, HarnessError> {
    match &c.config {
        Some(p) => ExperimentConfig::load(p),
        None if required => Err(HarnessError::Config("--config is required".into())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (cmd, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Explain(c) => ("explain", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Report(c) => ("report", c),
    };
    let cfg = config_of(common, cmd != "report")?;
    let format: ReportFormat = common.format.parse()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let checkpoint = common.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let nodes = common.nodes.as_deref().map(parse_node_list).transpose()?;
    match cmd {
        "train" => {
            let s = commands::cmd_train(&cfg, &out)?;
            println!(
                "checkpoint {}; train accuracy {:.4}; test accuracy {:.4}",
                s.checkpoint.display(),
                s.train_accuracy,
                s.test_accuracy
            );
        }
        "explain" => {
            let s = commands::cmd_explain(&cfg, &checkpoint, &out, nodes.as_deref())?;
            println!("{} explanation(s) written, {} skipped", s.written.len(), s.skipped.len());
        }
        "evaluate" => {
            let dir = out.join(EXPLANATION_DIR);
            let explanations = dir.exists().then_some(dir);
            let report = commands::cmd_evaluate(&cfg, &checkpoint, explanations.as_deref(), &out, nodes.as_deref())?;
            for t in &report.tallies {
                println!(
                    "{}: {} cell(s), {} pair(s), {} violation(s), min slack {:e}",
                    t.theorem, t.cells, t.pairs, t.violations, t.min_slack
                );
            }
            let violations = report.violation_count();
            if common.fail_on_violation && violations > 0 {
                return Err(HarnessError::Violation(violations));
            }
        }
        _ => {
            let written = commands::cmd_report(&out.join(REPORT_FILE), &out, format)?;
            println!("{} file(s) written", written.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("probe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
