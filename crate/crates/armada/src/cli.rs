//! Command-line entry point.
//!
//! Results go to stdout as JSON (or plain text where noted); diagnostics go
//! to stderr. Exit codes: 0 success, 2 usage or input error, 3 service
//! unreachable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use armada_core::metrics::{evaluate, InteractionKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ServiceConfig;
use crate::formats::{self, timeseries_svg, write_file};
use crate::journal::read_journal;
use crate::service::{history_from_journal, ApiError, BatchReport, History};
use crate::sim::{run_seeds, write_outputs, SimulationSpec};
use crate::store::JOURNAL_FILE;

#[derive(Debug, Parser)]
#[command(name = "armada", version, about = "Thompson-sampling traffic allocation for recommender experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Simulate campaigns and write traces, plots and a summary.
    ///
    /// Writes trace-seed-<n>.csv (epoch,arm,weight,S,F,true_ctr,regret_cum;
    /// S and F cumulative), trace-seed-<n>.json, trace-seed-<n>.svg and
    /// summary.json into --out. The summary is also printed to stdout.
    Simulate(SimulateArgs),
    /// Trigger a batch on a running service and print the new allocation.
    ///
    /// Prints "allocation unchanged" when the batch saw no new data.
    Batch(BatchArgs),
    /// Offline ranking metrics (MRR, NDCG@k, MAP@k) as JSON.
    ///
    /// --recs: .csv with user_id,item_id,rank or .jsonl with
    /// {"user_id","items"} lines. --truth: .csv or .jsonl with
    /// user_id,item_id,relevance. Both files must cover the same users.
    Eval(EvalArgs),
    /// Render a campaign's history or a simulation trace to CSV, JSON and SVG.
    ///
    /// From a campaign: history.json, history.csv
    /// (epoch,arm,weight,S,F,mean,ci_low,ci_high) and allocation.svg.
    /// From a trace: trace.csv and allocation.svg.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with {"environment": .., "campaign": ..}.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 14)]
    pub epochs: u64,
    /// Number of seeds, run in parallel from the base seed upwards.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Base seed; overrides the spec's environment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub campaign: String,
    #[arg(long, env = "ARMADA_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[arg(long, env = "ARMADA_TOKEN")]
    pub token: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Click,
    Purchase,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub recs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = "model")]
    pub model: String,
    #[arg(long, value_enum, default_value_t = KindArg::Click)]
    pub kind: KindArg,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["campaign", "trace"])))]
pub struct ExportArgs {
    /// Campaign id under --data-dir.
    #[arg(long, requires = "data_dir")]
    pub campaign: Option<String>,
    #[arg(long, env = "ARMADA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Trace JSON written by `simulate`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("service unavailable: {0}")]
    Upstream(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Input(_) => ExitCode::from(2),
            Self::Upstream(_) => ExitCode::from(3),
            Self::Failed(_) => ExitCode::from(1),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} file {} does not exist", path.display())))
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Batch(a) => batch(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    }
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            require_file(path, "config")?;
            ServiceConfig::from_file(path).map_err(input)?
        }
        None => ServiceConfig::default(),
    };
    config = config.with_env(|k| std::env::var(k).ok()).map_err(input)?;
    if let Some(port) = args.port {
        config.port = port;
    }
    if let Some(dir) = args.data_dir {
        config.data_dir = dir;
    }
    config.validate().map_err(input)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    runtime.block_on(crate::service::serve(config)).map_err(|e| CliError::Failed(e.to_string()))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    require_file(&args.spec, "spec")?;
    if args.epochs == 0 || args.seeds == 0 {
        return Err(CliError::Input("--epochs and --seeds must be at least 1".into()));
    }
    let text = std::fs::read_to_string(&args.spec).map_err(input)?;
    let mut spec: SimulationSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.environment.seed = seed;
    }
    spec.environment.validate().map_err(input)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    let traces = run_seeds(&spec, args.epochs, args.seeds).map_err(input)?;
    let summary = write_outputs(&args.out, args.epochs, &traces).map_err(|e| CliError::Failed(e.to_string()))?;
    eprintln!("wrote {} trace(s) to {}", traces.len(), args.out.display());
    print_json(&summary);
    Ok(())
}

fn batch(args: BatchArgs) -> Result<(), CliError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(args.timeout_secs))
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let url = format!("{}/campaigns/{}/batch", args.url.trim_end_matches('/'), args.campaign);
    let mut req = client.post(&url);
    if let Some(token) = &args.token {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(|e| CliError::Upstream(format!("{url}: {e}")))?;
    let status = resp.status();
    if status.is_server_error() {
        return Err(CliError::Upstream(format!("{url}: HTTP {status}")));
    }
    if !status.is_success() {
        let msg = match resp.json::<ApiError>() {
            Ok(e) => format!("{:?}: {}", e.code, e.message),
            Err(_) => format!("HTTP {status}"),
        };
        return Err(CliError::Input(msg));
    }
    let report: BatchReport = resp.json().map_err(|e| CliError::Upstream(e.to_string()))?;
    if report.unchanged {
        println!("allocation unchanged");
    } else {
        print_json(&report);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    require_file(&args.recs, "recs")?;
    require_file(&args.truth, "truth")?;
    if args.k == 0 {
        return Err(CliError::Input("--k must be at least 1".into()));
    }
    let kind = match args.kind {
        KindArg::Click => InteractionKind::Click,
        KindArg::Purchase => InteractionKind::Purchase,
    };
    let lists = formats::read_recs(&args.recs).map_err(input)?;
    let truth = formats::read_truth(&args.truth, kind).map_err(input)?;
    formats::check_users(&lists, &truth).map_err(input)?;
    let report = evaluate(args.model, &lists, &truth, args.k).map_err(input)?;
    print_json(&report);
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), CliError> {
    let written = match (&args.campaign, &args.trace) {
        (Some(id), _) => {
            let dir = args.data_dir.as_deref().expect("clap requires data_dir").join(id);
            require_file(&dir.join(JOURNAL_FILE), "journal")?;
            let lines = read_journal(&dir.join(JOURNAL_FILE)).map_err(input)?.lines;
            export_history(&history_from_journal(id, &lines), &args.out)?
        }
        (None, Some(trace_path)) => {
            require_file(trace_path, "trace")?;
            let text = std::fs::read_to_string(trace_path).map_err(input)?;
            let trace: armada_core::simulator::CampaignTrace =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
            let csv = args.out.join("trace.csv");
            let svg = args.out.join("allocation.svg");
            write_file(&csv, formats::trace_csv(&trace).as_bytes()).map_err(fail)?;
            write_file(&svg, formats::allocation_svg(&trace, "allocation").as_bytes()).map_err(fail)?;
            vec![csv, svg]
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    print_json(&written);
    Ok(())
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn export_history(history: &History, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let json = out.join("history.json");
    write_file(&json, &serde_json::to_vec_pretty(history).expect("history serializes")).map_err(fail)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "arm", "weight", "S", "F", "mean", "ci_low", "ci_high"]).map_err(fail)?;
    for e in &history.epochs {
        for (arm, p) in &e.posteriors {
            let s = e.stats.get(arm).copied().unwrap_or_default();
            w.write_record([
                e.epoch.to_string(),
                arm.to_string(),
                e.allocation.get(arm).copied().unwrap_or(0.0).to_string(),
                s.successes.to_string(),
                s.failures.to_string(),
                p.mean.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    let csv_path = out.join("history.csv");
    write_file(&csv_path, &w.into_inner().map_err(fail)?).map_err(fail)?;

    let epochs: Vec<u64> = history.epochs.iter().map(|e| e.epoch).collect();
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for arm in history.epochs.iter().flat_map(|e| e.posteriors.keys()) {
        series
            .entry(arm.to_string())
            .or_insert_with(|| history.epochs.iter().map(|e| e.allocation.get(arm).copied().unwrap_or(0.0)).collect());
    }
    let svg = out.join("allocation.svg");
    write_file(&svg, timeseries_svg(&epochs, &series, &history.campaign_id).as_bytes()).map_err(fail)?;
    Ok(vec![json, csv_path, svg])
}
