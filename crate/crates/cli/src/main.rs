use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use commgpu::bridge::protocol::ServerMessage;
use commgpu::bridge::session::{k_max, serve};
use commgpu::bridge::{AgentSession, Mode};
use commgpu::config::{Preset, ScenarioConfig};
use commgpu::experiment::{self, SweepAxis, SweepSpec};
use commgpu::scheduling::SchedulerKind;
use commgpu::MetricsReport;

const SEED_ENV: &str = "REACH_SEED";

#[derive(Parser)]
#[command(name = "commgpu", version, about = "Community GPU network scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write metrics.json and trace.csv.
    Run(RunArgs),
    /// Run a grid of simulations and write one CSV row per member.
    Sweep(SweepArgs),
    /// Serve the environment to one external agent and block.
    Serve(ServeArgs),
    /// Aggregate sweep CSVs and metrics files into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Named preset: small, large, stress-dropout, stress-congestion.
    #[arg(long, default_value = "small")]
    preset: String,
    /// Flat key=value config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of tasks (workload.n_tasks).
    #[arg(long)]
    tasks: Option<usize>,
    /// Simulation horizon in hours.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seed; takes precedence over the REACH_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn build(&self) -> Result<ScenarioConfig> {
        let mut c = ScenarioConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            c.set(k, v)?;
        }
        if let Some(n) = self.tasks {
            c.workload.n_tasks = n;
        }
        if let Some(h) = self.horizon {
            c.workload.horizon_hours = h;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            c.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// greedy, random, roundrobin or agent.
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    /// Address of a listening agent, required with --scheduler agent.
    #[arg(long)]
    agent_connect: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated schedulers.
    #[arg(long, value_delimiter = ',', default_values_t = SchedulerKind::BASELINES)]
    schedulers: Vec<SchedulerKind>,
    /// Swept key and values, e.g. churn.dropout_multiplier=1,2,4. Defaults to
    /// the preset's own axis.
    #[arg(long)]
    axis: Option<String>,
    /// Sweep the five arrival patterns instead of the preset axis.
    #[arg(long, conflicts_with = "axis")]
    patterns: bool,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Run members one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Output CSV path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// TCP address to listen on.
    #[arg(long, default_value = "127.0.0.1:5555")]
    listen: String,
    /// Speak the protocol on stdin/stdout instead of TCP.
    #[arg(long, conflicts_with = "listen")]
    stdio: bool,
    /// train or eval.
    #[arg(long, default_value = "train")]
    mode: String,
    /// Decision timeout in seconds (overrides agent.timeout_secs).
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep CSVs to aggregate.
    #[arg(long = "sweep")]
    sweeps: Vec<PathBuf>,
    /// metrics.json files for latency CDF and penalty histogram tables.
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn timeout_of(c: &ScenarioConfig) -> Duration {
    Duration::from_secs_f64(c.agent_timeout_secs)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = args.scenario.build()?;
    if let Some(s) = args.scheduler {
        config.scheduler = s;
    }
    let out = if config.scheduler == SchedulerKind::Agent {
        let Some(addr) = &args.agent_connect else {
            bail!("agent transport unavailable: --scheduler agent needs --agent-connect <addr>");
        };
        let session = AgentSession::connect(addr, timeout_of(&config))?;
        session.hello(Mode::Eval, k_max(&config));
        let out = experiment::run_with(&config, config.seed, Box::new(session.strategy(&config)))?;
        session.send(&ServerMessage::EpisodeEnd {
            metrics: out.metrics.clone(),
        });
        session.send(&ServerMessage::Bye);
        out
    } else {
        experiment::run(&config)?
    };
    experiment::write_outputs(&args.out, &out)?;
    let c = &out.metrics.counts;
    println!(
        "{} seed={} arrived={} on_time={} late={} failed={} expired={} -> {}",
        config.scheduler,
        config.seed,
        c.arrived,
        c.completed_on_time,
        c.completed_late,
        c.failed,
        c.expired,
        args.out.display()
    );
    Ok(())
}

fn parse_axis(s: &str) -> Result<SweepAxis> {
    let (key, values) = s.split_once('=').context("--axis expects key=v1,v2,...")?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("--axis {key} has no values");
    }
    Ok(SweepAxis::new(key.trim(), values))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = args.scenario.build()?;
    let axis = if args.patterns {
        SweepAxis::patterns()
    } else if let Some(a) = &args.axis {
        parse_axis(a)?
    } else {
        SweepAxis::for_preset(args.scenario.preset.parse::<Preset>()?)
    };
    let spec = SweepSpec {
        base,
        schedulers: args.schedulers,
        axis,
        seeds: args.seeds,
    };
    let points = experiment::expand(&spec)?;
    info!("sweep with {} members", points.len());
    let rows = if args.sequential {
        experiment::run_batch_sequential(&points)?
    } else {
        experiment::run_batch(&points)?
    };
    experiment::write_text(&args.out, &experiment::rows_to_csv(&rows)?)?;
    println!("{} rows -> {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let mut config = args.scenario.build()?;
    config.scheduler = SchedulerKind::Agent;
    if let Some(t) = args.timeout {
        config.set("agent.timeout_secs", &t.to_string())?;
        config.validate()?;
    }
    let mode = match args.mode.as_str() {
        "train" => Mode::Train,
        "eval" => Mode::Eval,
        other => bail!("--mode must be train or eval, got {other:?}"),
    };
    let session = if args.stdio {
        AgentSession::from_streams(BufReader::new(io::stdin()), io::stdout(), timeout_of(&config))
    } else {
        let listener = TcpListener::bind(&args.listen).with_context(|| format!("cannot listen on {}", args.listen))?;
        eprintln!("listening on {}", listener.local_addr()?);
        AgentSession::accept(&listener, timeout_of(&config))?
    };
    let summary = serve(&session, &config, mode)?;
    eprintln!("session ended after {} episode(s)", summary.episodes.len());
    Ok(())
}

fn label_of(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if args.sweeps.is_empty() && args.metrics.is_empty() {
        bail!("nothing to report: pass --sweep and/or --metrics files");
    }
    if !args.sweeps.is_empty() {
        let mut rows = Vec::new();
        for path in &args.sweeps {
            rows.extend(experiment::rows_from_csv(&experiment::read_text(path)?)?);
        }
        let out = args.out.join("sweep_summary.csv");
        experiment::write_text(&out, &experiment::aggregate(&rows))?;
        println!("{}", out.display());
    }
    if !args.metrics.is_empty() {
        let mut runs: Vec<(String, MetricsReport)> = Vec::new();
        for path in &args.metrics {
            let m: MetricsReport = serde_json::from_str(&experiment::read_text(path)?)
                .with_context(|| format!("{} is not a metrics file", path.display()))?;
            runs.push((label_of(path), m));
        }
        for (name, text) in [
            ("latency_cdf.csv", experiment::latency_cdf(&runs)),
            ("bandwidth_penalty_hist.csv", experiment::penalty_histogram(&runs)),
        ] {
            let out = args.out.join(name);
            experiment::write_text(&out, &text)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Report(a) => cmd_report(a),
    }
}
