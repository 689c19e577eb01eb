use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use holonsim_core::federation::StrategyKind;
use holonsim_core::scenario::{bundled, bundled_asset, parse_script, Scenario, BUNDLED};
use holonsim_core::sim::{parse_ndjson, run_comparison, ScriptedAction, SimOptions, Simulation};
use holonsim_core::verify::{verify_log, VerifyReport};
use holonsim_gateway::{Backend, GatewayConfig, ReasonerConfig};
use serde::Serialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "holonsim", version, about = "Holonic urban air mobility simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headlessly and write its log, metrics and final state.
    Run(RunArgs),
    /// Re-check a run log.
    Verify(VerifyArgs),
    /// Run one scenario under several coordination strategies.
    Compare(CompareArgs),
    /// Start the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReasonerKind {
    Mock,
    Remote,
}

#[derive(Args)]
struct ReasonerArgs {
    #[arg(long, value_enum)]
    reasoner: Option<ReasonerKind>,
    /// Endpoint of the remote reasoner.
    #[arg(long)]
    remote_url: Option<String>,
}

impl ReasonerArgs {
    fn apply(&self, cfg: &mut ReasonerConfig) {
        if let Some(url) = &self.remote_url {
            cfg.url = Some(url.clone());
        }
        match self.reasoner {
            Some(ReasonerKind::Mock) => cfg.backend = Backend::Mock,
            Some(ReasonerKind::Remote) => cfg.backend = Backend::Remote,
            None => {}
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "holonic")]
    strategy: String,
    /// Operator script file, or the name of a bundled script.
    #[arg(long)]
    script: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Wall-clock pacing; 0 runs as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    ticks_per_second: f64,
    #[command(flatten)]
    reasoner: ReasonerArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// NDJSON run log.
    log: PathBuf,
    /// Sequence template file, or the name of a bundled template.
    #[arg(long)]
    template: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: String,
    /// Strategies to compare, comma separated. Defaults to all five.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    script: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Configuration file; `holonsim.toml` in the working directory is
    /// used when present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    ticks_per_second: Option<f64>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[command(flatten)]
    reasoner: ReasonerArgs,
}

/// Exit status of a completed command.
enum Outcome {
    Clean,
    Violations,
}

fn read_named(arg: &str, what: &str, builtin: impl Fn(&str) -> Option<&'static str>) -> Result<String> {
    let path = Path::new(arg);
    if path.exists() {
        return fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()));
    }
    match builtin(arg) {
        Some(text) => Ok(text.to_owned()),
        None => bail!("{what} `{arg}` is neither a file nor a bundled name"),
    }
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let text = read_named(arg, "scenario", bundled)
        .map_err(|e| anyhow::anyhow!("{e} (bundled: {})", BUNDLED.join(", ")))?;
    Scenario::from_json(&text).with_context(|| format!("invalid scenario `{arg}`"))
}

fn load_script(arg: Option<&str>) -> Result<Vec<ScriptedAction>> {
    match arg {
        None => Ok(Vec::new()),
        Some(a) => {
            let text = read_named(a, "script", bundled_asset)?;
            parse_script(&text).with_context(|| format!("invalid script `{a}`"))
        }
    }
}

fn parse_strategy(s: &str) -> Result<StrategyKind> {
    s.parse::<StrategyKind>().map_err(|e| {
        let known: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.as_str()).collect();
        anyhow::anyhow!("{e} (known: {})", known.join(", "))
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(args: RunArgs) -> Result<Outcome> {
    let scenario = load_scenario(&args.scenario)?;
    let script = load_script(args.script.as_deref())?;
    let strategy = parse_strategy(&args.strategy)?;
    let mut reasoner = ReasonerConfig::default();
    args.reasoner.apply(&mut reasoner);
    let layer = reasoner.layer()?;
    let mut sim = Simulation::new(
        &scenario,
        SimOptions {
            seed: args.seed,
            strategy,
            layer: Some(layer),
            script,
            ..Default::default()
        },
    )
    .with_context(|| format!("invalid scenario `{}`", args.scenario))?;

    let started = Instant::now();
    if args.ticks_per_second > 0.0 {
        let interval = Duration::from_secs_f64(1.0 / args.ticks_per_second);
        while sim.step() {
            std::thread::sleep(interval);
        }
    } else {
        sim.run();
    }
    let elapsed = started.elapsed();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let records = sim.log().records();
    fs::write(args.out.join("log.ndjson"), sim.log().to_ndjson())?;
    write_json(&args.out.join("metrics.json"), &sim.metrics())?;
    write_json(&args.out.join("snapshot.json"), &sim.snapshot())?;
    fs::write(args.out.join("scenario.json"), scenario.to_json())?;
    let report = verify_log(records, None);
    write_json(&args.out.join("verify.json"), &report)?;

    let m = sim.metrics();
    println!("scenario     {} (seed {}, strategy {})", sim.name(), sim.seed(), sim.strategy());
    println!("finished     tick {} ({:?})", sim.tick(), sim.finish_reason().expect("run finished"));
    println!("trips        {} completed, {} aborted of {}", m.completed, m.aborted, m.trips);
    println!("approvals    {} ({} fallbacks)", m.approvals, m.fallbacks);
    if let Some(d) = m.mean_door_to_door {
        println!("door-to-door {d:.2} ticks mean");
    }
    println!("messages     {} sent, {} rejected", m.messages.sent, m.messages.rejected);
    println!("log          {} records, sha256 {}", records.len(), sim.log().hash());
    println!("artifacts    {}", args.out.display());
    println!("wall time    {:.3}s", elapsed.as_secs_f64());
    let mut bad = false;
    for v in sim.violations() {
        eprintln!("invariant violation: {v}");
        bad = true;
    }
    for f in &report.findings {
        eprintln!("{}", finding_line(f));
        bad = true;
    }
    Ok(if bad { Outcome::Violations } else { Outcome::Clean })
}

fn finding_line(f: &holonsim_core::verify::Finding) -> String {
    let check = serde_json::to_value(f.check).expect("check serializes");
    format!(
        "tick {:>5} seq {:>6}  {:<20} {}",
        f.tick,
        f.seq,
        check.as_str().unwrap_or("?"),
        f.detail
    )
}

fn verify(args: VerifyArgs) -> Result<Outcome> {
    let text = fs::read_to_string(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let records = parse_ndjson(&text)
        .map_err(|(line, e)| anyhow::anyhow!("{}: line {line}: {e}", args.log.display()))?;
    let template: Option<Vec<Value>> = match &args.template {
        Some(t) => {
            let text = read_named(t, "template", bundled_asset)?;
            Some(serde_json::from_str(&text).with_context(|| format!("invalid template `{t}`"))?)
        }
        None => None,
    };
    let report = verify_log(&records, template.as_deref());
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print_report(&report);
    }
    Ok(if report.is_ok() { Outcome::Clean } else { Outcome::Violations })
}

fn print_report(r: &VerifyReport) {
    println!("records      {}", r.records);
    println!("sha256       {}", r.hash);
    println!("air legs     {}", r.air_legs_started);
    println!("approvals    {}", r.approvals);
    if let Some(t) = &r.template {
        println!("template     {}/{} matched", t.matched, t.total);
        if let Some(m) = &t.missing {
            println!("  first unmatched entry: {m}");
        }
    }
    if r.findings.is_empty() {
        println!("findings     none");
    } else {
        println!("findings     {}", r.findings.len());
        for f in &r.findings {
            println!("  {}", finding_line(f));
        }
    }
}

#[derive(Serialize)]
struct CompareRow {
    strategy: StrategyKind,
    conversations: usize,
    total_messages: usize,
    middle_agent_messages: usize,
    max_single_agent_load: usize,
    busiest_agent: String,
    mean_discovery_latency: f64,
    failed_conversations: usize,
    trips_completed: usize,
    mean_door_to_door: Option<f64>,
    log_hash: String,
}

fn compare(args: CompareArgs) -> Result<Outcome> {
    let scenario = load_scenario(&args.scenario)?;
    let script = load_script(args.script.as_deref())?;
    let strategies: Vec<StrategyKind> = if args.strategy.is_empty() {
        StrategyKind::ALL.to_vec()
    } else {
        args.strategy.iter().map(|s| parse_strategy(s.trim())).collect::<Result<_>>()?
    };
    let results = run_comparison(&scenario, &strategies, &script, args.seed)
        .with_context(|| format!("invalid scenario `{}`", args.scenario))?;
    let rows: Vec<CompareRow> = results
        .iter()
        .map(|r| CompareRow {
            strategy: r.metrics.strategy,
            conversations: r.metrics.conversations,
            total_messages: r.metrics.total_messages,
            middle_agent_messages: r.metrics.middle_agent_messages,
            max_single_agent_load: r.metrics.max_single_agent_load,
            busiest_agent: r.metrics.busiest_agent.clone().unwrap_or_default(),
            mean_discovery_latency: r.metrics.mean_discovery_latency,
            failed_conversations: r.metrics.failed_conversations,
            trips_completed: r.run.completed,
            mean_door_to_door: r.run.mean_door_to_door,
            log_hash: r.log_hash.clone(),
        })
        .collect();
    println!(
        "{:<12} {:>6} {:>9} {:>7} {:>9} {:>8} {:>6} {:>9}  busiest",
        "strategy", "convs", "messages", "middle", "max load", "latency", "done", "d2d"
    );
    for r in &rows {
        println!(
            "{:<12} {:>6} {:>9} {:>7} {:>9} {:>8.2} {:>6} {:>9}  {}",
            r.strategy.as_str(),
            r.conversations,
            r.total_messages,
            r.middle_agent_messages,
            r.max_single_agent_load,
            r.mean_discovery_latency,
            r.trips_completed,
            r.mean_door_to_door.map_or("-".into(), |d| format!("{d:.2}")),
            r.busiest_agent
        );
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let full: Vec<Value> = results
            .iter()
            .map(|r| serde_json::json!({"coordination": r.metrics, "run": r.run, "log_hash": r.log_hash}))
            .collect();
        write_json(&out.join("comparison.json"), &full)?;
        for r in &results {
            fs::write(out.join(format!("log-{}.ndjson", r.metrics.strategy)), &r.log)?;
        }
    }
    Ok(Outcome::Clean)
}

fn serve(args: ServeArgs) -> Result<Outcome> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut cfg = GatewayConfig::load(args.config.as_deref())?;
    if let Some(p) = args.port {
        cfg.server.port = p;
    }
    if let Some(t) = args.ticks_per_second {
        cfg.sim.ticks_per_second = t;
    }
    if let Some(d) = args.runs_dir {
        cfg.server.runs_dir = d;
    }
    args.reasoner.apply(&mut cfg.reasoner);
    // Fail on a bad reasoner setup before binding.
    cfg.reasoner.layer()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(holonsim_gateway::serve(cfg))?;
    Ok(Outcome::Clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
