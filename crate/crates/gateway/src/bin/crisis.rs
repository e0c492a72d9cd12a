use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crisis_core::cloud::{persist, HistoryStore};
use crisis_core::event::encode_event;
use crisis_core::scenario::{
    builtin, check_milestones, milestone_table, run_metrics, ChoiceRequest, DecisionMode, Driver, PointState,
    ScenarioError, ScenarioScript, Step,
};
use crisis_gateway::{bind, parse_history_query, serve, Engine, Speed, DEFAULT_PORT, PORT_ENV};

#[derive(Parser)]
#[command(name = "crisis", version, about = "Event-cloud crisis management platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decisions {
    Scripted,
    Interactive,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to the end.
    Run {
        /// Scenario file, or `nuclear` for the built-in one.
        #[arg(long, default_value = "nuclear")]
        scenario: String,
        #[arg(long, value_enum, default_value = "scripted")]
        decisions: Decisions,
        /// `max` or a real-time factor such as `60`.
        #[arg(long, default_value = "max")]
        speed: Speed,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run log (one canonical event per line).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the metrics report as JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Serve the HTTP/WebSocket gateway while a scenario runs.
    Serve {
        #[arg(long, default_value = "nuclear")]
        scenario: String,
        #[arg(long, value_enum, default_value = "interactive")]
        decisions: Decisions,
        #[arg(long, default_value = "60")]
        speed: Speed,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write the run log when the scenario ends.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Query a saved run log over `[from, to)`.
    Query {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        #[arg(long)]
        etype: Vec<String>,
        #[arg(long)]
        source: Vec<String>,
        /// Attribute predicate such as `value>=2`; repeatable.
        #[arg(long = "where")]
        predicates: Vec<String>,
    },
    /// Check a saved run log against a scenario's milestones.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "nuclear")]
        scenario: String,
    },
}

fn load_scenario(name: &str, seed: Option<u64>) -> Result<ScenarioScript, String> {
    let mut script = if name == "nuclear" && !Path::new(name).exists() {
        builtin::nuclear()
    } else {
        ScenarioScript::load_file(Path::new(name)).map_err(|e| e.to_string())?
    };
    if let Some(seed) = seed {
        script.seed = seed;
    }
    Ok(script)
}

fn mode(d: Decisions) -> DecisionMode {
    match d {
        Decisions::Scripted => DecisionMode::Scripted,
        Decisions::Interactive => DecisionMode::External,
    }
}

/// Asks on the terminal for the next outstanding decision.
fn prompt(driver: &Driver) -> Option<ChoiceRequest> {
    let stdin = std::io::stdin();
    let now = driver.now();
    let (target, options): (ChoiceRequest, Vec<String>) =
        if let Some(p) = driver.decision_points().into_iter().find(|p| p.state == PointState::Open) {
            eprintln!("[t0+{}:{:02}] {} ({}): {}", now / 60_000, now % 60_000 / 1000, p.id, p.role, p.prompt);
            let ids = p.options.iter().map(|o| o.id.clone()).collect();
            for o in &p.options {
                eprintln!("  {:<24} {}", o.id, o.label);
            }
            (ChoiceRequest::point(&p.id, ""), ids)
        } else {
            let p = driver.open_proposals().into_iter().next()?;
            eprintln!(
                "[t0+{}:{:02}] {} {} on {}: expected {}, actual {}",
                now / 60_000,
                now % 60_000 / 1000,
                p.proposal_id,
                p.gap.kind.as_str(),
                p.gap.subject,
                p.gap.expected,
                p.gap.actual
            );
            for a in &p.alternatives {
                eprintln!("  {:<24} {}", a.id, a.label);
            }
            (ChoiceRequest::proposal(&p.proposal_id, ""), p.alternatives.iter().map(|a| a.id.clone()).collect())
        };
    loop {
        eprint!("> ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).ok()? == 0 {
            return None;
        }
        let choice = line.trim();
        if options.iter().any(|o| o == choice) {
            return Some(ChoiceRequest { option: choice.into(), chooser: "terminal".into(), ..target });
        }
        eprintln!("choose one of: {}", options.join(", "));
    }
}

fn run(
    scenario: &str,
    decisions: Decisions,
    speed: Speed,
    seed: Option<u64>,
    log: Option<&Path>,
    metrics: Option<&Path>,
) -> Result<bool, String> {
    let script = load_scenario(scenario, seed)?;
    let mut driver = Driver::new(script.clone(), mode(decisions)).map_err(|e| e.to_string())?;
    let tick = script.tick.ms();
    let run = match speed {
        Speed::Max => driver.run_with(prompt),
        Speed::RealTimeScale(f) => loop {
            match driver.step() {
                Ok(Step::Ticked(_)) => {
                    std::thread::sleep(std::time::Duration::from_secs_f64(tick as f64 / f / 1000.0));
                }
                Ok(Step::AwaitingDecision) => {
                    let Some(c) = prompt(&driver) else {
                        break Err(ScenarioError::AbortedByOperator);
                    };
                    if let Err(e) = driver.submit_choice(&c) {
                        eprintln!("{e}");
                    }
                }
                Ok(Step::Finished) => break Ok(driver.log()),
                Err(e) => break Err(e),
            }
        },
    };
    let run = run.map_err(|e| e.to_string())?;
    if let Some(path) = log {
        persist::write_log(path, &run.events).map_err(|e| e.to_string())?;
    }
    let m = run_metrics(&run.events, &script);
    if let Some(path) = metrics {
        let body = serde_json::to_string_pretty(&m).expect("metrics serialize");
        std::fs::write(path, body).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    for r in &m.rates {
        println!("{:<10} [{}, {}) {} measures, {} per minute", r.name, r.from, r.to, r.measures, r.per_minute);
    }
    print!("{}", milestone_table(&m.milestones));
    Ok(m.milestones.iter().all(|r| r.pass))
}

#[allow(clippy::too_many_arguments)]
fn serve_cmd(
    scenario: &str,
    decisions: Decisions,
    speed: Speed,
    seed: Option<u64>,
    host: &str,
    port: u16,
    log: Option<&Path>,
) -> Result<bool, String> {
    let script = load_scenario(scenario, seed)?;
    let (engine, thread) = Engine::new(script, mode(decisions), speed).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(bind(host, port)).map_err(|e| e.to_string())?;
    eprintln!("serving on http://{}", listener.local_addr().map_err(|e| e.to_string())?);
    let server = rt.spawn(serve(listener, engine.clone()));
    engine.start();
    rt.block_on(async {
        while !thread.is_finished() {
            tokio::time::sleep(std::time::Duration::from_millis(100)).await;
        }
    });
    let result = thread.join().map_err(|e| e.to_string())?;
    if let Some(path) = log {
        persist::write_log(path, &result.events).map_err(|e| e.to_string())?;
    }
    eprintln!("scenario finished; still serving (Ctrl-C to stop)");
    rt.block_on(server).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    Ok(true)
}

fn query(log: &Path, from: u64, to: u64, etype: &[String], source: &[String], predicates: &[String]) -> Result<bool, String> {
    let mut q = String::new();
    let mut push = |k: &str, v: &str| {
        q.push_str(&form_urlencoded::Serializer::new(String::new()).append_pair(k, v).finish());
        q.push('&');
    };
    push("from", &from.to_string());
    push("to", &to.to_string());
    for e in etype {
        push("etype", e);
    }
    for s in source {
        push("source", s);
    }
    for p in predicates {
        push("where", p);
    }
    let q = parse_history_query(&q)?;
    let events = persist::read_log(log).map_err(|e| e.to_string())?;
    let store = HistoryStore::from_events(4, events).map_err(|e| e.to_string())?;
    let out = store.query(q.from, q.to, &q.pattern).map_err(|e| e.to_string())?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for e in &out {
        writeln!(lock, "{}", encode_event(e).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    }
    Ok(true)
}

fn verify(log: &Path, scenario: &str) -> Result<bool, String> {
    let script = load_scenario(scenario, None)?;
    let events = persist::read_log(log).map_err(|e| e.to_string())?;
    let store = HistoryStore::from_events(4, events).map_err(|e| e.to_string())?;
    let events = store.events_by_seq();
    let mut ok = true;
    if let Some(w) = events.windows(2).find(|w| w[1].ts < w[0].ts) {
        eprintln!("timestamps go backwards at seq {:?}", w[1].seq);
        ok = false;
    }
    let results = check_milestones(&events, &script.milestones);
    print!("{}", milestone_table(&results));
    Ok(ok && results.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, decisions, speed, seed, log, metrics } => {
            run(scenario, *decisions, *speed, *seed, log.as_deref(), metrics.as_deref())
        }
        Command::Serve { scenario, decisions, speed, seed, port, host, log } => {
            serve_cmd(scenario, *decisions, *speed, *seed, host, *port, log.as_deref())
        }
        Command::Query { log, from, to, etype, source, predicates } => query(log, *from, *to, etype, source, predicates),
        Command::Verify { log, scenario } => verify(log, scenario),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
