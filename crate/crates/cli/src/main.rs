//! Batch entry points: run, validate, compare, oracle, serve, replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use flowline_core::agents::ManagerPolicy;
use flowline_core::conformance::check_log;
use flowline_core::engine::{Engine, Mode};
use flowline_core::gateway::{replay, serve, CommandScript, LiveSession, ServeOptions};
use flowline_core::metrics::{compare_runs, compute_metrics, RunMetrics};
use flowline_core::scenario::{
    disturbance_suite, gantt_csv, generate_ybg_scenario, load_scenario_file, parse_gantt_csv,
    Scenario,
};
use flowline_core::scheduler::{brute_force_optimum, OracleInstance};
use flowline_core::{expand_order_in, order_of_job, validate_schedule};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "flowline",
    version,
    about = "Multi-agent dynamic scheduling for a flexible flow line"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario to quiescence and write events.jsonl, gantt.csv and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's policy seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "dynamic")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Check a Gantt export against a scenario; exit 1 when violations exist.
    Validate {
        #[arg(long)]
        gantt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario (or the disturbance suite) in two modes and report the deltas.
    Compare {
        #[arg(long, required_unless_present = "suite")]
        scenario: Option<PathBuf>,
        /// Compare over the fixed ten-scenario disturbance suite instead.
        #[arg(long)]
        suite: bool,
        #[arg(long, default_value = "static,dynamic")]
        modes: String,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Exhaustive optimum of a small instance.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Serve the live gateway.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Simulated minutes per wall-clock minute.
        #[arg(long, default_value_t = 60.0)]
        speed: f64,
        /// Start with the clock paused.
        #[arg(long)]
        paused: bool,
        /// Route proposals to the operator regardless of the scenario policy.
        #[arg(long)]
        interactive: bool,
    },
    /// Re-drive a recorded live session headlessly.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        commands: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write the generated YBG case-study scenario.
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            mode,
            out,
            force,
        } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.policy.seed = seed;
            }
            let mode = parse_mode(&mode)?;
            let engine = run_batch(&s, mode)?;
            write_outputs(&out, &s, mode, &engine, force)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { gantt, scenario } => validate(&gantt, &scenario),
        Command::Compare {
            scenario,
            suite,
            modes,
            out,
            force,
        } => {
            let (a, b) = parse_modes(&modes)?;
            let report = if suite {
                compare_suite(a, b)?
            } else {
                let path =
                    scenario.ok_or_else(|| anyhow!("--scenario is required without --suite"))?;
                compare_one(&load(&path)?, a, b)?
            };
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(path) => {
                    guard(&path, force)?;
                    fs::write(&path, text)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { instance } => {
            let text = fs::read_to_string(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let inst: OracleInstance =
                serde_json::from_str(&text).context("parsing oracle instance")?;
            let r = brute_force_optimum(&inst)?;
            println!("optimum {}", r.makespan);
            println!("sequence {}", r.sequence.join(","));
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            scenario,
            port,
            speed,
            paused,
            interactive,
        } => {
            let mut s = load(&scenario)?;
            if interactive {
                s.policy.manager = ManagerPolicy::Interactive;
            }
            if !(speed.is_finite() && speed > 0.0) {
                bail!("--speed must be positive");
            }
            let session = LiveSession::new(&s, Mode::Dynamic, speed, paused)?;
            let opts = ServeOptions {
                addr: format!("127.0.0.1:{port}"),
                ..ServeOptions::default()
            };
            let handle = serve(session, opts)?;
            println!("serving {} on {}", s.name, handle.url());
            handle.wait();
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay {
            scenario,
            commands,
            out,
            force,
        } => {
            let s = load(&scenario)?;
            let text = fs::read_to_string(&commands)
                .with_context(|| format!("reading {}", commands.display()))?;
            let script: CommandScript =
                serde_json::from_str(&text).context("parsing command script")?;
            let engine = replay(&s, &script)?;
            match out {
                Some(dir) => {
                    write_outputs(&dir, &s, Mode::Dynamic, &engine, force)?;
                    println!("wrote {}", dir.display());
                }
                None => print!("{}", engine.log().to_jsonl()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { seed, out, force } => {
            guard(&out, force)?;
            fs::write(&out, generate_ybg_scenario(seed).pretty_json() + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    Ok(load_scenario_file(path)?)
}

fn parse_mode(s: &str) -> Result<Mode> {
    Mode::parse(s).ok_or_else(|| anyhow!("unknown mode {s:?}; expected dynamic or static"))
}

fn parse_modes(s: &str) -> Result<(Mode, Mode)> {
    match s.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] => Ok((parse_mode(a)?, parse_mode(b)?)),
        _ => bail!("--modes takes two comma-separated modes, e.g. static,dynamic"),
    }
}

fn run_batch(s: &Scenario, mode: Mode) -> Result<Engine> {
    let mut engine = Engine::new(s, mode)?;
    engine.run_to_end()?;
    Ok(engine)
}

fn metrics_of(engine: &Engine) -> Result<RunMetrics> {
    let orders: Vec<_> = engine.orders().cloned().collect();
    Ok(compute_metrics(
        engine.scenario_hash(),
        engine.schedule(),
        &orders,
        engine.log().records(),
        engine.factory(),
        engine.models(),
    )?)
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn write_outputs(dir: &Path, s: &Scenario, mode: Mode, engine: &Engine, force: bool) -> Result<()> {
    let files = ["events.jsonl", "gantt.csv", "summary.json"].map(|f| dir.join(f));
    for f in &files {
        guard(f, force)?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let metrics = metrics_of(engine)?;
    let conformance = check_log(engine.log().records(), &s.factory, &s.models, &s.orders);
    let mut summary = serde_json::to_value(&metrics)?;
    let extra = json!({
        "scenario": s.name,
        "mode": mode.as_str(),
        "seed": s.policy.seed,
        "schedule_version": engine.schedule().version,
        "final_time": engine.now(),
        "conversations": conformance.conversations,
        "protocol_violations": conformance.violations.len(),
    });
    if let (Value::Object(m), Value::Object(x)) = (&mut summary, extra) {
        m.extend(x);
    }
    fs::write(&files[0], engine.log().to_jsonl())?;
    fs::write(&files[1], gantt_csv(engine.schedule()))?;
    fs::write(&files[2], serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn validate(gantt: &Path, scenario: &Path) -> Result<ExitCode> {
    let s = load(scenario)?;
    let text = fs::read_to_string(gantt).with_context(|| format!("reading {}", gantt.display()))?;
    let schedule = parse_gantt_csv(&text)?;
    let mut factory = s.factory.clone();
    for d in &s.disturbances {
        if let Some(m) = factory.machine_mut(&d.machine_id) {
            m.add_failure_window(d.window);
        }
    }
    let scheduled: std::collections::BTreeSet<&str> = schedule
        .entries
        .iter()
        .map(|e| order_of_job(&e.job_id))
        .collect();
    let mut jobs = Vec::new();
    for o in s
        .orders
        .iter()
        .filter(|o| scheduled.contains(o.order_id.as_str()))
    {
        jobs.extend(expand_order_in(o, &s.models, &factory)?);
    }
    let violations = validate_schedule(&schedule, &factory, &jobs, &factory.transport);
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("ok: {} entries, no violations", schedule.entries.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} violation(s)", violations.len());
        Ok(ExitCode::from(1))
    }
}

fn compare_one(s: &Scenario, a: Mode, b: Mode) -> Result<Value> {
    let ma = metrics_of(&run_batch(s, a)?)?;
    let mb = metrics_of(&run_batch(s, b)?)?;
    let delta = compare_runs(&ma, &mb)?;
    Ok(json!({
        "scenario": s.name,
        "scenario_hash": s.content_hash(),
        "a": {"mode": a.as_str(), "metrics": ma},
        "b": {"mode": b.as_str(), "metrics": mb},
        "delta": delta,
    }))
}

/// Per-scenario comparisons plus how often `b` had no more total tardiness
/// than `a`.
fn compare_suite(a: Mode, b: Mode) -> Result<Value> {
    let suite = disturbance_suite();
    let mut rows = Vec::new();
    let mut b_not_worse = 0;
    for s in &suite {
        let row = compare_one(s, a, b)?;
        if row["delta"]["total_tardiness"].as_i64().unwrap_or(0) <= 0 {
            b_not_worse += 1;
        }
        rows.push(row);
    }
    Ok(json!({
        "suite": "disturbance",
        "a_mode": a.as_str(),
        "b_mode": b.as_str(),
        "scenarios": suite.len(),
        "b_tardiness_not_worse": b_not_worse,
        "runs": rows,
    }))
}
