use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use reactive_offload::simulator::{run_simulation, BalancingMode, Scenario};
use reactive_offload::trace::{wait_graph_dot, write_csv, EventLog};
use reactive_offload::{scenarios, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_DEADLOCK: u8 = 4;

/// Simulates reactive task offloading on a modelled cluster.
#[derive(Parser, Debug)]
#[command(name = "roffload", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file or bundled scenario name.
    Run {
        scenario: String,
        /// Balancing mode; repeat to compare several. Defaults to the scenario's.
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<BalancingMode>,
        #[arg(long)]
        steps: Option<usize>,
        /// Directory for CSV traces, DOT graphs and the summary.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a scenario field, e.g. `--set omega_diff=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Modes simulated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write a wait graph every N steps (0: only the last step).
        #[arg(long, default_value_t = 0)]
        graph_every: usize,
    },
    /// Check a scenario and list every problem found.
    Validate { scenario: String },
    /// List the bundled scenarios.
    List,
}

fn parse_mode(s: &str) -> Result<BalancingMode, String> {
    s.parse::<BalancingMode>().map_err(|e| e.to_string())
}

/// Bad invocation that clap cannot see, such as a missing scenario.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_text(source: &str) -> Result<String> {
    let path = Path::new(source);
    if path.exists() {
        return fs::read_to_string(path).with_context(|| format!("reading {}", path.display()));
    }
    match scenarios::source(source) {
        Some(text) => Ok(text.to_string()),
        None => Err(Usage(format!(
            "no scenario file or bundled scenario named '{source}' (bundled: {})",
            scenarios::names().collect::<Vec<_>>().join(", ")
        ))
        .into()),
    }
}

fn file_stem(mode: BalancingMode) -> String {
    mode.to_string().replace('+', "-")
}

fn summary(logs: &[EventLog]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>10} {:>12} {:>12} {:>10} {:>6} {:>9}",
        "mode", "steps", "total_s", "mean_1_25", "mean_26_end", "max_step", "emerg", "offloaded"
    );
    for log in logs {
        let n = log.steps.len();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        let offloaded: usize = log.steps.iter().map(|s| s.offloaded_total()).sum();
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>10.4} {:>12} {:>12} {:>10.6} {:>6} {:>9}",
            log.mode,
            n,
            log.total_time(),
            fmt(log.mean_makespan(1, 25)),
            fmt(log.mean_makespan(26, n)),
            log.max_makespan(),
            log.emergencies.len(),
            offloaded
        );
    }
    s
}

fn write_outputs(dir: &Path, log: &EventLog, mode: BalancingMode, graph_every: usize) -> Result<()> {
    let stem = format!("{}-{}", log.scenario, file_stem(mode));
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(log, std::io::BufWriter::new(file))?;
    for record in &log.steps {
        let last = record.step == log.steps.len();
        if (graph_every > 0 && record.step % graph_every == 0) || last {
            let path = dir.join(format!("{stem}-step{:04}.dot", record.step));
            fs::write(&path, wait_graph_dot(record)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    source: &str,
    modes: Vec<BalancingMode>,
    steps: Option<usize>,
    out: Option<PathBuf>,
    sets: &[String],
    jobs: usize,
    graph_every: usize,
) -> Result<()> {
    let mut base = Scenario::parse(&load_text(source)?)?;
    for s in sets {
        base.apply_override(s)?;
    }
    if let Some(n) = steps {
        base.steps = n;
    }
    base.ensure_valid()?;
    let modes = if modes.is_empty() {
        vec![base.balancing.mode]
    } else {
        modes
    };
    let runs: Vec<Scenario> = modes
        .iter()
        .map(|&m| {
            let mut s = base.clone();
            s.balancing.mode = m;
            s
        })
        .collect();

    let jobs = jobs.max(1);
    let mut results: Vec<Option<reactive_offload::Result<EventLog>>> = (0..runs.len()).map(|_| None).collect();
    for (chunk, slots) in runs.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|s| {
                    info!("running {} in mode {}", s.name, s.balancing.mode);
                    scope.spawn(move || run_simulation(s))
                })
                .collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("simulation thread panicked"));
            }
        });
    }
    let logs = results
        .into_iter()
        .map(|r| r.expect("every run was joined"))
        .collect::<reactive_offload::Result<Vec<_>>>()?;

    let text = summary(&logs);
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (log, &mode) in logs.iter().zip(&modes) {
            write_outputs(&dir, log, mode, graph_every)?;
        }
        fs::write(dir.join(format!("{}-summary.txt", base.name)), text)?;
    }
    Ok(())
}

fn validate(source: &str) -> Result<bool> {
    let scenario = Scenario::parse(&load_text(source)?)?;
    let problems = scenario.validate();
    if problems.is_empty() {
        println!("ok");
    } else {
        for p in &problems {
            println!("{p}");
        }
    }
    Ok(problems.is_empty())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::ScenarioParse { .. } | Error::ScenarioInvalid(_) | Error::InvalidInput(_)) => EXIT_INVALID,
        Some(Error::Deadlock { .. }) => EXIT_DEADLOCK,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            modes,
            steps,
            out,
            sets,
            jobs,
            graph_every,
        } => run(&scenario, modes, steps, out, &sets, jobs, graph_every).map(|()| true),
        Command::Validate { scenario } => validate(&scenario),
        Command::List => {
            for name in scenarios::names() {
                println!("{name}");
            }
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_INVALID),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: anyhow::Error| exit_code(&e);
        assert_eq!(code(Usage("x".into()).into()), EXIT_USAGE);
        assert_eq!(code(Error::ScenarioInvalid(vec!["x".into()]).into()), EXIT_INVALID);
        assert_eq!(code(Error::InvalidInput("x".into()).into()), EXIT_INVALID);
        let parse = Error::ScenarioParse {
            line: 1,
            column: 1,
            message: "x".into(),
        };
        assert_eq!(code(anyhow::Error::from(parse).context("loading")), EXIT_INVALID);
        let deadlock = Error::Deadlock {
            step: 3,
            time: 0.5,
            diagnostic: "x".into(),
        };
        assert_eq!(code(deadlock.into()), EXIT_DEADLOCK);
        assert_eq!(code(Error::Consistency("x".into()).into()), EXIT_FAILURE);
        assert_eq!(code(anyhow::anyhow!("other")), EXIT_FAILURE);
    }

    #[test]
    fn mode_file_stems_are_path_safe() {
        assert_eq!(file_stem(BalancingMode::CcpDiffusion), "ccp-diffusion");
        assert_eq!(file_stem(BalancingMode::Off), "off");
    }
}
