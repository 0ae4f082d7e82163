//! `atg`: unfold graphs, synthesize batches, simulate runs and check them.
//!
//! Exit codes: 0 pass, 2 a verdict failed, 3 bad input (including bad
//! arguments).

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use atg::graph::{GraphSpec, NodeId};
use atg::runner::{outcome_of_trace, parse_graph_specs, simulate, RunConfig, RunnerError, Status, Stop, Trace};
use atg::sweep::{sweep, SweepConfig};
use atg::synth::{synthesize_batch, validate_treeobj, Scenario, TreeSpec};
use atg::time::Time;
use atg::unfold::{size_bound, unfold};
use atg::verifier::{verify_all, Verdict};

const EXIT_FAIL: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "atg", version, about = "Atomic transfer graphs: unfold, synthesize, simulate, verify")]
struct Cli {
    /// JSON file with defaults (`delta`, `start`, `seed`, `adversary`); flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unfold a graph into its transfer tree (JSON on stdout).
    Unfold {
        graph: PathBuf,
        /// Leader to unfold at (default: the spec's leader).
        #[arg(long)]
        leader: Option<String>,
        /// Also write the tree in Graphviz format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Number of path arcs of the complete graph's tree on N nodes.
    Size {
        #[arg(long)]
        nodes: i64,
    },
    /// Synthesize the contract batch of every spec in a graph file.
    Synth {
        graph: PathBuf,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Run the protocol against a built-in adversary.
    Simulate {
        graph: PathBuf,
        #[arg(long)]
        adversary: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated corrupted users.
        #[arg(long, value_delimiter = ',')]
        corrupt: Vec<String>,
        /// `final`, `steps:N` or `time:T`.
        #[arg(long, default_value = "final")]
        until: Stop,
        /// Write the run as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Replay a trace and run the verifier on it.
    Check {
        trace: PathBuf,
        /// Only report on this user (tree-wide checks are kept).
        #[arg(long)]
        user: Option<String>,
    },
    /// Randomized security sweep over small graphs.
    Sweep {
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated adversaries (default: reorder, withhold, starve).
        #[arg(long, value_delimiter = ',')]
        adversaries: Vec<String>,
        /// Keep every user honest instead of corrupting all but one.
        #[arg(long)]
        all_honest: bool,
    },
}

#[derive(Args)]
struct TimeArgs {
    /// Δ in time units.
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    /// Start time in time units.
    #[arg(long, allow_negative_numbers = true)]
    start: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    delta: Option<f64>,
    start: Option<f64>,
    seed: Option<u64>,
    adversary: Option<String>,
}

struct Settings {
    delta: Time,
    start: Time,
    seed: u64,
    adversary: String,
}

impl Settings {
    fn resolve(file: &FileConfig, time: Option<&TimeArgs>, seed: Option<u64>, adversary: Option<String>) -> Result<Settings> {
        let delta = time.and_then(|t| t.delta).or(file.delta).unwrap_or(atg::runner::DEFAULT_DELTA_UNITS as f64);
        let start = time.and_then(|t| t.start).or(file.start).unwrap_or(0.0);
        if delta <= 0.0 {
            return Err(input(format!("delta must be positive, got {delta}")));
        }
        Ok(Settings {
            delta: Time::from_units_f64(delta),
            start: Time::from_units_f64(start),
            seed: seed.or(file.seed).unwrap_or(0),
            adversary: adversary.or_else(|| file.adversary.clone()).unwrap_or_else(|| "compliant".into()),
        })
    }
}

/// Marks errors caused by the user's input (exit code 3).
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input<E: std::fmt::Display>(e: E) -> anyhow::Error {
    InputError(e.to_string()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.chain().any(is_broken_pipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_input = e.chain().any(|c| c.is::<InputError>());
            ExitCode::from(if is_input { EXIT_INPUT } else { 1 })
        }
    }
}

/// A closed stdout (`atg … | head`) is not an error.
fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
        || e.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind()) == Some(io::ErrorKind::BrokenPipe)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(input)
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display()))),
    }
}

fn load_specs(path: &Path, s: &Settings) -> Result<Vec<GraphSpec>> {
    parse_graph_specs(&read(path)?, s.delta, s.start).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Unfold { graph, leader, dot } => {
            let s = Settings::resolve(&file, None, None, None)?;
            let specs = load_specs(&graph, &s)?;
            let [spec] = specs.as_slice() else { return Err(input("unfold takes exactly one graph spec")) };
            let d = spec.digraph().map_err(input)?;
            let leader = leader.map(NodeId::new).unwrap_or_else(|| spec.leader.clone());
            let x = unfold(&d, &leader).map_err(input)?;
            if let Some(p) = dot {
                fs::write(&p, x.to_dot()).with_context(|| format!("writing {}", p.display()))?;
            }
            print_json(&x.to_json())?;
            Ok(0)
        }
        Command::Size { nodes } => {
            println!("{}", size_bound(nodes).map_err(input)?);
            Ok(0)
        }
        Command::Synth { graph, time } => {
            let s = Settings::resolve(&file, Some(&time), None, None)?;
            let specs = load_specs(&graph, &s)?;
            let trees = specs.iter().map(TreeSpec::from_graph_spec).collect::<Result<Vec<_>, _>>().map_err(input)?;
            let diags = validate_treeobj(&trees);
            if !diags.is_empty() {
                return Err(input(format!("specs are not well formed: {diags:?}")));
            }
            let batches = trees
                .iter()
                .map(|t| synthesize_batch(t, s.delta).map(|b| b.to_json()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(input)?;
            print_json(&batches)?;
            Ok(0)
        }
        Command::Simulate { graph, adversary, seed, corrupt, until, trace, time } => {
            let s = Settings::resolve(&file, Some(&time), seed, adversary)?;
            let specs = load_specs(&graph, &s)?;
            let scenario = Scenario::from_graph_specs(&specs, s.delta).map_err(input)?;
            let corrupted: BTreeSet<NodeId> = corrupt.into_iter().map(NodeId::new).collect();
            if let Some(u) = corrupted.iter().find(|u| !scenario.users().contains(*u)) {
                return Err(input(format!("corrupted user {u} is not in any graph")));
            }
            let mut config = RunConfig::new(&scenario, corrupted);
            config.start = s.start;
            config.stop = until;
            let outcome = simulate(&scenario, &config, &s.adversary, s.seed).map_err(|e| match e {
                RunnerError::UnknownAdversary(_) | RunnerError::NotLiquid(_) | RunnerError::Semantics(_) => input(e),
                e => e.into(),
            })?;
            if let Some(p) = trace {
                let t = outcome.trace(&specs, s.delta, s.seed, &s.adversary);
                let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                let mut w = io::BufWriter::new(f);
                t.write_jsonl(&mut w)?;
                w.flush()?;
            }
            print_json(&serde_json::json!({
                "status": outcome.status,
                "stats": outcome.stats,
                "time": outcome.run.last_state().time.as_units_f64(),
                "claims": atg::runner::claims_by_tree(&outcome.run),
            }))?;
            let ok = matches!(outcome.status, Status::Final | Status::MaxSteps | Status::TargetTime);
            Ok(if ok { 0 } else { EXIT_FAIL })
        }
        Command::Check { trace, user } => {
            let f = fs::File::open(&trace).with_context(|| format!("opening {}", trace.display())).map_err(input)?;
            let t = Trace::read_jsonl(BufReader::new(f)).map_err(input)?;
            let (scenario, outcome) = match outcome_of_trace(&t) {
                Ok(v) => v,
                Err(e @ (RunnerError::Replay { .. } | RunnerError::Digest { .. })) => {
                    print_json(&serde_json::json!({ "replay": "fail", "reason": e.to_string() }))?;
                    return Ok(EXIT_FAIL);
                }
                Err(e) => return Err(input(e)),
            };
            let user = user.map(NodeId::new);
            let reports: Vec<_> = verify_all(&outcome, &scenario)
                .into_iter()
                .filter(|r| user.is_none() || r.user.is_none() || r.user == user)
                .collect();
            print_json(&reports)?;
            let failed = reports.iter().any(|r| r.verdict == Verdict::Fail);
            Ok(if failed || !outcome.is_final() { EXIT_FAIL } else { 0 })
        }
        Command::Sweep { nodes, runs, seed, adversaries, all_honest } => {
            let s = Settings::resolve(&file, None, seed, None)?;
            if nodes < 2 {
                return Err(input("sweep needs at least 2 nodes"));
            }
            let mut cfg = SweepConfig::security(nodes, runs, s.seed);
            if !adversaries.is_empty() {
                if let Some(a) = adversaries.iter().find(|a| !atg::adversary::BUILTIN.contains(&a.as_str())) {
                    return Err(input(format!("unknown adversary {a:?}")));
                }
                cfg.adversaries = adversaries;
            }
            cfg.corrupt_all_but_one = !all_honest;
            let summary = sweep(&cfg)?;
            print_json(&summary)?;
            Ok(if summary.clean() { 0 } else { EXIT_FAIL })
        }
    }
}
