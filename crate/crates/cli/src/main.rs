use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use strongstab::analysis::oracle::{self, OracleError, OracleOptions, OracleVerdict, Property};
use strongstab::analysis::Limits;
use strongstab::scenario::Scenario;
use strongstab::sweep::{self, Grid};
use strongstab::trace::{self, Header};
use strongstab::topology::TopologySpec;
use strongstab::ProtocolKind;

/// Disruptions a run must show for `--expect-unbounded` to succeed.
const UNBOUNDED_THRESHOLD: usize = 10;

#[derive(Parser)]
#[command(name = "strongstab", version, about = "Simulate and verify strongly stabilizing protocols under Byzantine faults")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check its containment bounds.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for trace.jsonl and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Succeed iff the run shows at least this many disruptions.
        #[arg(long, num_args = 0..=1, default_missing_value = "10", value_name = "T")]
        expect_unbounded: Option<usize>,
        #[arg(long)]
        oracle_cap: Option<usize>,
    },
    /// Run a parameter grid and print a CSV summary.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for sweep.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive verdicts on a small instance.
    Oracle {
        /// Take topology and protocol from a scenario file.
        #[arg(long, conflicts_with_all = ["topology", "protocol"])]
        scenario: Option<PathBuf>,
        #[arg(long, requires = "protocol")]
        topology: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        #[arg(long, value_enum, default_value_t = Which::All)]
        property: Which,
        /// Levels range over [0, L]; default 2n.
        #[arg(long)]
        level_bound: Option<i64>,
        #[arg(long, default_value_t = oracle::DEFAULT_CAP)]
        oracle_cap: usize,
        #[arg(long, default_value_t = 0)]
        neighbor_seed: u64,
    },
    /// Re-execute a stored trace and re-check the engine invariants.
    Replay { trace: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    ConvergesTo,
    WorstDisruptions,
    All,
}

/// Result of a command that ran to completion. Errors exit with status 2.
enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            // Library errors already embed their sources in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Run {
            scenario,
            out,
            expect_unbounded,
            oracle_cap,
        } => cmd_run(&scenario, out.as_deref(), expect_unbounded, oracle_cap),
        Command::Sweep { scenario, out } => cmd_sweep(&scenario, out.as_deref()),
        Command::Oracle {
            scenario,
            topology,
            protocol,
            property,
            level_bound,
            oracle_cap,
            neighbor_seed,
        } => {
            let (spec, kind, seed) = match (scenario, topology, protocol) {
                (Some(p), _, _) => {
                    let s = Scenario::load(&p)?;
                    (s.topology, s.protocol, s.seeds.neighbor)
                }
                (None, Some(t), Some(k)) => {
                    let text = fs::read_to_string(&t).with_context(|| format!("reading {}", t.display()))?;
                    (TopologySpec::parse(&text)?, k, neighbor_seed)
                }
                _ => bail!("give --scenario, or --topology with --protocol"),
            };
            cmd_oracle(&spec, kind, seed, property, level_bound, oracle_cap)
        }
        Command::Replay { trace } => cmd_replay(&trace),
    }
}

fn cmd_run(path: &Path, out: Option<&Path>, expect_unbounded: Option<usize>, cap: Option<usize>) -> Result<Outcome> {
    let mut scenario = Scenario::load(path)?;
    scenario.apply_env_seed()?;
    if let Some(c) = cap {
        scenario.oracle_cap = c;
    }
    let result = scenario.execute()?;
    let report = &result.report;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let header = Header::new(
            &result.topology,
            scenario.protocol,
            (scenario.daemon_kind, result.daemon_mode, result.fairness_bound),
            result.trace.initial(),
        );
        let file = fs::File::create(dir.join("trace.jsonl"))?;
        let mut w = std::io::BufWriter::new(file);
        trace::write_trace(&mut w, &header, &result.trace)?;
        fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    }
    println!(
        "{} n={} f={} steps={} rounds={} stabilized={} disruptions={} max_changes={}",
        report.protocol,
        report.n,
        report.f,
        report.steps,
        report.completed_rounds,
        !report.never_stabilized,
        report.disruption_count(),
        report.max_process_changes
    );
    if report.unclosed_disruption.is_some() {
        println!("unclosed disruption at the end of the trace");
    }
    if report.unknown_stability > 0 {
        println!("stability undecided at {} configurations", report.unknown_stability);
    }
    for b in &report.bounds_checked {
        let obs = b.observed.map(|o| o.to_string()).unwrap_or_else(|| "n/a".into());
        println!("{} {}: observed {obs}, limit {}", if b.pass { "PASS" } else { "FAIL" }, b.name, b.limit);
    }
    for v in &result.violations {
        println!("ENGINE {v}");
    }
    if !result.violations.is_empty() {
        return Ok(Outcome::Fail);
    }
    if let Some(t) = expect_unbounded {
        let t = if t == 0 { UNBOUNDED_THRESHOLD } else { t };
        let ok = report.disruption_count() >= t;
        println!(
            "{} repeated disruptions: {} (expected at least {t})",
            if ok { "PASS" } else { "FAIL" },
            report.disruption_count()
        );
        return Ok(if ok { Outcome::Pass } else { Outcome::Fail });
    }
    Ok(if report.all_pass() { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_sweep(path: &Path, out: Option<&Path>) -> Result<Outcome> {
    let mut grid = Grid::load(path)?;
    if let Ok(v) = std::env::var(strongstab::scenario::SEED_ENV) {
        grid.seed = v.trim().parse().with_context(|| format!("bad seed `{v}`"))?;
    }
    let rows = sweep::run_grid(&grid)?;
    let csv = sweep::to_csv(&rows);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(if rows.iter().all(|r| r.violations == 0) {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}

fn cmd_oracle(
    spec: &TopologySpec,
    kind: ProtocolKind,
    neighbor_seed: u64,
    which: Which,
    level_bound: Option<i64>,
    cap: usize,
) -> Result<Outcome> {
    let topo = spec.build(neighbor_seed, kind.protocol().topology_mode())?;
    let opts = OracleOptions {
        cap,
        level_bound,
        ..OracleOptions::default()
    };
    let props: &[Property] = match which {
        Which::ConvergesTo => &[Property::ConvergesTo],
        Which::WorstDisruptions => &[Property::WorstDisruptions],
        Which::All => &[Property::ConvergesTo, Property::WorstDisruptions],
    };
    let limits = Limits::of(&topo);
    let mut pass = true;
    for &p in props {
        let verdict = match oracle::brute_force_verify(&topo, kind, p, &opts) {
            Ok(v) => v,
            Err(e @ OracleError::TooLarge { .. }) => bail!("{e}"),
            Err(e) => bail!("oracle failed: {e}"),
        };
        println!("{}", verdict.summary(kind, &topo));
        match &verdict {
            OracleVerdict::Convergence(v) => pass &= v.converges_strongly_fair,
            OracleVerdict::Disruptions(v) => {
                let (t, k) = match kind {
                    ProtocolKind::SsSt => (limits.st_disruptions(), limits.delta_pow_d()),
                    ProtocolKind::SsTo => (limits.byz_degree as u64, 1),
                };
                pass &= v.disruptions.within(t) && v.max_process_changes.within(k);
            }
        }
    }
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_replay(path: &Path) -> Result<Outcome> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (header, trace) = trace::read_trace(BufReader::new(file))?;
    let violations = trace::verify_stored(&header, &trace)?;
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("replay ok: {} steps, {} rounds", trace.steps.len(), trace.round_ends.len());
        Ok(Outcome::Pass)
    } else {
        println!("replay failed: {} violations", violations.len());
        Ok(Outcome::Fail)
    }
}
