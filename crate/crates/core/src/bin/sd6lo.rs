//! Experiment driver: run seeded replicas of a scenario under either
//! stack, compare two runs, or validate a scenario file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sd6lo::experiment::{self, apply_overrides, mode_label, Overrides};
use sd6lo::node::Mode;
use sd6lo::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "sd6lo", version, about = "software-defined 6LoWPAN simulator and report generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sdn,
    Rpl,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sdn => Mode::Sdn,
            ModeArg::Rpl => Mode::RplBaseline,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run all replicas of a scenario and write per-replica CSVs plus a
    /// summary.
    Run {
        /// Scenario file.
        #[arg(long)]
        scenario: PathBuf,
        /// Which stack to simulate.
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Override the scenario's replica count.
        #[arg(long)]
        replicas: Option<u32>,
        /// Override the run duration in seconds.
        #[arg(long)]
        duration: Option<u32>,
        /// Override the warmup window in seconds.
        #[arg(long)]
        warmup: Option<u32>,
        /// Override the base seed (replica k runs with seed base+k).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the topology update period in seconds.
        #[arg(long)]
        update_period: Option<u32>,
        /// Override the flow/routing table capacity.
        #[arg(long)]
        capacity: Option<usize>,
        /// Worker threads for replica-level parallelism.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (default: out-<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the controller's topology snapshot.
        #[arg(long, default_value_t = false)]
        dump_topology: bool,
    },
    /// Merge two run directories into a side-by-side table and ECDFs.
    Compare {
        /// First run directory (side A).
        a: PathBuf,
        /// Second run directory (side B).
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => {
            let (sc, warnings) = load_scenario(&scenario).map_err(|e| e.to_string())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "ok: {} nodes, border router {}, {} replicas x {} s",
                sc.nodes.len(),
                sc.border_router(),
                sc.run.replicas,
                sc.run.duration_s
            );
            Ok(())
        }
        Command::Run {
            scenario,
            mode,
            replicas,
            duration,
            warmup,
            seed,
            update_period,
            capacity,
            jobs,
            out,
            dump_topology,
        } => {
            let (mut sc, warnings) = load_scenario(&scenario).map_err(|e| e.to_string())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let mode: Mode = mode.into();
            apply_overrides(
                &mut sc,
                &Overrides {
                    replicas,
                    duration_s: duration,
                    warmup_s: warmup,
                    seed,
                    update_period_s: update_period,
                    flow_capacity: capacity,
                },
            );
            sc.validate().map_err(|e| e.to_string())?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("out-{}", mode_label(mode))));
            let summary = experiment::run_experiment(&sc, mode, jobs, &out, dump_topology)
                .map_err(|e| e.to_string())?;
            println!(
                "{} | {} replicas x {} s (warmup {} s) -> {}",
                mode_label(mode),
                sc.run.replicas,
                sc.run.duration_s,
                sc.run.warmup_s,
                out.display()
            );
            println!(
                "steady control bytes: mean {:.0} (95% CI {:.0}..{:.0})",
                summary.control_bytes.mean,
                summary.control_bytes.ci95_lo,
                summary.control_bytes.ci95_hi
            );
            println!(
                "steady mean RTT: {:.2} ms (95% CI {:.2}..{:.2})",
                summary.rtt_mean_us.mean / 1000.0,
                summary.rtt_mean_us.ci95_lo / 1000.0,
                summary.rtt_mean_us.ci95_hi / 1000.0
            );
            let misses: u64 = summary.rows.iter().map(|r| r.miss_requests_steady).sum();
            let daos: u64 = summary.rows.iter().map(|r| r.dao_datagrams).sum();
            println!("steady table-miss requests: {misses} | dao datagrams: {daos}");
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let table = experiment::compare(&a, &b, &out).map_err(|e| e.to_string())?;
            print!("{table}");
            println!("written: {}", out.join("compare.csv").display());
            Ok(())
        }
    }
}
