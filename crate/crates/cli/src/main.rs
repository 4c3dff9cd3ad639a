use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sqcbf::bench::GradStudyConfig;
use sqcbf::sim::Scenario;
use sqcbf::voxel::DEFAULT_VOXEL;
use sqcbf_cli::commands;
use sqcbf_cli::server::{self, ServerConfig};

#[derive(Parser)]
#[command(name = "sqcbf", version, about = "Superquadric distance safety filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write logs and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        filter: Option<Switch>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time distance and gradient cycles against the number of pairs.
    Bench {
        /// Pair counts, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = (1..=32).map(|k| 8 * k).collect::<Vec<usize>>())]
        pairs: Vec<usize>,
        /// Worker counts, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize])]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        cycles: usize,
        /// Passes over the pair counts; each row reports the median pass.
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient accuracy over shapes, distances, temperatures and orientations.
    Gradstudy {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Implicit-function surrogate versus signed distance along a sweep.
    Figtwo {
        #[arg(long, default_value_t = 61)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voxel coverage of a shape set against a reference shape set.
    Voxel {
        model: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOXEL)]
        delta: f64,
    },
    /// Regenerate plot data from a JSONL cycle log.
    Plot {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive teleoperation over WebSocket.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, value_enum)]
        filter: Option<Switch>,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            filter,
            seed,
            out,
        } => {
            let on = filter.map(|s| matches!(s, Switch::On));
            let (metrics, files) = commands::cmd_run(&scenario, &out, on, seed)?;
            log::info!("wrote {}", files.metrics.display());
            print_json(&metrics)
        }
        Command::Bench {
            pairs,
            workers,
            cycles,
            rounds,
            out,
        } => print_json(&commands::cmd_bench(
            &pairs,
            &workers,
            cycles,
            rounds,
            out.as_deref(),
        )?),
        Command::Gradstudy { out } => {
            let cells = commands::cmd_gradstudy(&GradStudyConfig::default(), out.as_deref())?;
            print_json(&cells)
        }
        Command::Figtwo { samples, out } => {
            print_json(&commands::cmd_figtwo(samples, out.as_deref())?)
        }
        Command::Voxel {
            model,
            reference,
            delta,
        } => print_json(&commands::cmd_voxel(&model, &reference, delta)?),
        Command::Plot { log, out } => commands::cmd_plot(&log, &out),
        Command::Serve {
            scenario,
            port,
            host,
            filter,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = filter {
                sc.filter_enabled = matches!(s, Switch::On);
            }
            let cfg = ServerConfig {
                bind: format!("{host}:{port}"),
                ..ServerConfig::default()
            };
            let handle = server::serve(&sc, &cfg)?;
            eprintln!("serving {} on ws://{}", sc.name, handle.addr());
            handle.wait()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
