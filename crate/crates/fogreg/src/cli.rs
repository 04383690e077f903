//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid scenario or
//! malformed input, 3 a replica failed to boot.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use fogreg_core::bench::{self, BenchError, Summary};
use fogreg_core::peers::GossipConfig;
use fogreg_core::replica::CrdtReplica;
use fogreg_core::sim::{DelayMatrix, PartitionSchedule};
use fogreg_core::RegistryState;

use crate::transport::{NodeSpec, Runtime};
use crate::{csvio, runner, scenarios, snapshot};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_BOOT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "fogreg",
    version,
    about = "Eventually consistent naming service for fog platforms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment and write latency.csv and convergence.csv.
    Run {
        /// Built-in scenario name (baseline, delay10, partition) or a scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        backend: BackendArg,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "time", value_enum, default_value = "virtual")]
        time: TimeArg,
        /// Write failed requests with 0 ms latency.
        #[arg(long)]
        paper_zeros: bool,
    },
    /// Print count, errors, percentiles and 10 s buckets of a latency CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print a built-in scenario as a scenario file.
    Scenario { name: String },
    /// Serve one CRDT replica over TCP until stopped.
    Serve {
        #[arg(long)]
        node_id: String,
        /// Socket to listen on.
        #[arg(long)]
        listen: SocketAddr,
        /// Address peers should use; defaults to the listen address.
        #[arg(long)]
        advertise: Option<String>,
        /// Address of any running replica to join through.
        #[arg(long)]
        join: Option<String>,
        /// State file loaded at start and rewritten periodically.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 5_000)]
        snapshot_every_ms: u64,
        #[arg(long, default_value_t = 1_000)]
        gossip_period_ms: u64,
        #[arg(long, default_value_t = 1)]
        fanout: usize,
        /// Stop after this long; runs forever when absent.
        #[arg(long)]
        run_for_ms: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BackendArg {
    Crdt,
    Quorum,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TimeArg {
    Virtual,
    Real,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, err)) => {
            eprintln!("fogreg: {err:#}");
            ExitCode::from(code)
        }
    }
}

pub struct Failure(pub u8, pub anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_FAILURE, e.into())
    }
}

fn fail(code: u8, err: impl Into<anyhow::Error>) -> Failure {
    Failure(code, err.into())
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            backend,
            seed,
            out,
            time,
            paper_zeros,
        } => {
            let mut s = scenarios::load(&scenario).map_err(|e| fail(EXIT_INVALID, e))?;
            s.backend = match backend {
                BackendArg::Crdt => bench::Backend::Crdt,
                BackendArg::Quorum => bench::Backend::Quorum,
            };
            s.seed = Some(seed);
            s.time_mode = match time {
                TimeArg::Virtual => bench::TimeMode::Virtual,
                TimeArg::Real => bench::TimeMode::Real,
            };
            let output = runner::run(&s).map_err(|e| match e {
                BenchError::Invalid(_) => fail(EXIT_INVALID, e),
                BenchError::BootFailure { .. } => fail(EXIT_BOOT, e),
            })?;
            let (latency, convergence) = runner::write_outputs(&out, &output, paper_zeros)?;
            let summary = bench::summarize(&output.latency);
            println!(
                "{} {} seed {}: {} requests, {} errors, p50 {} ms",
                s.name,
                s.backend,
                seed,
                summary.count,
                summary.errors,
                summary.p50.map_or("-".into(), csvio::format_ms)
            );
            println!("wrote {} and {}", latency.display(), convergence.display());
            Ok(())
        }
        Command::Summarize { input } => {
            let file = std::fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let samples = csvio::read_latency(file).map_err(|e| match e {
                csvio::CsvError::Io(_) => fail(EXIT_FAILURE, e),
                _ => fail(EXIT_INVALID, e),
            })?;
            let mut stdout = std::io::stdout().lock();
            write_summary(&mut stdout, &bench::summarize(&samples))?;
            Ok(())
        }
        Command::Scenario { name } => {
            let s = bench::builtin(&name)
                .ok_or_else(|| fail(EXIT_INVALID, anyhow::anyhow!("no built-in scenario {name:?}")))?;
            std::io::stdout().write_all(&scenarios::render(&s))?;
            Ok(())
        }
        Command::Serve {
            node_id,
            listen,
            advertise,
            join,
            snapshot,
            snapshot_every_ms,
            gossip_period_ms,
            fanout,
            run_for_ms,
        } => {
            let gossip = GossipConfig {
                period_ms: gossip_period_ms,
                fanout,
                rpc_timeout_ms: (gossip_period_ms / 2).max(1),
                ..GossipConfig::default()
            };
            gossip.validate().map_err(|e| fail(EXIT_INVALID, e))?;
            serve(ServeOptions {
                node_id,
                listen,
                advertise,
                join,
                snapshot,
                snapshot_every: Duration::from_millis(snapshot_every_ms.max(1)),
                gossip,
                run_for: run_for_ms.map(Duration::from_millis),
            })
        }
    }
}

pub fn write_summary(out: &mut impl Write, s: &Summary) -> std::io::Result<()> {
    let ms = |v: Option<f64>| v.map_or("-".to_string(), csvio::format_ms);
    writeln!(out, "count {}", s.count)?;
    writeln!(out, "errors {}", s.errors)?;
    writeln!(out, "p50_ms {}", ms(s.p50))?;
    writeln!(out, "p95_ms {}", ms(s.p95))?;
    writeln!(out, "p99_ms {}", ms(s.p99))?;
    writeln!(out, "bucket_start_ms count errors p50_ms")?;
    for b in &s.buckets {
        writeln!(out, "{} {} {} {}", b.start_ms, b.count, b.errors, ms(b.p50))?;
    }
    Ok(())
}

pub struct ServeOptions {
    pub node_id: String,
    pub listen: SocketAddr,
    pub advertise: Option<String>,
    pub join: Option<String>,
    pub snapshot: Option<PathBuf>,
    pub snapshot_every: Duration,
    pub gossip: GossipConfig,
    pub run_for: Option<Duration>,
}

fn serve(opts: ServeOptions) -> Result<(), Failure> {
    let advertise = opts.advertise.clone().unwrap_or_else(|| opts.listen.to_string());
    let restored = match &opts.snapshot {
        Some(path) => snapshot::load(path).map_err(|e| fail(EXIT_BOOT, e))?,
        None => None,
    };
    let replica = match restored {
        Some(state) if state.replica().as_str() == opts.node_id => {
            CrdtReplica::with_state(state, &advertise, opts.join.as_deref(), opts.gossip.clone())
        }
        Some(state) => {
            return Err(fail(
                EXIT_BOOT,
                anyhow::anyhow!("snapshot belongs to replica {}", state.replica().as_str()),
            ))
        }
        None => CrdtReplica::new(&opts.node_id, &advertise, opts.join.as_deref(), opts.gossip.clone()),
    };
    let runtime = Runtime::start(
        vec![NodeSpec {
            name: opts.node_id.clone(),
            address: advertise.clone(),
            host: None,
            listen: Some(opts.listen),
            actor: replica,
        }],
        DelayMatrix::uniform(0),
        PartitionSchedule::default(),
        rand::random(),
    )
    .map_err(|e| fail(EXIT_BOOT, anyhow::anyhow!("binding {}: {e}", opts.listen)))?;
    eprintln!(
        "fogreg: replica {} listening on {}",
        opts.node_id,
        runtime.local_addr(&opts.node_id).expect("listening")
    );
    let started = Instant::now();
    let mut saved = Instant::now();
    loop {
        let tick = opts.snapshot_every.min(Duration::from_millis(200));
        thread::sleep(tick);
        let failed = runtime.actor(&opts.node_id).and_then(|r| match r.status() {
            fogreg_core::replica::ReplicaStatus::SeedUnreachable => Some("seed unreachable".to_string()),
            fogreg_core::replica::ReplicaStatus::Failed(e) => Some(e.to_string()),
            _ => None,
        });
        if let Some(reason) = failed {
            runtime.shutdown();
            return Err(fail(
                EXIT_BOOT,
                anyhow::anyhow!("replica {} failed to boot: {reason}", opts.node_id),
            ));
        }
        if let Some(path) = &opts.snapshot {
            if saved.elapsed() >= opts.snapshot_every {
                save_state(&runtime, &opts.node_id, path)?;
                saved = Instant::now();
            }
        }
        if opts.run_for.is_some_and(|d| started.elapsed() >= d) {
            break;
        }
    }
    if let Some(path) = &opts.snapshot {
        save_state(&runtime, &opts.node_id, path)?;
    }
    runtime.shutdown();
    Ok(())
}

fn save_state(runtime: &Runtime<CrdtReplica>, node_id: &str, path: &Path) -> Result<(), Failure> {
    let state: RegistryState = match runtime.actor(node_id) {
        Some(r) => r.state().clone(),
        None => return Ok(()),
    };
    snapshot::save(path, &state).with_context(|| format!("writing snapshot {}", path.display()))?;
    Ok(())
}
