//! Runs a scenario in either time mode and writes its CSV files.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use fogreg_core::bench::{
    self, BenchError, BenchNode, ConvergenceSample, LoadGenerator, RunOutput, Scenario, TimeMode, CLIENT_NODE,
};

use crate::csvio::{self, CsvError};
use crate::transport::{NodeSpec, Runtime};

pub const LATENCY_FILE: &str = "latency.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";

pub fn run(scenario: &Scenario) -> Result<RunOutput, BenchError> {
    match scenario.time_mode {
        TimeMode::Virtual => bench::run_virtual(scenario),
        TimeMode::Real => run_real(scenario),
    }
}

/// Run over loopback TCP against the wall clock. Partition and delay
/// schedules are emulated on the links; samples are taken on the nominal
/// cadence.
pub fn run_real(scenario: &Scenario) -> Result<RunOutput, BenchError> {
    scenario.validate()?;
    let loopback: SocketAddr = "127.0.0.1:0".parse().expect("literal address");
    let first = scenario.topology.nodes[0].clone();
    let mut specs: Vec<NodeSpec<BenchNode>> = bench::replicas(scenario)
        .into_iter()
        .map(|(name, address, actor)| NodeSpec {
            name,
            address,
            host: None,
            listen: Some(loopback),
            actor,
        })
        .collect();
    specs.push(NodeSpec {
        name: CLIENT_NODE.to_string(),
        address: "client:0".to_string(),
        host: Some(first.clone()),
        listen: None,
        actor: BenchNode::Client(LoadGenerator::new(
            &bench::replica_address(&first),
            scenario.workload.clone(),
        )),
    });
    let runtime = Runtime::start(
        specs,
        scenario.topology.delays.clone(),
        scenario.partition_schedule.clone(),
        scenario.seed.unwrap_or(0),
    )
    .map_err(|e| BenchError::BootFailure {
        node: first.clone(),
        reason: e.to_string(),
    })?;
    let started = Instant::now();

    let duration = scenario.workload.duration_ms;
    let mut convergence = Vec::new();
    let mut t = 0;
    let outcome = loop {
        if t > duration {
            break Ok(());
        }
        thread::sleep((started + Duration::from_millis(t)).saturating_duration_since(Instant::now()));
        if let Some(err) = boot_failure(&runtime) {
            break Err(err);
        }
        for name in &scenario.topology.nodes {
            let count = runtime.actor(name).and_then(|a| a.keygroup_count()).unwrap_or(0);
            convergence.push(ConvergenceSample {
                t_ms: t,
                replica_id: name.clone(),
                keygroup_count: count,
            });
        }
        t += scenario.sample_every_ms;
    };

    let deadline = Instant::now() + Duration::from_millis(scenario.workload.request_timeout_ms);
    while outcome.is_ok() && outstanding(&runtime) > 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(10));
    }
    let nodes = runtime.shutdown();
    outcome?;
    let latency = nodes
        .into_iter()
        .find_map(|(_, node)| match node {
            BenchNode::Client(c) => Some(c.samples()),
            _ => None,
        })
        .unwrap_or_default();
    Ok(RunOutput { latency, convergence })
}

fn boot_failure(runtime: &Runtime<BenchNode>) -> Option<BenchError> {
    let names: Vec<String> = runtime.names().map(String::from).collect();
    names.into_iter().find_map(|name| {
        let reason = runtime.actor(&name)?.boot_failure()?;
        Some(BenchError::BootFailure { node: name, reason })
    })
}

fn outstanding(runtime: &Runtime<BenchNode>) -> usize {
    match runtime.actor(CLIENT_NODE).as_deref() {
        Some(BenchNode::Client(c)) => c.outstanding(),
        _ => 0,
    }
}

/// Write both CSV files into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, output: &RunOutput, paper_zeros: bool) -> Result<(PathBuf, PathBuf), CsvError> {
    std::fs::create_dir_all(dir)?;
    let latency = dir.join(LATENCY_FILE);
    let convergence = dir.join(CONVERGENCE_FILE);
    csvio::write_latency(std::fs::File::create(&latency)?, &output.latency, paper_zeros)?;
    csvio::write_convergence(std::fs::File::create(&convergence)?, &output.convergence)?;
    Ok((latency, convergence))
}
