use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::actor::{Actor, Context, Input};
use crate::quorum::{Member, QuorumReplica};
use crate::replica::{CrdtReplica, ReplicaStatus};
use crate::sim::SimNet;

use super::loadgen::{LatencySample, LoadGenerator};
use super::scenario::{replica_address, Backend, Scenario, ScenarioError, CLIENT_NODE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvergenceSample {
    pub t_ms: u64,
    pub replica_id: String,
    pub keygroup_count: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub latency: Vec<LatencySample>,
    pub convergence: Vec<ConvergenceSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
    #[error("replica {node} failed to boot: {reason}")]
    BootFailure { node: String, reason: String },
}

/// Any participant of an experiment.
pub enum BenchNode {
    Crdt(CrdtReplica),
    Quorum(QuorumReplica),
    Client(LoadGenerator),
}

impl BenchNode {
    /// Keygroups visible in this replica's state; `None` for the client.
    pub fn keygroup_count(&self) -> Option<u64> {
        match self {
            BenchNode::Crdt(r) => Some(r.state().keygroup_count() as u64),
            BenchNode::Quorum(r) => Some(r.state().keygroup_count() as u64),
            BenchNode::Client(_) => None,
        }
    }

    /// Reason the node cannot serve, if it gave up during boot.
    pub fn boot_failure(&self) -> Option<String> {
        match self {
            BenchNode::Crdt(r) => match r.status() {
                ReplicaStatus::SeedUnreachable => Some(String::from("seed unreachable")),
                ReplicaStatus::Failed(e) => Some(e.to_string()),
                _ => None,
            },
            _ => None,
        }
    }
}

impl Actor for BenchNode {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        match self {
            BenchNode::Crdt(a) => a.on_start(ctx),
            BenchNode::Quorum(a) => a.on_start(ctx),
            BenchNode::Client(a) => a.on_start(ctx),
        }
    }

    fn handle(&mut self, ctx: &mut dyn Context, input: Input) {
        match self {
            BenchNode::Crdt(a) => a.handle(ctx, input),
            BenchNode::Quorum(a) => a.handle(ctx, input),
            BenchNode::Client(a) => a.handle(ctx, input),
        }
    }
}

/// Replica actors for a scenario, in topology order. Each CRDT replica
/// bootstraps through its predecessor; quorum members know each other
/// statically.
pub fn replicas(scenario: &Scenario) -> Vec<(String, String, BenchNode)> {
    let nodes = &scenario.topology.nodes;
    nodes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let address = replica_address(name);
            let actor = match scenario.backend {
                Backend::Crdt => {
                    let seed = (i > 0).then(|| replica_address(&nodes[i - 1]));
                    BenchNode::Crdt(CrdtReplica::new(
                        name,
                        &address,
                        seed.as_deref(),
                        scenario.gossip.clone(),
                    ))
                }
                Backend::Quorum => {
                    let members = nodes
                        .iter()
                        .filter(|other| *other != name)
                        .map(|other| Member {
                            node_id: other.clone(),
                            address: replica_address(other),
                        })
                        .collect();
                    BenchNode::Quorum(QuorumReplica::new(name, members, scenario.quorum.clone()))
                }
            };
            (name.clone(), address, actor)
        })
        .collect()
}

/// Run a scenario on the simulated network. The same scenario and seed
/// always yield identical output.
pub fn run_virtual(scenario: &Scenario) -> Result<RunOutput, BenchError> {
    scenario.validate()?;
    let seed = scenario.seed.ok_or(ScenarioError::MissingSeed)?;
    let mut net = SimNet::new(
        seed,
        scenario.topology.delays.clone(),
        scenario.partition_schedule.clone(),
    );
    for (name, address, actor) in replicas(scenario) {
        net.add_node(&name, &address, actor);
    }
    let first = &scenario.topology.nodes[0];
    let client = LoadGenerator::new(&replica_address(first), scenario.workload.clone());
    net.add_colocated(CLIENT_NODE, "client:0", first, BenchNode::Client(client));

    let duration = scenario.workload.duration_ms;
    let mut convergence = Vec::new();
    let mut t = 0;
    while t <= duration {
        net.run_until(t);
        check_boot(&net)?;
        for name in &scenario.topology.nodes {
            let count = net.node(name).and_then(BenchNode::keygroup_count).unwrap_or(0);
            convergence.push(ConvergenceSample {
                t_ms: t,
                replica_id: name.clone(),
                keygroup_count: count,
            });
        }
        t += scenario.sample_every_ms;
    }

    // Let requests issued near the end complete.
    let deadline = duration + scenario.workload.request_timeout_ms;
    let mut t = duration;
    while client_outstanding(&net) > 0 && t < deadline {
        t = (t + scenario.sample_every_ms).min(deadline);
        net.run_until(t);
    }

    let latency = match net.node(CLIENT_NODE) {
        Some(BenchNode::Client(c)) => c.samples(),
        _ => Vec::new(),
    };
    Ok(RunOutput { latency, convergence })
}

fn client_outstanding(net: &SimNet<BenchNode>) -> usize {
    match net.node(CLIENT_NODE) {
        Some(BenchNode::Client(c)) => c.outstanding(),
        _ => 0,
    }
}

fn check_boot(net: &SimNet<BenchNode>) -> Result<(), BenchError> {
    for (name, node) in net.nodes() {
        if let Some(reason) = node.boot_failure() {
            return Err(BenchError::BootFailure {
                node: String::from(name),
                reason,
            });
        }
    }
    Ok(())
}
