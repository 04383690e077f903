use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peers::{ConfigError, GossipConfig};
use crate::quorum::QuorumConfig;
use crate::registry::validate_id;
use crate::sim::{DelayMatrix, PartitionAction, PartitionEvent, PartitionSchedule, ScheduleError};

/// Name of the load generator's node, placed next to the first replica.
pub const CLIENT_NODE: &str = "client";

/// Address a replica listens on inside the simulated network.
pub fn replica_address(name: &str) -> String {
    format!("{name}:7000")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Crdt,
    Quorum,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Crdt => "crdt",
            Backend::Quorum => "quorum",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    #[default]
    Virtual,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    CreateKeygroup,
    CheckPermission,
    GetReplicas,
    KeygroupCount,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::CreateKeygroup => "CreateKeygroup",
            OpKind::CheckPermission => "CheckPermission",
            OpKind::GetReplicas => "GetReplicas",
            OpKind::KeygroupCount => "KeygroupCount",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpWeight {
    pub op: OpKind,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workload {
    pub ops: Vec<OpWeight>,
    pub interarrival_ms: u64,
    pub duration_ms: u64,
    /// User the generator acts as.
    pub user: String,
    pub request_timeout_ms: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            ops: vec![OpWeight {
                op: OpKind::CreateKeygroup,
                weight: 1,
            }],
            interarrival_ms: 250,
            duration_ms: 120_000,
            user: String::from("loadgen"),
            request_timeout_ms: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// Configuration machines; the first one serves the load generator and
    /// seeds the bootstrap chain.
    pub nodes: Vec<String>,
    pub delays: DelayMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub backend: Backend,
    pub topology: Topology,
    #[serde(default)]
    pub partition_schedule: PartitionSchedule,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub gossip: GossipConfig,
    #[serde(default)]
    pub quorum: QuorumConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub time_mode: TimeMode,
    #[serde(default = "default_sample_every")]
    pub sample_every_ms: u64,
}

fn default_sample_every() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario needs at least {needed} nodes for backend {backend}, got {got}")]
    TooFewNodes {
        backend: Backend,
        needed: usize,
        got: usize,
    },
    #[error("bad node name: {0}")]
    BadNode(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("partition schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("duration {duration_ms} ms ends before the last partition event at {last_ms} ms")]
    ScheduleBeyondDuration { duration_ms: u64, last_ms: u64 },
    #[error("workload: {0}")]
    Workload(&'static str),
    #[error("gossip config: {0}")]
    Gossip(#[from] ConfigError),
    #[error("virtual time requires a seed")]
    MissingSeed,
    #[error("sample interval must be positive")]
    ZeroSampleInterval,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let nodes = &self.topology.nodes;
        let needed = match self.backend {
            Backend::Crdt => 1,
            Backend::Quorum => 3,
        };
        if nodes.len() < needed {
            return Err(ScenarioError::TooFewNodes {
                backend: self.backend,
                needed,
                got: nodes.len(),
            });
        }
        for (i, name) in nodes.iter().enumerate() {
            validate_id("node", name).map_err(|e| ScenarioError::BadNode(e.to_string()))?;
            if name == CLIENT_NODE || name.contains(':') {
                return Err(ScenarioError::BadNode(name.clone()));
            }
            if nodes[..i].contains(name) {
                return Err(ScenarioError::DuplicateNode(name.clone()));
            }
        }
        self.partition_schedule.validate(nodes)?;
        if let Some(last) = self.partition_schedule.events.last() {
            if last.at_ms > self.workload.duration_ms {
                return Err(ScenarioError::ScheduleBeyondDuration {
                    duration_ms: self.workload.duration_ms,
                    last_ms: last.at_ms,
                });
            }
        }
        let w = &self.workload;
        if w.interarrival_ms == 0 {
            return Err(ScenarioError::Workload("interarrival must be positive"));
        }
        if w.duration_ms == 0 {
            return Err(ScenarioError::Workload("duration must be positive"));
        }
        if w.ops.iter().map(|o| o.weight as u64).sum::<u64>() == 0 {
            return Err(ScenarioError::Workload("operation mix has no weight"));
        }
        if w.request_timeout_ms == 0 {
            return Err(ScenarioError::Workload("request timeout must be positive"));
        }
        validate_id("user", &w.user).map_err(|_| ScenarioError::Workload("invalid user"))?;
        self.gossip.validate()?;
        if self.time_mode == TimeMode::Virtual && self.seed.is_none() {
            return Err(ScenarioError::MissingSeed);
        }
        if self.sample_every_ms == 0 {
            return Err(ScenarioError::ZeroSampleInterval);
        }
        Ok(())
    }
}

fn machines() -> Vec<String> {
    vec![String::from("m1"), String::from("m2"), String::from("m3")]
}

fn scenario(name: &str, delay_ms: u64, schedule: PartitionSchedule) -> Scenario {
    Scenario {
        name: String::from(name),
        backend: Backend::Crdt,
        topology: Topology {
            nodes: machines(),
            delays: DelayMatrix::uniform(delay_ms),
        },
        partition_schedule: schedule,
        workload: Workload::default(),
        gossip: GossipConfig::default(),
        quorum: QuorumConfig::default(),
        seed: Some(1),
        time_mode: TimeMode::Virtual,
        sample_every_ms: default_sample_every(),
    }
}

/// The three experiments: `baseline` (no added delay), `delay10` (10 ms
/// one-way on every link between configuration machines) and `partition`
/// (m1 cut off from m2 and m3 from 45 s until 80 s).
pub fn builtin_scenarios() -> Vec<Scenario> {
    let partition = PartitionSchedule::new(vec![
        PartitionEvent {
            at_ms: 45_000,
            action: PartitionAction::Partition {
                groups: vec![vec![String::from("m1")], vec![String::from("m2"), String::from("m3")]],
            },
        },
        PartitionEvent {
            at_ms: 80_000,
            action: PartitionAction::Heal,
        },
    ]);
    vec![
        scenario("baseline", 0, PartitionSchedule::default()),
        scenario("delay10", 10, PartitionSchedule::default()),
        scenario("partition", 0, partition),
    ]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_faithful() {
        let all = builtin_scenarios();
        let names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["baseline", "delay10", "partition"]);
        for s in &all {
            s.validate().unwrap();
            assert_eq!(s.topology.nodes, ["m1", "m2", "m3"]);
            assert_eq!(
                s.workload.ops,
                vec![OpWeight {
                    op: OpKind::CreateKeygroup,
                    weight: 1
                }]
            );
        }
        let baseline = builtin("baseline").unwrap();
        assert_eq!(baseline.topology.delays.delay("m1", "m2"), 0);
        let delay = builtin("delay10").unwrap();
        for a in ["m1", "m2", "m3"] {
            for b in ["m1", "m2", "m3"] {
                assert_eq!(delay.topology.delays.delay(a, b), if a == b { 0 } else { 10 });
            }
        }
        let partition = builtin("partition").unwrap();
        assert_eq!(
            partition.partition_schedule.events,
            vec![
                PartitionEvent {
                    at_ms: 45_000,
                    action: PartitionAction::Partition {
                        groups: vec![vec!["m1".into()], vec!["m2".into(), "m3".into()]]
                    }
                },
                PartitionEvent {
                    at_ms: 80_000,
                    action: PartitionAction::Heal
                },
            ]
        );
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = builtin("partition").unwrap();
        s.workload.duration_ms = 60_000;
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::ScheduleBeyondDuration { .. })
        ));

        let mut s = builtin("baseline").unwrap();
        s.seed = None;
        assert_eq!(s.validate(), Err(ScenarioError::MissingSeed));
        s.time_mode = TimeMode::Real;
        assert_eq!(s.validate(), Ok(()));

        let mut s = builtin("baseline").unwrap();
        s.backend = Backend::Quorum;
        s.topology.nodes.pop();
        assert!(matches!(s.validate(), Err(ScenarioError::TooFewNodes { .. })));

        let mut s = builtin("baseline").unwrap();
        s.topology.nodes[1] = "m1".into();
        assert_eq!(s.validate(), Err(ScenarioError::DuplicateNode("m1".into())));

        let mut s = builtin("baseline").unwrap();
        s.workload.interarrival_ms = 0;
        assert!(matches!(s.validate(), Err(ScenarioError::Workload(_))));

        let mut s = builtin("baseline").unwrap();
        s.gossip.rpc_timeout_ms = 5_000;
        assert!(matches!(s.validate(), Err(ScenarioError::Gossip(_))));
    }

    #[test]
    fn scenario_record_round_trips_with_defaults() {
        let s = builtin("partition").unwrap();
        let bytes = crate::codec::to_canonical(&s).unwrap();
        assert_eq!(crate::codec::from_record::<Scenario>(&bytes).unwrap(), s);

        let minimal =
            br#"{"name":"x","backend":"quorum","topology":{"nodes":["a","b","c"],"delays":{"default_ms":5}},"seed":3}"#;
        let parsed: Scenario = crate::codec::from_record(minimal).unwrap();
        assert_eq!(parsed.workload, Workload::default());
        assert_eq!(parsed.sample_every_ms, 500);
        parsed.validate().unwrap();
    }
}
