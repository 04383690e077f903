//! Peer view used by gossip: who to contact and who looks unavailable.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::NodeRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeerStatus {
    Alive,
    /// Failed recently, but fewer times than the threshold.
    Suspect,
    Unreachable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerEntry {
    pub node_id: String,
    pub address: String,
    pub status: PeerStatus,
    pub last_contact: Option<u64>,
    pub consecutive_failures: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GossipConfig {
    pub period_ms: u64,
    pub fanout: usize,
    pub failure_threshold: u32,
    pub rpc_timeout_ms: u64,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self {
            period_ms: 1000,
            fanout: 1,
            failure_threshold: 3,
            rpc_timeout_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("gossip period must be positive")]
    ZeroPeriod,
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("failure threshold must be at least 1")]
    ZeroThreshold,
    #[error("rpc timeout {timeout_ms} ms must be below the gossip period {period_ms} ms")]
    TimeoutTooLong { timeout_ms: u64, period_ms: u64 },
}

impl GossipConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period_ms == 0 {
            return Err(ConfigError::ZeroPeriod);
        }
        if self.fanout == 0 {
            return Err(ConfigError::ZeroFanout);
        }
        if self.failure_threshold == 0 {
            return Err(ConfigError::ZeroThreshold);
        }
        if self.rpc_timeout_ms >= self.period_ms {
            return Err(ConfigError::TimeoutTooLong {
                timeout_ms: self.rpc_timeout_ms,
                period_ms: self.period_ms,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct PeerTable {
    peers: BTreeMap<String, PeerEntry>,
    failure_threshold: u32,
}

impl PeerTable {
    pub fn new(failure_threshold: u32) -> Self {
        Self {
            peers: BTreeMap::new(),
            failure_threshold,
        }
    }

    pub fn get(&self, node_id: &str) -> Option<&PeerEntry> {
        self.peers.get(node_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeerEntry> {
        self.peers.values()
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    /// Make the table mirror the live node records, minus `self_id`. Known
    /// peers keep their statistics; new ones start out alive.
    pub fn sync(&mut self, nodes: &[NodeRecord], self_id: &str) {
        self.peers.retain(|id, _| nodes.iter().any(|n| n.node_id == *id));
        for node in nodes.iter().filter(|n| n.node_id != self_id) {
            self.peers
                .entry(node.node_id.clone())
                .and_modify(|p| p.address.clone_from(&node.address))
                .or_insert_with(|| PeerEntry {
                    node_id: node.node_id.clone(),
                    address: node.address.clone(),
                    status: PeerStatus::Alive,
                    last_contact: None,
                    consecutive_failures: 0,
                });
        }
    }

    pub fn record_success(&mut self, node_id: &str, now_ms: u64) {
        if let Some(p) = self.peers.get_mut(node_id) {
            p.consecutive_failures = 0;
            p.last_contact = Some(now_ms);
            p.status = PeerStatus::Alive;
        }
    }

    pub fn record_failure(&mut self, node_id: &str) {
        let threshold = self.failure_threshold;
        if let Some(p) = self.peers.get_mut(node_id) {
            p.consecutive_failures = p.consecutive_failures.saturating_add(1);
            p.status = status_for(p.consecutive_failures, threshold);
        }
    }

    /// Re-derive every status from its failure counter.
    pub fn mark_peers(&mut self, _now_ms: u64) {
        let threshold = self.failure_threshold;
        for p in self.peers.values_mut() {
            p.status = status_for(p.consecutive_failures, threshold);
        }
    }

    /// Up to `fanout` peers drawn uniformly without replacement from those
    /// not marked unreachable, followed by one random unreachable peer as a
    /// probe so that healed links are rediscovered.
    pub fn select(&self, rng: &mut dyn RngCore, fanout: usize) -> Vec<&PeerEntry> {
        let (down, up): (Vec<&PeerEntry>, Vec<&PeerEntry>) =
            self.peers.values().partition(|p| p.status == PeerStatus::Unreachable);
        let mut chosen: Vec<&PeerEntry> = up.choose_multiple(rng, fanout).copied().collect();
        if let Some(probe) = down.choose(rng) {
            chosen.push(probe);
        }
        chosen
    }
}

fn status_for(failures: u32, threshold: u32) -> PeerStatus {
    match failures {
        0 => PeerStatus::Alive,
        f if f >= threshold => PeerStatus::Unreachable,
        _ => PeerStatus::Suspect,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(ids: &[&str]) -> PeerTable {
        let mut t = PeerTable::new(3);
        let nodes: Vec<NodeRecord> = ids
            .iter()
            .map(|id| NodeRecord {
                node_id: (*id).into(),
                address: alloc::format!("{id}:1"),
            })
            .collect();
        t.sync(&nodes, "self");
        t
    }

    #[test]
    fn threshold_rule() {
        let mut t = table(&["a"]);
        t.record_failure("a");
        t.record_failure("a");
        assert_eq!(t.get("a").unwrap().status, PeerStatus::Suspect);
        t.record_failure("a");
        t.mark_peers(0);
        assert_eq!(t.get("a").unwrap().status, PeerStatus::Unreachable);
        t.record_success("a", 10);
        assert_eq!(t.get("a").unwrap().status, PeerStatus::Alive);
        assert_eq!(t.get("a").unwrap().consecutive_failures, 0);
        assert_eq!(t.get("a").unwrap().last_contact, Some(10));
    }

    #[test]
    fn sync_skips_self_and_drops_removed() {
        let mut t = table(&["a", "b", "self"]);
        assert_eq!(t.len(), 2);
        t.record_failure("a");
        t.sync(
            &[NodeRecord {
                node_id: "a".into(),
                address: "new:2".into(),
            }],
            "self",
        );
        assert_eq!(t.len(), 1);
        let a = t.get("a").unwrap();
        assert_eq!(a.address, "new:2");
        assert_eq!(a.consecutive_failures, 1);
    }

    #[test]
    fn selection_excludes_unreachable_except_probe() {
        let mut t = table(&["a", "b", "c"]);
        for _ in 0..3 {
            t.record_failure("c");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let chosen: Vec<&str> = t.select(&mut rng, 1).iter().map(|p| p.node_id.as_str()).collect();
            assert_eq!(chosen.len(), 2);
            assert_ne!(chosen[0], "c");
            assert_eq!(chosen[1], "c");
        }
        let all = t.select(&mut rng, 5);
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn selection_is_roughly_uniform() {
        let t = table(&["a", "b", "c", "d"]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = BTreeMap::new();
        for _ in 0..4000 {
            for p in t.select(&mut rng, 1) {
                *hits.entry(p.node_id.clone()).or_insert(0u32) += 1;
            }
        }
        for id in ["a", "b", "c", "d"] {
            let h = hits[id];
            assert!((850..1150).contains(&h), "{id}: {h}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(GossipConfig::default().validate().is_ok());
        let mut c = GossipConfig::default();
        c.rpc_timeout_ms = c.period_ms;
        assert!(matches!(c.validate(), Err(ConfigError::TimeoutTooLong { .. })));
        c = GossipConfig {
            fanout: 0,
            ..GossipConfig::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::ZeroFanout));
        c = GossipConfig {
            period_ms: 0,
            rpc_timeout_ms: 0,
            ..GossipConfig::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::ZeroPeriod));
        c = GossipConfig {
            failure_threshold: 0,
            ..GossipConfig::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::ZeroThreshold));
    }
}
