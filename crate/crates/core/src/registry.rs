//! The naming-service state machine.
//!
//! Four independent LWW element sets hold node information, keygroup
//! configuration, user permissions and node organization. Every mutator
//! works on local state only; replicas reconcile through [`RegistryState::merge_sets`].
//!
//! Keygroup membership is part of keygroup configuration and lives in the
//! keygroup set under `(keygroup, node)` composite keys. Composite keys join
//! their parts with [`KEY_SEPARATOR`], a control character and therefore
//! rejected inside identifiers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::lww::{Join, LwwElementSet};
use crate::timestamp::{ReplicaClock, ReplicaId, Timestamp};

pub const KEY_SEPARATOR: char = '\u{1f}';

/// Version tag written into every record payload.
const PAYLOAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid {kind} identifier {id:?}")]
    InvalidId { kind: &'static str, id: String },
    #[error("malformed address {0:?}, expected host:port")]
    MalformedAddress(String),
    #[error("keygroup {0} already exists")]
    KeygroupExists(String),
    #[error("no such keygroup {0}")]
    NoSuchKeygroup(String),
    #[error("no such node {0}")]
    NoSuchNode(String),
    #[error("permission grant needs at least one action")]
    EmptyActions,
}

pub type Result<T, E = RegistryError> = core::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Read,
    Update,
    Delete,
    Configure,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Update, Action::Delete, Action::Configure];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: String,
    pub address: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeygroupConfig {
    pub mutable: bool,
    /// Data expiry in seconds, 0 meaning never.
    pub expiry_secs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeygroupRecord {
    pub keygroup_id: String,
    pub config: KeygroupConfig,
    pub creator: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipRecord {
    pub keygroup_id: String,
    pub node_id: String,
    pub role: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionRecord {
    pub user_id: String,
    pub keygroup_id: String,
    pub actions: BTreeSet<Action>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganizationRecord {
    pub node_id: String,
    pub zone: String,
    pub metadata: BTreeMap<String, String>,
}

// Payload schemas as stored inside the sets.

#[derive(Serialize, Deserialize)]
struct NodePayload {
    v: u32,
    address: String,
}

#[derive(Serialize, Deserialize)]
struct KeygroupPayload {
    v: u32,
    mutable: bool,
    expiry_secs: u64,
    creator: String,
}

#[derive(Serialize, Deserialize)]
struct MembershipPayload {
    v: u32,
    role: String,
}

#[derive(Serialize, Deserialize)]
struct PermissionPayload {
    v: u32,
    actions: BTreeSet<Action>,
}

#[derive(Serialize, Deserialize)]
struct OrganizationPayload {
    v: u32,
    zone: String,
    metadata: BTreeMap<String, String>,
}

fn encode<T: Serialize>(payload: &T) -> Vec<u8> {
    codec::to_canonical(payload).expect("payload structs always encode")
}

/// Records that fail to decode (foreign or future schema) read as absent.
fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Option<T> {
    codec::from_record(bytes).ok()
}

pub fn validate_id(kind: &'static str, id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_control) {
        return Err(RegistryError::InvalidId {
            kind,
            id: String::from(id),
        });
    }
    Ok(())
}

/// Accepts `host:port` with a non-empty host (bracketed for IPv6) and a
/// port in 1..=65535.
pub fn validate_address(address: &str) -> Result<()> {
    let bad = || RegistryError::MalformedAddress(String::from(address));
    let (host, port) = address.rsplit_once(':').ok_or_else(bad)?;
    let port: u16 = port.parse().map_err(|_| bad())?;
    if port == 0 || host.is_empty() || host.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(bad());
    }
    if host.contains(':') && !(host.starts_with('[') && host.ends_with(']')) {
        return Err(bad());
    }
    Ok(())
}

fn composite(a: &str, b: &str) -> String {
    let mut key = String::with_capacity(a.len() + b.len() + 1);
    key.push_str(a);
    key.push(KEY_SEPARATOR);
    key.push_str(b);
    key
}

fn split_composite(key: &str) -> Option<(&str, &str)> {
    key.split_once(KEY_SEPARATOR)
}

/// The replicated part of a registry: exactly what gossip exchanges and what
/// state hashes cover. Fields are declared in key order so the plain serde
/// encoding is canonical.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSets {
    pub keygroups: LwwElementSet,
    pub nodes: LwwElementSet,
    pub organization: LwwElementSet,
    pub permissions: LwwElementSet,
}

impl ConfigSets {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::to_canonical(self).expect("sets always encode")
    }

    pub fn state_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    pub fn max_stamp(&self) -> Option<&Timestamp> {
        [&self.nodes, &self.keygroups, &self.permissions, &self.organization]
            .into_iter()
            .filter_map(LwwElementSet::max_stamp)
            .max()
    }
}

impl Join for ConfigSets {
    fn join(&mut self, other: &Self) {
        self.nodes.join(&other.nodes);
        self.keygroups.join(&other.keygroups);
        self.permissions.join(&other.permissions);
        self.organization.join(&other.organization);
    }
}

/// One replica's registry: the four sets plus its clock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryState {
    pub sets: ConfigSets,
    pub clock: ReplicaClock,
}

impl RegistryState {
    pub fn new(replica: impl Into<ReplicaId>) -> Self {
        Self {
            sets: ConfigSets::default(),
            clock: ReplicaClock::new(replica),
        }
    }

    pub fn replica(&self) -> &ReplicaId {
        self.clock.replica()
    }

    fn stamp(&mut self, now_ms: u64) -> Timestamp {
        self.clock.next(now_ms)
    }

    pub fn register_node(&mut self, now_ms: u64, node_id: &str, address: &str) -> Result<()> {
        validate_id("node", node_id)?;
        validate_address(address)?;
        let payload = encode(&NodePayload {
            v: PAYLOAD_VERSION,
            address: String::from(address),
        });
        let stamp = self.stamp(now_ms);
        self.sets.nodes.add(node_id, payload, stamp);
        Ok(())
    }

    pub fn remove_node(&mut self, now_ms: u64, node_id: &str) -> Result<()> {
        if !self.sets.nodes.contains(node_id) {
            return Err(RegistryError::NoSuchNode(String::from(node_id)));
        }
        let stamp = self.stamp(now_ms);
        self.sets.nodes.remove(node_id, stamp);
        Ok(())
    }

    /// Create a keygroup and grant its creator every action on it.
    ///
    /// Uniqueness is checked against the local view only; a concurrent
    /// creation elsewhere is settled by the set's last-write-wins rule.
    pub fn create_keygroup(
        &mut self,
        now_ms: u64,
        keygroup_id: &str,
        config: &KeygroupConfig,
        creator: &str,
    ) -> Result<()> {
        validate_id("keygroup", keygroup_id)?;
        validate_id("user", creator)?;
        if self.sets.keygroups.contains(keygroup_id) {
            return Err(RegistryError::KeygroupExists(String::from(keygroup_id)));
        }
        let payload = encode(&KeygroupPayload {
            v: PAYLOAD_VERSION,
            mutable: config.mutable,
            expiry_secs: config.expiry_secs,
            creator: String::from(creator),
        });
        let stamp = self.stamp(now_ms);
        self.sets.keygroups.add(keygroup_id, payload, stamp);
        self.write_permission(now_ms, creator, keygroup_id, Action::ALL.into_iter().collect());
        Ok(())
    }

    /// Tombstone a keygroup together with every live membership and
    /// permission record that references it.
    pub fn delete_keygroup(&mut self, now_ms: u64, keygroup_id: &str) -> Result<()> {
        self.require_keygroup(keygroup_id)?;
        let prefix = composite(keygroup_id, "");
        let memberships: Vec<String> = self
            .sets
            .keygroups
            .members_with_prefix(&prefix)
            .map(|(key, _)| String::from(key))
            .collect();
        let permissions: Vec<String> = self
            .sets
            .permissions
            .iter_members()
            .filter(|(key, _)| split_composite(key).is_some_and(|(_, kg)| kg == keygroup_id))
            .map(|(key, _)| String::from(key))
            .collect();

        let stamp = self.stamp(now_ms);
        self.sets.keygroups.remove(keygroup_id, stamp);
        for key in memberships {
            let stamp = self.stamp(now_ms);
            self.sets.keygroups.remove(key, stamp);
        }
        for key in permissions {
            let stamp = self.stamp(now_ms);
            self.sets.permissions.remove(key, stamp);
        }
        Ok(())
    }

    pub fn join_keygroup(&mut self, now_ms: u64, keygroup_id: &str, node_id: &str) -> Result<()> {
        self.require_keygroup(keygroup_id)?;
        self.require_node(node_id)?;
        let payload = encode(&MembershipPayload {
            v: PAYLOAD_VERSION,
            role: String::from("replica"),
        });
        let stamp = self.stamp(now_ms);
        self.sets.keygroups.add(composite(keygroup_id, node_id), payload, stamp);
        Ok(())
    }

    pub fn leave_keygroup(&mut self, now_ms: u64, keygroup_id: &str, node_id: &str) -> Result<()> {
        self.require_keygroup(keygroup_id)?;
        self.require_node(node_id)?;
        let stamp = self.stamp(now_ms);
        self.sets.keygroups.remove(composite(keygroup_id, node_id), stamp);
        Ok(())
    }

    /// Replace the action set of `user_id` on `keygroup_id`. Takes effect
    /// locally at once.
    pub fn set_permission(
        &mut self,
        now_ms: u64,
        user_id: &str,
        keygroup_id: &str,
        actions: &BTreeSet<Action>,
    ) -> Result<()> {
        validate_id("user", user_id)?;
        self.require_keygroup(keygroup_id)?;
        if actions.is_empty() {
            return Err(RegistryError::EmptyActions);
        }
        self.write_permission(now_ms, user_id, keygroup_id, actions.clone());
        Ok(())
    }

    pub fn revoke_permission(&mut self, now_ms: u64, user_id: &str, keygroup_id: &str) -> Result<()> {
        validate_id("user", user_id)?;
        self.require_keygroup(keygroup_id)?;
        let stamp = self.stamp(now_ms);
        self.sets.permissions.remove(composite(user_id, keygroup_id), stamp);
        Ok(())
    }

    fn write_permission(&mut self, now_ms: u64, user_id: &str, keygroup_id: &str, actions: BTreeSet<Action>) {
        let payload = encode(&PermissionPayload {
            v: PAYLOAD_VERSION,
            actions,
        });
        let stamp = self.stamp(now_ms);
        self.sets
            .permissions
            .add(composite(user_id, keygroup_id), payload, stamp);
    }

    pub fn check_permission(&self, user_id: &str, keygroup_id: &str, action: Action) -> bool {
        self.permission(user_id, keygroup_id)
            .is_some_and(|p| p.actions.contains(&action))
    }

    pub fn set_organization(
        &mut self,
        now_ms: u64,
        node_id: &str,
        zone: &str,
        metadata: &BTreeMap<String, String>,
    ) -> Result<()> {
        self.require_node(node_id)?;
        let payload = encode(&OrganizationPayload {
            v: PAYLOAD_VERSION,
            zone: String::from(zone),
            metadata: metadata.clone(),
        });
        let stamp = self.stamp(now_ms);
        self.sets.organization.add(node_id, payload, stamp);
        Ok(())
    }

    pub fn clear_organization(&mut self, now_ms: u64, node_id: &str) -> Result<()> {
        self.require_node(node_id)?;
        let stamp = self.stamp(now_ms);
        self.sets.organization.remove(node_id, stamp);
        Ok(())
    }

    /// Live replicas of a keygroup, sorted by node id. Members whose node
    /// record is gone are skipped.
    pub fn get_replicas(&self, keygroup_id: &str) -> Result<Vec<NodeRecord>> {
        self.require_keygroup(keygroup_id)?;
        let prefix = composite(keygroup_id, "");
        Ok(self
            .sets
            .keygroups
            .members_with_prefix(&prefix)
            .filter_map(|(key, _)| split_composite(key).map(|(_, node)| node))
            .filter_map(|node| self.node(node))
            .collect())
    }

    /// Fold a remote replica's sets into this one and advance the clock past
    /// every stamp seen.
    pub fn merge_sets(&mut self, remote: &ConfigSets) {
        self.sets.join(remote);
        if let Some(max) = remote.max_stamp() {
            self.clock.observe(max);
        }
    }

    pub fn merge_state(&mut self, remote: &RegistryState) {
        self.merge_sets(&remote.sets);
    }

    pub fn keygroup_count(&self) -> usize {
        self.sets
            .keygroups
            .iter_members()
            .filter(|(id, _)| !id.contains(KEY_SEPARATOR))
            .count()
    }

    pub fn state_hash(&self) -> [u8; 32] {
        self.sets.state_hash()
    }

    pub fn node(&self, node_id: &str) -> Option<NodeRecord> {
        let payload: NodePayload = decode(self.sets.nodes.lookup(node_id)?)?;
        Some(NodeRecord {
            node_id: String::from(node_id),
            address: payload.address,
        })
    }

    pub fn nodes(&self) -> Vec<NodeRecord> {
        self.sets
            .nodes
            .iter_members()
            .filter_map(|(id, _)| self.node(id))
            .collect()
    }

    pub fn keygroup(&self, keygroup_id: &str) -> Option<KeygroupRecord> {
        let payload: KeygroupPayload = decode(self.sets.keygroups.lookup(keygroup_id)?)?;
        Some(KeygroupRecord {
            keygroup_id: String::from(keygroup_id),
            config: KeygroupConfig {
                mutable: payload.mutable,
                expiry_secs: payload.expiry_secs,
            },
            creator: payload.creator,
        })
    }

    pub fn keygroups(&self) -> Vec<KeygroupRecord> {
        self.sets
            .keygroups
            .iter_members()
            .filter(|(id, _)| !id.contains(KEY_SEPARATOR))
            .filter_map(|(id, _)| self.keygroup(id))
            .collect()
    }

    pub fn memberships(&self) -> Vec<MembershipRecord> {
        self.sets
            .keygroups
            .iter_members()
            .filter_map(|(key, payload)| {
                let (kg, node) = split_composite(key)?;
                let payload: MembershipPayload = decode(payload)?;
                Some(MembershipRecord {
                    keygroup_id: String::from(kg),
                    node_id: String::from(node),
                    role: payload.role,
                })
            })
            .collect()
    }

    /// Live permission record. A record on a keygroup that is no longer live
    /// grants nothing.
    pub fn permission(&self, user_id: &str, keygroup_id: &str) -> Option<PermissionRecord> {
        if !self.sets.keygroups.contains(keygroup_id) {
            return None;
        }
        let payload: PermissionPayload = decode(self.sets.permissions.lookup(&composite(user_id, keygroup_id))?)?;
        if payload.actions.is_empty() {
            return None;
        }
        Some(PermissionRecord {
            user_id: String::from(user_id),
            keygroup_id: String::from(keygroup_id),
            actions: payload.actions,
        })
    }

    pub fn permissions(&self) -> Vec<PermissionRecord> {
        self.sets
            .permissions
            .iter_members()
            .filter_map(|(key, _)| split_composite(key))
            .filter_map(|(user, kg)| self.permission(user, kg))
            .collect()
    }

    pub fn organization(&self, node_id: &str) -> Option<OrganizationRecord> {
        let payload: OrganizationPayload = decode(self.sets.organization.lookup(node_id)?)?;
        Some(OrganizationRecord {
            node_id: String::from(node_id),
            zone: payload.zone,
            metadata: payload.metadata,
        })
    }

    fn require_keygroup(&self, keygroup_id: &str) -> Result<()> {
        if self.sets.keygroups.contains(keygroup_id) {
            Ok(())
        } else {
            Err(RegistryError::NoSuchKeygroup(String::from(keygroup_id)))
        }
    }

    fn require_node(&self, node_id: &str) -> Result<()> {
        if self.sets.nodes.contains(node_id) {
            Ok(())
        } else {
            Err(RegistryError::NoSuchNode(String::from(node_id)))
        }
    }

    /// Canonical snapshot bytes, clock included.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        codec::to_canonical(self).expect("registry always encodes")
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, CodecError> {
        codec::from_record(bytes)
    }
}
