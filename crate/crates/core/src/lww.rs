//! State-based Last-Write-Wins element set.
//!
//! Only the newest add and the newest remove are retained per element. Under
//! the membership rule (present iff added and the add is newer than any
//! remove) this is observationally equivalent to keeping the full add and
//! remove sets, and memory stays bounded by the number of distinct elements.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::timestamp::Timestamp;

/// Join-semilattice: `join` must be commutative, associative and idempotent.
pub trait Join {
    fn join(&mut self, other: &Self);

    fn joined(&self, other: &Self) -> Self
    where
        Self: Clone,
    {
        let mut out = self.clone();
        out.join(other);
        out
    }
}

/// The retained add record of an element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwEntry {
    #[serde(with = "crate::codec::hex_bytes")]
    pub payload: Vec<u8>,
    pub stamp: Timestamp,
}

impl LwwEntry {
    /// Ordering used to pick the surviving add. Stamps are unique in correct
    /// use; the payload comparison only keeps the join commutative if a
    /// caller reuses a stamp.
    fn wins_over(&self, other: &LwwEntry) -> bool {
        (&self.stamp, &self.payload) > (&other.stamp, &other.payload)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwElementSet {
    adds: BTreeMap<String, LwwEntry>,
    removes: BTreeMap<String, Timestamp>,
}

impl LwwElementSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an add. The entry with the greater stamp survives.
    pub fn add(&mut self, id: impl Into<String>, payload: Vec<u8>, stamp: Timestamp) {
        let entry = LwwEntry { payload, stamp };
        self.absorb_add(id.into(), entry);
    }

    /// Record a removal. Tombstones only; the add record is kept.
    pub fn remove(&mut self, id: impl Into<String>, stamp: Timestamp) {
        self.absorb_remove(id.into(), stamp);
    }

    fn absorb_add(&mut self, id: String, entry: LwwEntry) {
        match self.adds.get_mut(&id) {
            Some(current) if !entry.wins_over(current) => {}
            Some(current) => *current = entry,
            None => {
                self.adds.insert(id, entry);
            }
        }
    }

    fn absorb_remove(&mut self, id: String, stamp: Timestamp) {
        match self.removes.get_mut(&id) {
            Some(current) if *current >= stamp => {}
            Some(current) => *current = stamp,
            None => {
                self.removes.insert(id, stamp);
            }
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup(id).is_some()
    }

    /// Payload of `id` if it is a member.
    pub fn lookup(&self, id: &str) -> Option<&[u8]> {
        let add = self.adds.get(id)?;
        match self.removes.get(id) {
            Some(removed) if *removed >= add.stamp => None,
            _ => Some(&add.payload),
        }
    }

    /// All members with their payloads, ordered by element id.
    pub fn members(&self) -> BTreeMap<String, Vec<u8>> {
        self.iter_members()
            .map(|(id, payload)| (String::from(id), payload.to_vec()))
            .collect()
    }

    pub fn iter_members(&self) -> impl Iterator<Item = (&str, &[u8])> + '_ {
        self.adds
            .keys()
            .filter_map(move |id| self.lookup(id).map(|p| (id.as_str(), p)))
    }

    /// Members whose id starts with `prefix`, in id order.
    pub fn members_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a [u8])> + 'a {
        self.adds
            .range::<str, _>((core::ops::Bound::Included(prefix), core::ops::Bound::Unbounded))
            .take_while(move |(id, _)| id.starts_with(prefix))
            .filter_map(move |(id, _)| self.lookup(id).map(|p| (id.as_str(), p)))
    }

    pub fn len(&self) -> usize {
        self.iter_members().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_entry(&self, id: &str) -> Option<&LwwEntry> {
        self.adds.get(id)
    }

    pub fn remove_stamp(&self, id: &str) -> Option<&Timestamp> {
        self.removes.get(id)
    }

    /// SHA-256 of the canonical encoding; equal for equal retained state.
    pub fn state_hash(&self) -> [u8; 32] {
        let bytes = crate::codec::to_canonical(self).expect("sets always encode");
        Sha256::digest(bytes).into()
    }

    /// Greatest stamp held anywhere in the set.
    pub fn max_stamp(&self) -> Option<&Timestamp> {
        let adds = self.adds.values().map(|e| &e.stamp);
        adds.chain(self.removes.values()).max()
    }
}

impl Join for LwwElementSet {
    fn join(&mut self, other: &Self) {
        for (id, entry) in &other.adds {
            self.absorb_add(id.clone(), entry.clone());
        }
        for (id, stamp) in &other.removes {
            self.absorb_remove(id.clone(), stamp.clone());
        }
    }
}
