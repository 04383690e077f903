//! Totally ordered, replica-unique timestamps and the per-replica clock that
//! issues them.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a replica that issues timestamps.
///
/// Ordered bytewise; used as the last tie-breaker of [`Timestamp`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(String);

impl ReplicaId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ReplicaId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// A hybrid stamp `(time_ms, seq, replica)`.
///
/// The derived ordering is lexicographic over the fields in declaration
/// order, which gives a total order in which stamps from different replicas
/// never compare equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub struct Timestamp {
    pub time_ms: u64,
    pub seq: u64,
    pub replica: ReplicaId,
}

// Fields go out in key order so the derived encoding is already canonical.
impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Timestamp", 3)?;
        st.serialize_field("replica", &self.replica)?;
        st.serialize_field("seq", &self.seq)?;
        st.serialize_field("time_ms", &self.time_ms)?;
        st.end()
    }
}

impl Timestamp {
    pub fn new(time_ms: u64, seq: u64, replica: impl Into<ReplicaId>) -> Self {
        Self {
            time_ms,
            seq,
            replica: replica.into(),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.time_ms, self.seq, self.replica)
    }
}

/// Issues strictly increasing [`Timestamp`]s for one replica, even when the
/// supplied wall clock stalls or runs backwards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaClock {
    replica: ReplicaId,
    /// `(time_ms, seq)` of the newest stamp issued or observed, if any.
    last: Option<(u64, u64)>,
}

impl ReplicaClock {
    pub fn new(replica: impl Into<ReplicaId>) -> Self {
        Self {
            replica: replica.into(),
            last: None,
        }
    }

    /// A clock that behaves as if `(time_ms, seq)` was the last stamp issued.
    pub fn resume(replica: impl Into<ReplicaId>, time_ms: u64, seq: u64) -> Self {
        Self {
            replica: replica.into(),
            last: Some((time_ms, seq)),
        }
    }

    pub fn replica(&self) -> &ReplicaId {
        &self.replica
    }

    pub fn last(&self) -> Option<(u64, u64)> {
        self.last
    }

    /// Issue the next stamp.
    ///
    /// `time_ms = max(now_ms, last_time_ms)`; the sequence number is bumped
    /// while the time component is unchanged and reset to zero when it
    /// advances.
    pub fn next(&mut self, now_ms: u64) -> Timestamp {
        let (time_ms, seq) = match self.last {
            None => (now_ms, 0),
            Some((last_time, last_seq)) if now_ms <= last_time => (last_time, last_seq + 1),
            Some(_) => (now_ms, 0),
        };
        self.last = Some((time_ms, seq));
        Timestamp {
            time_ms,
            seq,
            replica: self.replica.clone(),
        }
    }

    /// Receive rule: after observing `stamp`, every stamp this clock issues
    /// is greater than it.
    pub fn observe(&mut self, stamp: &Timestamp) {
        let seen = (stamp.time_ms, stamp.seq);
        match self.last {
            Some(last) if last >= seen => {}
            _ => self.last = Some(seen),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stalled_clock_bumps_seq() {
        let mut c = ReplicaClock::resume("A", 10, 3);
        assert_eq!(c.next(10), Timestamp::new(10, 4, "A"));
    }

    #[test]
    fn advancing_clock_resets_seq() {
        let mut c = ReplicaClock::resume("A", 10, 3);
        assert_eq!(c.next(25), Timestamp::new(25, 0, "A"));
    }

    #[test]
    fn backwards_clock_is_clamped() {
        let mut c = ReplicaClock::resume("A", 10, 3);
        assert_eq!(c.next(7), Timestamp::new(10, 4, "A"));
    }

    #[test]
    fn fresh_clock_starts_at_now() {
        let mut c = ReplicaClock::new("A");
        assert_eq!(c.next(0), Timestamp::new(0, 0, "A"));
        assert_eq!(c.next(0), Timestamp::new(0, 1, "A"));
    }

    #[test]
    fn observe_moves_past_remote_stamp() {
        let mut c = ReplicaClock::new("A");
        c.observe(&Timestamp::new(100, 7, "Z"));
        let t = c.next(50);
        assert!(t > Timestamp::new(100, 7, "Z"));
        // older observations are ignored
        c.observe(&Timestamp::new(3, 0, "B"));
        assert!(c.next(0) > t);
    }

    #[test]
    fn replica_breaks_ties() {
        assert!(Timestamp::new(5, 0, "A") < Timestamp::new(5, 0, "B"));
        assert!(Timestamp::new(5, 1, "A") > Timestamp::new(5, 0, "B"));
        assert!(Timestamp::new(6, 0, "A") > Timestamp::new(5, 9, "B"));
    }

    proptest::proptest! {
        #[test]
        fn strictly_increasing_under_adversarial_time(
            times in proptest::collection::vec(0u64..50, 1..200),
            observed in proptest::collection::vec((0u64..60, 0u64..5), 0..20),
        ) {
            let mut c = ReplicaClock::new("A");
            let mut prev: Option<Timestamp> = None;
            for (i, now) in times.iter().enumerate() {
                if let Some((t, s)) = observed.get(i) {
                    let remote = Timestamp::new(*t, *s, "B");
                    c.observe(&remote);
                    let next = c.next(*now);
                    proptest::prop_assert!(next > remote);
                    if let Some(p) = &prev { proptest::prop_assert!(next > *p); }
                    prev = Some(next);
                    continue;
                }
                let next = c.next(*now);
                if let Some(p) = &prev { proptest::prop_assert!(next > *p); }
                prev = Some(next);
            }
        }
    }
}
