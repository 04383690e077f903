//! Deterministic discrete-event network.
//!
//! Virtual time only advances by processing queued events; events with equal
//! timestamps run in insertion order. Requests travel for
//! `delay(from, to)` ms and replies for `delay(to, from)` ms. A pair of
//! nodes in different partition groups cannot talk in either direction:
//! messages are refused at send time, discarded at arrival, and those
//! already in flight when a partition starts are dropped. The sender only
//! ever learns of this through its request timeout.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::{Actor, Context, Input, ReplyToken, RequestId, TransportError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDelay {
    pub from: String,
    pub to: String,
    pub ms: u64,
}

/// One-way delays between named nodes. Unlisted pairs use `default_ms`;
/// a node never delays messages to itself.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DelayMatrixRecord", into = "DelayMatrixRecord")]
pub struct DelayMatrix {
    default_ms: u64,
    links: BTreeMap<(String, String), u64>,
}

#[derive(Serialize, Deserialize)]
struct DelayMatrixRecord {
    default_ms: u64,
    #[serde(default)]
    links: Vec<LinkDelay>,
}

impl From<DelayMatrixRecord> for DelayMatrix {
    fn from(r: DelayMatrixRecord) -> Self {
        let mut m = DelayMatrix::uniform(r.default_ms);
        for l in r.links {
            m.set(&l.from, &l.to, l.ms);
        }
        m
    }
}

impl From<DelayMatrix> for DelayMatrixRecord {
    fn from(m: DelayMatrix) -> Self {
        DelayMatrixRecord {
            default_ms: m.default_ms,
            links: m
                .links
                .into_iter()
                .map(|((from, to), ms)| LinkDelay { from, to, ms })
                .collect(),
        }
    }
}

impl DelayMatrix {
    pub fn uniform(default_ms: u64) -> Self {
        Self {
            default_ms,
            links: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, from: &str, to: &str, ms: u64) {
        self.links.insert((String::from(from), String::from(to)), ms);
    }

    pub fn set_symmetric(&mut self, a: &str, b: &str, ms: u64) {
        self.set(a, b, ms);
        self.set(b, a, ms);
    }

    pub fn default_ms(&self) -> u64 {
        self.default_ms
    }

    pub fn delay(&self, from: &str, to: &str) -> u64 {
        if from == to {
            return 0;
        }
        self.links
            .get(&(String::from(from), String::from(to)))
            .copied()
            .unwrap_or(self.default_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PartitionAction {
    /// Split the nodes into groups that cannot reach each other.
    Partition { groups: Vec<Vec<String>> },
    /// Restore full connectivity.
    Heal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEvent {
    pub at_ms: u64,
    pub action: PartitionAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionSchedule {
    pub events: Vec<PartitionEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("partition events are not sorted by time")]
    Unsorted,
    #[error("node {0} appears in more than one partition group")]
    Overlap(String),
    #[error("node {0} is not covered by the partition groups")]
    Uncovered(String),
    #[error("partition group names unknown node {0}")]
    UnknownNode(String),
}

impl PartitionSchedule {
    pub fn new(events: Vec<PartitionEvent>) -> Self {
        Self { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events must be time-ordered; every partition must split exactly
    /// `nodes` into disjoint groups.
    pub fn validate(&self, nodes: &[String]) -> Result<(), ScheduleError> {
        if self.events.windows(2).any(|w| w[0].at_ms > w[1].at_ms) {
            return Err(ScheduleError::Unsorted);
        }
        for event in &self.events {
            let PartitionAction::Partition { groups } = &event.action else {
                continue;
            };
            let mut seen: Vec<&String> = Vec::new();
            for name in groups.iter().flatten() {
                if !nodes.contains(name) {
                    return Err(ScheduleError::UnknownNode(name.clone()));
                }
                if seen.contains(&name) {
                    return Err(ScheduleError::Overlap(name.clone()));
                }
                seen.push(name);
            }
            if let Some(missing) = nodes.iter().find(|n| !seen.contains(n)) {
                return Err(ScheduleError::Uncovered(missing.clone()));
            }
        }
        Ok(())
    }

    /// Partition groups in force at `at_ms`, `None` meaning fully connected.
    pub fn groups_at(&self, at_ms: u64) -> Option<&[Vec<String>]> {
        let mut current = None;
        for event in self.events.iter().take_while(|e| e.at_ms <= at_ms) {
            current = match &event.action {
                PartitionAction::Partition { groups } => Some(groups.as_slice()),
                PartitionAction::Heal => None,
            };
        }
        current
    }
}

/// Counters for inspecting a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub requests: u64,
    pub responses: u64,
    pub dropped: u64,
    pub timeouts: u64,
}

#[derive(Debug)]
enum EventKind {
    Start(usize),
    Timer { node: usize, tag: u64 },
    Deliver { msg: u64, payload: Vec<u8> },
    Return { msg: u64, payload: Vec<u8> },
    Expire { msg: u64 },
    Refuse { node: usize, msg: u64 },
    Topology(usize),
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct InFlight {
    from: usize,
    to: usize,
    dropped: bool,
}

struct SimNode<A> {
    name: String,
    address: String,
    /// Index of the node whose network position this one shares.
    host: usize,
    actor: A,
}

enum Command {
    Send {
        msg: u64,
        address: String,
        payload: Vec<u8>,
        timeout_ms: u64,
    },
    Reply {
        msg: u64,
        payload: Vec<u8>,
    },
    Timer {
        after_ms: u64,
        tag: u64,
    },
}

struct SimContext<'a> {
    now: u64,
    next_msg: &'a mut u64,
    rng: &'a mut ChaCha8Rng,
    commands: Vec<Command>,
}

impl Context for SimContext<'_> {
    fn now_ms(&self) -> u64 {
        self.now
    }

    fn send(&mut self, address: &str, payload: Vec<u8>, timeout_ms: u64) -> RequestId {
        let msg = *self.next_msg;
        *self.next_msg += 1;
        self.commands.push(Command::Send {
            msg,
            address: String::from(address),
            payload,
            timeout_ms,
        });
        RequestId(msg)
    }

    fn reply(&mut self, token: ReplyToken, payload: Vec<u8>) {
        self.commands.push(Command::Reply { msg: token.0, payload });
    }

    fn set_timer(&mut self, after_ms: u64, tag: u64) {
        self.commands.push(Command::Timer { after_ms, tag });
    }

    fn rng(&mut self) -> &mut dyn RngCore {
        self.rng
    }
}

pub struct SimNet<A> {
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: Vec<SimNode<A>>,
    by_name: BTreeMap<String, usize>,
    by_address: BTreeMap<String, usize>,
    delays: DelayMatrix,
    schedule: PartitionSchedule,
    /// Group index per host node while partitioned.
    groups: Option<BTreeMap<usize, usize>>,
    inflight: BTreeMap<u64, InFlight>,
    next_msg: u64,
    rng: ChaCha8Rng,
    stats: SimStats,
}

impl<A: Actor> SimNet<A> {
    /// A network at time zero. All randomness handed to actors comes from a
    /// single generator seeded with `seed`.
    pub fn new(seed: u64, delays: DelayMatrix, schedule: PartitionSchedule) -> Self {
        let mut net = Self {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            by_name: BTreeMap::new(),
            by_address: BTreeMap::new(),
            delays,
            schedule,
            groups: None,
            inflight: BTreeMap::new(),
            next_msg: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: SimStats::default(),
        };
        for i in 0..net.schedule.events.len() {
            let at = net.schedule.events[i].at_ms;
            net.push(at, EventKind::Topology(i));
        }
        net
    }

    /// Add a node; it starts at the current time.
    pub fn add_node(&mut self, name: &str, address: &str, actor: A) -> usize {
        self.insert(name, address, None, actor)
    }

    /// Add a node that shares `host`'s network position: zero delay to it,
    /// the host's delays to everyone else, and the host's partition group.
    pub fn add_colocated(&mut self, name: &str, address: &str, host: &str, actor: A) -> usize {
        let host = self.by_name[host];
        self.insert(name, address, Some(host), actor)
    }

    fn insert(&mut self, name: &str, address: &str, host: Option<usize>, actor: A) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(SimNode {
            name: String::from(name),
            address: String::from(address),
            host: host.unwrap_or(idx),
            actor,
        });
        self.by_name.insert(String::from(name), idx);
        self.by_address.insert(String::from(address), idx);
        self.push(self.now, EventKind::Start(idx));
        idx
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn node(&self, name: &str) -> Option<&A> {
        self.by_name.get(name).map(|&i| &self.nodes[i].actor)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut A> {
        self.by_name.get(name).map(|&i| &mut self.nodes[i].actor)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &A)> {
        self.nodes.iter().map(|n| (n.name.as_str(), &n.actor))
    }

    /// Whether `a` and `b` can currently exchange messages.
    pub fn reachable(&self, a: &str, b: &str) -> bool {
        match (self.by_name.get(a), self.by_name.get(b)) {
            (Some(&a), Some(&b)) => self.connected(a, b),
            _ => false,
        }
    }

    fn push(&mut self, at: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq, kind }));
    }

    fn connected(&self, a: usize, b: usize) -> bool {
        let (ha, hb) = (self.nodes[a].host, self.nodes[b].host);
        if ha == hb {
            return true;
        }
        match &self.groups {
            None => true,
            Some(groups) => groups.get(&ha) == groups.get(&hb),
        }
    }

    fn delay(&self, from: usize, to: usize) -> u64 {
        let (hf, ht) = (self.nodes[from].host, self.nodes[to].host);
        if hf == ht {
            return 0;
        }
        self.delays.delay(&self.nodes[hf].name, &self.nodes[ht].name)
    }

    /// Process every event due at or before `t_ms`, then set the clock to
    /// `t_ms`. Times in the past are ignored.
    pub fn run_until(&mut self, t_ms: u64) {
        while let Some(Reverse(top)) = self.queue.peek() {
            if top.at > t_ms {
                break;
            }
            let Reverse(event) = self.queue.pop().expect("peeked");
            self.now = event.at;
            self.process(event.kind);
        }
        self.now = self.now.max(t_ms);
    }

    fn process(&mut self, kind: EventKind) {
        match kind {
            EventKind::Start(node) => {
                let mut ctx = SimContext {
                    now: self.now,
                    next_msg: &mut self.next_msg,
                    rng: &mut self.rng,
                    commands: Vec::new(),
                };
                self.nodes[node].actor.on_start(&mut ctx);
                let commands = ctx.commands;
                self.apply(node, commands);
            }
            EventKind::Timer { node, tag } => self.dispatch(node, Input::Timer { tag }),
            EventKind::Deliver { msg, payload } => {
                let Some(flight) = self.inflight.get_mut(&msg) else {
                    return;
                };
                if flight.dropped {
                    return;
                }
                let (from, to) = (flight.from, flight.to);
                if !self.connected(from, to) {
                    self.drop_msg(msg);
                    return;
                }
                self.dispatch(
                    to,
                    Input::Request {
                        token: ReplyToken(msg),
                        payload,
                    },
                );
            }
            EventKind::Return { msg, payload } => {
                let Some(flight) = self.inflight.get(&msg) else {
                    return;
                };
                if flight.dropped {
                    return;
                }
                let (from, to) = (flight.from, flight.to);
                if !self.connected(from, to) {
                    self.drop_msg(msg);
                    return;
                }
                self.inflight.remove(&msg);
                self.stats.responses += 1;
                self.dispatch(
                    from,
                    Input::Response {
                        id: RequestId(msg),
                        payload,
                    },
                );
            }
            EventKind::Expire { msg } => {
                if let Some(flight) = self.inflight.remove(&msg) {
                    self.stats.timeouts += 1;
                    self.dispatch(
                        flight.from,
                        Input::Failed {
                            id: RequestId(msg),
                            error: TransportError::Timeout,
                        },
                    );
                }
            }
            EventKind::Refuse { node, msg } => self.dispatch(
                node,
                Input::Failed {
                    id: RequestId(msg),
                    error: TransportError::Unreachable,
                },
            ),
            EventKind::Topology(i) => self.apply_topology(i),
        }
    }

    fn apply_topology(&mut self, index: usize) {
        self.groups = match &self.schedule.events[index].action {
            PartitionAction::Heal => None,
            PartitionAction::Partition { groups } => {
                let mut map = BTreeMap::new();
                for (g, members) in groups.iter().enumerate() {
                    for name in members {
                        if let Some(&i) = self.by_name.get(name) {
                            map.insert(i, g);
                        }
                    }
                }
                // nodes not named share one implicit extra group
                for (i, node) in self.nodes.iter().enumerate() {
                    if node.host == i {
                        map.entry(i).or_insert(groups.len());
                    }
                }
                Some(map)
            }
        };
        let cut: Vec<u64> = self
            .inflight
            .iter()
            .filter(|(_, f)| !f.dropped && !self.connected(f.from, f.to))
            .map(|(&m, _)| m)
            .collect();
        for msg in cut {
            self.drop_msg(msg);
        }
    }

    fn drop_msg(&mut self, msg: u64) {
        if let Some(f) = self.inflight.get_mut(&msg) {
            if !f.dropped {
                f.dropped = true;
                self.stats.dropped += 1;
            }
        }
    }

    fn dispatch(&mut self, node: usize, input: Input) {
        let mut ctx = SimContext {
            now: self.now,
            next_msg: &mut self.next_msg,
            rng: &mut self.rng,
            commands: Vec::new(),
        };
        self.nodes[node].actor.handle(&mut ctx, input);
        let commands = ctx.commands;
        self.apply(node, commands);
    }

    fn apply(&mut self, node: usize, commands: Vec<Command>) {
        for command in commands {
            match command {
                Command::Send {
                    msg,
                    address,
                    payload,
                    timeout_ms,
                } => {
                    self.stats.requests += 1;
                    let Some(&to) = self.by_address.get(&address) else {
                        self.push(self.now, EventKind::Refuse { node, msg });
                        continue;
                    };
                    let reachable = self.connected(node, to);
                    self.inflight.insert(
                        msg,
                        InFlight {
                            from: node,
                            to,
                            dropped: false,
                        },
                    );
                    self.push(self.now + timeout_ms, EventKind::Expire { msg });
                    if reachable {
                        let at = self.now + self.delay(node, to);
                        self.push(at, EventKind::Deliver { msg, payload });
                    } else {
                        self.drop_msg(msg);
                    }
                }
                Command::Reply { msg, payload } => {
                    let Some(flight) = self.inflight.get(&msg) else {
                        continue;
                    };
                    if flight.dropped || flight.to != node {
                        continue;
                    }
                    let at = self.now + self.delay(flight.to, flight.from);
                    self.push(at, EventKind::Return { msg, payload });
                }
                Command::Timer { after_ms, tag } => {
                    self.push(self.now + after_ms, EventKind::Timer { node, tag });
                }
            }
        }
    }
}

impl<A> SimNet<A> {
    pub fn address_of(&self, name: &str) -> Option<&str> {
        self.by_name.get(name).map(|&i| self.nodes[i].address.as_str())
    }
}
