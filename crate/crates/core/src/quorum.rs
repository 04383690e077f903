//! Majority-ack replicated store used as the strongly consistent baseline.
//!
//! The replica a client talks to coordinates: it appends the mutation to its
//! log, ships the unacknowledged log suffix to every member it considers up,
//! and answers only once a majority (itself included) holds the entry.
//! Reads need the same majority of acknowledgements. Without a reachable
//! majority every request fails with `NoQuorum`.
//!
//! Members that miss an acknowledgement are marked down and probed
//! periodically. A successful probe ships the missing log suffix, and the
//! member counts towards quorums again once `recovery_backoff_ms` has passed.
//!
//! One coordinating replica per store; there is no leader election.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::actor::{Actor, Context, Input, ReplyToken, RequestId};
use crate::proto::{
    self, ApiError, AppendReply, AppendRequest, ClientRequest, ClientResponse, ErrorKind, LogEntry, Request, Response,
};
use crate::registry::RegistryState;

const TIMER_PROBE: u64 = 1;
const TIMER_RECOVERED: u64 = 2;

/// Clock identity shared by all members, so that applying the same log
/// yields identical state everywhere.
const APPLY_REPLICA: &str = "quorum";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuorumConfig {
    pub rpc_timeout_ms: u64,
    pub probe_interval_ms: u64,
    pub recovery_backoff_ms: u64,
}

impl Default for QuorumConfig {
    fn default() -> Self {
        Self {
            rpc_timeout_ms: 500,
            probe_interval_ms: 1000,
            recovery_backoff_ms: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Member {
    pub node_id: String,
    pub address: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkStatus {
    Up,
    Down,
    Recovering { until_ms: u64 },
}

#[derive(Clone, Debug)]
struct Link {
    address: String,
    status: LinkStatus,
    /// Length of the member's log prefix known to match ours.
    matched: u64,
    probing: bool,
}

struct Op {
    token: ReplyToken,
    request_id: String,
    request: ClientRequest,
    /// Log length that must be acknowledged.
    index: u64,
    /// Outcome decided at admission (writes) or at completion (reads).
    result: Option<ClientResponse>,
    acked: BTreeSet<String>,
    outstanding: BTreeSet<String>,
}

enum Rpc {
    Op { member: String, op: u64, generation: u64 },
    Probe { member: String, generation: u64 },
}

pub struct QuorumReplica {
    node_id: String,
    config: QuorumConfig,
    links: BTreeMap<String, Link>,
    log: Vec<LogEntry>,
    commit: u64,
    applied: RegistryState,
    applied_len: u64,
    /// `applied` plus every uncommitted entry; used to admit new writes.
    speculative: RegistryState,
    generation: u64,
    highest_generation_seen: u64,
    ops: BTreeMap<u64, Op>,
    next_op: u64,
    rpcs: BTreeMap<RequestId, Rpc>,
    next_request: u64,
}

impl QuorumReplica {
    /// `members` lists every other replica of the store.
    pub fn new(node_id: &str, members: Vec<Member>, config: QuorumConfig) -> Self {
        let links = members
            .into_iter()
            .filter(|m| m.node_id != node_id)
            .map(|m| {
                (
                    m.node_id,
                    Link {
                        address: m.address,
                        status: LinkStatus::Up,
                        matched: 0,
                        probing: false,
                    },
                )
            })
            .collect();
        Self {
            node_id: String::from(node_id),
            config,
            links,
            log: Vec::new(),
            commit: 0,
            applied: RegistryState::new(APPLY_REPLICA),
            applied_len: 0,
            speculative: RegistryState::new(APPLY_REPLICA),
            generation: 0,
            highest_generation_seen: 0,
            ops: BTreeMap::new(),
            next_op: 0,
            rpcs: BTreeMap::new(),
            next_request: 0,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    /// Committed state as applied on this replica.
    pub fn state(&self) -> &RegistryState {
        &self.applied
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn commit_index(&self) -> u64 {
        self.commit
    }

    pub fn link_status(&self, member: &str) -> Option<LinkStatus> {
        self.links.get(member).map(|l| l.status)
    }

    /// Majority of the whole store, this replica included.
    pub fn majority(&self) -> usize {
        (self.links.len() + 1) / 2 + 1
    }

    fn up_members(&self) -> Vec<String> {
        self.links
            .iter()
            .filter(|(_, l)| l.status == LinkStatus::Up)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn request_id(&mut self) -> String {
        self.next_request += 1;
        format!("{}-q{}", self.node_id, self.next_request)
    }

    fn append_for(&mut self, member: &str) -> (String, Vec<u8>) {
        let link = &self.links[member];
        let from = link.matched.min(self.log.len() as u64);
        let request = Request::Append(AppendRequest {
            generation: self.generation,
            from_index: from,
            entries: self.log[from as usize..].to_vec(),
            commit: self.commit,
        });
        let address = link.address.clone();
        let id = self.request_id();
        (address, request.encode(&id))
    }

    /// Admit a client request and start replicating it.
    fn submit(&mut self, ctx: &mut dyn Context, token: ReplyToken, request_id: String, request: ClientRequest) {
        let up = self.up_members();
        if up.len() + 1 < self.majority() {
            let err = ApiError::new(ErrorKind::NoQuorum, "no majority of replicas reachable");
            self.respond(ctx, token, &request_id, &request, Err(err));
            return;
        }
        let result = if request.is_read() {
            None
        } else {
            let index = self.log.len() as u64;
            match proto::execute(&mut self.speculative, index + 1, &request) {
                Ok(result) => {
                    self.log.push(LogEntry {
                        index,
                        op: request.clone(),
                    });
                    Some(Ok(result))
                }
                // rejected against the speculative view
                Err(e) => {
                    self.respond(ctx, token, &request_id, &request, Err(e));
                    return;
                }
            }
        };
        let op_id = self.next_op;
        self.next_op += 1;
        let mut op = Op {
            token,
            request_id,
            request,
            index: self.log.len() as u64,
            result,
            acked: BTreeSet::new(),
            outstanding: BTreeSet::new(),
        };
        for member in up {
            let (address, payload) = self.append_for(&member);
            let id = ctx.send(&address, payload, self.config.rpc_timeout_ms);
            self.rpcs.insert(
                id,
                Rpc::Op {
                    member: member.clone(),
                    op: op_id,
                    generation: self.generation,
                },
            );
            op.outstanding.insert(member);
        }
        self.ops.insert(op_id, op);
        self.settle(ctx);
    }

    fn respond(
        &self,
        ctx: &mut dyn Context,
        token: ReplyToken,
        request_id: &str,
        request: &ClientRequest,
        outcome: ClientResponse,
    ) {
        ctx.reply(
            token,
            Response::client(request.msg_type(), request_id, &outcome).encode(),
        );
    }

    /// Complete or fail queued operations strictly in admission order.
    fn settle(&mut self, ctx: &mut dyn Context) {
        let majority = self.majority();
        while let Some((&op_id, op)) = self.ops.iter().next() {
            if op.acked.len() + 1 >= majority {
                let op = self.ops.remove(&op_id).expect("present");
                self.advance_commit(op.index);
                let outcome = match op.result {
                    Some(outcome) => outcome,
                    None => proto::execute(&mut self.applied, 0, &op.request),
                };
                self.respond(ctx, op.token, &op.request_id, &op.request, outcome);
            } else if op.acked.len() + op.outstanding.len() + 1 < majority {
                self.fail_from(ctx, op_id);
                return;
            } else {
                return;
            }
        }
    }

    /// Fail `first` and everything queued after it, and drop their
    /// uncommitted log entries.
    fn fail_from(&mut self, ctx: &mut dyn Context, first: u64) {
        let failed: Vec<Op> = self.ops.split_off(&first).into_values().collect();
        let keep = self.commit.max(
            failed
                .iter()
                .filter(|op| !op.request.is_read())
                .map(|op| op.index - 1)
                .min()
                .unwrap_or(self.log.len() as u64),
        );
        if (keep as usize) < self.log.len() {
            self.log.truncate(keep as usize);
            self.generation += 1;
            for link in self.links.values_mut() {
                link.matched = link.matched.min(keep);
            }
            self.speculative = self.applied.clone();
            for entry in &self.log[self.applied_len as usize..] {
                let _ = proto::execute(&mut self.speculative, entry.index + 1, &entry.op);
            }
        }
        for op in failed {
            let err = ApiError::new(ErrorKind::NoQuorum, "majority did not acknowledge in time");
            self.respond(ctx, op.token, &op.request_id, &op.request, Err(err));
        }
    }

    fn advance_commit(&mut self, index: u64) {
        self.commit = self.commit.max(index);
        self.apply_committed();
    }

    fn apply_committed(&mut self) {
        while self.applied_len < self.commit.min(self.log.len() as u64) {
            let entry = &self.log[self.applied_len as usize];
            let _ = proto::execute(&mut self.applied, entry.index + 1, &entry.op);
            self.applied_len += 1;
        }
    }

    /// Member side of replication.
    fn on_append(&mut self, append: AppendRequest) -> AppendReply {
        if append.generation < self.highest_generation_seen {
            return AppendReply {
                generation: append.generation,
                matched: 0,
                ok: false,
            };
        }
        self.highest_generation_seen = append.generation;
        let len = self.log.len() as u64;
        if append.from_index > len {
            return AppendReply {
                generation: append.generation,
                matched: len,
                ok: false,
            };
        }
        let count = append.entries.len() as u64;
        for (k, entry) in append.entries.into_iter().enumerate() {
            let pos = append.from_index as usize + k;
            match self.log.get(pos) {
                Some(existing) if *existing == entry => {}
                Some(_) => {
                    self.log.truncate(pos);
                    self.log.push(entry);
                }
                None => self.log.push(entry),
            }
        }
        let matched = append.from_index + count;
        self.commit = self.commit.max(append.commit.min(matched));
        self.apply_committed();
        AppendReply {
            generation: append.generation,
            matched,
            ok: true,
        }
    }

    fn on_request(&mut self, ctx: &mut dyn Context, token: ReplyToken, payload: &[u8]) {
        let incoming = match proto::decode_request(payload) {
            Ok(incoming) => incoming,
            Err(rejected) => {
                ctx.reply(token, Response::rejected(rejected).encode());
                return;
            }
        };
        match incoming.request {
            Request::Client(request) => self.submit(ctx, token, incoming.request_id, request),
            Request::Append(append) => {
                let reply = self.on_append(append);
                ctx.reply(
                    token,
                    Response::ok(proto::MSG_QUORUM_APPEND, &incoming.request_id, &reply).encode(),
                );
            }
            Request::StateExchange(_) => ctx.reply(
                token,
                Response::error(
                    proto::MSG_STATE_EXCHANGE,
                    &incoming.request_id,
                    ApiError::bad_request("not a gossip replica"),
                )
                .encode(),
            ),
        }
    }

    fn on_reply(&mut self, ctx: &mut dyn Context, id: RequestId, reply: Option<AppendReply>) {
        let Some(rpc) = self.rpcs.remove(&id) else {
            return;
        };
        let now = ctx.now_ms();
        match rpc {
            Rpc::Op { member, op, generation } => {
                let current = generation == self.generation;
                let acked = match &reply {
                    Some(reply) if current && reply.generation == generation => {
                        self.note_match(&member, reply);
                        reply.ok
                    }
                    Some(_) => false,
                    None => {
                        self.mark_down(&member);
                        false
                    }
                };
                if let Some(op) = self.ops.get_mut(&op) {
                    op.outstanding.remove(&member);
                    if acked && reply.is_some_and(|r| r.matched >= op.index) {
                        op.acked.insert(member);
                    }
                }
                self.settle(ctx);
            }
            Rpc::Probe { member, generation } => {
                if let Some(link) = self.links.get_mut(&member) {
                    link.probing = false;
                }
                match reply {
                    Some(reply) if reply.ok && generation == self.generation => {
                        self.note_match(&member, &reply);
                        let until_ms = now + self.config.recovery_backoff_ms;
                        if let Some(link) = self.links.get_mut(&member) {
                            if link.status == LinkStatus::Down {
                                link.status = LinkStatus::Recovering { until_ms };
                                ctx.set_timer(self.config.recovery_backoff_ms, TIMER_RECOVERED);
                            }
                        }
                    }
                    Some(reply) if generation == self.generation => self.note_match(&member, &reply),
                    _ => {}
                }
            }
        }
    }

    fn note_match(&mut self, member: &str, reply: &AppendReply) {
        if let Some(link) = self.links.get_mut(member) {
            link.matched = if reply.ok {
                link.matched.max(reply.matched)
            } else {
                reply.matched
            }
            .min(self.log.len() as u64);
        }
    }

    fn mark_down(&mut self, member: &str) {
        if let Some(link) = self.links.get_mut(member) {
            link.status = LinkStatus::Down;
        }
    }

    /// Ship missing log entries to every member marked down.
    fn probe(&mut self, ctx: &mut dyn Context) {
        let down: Vec<String> = self
            .links
            .iter()
            .filter(|(_, l)| l.status == LinkStatus::Down && !l.probing)
            .map(|(id, _)| id.clone())
            .collect();
        for member in down {
            let (address, payload) = self.append_for(&member);
            let id = ctx.send(&address, payload, self.config.rpc_timeout_ms);
            self.rpcs.insert(
                id,
                Rpc::Probe {
                    member: member.clone(),
                    generation: self.generation,
                },
            );
            if let Some(link) = self.links.get_mut(&member) {
                link.probing = true;
            }
        }
    }

    fn finish_recovery(&mut self, now_ms: u64) {
        for link in self.links.values_mut() {
            if let LinkStatus::Recovering { until_ms } = link.status {
                if until_ms <= now_ms {
                    link.status = LinkStatus::Up;
                }
            }
        }
    }
}

impl Actor for QuorumReplica {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        ctx.set_timer(self.config.probe_interval_ms, TIMER_PROBE);
    }

    fn handle(&mut self, ctx: &mut dyn Context, input: Input) {
        match input {
            Input::Timer { tag: TIMER_PROBE } => {
                self.probe(ctx);
                ctx.set_timer(self.config.probe_interval_ms, TIMER_PROBE);
            }
            Input::Timer { tag: TIMER_RECOVERED } => self.finish_recovery(ctx.now_ms()),
            Input::Timer { .. } => {}
            Input::Request { token, payload } => self.on_request(ctx, token, &payload),
            Input::Response { id, payload } => {
                let reply = Response::decode_as::<AppendReply>(&payload).ok().and_then(Result::ok);
                self.on_reply(ctx, id, reply);
            }
            Input::Failed { id, .. } => self.on_reply(ctx, id, None),
        }
    }
}
