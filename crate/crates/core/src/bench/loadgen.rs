use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::actor::{Actor, Context, Input, RequestId};
use crate::proto::{ClientRequest, Request, Response};
use crate::registry::{Action, KeygroupConfig};

use super::scenario::{OpKind, Workload};

const TIMER_ISSUE: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleStatus {
    Ok,
    /// Error kind name, e.g. `NoQuorum` or `Timeout`.
    Error(String),
}

impl SampleStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, SampleStatus::Ok)
    }
}

impl fmt::Display for SampleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleStatus::Ok => f.write_str("Ok"),
            SampleStatus::Error(kind) => write!(f, "Error({kind})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencySample {
    /// Issue time.
    pub t_ms: u64,
    pub op: String,
    pub latency_ms: f64,
    pub status: SampleStatus,
}

struct InFlight {
    seq: u64,
    t_ms: u64,
    started_us: u64,
    op: OpKind,
    keygroup: Option<String>,
}

/// Open-loop client: issues one operation every interarrival period
/// regardless of outstanding requests, and records one sample per request.
pub struct LoadGenerator {
    target: String,
    workload: Workload,
    issued: u64,
    created: u64,
    known: Vec<String>,
    in_flight: BTreeMap<RequestId, InFlight>,
    samples: Vec<(u64, LatencySample)>,
}

impl LoadGenerator {
    pub fn new(target: &str, workload: Workload) -> Self {
        Self {
            target: String::from(target),
            workload,
            issued: 0,
            created: 0,
            known: Vec::new(),
            in_flight: BTreeMap::new(),
            samples: Vec::new(),
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn outstanding(&self) -> usize {
        self.in_flight.len()
    }

    /// Completed samples in issue order.
    pub fn samples(&self) -> Vec<LatencySample> {
        let mut done: Vec<&(u64, LatencySample)> = self.samples.iter().collect();
        done.sort_by_key(|(seq, _)| *seq);
        done.into_iter().map(|(_, s)| s.clone()).collect()
    }

    fn pick_op(&self, ctx: &mut dyn Context) -> OpKind {
        let total: u64 = self.workload.ops.iter().map(|o| o.weight as u64).sum();
        if self.workload.ops.len() == 1 || total == 0 {
            return self.workload.ops.first().map_or(OpKind::CreateKeygroup, |o| o.op);
        }
        let mut roll = ctx.rng().gen_range(0..total);
        for o in &self.workload.ops {
            if roll < o.weight as u64 {
                return o.op;
            }
            roll -= o.weight as u64;
        }
        unreachable!("roll below total weight")
    }

    fn existing_keygroup(&self, ctx: &mut dyn Context) -> String {
        if self.known.is_empty() {
            return String::from("kg-1");
        }
        let i = ctx.rng().gen_range(0..self.known.len());
        self.known[i].clone()
    }

    fn issue(&mut self, ctx: &mut dyn Context) {
        let op = self.pick_op(ctx);
        let user = self.workload.user.clone();
        let (request, keygroup) = match op {
            OpKind::CreateKeygroup => {
                self.created += 1;
                let kg = format!("kg-{}", self.created);
                (
                    ClientRequest::CreateKeygroup {
                        keygroup_id: kg.clone(),
                        config: KeygroupConfig::default(),
                        creator: user,
                    },
                    Some(kg),
                )
            }
            OpKind::CheckPermission => (
                ClientRequest::CheckPermission {
                    user_id: user,
                    keygroup_id: self.existing_keygroup(ctx),
                    action: Action::Read,
                },
                None,
            ),
            OpKind::GetReplicas => (
                ClientRequest::GetReplicas {
                    keygroup_id: self.existing_keygroup(ctx),
                },
                None,
            ),
            OpKind::KeygroupCount => (ClientRequest::KeygroupCount {}, None),
        };
        self.issued += 1;
        let request_id = format!("load-{}", self.issued);
        let payload = Request::Client(request).encode(&request_id);
        let id = ctx.send(&self.target, payload, self.workload.request_timeout_ms);
        self.in_flight.insert(
            id,
            InFlight {
                seq: self.issued,
                t_ms: ctx.now_ms(),
                started_us: ctx.now_micros(),
                op,
                keygroup,
            },
        );
    }

    fn complete(&mut self, ctx: &mut dyn Context, id: RequestId, status: SampleStatus) {
        let Some(f) = self.in_flight.remove(&id) else {
            return;
        };
        if status.is_ok() {
            if let Some(kg) = f.keygroup {
                self.known.push(kg);
            }
        }
        let elapsed_us = ctx.now_micros().saturating_sub(f.started_us);
        self.samples.push((
            f.seq,
            LatencySample {
                t_ms: f.t_ms,
                op: String::from(f.op.name()),
                latency_ms: elapsed_us as f64 / 1000.0,
                status,
            },
        ));
    }
}

impl Actor for LoadGenerator {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        ctx.set_timer(0, TIMER_ISSUE);
    }

    fn handle(&mut self, ctx: &mut dyn Context, input: Input) {
        match input {
            Input::Timer { tag: TIMER_ISSUE } => {
                if ctx.now_ms() >= self.workload.duration_ms {
                    return;
                }
                self.issue(ctx);
                ctx.set_timer(self.workload.interarrival_ms, TIMER_ISSUE);
            }
            Input::Timer { .. } => {}
            Input::Response { id, payload } => {
                let status = match Response::decode(&payload) {
                    Ok(r) => match r.outcome {
                        Ok(_) => SampleStatus::Ok,
                        Err(e) => SampleStatus::Error(format!("{:?}", e.kind)),
                    },
                    Err(_) => SampleStatus::Error(String::from("BadResponse")),
                };
                self.complete(ctx, id, status);
            }
            Input::Failed { id, error } => self.complete(ctx, id, SampleStatus::Error(format!("{error}"))),
            Input::Request { token, payload } => {
                let rejected = crate::proto::decode_request(&payload)
                    .map(|i| i.request_id)
                    .unwrap_or_default();
                let reply = Response::error(
                    "",
                    &rejected,
                    crate::proto::ApiError::bad_request("load generator accepts no requests"),
                );
                ctx.reply(token, reply.encode());
            }
        }
    }
}
