//! A CRDT naming-service replica as a sans-IO actor.
//!
//! Client requests are answered from local state. A periodic timer drives
//! push-pull anti-entropy with randomly chosen peers, and the peer list is
//! learned from the node set of the replicated registry, so joining through a
//! single seed is enough to discover the whole overlay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{Actor, Context, Input, RequestId};
use crate::peers::{GossipConfig, PeerTable};
use crate::proto::{self, ApiError, Exchange, Request, Response};
use crate::registry::{RegistryError, RegistryState};

const TIMER_GOSSIP: u64 = 1;
const TIMER_BOOTSTRAP: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            backoff_ms: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplicaStatus {
    Joining { attempt: u32 },
    Running,
    SeedUnreachable,
    Failed(RegistryError),
}

enum Pending {
    Bootstrap,
    Gossip { peer: String },
}

pub struct CrdtReplica {
    node_id: String,
    address: String,
    seed: Option<String>,
    gossip: GossipConfig,
    bootstrap: BootstrapConfig,
    state: RegistryState,
    peers: PeerTable,
    status: ReplicaStatus,
    pending: BTreeMap<RequestId, Pending>,
    next_request: u64,
    rounds: u64,
}

impl CrdtReplica {
    pub fn new(node_id: &str, address: &str, seed: Option<&str>, gossip: GossipConfig) -> Self {
        Self::with_state(RegistryState::new(node_id), address, seed, gossip)
    }

    /// Resume from previously persisted state; gossip repairs anything that
    /// is stale.
    pub fn with_state(state: RegistryState, address: &str, seed: Option<&str>, gossip: GossipConfig) -> Self {
        Self {
            node_id: String::from(state.replica().as_str()),
            address: String::from(address),
            seed: seed.map(String::from),
            peers: PeerTable::new(gossip.failure_threshold),
            gossip,
            bootstrap: BootstrapConfig::default(),
            state,
            status: ReplicaStatus::Joining { attempt: 0 },
            pending: BTreeMap::new(),
            next_request: 0,
            rounds: 0,
        }
    }

    pub fn with_bootstrap(mut self, bootstrap: BootstrapConfig) -> Self {
        self.bootstrap = bootstrap;
        self
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn state(&self) -> &RegistryState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut RegistryState {
        &mut self.state
    }

    pub fn peers(&self) -> &PeerTable {
        &self.peers
    }

    pub fn status(&self) -> &ReplicaStatus {
        &self.status
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    fn request_id(&mut self) -> String {
        self.next_request += 1;
        format!("{}-{}", self.node_id, self.next_request)
    }

    fn exchange_payload(&mut self) -> Vec<u8> {
        let id = self.request_id();
        Request::StateExchange(Exchange {
            from: self.node_id.clone(),
            address: self.address.clone(),
            state: self.state.sets.clone(),
        })
        .encode(&id)
    }

    fn send_bootstrap(&mut self, ctx: &mut dyn Context) {
        let Some(seed) = self.seed.clone() else {
            return;
        };
        let payload = self.exchange_payload();
        let id = ctx.send(&seed, payload, self.gossip.rpc_timeout_ms);
        self.pending.insert(id, Pending::Bootstrap);
    }

    /// One anti-entropy round: exchange full state with up to `fanout`
    /// reachable peers plus one probe of an unreachable peer, if any.
    pub fn gossip_round(&mut self, ctx: &mut dyn Context) {
        self.rounds += 1;
        self.peers.mark_peers(ctx.now_ms());
        let targets: Vec<(String, String)> = self
            .peers
            .select(ctx.rng(), self.gossip.fanout)
            .into_iter()
            .map(|p| (p.node_id.clone(), p.address.clone()))
            .collect();
        for (peer, address) in targets {
            let payload = self.exchange_payload();
            let id = ctx.send(&address, payload, self.gossip.rpc_timeout_ms);
            self.pending.insert(id, Pending::Gossip { peer });
        }
    }

    fn refresh_peers(&mut self) {
        let nodes = self.state.nodes();
        self.peers.sync(&nodes, &self.node_id);
    }

    fn absorb(&mut self, exchange: &Exchange, now_ms: u64) {
        self.state.merge_sets(&exchange.state);
        self.refresh_peers();
        self.peers.record_success(&exchange.from, now_ms);
    }

    fn on_request(&mut self, ctx: &mut dyn Context, payload: &[u8]) -> Vec<u8> {
        let incoming = match proto::decode_request(payload) {
            Ok(incoming) => incoming,
            Err(rejected) => return Response::rejected(rejected).encode(),
        };
        let msg_type = incoming.request.msg_type();
        let now = ctx.now_ms();
        match incoming.request {
            Request::Client(request) => {
                let outcome = proto::execute(&mut self.state, now, &request);
                Response::client(msg_type, &incoming.request_id, &outcome).encode()
            }
            Request::StateExchange(remote) => {
                let reply = Exchange {
                    from: self.node_id.clone(),
                    address: self.address.clone(),
                    state: self.state.sets.clone(),
                };
                self.absorb(&remote, now);
                proto::encode_ok(msg_type, &incoming.request_id, &reply.to_record())
            }
            Request::Append(_) => Response::error(
                msg_type,
                &incoming.request_id,
                ApiError::bad_request("not a quorum replica"),
            )
            .encode(),
        }
    }

    fn on_response(&mut self, ctx: &mut dyn Context, id: RequestId, payload: &[u8]) {
        let Some(pending) = self.pending.remove(&id) else {
            return;
        };
        let reply = Response::decode_as::<Exchange>(payload).ok().and_then(Result::ok);
        let now = ctx.now_ms();
        match (pending, reply) {
            (Pending::Bootstrap, Some(exchange)) => {
                self.absorb(&exchange, now);
                self.status = ReplicaStatus::Running;
            }
            (Pending::Gossip { .. }, Some(exchange)) => self.absorb(&exchange, now),
            (pending, None) => self.on_failure(ctx, pending),
        }
    }

    fn on_failure(&mut self, ctx: &mut dyn Context, pending: Pending) {
        match pending {
            Pending::Gossip { peer } => self.peers.record_failure(&peer),
            Pending::Bootstrap => {
                let ReplicaStatus::Joining { attempt } = self.status else {
                    return;
                };
                let attempt = attempt + 1;
                if attempt >= self.bootstrap.max_attempts {
                    self.status = ReplicaStatus::SeedUnreachable;
                } else {
                    self.status = ReplicaStatus::Joining { attempt };
                    let backoff = self.bootstrap.backoff_ms << (attempt - 1).min(16);
                    ctx.set_timer(backoff, TIMER_BOOTSTRAP);
                }
            }
        }
    }
}

impl Actor for CrdtReplica {
    /// Register this node in its own registry, contact the seed (if any) and
    /// start the gossip timer at a random phase.
    fn on_start(&mut self, ctx: &mut dyn Context) {
        let now = ctx.now_ms();
        let (node_id, address) = (self.node_id.clone(), self.address.clone());
        if let Err(e) = self.state.register_node(now, &node_id, &address) {
            self.status = ReplicaStatus::Failed(e);
            return;
        }
        self.refresh_peers();
        if self.seed.is_some() {
            self.status = ReplicaStatus::Joining { attempt: 0 };
            self.send_bootstrap(ctx);
        } else {
            self.status = ReplicaStatus::Running;
        }
        let phase = ctx.rng().gen_range(0..self.gossip.period_ms);
        ctx.set_timer(phase, TIMER_GOSSIP);
    }

    fn handle(&mut self, ctx: &mut dyn Context, input: Input) {
        match input {
            Input::Timer { tag: TIMER_GOSSIP } => {
                if !matches!(self.status, ReplicaStatus::Failed(_) | ReplicaStatus::SeedUnreachable) {
                    self.gossip_round(ctx);
                }
                ctx.set_timer(self.gossip.period_ms, TIMER_GOSSIP);
            }
            Input::Timer { tag: TIMER_BOOTSTRAP } => self.send_bootstrap(ctx),
            Input::Timer { .. } => {}
            Input::Request { token, payload } => {
                let reply = self.on_request(ctx, &payload);
                ctx.reply(token, reply);
            }
            Input::Response { id, payload } => self.on_response(ctx, id, &payload),
            Input::Failed { id, .. } => {
                if let Some(pending) = self.pending.remove(&id) {
                    self.on_failure(ctx, pending);
                }
            }
        }
    }
}
