//! Messages carried in [`Envelope`]s: the client-facing naming operations,
//! gossip state exchange, and the quorum baseline's append RPC.
//!
//! A response echoes the request's `msg_type` and `request_id`; its body is
//! either `{"result":…,"status":"ok"}` or
//! `{"code":…,"error":…,"message":…,"status":"error"}`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

use crate::codec::{self, canonical_value_bytes, encode_envelope, CodecError, Envelope};
use crate::registry::{Action, ConfigSets, KeygroupConfig, NodeRecord, RegistryError, RegistryState};

pub const MSG_STATE_EXCHANGE: &str = "StateExchange";
pub const MSG_QUORUM_APPEND: &str = "QuorumAppend";

/// Naming-service operations a FReD node issues against its configuration
/// replica. Variant names are the wire `msg_type`s.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "msg_type", content = "body")]
pub enum ClientRequest {
    CreateKeygroup {
        keygroup_id: String,
        #[serde(default)]
        config: KeygroupConfig,
        creator: String,
    },
    DeleteKeygroup {
        keygroup_id: String,
    },
    JoinKeygroup {
        keygroup_id: String,
        node_id: String,
    },
    LeaveKeygroup {
        keygroup_id: String,
        node_id: String,
    },
    RegisterNode {
        node_id: String,
        address: String,
    },
    SetPermission {
        user_id: String,
        keygroup_id: String,
        actions: BTreeSet<Action>,
    },
    RevokePermission {
        user_id: String,
        keygroup_id: String,
    },
    CheckPermission {
        user_id: String,
        keygroup_id: String,
        action: Action,
    },
    GetReplicas {
        keygroup_id: String,
    },
    KeygroupCount {},
}

impl ClientRequest {
    pub fn msg_type(&self) -> &'static str {
        match self {
            ClientRequest::CreateKeygroup { .. } => "CreateKeygroup",
            ClientRequest::DeleteKeygroup { .. } => "DeleteKeygroup",
            ClientRequest::JoinKeygroup { .. } => "JoinKeygroup",
            ClientRequest::LeaveKeygroup { .. } => "LeaveKeygroup",
            ClientRequest::RegisterNode { .. } => "RegisterNode",
            ClientRequest::SetPermission { .. } => "SetPermission",
            ClientRequest::RevokePermission { .. } => "RevokePermission",
            ClientRequest::CheckPermission { .. } => "CheckPermission",
            ClientRequest::GetReplicas { .. } => "GetReplicas",
            ClientRequest::KeygroupCount {} => "KeygroupCount",
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(
            self,
            ClientRequest::CheckPermission { .. } | ClientRequest::GetReplicas { .. } | ClientRequest::KeygroupCount {}
        )
    }
}

/// Operation-specific success payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientResult {
    Allowed { allowed: bool },
    Replicas { replicas: Vec<NodeRecord> },
    Count { count: u64 },
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    BadRequest,
    InvalidArgument,
    MalformedAddress,
    NoSuchKeygroup,
    NoSuchNode,
    KeygroupExists,
    NoQuorum,
}

impl ErrorKind {
    /// Stable HTTP-style status code.
    pub fn code(self) -> u16 {
        match self {
            ErrorKind::BadRequest => 400,
            ErrorKind::NoSuchKeygroup | ErrorKind::NoSuchNode => 404,
            ErrorKind::KeygroupExists => 409,
            ErrorKind::InvalidArgument | ErrorKind::MalformedAddress => 422,
            ErrorKind::NoQuorum => 503,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::BadRequest, message)
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.kind, self.kind.code(), self.message)
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let kind = match &e {
            RegistryError::InvalidId { .. } | RegistryError::EmptyActions => ErrorKind::InvalidArgument,
            RegistryError::MalformedAddress(_) => ErrorKind::MalformedAddress,
            RegistryError::KeygroupExists(_) => ErrorKind::KeygroupExists,
            RegistryError::NoSuchKeygroup(_) => ErrorKind::NoSuchKeygroup,
            RegistryError::NoSuchNode(_) => ErrorKind::NoSuchNode,
        };
        ApiError::new(kind, e.to_string())
    }
}

impl From<CodecError> for ApiError {
    fn from(e: CodecError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

pub type ClientResponse = Result<ClientResult, ApiError>;

/// Apply a client request to local state. Never touches the network.
pub fn execute(state: &mut RegistryState, now_ms: u64, request: &ClientRequest) -> ClientResponse {
    use ClientRequest::*;
    match request {
        CreateKeygroup {
            keygroup_id,
            config,
            creator,
        } => state.create_keygroup(now_ms, keygroup_id, config, creator)?,
        DeleteKeygroup { keygroup_id } => state.delete_keygroup(now_ms, keygroup_id)?,
        JoinKeygroup { keygroup_id, node_id } => state.join_keygroup(now_ms, keygroup_id, node_id)?,
        LeaveKeygroup { keygroup_id, node_id } => state.leave_keygroup(now_ms, keygroup_id, node_id)?,
        RegisterNode { node_id, address } => state.register_node(now_ms, node_id, address)?,
        SetPermission {
            user_id,
            keygroup_id,
            actions,
        } => state.set_permission(now_ms, user_id, keygroup_id, actions)?,
        RevokePermission { user_id, keygroup_id } => state.revoke_permission(now_ms, user_id, keygroup_id)?,
        CheckPermission {
            user_id,
            keygroup_id,
            action,
        } => {
            return Ok(ClientResult::Allowed {
                allowed: state.check_permission(user_id, keygroup_id, *action),
            })
        }
        GetReplicas { keygroup_id } => {
            return Ok(ClientResult::Replicas {
                replicas: state.get_replicas(keygroup_id)?,
            })
        }
        KeygroupCount {} => {
            return Ok(ClientResult::Count {
                count: state.keygroup_count() as u64,
            })
        }
    }
    Ok(ClientResult::Done)
}

/// Gossip push-pull message; the reply carries the responder's state as it
/// was before merging the request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub address: String,
    pub from: String,
    pub state: ConfigSets,
}

impl Exchange {
    /// Canonical record of the exchange, written without an intermediate
    /// tree because states can be large.
    pub fn to_record(&self) -> Vec<u8> {
        codec::to_sorted_record(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: u64,
    pub op: ClientRequest,
}

/// Replicate `entries`, which start at log position `from_index`, and
/// announce the coordinator's commit point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendRequest {
    pub generation: u64,
    pub from_index: u64,
    pub entries: Vec<LogEntry>,
    pub commit: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendReply {
    pub generation: u64,
    /// Length of the log prefix known to match the coordinator's.
    pub matched: u64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Client(ClientRequest),
    StateExchange(Exchange),
    Append(AppendRequest),
}

impl Request {
    pub fn msg_type(&self) -> &'static str {
        match self {
            Request::Client(c) => c.msg_type(),
            Request::StateExchange(_) => MSG_STATE_EXCHANGE,
            Request::Append(_) => MSG_QUORUM_APPEND,
        }
    }

    pub fn encode(&self, request_id: &str) -> Vec<u8> {
        let body = match self {
            Request::Client(c) => {
                let Value::Object(mut tagged) = to_value(c) else {
                    unreachable!("client requests serialize as objects")
                };
                canonical_value_bytes(&tagged.remove("body").unwrap_or(Value::Null))
            }
            Request::StateExchange(x) => x.to_record(),
            Request::Append(a) => canonical_value_bytes(&to_value(a)),
        };
        encode_envelope(self.msg_type(), request_id, &body)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol types always serialize")
}

/// A request that could not be decoded, with whatever envelope fields were
/// recovered so the error response can still be addressed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub msg_type: String,
    pub request_id: String,
    pub error: ApiError,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Incoming {
    pub request_id: String,
    pub request: Request,
}

pub fn decode_request(record: &[u8]) -> Result<Incoming, Rejected> {
    let env = Envelope::decode(record).map_err(|e| Rejected {
        msg_type: String::new(),
        request_id: String::new(),
        error: e.into(),
    })?;
    let reject = |error: ApiError| Rejected {
        msg_type: env.msg_type.clone(),
        request_id: env.request_id.clone(),
        error,
    };
    let bad_body = |e: CodecError| reject(ApiError::bad_request(format!("bad body: {e}")));
    let request = match env.msg_type.as_str() {
        MSG_STATE_EXCHANGE => Request::StateExchange(env.body().map_err(bad_body)?),
        MSG_QUORUM_APPEND => Request::Append(env.body().map_err(bad_body)?),
        other if is_client_msg_type(other) => {
            // client msg_types are plain identifiers, no escaping needed
            let tagged = format!(r#"{{"body":{},"msg_type":"{other}"}}"#, env.body.get());
            Request::Client(codec::from_record(tagged.as_bytes()).map_err(bad_body)?)
        }
        other => return Err(reject(ApiError::bad_request(format!("unknown msg_type {other:?}")))),
    };
    Ok(Incoming {
        request_id: env.request_id,
        request,
    })
}

pub const CLIENT_MSG_TYPES: [&str; 10] = [
    "CreateKeygroup",
    "DeleteKeygroup",
    "JoinKeygroup",
    "LeaveKeygroup",
    "RegisterNode",
    "SetPermission",
    "RevokePermission",
    "CheckPermission",
    "GetReplicas",
    "KeygroupCount",
];

fn is_client_msg_type(msg_type: &str) -> bool {
    CLIENT_MSG_TYPES.contains(&msg_type)
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: u16,
    error: ErrorKind,
    message: &'a str,
    status: &'static str,
}

/// Either shape of a response body; which fields are present depends on
/// `status`.
#[derive(Deserialize)]
struct RawResponseBody<'a> {
    status: String,
    #[serde(borrow, default, deserialize_with = "present")]
    result: Option<&'a RawValue>,
    #[serde(default)]
    error: Option<ErrorKind>,
    #[serde(default)]
    message: Option<String>,
}

// Keeps an explicit `null` result distinct from an absent one.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<&'de RawValue>, D::Error> {
    <&'de RawValue>::deserialize(d).map(Some)
}

impl<'a> RawResponseBody<'a> {
    fn parse(env: &'a Envelope<'a>) -> Result<Result<&'a RawValue, ApiError>, CodecError> {
        let body: RawResponseBody<'a> =
            serde_json::from_str(env.body.get()).map_err(|e| CodecError::Malformed(e.to_string()))?;
        match (body.status.as_str(), body.result, body.error) {
            ("ok", Some(result), _) => Ok(Ok(result)),
            ("error", _, Some(kind)) => Ok(Err(ApiError::new(kind, body.message.unwrap_or_default()))),
            (status, ..) => Err(CodecError::Malformed(format!("bad response status {status:?}"))),
        }
    }
}

/// A decoded response envelope with an untyped result.
#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub msg_type: String,
    pub request_id: String,
    pub outcome: Result<Value, ApiError>,
}

impl Response {
    pub fn ok<T: Serialize>(msg_type: &str, request_id: &str, result: &T) -> Self {
        Self {
            msg_type: String::from(msg_type),
            request_id: String::from(request_id),
            outcome: Ok(to_value(result)),
        }
    }

    pub fn error(msg_type: &str, request_id: &str, error: ApiError) -> Self {
        Self {
            msg_type: String::from(msg_type),
            request_id: String::from(request_id),
            outcome: Err(error),
        }
    }

    pub fn client(msg_type: &str, request_id: &str, response: &ClientResponse) -> Self {
        match response {
            Ok(result) => Self::ok(msg_type, request_id, result),
            Err(e) => Self::error(msg_type, request_id, e.clone()),
        }
    }

    pub fn rejected(rejected: Rejected) -> Self {
        Self::error(&rejected.msg_type, &rejected.request_id, rejected.error)
    }

    pub fn encode(&self) -> Vec<u8> {
        match &self.outcome {
            Ok(result) => encode_ok(&self.msg_type, &self.request_id, &canonical_value_bytes(result)),
            Err(e) => {
                let body = ErrorBody {
                    code: e.kind.code(),
                    error: e.kind,
                    message: &e.message,
                    status: "error",
                };
                encode_envelope(&self.msg_type, &self.request_id, &codec::to_sorted_record(&body))
            }
        }
    }

    pub fn decode(record: &[u8]) -> Result<Self, CodecError> {
        let env = Envelope::decode(record)?;
        let outcome = match RawResponseBody::parse(&env)? {
            Ok(raw) => Ok(serde_json::from_str(raw.get()).map_err(|e| CodecError::Malformed(e.to_string()))?),
            Err(e) => Err(e),
        };
        Ok(Self {
            msg_type: env.msg_type.clone(),
            request_id: env.request_id.clone(),
            outcome,
        })
    }

    /// Decode straight into the expected result type.
    pub fn decode_as<T: DeserializeOwned>(record: &[u8]) -> Result<Result<T, ApiError>, CodecError> {
        let env = Envelope::decode(record)?;
        match RawResponseBody::parse(&env)? {
            Ok(raw) => serde_json::from_str(raw.get())
                .map(Ok)
                .map_err(|e| CodecError::Malformed(e.to_string())),
            Err(e) => Ok(Err(e)),
        }
    }

    pub fn into_client(self) -> Result<ClientResponse, CodecError> {
        self.into_typed()
    }

    pub fn into_typed<T: DeserializeOwned>(self) -> Result<Result<T, ApiError>, CodecError> {
        match self.outcome {
            Ok(v) => serde_json::from_value(v)
                .map(Ok)
                .map_err(|e| CodecError::Malformed(e.to_string())),
            Err(e) => Ok(Err(e)),
        }
    }
}

/// Success response around an already canonical result record.
pub fn encode_ok(msg_type: &str, request_id: &str, result: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(result.len() + 26);
    body.extend_from_slice(b"{\"result\":");
    body.extend_from_slice(result);
    body.extend_from_slice(b",\"status\":\"ok\"}");
    encode_envelope(msg_type, request_id, &body)
}
