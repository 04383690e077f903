//! Sans-IO actor contract shared by the simulated network and the socket
//! runtime.
//!
//! An actor reacts to one [`Input`] at a time and talks to the outside world
//! only through its [`Context`]: outbound requests, replies to inbound
//! requests, and timers. Every outbound request resolves to exactly one
//! `Response` or `Failed` input.

use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

/// Handle of an outbound request issued through [`Context::send`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId(pub u64);

/// Handle used to answer an inbound request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplyToken(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportError {
    /// No response within the request's timeout.
    Timeout,
    /// The destination address is not known to the transport.
    Unreachable,
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("Timeout"),
            TransportError::Unreachable => f.write_str("Unreachable"),
        }
    }
}

#[derive(Debug)]
pub enum Input {
    Timer { tag: u64 },
    Request { token: ReplyToken, payload: Vec<u8> },
    Response { id: RequestId, payload: Vec<u8> },
    Failed { id: RequestId, error: TransportError },
}

pub trait Context {
    /// Milliseconds on the clock driving this actor.
    fn now_ms(&self) -> u64;

    /// Microseconds on the same clock, for latency measurement.
    fn now_micros(&self) -> u64 {
        self.now_ms() * 1000
    }

    /// Send a request record to `address`.
    fn send(&mut self, address: &str, payload: Vec<u8>, timeout_ms: u64) -> RequestId;

    /// Answer an inbound request. Replies to requests that already failed on
    /// the sender's side are discarded.
    fn reply(&mut self, token: ReplyToken, payload: Vec<u8>);

    /// Deliver `Input::Timer { tag }` after `after_ms`.
    fn set_timer(&mut self, after_ms: u64, tag: u64);

    fn rng(&mut self) -> &mut dyn RngCore;
}

pub trait Actor {
    fn on_start(&mut self, ctx: &mut dyn Context);

    fn handle(&mut self, ctx: &mut dyn Context, input: Input);
}
