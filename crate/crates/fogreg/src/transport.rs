//! Socket runtime for the sans-IO actors.
//!
//! Every node runs its actor on a dedicated thread that owns the actor's
//! timers and serializes all of its inputs. Listening nodes accept framed
//! requests over TCP; each connection is served by its own thread, one
//! request at a time and in order. Outbound requests open a fresh connection
//! on a short-lived thread.
//!
//! Addresses registered as routes get link emulation: the one-way delay of
//! the delay matrix is slept on each direction, and a request between hosts
//! in different partition groups times out without touching the socket.
//! Any other address is dialed directly.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use fogreg_core::actor::{Actor, Context, Input, ReplyToken, RequestId, TransportError};
use fogreg_core::codec::{encode_frame, MAX_FRAME_LEN};
use fogreg_core::sim::{DelayMatrix, PartitionSchedule};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Read one length-prefixed record. `Ok(None)` on a clean end of stream
/// before a prefix; a stream that ends inside a frame is an error.
pub fn read_frame(stream: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match stream.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut record = vec![0; len];
    stream.read_exact(&mut record)?;
    Ok(Some(record))
}

pub fn write_frame(stream: &mut impl Write, record: &[u8]) -> io::Result<()> {
    stream.write_all(&encode_frame(record))?;
    stream.flush()
}

/// One framed request/response exchange on a fresh connection.
pub fn call(addr: SocketAddr, record: &[u8], timeout: Duration) -> io::Result<Vec<u8>> {
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    write_frame(&mut stream, record)?;
    read_frame(&mut stream)?.ok_or_else(|| io::ErrorKind::UnexpectedEof.into())
}

/// Where a routed address lives.
#[derive(Clone, Debug)]
struct Route {
    /// Node whose network position the address shares.
    host: String,
    socket: SocketAddr,
}

struct Links {
    start: Instant,
    delays: DelayMatrix,
    schedule: PartitionSchedule,
    routes: BTreeMap<String, Route>,
}

impl Links {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn reachable(&self, a: &str, b: &str) -> bool {
        if a == b {
            return true;
        }
        match self.schedule.groups_at(self.now_ms()) {
            None => true,
            Some(groups) => {
                let group = |n: &str| groups.iter().position(|g| g.iter().any(|m| m == n));
                group(a) == group(b)
            }
        }
    }

    fn delay(&self, a: &str, b: &str) -> Duration {
        if a == b {
            Duration::ZERO
        } else {
            Duration::from_millis(self.delays.delay(a, b))
        }
    }
}

enum Event {
    Request { payload: Vec<u8>, reply: Sender<Vec<u8>> },
    Response { id: RequestId, payload: Vec<u8> },
    Failed { id: RequestId, error: TransportError },
    Stop,
}

/// Configuration of one node.
pub struct NodeSpec<A> {
    pub name: String,
    /// Address other nodes use for this node. Routed through link emulation
    /// when `listen` is set.
    pub address: String,
    /// Network position; defaults to the node itself.
    pub host: Option<String>,
    /// Socket to bind; `None` for nodes that only send.
    pub listen: Option<SocketAddr>,
    pub actor: A,
}

struct NodeHandle<A> {
    name: String,
    actor: Arc<Mutex<A>>,
    events: Sender<Event>,
    local: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
}

pub struct Runtime<A> {
    links: Arc<Links>,
    stopping: Arc<AtomicBool>,
    nodes: Vec<NodeHandle<A>>,
}

impl<A: Actor + Send + 'static> Runtime<A> {
    /// Bind every listener, then start all actors. Experiment time zero is
    /// the moment the last listener is bound.
    pub fn start(
        specs: Vec<NodeSpec<A>>,
        delays: DelayMatrix,
        schedule: PartitionSchedule,
        seed: u64,
    ) -> io::Result<Self> {
        let mut listeners = Vec::new();
        let mut routes = BTreeMap::new();
        for spec in &specs {
            let listener = match spec.listen {
                Some(addr) => {
                    let l = TcpListener::bind(addr)?;
                    routes.insert(
                        spec.address.clone(),
                        Route {
                            host: spec.host.clone().unwrap_or_else(|| spec.name.clone()),
                            socket: l.local_addr()?,
                        },
                    );
                    Some(l)
                }
                None => None,
            };
            listeners.push(listener);
        }
        let links = Arc::new(Links {
            start: Instant::now(),
            delays,
            schedule,
            routes,
        });
        let stopping = Arc::new(AtomicBool::new(false));
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::new();
        for (spec, listener) in specs.into_iter().zip(listeners) {
            let (tx, rx) = mpsc::channel();
            let actor = Arc::new(Mutex::new(spec.actor));
            let position = spec.host.unwrap_or_else(|| spec.name.clone());
            let mut threads = Vec::new();
            let local = listener.as_ref().map(|l| l.local_addr()).transpose()?;
            if let Some(listener) = listener {
                let (tx, stopping) = (tx.clone(), stopping.clone());
                threads.push(thread::spawn(move || accept_loop(listener, tx, stopping)));
            }
            let node = NodeLoop {
                position,
                links: links.clone(),
                events: tx.clone(),
                rng: ChaCha8Rng::seed_from_u64(seeds.next_u64()),
            };
            let a = actor.clone();
            threads.push(thread::spawn(move || node.run(a, rx)));
            nodes.push(NodeHandle {
                name: spec.name,
                actor,
                events: tx,
                local,
                threads,
            });
        }
        Ok(Self { links, stopping, nodes })
    }

    /// Milliseconds since the runtime started.
    pub fn now_ms(&self) -> u64 {
        self.links.now_ms()
    }

    /// Bound socket of a listening node.
    pub fn local_addr(&self, name: &str) -> Option<SocketAddr> {
        self.nodes.iter().find(|n| n.name == name).and_then(|n| n.local)
    }

    /// Lock a node's actor between two of its inputs.
    pub fn actor(&self, name: &str) -> Option<MutexGuard<'_, A>> {
        let node = self.nodes.iter().find(|n| n.name == name)?;
        Some(node.actor.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    /// Stop every node and hand back the actors.
    pub fn shutdown(self) -> Vec<(String, A)> {
        self.stopping.store(true, Ordering::SeqCst);
        for node in &self.nodes {
            let _ = node.events.send(Event::Stop);
            if let Some(addr) = node.local {
                // wake the accept loop so it sees the flag
                let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
            }
        }
        let mut out = Vec::new();
        for node in self.nodes {
            for t in node.threads {
                let _ = t.join();
            }
            let actor = match Arc::try_unwrap(node.actor) {
                Ok(m) => m.into_inner().unwrap_or_else(|e| e.into_inner()),
                Err(_) => unreachable!("node threads joined"),
            };
            out.push((node.name, actor));
        }
        out
    }
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stopping: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let (events, stopping) = (events.clone(), stopping.clone());
        thread::spawn(move || serve_connection(stream, events, stopping));
    }
}

/// Requests on one connection are handled strictly one after another. A
/// malformed or truncated frame closes the connection.
fn serve_connection(mut stream: TcpStream, events: Sender<Event>, stopping: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    while let Ok(Some(payload)) = read_frame(&mut stream) {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let (tx, rx) = mpsc::channel();
        if events.send(Event::Request { payload, reply: tx }).is_err() {
            break;
        }
        let Ok(reply) = rx.recv() else { break };
        if write_frame(&mut stream, &reply).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

struct NodeLoop {
    position: String,
    links: Arc<Links>,
    events: Sender<Event>,
    rng: ChaCha8Rng,
}

struct Timer {
    due: Instant,
    seq: u64,
    tag: u64,
}

impl PartialEq for Timer {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}
impl Eq for Timer {}
impl PartialOrd for Timer {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timer {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

struct LoopState {
    timers: BinaryHeap<Reverse<Timer>>,
    timer_seq: u64,
    replies: BTreeMap<u64, Sender<Vec<u8>>>,
    next_token: u64,
    next_request: u64,
}

impl NodeLoop {
    fn run<A: Actor>(mut self, actor: Arc<Mutex<A>>, events: Receiver<Event>) {
        let mut st = LoopState {
            timers: BinaryHeap::new(),
            timer_seq: 0,
            replies: BTreeMap::new(),
            next_token: 0,
            next_request: 0,
        };
        {
            let mut a = actor.lock().unwrap_or_else(|e| e.into_inner());
            a.on_start(&mut self.context(&mut st));
        }
        loop {
            let input = match st.timers.peek() {
                Some(Reverse(t)) if t.due <= Instant::now() => {
                    let Reverse(t) = st.timers.pop().expect("peeked");
                    Input::Timer { tag: t.tag }
                }
                next => {
                    let event = match next {
                        Some(Reverse(t)) => {
                            match events.recv_timeout(t.due.saturating_duration_since(Instant::now())) {
                                Ok(e) => e,
                                Err(RecvTimeoutError::Timeout) => continue,
                                Err(RecvTimeoutError::Disconnected) => return,
                            }
                        }
                        None => match events.recv() {
                            Ok(e) => e,
                            Err(_) => return,
                        },
                    };
                    match event {
                        Event::Stop => return,
                        Event::Request { payload, reply } => {
                            st.next_token += 1;
                            st.replies.insert(st.next_token, reply);
                            Input::Request {
                                token: ReplyToken(st.next_token),
                                payload,
                            }
                        }
                        Event::Response { id, payload } => Input::Response { id, payload },
                        Event::Failed { id, error } => Input::Failed { id, error },
                    }
                }
            };
            let mut a = actor.lock().unwrap_or_else(|e| e.into_inner());
            a.handle(&mut self.context(&mut st), input);
        }
    }

    fn context<'a>(&'a mut self, st: &'a mut LoopState) -> LiveContext<'a> {
        LiveContext { node: self, st }
    }
}

struct LiveContext<'a> {
    node: &'a mut NodeLoop,
    st: &'a mut LoopState,
}

impl Context for LiveContext<'_> {
    fn now_ms(&self) -> u64 {
        self.node.links.now_ms()
    }

    fn now_micros(&self) -> u64 {
        self.node.links.start.elapsed().as_micros() as u64
    }

    fn send(&mut self, address: &str, payload: Vec<u8>, timeout_ms: u64) -> RequestId {
        self.st.next_request += 1;
        let id = RequestId(self.st.next_request);
        let links = self.node.links.clone();
        let events = self.node.events.clone();
        let from = self.node.position.clone();
        let address = address.to_string();
        thread::spawn(move || {
            let outcome = deliver(&links, &from, &address, &payload, Duration::from_millis(timeout_ms));
            let event = match outcome {
                Ok(payload) => Event::Response { id, payload },
                Err(error) => Event::Failed { id, error },
            };
            let _ = events.send(event);
        });
        id
    }

    fn reply(&mut self, token: ReplyToken, payload: Vec<u8>) {
        if let Some(tx) = self.st.replies.remove(&token.0) {
            let _ = tx.send(payload);
        }
    }

    fn set_timer(&mut self, after_ms: u64, tag: u64) {
        self.st.timer_seq += 1;
        self.st.timers.push(Reverse(Timer {
            due: Instant::now() + Duration::from_millis(after_ms),
            seq: self.st.timer_seq,
            tag,
        }));
    }

    fn rng(&mut self) -> &mut dyn RngCore {
        &mut self.node.rng
    }
}

fn deliver(
    links: &Links,
    from: &str,
    address: &str,
    payload: &[u8],
    timeout: Duration,
) -> Result<Vec<u8>, TransportError> {
    let deadline = Instant::now() + timeout;
    let time_out = || {
        thread::sleep(deadline.saturating_duration_since(Instant::now()));
        Err(TransportError::Timeout)
    };
    let (socket, to) = match links.routes.get(address) {
        Some(route) => (route.socket, Some(route.host.as_str())),
        None => match address.to_socket_addrs().ok().and_then(|mut a| a.next()) {
            Some(socket) => (socket, None),
            None => return Err(TransportError::Unreachable),
        },
    };
    if let Some(to) = to {
        if !links.reachable(from, to) {
            return time_out();
        }
        thread::sleep(links.delay(from, to));
    }
    let remaining = deadline.saturating_duration_since(Instant::now());
    if remaining.is_zero() {
        return Err(TransportError::Timeout);
    }
    let reply = match call(socket, payload, remaining) {
        Ok(reply) => reply,
        Err(e)
            if matches!(
                e.kind(),
                io::ErrorKind::ConnectionRefused | io::ErrorKind::AddrNotAvailable
            ) =>
        {
            return Err(TransportError::Unreachable)
        }
        Err(_) => return time_out(),
    };
    if let Some(to) = to {
        thread::sleep(links.delay(to, from));
        if !links.reachable(from, to) {
            return time_out();
        }
    }
    if Instant::now() > deadline {
        return Err(TransportError::Timeout);
    }
    Ok(reply)
}
