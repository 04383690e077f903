use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use fogreg::transport::{call, read_frame, write_frame, NodeSpec, Runtime};
use fogreg_core::bench::{builtin, Backend, SampleStatus, TimeMode};
use fogreg_core::codec::{encode_envelope, encode_frame};
use fogreg_core::peers::GossipConfig;
use fogreg_core::proto::{ClientRequest, ClientResult, ErrorKind, Exchange, Request, Response};
use fogreg_core::replica::CrdtReplica;
use fogreg_core::sim::{DelayMatrix, PartitionAction, PartitionEvent, PartitionSchedule};
use fogreg_core::{KeygroupConfig, RegistryState};

const T: Duration = Duration::from_secs(5);

fn fast_gossip() -> GossipConfig {
    GossipConfig {
        period_ms: 100,
        rpc_timeout_ms: 80,
        ..GossipConfig::default()
    }
}

fn one_replica() -> (Runtime<CrdtReplica>, SocketAddr) {
    let rt = Runtime::start(
        vec![NodeSpec {
            name: "n1".into(),
            address: "n1:7000".into(),
            host: None,
            listen: Some("127.0.0.1:0".parse().unwrap()),
            actor: CrdtReplica::new("n1", "n1:7000", None, fast_gossip()),
        }],
        DelayMatrix::uniform(0),
        PartitionSchedule::default(),
        1,
    )
    .unwrap();
    let addr = rt.local_addr("n1").unwrap();
    (rt, addr)
}

fn create(kg: &str) -> ClientRequest {
    ClientRequest::CreateKeygroup {
        keygroup_id: kg.into(),
        config: KeygroupConfig::default(),
        creator: "alice".into(),
    }
}

fn client_call(addr: SocketAddr, id: &str, req: ClientRequest) -> Response {
    let reply = call(addr, &Request::Client(req).encode(id), T).unwrap();
    Response::decode(&reply).unwrap()
}

fn exchange(stream: &mut TcpStream, record: &[u8]) -> Response {
    write_frame(stream, record).unwrap();
    Response::decode(&read_frame(stream).unwrap().expect("a response")).unwrap()
}

#[test]
fn create_then_duplicate() {
    let (rt, addr) = one_replica();
    let first = client_call(addr, "1", create("kg1"));
    assert_eq!(first.request_id, "1");
    assert_eq!(first.into_client().unwrap(), Ok(ClientResult::Done));
    let second = client_call(addr, "2", create("kg1"));
    assert_eq!(second.msg_type, "CreateKeygroup");
    assert_eq!(second.outcome.unwrap_err().kind, ErrorKind::KeygroupExists);
    let count = client_call(addr, "3", ClientRequest::KeygroupCount {});
    assert_eq!(count.into_client().unwrap(), Ok(ClientResult::Count { count: 1 }));
    rt.shutdown();
}

#[test]
fn unknown_msg_type_keeps_connection_open() {
    let (rt, addr) = one_replica();
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(T)).unwrap();

    let err = exchange(&mut stream, &encode_envelope("Frobnicate", "x1", b"{}"));
    assert_eq!((err.msg_type.as_str(), err.request_id.as_str()), ("Frobnicate", "x1"));
    assert_eq!(err.outcome.unwrap_err().kind, ErrorKind::BadRequest);

    let garbage = exchange(&mut stream, b"{\"not\":\"an envelope\"}");
    assert_eq!(garbage.outcome.unwrap_err().kind, ErrorKind::BadRequest);

    let bad_body = exchange(
        &mut stream,
        &encode_envelope("CreateKeygroup", "x2", br#"{"keygroup_id":7}"#),
    );
    assert_eq!(bad_body.request_id, "x2");
    assert_eq!(bad_body.outcome.unwrap_err().kind, ErrorKind::BadRequest);

    let ok = exchange(&mut stream, &Request::Client(create("kg1")).encode("x3"));
    assert_eq!(ok.request_id, "x3");
    assert!(ok.outcome.is_ok());
    rt.shutdown();
}

#[test]
fn truncated_frame_closes_connection_without_effect() {
    let (rt, addr) = one_replica();
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(T)).unwrap();
    let frame = encode_frame(&Request::Client(create("kg1")).encode("t1"));
    stream.write_all(&frame[..frame.len() - 3]).unwrap();
    stream.shutdown(std::net::Shutdown::Write).unwrap();
    let mut rest = Vec::new();
    assert_eq!(stream.read_to_end(&mut rest).unwrap(), 0, "closed without a response");

    let count = client_call(addr, "c", ClientRequest::KeygroupCount {});
    assert_eq!(count.into_client().unwrap(), Ok(ClientResult::Count { count: 0 }));
    rt.shutdown();
}

#[test]
fn pipelined_requests_are_answered_in_order() {
    let (rt, addr) = one_replica();
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(T)).unwrap();
    let mut batch = Vec::new();
    for i in 0..20 {
        batch.extend(encode_frame(
            &Request::Client(create(&format!("kg{i}"))).encode(&format!("p{i}")),
        ));
    }
    // the same id twice: the second must see the first's effect
    batch.extend(encode_frame(&Request::Client(create("kg0")).encode("dup")));
    stream.write_all(&batch).unwrap();
    for i in 0..20 {
        let r = Response::decode(&read_frame(&mut stream).unwrap().unwrap()).unwrap();
        assert_eq!(r.request_id, format!("p{i}"));
        assert!(r.outcome.is_ok());
    }
    let dup = Response::decode(&read_frame(&mut stream).unwrap().unwrap()).unwrap();
    assert_eq!(dup.outcome.unwrap_err().kind, ErrorKind::KeygroupExists);
    rt.shutdown();
}

#[test]
fn concurrent_connections_all_get_answers() {
    let (rt, addr) = one_replica();
    let workers: Vec<_> = (0..8)
        .map(|w| {
            thread::spawn(move || {
                for i in 0..10 {
                    let r = client_call(addr, &format!("{w}-{i}"), create(&format!("kg-{w}-{i}")));
                    assert_eq!(r.request_id, format!("{w}-{i}"));
                    assert!(r.outcome.is_ok());
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(rt.actor("n1").unwrap().state().keygroup_count(), 80);
    rt.shutdown();
}

#[test]
fn state_exchange_returns_pre_merge_state() {
    let (rt, addr) = one_replica();
    client_call(addr, "1", create("kg-server"));
    let before = rt.actor("n1").unwrap().state().sets.clone();

    let mut mine = RegistryState::new("far");
    mine.register_node(1, "far", "127.0.0.1:1").unwrap();
    mine.create_keygroup(2, "kg-far", &KeygroupConfig::default(), "bob")
        .unwrap();
    let req = Request::StateExchange(Exchange {
        address: "127.0.0.1:1".into(),
        from: "far".into(),
        state: mine.sets.clone(),
    });
    let reply = call(addr, &req.encode("g"), T).unwrap();
    let theirs: Exchange = Response::decode_as(&reply).unwrap().unwrap();
    assert_eq!(theirs.from, "n1");
    assert_eq!(theirs.state, before);

    mine.merge_sets(&theirs.state);
    let server = rt.actor("n1").unwrap().state().clone();
    assert_eq!(server.state_hash(), mine.state_hash());
    assert_eq!(server.keygroup_count(), 2);
    rt.shutdown();
}

#[test]
fn replicas_join_and_converge_over_tcp() {
    let specs = (1..=3)
        .map(|i| {
            let name = format!("n{i}");
            let seed = (i > 1).then(|| format!("n{}:7000", i - 1));
            NodeSpec {
                actor: CrdtReplica::new(&name, &format!("{name}:7000"), seed.as_deref(), fast_gossip()),
                address: format!("{name}:7000"),
                name,
                host: None,
                listen: Some("127.0.0.1:0".parse().unwrap()),
            }
        })
        .collect();
    let rt = Runtime::start(specs, DelayMatrix::uniform(2), PartitionSchedule::default(), 9).unwrap();
    let n3 = rt.local_addr("n3").unwrap();
    client_call(n3, "1", create("kg-from-n3"));
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let hashes: Vec<_> = ["n1", "n2", "n3"]
            .iter()
            .map(|n| rt.actor(n).unwrap().state().state_hash())
            .collect();
        let nodes = rt.actor("n1").unwrap().state().nodes().len();
        if hashes.iter().all(|h| *h == hashes[0]) && nodes == 3 {
            break;
        }
        assert!(Instant::now() < deadline, "no convergence");
        thread::sleep(Duration::from_millis(50));
    }
    assert_eq!(rt.actor("n1").unwrap().state().keygroup_count(), 1);
    rt.shutdown();
}

fn short_real(backend: Backend) -> fogreg_core::bench::Scenario {
    let mut s = builtin("baseline").unwrap();
    s.backend = backend;
    s.time_mode = TimeMode::Real;
    s.workload.duration_ms = 2_000;
    s.workload.interarrival_ms = 50;
    s.gossip = fast_gossip();
    s.sample_every_ms = 250;
    s
}

#[test]
fn real_time_crdt_run() {
    let out = fogreg::runner::run(&short_real(Backend::Crdt)).unwrap();
    assert_eq!(out.latency.len(), 40);
    assert!(out.latency.iter().all(|s| s.status == SampleStatus::Ok));
    assert_eq!(out.convergence.len(), 9 * 3);
    let last = &out.convergence[out.convergence.len() - 3..];
    assert!(last.iter().all(|c| c.keygroup_count > 0));
}

#[test]
fn real_time_quorum_pays_the_link_delay() {
    let mut s = short_real(Backend::Quorum);
    s.topology.delays = DelayMatrix::uniform(15);
    let out = fogreg::runner::run(&s).unwrap();
    assert_eq!(out.latency.len(), 40);
    for sample in &out.latency {
        assert_eq!(sample.status, SampleStatus::Ok);
        assert!(sample.latency_ms >= 30.0, "{}", sample.latency_ms);
    }
}

#[test]
fn real_time_partition_blocks_quorum_not_crdt() {
    let schedule = PartitionSchedule::new(vec![
        PartitionEvent {
            at_ms: 600,
            action: PartitionAction::Partition {
                groups: vec![vec!["m1".into()], vec!["m2".into(), "m3".into()]],
            },
        },
        PartitionEvent {
            at_ms: 1_400,
            action: PartitionAction::Heal,
        },
    ]);
    let mut q = short_real(Backend::Quorum);
    q.partition_schedule = schedule.clone();
    q.quorum.rpc_timeout_ms = 100;
    let out = fogreg::runner::run(&q).unwrap();
    // a margin of one RPC timeout either side absorbs scheduling jitter
    for s in &out.latency {
        if (700..1_300).contains(&s.t_ms) {
            assert!(!s.status.is_ok(), "quorum request at {} succeeded", s.t_ms);
        }
        if s.t_ms < 450 {
            assert!(s.status.is_ok(), "quorum request at {} failed", s.t_ms);
        }
    }

    let mut c = short_real(Backend::Crdt);
    c.partition_schedule = schedule;
    let out = fogreg::runner::run(&c).unwrap();
    assert!(out.latency.iter().all(|s| s.status.is_ok()));
}
