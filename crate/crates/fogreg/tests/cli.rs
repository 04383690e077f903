use std::fs;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use fogreg::csvio::{read_convergence, read_latency};
use fogreg::transport::call;
use fogreg::{scenarios, snapshot};
use fogreg_core::bench::builtin;
use fogreg_core::proto::{ClientRequest, ClientResult, Request, Response};
use fogreg_core::KeygroupConfig;

fn fogreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogreg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn run(scenario: &str, backend: &str, seed: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--scenario",
        scenario,
        "--backend",
        backend,
        "--seed",
        seed,
        "--out",
    ];
    args.push(out.to_str().unwrap());
    args.extend_from_slice(extra);
    fogreg(&args)
}

fn free_port() -> SocketAddr {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap()
}

#[test]
fn run_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("delay10", "quorum", "3", dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let latency = fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    assert!(latency.starts_with("t_ms,op,latency_ms,status\n"));
    let convergence = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(convergence.starts_with("t_ms,replica_id,keygroup_count\n"));
    let samples = read_latency(latency.as_bytes()).unwrap();
    assert_eq!(samples.len(), 480);
    assert!(samples.iter().all(|s| s.latency_ms == 20.0));
    assert_eq!(read_convergence(convergence.as_bytes()).unwrap().len(), 241 * 3);
}

#[test]
fn same_seed_same_bytes() {
    for backend in ["crdt", "quorum"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(code(&run("partition", backend, "11", a.path(), &[])), 0);
        assert_eq!(code(&run("partition", backend, "11", b.path(), &[])), 0);
        for file in ["latency.csv", "convergence.csv"] {
            let x = fs::read(a.path().join(file)).unwrap();
            let y = fs::read(b.path().join(file)).unwrap();
            assert!(x == y, "{backend} {file} differs");
        }
    }
}

#[test]
fn paper_zeros_rewrites_failed_latencies() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run("partition", "quorum", "1", dir.path(), &["--paper-zeros"])),
        0
    );
    let samples = read_latency(fs::File::open(dir.path().join("latency.csv")).unwrap()).unwrap();
    let failed: Vec<_> = samples.iter().filter(|s| !s.status.is_ok()).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|s| s.latency_ms == 0.0));
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let printed = fogreg(&["scenario", "delay10"]);
    assert_eq!(code(&printed), 0);
    assert_eq!(printed.stdout, scenarios::render(&builtin("delay10").unwrap()));
    let file = dir.path().join("mine.json");
    fs::write(&file, &printed.stdout).unwrap();
    let out = run(file.to_str().unwrap(), "crdt", "5", &dir.path().join("out"), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_scenarios_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    assert_eq!(code(&run("no-such-scenario", "crdt", "1", &out_dir, &[])), 2);

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{not json").unwrap();
    assert_eq!(code(&run(garbage.to_str().unwrap(), "crdt", "1", &out_dir, &[])), 2);

    // a heal scheduled after the workload ends
    let mut s = builtin("partition").unwrap();
    s.workload.duration_ms = 60_000;
    let late = dir.path().join("late.json");
    fs::write(&late, scenarios::render(&s)).unwrap();
    assert_eq!(code(&run(late.to_str().unwrap(), "quorum", "1", &out_dir, &[])), 2);

    // quorum needs three members
    let mut s = builtin("baseline").unwrap();
    s.topology.nodes.truncate(2);
    let small = dir.path().join("small.json");
    fs::write(&small, scenarios::render(&s)).unwrap();
    assert_eq!(code(&run(small.to_str().unwrap(), "quorum", "1", &out_dir, &[])), 2);
    assert!(!out_dir.exists());
}

#[test]
fn summarize_reports_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("partition", "quorum", "1", dir.path(), &[])), 0);
    let latency = dir.path().join("latency.csv");
    let out = fogreg(&["summarize", "--in", latency.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[..3], ["count 480", "errors 160", "p50_ms 0"]);
    assert_eq!(lines[5], "bucket_start_ms count errors p50_ms");
    assert_eq!(lines.len(), 6 + 12);
    assert_eq!(lines[6 + 4], "40000 40 20 0");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t_ms,op,latency,status\n").unwrap();
    assert_eq!(code(&fogreg(&["summarize", "--in", bad.to_str().unwrap()])), 2);
    fs::write(&bad, "t_ms,op,latency_ms,status\n1,CreateKeygroup,abc,Ok\n").unwrap();
    assert_eq!(code(&fogreg(&["summarize", "--in", bad.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&fogreg(&["summarize", "--in", missing.to_str().unwrap()])), 1);
}

#[test]
fn real_time_run_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = builtin("baseline").unwrap();
    s.workload.duration_ms = 1_500;
    s.gossip.period_ms = 200;
    s.gossip.rpc_timeout_ms = 100;
    let file = dir.path().join("short.json");
    fs::write(&file, scenarios::render(&s)).unwrap();
    let out = run(
        file.to_str().unwrap(),
        "crdt",
        "2",
        &dir.path().join("out"),
        &["--time", "real"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let samples = read_latency(fs::File::open(dir.path().join("out/latency.csv")).unwrap()).unwrap();
    assert_eq!(samples.len(), 6);
    assert!(samples.iter().all(|s| s.status.is_ok()));
}

#[test]
fn unreachable_seed_is_a_boot_failure() {
    let dead = free_port();
    let listen = free_port();
    let started = Instant::now();
    let out = fogreg(&[
        "serve",
        "--node-id",
        "n9",
        "--listen",
        &listen.to_string(),
        "--join",
        &dead.to_string(),
        "--run-for-ms",
        "30000",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(started.elapsed() < Duration::from_secs(20));
}

#[test]
fn busy_port_is_a_boot_failure() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = fogreg(&["serve", "--node-id", "n1", "--listen", &addr, "--run-for-ms", "100"]);
    assert_eq!(code(&out), 3);
}

fn wait_for(addr: SocketAddr) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::net::TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "server never came up");
        thread::sleep(Duration::from_millis(20));
    }
}

fn count(addr: SocketAddr) -> u64 {
    let reply = call(
        addr,
        &Request::Client(ClientRequest::KeygroupCount {}).encode("c"),
        Duration::from_secs(5),
    )
    .unwrap();
    match Response::decode(&reply).unwrap().into_client().unwrap() {
        Ok(ClientResult::Count { count }) => count,
        other => panic!("{other:?}"),
    }
}

#[test]
fn snapshot_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("n1.state");
    let snap_arg = snap.to_str().unwrap().to_string();
    let addr = free_port();
    let serve = |run_for: &str| {
        Command::new(env!("CARGO_BIN_EXE_fogreg"))
            .args([
                "serve",
                "--node-id",
                "n1",
                "--listen",
                &addr.to_string(),
                "--snapshot",
                &snap_arg,
            ])
            .args(["--snapshot-every-ms", "100", "--run-for-ms", run_for])
            .stderr(Stdio::null())
            .spawn()
            .unwrap()
    };

    let mut first = serve("1500");
    wait_for(addr);
    let create = Request::Client(ClientRequest::CreateKeygroup {
        keygroup_id: "kg-persist".into(),
        config: KeygroupConfig::default(),
        creator: "alice".into(),
    });
    let reply = call(addr, &create.encode("1"), Duration::from_secs(5)).unwrap();
    assert!(Response::decode(&reply).unwrap().outcome.is_ok());
    assert!(first.wait().unwrap().success());

    let saved = snapshot::load(&snap).unwrap().expect("snapshot written");
    assert_eq!(saved.keygroup_count(), 1);

    let mut second = serve("800");
    wait_for(addr);
    assert_eq!(count(addr), 1);
    assert!(second.wait().unwrap().success());

    // a snapshot taken by another replica is refused
    let other = fogreg(&[
        "serve",
        "--node-id",
        "n2",
        "--listen",
        &free_port().to_string(),
        "--snapshot",
        &snap_arg,
    ]);
    assert_eq!(code(&other), 3);

    fs::write(&snap, b"\x00\x00\x00\x05{oops").unwrap();
    let corrupt = fogreg(&[
        "serve",
        "--node-id",
        "n1",
        "--listen",
        &free_port().to_string(),
        "--snapshot",
        &snap_arg,
    ]);
    assert_eq!(code(&corrupt), 3);
}
