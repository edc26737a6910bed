//! The TCP service end to end: a full operator session, protocol errors,
//! roles and reattaching.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use common::schema::Validator;
use contactseg::session::journal::{load_logged_cloud, read_session_log, replay_session_log};
use contactseg::session::server::{serve, ServerConfig, ServerHandle};
use contactseg::synth::{generate_scene, simulate_demo};
use serde_json::{json, Value};

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    seq: u64,
    last_in: Option<u64>,
    schema: Validator,
    /// Messages received while waiting for replies, oldest first.
    seen: Vec<Value>,
}

impl Client {
    fn connect(server: &ServerHandle) -> Self {
        let stream = TcpStream::connect(server.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
        Self {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: stream,
            seq: 0,
            last_in: None,
            schema: Validator::load("protocol.schema.json"),
            seen: Vec::new(),
        }
    }

    fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn receive(&mut self) -> Value {
        let mut line = String::new();
        assert!(self.reader.read_line(&mut line).unwrap() > 0, "server closed the connection");
        let v: Value = serde_json::from_str(&line).unwrap();
        let errors = self.schema.errors(&v);
        assert!(errors.is_empty(), "{line}\n{errors:#?}");
        let seq = v["seq"].as_u64().unwrap();
        assert!(self.last_in.is_none_or(|l| seq > l), "server seq went from {:?} to {seq}", self.last_in);
        self.last_in = Some(seq);
        self.seen.push(v.clone());
        v
    }

    /// Reads until the ack or error answering `seq`; returns it and every
    /// non-snapshot message that came before it.
    fn reply_to(&mut self, seq: u64) -> (Value, Vec<Value>) {
        let mut before = Vec::new();
        loop {
            let v = self.receive();
            let kind = v["kind"].as_str().unwrap();
            let answered = match kind {
                "ack" => v["payload"]["seq"].as_u64(),
                "error" => v["payload"]["offending_seq"].as_u64(),
                _ => None,
            };
            if answered == Some(seq) {
                return (v, before);
            }
            if kind != "snapshot" {
                before.push(v);
            }
        }
    }

    fn request(&mut self, kind: &str, payload: Value) -> (Value, Vec<Value>) {
        self.seq += 1;
        let seq = self.seq;
        self.send_raw(&json!({"kind": kind, "seq": seq, "payload": payload}).to_string());
        self.reply_to(seq)
    }

    fn ack(&mut self, kind: &str, payload: Value) -> (Value, Vec<Value>) {
        let (v, before) = self.request(kind, payload);
        assert_eq!(v["kind"], "ack", "{kind}: {v}");
        (v, before)
    }

    fn error(&mut self, kind: &str, payload: Value) -> String {
        let (v, _) = self.request(kind, payload);
        assert_eq!(v["kind"], "error", "{kind}: {v}");
        v["payload"]["code"].as_str().unwrap().to_string()
    }
}

fn start(log_dir: Option<std::path::PathBuf>) -> ServerHandle {
    serve(
        "127.0.0.1:0",
        ServerConfig {
            log_dir,
            snapshot_interval: Duration::from_millis(20),
        },
    )
    .unwrap()
}

/// Plane cloud written to disk plus its twelve-point contact set.
fn plane_inputs(dir: &std::path::Path) -> (String, Vec<[f64; 3]>) {
    let scene = generate_scene(&common::plane_spec(4)).unwrap();
    let demo = simulate_demo(&scene.truth, &common::plane_demo(4)).unwrap();
    let path = dir.join("cloud.ply");
    contactseg::ply::save_ply(&scene.cloud, &path).unwrap();
    // Spread over all passes; a single pass is collinear.
    let all = demo.last().unwrap().positions();
    let contacts = (0..12).map(|k| all[k * all.len() / 12]).map(|p| [p.x, p.y, p.z]).collect();
    (path.display().to_string(), contacts)
}

#[test]
fn operator_session_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    std::fs::create_dir(&logs).unwrap();
    let server = start(Some(logs.clone()));
    let (cloud, contacts) = plane_inputs(dir.path());
    let mut c = Client::connect(&server);

    let (ack, _) = c.ack("create_session", json!({"config": {"rng_seed": 5}}));
    let session = ack["payload"]["session"].as_str().unwrap().to_string();
    assert_eq!(ack["payload"]["phase"], "loading");
    assert_eq!(ack["payload"]["role"], "operator");

    // Planning before segmentation is a phase error.
    assert_eq!(c.error("plan", json!({})), "phase");

    let (ack, _) = c.ack("load_cloud", json!({"path": cloud}));
    assert_eq!(ack["payload"]["phase"], "segmenting");
    assert!(ack["payload"]["points"].as_u64().unwrap() > 3000);

    let (ack, _) = c.ack("add_contact_points", json!({"positions": contacts[..6]}));
    assert_eq!(ack["payload"]["revision"], 1);
    let (ack, _) = c.ack("add_contact_points", json!({"positions": contacts[6..], "source": "demonstrated"}));
    assert_eq!((ack["payload"]["revision"].as_u64(), ack["payload"]["contacts"].as_u64()), (Some(2), Some(12)));

    // Streamed snapshots arrive while the engine runs.
    let t0 = Instant::now();
    while !c.seen.iter().any(|m| m["kind"] == "snapshot") {
        assert!(t0.elapsed() < Duration::from_secs(30), "no snapshot streamed");
        c.ack("ping", json!({}));
        std::thread::sleep(Duration::from_millis(30));
    }

    let (ack, before) = c.ack("stop_segmentation", json!({}));
    assert_eq!(ack["payload"]["phase"], "editing");
    assert_eq!(ack["payload"]["kind"], "plane");
    let patch = before.iter().find(|m| m["kind"] == "patch_update").expect("patch after stop");
    let cells = patch["payload"]["occupied_cells"].as_u64().unwrap();
    assert!(cells > 100);

    let (ack, before) = c.ack("crop", json!({"polygon": [[-1, -1], [1, -1], [-1, 1]]}));
    assert_eq!(ack["payload"]["status"]["status"], "applied");
    let cropped = &before[0]["payload"];
    assert_eq!(cropped["status"]["status"], "applied");
    let cleared = cropped["status"]["cleared"].as_u64().unwrap();
    assert_eq!(cropped["occupied_cells"].as_u64().unwrap() + cleared, cells);

    let (ack, before) = c.ack("plan", json!({"direction_mode": "serpentine"}));
    assert_eq!(ack["payload"]["phase"], "planning");
    let traj = before.iter().find(|m| m["kind"] == "trajectory").expect("trajectory before ack");
    assert_eq!(traj["payload"]["poses"].as_array().unwrap().len() as u64, ack["payload"]["poses"].as_u64().unwrap());
    assert_eq!(traj["payload"]["header"]["patch_hash"], cropped["sha256"]);

    let (out, log) = (dir.path().join("t.json"), dir.path().join("s.jsonl"));
    let (ack, _) = c.ack("export", json!({"path": out, "log": log}));
    assert_eq!(ack["payload"]["phase"], "done");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, traj["payload"]);

    // Both the exported log and the service's own log replay exactly.
    for path in [log, logs.join(format!("{session}.jsonl"))] {
        let parsed = read_session_log(&path).unwrap();
        let cloud = load_logged_cloud(&parsed).unwrap();
        let replayed = replay_session_log(&parsed, &cloud).unwrap();
        assert_eq!(replayed.snapshots, parsed.snapshots.len());
        assert_eq!(replayed.last.as_deref(), parsed.snapshots.last().map(|s| &**s));
        let t = replayed.trajectory.expect("planned");
        assert_eq!(contactseg::coverage::trajectory_to_json(&t), std::fs::read_to_string(&out).unwrap());
    }
    drop(c);
    server.shutdown();
}

#[test]
fn protocol_errors() {
    let server = start(None);
    let mut c = Client::connect(&server);

    c.send_raw("this is not json");
    let v = c.receive();
    assert_eq!((v["kind"].as_str(), v["payload"]["code"].as_str()), (Some("error"), Some("malformed")));
    assert!(v["payload"]["offending_seq"].is_null());

    assert_eq!(c.error("add_contact_points", json!({"positions": [[0, 0, 0]]})), "no_session");
    assert_eq!(c.error("dance", json!({})), "unknown_kind");
    c.ack("create_session", json!({}));
    assert_eq!(c.error("add_contact_points", json!({"positions": "none"})), "bad_payload");
    assert_eq!(c.error("load_cloud", json!({"points": [[0, 0, f64::MAX]], "extra": 1})), "bad_payload");
    assert_eq!(c.error("create_session", json!({"config": {"tau": 0.0}})), "segmentation");
    assert_eq!(c.error("attach_session", json!({"session": "missing"})), "not_found");
    assert_eq!(c.error("stop_segmentation", json!({})), "phase");
    assert_eq!(c.error("load_cloud", json!({"path": "/nonexistent/cloud.ply"})), "cloud");

    // A repeated seq is rejected and not executed.
    let seq = c.seq;
    c.send_raw(&json!({"kind": "load_cloud", "seq": seq, "payload": {"points": [[0, 0, 0], [1, 0, 0]]}}).to_string());
    let (v, _) = c.reply_to(seq);
    assert_eq!(v["payload"]["code"], "seq");
    let (ack, _) = c.ack("ping", json!({}));
    assert_eq!(ack["payload"]["phase"], Value::Null);
    let (ack, _) = c.ack("configure", json!({"surface": {"cell": 0.004}}));
    assert_eq!(ack["payload"]["phase"], "loading");
    drop(c);
    server.shutdown();
}

#[test]
fn observers_and_reattach() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(None);
    let (cloud, contacts) = plane_inputs(dir.path());
    let mut op = Client::connect(&server);
    let (ack, _) = op.ack("create_session", json!({}));
    let session = ack["payload"]["session"].as_str().unwrap().to_string();
    op.ack("load_cloud", json!({"path": cloud}));
    op.ack("add_contact_points", json!({"positions": contacts}));

    let mut obs = Client::connect(&server);
    assert_eq!(obs.error("attach_session", json!({"session": session, "role": "operator"})), "role");
    let (ack, _) = obs.ack("attach_session", json!({"session": session, "role": "observer"}));
    assert_eq!(ack["payload"]["role"], "observer");
    assert_eq!(obs.error("undo_contact_batch", json!({})), "role");

    // The observer receives streamed snapshots too.
    let t0 = Instant::now();
    while !obs.seen.iter().any(|m| m["kind"] == "snapshot") {
        assert!(t0.elapsed() < Duration::from_secs(30), "observer got no snapshot");
        obs.ack("ping", json!({}));
        std::thread::sleep(Duration::from_millis(30));
    }

    op.ack("stop_segmentation", json!({"after_steps": 50}));
    op.ack("plan", json!({}));
    drop(op);

    // The operator role is free again once its connection closes.
    let t0 = Instant::now();
    let mut again = Client::connect(&server);
    loop {
        let (v, before) = again.request("attach_session", json!({"session": session}));
        if v["kind"] == "ack" {
            assert_eq!(v["payload"]["phase"], "planning");
            let kinds: Vec<&str> = before.iter().map(|m| m["kind"].as_str().unwrap()).collect();
            assert_eq!(kinds, ["patch_update", "trajectory"]);
            break;
        }
        assert!(t0.elapsed() < Duration::from_secs(10), "operator role never released");
        std::thread::sleep(Duration::from_millis(20));
    }
    let (ack, _) = again.ack("undo_crop", json!({}));
    assert_eq!(ack["payload"]["undone"], false);
    assert_eq!(server.session_count(), 1);
    drop((again, obs));
    server.shutdown();
}
