//! TCP host for sessions. Framing is newline-delimited JSON; each connection
//! gets a reader (this thread) and a writer that also forwards the latest
//! snapshot of the attached session at a bounded rate.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::json;

use super::journal::persist_session;
use super::protocol::{self, parse_line, CloudInput, Outgoing, ProtocolError, Request, Role};
use super::{Progress, Session, SessionError};
use crate::cloud::PointCloud;
use crate::ply::parse_ply;
use crate::Vec3;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// When set, each session's log is rewritten here after every stage.
    pub log_dir: Option<PathBuf>,
    /// Minimum time between two snapshots sent to one connection.
    pub snapshot_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            log_dir: None,
            snapshot_interval: Duration::from_millis(100),
        }
    }
}

struct Hosted {
    session: Mutex<Session>,
    progress: Arc<Progress>,
    operator: Mutex<Option<u64>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Host {
    sessions: Mutex<HashMap<String, Arc<Hosted>>>,
    config: ServerConfig,
    next_connection: AtomicU64,
}

impl Host {
    fn persist(&self, session: &Session) {
        if let Some(dir) = &self.config.log_dir {
            let path = dir.join(format!("{}.jsonl", session.id()));
            if let Err(e) = persist_session(session, &path) {
                log::error!("could not write {}: {e}", path.display());
            }
        }
    }
}

/// A running server.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    host: Arc<Host>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_count(&self) -> usize {
        lock(&self.host.sessions).len()
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting connections. Open connections run until their
    /// clients disconnect.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Binds and starts accepting connections on a background thread.
pub fn serve(addr: impl ToSocketAddrs, config: ServerConfig) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let host = Arc::new(Host {
        sessions: Mutex::new(HashMap::new()),
        config,
        next_connection: AtomicU64::new(1),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let (host, stop) = (host.clone(), stop.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let host = host.clone();
                        let id = host.next_connection.fetch_add(1, Ordering::SeqCst);
                        std::thread::spawn(move || Connection::new(host, id).run(s));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })
    };
    log::info!("listening on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        host,
    })
}

type Attached = Arc<Mutex<Option<Arc<Progress>>>>;

fn writer_loop(
    mut stream: TcpStream,
    rx: std::sync::mpsc::Receiver<Outgoing>,
    attached: Attached,
    interval: Duration,
) {
    let mut seq = 0u64;
    let mut send = |stream: &mut TcpStream, msg: &Outgoing| {
        seq += 1;
        stream.write_all(msg.to_line(seq).as_bytes())
    };
    let mut watched: Option<(*const Progress, u64)> = None;
    let mut last_sent: Option<Instant> = None;
    loop {
        match rx.recv_timeout(Duration::from_millis(10)) {
            Ok(msg) => {
                if send(&mut stream, &msg).is_err() {
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
        let Some(progress) = lock(&attached).clone() else { continue };
        if last_sent.is_some_and(|t| t.elapsed() < interval) {
            continue;
        }
        let (version, latest) = progress.latest();
        let ptr = Arc::as_ptr(&progress);
        if watched == Some((ptr, version)) {
            continue;
        }
        if let Some(snap) = latest {
            if send(&mut stream, &protocol::snapshot(&snap)).is_err() {
                return;
            }
            last_sent = Some(Instant::now());
        }
        watched = Some((ptr, version));
    }
}

struct Connection {
    host: Arc<Host>,
    id: u64,
    current: Option<(Arc<Hosted>, Role)>,
    attached: Attached,
}

fn to_protocol(e: SessionError, seq: u64) -> ProtocolError {
    ProtocolError::new(e.code(), e.to_string(), Some(seq))
}

fn positions(list: &[[f64; 3]]) -> Vec<Vec3> {
    list.iter().copied().map(Vec3::from).collect()
}

impl Connection {
    fn new(host: Arc<Host>, id: u64) -> Self {
        Self {
            host,
            id,
            current: None,
            attached: Arc::new(Mutex::new(None)),
        }
    }

    fn run(mut self, stream: TcpStream) {
        let Ok(write_half) = stream.try_clone() else { return };
        let (tx, rx) = channel();
        let writer = {
            let attached = self.attached.clone();
            let interval = self.host.config.snapshot_interval;
            std::thread::spawn(move || writer_loop(write_half, rx, attached, interval))
        };
        let mut last_seq: Option<u64> = None;
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_line(&line);
            let seq = match &parsed {
                Ok((seq, _)) => Some(*seq),
                Err(e) if e.code != "malformed" => e.offending_seq,
                Err(_) => None,
            };
            let replies = match (seq, parsed) {
                (Some(seq), _) if last_seq.is_some_and(|l| seq <= l) => {
                    vec![protocol::error(&ProtocolError::new(
                        "seq",
                        format!("seq {seq} does not exceed {}", last_seq.unwrap_or(0)),
                        Some(seq),
                    ))]
                }
                (_, Err(e)) => {
                    last_seq = seq.or(last_seq);
                    vec![protocol::error(&e)]
                }
                (_, Ok((seq, request))) => {
                    last_seq = Some(seq);
                    match request {
                        None => vec![protocol::ack(seq, None, None, json!({}))],
                        Some(r) => self.dispatch(seq, r).unwrap_or_else(|e| vec![protocol::error(&e)]),
                    }
                }
            };
            for r in replies {
                if tx.send(r).is_err() {
                    break;
                }
            }
        }
        self.release();
        drop(tx);
        let _ = writer.join();
    }

    fn release(&mut self) {
        if let Some((hosted, Role::Operator)) = self.current.take() {
            let mut op = lock(&hosted.operator);
            if *op == Some(self.id) {
                *op = None;
            }
        }
    }

    fn attach(&mut self, hosted: Arc<Hosted>, role: Role) {
        self.release();
        *lock(&self.attached) = Some(hosted.progress.clone());
        self.current = Some((hosted, role));
    }

    /// Current state of a session, sent on attach so the client can rebuild it.
    fn state_messages(session: &Session) -> Vec<Outgoing> {
        let mut out = Vec::new();
        if let Some(p) = session.patch() {
            out.push(protocol::patch_update(p, None));
        }
        if let Some(t) = session.trajectory() {
            out.push(protocol::trajectory(t));
        }
        out
    }

    fn dispatch(&mut self, seq: u64, request: Request) -> Result<Vec<Outgoing>, ProtocolError> {
        match request {
            Request::CreateSession { config, surface } => {
                let mut session = Session::new();
                session.configure(config, surface).map_err(|e| to_protocol(e, seq))?;
                let id = session.id().to_string();
                let phase = session.phase();
                let hosted = Arc::new(Hosted {
                    progress: session.progress(),
                    session: Mutex::new(session),
                    operator: Mutex::new(Some(self.id)),
                });
                lock(&self.host.sessions).insert(id.clone(), hosted.clone());
                self.attach(hosted, Role::Operator);
                return Ok(vec![protocol::ack(seq, Some(&id), Some(phase), json!({"role": Role::Operator}))]);
            }
            Request::AttachSession { session, role } => {
                let hosted = lock(&self.host.sessions)
                    .get(&session)
                    .cloned()
                    .ok_or_else(|| ProtocolError::new("not_found", format!("no session {session}"), Some(seq)))?;
                if role == Role::Operator {
                    let mut op = lock(&hosted.operator);
                    match *op {
                        Some(other) if other != self.id => {
                            return Err(ProtocolError::new(
                                "role",
                                "another client holds the operator role",
                                Some(seq),
                            ))
                        }
                        _ => *op = Some(self.id),
                    }
                }
                let s = lock(&hosted.session);
                let mut out = Self::state_messages(&s);
                out.push(protocol::ack(seq, Some(s.id()), Some(s.phase()), json!({"role": role})));
                drop(s);
                self.attach(hosted, role);
                return Ok(out);
            }
            _ => {}
        }

        let (hosted, role) = self
            .current
            .clone()
            .ok_or_else(|| ProtocolError::new("no_session", "create or attach a session first", Some(seq)))?;
        if role != Role::Operator && request.is_mutating() {
            return Err(ProtocolError::new("role", "observers may not change the session", Some(seq)));
        }
        let mut session = lock(&hosted.session);
        let s = &mut *session;
        let err = |e: SessionError| to_protocol(e, seq);
        let mut out = Vec::new();
        let extra = match request {
            Request::CreateSession { .. } | Request::AttachSession { .. } => unreachable!("handled above"),
            Request::LoadCloud(input) => {
                match input {
                    CloudInput::Path { path } => s.load_cloud_file(&path),
                    CloudInput::Ply { ply } => parse_ply(&ply)
                        .map_err(SessionError::from)
                        .and_then(|c| s.load_cloud(c, None)),
                    CloudInput::Points { points } => PointCloud::new(positions(&points))
                        .map_err(SessionError::from)
                        .and_then(|c| s.load_cloud(c, None)),
                }
                .map_err(err)?;
                json!({"points": s.cloud().map_or(0, |c| c.len())})
            }
            Request::Configure { config, surface } => {
                s.configure(config, surface).map_err(err)?;
                json!({})
            }
            Request::AddContactPoints { positions: p, source } => {
                let revision = s.add_contacts(&positions(&p), source).map_err(err)?;
                json!({"revision": revision, "contacts": s.contacts().len()})
            }
            Request::AddContactClick(click) => {
                let (index, revision) = s.add_click(&click).map_err(err)?;
                let p = s.cloud().expect("cloud loaded").point(index);
                json!({"index": index, "position": [p.x, p.y, p.z], "revision": revision})
            }
            Request::UndoContactBatch {} => {
                let revision = s.undo_contacts().map_err(err)?;
                json!({"revision": revision, "contacts": s.contacts().len()})
            }
            Request::StopSegmentation { after_steps } => {
                let snap = s.stop(after_steps).map_err(err);
                // A failed patch build still ends segmentation.
                let snap = match snap {
                    Ok(snap) => snap,
                    Err(e) if e.code == "surface" => {
                        self.host.persist(s);
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                out.push(protocol::snapshot(&snap));
                if let Some(p) = s.patch() {
                    out.push(protocol::patch_update(p, None));
                }
                self.host.persist(s);
                json!({"steps": s.stopped_at(), "kind": snap.kind(), "score": snap.score})
            }
            Request::Crop(protocol::CropRequest { region, edit_seq }) => {
                let status = s.crop(region, edit_seq).map_err(err)?;
                out.push(protocol::patch_update(s.patch().expect("cropped patch"), Some(status)));
                self.host.persist(s);
                json!({"status": status})
            }
            Request::UndoCrop {} => {
                let undone = s.undo_crop().map_err(err)?;
                out.push(protocol::patch_update(s.patch().expect("patch"), None));
                self.host.persist(s);
                json!({"undone": undone})
            }
            Request::Plan(config) => {
                let t = s.plan(&config).map_err(err)?;
                let extra = json!({"poses": t.poses.len(), "lanes": t.lane_count});
                out.push(protocol::trajectory(t));
                self.host.persist(s);
                extra
            }
            Request::Export { path, format, log } => {
                s.export(&path, format).map_err(err)?;
                if let Some(log) = &log {
                    persist_session(s, log).map_err(err)?;
                }
                self.host.persist(s);
                json!({"path": path, "log": log})
            }
        };
        out.push(protocol::ack(seq, Some(s.id()), Some(s.phase()), extra));
        Ok(out)
    }
}
