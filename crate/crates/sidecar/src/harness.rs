//! Fault-injection scaffolding: a scripted peer endpoint, a
//! policy-driven TCP proxy for dropping, duplicating, delaying, and
//! reordering frames, and helpers that run the demo saga across three
//! in-process nodes with crash points and recovery.

use crate::config::Timeouts;
use crate::demo;
use crate::node::{spawn_with_listener, NodeHandle, Snapshot};
use crate::store::SessionStatus;
use crate::wire::Frame;
use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use troupe_kernel::{FnRegistry, ProcName, Value};

/// Poll `probe` until it returns `Some`, failing after `timeout`.
pub fn wait_until<T>(timeout: Duration, mut probe: impl FnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(v) = probe() {
            return Some(v);
        }
        if Instant::now() >= deadline {
            return None;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// A bound endpoint that records every frame it receives; tests use it
/// to play the role of a remote sidecar by hand.
pub struct FakePeer {
    pub addr: String,
    pub frames: Arc<Mutex<Vec<Frame>>>,
    shutdown: Arc<AtomicBool>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl FakePeer {
    pub fn bind() -> FakePeer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind fake peer");
        let addr = listener.local_addr().unwrap().to_string();
        let frames: Arc<Mutex<Vec<Frame>>> = Arc::default();
        let shutdown = Arc::new(AtomicBool::new(false));
        let join = {
            let frames = frames.clone();
            let shutdown = shutdown.clone();
            std::thread::spawn(move || {
                listener.set_nonblocking(true).unwrap();
                while !shutdown.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            stream.set_nonblocking(false).ok();
                            let mut reader = std::io::BufReader::new(stream);
                            while let Ok(Some(frame)) = Frame::read_from(&mut reader) {
                                frames.lock().unwrap().push(frame);
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };
        FakePeer {
            addr,
            frames,
            shutdown,
            join: Some(join),
        }
    }

    pub fn received(&self) -> Vec<Frame> {
        self.frames.lock().unwrap().clone()
    }
}

impl Drop for FakePeer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

/// Deliver one frame to a listening node.
pub fn send_frame(addr: &str, frame: &Frame) {
    let mut stream = TcpStream::connect(addr).expect("connect");
    stream.write_all(&frame.encode()).expect("write frame");
    let _ = stream.flush();
}

/// Per-frame proxy decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyAction {
    Forward,
    Drop,
    Duplicate,
    /// Forward after holding the frame this long (reordering arises
    /// when a later frame overtakes a held one).
    Delay(Duration),
}

type ProxyPolicy = Arc<dyn Fn(&Frame, usize) -> ProxyAction + Send + Sync>;

/// A frame-aware TCP proxy: accepts connections, decodes frames, and
/// forwards them to the target according to the policy.
pub struct Proxy {
    pub addr: String,
    shutdown: Arc<AtomicBool>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl Proxy {
    pub fn spawn(target: String, policy: ProxyPolicy) -> Proxy {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind proxy");
        let addr = listener.local_addr().unwrap().to_string();
        let shutdown = Arc::new(AtomicBool::new(false));
        let counter = Arc::new(Mutex::new(0usize));
        let join = {
            let shutdown = shutdown.clone();
            std::thread::spawn(move || {
                listener.set_nonblocking(true).unwrap();
                while !shutdown.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let target = target.clone();
                            let policy = policy.clone();
                            let counter = counter.clone();
                            std::thread::spawn(move || {
                                proxy_conn(stream, &target, policy, counter)
                            });
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };
        Proxy {
            addr,
            shutdown,
            join: Some(join),
        }
    }
}

fn proxy_conn(
    stream: TcpStream,
    target: &str,
    policy: ProxyPolicy,
    counter: Arc<Mutex<usize>>,
) {
    stream.set_nonblocking(false).ok();
    let mut reader = std::io::BufReader::new(stream);
    while let Ok(Some(frame)) = Frame::read_from(&mut reader) {
        let n = {
            let mut c = counter.lock().unwrap();
            *c += 1;
            *c
        };
        let action = policy(&frame, n);
        let target = target.to_owned();
        match action {
            ProxyAction::Drop => {}
            ProxyAction::Forward => forward(&target, &frame),
            ProxyAction::Duplicate => {
                forward(&target, &frame);
                forward(&target, &frame);
            }
            ProxyAction::Delay(d) => {
                let frame = frame.clone();
                std::thread::spawn(move || {
                    std::thread::sleep(d);
                    forward(&target, &frame);
                });
            }
        }
    }
}

fn forward(target: &str, frame: &Frame) {
    if let Ok(mut out) = TcpStream::connect(target) {
        let _ = out.write_all(&frame.encode());
        let _ = out.flush();
    }
}

impl Drop for Proxy {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

// ---- demo saga across three nodes ----

pub struct DemoTrio {
    pub nodes: BTreeMap<String, NodeHandle>,
    pub addrs: BTreeMap<String, String>,
    pub wal_dir: PathBuf,
    pub timeouts: Timeouts,
}

/// Snappy timeouts for loopback crash tests.
pub fn test_timeouts() -> Timeouts {
    Timeouts {
        ack_timeout: Duration::from_millis(80),
        recv_timeout: Duration::from_millis(120),
        session_ttl: Duration::from_secs(30),
        backoff_initial: Duration::from_millis(30),
        backoff_cap: Duration::from_millis(300),
        max_attempts: 200,
    }
}

fn bind_retry(addr: &str) -> TcpListener {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        match TcpListener::bind(addr) {
            Ok(l) => return l,
            Err(e) => {
                if Instant::now() >= deadline {
                    panic!("cannot rebind {addr}: {e}");
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

impl DemoTrio {
    /// Spawn the three demo roles with fresh listeners, optionally
    /// arming a kill switch (in WAL appends) per role.
    pub fn spawn(wal_dir: &Path, kills: &BTreeMap<&str, u64>) -> DemoTrio {
        let timeouts = test_timeouts();
        let mut listeners = BTreeMap::new();
        let mut addrs = BTreeMap::new();
        for role in demo::ROLES {
            let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
            addrs.insert(role.to_string(), listener.local_addr().unwrap().to_string());
            listeners.insert(role.to_string(), listener);
        }
        let mut trio = DemoTrio {
            nodes: BTreeMap::new(),
            addrs,
            wal_dir: wal_dir.to_owned(),
            timeouts,
        };
        for role in demo::ROLES {
            let listener = listeners.remove(role).unwrap();
            let kill = kills.get(role).copied();
            trio.spawn_role(role, Some(listener), kill);
        }
        trio
    }

    pub fn spawn_role(&mut self, role: &str, listener: Option<TcpListener>, kill: Option<u64>) {
        let peers: BTreeMap<ProcName, String> = self
            .addrs
            .iter()
            .filter(|(r, _)| r.as_str() != role)
            .map(|(r, a)| (ProcName::new(r.clone()), a.clone()))
            .collect();
        let cfg = demo::demo_config(
            role,
            self.addrs[role].clone(),
            peers,
            self.wal_dir.join(format!("{role}.wal")),
            self.timeouts.clone(),
        );
        let listener = listener.unwrap_or_else(|| bind_retry(&self.addrs[role]));
        let handle = spawn_with_listener(
            cfg,
            FnRegistry::with_builtins(),
            demo::demo_registry(),
            kill,
            listener,
        )
        .expect("spawn node");
        self.nodes.insert(role.to_string(), handle);
    }

    /// Drop a role's node (closing its listener) and bring it back up
    /// on the same address from its WAL.
    pub fn respawn_role(&mut self, role: &str) {
        if let Some(node) = self.nodes.remove(role) {
            node.shutdown();
        }
        self.spawn_role(role, None, None);
    }

    pub fn snapshot(&self, role: &str) -> Snapshot {
        self.nodes[role].snapshot().expect("snapshot")
    }

    pub fn start_order(&self, value: i64) -> Result<u128, String> {
        self.nodes["warehouse"]
            .start_session(demo::CHOR_ID, Value::Int(value))
            .map_err(|e| e.to_string())
    }

    /// Wait until every role reports a terminal status for the session.
    pub fn wait_quiescent(&self, session: u128, timeout: Duration) -> Option<Vec<SessionStatus>> {
        wait_until(timeout, || {
            let mut statuses = Vec::new();
            for role in demo::ROLES {
                let snap = self.nodes[role].snapshot().ok()?;
                match snap.sessions.get(&session) {
                    Some(row) if row.status != SessionStatus::Started => {
                        statuses.push(row.status)
                    }
                    _ => return None,
                }
            }
            Some(statuses)
        })
    }

    /// Wait until the session has settled everywhere, allowing roles
    /// that never durably learned of it (a node that misses an abort
    /// broadcast while down holds no state about the session, the
    /// empty, vacuously compensated log). Settled means: somebody has a
    /// terminal row, nobody has a started row or a live context, and
    /// two reads 250 ms apart agree.
    pub fn wait_outcome(
        &self,
        session: u128,
        timeout: Duration,
    ) -> Option<BTreeMap<String, Option<SessionStatus>>> {
        let read = || -> Option<BTreeMap<String, Option<SessionStatus>>> {
            let mut out = BTreeMap::new();
            for role in demo::ROLES {
                let snap = self.nodes[role].snapshot().ok()?;
                if snap.live_sessions > 0 {
                    return None;
                }
                let status = snap.sessions.get(&session).map(|r| r.status);
                if status == Some(SessionStatus::Started) {
                    return None;
                }
                out.insert(role.to_string(), status);
            }
            if out.values().all(|s| s.is_none()) {
                return None;
            }
            Some(out)
        };
        wait_until(timeout, || {
            let first = read()?;
            std::thread::sleep(Duration::from_millis(250));
            let second = read()?;
            (first == second).then_some(second)
        })
    }

    pub fn shutdown(self) {
        for (_, node) in self.nodes {
            node.shutdown();
        }
    }
}

/// Outcome of one crash-injected saga run after recovery. A role maps
/// to `None` when it never durably learned of the session.
#[derive(Debug)]
pub struct SweepOutcome {
    pub session: Option<u128>,
    pub statuses: BTreeMap<String, Option<SessionStatus>>,
    pub commit_counts: BTreeMap<(String, String), usize>,
    pub compensation_counts: BTreeMap<(String, String), usize>,
}

/// Run one demo order with a kill switch armed on `victim` after
/// `kill_after` WAL appends; when the victim dies it is restarted once
/// from its log, and the run is driven to quiescence.
pub fn run_saga_with_kill(
    wal_dir: &Path,
    order_value: i64,
    victim: &str,
    kill_after: u64,
) -> SweepOutcome {
    let mut kills = BTreeMap::new();
    kills.insert(victim, kill_after);
    let mut trio = DemoTrio::spawn(wal_dir, &kills);

    let session = trio.start_order(order_value).ok();

    // Give the run time to hit the kill point, then recover the victim.
    let died = wait_until(Duration::from_secs(10), || {
        let snap = trio.snapshot(victim);
        if snap.dead {
            Some(true)
        } else if session.is_some()
            && trio
                .wait_outcome(session.unwrap(), Duration::from_millis(1))
                .is_some()
        {
            Some(false)
        } else {
            None
        }
    });
    if died == Some(true) {
        trio.respawn_role(victim);
    }

    let statuses = match session {
        Some(s) => trio
            .wait_outcome(s, Duration::from_secs(30))
            .unwrap_or_else(|| {
                panic!(
                    "saga did not settle (victim {victim}, kill point {kill_after}): {:?}",
                    demo::ROLES
                        .iter()
                        .map(|r| format!("{r}: {:?}", trio.snapshot(r).sessions.get(&s)))
                        .collect::<Vec<_>>()
                )
            }),
        None => {
            // The initiator died before the session existed; nothing
            // must exist anywhere after a grace period.
            std::thread::sleep(Duration::from_millis(300));
            for role in demo::ROLES {
                let snap = trio.snapshot(role);
                assert!(
                    snap.sessions.is_empty(),
                    "session appeared despite failed start at {role}"
                );
            }
            BTreeMap::new()
        }
    };

    // Audit effects straight off the logs.
    let mut commit_counts = BTreeMap::new();
    let mut compensation_counts = BTreeMap::new();
    let trio_dir = trio.wal_dir.clone();
    trio.shutdown();
    for role in demo::ROLES {
        let records =
            crate::store::read_wal(&trio_dir.join(format!("{role}.wal"))).expect("readable wal");
        for rec in records {
            match rec {
                crate::store::WalRecord::TxnCommitted { name, .. } => {
                    *commit_counts
                        .entry((role.to_string(), name))
                        .or_insert(0usize) += 1;
                }
                crate::store::WalRecord::TxnCompensated { name, .. } => {
                    *compensation_counts
                        .entry((role.to_string(), name))
                        .or_insert(0usize) += 1;
                }
                _ => {}
            }
        }
    }
    SweepOutcome {
        session,
        statuses,
        commit_counts,
        compensation_counts,
    }
}

/// Count the WAL appends each role makes in a fault-free run, which is
/// the kill-point space for the sweep.
pub fn fault_free_append_counts(wal_dir: &Path, order_value: i64) -> BTreeMap<String, u64> {
    let trio = DemoTrio::spawn(wal_dir, &BTreeMap::new());
    let session = trio.start_order(order_value).expect("start");
    trio.wait_quiescent(session, Duration::from_secs(20))
        .expect("fault-free saga quiesces");
    let counts = demo::ROLES
        .iter()
        .map(|r| (r.to_string(), trio.snapshot(r).wal_appends))
        .collect();
    trio.shutdown();
    counts
}
