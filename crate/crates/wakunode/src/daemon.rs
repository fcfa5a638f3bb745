//! The running node: one task owns the [`Node`] and serializes every input;
//! connection, listener and RPC tasks talk to it over a command channel.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde_json::Value;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};
use waku_core::discovery::{bootstrap, Multiaddr};
use waku_core::node::{Node, NodeConfig, Output};
use waku_core::rpc::{parse_call, Call, Exec, RpcError, RpcState, SERVER_ERROR};
use waku_core::store::Archive;
use waku_core::wire::{Capabilities, Frame, Mode, PeerId, ProtocolId, DEFAULT_MAX_FRAME_BODY};
use waku_core::Nanos;

use crate::identity::{data_file, load_or_create_nodekey, SNAPSHOT_FILE};
use crate::transport::{handshake, read_frame, write_frame, TransportError};
use crate::{http, peerlist};

const DIAL_TIMEOUT: Duration = Duration::from_secs(5);
const DIAL_ATTEMPTS: u32 = 3;

pub fn wall_now() -> Nanos {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as Nanos)
}

type Inspect = Box<dyn FnOnce(&Node) + Send>;

pub(crate) enum Cmd {
    Established {
        remote: Capabilities,
        conn: u64,
        tx: mpsc::UnboundedSender<Frame>,
        reply: oneshot::Sender<bool>,
    },
    Frame {
        peer: PeerId,
        conn: u64,
        frame: Frame,
    },
    Closed {
        peer: PeerId,
        conn: u64,
    },
    Rpc {
        call: Call,
        reply: oneshot::Sender<Result<Value, RpcError>>,
    },
    Inspect(Inspect),
    Stop(oneshot::Sender<anyhow::Result<()>>),
}

struct Shared {
    caps: Capabilities,
    cmd: mpsc::UnboundedSender<Cmd>,
    next_conn: AtomicU64,
}

impl Shared {
    /// Runs the handshake on a fresh stream and hands the connection to the
    /// node task. Resolves once the connection is registered.
    async fn attach(self: &Arc<Self>, mut stream: TcpStream, expected: Option<&PeerId>) -> Result<PeerId, TransportError> {
        let remote = handshake(&mut stream, &self.caps, expected, DEFAULT_MAX_FRAME_BODY).await?;
        let peer = remote.peer.clone();
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::unbounded_channel();
        let (reply, accepted) = oneshot::channel();
        let _ = self.cmd.send(Cmd::Established {
            remote,
            conn,
            tx,
            reply,
        });
        if !accepted.await.unwrap_or(false) {
            debug!(%peer, "dropping duplicate connection");
            return Ok(peer);
        }
        let cmd = self.cmd.clone();
        let p = peer.clone();
        tokio::spawn(async move {
            pump(stream, p.clone(), conn, rx, cmd.clone()).await;
            let _ = cmd.send(Cmd::Closed { peer: p, conn });
        });
        Ok(peer)
    }
}

/// Moves frames between the socket and the node task until either side
/// ends. Dropping the node's sender closes the connection.
async fn pump(
    stream: TcpStream,
    peer: PeerId,
    conn: u64,
    mut rx: mpsc::UnboundedReceiver<Frame>,
    cmd: mpsc::UnboundedSender<Cmd>,
) {
    let (mut r, mut w) = stream.into_split();
    let reader = async {
        loop {
            match read_frame(&mut r, DEFAULT_MAX_FRAME_BODY).await {
                Ok(frame) => {
                    let peer = peer.clone();
                    if cmd.send(Cmd::Frame { peer, conn, frame }).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    debug!(%peer, error = %e, "connection read ended");
                    return;
                }
            }
        }
    };
    let writer = async {
        while let Some(frame) = rx.recv().await {
            if let Err(e) = write_frame(&mut w, &frame).await {
                debug!(%peer, error = %e, "connection write failed");
                return;
            }
        }
    };
    tokio::select! {
        _ = reader => {}
        _ = writer => {}
    }
}

struct Conn {
    id: u64,
    tx: mpsc::UnboundedSender<Frame>,
}

struct NodeTask {
    node: Node,
    rpc: RpcState,
    conns: BTreeMap<PeerId, Conn>,
    waiting: BTreeMap<u64, oneshot::Sender<Result<Value, RpcError>>>,
    snapshot: Option<PathBuf>,
}

impl NodeTask {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Cmd>) {
        loop {
            let deadline = self.node.next_deadline();
            let timer = async {
                match deadline {
                    Some(d) => tokio::time::sleep(Duration::from_nanos((d - wall_now()).max(0) as u64)).await,
                    None => std::future::pending().await,
                }
            };
            let cmd = tokio::select! {
                c = rx.recv() => c,
                _ = timer => {
                    self.node.on_timer(wall_now());
                    self.drain();
                    continue;
                }
            };
            match cmd {
                Some(Cmd::Stop(reply)) => {
                    let _ = reply.send(self.shutdown());
                    return;
                }
                Some(c) => self.handle(c),
                None => return,
            }
            self.drain();
        }
    }

    fn handle(&mut self, cmd: Cmd) {
        let now = wall_now();
        match cmd {
            Cmd::Established {
                remote,
                conn,
                tx,
                reply,
            } => {
                let peer = remote.peer.clone();
                let fresh = !self.conns.contains_key(&peer) && peer != *self.node.peer_id();
                if fresh && self.node.on_established(remote, now) {
                    info!(%peer, "connected");
                    self.conns.insert(peer, Conn { id: conn, tx });
                    let _ = reply.send(true);
                } else {
                    let _ = reply.send(false);
                }
            }
            Cmd::Frame { peer, conn, frame } => {
                if self.conns.get(&peer).is_some_and(|c| c.id == conn) {
                    self.node.handle_frame(&peer, frame, now);
                }
            }
            Cmd::Closed { peer, conn } => {
                if self.conns.get(&peer).is_some_and(|c| c.id == conn) {
                    info!(%peer, "disconnected");
                    self.conns.remove(&peer);
                    self.node.on_disconnected(&peer, now);
                }
            }
            Cmd::Rpc { call, reply } => match self.rpc.execute(&mut self.node, call, now) {
                Ok(Exec::Done(v)) => {
                    let _ = reply.send(Ok(v));
                }
                Ok(Exec::Pending(id)) => {
                    self.waiting.insert(id, reply);
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                }
            },
            Cmd::Inspect(f) => f(&self.node),
            Cmd::Stop(_) => unreachable!("handled by run"),
        }
    }

    fn drain(&mut self) {
        for out in self.node.take_outputs() {
            match &out {
                Output::Send { to, frame } => {
                    if let Some(c) = self.conns.get(to) {
                        let _ = c.tx.send(frame.clone());
                    }
                }
                Output::Close { peer, reason } => {
                    info!(%peer, %reason, "closing connection");
                    self.conns.remove(peer);
                }
                _ => {
                    if let Some((id, result)) = self.rpc.observe(&out) {
                        if let Some(reply) = self.waiting.remove(&id) {
                            let _ = reply.send(result);
                        }
                    }
                }
            }
        }
    }

    fn shutdown(&mut self) -> anyhow::Result<()> {
        self.conns.clear();
        for (_, reply) in std::mem::take(&mut self.waiting) {
            let _ = reply.send(Err(RpcError::new(SERVER_ERROR, "node stopped")));
        }
        if let (Some(path), Some(archive)) = (&self.snapshot, self.node.archive()) {
            archive
                .write_snapshot(path)
                .with_context(|| format!("writing snapshot {}", path.display()))?;
            info!(path = %path.display(), messages = archive.len(), "store snapshot written");
        }
        Ok(())
    }
}

struct Running {
    node_task: JoinHandle<()>,
    background: Vec<JoinHandle<()>>,
}

/// A started node. Dropping the handle without [`NodeHandle::stop`] leaves
/// the tasks running until the runtime shuts down.
pub struct NodeHandle {
    shared: Arc<Shared>,
    listen_addr: SocketAddr,
    rpc_addr: Option<SocketAddr>,
    shutdown: watch::Sender<bool>,
    running: Mutex<Option<Running>>,
}

impl NodeHandle {
    pub fn peer_id(&self) -> &PeerId {
        &self.shared.caps.peer
    }

    /// The mounted protocol set, as advertised in every handshake.
    pub fn capabilities(&self) -> &Capabilities {
        &self.shared.caps
    }

    pub fn listen_addr(&self) -> SocketAddr {
        self.listen_addr
    }

    /// Dialable address, with the wildcard bind address shown as loopback.
    pub fn multiaddr(&self) -> Multiaddr {
        dialable(self.listen_addr, self.peer_id())
    }

    pub fn rpc_addr(&self) -> Option<SocketAddr> {
        self.rpc_addr
    }

    pub fn is_running(&self) -> bool {
        self.running.lock().expect("lock").is_some()
    }

    /// Connects to `addr`, verifying the remote peer id during the handshake.
    pub async fn dial(&self, addr: &Multiaddr) -> anyhow::Result<()> {
        dial(&self.shared, addr).await
    }

    /// Runs an API method exactly as the JSON-RPC endpoint would.
    pub async fn rpc(&self, method: &str, params: Value) -> Result<Value, RpcError> {
        let call = parse_call(method, &params, &self.shared.caps)?;
        submit(&self.shared.cmd, call).await
    }

    /// Reads node state on the node task.
    pub async fn inspect<T: Send + 'static>(&self, f: impl FnOnce(&Node) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        let f: Inspect = Box::new(move |n| {
            let _ = tx.send(f(n));
        });
        self.shared.cmd.send(Cmd::Inspect(f)).ok()?;
        rx.await.ok()
    }

    /// Closes connections, stops serving and flushes the store snapshot.
    /// Later calls return immediately.
    pub async fn stop(&self) -> anyhow::Result<()> {
        let Some(running) = self.running.lock().expect("lock").take() else {
            return Ok(());
        };
        let _ = self.shutdown.send(true);
        for task in &running.background {
            task.abort();
        }
        let (tx, rx) = oneshot::channel();
        let result = match self.shared.cmd.send(Cmd::Stop(tx)) {
            Ok(()) => rx.await.unwrap_or(Ok(())),
            Err(_) => Ok(()),
        };
        let _ = running.node_task.await;
        info!(peer = %self.peer_id(), "stopped");
        result
    }
}

fn dialable(addr: SocketAddr, peer: &PeerId) -> Multiaddr {
    let ip = match addr.ip() {
        std::net::IpAddr::V4(ip) if !ip.is_unspecified() => ip,
        _ => Ipv4Addr::LOCALHOST,
    };
    Multiaddr::new(ip, addr.port(), peer.clone())
}

pub(crate) async fn submit(cmd: &mpsc::UnboundedSender<Cmd>, call: Call) -> Result<Value, RpcError> {
    let (reply, rx) = oneshot::channel();
    cmd.send(Cmd::Rpc { call, reply })
        .map_err(|_| RpcError::new(SERVER_ERROR, "node stopped"))?;
    rx.await
        .unwrap_or_else(|_| Err(RpcError::new(SERVER_ERROR, "node stopped")))
}

async fn dial(shared: &Arc<Shared>, addr: &Multiaddr) -> anyhow::Result<()> {
    let target = SocketAddrV4::new(addr.ip, addr.port);
    let stream = tokio::time::timeout(DIAL_TIMEOUT, TcpStream::connect(target))
        .await
        .map_err(|_| anyhow::anyhow!("dialing {addr} timed out"))?
        .with_context(|| format!("dialing {addr}"))?;
    stream.set_nodelay(true)?;
    shared
        .attach(stream, Some(&addr.peer))
        .await
        .with_context(|| format!("handshake with {addr}"))?;
    Ok(())
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, remote)) => {
                    let _ = stream.set_nodelay(true);
                    let shared = shared.clone();
                    tokio::spawn(async move {
                        if let Err(e) = shared.attach(stream, None).await {
                            warn!(%remote, error = %e, "inbound handshake failed");
                        }
                    });
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            _ = shutdown.changed() => return,
        }
    }
}

async fn discover_and_dial(config: NodeConfig, shared: Arc<Shared>) {
    let mut listed = Vec::new();
    if let (Some(url), Some(key)) = (&config.peer_list_url, &config.peer_list_key) {
        let (url, key, dir) = (url.clone(), key.clone(), config.data_dir.clone());
        let fetched = tokio::task::spawn_blocking(move || {
            let text = peerlist::fetch(&url)?;
            peerlist::accept(&text, &key, &dir)
        })
        .await;
        match fetched {
            Ok(Ok(peers)) => {
                info!(count = peers.len(), "peer list verified");
                listed = peers;
            }
            Ok(Err(e)) => warn!(error = %e, "peer list rejected; using static nodes only"),
            Err(e) => warn!(error = %e, "peer list task failed"),
        }
    }
    for addr in bootstrap(&config.staticnode, &listed) {
        if addr.peer == shared.caps.peer {
            continue;
        }
        for attempt in 1..=DIAL_ATTEMPTS {
            match dial(&shared, &addr).await {
                Ok(()) => break,
                Err(e) => {
                    warn!(%addr, attempt, error = %e, "dial failed");
                    tokio::time::sleep(Duration::from_secs(attempt as u64)).await;
                }
            }
        }
    }
}

/// Mounts protocols per `config`, binds the listener and the RPC endpoint,
/// and dials the bootstrap peers in the background.
pub async fn start(config: NodeConfig) -> anyhow::Result<NodeHandle> {
    config.validate()?;
    std::fs::create_dir_all(&config.data_dir)
        .with_context(|| format!("creating data dir {}", config.data_dir.display()))?;
    let (_, peer) = load_or_create_nodekey(&config.data_dir, config.nodekey.as_deref())?;
    let seed = rand::random();
    let mut node = Node::new(&config, peer, seed, wall_now())?;
    let caps = node.capabilities().clone();

    let snapshot = (caps.mode(ProtocolId::Store) == Some(Mode::Full))
        .then(|| data_file(&config.data_dir, SNAPSHOT_FILE));
    if let Some(path) = snapshot.as_ref().filter(|p| p.exists()) {
        let archive = Archive::load_snapshot(path, config.store_capacity, node.limits())?;
        info!(messages = archive.len(), "store snapshot loaded");
        node.restore_archive(archive);
    }

    let listener = TcpListener::bind((Ipv4Addr::UNSPECIFIED, config.listen_port))
        .await
        .with_context(|| format!("binding listen port {}", config.listen_port))?;
    let listen_addr = listener.local_addr()?;
    let rpc_listener = if config.rpc {
        let addr = SocketAddrV4::new(config.rpc_address, config.rpc_port);
        Some(
            TcpListener::bind(addr)
                .await
                .with_context(|| format!("binding rpc address {addr}"))?,
        )
    } else {
        None
    };
    let rpc_addr = rpc_listener.as_ref().map(|l| l.local_addr()).transpose()?;

    let (cmd, rx) = mpsc::unbounded_channel();
    let shared = Arc::new(Shared {
        caps: caps.clone(),
        cmd,
        next_conn: AtomicU64::new(0),
    });
    let (shutdown, shutdown_rx) = watch::channel(false);
    let handle_addr = dialable(listen_addr, &caps.peer);
    let task = NodeTask {
        node,
        rpc: RpcState::new(vec![handle_addr.to_string()]),
        conns: BTreeMap::new(),
        waiting: BTreeMap::new(),
        snapshot,
    };
    let node_task = tokio::spawn(task.run(rx));
    let mut background = vec![tokio::spawn(accept_loop(listener, shared.clone(), shutdown_rx.clone()))];
    if let Some(l) = rpc_listener {
        background.push(tokio::spawn(http::serve(l, shared.caps.clone(), shared.cmd.clone(), shutdown_rx)));
    }
    background.push(tokio::spawn(discover_and_dial(config, shared.clone())));
    info!(peer = %caps.peer, %listen_addr, ?rpc_addr, "node started");
    Ok(NodeHandle {
        shared,
        listen_addr,
        rpc_addr,
        shutdown,
        running: Mutex::new(Some(Running {
            node_task,
            background,
        })),
    })
}
