//! Deterministic discrete-event network simulator.
//!
//! Nodes run in-process and are driven synchronously by a single scheduler
//! in virtual time. Frames travel as encoded bytes over directed links with
//! a base latency, optional uniform jitter and independent per-frame loss.
//! Every scheduler action is appended to a [`Transcript`], which is the sole
//! input to [`metrics`] and the artifact compared by determinism checks.
//!
//! All randomness is derived from [`SimConfig::seed`]: each node and each
//! directed link owns a generator seeded from it, so traffic on one link
//! never perturbs draws on another.

mod metrics;
mod scenario;
mod topology;

pub use metrics::{metrics, DigestMetrics, SimMetrics, Totals};
pub use scenario::{
    run_figure2_scenario, Scenario, ScenarioError, ScenarioReport, SimSection, Step, StepReport,
    FIGURE2_TOML, RANDOM_TOML,
};
pub use topology::{random_topology, Topology, MAX_DEGREE};

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::message::{MessageDigest, PubsubTopic, WakuMessage};
use crate::node::{describe_frame, parse_config, ConfigError, Node, NodeConfig, Output, StartError};
use crate::relay::{PublishReceipt, RelayError};
use crate::wire::{decode_frame, encode_frame, PeerId, ProtocolId, WireError};
use crate::Nanos;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub default_latency: Duration,
    pub jitter: Duration,
    pub loss_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            default_latency: Duration::from_millis(10),
            jitter: Duration::ZERO,
            loss_rate: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} already exists")]
    DuplicateNode(String),
    #[error("cannot link {0} to itself")]
    SelfLink(String),
    #[error("{0} and {1} are already linked")]
    DuplicateLink(String, String),
    #[error("{0} and {1} are not linked")]
    NoLink(String, String),
    #[error("loss rate {0} outside [0, 1]")]
    LossRate(f64),
    #[error(transparent)]
    PeerId(#[from] WireError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Start(#[from] StartError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FrameSent,
    FrameDelivered,
    FrameDropped,
    AppDelivery,
    Timer,
}

/// One transcript record. For `app_delivery`, `src == dst` marks a node's
/// own publish; `protocol` is relay for gossip deliveries and filter for
/// pushes handed to a light client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Nanos,
    pub kind: EventKind,
    pub src: PeerId,
    pub dst: PeerId,
    pub protocol: Option<ProtocolId>,
    pub label: String,
    pub digest: Option<MessageDigest>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub events: Vec<SimEvent>,
    /// The last run stopped at its horizon with events still queued.
    pub truncated: bool,
}

impl Transcript {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Events that involve `peer` as source or destination.
    pub fn involving<'a>(&'a self, peer: &'a PeerId) -> impl Iterator<Item = &'a SimEvent> {
        self.events.iter().filter(move |e| e.src == *peer || e.dst == *peer)
    }
}

/// Stable 64-bit seed for a named stream under `seed`.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

fn nanos(d: Duration) -> Nanos {
    d.as_nanos().min(Nanos::MAX as u128) as Nanos
}

struct Hosted {
    node: Node,
    timer: Option<(Nanos, u64)>,
}

struct Link {
    latency: Nanos,
    epoch: u64,
    rng: ChaCha8Rng,
    last_delivery: Nanos,
}

enum Event {
    Deliver {
        from: PeerId,
        to: PeerId,
        epoch: u64,
        bytes: Vec<u8>,
    },
    Timer(PeerId),
}

pub struct Sim {
    cfg: SimConfig,
    now: Nanos,
    seq: u64,
    queue: BTreeMap<(Nanos, u64), Event>,
    nodes: BTreeMap<PeerId, Hosted>,
    links: BTreeMap<(PeerId, PeerId), Link>,
    next_epoch: u64,
    transcript: Transcript,
    observed: BTreeMap<PeerId, Vec<Output>>,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&cfg.loss_rate) {
            return Err(SimError::LossRate(cfg.loss_rate));
        }
        Ok(Self {
            cfg,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            next_epoch: 0,
            transcript: Transcript::default(),
            observed: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Generator for a named auxiliary stream, e.g. topology generation.
    pub fn rng_for(&self, parts: &[&str]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, parts))
    }

    fn pid(&self, name: &str) -> Result<PeerId, SimError> {
        let p = PeerId::new(name)?;
        if !self.nodes.contains_key(&p) {
            return Err(SimError::UnknownNode(name.to_owned()));
        }
        Ok(p)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        let p = PeerId::new(name).ok()?;
        self.nodes.get(&p).map(|h| &h.node)
    }

    pub fn node_names(&self) -> impl Iterator<Item = &PeerId> {
        self.nodes.keys()
    }

    /// Undirected links, each listed once with the smaller id first.
    pub fn edges(&self) -> Vec<(PeerId, PeerId)> {
        self.links
            .keys()
            .filter(|(a, b)| a < b)
            .cloned()
            .collect()
    }

    /// Non-frame outputs a node has produced so far, in order.
    pub fn observed(&self, name: &str) -> &[Output] {
        PeerId::new(name)
            .ok()
            .and_then(|p| self.observed.get(&p))
            .map_or(&[], Vec::as_slice)
    }

    pub fn add_node(&mut self, name: &str, config: &NodeConfig) -> Result<PeerId, SimError> {
        let peer = PeerId::new(name)?;
        if self.nodes.contains_key(&peer) {
            return Err(SimError::DuplicateNode(name.to_owned()));
        }
        let seed = derive_seed(self.cfg.seed, &["node", name]);
        let node = Node::new(config, peer.clone(), seed, self.now)?;
        self.nodes.insert(peer.clone(), Hosted { node, timer: None });
        self.flush(&peer);
        Ok(peer)
    }

    /// Parses `--flag:value` arguments and adds the node.
    pub fn add_node_args<S: AsRef<str>>(&mut self, name: &str, args: &[S]) -> Result<PeerId, SimError> {
        let config = parse_config(args)?;
        self.add_node(name, &config)
    }

    pub fn connect(&mut self, a: &str, b: &str) -> Result<(), SimError> {
        self.connect_with(a, b, self.cfg.default_latency)
    }

    /// Links `a` and `b` in both directions and starts the handshake.
    pub fn connect_with(&mut self, a: &str, b: &str, latency: Duration) -> Result<(), SimError> {
        let (pa, pb) = (self.pid(a)?, self.pid(b)?);
        if pa == pb {
            return Err(SimError::SelfLink(a.to_owned()));
        }
        if self.links.contains_key(&(pa.clone(), pb.clone())) {
            return Err(SimError::DuplicateLink(a.to_owned(), b.to_owned()));
        }
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        for (x, y) in [(&pa, &pb), (&pb, &pa)] {
            let rng = self.rng_for(&["link", x.as_str(), y.as_str(), &epoch.to_string()]);
            self.links.insert(
                (x.clone(), y.clone()),
                Link {
                    latency: nanos(latency),
                    epoch,
                    rng,
                    last_delivery: Nanos::MIN,
                },
            );
        }
        let now = self.now;
        self.host(&pa).node.on_connected(pb.clone(), now);
        self.host(&pb).node.on_connected(pa.clone(), now);
        self.flush(&pa);
        self.flush(&pb);
        Ok(())
    }

    pub fn disconnect(&mut self, a: &str, b: &str) -> Result<(), SimError> {
        let (pa, pb) = (self.pid(a)?, self.pid(b)?);
        if self.links.remove(&(pa.clone(), pb.clone())).is_none() {
            return Err(SimError::NoLink(a.to_owned(), b.to_owned()));
        }
        self.links.remove(&(pb.clone(), pa.clone()));
        let now = self.now;
        self.host(&pa).node.on_disconnected(&pb, now);
        self.host(&pb).node.on_disconnected(&pa, now);
        self.flush(&pa);
        self.flush(&pb);
        Ok(())
    }

    /// Runs a local API call on a node at the current virtual time.
    pub fn call<T>(&mut self, name: &str, f: impl FnOnce(&mut Node, Nanos) -> T) -> Result<T, SimError> {
        let p = self.pid(name)?;
        let now = self.now;
        let out = f(&mut self.host(&p).node, now);
        self.flush(&p);
        Ok(out)
    }

    pub fn publish(
        &mut self,
        name: &str,
        topic: &PubsubTopic,
        msg: WakuMessage,
    ) -> Result<Result<PublishReceipt, RelayError>, SimError> {
        self.call(name, |n, now| n.publish(topic.clone(), msg, now))
    }

    /// Processes every event up to and including `until`, then moves the
    /// clock to `until`.
    pub fn advance_to(&mut self, until: Nanos) {
        while let Some((&(t, _), _)) = self.queue.first_key_value() {
            if t > until {
                break;
            }
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Processes events until the queue drains or the next event lies past
    /// `horizon`. In the latter case the transcript is flagged truncated and
    /// the clock rests at `horizon`.
    pub fn run_until_idle(&mut self, horizon: Nanos) -> &Transcript {
        self.transcript.truncated = false;
        while let Some((&(t, _), _)) = self.queue.first_key_value() {
            if t > horizon {
                self.transcript.truncated = true;
                self.now = self.now.max(horizon);
                break;
            }
            self.step();
        }
        &self.transcript
    }

    /// [`Sim::run_until_idle`] with a horizon relative to now.
    pub fn run_for(&mut self, span: Duration) -> &Transcript {
        let horizon = self.now.saturating_add(nanos(span));
        self.run_until_idle(horizon)
    }

    fn host(&mut self, p: &PeerId) -> &mut Hosted {
        self.nodes.get_mut(p).expect("hosted node")
    }

    fn schedule(&mut self, at: Nanos, ev: Event) -> (Nanos, u64) {
        let key = (at, self.seq);
        self.seq += 1;
        self.queue.insert(key, ev);
        key
    }

    fn record(
        &mut self,
        kind: EventKind,
        src: &PeerId,
        dst: &PeerId,
        protocol: Option<ProtocolId>,
        label: &str,
        digest: Option<MessageDigest>,
    ) {
        self.transcript.events.push(SimEvent {
            time: self.now,
            kind,
            src: src.clone(),
            dst: dst.clone(),
            protocol,
            label: label.to_owned(),
            digest,
        });
    }

    fn step(&mut self) {
        let Some(((t, _), ev)) = self.queue.pop_first() else {
            return;
        };
        self.now = t;
        match ev {
            Event::Timer(p) => {
                self.host(&p).timer = None;
                self.record(EventKind::Timer, &p, &p, None, "TIMER", None);
                self.host(&p).node.on_timer(t);
                self.flush(&p);
            }
            Event::Deliver {
                from,
                to,
                epoch,
                bytes,
            } => {
                let frame = decode_frame(&bytes);
                let limits = *self.host(&to).node.limits();
                let (protocol, label, digest) = match &frame {
                    Ok(f) => {
                        let (l, d) = describe_frame(f, &limits);
                        (Some(f.protocol), l, d)
                    }
                    Err(_) => (None, "MALFORMED", None),
                };
                let live = self
                    .links
                    .get(&(from.clone(), to.clone()))
                    .is_some_and(|l| l.epoch == epoch);
                match frame {
                    Ok(frame) if live => {
                        self.record(EventKind::FrameDelivered, &from, &to, protocol, label, digest);
                        self.host(&to).node.handle_frame(&from, frame, t);
                        self.flush(&to);
                    }
                    _ => self.record(EventKind::FrameDropped, &from, &to, protocol, label, digest),
                }
            }
        }
    }

    /// Drains outputs of `start` and of any node affected by them, then
    /// re-arms their timers.
    fn flush(&mut self, start: &PeerId) {
        let mut work = vec![start.clone()];
        while let Some(p) = work.pop() {
            let outputs = self.host(&p).node.take_outputs();
            let limits = *self.host(&p).node.limits();
            for out in outputs {
                match out {
                    Output::Send { to, frame } => {
                        let (label, digest) = describe_frame(&frame, &limits);
                        let protocol = Some(frame.protocol);
                        self.record(EventKind::FrameSent, &p, &to, protocol, label, digest);
                        let Ok(bytes) = encode_frame(&frame) else {
                            self.record(EventKind::FrameDropped, &p, &to, protocol, label, digest);
                            continue;
                        };
                        self.transmit(&p, &to, bytes, protocol, label, digest);
                    }
                    Output::Close { peer, .. } => {
                        if self.links.remove(&(p.clone(), peer.clone())).is_some() {
                            self.links.remove(&(peer.clone(), p.clone()));
                            let now = self.now;
                            if let Some(h) = self.nodes.get_mut(&peer) {
                                h.node.on_disconnected(&p, now);
                                work.push(peer);
                            }
                        }
                    }
                    other => {
                        match &other {
                            Output::Delivered { digest, from, .. } => {
                                let src = from.clone().unwrap_or_else(|| p.clone());
                                let d = Some(*digest);
                                self.record(EventKind::AppDelivery, &src, &p, Some(ProtocolId::Relay), "RELAY", d);
                            }
                            Output::FilterPush { from, push } => {
                                let d = Some(push.msg.digest());
                                self.record(EventKind::AppDelivery, from, &p, Some(ProtocolId::Filter), "FILTER", d);
                            }
                            _ => {}
                        }
                        self.observed.entry(p.clone()).or_default().push(other);
                    }
                }
            }
            self.rearm(&p);
        }
    }

    fn transmit(
        &mut self,
        from: &PeerId,
        to: &PeerId,
        bytes: Vec<u8>,
        protocol: Option<ProtocolId>,
        label: &str,
        digest: Option<MessageDigest>,
    ) {
        let (loss, jitter) = (self.cfg.loss_rate, nanos(self.cfg.jitter));
        let now = self.now;
        let Some(link) = self.links.get_mut(&(from.clone(), to.clone())) else {
            self.record(EventKind::FrameDropped, from, to, protocol, label, digest);
            return;
        };
        if loss > 0.0 && link.rng.random_bool(loss) {
            self.record(EventKind::FrameDropped, from, to, protocol, label, digest);
            return;
        }
        let extra = if jitter > 0 {
            link.rng.random_range(0..=jitter)
        } else {
            0
        };
        // Links are FIFO: jitter never reorders frames on one direction.
        let at = now
            .saturating_add(link.latency)
            .saturating_add(extra)
            .max(link.last_delivery);
        link.last_delivery = at;
        let epoch = link.epoch;
        self.schedule(
            at,
            Event::Deliver {
                from: from.clone(),
                to: to.clone(),
                epoch,
                bytes,
            },
        );
    }

    fn rearm(&mut self, p: &PeerId) {
        let now = self.now;
        let h = self.nodes.get(p).expect("hosted node");
        let want = h.node.next_deadline().map(|d| d.max(now));
        let have = h.timer;
        if want == have.map(|(t, _)| t) {
            return;
        }
        if let Some(key) = have {
            self.queue.remove(&key);
        }
        let key = want.map(|t| self.schedule(t, Event::Timer(p.clone())));
        self.host(p).timer = key;
    }
}
