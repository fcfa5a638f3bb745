//! Protocol composition and the per-node event loop.
//!
//! [`Node`] owns every mounted protocol engine and is driven by four kinds
//! of input: connection changes, inbound frames, timer ticks and local API
//! calls. It never performs I/O; everything it wants done is queued as an
//! [`Output`] for the driver (simulator or daemon) to drain.

mod config;

pub use config::{
    parse_config, ConfigError, Mount, NodeConfig, StartError, DEFAULT_DATA_DIR,
    DEFAULT_LISTEN_PORT, DEFAULT_RPC_PORT,
};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::{debug, warn};

use crate::filter::{
    FilterError, FilterParams, FilterRequest, FilterResponse, FilterServer, MessagePush,
};
use crate::lightpush::{LightpushError, PushRequest, PushResponse};
use crate::message::{ContentFilter, MessageDigest, MessageLimits, PubsubTopic, WakuMessage};
use crate::relay::{PublishReceipt, Relay, RelayEffect, RelayError, RelayRpc};
use crate::store::{fit_response, Archive, HistoryQuery, HistoryResponse, StoreError};
use crate::wire::{
    advertisement_frame, read_advertisement, usable, Capabilities, Frame, FrameKind, Mode,
    PeerId, ProtocolId, Usable, DEFAULT_MAX_FRAME_BODY, HANDSHAKE_TIMEOUT_NS,
};
use crate::Nanos;

/// Client-side timeout for store, filter and lightpush requests.
pub const REQUEST_TIMEOUT_NS: Nanos = 10_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send {
        to: PeerId,
        frame: Frame,
    },
    Close {
        peer: PeerId,
        reason: String,
    },
    /// Application delivery of a relayed message on a subscribed topic.
    /// `from` is `None` for the node's own publishes.
    Delivered {
        topic: PubsubTopic,
        msg: WakuMessage,
        digest: MessageDigest,
        from: Option<PeerId>,
    },
    StoreResult {
        request_id: u64,
        result: Result<HistoryResponse, StoreError>,
    },
    FilterSubscribed {
        request_id: u64,
        result: Result<String, FilterError>,
    },
    FilterUnsubscribed {
        request_id: u64,
        result: Result<(), FilterError>,
    },
    FilterPush {
        from: PeerId,
        push: MessagePush,
    },
    LightpushResult {
        request_id: u64,
        result: Result<PushResponse, LightpushError>,
    },
}

#[derive(Debug, Clone)]
enum Conn {
    Handshaking { deadline: Nanos },
    Ready { remote: Capabilities, usable: Usable },
}

#[derive(Debug, Clone)]
enum PendingKind {
    Store(HistoryQuery),
    FilterSubscribe {
        pubsub_topic: PubsubTopic,
        filter: ContentFilter,
    },
    FilterUnsubscribe {
        id: String,
    },
    Lightpush,
}

#[derive(Debug, Clone)]
struct Pending {
    peer: PeerId,
    deadline: Nanos,
    kind: PendingKind,
}

/// A filter subscription this node holds on a remote server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSubscription {
    pub server: PeerId,
    pub pubsub_topic: PubsubTopic,
    pub filter: ContentFilter,
}

pub struct Node {
    caps: Capabilities,
    limits: MessageLimits,
    max_frame_body: usize,
    rng: ChaCha8Rng,
    relay: Option<Relay>,
    heartbeat_interval: Nanos,
    heartbeat_origin: Nanos,
    last_heartbeat: Option<Nanos>,
    heartbeat_due: Option<Nanos>,
    store: Option<(Mode, Archive)>,
    filter: Option<(Mode, FilterServer)>,
    lightpush: Option<Mode>,
    conns: BTreeMap<PeerId, Conn>,
    pending: BTreeMap<u64, Pending>,
    next_request_id: u64,
    client_subs: BTreeMap<String, ClientSubscription>,
    outputs: Vec<Output>,
}

const STORE_OK: u8 = 0;
const STORE_ERR: u8 = 1;

impl Node {
    /// Mounts the protocols `config` asks for. Relay subscriptions to the
    /// configured topics are made immediately.
    pub fn new(config: &NodeConfig, peer: PeerId, seed: u64, now: Nanos) -> Result<Self, StartError> {
        let caps = config.capabilities(peer)?;
        let limits = config.message_limits();
        let relay = caps
            .has(ProtocolId::Relay)
            .then(|| Relay::new(config.relay_params.clone(), limits));
        let mut node = Self {
            limits,
            max_frame_body: DEFAULT_MAX_FRAME_BODY,
            rng: ChaCha8Rng::seed_from_u64(seed),
            relay,
            heartbeat_interval: config.relay_params.heartbeat_interval.as_nanos() as Nanos,
            heartbeat_origin: now,
            last_heartbeat: None,
            heartbeat_due: None,
            store: caps
                .mode(ProtocolId::Store)
                .map(|m| (m, Archive::new(config.store_capacity))),
            filter: caps
                .mode(ProtocolId::Filter)
                .map(|m| (m, FilterServer::new(FilterParams::default()))),
            lightpush: caps.mode(ProtocolId::Lightpush),
            caps,
            conns: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_request_id: 1,
            client_subs: BTreeMap::new(),
            outputs: Vec::new(),
        };
        for topic in &config.topics {
            node.subscribe(topic.clone(), now)
                .expect("relay mounted when topics are configured");
        }
        Ok(node)
    }

    pub fn peer_id(&self) -> &PeerId {
        &self.caps.peer
    }

    /// The advertisement sent in every handshake; equals the mounted set.
    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    pub fn limits(&self) -> &MessageLimits {
        &self.limits
    }

    pub fn relay(&self) -> Option<&Relay> {
        self.relay.as_ref()
    }

    pub fn store_mode(&self) -> Option<Mode> {
        self.store.as_ref().map(|(m, _)| *m)
    }

    /// The archive of a full-mode store.
    pub fn archive(&self) -> Option<&Archive> {
        match &self.store {
            Some((Mode::Full, a)) => Some(a),
            _ => None,
        }
    }

    /// Replaces the archive of a full-mode store, e.g. from a snapshot.
    /// Entries beyond the configured capacity are evicted oldest-first.
    pub fn restore_archive(&mut self, archive: Archive) {
        if let Some((Mode::Full, current)) = &mut self.store {
            let mut fresh = Archive::new(current.capacity());
            for m in archive.iter() {
                fresh.insert_stored(m.clone());
            }
            *current = fresh;
        }
    }

    pub fn filter_server(&self) -> Option<&FilterServer> {
        match &self.filter {
            Some((Mode::Full, s)) => Some(s),
            _ => None,
        }
    }

    pub fn client_subscriptions(&self) -> &BTreeMap<String, ClientSubscription> {
        &self.client_subs
    }

    pub fn is_connected(&self, peer: &PeerId) -> bool {
        matches!(self.conns.get(peer), Some(Conn::Ready { .. }))
    }

    pub fn connections(&self) -> impl Iterator<Item = &PeerId> {
        self.conns.keys()
    }

    /// Remote advertisement of a connection whose handshake completed.
    pub fn remote_capabilities(&self, peer: &PeerId) -> Option<&Capabilities> {
        match self.conns.get(peer) {
            Some(Conn::Ready { remote, .. }) => Some(remote),
            _ => None,
        }
    }

    pub fn usable(&self, peer: &PeerId) -> Option<&Usable> {
        match self.conns.get(peer) {
            Some(Conn::Ready { usable, .. }) => Some(usable),
            _ => None,
        }
    }

    /// First connected peer serving `protocol` in full mode.
    pub fn find_server(&self, protocol: ProtocolId) -> Option<PeerId> {
        self.conns.iter().find_map(|(p, c)| match c {
            Conn::Ready { usable, .. } if usable.can_request.contains(&protocol) => Some(p.clone()),
            _ => None,
        })
    }

    pub fn take_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.outputs)
    }

    /// Earliest time at which [`Node::on_timer`] has work to do.
    pub fn next_deadline(&self) -> Option<Nanos> {
        let handshakes = self.conns.values().filter_map(|c| match c {
            Conn::Handshaking { deadline } => Some(*deadline),
            Conn::Ready { .. } => None,
        });
        let requests = self.pending.values().map(|p| p.deadline);
        handshakes
            .chain(requests)
            .chain(self.heartbeat_due)
            .min()
    }

    // ---- connections -------------------------------------------------

    /// A new connection whose handshake runs through [`Node::handle_frame`].
    /// Sends the local advertisement.
    pub fn on_connected(&mut self, peer: PeerId, now: Nanos) {
        if self.conns.contains_key(&peer) {
            debug!(%peer, "ignoring duplicate connection");
            return;
        }
        self.conns.insert(
            peer.clone(),
            Conn::Handshaking {
                deadline: now + HANDSHAKE_TIMEOUT_NS,
            },
        );
        self.outputs.push(Output::Send {
            to: peer,
            frame: advertisement_frame(&self.caps),
        });
        self.settle(now);
    }

    /// A connection whose handshake the transport already completed.
    /// Returns false if the peer is already connected.
    pub fn on_established(&mut self, remote: Capabilities, now: Nanos) -> bool {
        if self.conns.contains_key(&remote.peer) {
            return false;
        }
        self.become_ready(remote, now);
        self.settle(now);
        true
    }

    pub fn on_disconnected(&mut self, peer: &PeerId, now: Nanos) {
        if self.conns.remove(peer).is_none() {
            return;
        }
        if let Some(relay) = &mut self.relay {
            relay.remove_peer(peer);
        }
        self.client_subs.retain(|_, s| s.server != *peer);
        let failed: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.peer == *peer)
            .map(|(id, _)| *id)
            .collect();
        for id in failed {
            let p = self.pending.remove(&id).expect("pending entry");
            self.fail_pending(id, p.kind, Failure::Disconnected);
        }
        self.settle(now);
    }

    fn close(&mut self, peer: &PeerId, reason: String, now: Nanos) {
        warn!(%peer, %reason, "closing connection");
        self.outputs.push(Output::Close {
            peer: peer.clone(),
            reason,
        });
        self.on_disconnected(peer, now);
    }

    fn become_ready(&mut self, remote: Capabilities, now: Nanos) {
        let peer = remote.peer.clone();
        let u = usable(&self.caps, &remote);
        let relay_shared = u.shared.contains(&ProtocolId::Relay);
        self.conns.insert(
            peer.clone(),
            Conn::Ready {
                remote,
                usable: u,
            },
        );
        if let Some(relay) = &mut self.relay {
            let mut fx = Vec::new();
            if relay_shared {
                relay.add_peer(peer, &mut fx);
            } else {
                relay.remove_peer(&peer);
            }
            self.apply_relay(fx, now);
        }
    }

    fn send(&mut self, to: &PeerId, frame: Frame) {
        if frame.body.len() > self.max_frame_body {
            warn!(peer = %to, size = frame.body.len(), "dropping oversize outbound frame");
            return;
        }
        self.outputs.push(Output::Send {
            to: to.clone(),
            frame,
        });
    }

    // ---- inbound frames ----------------------------------------------

    pub fn handle_frame(&mut self, from: &PeerId, frame: Frame, now: Nanos) {
        self.dispatch(from, frame, now);
        self.settle(now);
    }

    fn dispatch(&mut self, from: &PeerId, frame: Frame, now: Nanos) {
        let Some(conn) = self.conns.get(from) else {
            debug!(peer = %from, "frame from unknown connection");
            return;
        };
        if frame.protocol == ProtocolId::Handshake {
            match read_advertisement(&frame) {
                Ok(caps) if caps.peer == *from => self.become_ready(caps, now),
                Ok(caps) => self.close(
                    from,
                    format!("handshake names peer {} on connection to {from}", caps.peer),
                    now,
                ),
                Err(e) => self.close(from, format!("malformed advertisement: {e}"), now),
            }
            return;
        }
        let Conn::Ready { usable: u, .. } = conn else {
            debug!(peer = %from, "frame before handshake");
            return;
        };
        let shared = u.shared.contains(&frame.protocol);
        let can_serve = u.can_serve.contains(&frame.protocol);
        match (frame.protocol, frame.kind) {
            (ProtocolId::Relay, _) => {
                if shared {
                    self.on_relay(from, &frame.body, now);
                }
            }
            (ProtocolId::Store, FrameKind::Request) => {
                if can_serve {
                    self.serve_store(from, frame.request_id, &frame.body);
                } else {
                    debug!(peer = %from, "store query not served in this mode");
                }
            }
            (ProtocolId::Filter, FrameKind::Request) => {
                self.serve_filter(from, frame.request_id, &frame.body, can_serve, now)
            }
            (ProtocolId::Filter, FrameKind::Push) => self.on_filter_push(from, &frame.body),
            (ProtocolId::Lightpush, FrameKind::Request) => {
                self.serve_lightpush(from, frame.request_id, &frame.body, now)
            }
            (_, FrameKind::Response) => self.on_response(from, frame),
            _ => debug!(peer = %from, protocol = %frame.protocol, "unexpected frame kind"),
        }
    }

    fn on_relay(&mut self, from: &PeerId, body: &[u8], now: Nanos) {
        let Some(relay) = &mut self.relay else { return };
        match RelayRpc::decode(body, &self.limits) {
            Ok(rpc) => {
                let mut fx = Vec::new();
                relay.handle(from, rpc, now, &mut fx);
                self.apply_relay(fx, now);
            }
            Err(e) => debug!(peer = %from, error = %e, "malformed relay frame"),
        }
    }

    fn apply_relay(&mut self, effects: Vec<RelayEffect>, now: Nanos) {
        for effect in effects {
            match effect {
                RelayEffect::Send { to, rpc } => {
                    if self.is_connected(&to) {
                        self.send(&to, Frame::push(ProtocolId::Relay, rpc.encode()));
                    }
                }
                RelayEffect::Deliver {
                    topic,
                    msg,
                    digest,
                    from,
                } => self.outputs.push(Output::Delivered {
                    topic,
                    msg,
                    digest,
                    from,
                }),
                RelayEffect::Fresh { topic, msg, .. } => {
                    if let Some((Mode::Full, archive)) = &mut self.store {
                        archive.insert(msg.clone(), topic.clone(), now);
                    }
                    self.push_to_subscribers(&topic, &msg);
                }
            }
        }
    }

    fn push_to_subscribers(&mut self, topic: &PubsubTopic, msg: &WakuMessage) {
        let Some((Mode::Full, server)) = &self.filter else {
            return;
        };
        for (peer, push) in server.pushes_for(topic, msg) {
            let reachable = self.is_connected(&peer);
            if reachable {
                self.send(&peer, Frame::push(ProtocolId::Filter, push.encode()));
            }
            if let Some((_, server)) = &mut self.filter {
                if server.record_push(&push.subscription_id, reachable) {
                    debug!(%peer, id = %push.subscription_id, "dropped filter subscription after failed pushes");
                }
            }
        }
    }

    fn serve_store(&mut self, from: &PeerId, request_id: u64, body: &[u8]) {
        let Some((Mode::Full, archive)) = &self.store else {
            return;
        };
        let mut out = Vec::new();
        match HistoryQuery::decode(body) {
            Ok(q) => {
                let resp = fit_response(archive.query(&q), self.max_frame_body);
                out.push(STORE_OK);
                out.extend(resp.encode());
            }
            Err(e) => {
                out.push(STORE_ERR);
                let mut w = crate::codec::Writer::new();
                w.str(&format!("malformed query: {e}"));
                out.extend(w.finish());
            }
        }
        self.send(from, Frame::response(ProtocolId::Store, request_id, out));
    }

    fn serve_filter(&mut self, from: &PeerId, request_id: u64, body: &[u8], can_serve: bool, now: Nanos) {
        if self.filter.is_none() {
            return;
        }
        let response = match can_serve {
            false => FilterResponse::Error(FilterError::NotFullMode.to_string()),
            true => match FilterRequest::decode(body) {
                Err(e) => FilterResponse::Error(format!("malformed request: {e}")),
                Ok(FilterRequest::Subscribe {
                    pubsub_topic,
                    filter,
                }) => {
                    let (_, server) = self.filter.as_mut().expect("filter mounted");
                    match server.subscribe(from.clone(), pubsub_topic.clone(), filter, now, &mut self.rng) {
                        Ok(id) => {
                            // Pushes follow relay traffic, so the server relays the topic itself.
                            if let Some(relay) = &mut self.relay {
                                let mut fx = Vec::new();
                                relay.subscribe(pubsub_topic, &mut self.rng, &mut fx);
                                self.apply_relay(fx, now);
                            }
                            FilterResponse::Subscribed { id }
                        }
                        Err(e) => FilterResponse::Error(e.to_string()),
                    }
                }
                Ok(FilterRequest::Unsubscribe { id }) => {
                    let (_, server) = self.filter.as_mut().expect("filter mounted");
                    match server.unsubscribe(from, &id) {
                        Ok(()) => FilterResponse::Unsubscribed,
                        Err(e) => FilterResponse::Error(e.to_string()),
                    }
                }
            },
        };
        self.send(from, Frame::response(ProtocolId::Filter, request_id, response.encode()));
    }

    fn on_filter_push(&mut self, from: &PeerId, body: &[u8]) {
        let push = match MessagePush::decode(body, &self.limits) {
            Ok(p) => p,
            Err(e) => {
                debug!(peer = %from, error = %e, "malformed filter push");
                return;
            }
        };
        let sound = self.client_subs.get(&push.subscription_id).is_some_and(|s| {
            s.server == *from
                && s.pubsub_topic == push.pubsub_topic
                && crate::message::matches(&push.msg, &s.filter)
        });
        if sound {
            self.outputs.push(Output::FilterPush {
                from: from.clone(),
                push,
            });
        } else {
            debug!(peer = %from, "dropping unsolicited filter push");
        }
    }

    fn serve_lightpush(&mut self, from: &PeerId, request_id: u64, body: &[u8], now: Nanos) {
        let response = if self.relay.is_none() {
            PushResponse::failure(RelayError::NotMounted.to_string())
        } else if self.lightpush != Some(Mode::Full) {
            PushResponse::failure("lightpush not in full mode")
        } else {
            match PushRequest::decode(body, &self.limits) {
                Err(e) => PushResponse::failure(format!("malformed request: {e}")),
                Ok(req) => {
                    let relay = self.relay.as_mut().expect("relay mounted");
                    let mut fx = Vec::new();
                    let result = relay.publish(req.pubsub_topic, req.msg, now, &mut fx);
                    self.apply_relay(fx, now);
                    match result {
                        Ok(receipt) => PushResponse::success(receipt.eager_sends),
                        Err(e) => PushResponse::failure(e.to_string()),
                    }
                }
            }
        };
        self.send(from, Frame::response(ProtocolId::Lightpush, request_id, response.encode()));
    }

    fn on_response(&mut self, from: &PeerId, frame: Frame) {
        let matches_request = self.pending.get(&frame.request_id).is_some_and(|p| {
            p.peer == *from
                && matches!(
                    (&p.kind, frame.protocol),
                    (PendingKind::Store(_), ProtocolId::Store)
                        | (PendingKind::FilterSubscribe { .. }, ProtocolId::Filter)
                        | (PendingKind::FilterUnsubscribe { .. }, ProtocolId::Filter)
                        | (PendingKind::Lightpush, ProtocolId::Lightpush)
                )
        });
        if !matches_request {
            debug!(peer = %from, id = frame.request_id, "unmatched response");
            return;
        }
        let request_id = frame.request_id;
        let pending = self.pending.remove(&request_id).expect("checked above");
        let body = &frame.body;
        match pending.kind {
            PendingKind::Store(q) => {
                let result = decode_store_response(body, &self.limits).and_then(|resp| {
                    resp.validate(&q)?;
                    Ok(resp)
                });
                self.outputs.push(Output::StoreResult { request_id, result });
            }
            PendingKind::FilterSubscribe {
                pubsub_topic,
                filter,
            } => {
                let result = match FilterResponse::decode(body) {
                    Ok(FilterResponse::Subscribed { id }) => {
                        self.client_subs.insert(
                            id.clone(),
                            ClientSubscription {
                                server: from.clone(),
                                pubsub_topic,
                                filter,
                            },
                        );
                        Ok(id)
                    }
                    Ok(FilterResponse::Error(e)) => Err(remote_filter_error(e)),
                    Ok(FilterResponse::Unsubscribed) => {
                        Err(FilterError::Remote("unexpected unsubscribe ack".into()))
                    }
                    Err(e) => Err(e.into()),
                };
                self.outputs.push(Output::FilterSubscribed { request_id, result });
            }
            PendingKind::FilterUnsubscribe { id } => {
                let result = match FilterResponse::decode(body) {
                    Ok(FilterResponse::Unsubscribed) => {
                        self.client_subs.remove(&id);
                        Ok(())
                    }
                    Ok(FilterResponse::Error(e)) => Err(remote_filter_error(e)),
                    Ok(FilterResponse::Subscribed { .. }) => {
                        Err(FilterError::Remote("unexpected subscribe ack".into()))
                    }
                    Err(e) => Err(e.into()),
                };
                self.outputs.push(Output::FilterUnsubscribed { request_id, result });
            }
            PendingKind::Lightpush => {
                let result = PushResponse::decode(body).map_err(LightpushError::from);
                self.outputs.push(Output::LightpushResult { request_id, result });
            }
        }
    }

    // ---- timers ------------------------------------------------------

    pub fn on_timer(&mut self, now: Nanos) {
        let expired: Vec<PeerId> = self
            .conns
            .iter()
            .filter_map(|(p, c)| match c {
                Conn::Handshaking { deadline } if *deadline <= now => Some(p.clone()),
                _ => None,
            })
            .collect();
        for peer in expired {
            self.close(&peer, "handshake timed out".into(), now);
        }
        let timed_out: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in timed_out {
            let p = self.pending.remove(&id).expect("pending entry");
            self.fail_pending(id, p.kind, Failure::Timeout);
        }
        if self.heartbeat_due.is_some_and(|due| due <= now) {
            self.heartbeat_due = None;
            self.last_heartbeat = Some(now);
            if let Some(relay) = &mut self.relay {
                let mut fx = Vec::new();
                relay.heartbeat(now, &mut self.rng, &mut fx);
                self.apply_relay(fx, now);
            }
        }
        self.settle(now);
    }

    /// Arms or disarms the heartbeat. Heartbeats sit on the grid
    /// `origin + k * interval` and only run while the relay has work.
    fn settle(&mut self, now: Nanos) {
        let wants = self.relay.as_ref().is_some_and(Relay::wants_heartbeat);
        if !wants {
            self.heartbeat_due = None;
            return;
        }
        if self.heartbeat_due.is_some() {
            return;
        }
        let floor = self.last_heartbeat.map_or(now, |t| now.max(t + 1));
        let offset = floor - self.heartbeat_origin;
        let k = (offset + self.heartbeat_interval - 1).div_euclid(self.heartbeat_interval);
        self.heartbeat_due = Some(self.heartbeat_origin + k * self.heartbeat_interval);
    }

    fn fail_pending(&mut self, request_id: u64, kind: PendingKind, why: Failure) {
        let out = match kind {
            PendingKind::Store(_) => Output::StoreResult {
                request_id,
                result: Err(match why {
                    Failure::Timeout => StoreError::Timeout,
                    Failure::Disconnected => StoreError::Disconnected,
                }),
            },
            PendingKind::FilterSubscribe { .. } => Output::FilterSubscribed {
                request_id,
                result: Err(why.filter()),
            },
            PendingKind::FilterUnsubscribe { .. } => Output::FilterUnsubscribed {
                request_id,
                result: Err(why.filter()),
            },
            PendingKind::Lightpush => Output::LightpushResult {
                request_id,
                result: Err(match why {
                    Failure::Timeout => LightpushError::Timeout,
                    Failure::Disconnected => LightpushError::Disconnected,
                }),
            },
        };
        self.outputs.push(out);
    }

    // ---- local API -----------------------------------------------------

    pub fn subscribe(&mut self, topic: PubsubTopic, now: Nanos) -> Result<bool, RelayError> {
        let relay = self.relay.as_mut().ok_or(RelayError::NotMounted)?;
        let mut fx = Vec::new();
        let changed = relay.subscribe(topic, &mut self.rng, &mut fx);
        self.apply_relay(fx, now);
        self.settle(now);
        Ok(changed)
    }

    pub fn unsubscribe(&mut self, topic: &PubsubTopic, now: Nanos) -> Result<bool, RelayError> {
        let relay = self.relay.as_mut().ok_or(RelayError::NotMounted)?;
        let mut fx = Vec::new();
        let changed = relay.unsubscribe(topic, &mut fx);
        self.apply_relay(fx, now);
        self.settle(now);
        Ok(changed)
    }

    pub fn publish(
        &mut self,
        topic: PubsubTopic,
        msg: WakuMessage,
        now: Nanos,
    ) -> Result<PublishReceipt, RelayError> {
        let relay = self.relay.as_mut().ok_or(RelayError::NotMounted)?;
        let mut fx = Vec::new();
        let receipt = relay.publish(topic, msg, now, &mut fx)?;
        self.apply_relay(fx, now);
        self.settle(now);
        Ok(receipt)
    }

    /// Answers a query from the node's own archive.
    pub fn local_store_query(&self, q: &HistoryQuery) -> Result<HistoryResponse, StoreError> {
        match &self.store {
            None => Err(StoreError::NotMounted),
            Some((Mode::Light, _)) => Err(StoreError::NotFullMode),
            Some((Mode::Full, archive)) => Ok(archive.query(q)),
        }
    }

    fn request_target(&self, peer: &PeerId, protocol: ProtocolId) -> bool {
        self.usable(peer)
            .is_some_and(|u| u.can_request.contains(&protocol))
    }

    fn start_request(&mut self, peer: &PeerId, frame_body: Vec<u8>, protocol: ProtocolId, kind: PendingKind, now: Nanos) -> u64 {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        self.pending.insert(
            request_id,
            Pending {
                peer: peer.clone(),
                deadline: now + REQUEST_TIMEOUT_NS,
                kind,
            },
        );
        self.send(peer, Frame::request(protocol, request_id, frame_body));
        self.settle(now);
        request_id
    }

    /// Sends a history query; the answer arrives as [`Output::StoreResult`].
    pub fn store_query(&mut self, peer: &PeerId, q: HistoryQuery, now: Nanos) -> Result<u64, StoreError> {
        if self.store.is_none() {
            return Err(StoreError::NotMounted);
        }
        if !self.request_target(peer, ProtocolId::Store) {
            return Err(StoreError::NotAdvertised(peer.to_string()));
        }
        let body = q.encode();
        Ok(self.start_request(peer, body, ProtocolId::Store, PendingKind::Store(q), now))
    }

    pub fn filter_subscribe(
        &mut self,
        peer: &PeerId,
        pubsub_topic: PubsubTopic,
        filter: ContentFilter,
        now: Nanos,
    ) -> Result<u64, FilterError> {
        if self.filter.is_none() {
            return Err(FilterError::NotMounted);
        }
        if !self.request_target(peer, ProtocolId::Filter) {
            return Err(FilterError::NotAdvertised(peer.to_string()));
        }
        let body = FilterRequest::Subscribe {
            pubsub_topic: pubsub_topic.clone(),
            filter: filter.clone(),
        }
        .encode();
        let kind = PendingKind::FilterSubscribe {
            pubsub_topic,
            filter,
        };
        Ok(self.start_request(peer, body, ProtocolId::Filter, kind, now))
    }

    pub fn filter_unsubscribe(&mut self, peer: &PeerId, id: &str, now: Nanos) -> Result<u64, FilterError> {
        if self.filter.is_none() {
            return Err(FilterError::NotMounted);
        }
        if !self.request_target(peer, ProtocolId::Filter) {
            return Err(FilterError::NotAdvertised(peer.to_string()));
        }
        let body = FilterRequest::Unsubscribe { id: id.to_owned() }.encode();
        let kind = PendingKind::FilterUnsubscribe { id: id.to_owned() };
        Ok(self.start_request(peer, body, ProtocolId::Filter, kind, now))
    }

    pub fn lightpush(
        &mut self,
        peer: &PeerId,
        pubsub_topic: PubsubTopic,
        msg: WakuMessage,
        now: Nanos,
    ) -> Result<u64, LightpushError> {
        if self.lightpush.is_none() {
            return Err(LightpushError::NotMounted);
        }
        msg.validate(&self.limits)?;
        if !self.request_target(peer, ProtocolId::Lightpush) {
            return Err(LightpushError::NotAdvertised(peer.to_string()));
        }
        let body = PushRequest { pubsub_topic, msg }.encode();
        Ok(self.start_request(peer, body, ProtocolId::Lightpush, PendingKind::Lightpush, now))
    }
}

#[derive(Debug, Clone, Copy)]
enum Failure {
    Timeout,
    Disconnected,
}

impl Failure {
    fn filter(self) -> FilterError {
        match self {
            Failure::Timeout => FilterError::Timeout,
            Failure::Disconnected => FilterError::Disconnected,
        }
    }
}

fn remote_filter_error(text: String) -> FilterError {
    [
        FilterError::TooManySubscriptions,
        FilterError::NoSuchSubscription,
        FilterError::NotFullMode,
    ]
    .into_iter()
    .find(|e| e.to_string() == text)
    .unwrap_or(FilterError::Remote(text))
}

fn decode_store_response(body: &[u8], limits: &MessageLimits) -> Result<HistoryResponse, StoreError> {
    let mut r = crate::codec::Reader::new(body);
    match r.u8()? {
        STORE_OK => Ok(HistoryResponse::decode(r.rest(), limits)?),
        STORE_ERR => {
            let text = r.str(4096)?.to_owned();
            r.finish()?;
            Err(StoreError::Remote(text))
        }
        other => Err(StoreError::Decode(crate::codec::DecodeError::new(
            0,
            format!("unknown store response status {other}"),
        ))),
    }
}

/// Short label and carried digest of a frame, for transcripts and logs.
pub fn describe_frame(frame: &Frame, limits: &MessageLimits) -> (&'static str, Option<MessageDigest>) {
    match (frame.protocol, frame.kind) {
        (ProtocolId::Handshake, _) => ("HANDSHAKE", None),
        (ProtocolId::Relay, _) => match RelayRpc::decode(&frame.body, limits) {
            Ok(rpc) => {
                let digest = match &rpc {
                    RelayRpc::Message { msg, .. } => Some(msg.digest()),
                    _ => None,
                };
                (rpc.label(), digest)
            }
            Err(_) => ("MALFORMED", None),
        },
        (ProtocolId::Store, FrameKind::Request) => ("STORE_QUERY", None),
        (ProtocolId::Store, _) => ("STORE_RESPONSE", None),
        (ProtocolId::Filter, FrameKind::Request) => match FilterRequest::decode(&frame.body) {
            Ok(r) => (r.label(), None),
            Err(_) => ("MALFORMED", None),
        },
        (ProtocolId::Filter, FrameKind::Response) => ("FILTER_RESPONSE", None),
        (ProtocolId::Filter, FrameKind::Push) => match MessagePush::decode(&frame.body, limits) {
            Ok(p) => ("MESSAGE_PUSH", Some(p.msg.digest())),
            Err(_) => ("MALFORMED", None),
        },
        (ProtocolId::Lightpush, FrameKind::Request) => match PushRequest::decode(&frame.body, limits) {
            Ok(r) => ("LIGHTPUSH_REQUEST", Some(r.msg.digest())),
            Err(_) => ("MALFORMED", None),
        },
        (ProtocolId::Lightpush, _) => ("LIGHTPUSH_RESPONSE", None),
    }
}
