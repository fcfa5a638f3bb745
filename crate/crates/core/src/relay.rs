//! Gossip relay: eager push inside a bounded-degree mesh, lazy IHAVE/IWANT
//! repair outside it, and TTL-bounded duplicate suppression.
//!
//! The relay is a pure state machine. Every entry point appends the frames
//! it wants sent and the deliveries it produced to a caller-owned effect
//! list; the node decides how to transport them.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;
use tracing::debug;

use crate::codec::{DecodeError, Reader, Writer};
use crate::message::{
    read_message, write_message, MessageDigest, MessageError, MessageLimits, PubsubTopic,
    WakuMessage, DEFAULT_MAX_TOPIC_LEN,
};
use crate::wire::PeerId;
use crate::Nanos;

const MAX_DIGESTS_PER_FRAME: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayParams {
    /// Target mesh degree D; the mesh is pruned above 2·D.
    pub mesh_degree: usize,
    pub heartbeat_interval: Duration,
    pub seen_ttl: Duration,
    /// Heartbeats a digest stays advertised in IHAVE and answerable by IWANT.
    pub gossip_window: usize,
}

impl Default for RelayParams {
    fn default() -> Self {
        Self {
            mesh_degree: 6,
            heartbeat_interval: Duration::from_secs(1),
            seen_ttl: Duration::from_secs(120),
            gossip_window: 3,
        }
    }
}

impl RelayParams {
    pub fn mesh_high(&self) -> usize {
        2 * self.mesh_degree
    }

    pub fn validate(&self) -> Result<(), RelayError> {
        if self.mesh_degree == 0 {
            return Err(RelayError::InvalidParams("mesh degree must be at least 1"));
        }
        if self.heartbeat_interval.is_zero() {
            return Err(RelayError::InvalidParams("heartbeat interval must be positive"));
        }
        if self.seen_ttl <= self.heartbeat_interval {
            return Err(RelayError::InvalidParams(
                "seen ttl must exceed the heartbeat interval",
            ));
        }
        if self.gossip_window == 0 {
            return Err(RelayError::InvalidParams("gossip window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("relay not mounted")]
    NotMounted,
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("invalid relay parameters: {0}")]
    InvalidParams(&'static str),
}

/// Control and data messages carried under the relay protocol id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayRpc {
    Message { topic: PubsubTopic, msg: WakuMessage },
    IHave { topic: PubsubTopic, digests: Vec<MessageDigest> },
    IWant { digests: Vec<MessageDigest> },
    Subscribe { topic: PubsubTopic },
    Unsubscribe { topic: PubsubTopic },
}

impl RelayRpc {
    pub fn label(&self) -> &'static str {
        match self {
            RelayRpc::Message { .. } => "MESSAGE",
            RelayRpc::IHave { .. } => "IHAVE",
            RelayRpc::IWant { .. } => "IWANT",
            RelayRpc::Subscribe { .. } => "SUBSCRIBE",
            RelayRpc::Unsubscribe { .. } => "UNSUBSCRIBE",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            RelayRpc::Message { topic, msg } => {
                w.u8(1).str(topic.as_str());
                write_message(&mut w, msg);
            }
            RelayRpc::IHave { topic, digests } => {
                w.u8(2).str(topic.as_str()).u32(digests.len() as u32);
                for d in digests {
                    w.raw(&d.0);
                }
            }
            RelayRpc::IWant { digests } => {
                w.u8(3).u32(digests.len() as u32);
                for d in digests {
                    w.raw(&d.0);
                }
            }
            RelayRpc::Subscribe { topic } => {
                w.u8(4).str(topic.as_str());
            }
            RelayRpc::Unsubscribe { topic } => {
                w.u8(5).str(topic.as_str());
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], limits: &MessageLimits) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let at = r.position();
        let rpc = match r.u8()? {
            1 => {
                let topic = read_topic(&mut r)?;
                let msg = read_message(&mut r, limits)?;
                RelayRpc::Message { topic, msg }
            }
            2 => {
                let topic = read_topic(&mut r)?;
                let digests = read_digests(&mut r)?;
                RelayRpc::IHave { topic, digests }
            }
            3 => RelayRpc::IWant {
                digests: read_digests(&mut r)?,
            },
            4 => RelayRpc::Subscribe {
                topic: read_topic(&mut r)?,
            },
            5 => RelayRpc::Unsubscribe {
                topic: read_topic(&mut r)?,
            },
            other => {
                return Err(DecodeError::new(
                    at,
                    format!("unknown relay message type {other}"),
                ))
            }
        };
        r.finish()?;
        Ok(rpc)
    }
}

pub(crate) fn read_topic(r: &mut Reader<'_>) -> Result<PubsubTopic, DecodeError> {
    let at = r.position();
    let s = r.str(DEFAULT_MAX_TOPIC_LEN)?;
    PubsubTopic::new(s).map_err(|e| DecodeError::new(at, e.to_string()))
}

fn read_digests(r: &mut Reader<'_>) -> Result<Vec<MessageDigest>, DecodeError> {
    let at = r.position();
    let n = r.u32()?;
    if n > MAX_DIGESTS_PER_FRAME {
        return Err(DecodeError::new(at, format!("{n} digests exceeds limit")));
    }
    (0..n)
        .map(|_| Ok(MessageDigest(r.take(32)?.try_into().unwrap())))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicState {
    /// Peers we eagerly push to. Always a subset of `known_peers`.
    pub mesh_peers: BTreeSet<PeerId>,
    /// Relay peers that announced a subscription to the topic.
    pub known_peers: BTreeSet<PeerId>,
    pub subscribed_locally: bool,
}

/// Digest set with per-entry expiry. Expired entries count as absent even
/// before [`SeenCache::prune`] removes them.
#[derive(Debug, Clone)]
pub struct SeenCache {
    entries: HashMap<MessageDigest, Nanos>,
    order: VecDeque<(Nanos, MessageDigest)>,
    ttl: Nanos,
}

impl SeenCache {
    pub fn new(ttl: Duration) -> Self {
        Self {
            entries: HashMap::new(),
            order: VecDeque::new(),
            ttl: ttl.as_nanos() as Nanos,
        }
    }

    pub fn contains(&self, digest: &MessageDigest, now: Nanos) -> bool {
        self.entries
            .get(digest)
            .is_some_and(|t| now - *t <= self.ttl)
    }

    /// Returns true if the digest was not already present.
    pub fn insert(&mut self, digest: MessageDigest, now: Nanos) -> bool {
        if self.contains(&digest, now) {
            return false;
        }
        self.entries.insert(digest, now);
        self.order.push_back((now, digest));
        true
    }

    pub fn prune(&mut self, now: Nanos) {
        while let Some((t, d)) = self.order.front().copied() {
            if now - t <= self.ttl {
                break;
            }
            self.order.pop_front();
            // A re-inserted digest has a newer timestamp; keep it.
            if self.entries.get(&d) == Some(&t) {
                self.entries.remove(&d);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayEffect {
    Send {
        to: PeerId,
        rpc: RelayRpc,
    },
    /// Fresh message on a locally subscribed topic, handed to the application.
    Deliver {
        topic: PubsubTopic,
        msg: WakuMessage,
        digest: MessageDigest,
        from: Option<PeerId>,
    },
    /// Every fresh message the relay processes, subscribed or not. Store and
    /// filter hook in here.
    Fresh {
        topic: PubsubTopic,
        msg: WakuMessage,
        digest: MessageDigest,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReceipt {
    pub digest: MessageDigest,
    pub eager_sends: usize,
}

#[derive(Debug, Clone)]
struct Retained {
    topic: PubsubTopic,
    msg: WakuMessage,
    /// Peers that sent us this message or that we sent it to.
    exchanged: BTreeSet<PeerId>,
}

#[derive(Debug, Clone)]
pub struct Relay {
    params: RelayParams,
    limits: MessageLimits,
    topics: BTreeMap<PubsubTopic, TopicState>,
    peers: BTreeSet<PeerId>,
    seen: SeenCache,
    history: VecDeque<Vec<MessageDigest>>,
    retained: BTreeMap<MessageDigest, Retained>,
}

impl Relay {
    pub fn new(params: RelayParams, limits: MessageLimits) -> Self {
        let seen = SeenCache::new(params.seen_ttl);
        let mut history = VecDeque::with_capacity(params.gossip_window);
        history.push_front(Vec::new());
        Self {
            params,
            limits,
            topics: BTreeMap::new(),
            peers: BTreeSet::new(),
            seen,
            history,
            retained: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &RelayParams {
        &self.params
    }

    pub fn limits(&self) -> &MessageLimits {
        &self.limits
    }

    pub fn topic(&self, topic: &PubsubTopic) -> Option<&TopicState> {
        self.topics.get(topic)
    }

    pub fn is_subscribed(&self, topic: &PubsubTopic) -> bool {
        self.topics.get(topic).is_some_and(|t| t.subscribed_locally)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &PubsubTopic> {
        self.topics
            .iter()
            .filter(|(_, s)| s.subscribed_locally)
            .map(|(t, _)| t)
    }

    pub fn peers(&self) -> &BTreeSet<PeerId> {
        &self.peers
    }

    pub fn seen(&self) -> &SeenCache {
        &self.seen
    }

    /// A connected peer advertised relay. Announces our subscriptions to it.
    pub fn add_peer(&mut self, peer: PeerId, effects: &mut Vec<RelayEffect>) {
        if !self.peers.insert(peer.clone()) {
            return;
        }
        for topic in self.subscriptions() {
            effects.push(RelayEffect::Send {
                to: peer.clone(),
                rpc: RelayRpc::Subscribe {
                    topic: topic.clone(),
                },
            });
        }
    }

    pub fn remove_peer(&mut self, peer: &PeerId) {
        self.peers.remove(peer);
        for state in self.topics.values_mut() {
            state.known_peers.remove(peer);
            state.mesh_peers.remove(peer);
        }
    }

    /// Returns false if already subscribed.
    pub fn subscribe<R: Rng>(
        &mut self,
        topic: PubsubTopic,
        rng: &mut R,
        effects: &mut Vec<RelayEffect>,
    ) -> bool {
        let d = self.params.mesh_degree;
        let state = self.topics.entry(topic.clone()).or_default();
        if state.subscribed_locally {
            return false;
        }
        state.subscribed_locally = true;
        graft_up_to(state, d, rng);
        for peer in &self.peers {
            effects.push(RelayEffect::Send {
                to: peer.clone(),
                rpc: RelayRpc::Subscribe {
                    topic: topic.clone(),
                },
            });
        }
        true
    }

    /// Returns false if the topic was not subscribed.
    pub fn unsubscribe(&mut self, topic: &PubsubTopic, effects: &mut Vec<RelayEffect>) -> bool {
        let Some(state) = self.topics.get_mut(topic) else {
            return false;
        };
        if !state.subscribed_locally {
            return false;
        }
        state.subscribed_locally = false;
        for peer in &self.peers {
            effects.push(RelayEffect::Send {
                to: peer.clone(),
                rpc: RelayRpc::Unsubscribe {
                    topic: topic.clone(),
                },
            });
        }
        true
    }

    /// Publishing does not require a local subscription.
    pub fn publish(
        &mut self,
        topic: PubsubTopic,
        msg: WakuMessage,
        now: Nanos,
        effects: &mut Vec<RelayEffect>,
    ) -> Result<PublishReceipt, RelayError> {
        msg.validate(&self.limits)?;
        let digest = msg.digest();
        if !self.seen.insert(digest, now) {
            return Ok(PublishReceipt {
                digest,
                eager_sends: 0,
            });
        }
        let eager_sends = self.accept(topic, msg, digest, None, effects);
        Ok(PublishReceipt {
            digest,
            eager_sends,
        })
    }

    pub fn handle(
        &mut self,
        from: &PeerId,
        rpc: RelayRpc,
        now: Nanos,
        effects: &mut Vec<RelayEffect>,
    ) {
        match rpc {
            RelayRpc::Message { topic, msg } => {
                if let Err(e) = msg.validate(&self.limits) {
                    debug!(peer = %from, error = %e, "dropping invalid relay message");
                    return;
                }
                let digest = msg.digest();
                if !self.seen.insert(digest, now) {
                    if let Some(r) = self.retained.get_mut(&digest) {
                        r.exchanged.insert(from.clone());
                    }
                    return;
                }
                self.accept(topic, msg, digest, Some(from.clone()), effects);
            }
            RelayRpc::IHave { topic, digests } => {
                if !self.is_subscribed(&topic) {
                    return;
                }
                let wanted: Vec<_> = digests
                    .into_iter()
                    .filter(|d| !self.seen.contains(d, now))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if !wanted.is_empty() {
                    effects.push(RelayEffect::Send {
                        to: from.clone(),
                        rpc: RelayRpc::IWant { digests: wanted },
                    });
                }
            }
            RelayRpc::IWant { digests } => {
                for d in digests {
                    let Some(r) = self.retained.get_mut(&d) else {
                        continue;
                    };
                    if r.exchanged.insert(from.clone()) {
                        effects.push(RelayEffect::Send {
                            to: from.clone(),
                            rpc: RelayRpc::Message {
                                topic: r.topic.clone(),
                                msg: r.msg.clone(),
                            },
                        });
                    }
                }
            }
            RelayRpc::Subscribe { topic } => {
                if !self.peers.contains(from) {
                    return;
                }
                let d = self.params.mesh_degree;
                let state = self.topics.entry(topic).or_default();
                state.known_peers.insert(from.clone());
                if state.mesh_peers.len() < d {
                    state.mesh_peers.insert(from.clone());
                }
            }
            RelayRpc::Unsubscribe { topic } => {
                if let Some(state) = self.topics.get_mut(&topic) {
                    state.known_peers.remove(from);
                    state.mesh_peers.remove(from);
                }
            }
        }
    }

    /// Records a fresh message and pushes it to the mesh. Returns the number of eager sends.
    fn accept(
        &mut self,
        topic: PubsubTopic,
        msg: WakuMessage,
        digest: MessageDigest,
        from: Option<PeerId>,
        effects: &mut Vec<RelayEffect>,
    ) -> usize {
        let mut exchanged = BTreeSet::new();
        exchanged.extend(from.clone());
        effects.push(RelayEffect::Fresh {
            topic: topic.clone(),
            msg: msg.clone(),
            digest,
        });
        if self.is_subscribed(&topic) {
            effects.push(RelayEffect::Deliver {
                topic: topic.clone(),
                msg: msg.clone(),
                digest,
                from,
            });
        }
        let mut sends = 0;
        if let Some(state) = self.topics.get(&topic) {
            for peer in &state.mesh_peers {
                if exchanged.insert(peer.clone()) {
                    effects.push(RelayEffect::Send {
                        to: peer.clone(),
                        rpc: RelayRpc::Message {
                            topic: topic.clone(),
                            msg: msg.clone(),
                        },
                    });
                    sends += 1;
                }
            }
        }
        self.history.front_mut().expect("history slot").push(digest);
        self.retained.insert(
            digest,
            Retained {
                topic,
                msg,
                exchanged,
            },
        );
        sends
    }

    /// Whether a heartbeat would change anything: mesh below target with
    /// candidates available, mesh above the high mark, or digests to gossip.
    pub fn wants_heartbeat(&self) -> bool {
        let d = self.params.mesh_degree;
        let mesh_work = self.topics.values().any(|s| {
            (s.mesh_peers.len() < d && s.known_peers.len() > s.mesh_peers.len())
                || s.mesh_peers.len() > self.params.mesh_high()
        });
        mesh_work || self.history.iter().any(|slot| !slot.is_empty())
    }

    pub fn heartbeat<R: Rng>(&mut self, now: Nanos, rng: &mut R, effects: &mut Vec<RelayEffect>) {
        let d = self.params.mesh_degree;
        let high = self.params.mesh_high();
        let gossip: Vec<MessageDigest> = self.history.iter().rev().flatten().copied().collect();

        for (topic, state) in self.topics.iter_mut() {
            if state.mesh_peers.len() < d {
                graft_up_to(state, d, rng);
            } else if state.mesh_peers.len() > high {
                let mut mesh: Vec<_> = state.mesh_peers.iter().cloned().collect();
                mesh.shuffle(rng);
                state.mesh_peers = mesh.into_iter().take(d).collect();
            }

            let topic_digests: Vec<MessageDigest> = gossip
                .iter()
                .filter(|g| self.retained.get(g).is_some_and(|r| &r.topic == topic))
                .copied()
                .collect();
            if topic_digests.is_empty() {
                continue;
            }
            let mut outside: Vec<_> = state
                .known_peers
                .difference(&state.mesh_peers)
                .cloned()
                .collect();
            outside.shuffle(rng);
            for peer in outside.into_iter().take(d) {
                let digests: Vec<_> = topic_digests
                    .iter()
                    .filter(|g| !self.retained[g].exchanged.contains(&peer))
                    .copied()
                    .collect();
                if !digests.is_empty() {
                    effects.push(RelayEffect::Send {
                        to: peer,
                        rpc: RelayRpc::IHave {
                            topic: topic.clone(),
                            digests,
                        },
                    });
                }
            }
        }

        self.history.push_front(Vec::new());
        while self.history.len() > self.params.gossip_window {
            if let Some(old) = self.history.pop_back() {
                for d in old {
                    self.retained.remove(&d);
                }
            }
        }
        self.seen.prune(now);
    }
}

fn graft_up_to<R: Rng>(state: &mut TopicState, d: usize, rng: &mut R) {
    if state.mesh_peers.len() >= d {
        return;
    }
    let mut candidates: Vec<_> = state
        .known_peers
        .difference(&state.mesh_peers)
        .cloned()
        .collect();
    candidates.shuffle(rng);
    let need = d - state.mesh_peers.len();
    state.mesh_peers.extend(candidates.into_iter().take(need));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pid(s: &str) -> PeerId {
        PeerId::new(s).unwrap()
    }

    fn topic(s: &str) -> PubsubTopic {
        PubsubTopic::new(s).unwrap()
    }

    fn relay() -> Relay {
        Relay::new(RelayParams::default(), MessageLimits::default())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn sends(effects: &[RelayEffect]) -> Vec<(&PeerId, &'static str)> {
        effects
            .iter()
            .filter_map(|e| match e {
                RelayEffect::Send { to, rpc } => Some((to, rpc.label())),
                _ => None,
            })
            .collect()
    }

    fn deliveries(effects: &[RelayEffect]) -> usize {
        effects
            .iter()
            .filter(|e| matches!(e, RelayEffect::Deliver { .. }))
            .count()
    }

    #[test]
    fn params_validation() {
        assert!(RelayParams::default().validate().is_ok());
        let mut p = RelayParams::default();
        p.mesh_degree = 0;
        assert!(p.validate().is_err());
        let mut p = RelayParams::default();
        p.seen_ttl = p.heartbeat_interval;
        assert!(p.validate().is_err());
    }

    #[test]
    fn subscribe_is_idempotent() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        r.add_peer(pid("C"), &mut fx);
        assert!(fx.is_empty());
        assert!(r.subscribe(topic("pub1"), &mut rng(), &mut fx));
        assert!(!r.subscribe(topic("pub1"), &mut rng(), &mut fx));
        assert_eq!(sends(&fx), vec![(&pid("B"), "SUBSCRIBE"), (&pid("C"), "SUBSCRIBE")]);
    }

    #[test]
    fn unsubscribe_never_subscribed_is_noop() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        assert!(!r.unsubscribe(&topic("pub1"), &mut fx));
        assert!(fx.is_empty());
    }

    #[test]
    fn remote_subscribe_registers_known_peer() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        r.handle(&pid("B"), RelayRpc::Subscribe { topic: topic("pub1") }, 0, &mut fx);
        let state = r.topic(&topic("pub1")).unwrap();
        assert!(state.known_peers.contains(&pid("B")));
        assert!(state.mesh_peers.contains(&pid("B")));
    }

    #[test]
    fn subscribe_from_non_relay_peer_ignored() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.handle(&pid("X"), RelayRpc::Subscribe { topic: topic("pub1") }, 0, &mut fx);
        assert!(r.topic(&topic("pub1")).is_none());
    }

    #[test]
    fn local_publish_without_peers() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.subscribe(topic("pub1"), &mut rng(), &mut fx);
        let receipt = r
            .publish(topic("pub1"), WakuMessage::new("content1", b"msg1".to_vec()), 0, &mut fx)
            .unwrap();
        assert_eq!(receipt.eager_sends, 0);
        assert_eq!(deliveries(&fx), 1);
    }

    #[test]
    fn republish_is_deduplicated() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        r.subscribe(topic("pub1"), &mut rng(), &mut fx);
        r.handle(&pid("B"), RelayRpc::Subscribe { topic: topic("pub1") }, 0, &mut fx);
        let msg = WakuMessage::new("content1", b"msg1".to_vec());
        fx.clear();
        let first = r.publish(topic("pub1"), msg.clone(), 0, &mut fx).unwrap();
        assert_eq!(first.eager_sends, 1);
        assert_eq!(deliveries(&fx), 1);
        fx.clear();
        let again = r.publish(topic("pub1"), msg.with_timestamp(5), 10, &mut fx).unwrap();
        assert_eq!(again.eager_sends, 0);
        assert!(fx.is_empty());
    }

    #[test]
    fn oversize_publish_rejected() {
        let mut r = Relay::new(
            RelayParams::default(),
            MessageLimits {
                max_payload: 2,
                ..Default::default()
            },
        );
        let mut fx = Vec::new();
        let err = r
            .publish(topic("t"), WakuMessage::new("c", vec![0; 3]), 0, &mut fx)
            .unwrap_err();
        assert!(matches!(err, RelayError::Message(MessageError::PayloadTooLarge { .. })));
    }

    fn two_neighbours() -> Relay {
        let mut r = relay();
        let mut fx = Vec::new();
        for p in ["B", "C", "D"] {
            r.add_peer(pid(p), &mut fx);
        }
        r.subscribe(topic("pub1"), &mut rng(), &mut fx);
        for p in ["B", "C", "D"] {
            r.handle(&pid(p), RelayRpc::Subscribe { topic: topic("pub1") }, 0, &mut fx);
        }
        r
    }

    #[test]
    fn incoming_message_forwarded_to_mesh_minus_sender() {
        let mut r = two_neighbours();
        let mut fx = Vec::new();
        let msg = WakuMessage::new("content1", b"x".to_vec());
        r.handle(
            &pid("B"),
            RelayRpc::Message { topic: topic("pub1"), msg: msg.clone() },
            0,
            &mut fx,
        );
        assert_eq!(deliveries(&fx), 1);
        assert_eq!(sends(&fx), vec![(&pid("C"), "MESSAGE"), (&pid("D"), "MESSAGE")]);

        fx.clear();
        r.handle(
            &pid("C"),
            RelayRpc::Message { topic: topic("pub1"), msg },
            1,
            &mut fx,
        );
        assert!(fx.is_empty(), "duplicate from second neighbour is dropped");
    }

    #[test]
    fn ihave_for_unseen_digest_triggers_iwant() {
        let mut r = two_neighbours();
        let mut fx = Vec::new();
        let d = WakuMessage::new("c", b"y".to_vec()).digest();
        r.handle(
            &pid("B"),
            RelayRpc::IHave { topic: topic("pub1"), digests: vec![d, d] },
            0,
            &mut fx,
        );
        assert_eq!(
            fx,
            vec![RelayEffect::Send { to: pid("B"), rpc: RelayRpc::IWant { digests: vec![d] } }]
        );
    }

    #[test]
    fn iwant_answered_once_from_retained_window() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        let msg = WakuMessage::new("c", b"z".to_vec());
        let d = r.publish(topic("pub1"), msg.clone(), 0, &mut fx).unwrap().digest;
        fx.clear();
        let want = RelayRpc::IWant { digests: vec![d] };
        r.handle(&pid("B"), want.clone(), 1, &mut fx);
        assert_eq!(sends(&fx), vec![(&pid("B"), "MESSAGE")]);
        fx.clear();
        r.handle(&pid("B"), want.clone(), 2, &mut fx);
        assert!(fx.is_empty());

        for i in 0..3 {
            r.heartbeat(i, &mut rng(), &mut fx);
        }
        fx.clear();
        r.handle(&pid("C"), RelayRpc::IWant { digests: vec![d] }, 5, &mut fx);
        assert!(fx.is_empty(), "outside the retention window");
    }

    #[test]
    fn heartbeat_with_single_known_peer_clamps_mesh() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.add_peer(pid("B"), &mut fx);
        r.handle(&pid("B"), RelayRpc::Subscribe { topic: topic("t") }, 0, &mut fx);
        r.heartbeat(0, &mut rng(), &mut fx);
        let state = r.topic(&topic("t")).unwrap();
        assert_eq!(state.mesh_peers, BTreeSet::from([pid("B")]));
    }

    #[test]
    fn heartbeat_keeps_mesh_within_bounds() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = relay();
            let mut fx = Vec::new();
            let peers: Vec<_> = (0..20).map(|i| pid(&format!("p{i}"))).collect();
            for p in &peers {
                r.add_peer(p.clone(), &mut fx);
                r.handle(p, RelayRpc::Subscribe { topic: topic("t") }, 0, &mut fx);
            }
            // Force an oversized mesh, as after a degree change.
            r.topics.get_mut(&topic("t")).unwrap().mesh_peers = peers.iter().cloned().collect();
            r.heartbeat(0, &mut rng, &mut fx);
            let n = r.topic(&topic("t")).unwrap().mesh_peers.len();
            assert!((6..=12).contains(&n), "seed {seed}: mesh {n}");
            r.topics.get_mut(&topic("t")).unwrap().mesh_peers.clear();
            r.heartbeat(1, &mut rng, &mut fx);
            let state = r.topic(&topic("t")).unwrap();
            assert!((6..=12).contains(&state.mesh_peers.len()));
            assert!(state.mesh_peers.is_subset(&state.known_peers));
        }
    }

    #[test]
    fn heartbeat_gossips_to_non_mesh_peers() {
        let mut r = relay();
        r.params.mesh_degree = 1;
        let mut fx = Vec::new();
        let mut rng = rng();
        for p in ["B", "C"] {
            r.add_peer(pid(p), &mut fx);
            r.handle(&pid(p), RelayRpc::Subscribe { topic: topic("t") }, 0, &mut fx);
        }
        r.subscribe(topic("t"), &mut rng, &mut fx);
        fx.clear();
        r.publish(topic("t"), WakuMessage::new("c", b"m".to_vec()), 0, &mut fx).unwrap();
        let eager: Vec<_> = sends(&fx).into_iter().map(|(p, _)| p.clone()).collect();
        assert_eq!(eager.len(), 1);
        fx.clear();
        r.heartbeat(1, &mut rng, &mut fx);
        let gossip = sends(&fx);
        assert_eq!(gossip.len(), 1);
        assert_eq!(gossip[0].1, "IHAVE");
        assert_ne!(gossip[0].0, &eager[0]);
    }

    #[test]
    fn seen_cache_expires() {
        let mut cache = SeenCache::new(Duration::from_nanos(10));
        let d = WakuMessage::new("c", vec![]).digest();
        assert!(cache.insert(d, 0));
        assert!(!cache.insert(d, 5));
        assert!(cache.contains(&d, 10));
        assert!(!cache.contains(&d, 11));
        cache.prune(11);
        assert!(cache.is_empty());
    }

    #[test]
    fn heartbeat_prunes_seen_cache() {
        let mut r = relay();
        let mut fx = Vec::new();
        r.publish(topic("t"), WakuMessage::new("c", vec![1]), 0, &mut fx).unwrap();
        assert_eq!(r.seen().len(), 1);
        let ttl = RelayParams::default().seen_ttl.as_nanos() as Nanos;
        r.heartbeat(ttl + 1, &mut rng(), &mut fx);
        assert!(r.seen().is_empty());
    }

    #[test]
    fn wants_heartbeat_settles() {
        let mut r = relay();
        let mut fx = Vec::new();
        assert!(!r.wants_heartbeat());
        r.publish(topic("t"), WakuMessage::new("c", vec![1]), 0, &mut fx).unwrap();
        assert!(r.wants_heartbeat());
        for i in 0..3 {
            r.heartbeat(i, &mut rng(), &mut fx);
        }
        assert!(!r.wants_heartbeat());
    }

    #[test]
    fn rpc_codec_round_trip() {
        let d = WakuMessage::new("c", vec![1]).digest();
        let limits = MessageLimits::default();
        for rpc in [
            RelayRpc::Message { topic: topic("t"), msg: WakuMessage::new("c", vec![1, 2]) },
            RelayRpc::IHave { topic: topic("t"), digests: vec![d, d] },
            RelayRpc::IWant { digests: vec![] },
            RelayRpc::Subscribe { topic: topic("t") },
            RelayRpc::Unsubscribe { topic: topic("t") },
        ] {
            assert_eq!(RelayRpc::decode(&rpc.encode(), &limits).unwrap(), rpc);
        }
        assert!(RelayRpc::decode(&[9], &limits).is_err());
        assert!(RelayRpc::decode(&[], &limits).is_err());
    }
}
