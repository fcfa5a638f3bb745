//! Content-filter push service for bandwidth-restricted clients.
//!
//! A full-mode server keeps a table of subscriptions and, for every fresh
//! message its relay processes, pushes one `MESSAGE_PUSH` per matching
//! subscription. Clients never join the relay mesh.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::message::{
    matches, read_message, write_message, ContentFilter, MessageLimits, PubsubTopic, WakuMessage,
};
use crate::relay::read_topic;
use crate::wire::PeerId;
use crate::Nanos;

pub const DEFAULT_MAX_SUBSCRIPTIONS_PER_PEER: usize = 16;
pub const DEFAULT_PUSH_FAILURE_LIMIT: u32 = 3;
const MAX_ID_LEN: usize = 64;
const MAX_CONTENT_TOPICS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("too many subscriptions")]
    TooManySubscriptions,
    #[error("no such subscription")]
    NoSuchSubscription,
    #[error("filter not in full mode")]
    NotFullMode,
    #[error("filter not mounted")]
    NotMounted,
    #[error("peer {0} did not advertise filter full mode")]
    NotAdvertised(String),
    #[error("filter request timed out")]
    Timeout,
    #[error("peer disconnected")]
    Disconnected,
    #[error("filter server error: {0}")]
    Remote(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterParams {
    pub max_subscriptions_per_peer: usize,
    /// Consecutive failed pushes after which a subscription is dropped.
    pub push_failure_limit: u32,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            max_subscriptions_per_peer: DEFAULT_MAX_SUBSCRIPTIONS_PER_PEER,
            push_failure_limit: DEFAULT_PUSH_FAILURE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSubscription {
    pub id: String,
    pub subscriber: PeerId,
    pub pubsub_topic: PubsubTopic,
    pub filter: ContentFilter,
    pub created_at: Nanos,
    failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterRequest {
    Subscribe {
        pubsub_topic: PubsubTopic,
        filter: ContentFilter,
    },
    Unsubscribe {
        id: String,
    },
}

impl FilterRequest {
    pub fn label(&self) -> &'static str {
        match self {
            FilterRequest::Subscribe { .. } => "FILTER_SUBSCRIBE",
            FilterRequest::Unsubscribe { .. } => "FILTER_UNSUBSCRIBE",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            FilterRequest::Subscribe {
                pubsub_topic,
                filter,
            } => {
                w.u8(1)
                    .str(pubsub_topic.as_str())
                    .u32(filter.content_topics.len() as u32);
                for t in &filter.content_topics {
                    w.str(t);
                }
            }
            FilterRequest::Unsubscribe { id } => {
                w.u8(2).str(id);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let at = r.position();
        let req = match r.u8()? {
            1 => {
                let pubsub_topic = read_topic(&mut r)?;
                let at = r.position();
                let n = r.u32()?;
                if n > MAX_CONTENT_TOPICS {
                    return Err(DecodeError::new(at, "too many content topics"));
                }
                let content_topics = (0..n)
                    .map(|_| r.str(1024).map(str::to_owned))
                    .collect::<Result<_, _>>()?;
                FilterRequest::Subscribe {
                    pubsub_topic,
                    filter: ContentFilter { content_topics },
                }
            }
            2 => FilterRequest::Unsubscribe {
                id: r.str(MAX_ID_LEN)?.to_owned(),
            },
            other => {
                return Err(DecodeError::new(
                    at,
                    format!("unknown filter request type {other}"),
                ))
            }
        };
        r.finish()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterResponse {
    Subscribed { id: String },
    Unsubscribed,
    Error(String),
}

impl FilterResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            FilterResponse::Subscribed { id } => w.u8(0).str(id),
            FilterResponse::Unsubscribed => w.u8(1),
            FilterResponse::Error(e) => w.u8(2).str(e),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let at = r.position();
        let resp = match r.u8()? {
            0 => FilterResponse::Subscribed {
                id: r.str(MAX_ID_LEN)?.to_owned(),
            },
            1 => FilterResponse::Unsubscribed,
            2 => FilterResponse::Error(r.str(4096)?.to_owned()),
            other => {
                return Err(DecodeError::new(
                    at,
                    format!("unknown filter response type {other}"),
                ))
            }
        };
        r.finish()?;
        Ok(resp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePush {
    pub subscription_id: String,
    pub pubsub_topic: PubsubTopic,
    pub msg: WakuMessage,
}

impl MessagePush {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.subscription_id).str(self.pubsub_topic.as_str());
        write_message(&mut w, &self.msg);
        w.finish()
    }

    pub fn decode(bytes: &[u8], limits: &MessageLimits) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let subscription_id = r.str(MAX_ID_LEN)?.to_owned();
        let pubsub_topic = read_topic(&mut r)?;
        let msg = read_message(&mut r, limits)?;
        r.finish()?;
        Ok(Self {
            subscription_id,
            pubsub_topic,
            msg,
        })
    }
}

/// Server-side subscription table.
#[derive(Debug, Clone, Default)]
pub struct FilterServer {
    params: FilterParams,
    subs: BTreeMap<String, FilterSubscription>,
}

impl FilterServer {
    pub fn new(params: FilterParams) -> Self {
        Self {
            params,
            subs: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FilterSubscription> {
        self.subs.get(id)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &FilterSubscription> {
        self.subs.values()
    }

    pub fn count_for(&self, peer: &PeerId) -> usize {
        self.subs.values().filter(|s| s.subscriber == *peer).count()
    }

    pub fn subscribe<R: Rng>(
        &mut self,
        subscriber: PeerId,
        pubsub_topic: PubsubTopic,
        filter: ContentFilter,
        now: Nanos,
        rng: &mut R,
    ) -> Result<String, FilterError> {
        if self.count_for(&subscriber) >= self.params.max_subscriptions_per_peer {
            return Err(FilterError::TooManySubscriptions);
        }
        let id = loop {
            let candidate = hex::encode(rng.random::<[u8; 16]>());
            if !self.subs.contains_key(&candidate) {
                break candidate;
            }
        };
        self.subs.insert(
            id.clone(),
            FilterSubscription {
                id: id.clone(),
                subscriber,
                pubsub_topic,
                filter,
                created_at: now,
                failures: 0,
            },
        );
        Ok(id)
    }

    /// Only the subscriber that owns `id` may remove it.
    pub fn unsubscribe(&mut self, subscriber: &PeerId, id: &str) -> Result<(), FilterError> {
        match self.subs.get(id) {
            Some(s) if s.subscriber == *subscriber => {
                self.subs.remove(id);
                Ok(())
            }
            _ => Err(FilterError::NoSuchSubscription),
        }
    }

    /// Pushes owed for a fresh relayed message, in subscription-id order.
    pub fn pushes_for(&self, pubsub_topic: &PubsubTopic, msg: &WakuMessage) -> Vec<(PeerId, MessagePush)> {
        self.subs
            .values()
            .filter(|s| s.pubsub_topic == *pubsub_topic && matches(msg, &s.filter))
            .map(|s| {
                (
                    s.subscriber.clone(),
                    MessagePush {
                        subscription_id: s.id.clone(),
                        pubsub_topic: pubsub_topic.clone(),
                        msg: msg.clone(),
                    },
                )
            })
            .collect()
    }

    /// Records the outcome of one push. Returns true if the subscription was
    /// dropped for reaching the failure limit.
    pub fn record_push(&mut self, id: &str, delivered: bool) -> bool {
        let Some(sub) = self.subs.get_mut(id) else {
            return false;
        };
        if delivered {
            sub.failures = 0;
            return false;
        }
        sub.failures += 1;
        if sub.failures >= self.params.push_failure_limit {
            self.subs.remove(id);
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pid(s: &str) -> PeerId {
        PeerId::new(s).unwrap()
    }

    fn topic(s: &str) -> PubsubTopic {
        PubsubTopic::new(s).unwrap()
    }

    fn server() -> (FilterServer, ChaCha8Rng) {
        (FilterServer::new(FilterParams::default()), ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn matching_subscription_gets_one_push() {
        let (mut s, mut rng) = server();
        let id = s
            .subscribe(pid("C"), topic("pub1"), ContentFilter::topics(["content1"]), 0, &mut rng)
            .unwrap();
        let msg1 = WakuMessage::new("content1", b"msg1".to_vec());
        let pushes = s.pushes_for(&topic("pub1"), &msg1);
        assert_eq!(pushes.len(), 1);
        assert_eq!(pushes[0].0, pid("C"));
        assert_eq!(pushes[0].1.subscription_id, id);
        assert!(s.pushes_for(&topic("pub2"), &msg1).is_empty());
        let other = WakuMessage::new("content2", b"x".to_vec());
        assert!(s.pushes_for(&topic("pub1"), &other).is_empty());
    }

    #[test]
    fn empty_filter_matches_everything_on_topic() {
        let (mut s, mut rng) = server();
        s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng).unwrap();
        for ct in ["a", "b", "c"] {
            assert_eq!(s.pushes_for(&topic("t"), &WakuMessage::new(ct, vec![])).len(), 1);
        }
    }

    #[test]
    fn per_peer_limit() {
        let (mut s, mut rng) = server();
        for _ in 0..16 {
            s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng).unwrap();
        }
        assert_eq!(
            s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng),
            Err(FilterError::TooManySubscriptions)
        );
        assert!(s.subscribe(pid("D"), topic("t"), ContentFilter::all(), 0, &mut rng).is_ok());
    }

    #[test]
    fn unsubscribe_semantics() {
        let (mut s, mut rng) = server();
        let keep = s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng).unwrap();
        let gone = s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng).unwrap();
        assert_eq!(s.unsubscribe(&pid("D"), &gone), Err(FilterError::NoSuchSubscription));
        s.unsubscribe(&pid("C"), &gone).unwrap();
        assert_eq!(s.unsubscribe(&pid("C"), &gone), Err(FilterError::NoSuchSubscription));
        let pushes = s.pushes_for(&topic("t"), &WakuMessage::new("x", vec![]));
        assert_eq!(pushes.len(), 1);
        assert_eq!(pushes[0].1.subscription_id, keep);
    }

    #[test]
    fn fan_out_counts_subscribers() {
        let (mut s, mut rng) = server();
        let peers = ["C", "D", "E"];
        for p in peers {
            s.subscribe(pid(p), topic("t"), ContentFilter::topics(["x"]), 0, &mut rng).unwrap();
        }
        s.subscribe(pid("F"), topic("t"), ContentFilter::topics(["y"]), 0, &mut rng).unwrap();
        let msg = WakuMessage::new("x", vec![1]);
        let oracle = s.subscriptions().filter(|sub| matches(&msg, &sub.filter)).count();
        assert_eq!(s.pushes_for(&topic("t"), &msg).len(), oracle);
        assert_eq!(oracle, 3);
    }

    #[test]
    fn three_consecutive_failures_drop() {
        let (mut s, mut rng) = server();
        let id = s.subscribe(pid("C"), topic("t"), ContentFilter::all(), 0, &mut rng).unwrap();
        assert!(!s.record_push(&id, false));
        assert!(!s.record_push(&id, false));
        assert!(!s.record_push(&id, true));
        assert!(!s.record_push(&id, false));
        assert!(!s.record_push(&id, false));
        assert!(s.record_push(&id, false));
        assert!(s.get(&id).is_none());
    }

    #[test]
    fn codecs_round_trip() {
        let reqs = [
            FilterRequest::Subscribe {
                pubsub_topic: topic("pub1"),
                filter: ContentFilter::topics(["a", "b"]),
            },
            FilterRequest::Unsubscribe { id: "abc".into() },
        ];
        for r in reqs {
            assert_eq!(FilterRequest::decode(&r.encode()).unwrap(), r);
        }
        for r in [
            FilterResponse::Subscribed { id: "x".into() },
            FilterResponse::Unsubscribed,
            FilterResponse::Error("too many subscriptions".into()),
        ] {
            assert_eq!(FilterResponse::decode(&r.encode()).unwrap(), r);
        }
        let push = MessagePush {
            subscription_id: "id".into(),
            pubsub_topic: topic("t"),
            msg: WakuMessage::new("c", b"p".to_vec()),
        };
        assert_eq!(MessagePush::decode(&push.encode(), &MessageLimits::default()).unwrap(), push);
    }

    proptest! {
        #[test]
        fn pushes_are_sound(
            subs in proptest::collection::vec((0u8..3, proptest::collection::vec(0u8..4, 0..3)), 0..10),
            t in 0u8..3,
            ct in 0u8..4,
        ) {
            let (mut s, mut rng) = server();
            for (i, (st, cts)) in subs.iter().enumerate() {
                let filter = ContentFilter::topics(cts.iter().map(|c| format!("c{c}")));
                s.subscribe(pid(&format!("p{i}")), topic(&format!("t{st}")), filter, 0, &mut rng).unwrap();
            }
            let msg = WakuMessage::new(format!("c{ct}"), vec![]);
            let pt = topic(&format!("t{t}"));
            let pushes = s.pushes_for(&pt, &msg);
            for (_, p) in &pushes {
                let sub = s.get(&p.subscription_id).unwrap();
                prop_assert_eq!(&sub.pubsub_topic, &pt);
                prop_assert!(matches(&msg, &sub.filter));
            }
            let expected = s.subscriptions().filter(|x| x.pubsub_topic == pt && matches(&msg, &x.filter)).count();
            prop_assert_eq!(pushes.len(), expected);
        }
    }
}
