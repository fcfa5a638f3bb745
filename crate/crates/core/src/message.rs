//! The routed data unit, its binary codec, digest identity and content filtering.
//!
//! Encoding (all integers little-endian, fields in this fixed order):
//!
//! | tag  | field         | body                         |
//! |------|---------------|------------------------------|
//! | 0x01 | payload       | u32 length + bytes           |
//! | 0x02 | content_topic | u32 length + UTF-8 bytes     |
//! | 0x03 | version       | u32                          |
//! | 0x04 | timestamp     | i64 (ns since Unix epoch)    |
//!
//! Every field is mandatory and the decoder rejects anything else,
//! including trailing bytes, so the encoding of a message is unique.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};

pub const DEFAULT_MAX_PAYLOAD: usize = 1024 * 1024;
pub const DEFAULT_MAX_TOPIC_LEN: usize = 1024;

const TAG_PAYLOAD: u8 = 0x01;
const TAG_CONTENT_TOPIC: u8 = 0x02;
const TAG_VERSION: u8 = 0x03;
const TAG_TIMESTAMP: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageLimits {
    pub max_payload: usize,
    pub max_topic_len: usize,
}

impl Default for MessageLimits {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
            max_topic_len: DEFAULT_MAX_TOPIC_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("payload too large: {size} bytes exceeds {limit}")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("content topic is empty")]
    EmptyContentTopic,
    #[error("topic too long: {len} bytes exceeds {limit}")]
    TopicTooLong { len: usize, limit: usize },
    #[error("pubsub topic is empty")]
    EmptyPubsubTopic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WakuMessage {
    pub payload: Vec<u8>,
    pub content_topic: String,
    pub version: u32,
    /// Sender-assigned, nanoseconds since the Unix epoch.
    pub timestamp: i64,
}

impl WakuMessage {
    pub fn new(content_topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            payload: payload.into(),
            content_topic: content_topic.into(),
            version: 0,
            timestamp: 0,
        }
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    pub fn validate(&self, limits: &MessageLimits) -> Result<(), MessageError> {
        if self.content_topic.is_empty() {
            return Err(MessageError::EmptyContentTopic);
        }
        if self.content_topic.len() > limits.max_topic_len {
            return Err(MessageError::TopicTooLong {
                len: self.content_topic.len(),
                limit: limits.max_topic_len,
            });
        }
        if self.payload.len() > limits.max_payload {
            return Err(MessageError::PayloadTooLarge {
                size: self.payload.len(),
                limit: limits.max_payload,
            });
        }
        Ok(())
    }

    pub fn digest(&self) -> MessageDigest {
        digest(self)
    }

    pub fn encoded_len(&self) -> usize {
        1 + 4 + self.payload.len() + 1 + 4 + self.content_topic.len() + 1 + 4 + 1 + 8
    }
}

pub fn encode_message(msg: &WakuMessage) -> Result<Vec<u8>, MessageError> {
    encode_message_with(msg, &MessageLimits::default())
}

pub fn encode_message_with(
    msg: &WakuMessage,
    limits: &MessageLimits,
) -> Result<Vec<u8>, MessageError> {
    msg.validate(limits)?;
    let mut w = Writer::new();
    write_message(&mut w, msg);
    Ok(w.finish())
}

/// Appends the encoding without validating; callers validate first.
pub(crate) fn write_message(w: &mut Writer, msg: &WakuMessage) {
    w.u8(TAG_PAYLOAD)
        .bytes(&msg.payload)
        .u8(TAG_CONTENT_TOPIC)
        .str(&msg.content_topic)
        .u8(TAG_VERSION)
        .u32(msg.version)
        .u8(TAG_TIMESTAMP)
        .i64(msg.timestamp);
}

pub fn decode_message(bytes: &[u8]) -> Result<WakuMessage, DecodeError> {
    decode_message_with(bytes, &MessageLimits::default())
}

pub fn decode_message_with(bytes: &[u8], limits: &MessageLimits) -> Result<WakuMessage, DecodeError> {
    let mut r = Reader::new(bytes);
    let msg = read_message(&mut r, limits)?;
    r.finish()?;
    Ok(msg)
}

pub(crate) fn read_message(r: &mut Reader<'_>, limits: &MessageLimits) -> Result<WakuMessage, DecodeError> {
    if r.is_empty() {
        return Err(r.error("empty input"));
    }
    r.expect_tag(TAG_PAYLOAD)?;
    let payload = r.bytes(limits.max_payload)?.to_vec();
    r.expect_tag(TAG_CONTENT_TOPIC)?;
    let topic_at = r.position();
    let content_topic = r.str(limits.max_topic_len)?.to_owned();
    if content_topic.is_empty() {
        return Err(DecodeError::new(topic_at, "content topic is empty"));
    }
    r.expect_tag(TAG_VERSION)?;
    let version = r.u32()?;
    r.expect_tag(TAG_TIMESTAMP)?;
    let timestamp = r.i64()?;
    Ok(WakuMessage {
        payload,
        content_topic,
        version,
        timestamp,
    })
}

/// Routing key for gossip dissemination. Never derived from message content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PubsubTopic(String);

impl PubsubTopic {
    pub fn new(value: impl Into<String>) -> Result<Self, MessageError> {
        let value = value.into();
        if value.is_empty() {
            return Err(MessageError::EmptyPubsubTopic);
        }
        if value.len() > DEFAULT_MAX_TOPIC_LEN {
            return Err(MessageError::TopicTooLong {
                len: value.len(),
                limit: DEFAULT_MAX_TOPIC_LEN,
            });
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PubsubTopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for PubsubTopic {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// SHA-256 over `u32_le(len(content_topic)) || content_topic || payload`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageDigest(pub [u8; 32]);

impl MessageDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for MessageDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageDigest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for MessageDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for MessageDigest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for MessageDigest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Version and timestamp are deliberately excluded so an identical
/// republished payload deduplicates.
pub fn digest(msg: &WakuMessage) -> MessageDigest {
    let mut h = Sha256::new();
    h.update((msg.content_topic.len() as u32).to_le_bytes());
    h.update(msg.content_topic.as_bytes());
    h.update(&msg.payload);
    MessageDigest(h.finalize().into())
}

/// Content-level selector. An empty list matches every message.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ContentFilter {
    pub content_topics: Vec<String>,
}

impl ContentFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn topics<I, S>(topics: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            content_topics: topics.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_match_all(&self) -> bool {
        self.content_topics.is_empty()
    }
}

pub fn matches(msg: &WakuMessage, filter: &ContentFilter) -> bool {
    filter.content_topics.is_empty()
        || filter.content_topics.contains(&msg.content_topic)
}
