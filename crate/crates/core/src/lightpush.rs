//! Proxy publishing: a client with a short connection window hands a message
//! to a relay-capable server, which publishes it on the client's behalf.
//!
//! Success means the server accepted the message and handed it to its relay.
//! Network-wide delivery is not observable by the server.

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::message::{read_message, write_message, MessageError, MessageLimits, PubsubTopic, WakuMessage};
use crate::relay::read_topic;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LightpushError {
    #[error("lightpush not mounted")]
    NotMounted,
    #[error("peer {0} did not advertise lightpush full mode")]
    NotAdvertised(String),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("lightpush request timed out")]
    Timeout,
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushRequest {
    pub pubsub_topic: PubsubTopic,
    pub msg: WakuMessage,
}

impl PushRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(self.pubsub_topic.as_str());
        write_message(&mut w, &self.msg);
        w.finish()
    }

    pub fn decode(bytes: &[u8], limits: &MessageLimits) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let pubsub_topic = read_topic(&mut r)?;
        let msg = read_message(&mut r, limits)?;
        r.finish()?;
        Ok(Self { pubsub_topic, msg })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushResponse {
    pub is_success: bool,
    /// Failure reason, or `eager_sends=N` on success.
    pub info: String,
}

impl PushResponse {
    pub fn success(eager_sends: usize) -> Self {
        Self {
            is_success: true,
            info: format!("eager_sends={eager_sends}"),
        }
    }

    pub fn failure(info: impl Into<String>) -> Self {
        let info = info.into();
        debug_assert!(!info.is_empty());
        Self {
            is_success: false,
            info,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bool(self.is_success).str(&self.info);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let is_success = r.bool()?;
        let at = r.position();
        let info = r.str(4096)?.to_owned();
        r.finish()?;
        if !is_success && info.is_empty() {
            return Err(DecodeError::new(at, "failure response without a reason"));
        }
        Ok(Self { is_success, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let req = PushRequest {
            pubsub_topic: PubsubTopic::new("pub1").unwrap(),
            msg: WakuMessage::new("content1", b"msg1".to_vec()).with_timestamp(5),
        };
        assert_eq!(PushRequest::decode(&req.encode(), &MessageLimits::default()).unwrap(), req);
    }

    #[test]
    fn response_round_trip_and_reason_required() {
        for r in [PushResponse::success(3), PushResponse::failure("relay not mounted")] {
            assert_eq!(PushResponse::decode(&r.encode()).unwrap(), r);
        }
        let mut w = Writer::new();
        w.bool(false).str("");
        assert!(PushResponse::decode(&w.finish()).is_err());
    }

    #[test]
    fn oversize_message_rejected_on_decode() {
        let req = PushRequest {
            pubsub_topic: PubsubTopic::new("t").unwrap(),
            msg: WakuMessage::new("c", vec![0; 64]),
        };
        let tight = MessageLimits { max_payload: 32, ..Default::default() };
        assert!(PushRequest::decode(&req.encode(), &tight).is_err());
    }
}
