use proptest::prelude::*;
use serde::Deserialize;
use waku_core::message::{decode_message, encode_message, MessageLimits, WakuMessage};
use waku_core::relay::RelayRpc;
use waku_core::store::{HistoryQuery, HistoryResponse};
use waku_core::wire::{decode_frame, encode_frame, Capabilities, Frame, FrameKind, ProtocolId};

#[derive(Deserialize)]
struct Golden {
    message: Vec<MessageVector>,
    frame: Vec<FrameVector>,
}

#[derive(Deserialize)]
struct MessageVector {
    name: String,
    content_topic: String,
    payload: String,
    version: u32,
    timestamp: i64,
    bytes: String,
    digest: String,
}

#[derive(Deserialize)]
struct FrameVector {
    name: String,
    protocol: String,
    request_id: String,
    kind: FrameKind,
    body: String,
    bytes: String,
}

fn golden() -> Golden {
    toml::from_str(include_str!("../fixtures/golden.toml")).unwrap()
}

#[test]
fn message_vectors() {
    for v in golden().message {
        let fixture = WakuMessage::new(v.content_topic, hex::decode(v.payload).unwrap())
            .with_version(v.version)
            .with_timestamp(v.timestamp);
        let bytes = hex::decode(&v.bytes).unwrap();
        assert_eq!(decode_message(&bytes).unwrap(), fixture, "{}", v.name);
        assert_eq!(encode_message(&fixture).unwrap(), bytes, "{}", v.name);
        assert_eq!(fixture.digest().to_hex(), v.digest, "{}", v.name);
    }
}

#[test]
fn frame_vectors() {
    for v in golden().frame {
        let fixture = Frame {
            protocol: ProtocolId::parse(&v.protocol).unwrap(),
            request_id: v.request_id.parse().unwrap(),
            kind: v.kind,
            body: hex::decode(v.body).unwrap(),
        };
        let bytes = hex::decode(&v.bytes).unwrap();
        assert_eq!(decode_frame(&bytes).unwrap(), fixture, "{}", v.name);
        assert_eq!(encode_frame(&fixture).unwrap(), bytes, "{}", v.name);
    }
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let limits = MessageLimits::default();
        let _ = decode_message(&bytes);
        let _ = decode_frame(&bytes);
        let _ = RelayRpc::decode(&bytes, &limits);
        let _ = HistoryQuery::decode(&bytes);
        let _ = HistoryResponse::decode(&bytes, &limits);
        let _ = Capabilities::decode(&bytes);
    }

    #[test]
    fn mutated_goldens_never_panic(pick in 0usize..7, at in any::<prop::sample::Index>(), byte: u8) {
        let g = golden();
        let hexes: Vec<String> = g.message.into_iter().map(|m| m.bytes).chain(g.frame.into_iter().map(|f| f.bytes)).collect();
        let mut bytes = hex::decode(&hexes[pick % hexes.len()]).unwrap();
        let i = at.index(bytes.len());
        bytes[i] = byte;
        let _ = decode_message(&bytes);
        let _ = decode_frame(&bytes);
    }
}
