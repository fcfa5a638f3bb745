//! Framed transport: protocol-ID multiplexed frames and capability advertisements.
//!
//! Frame layout:
//!
//! ```text
//! u32 BE  length of everything that follows
//! u8      protocol id length
//! bytes   protocol id (ASCII, one of the registered ids)
//! u64 LE  request id
//! u8      kind (0 request, 1 response, 2 push)
//! bytes   body (remainder)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};

pub const DEFAULT_MAX_FRAME_BODY: usize = 2 * 1024 * 1024;
pub const HANDSHAKE_TIMEOUT_NS: i64 = 5_000_000_000;
const MAX_PEER_ID_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("invalid peer id {0:?}")]
    InvalidPeerId(String),
    #[error("unknown protocol id {0:?}")]
    UnknownProtocol(String),
    #[error("frame body of {size} bytes exceeds limit {limit}")]
    FrameTooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Opaque node identity. ASCII alphanumeric so it embeds in multiaddrs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Result<Self, WireError> {
        let id = id.into();
        if id.is_empty()
            || id.len() > MAX_PEER_ID_LEN
            || !id.bytes().all(|b| b.is_ascii_alphanumeric())
        {
            return Err(WireError::InvalidPeerId(id));
        }
        Ok(Self(id))
    }

    /// Base58 of an ed25519 public key.
    pub fn from_public_key(key: &[u8; 32]) -> Self {
        Self(bs58::encode(key).into_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PeerId {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<PeerId> for String {
    fn from(p: PeerId) -> String {
        p.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for PeerId {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum ProtocolId {
    Relay,
    Store,
    Filter,
    Lightpush,
    Handshake,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 5] = [
        ProtocolId::Relay,
        ProtocolId::Store,
        ProtocolId::Filter,
        ProtocolId::Lightpush,
        ProtocolId::Handshake,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolId::Relay => "/vac/waku/relay/2.0.0",
            ProtocolId::Store => "/vac/waku/store/2.0.0",
            ProtocolId::Filter => "/vac/waku/filter/2.0.0",
            ProtocolId::Lightpush => "/vac/waku/lightpush/2.0.0",
            ProtocolId::Handshake => "/vac/waku/handshake/2.0.0",
        }
    }

    pub fn parse(s: &str) -> Result<Self, WireError> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| WireError::UnknownProtocol(s.to_owned()))
    }

    /// Short name used in logs and the RPC debug output.
    pub fn name(self) -> &'static str {
        match self {
            ProtocolId::Relay => "relay",
            ProtocolId::Store => "store",
            ProtocolId::Filter => "filter",
            ProtocolId::Lightpush => "lightpush",
            ProtocolId::Handshake => "handshake",
        }
    }

    /// Request/reply protocols distinguish full and light mode.
    pub fn is_req_rep(self) -> bool {
        matches!(
            self,
            ProtocolId::Store | ProtocolId::Filter | ProtocolId::Lightpush
        )
    }
}

impl TryFrom<String> for ProtocolId {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<ProtocolId> for &'static str {
    fn from(p: ProtocolId) -> Self {
        p.as_str()
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Request = 0,
    Response = 1,
    Push = 2,
}

impl FrameKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(FrameKind::Request),
            1 => Some(FrameKind::Response),
            2 => Some(FrameKind::Push),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub protocol: ProtocolId,
    pub request_id: u64,
    pub kind: FrameKind,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn request(protocol: ProtocolId, request_id: u64, body: Vec<u8>) -> Self {
        Self {
            protocol,
            request_id,
            kind: FrameKind::Request,
            body,
        }
    }

    pub fn response(protocol: ProtocolId, request_id: u64, body: Vec<u8>) -> Self {
        Self {
            protocol,
            request_id,
            kind: FrameKind::Response,
            body,
        }
    }

    pub fn push(protocol: ProtocolId, body: Vec<u8>) -> Self {
        Self {
            protocol,
            request_id: 0,
            kind: FrameKind::Push,
            body,
        }
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + self.protocol.as_str().len() + 8 + 1 + self.body.len()
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    encode_frame_with(frame, DEFAULT_MAX_FRAME_BODY)
}

pub fn encode_frame_with(frame: &Frame, max_body: usize) -> Result<Vec<u8>, WireError> {
    if frame.body.len() > max_body {
        return Err(WireError::FrameTooLarge {
            size: frame.body.len(),
            limit: max_body,
        });
    }
    let proto = frame.protocol.as_str().as_bytes();
    let inner_len = 1 + proto.len() + 8 + 1 + frame.body.len();
    let mut out = Vec::with_capacity(4 + inner_len);
    out.extend_from_slice(&(inner_len as u32).to_be_bytes());
    out.push(proto.len() as u8);
    out.extend_from_slice(proto);
    out.extend_from_slice(&frame.request_id.to_le_bytes());
    out.push(frame.kind as u8);
    out.extend_from_slice(&frame.body);
    Ok(out)
}

/// Length of the frame announced by a 4-byte prefix, checked against the body limit.
pub fn frame_length(prefix: [u8; 4], max_body: usize) -> Result<usize, WireError> {
    let len = u32::from_be_bytes(prefix) as usize;
    // Largest possible header: proto len byte, 255-byte id, request id, kind.
    let max_inner = max_body + 1 + 255 + 8 + 1;
    if len > max_inner {
        return Err(WireError::FrameTooLarge {
            size: len,
            limit: max_inner,
        });
    }
    Ok(len)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    decode_frame_with(bytes, DEFAULT_MAX_FRAME_BODY)
}

pub fn decode_frame_with(bytes: &[u8], max_body: usize) -> Result<Frame, WireError> {
    let mut r = Reader::new(bytes);
    let prefix: [u8; 4] = r.take(4)?.try_into().unwrap();
    let len = frame_length(prefix, max_body)?;
    if r.remaining() != len {
        return Err(if r.remaining() < len {
            r.error(format!(
                "truncated frame: length prefix says {len}, {} available",
                r.remaining()
            ))
        } else {
            DecodeError::new(4 + len, format!("{} trailing bytes", r.remaining() - len))
        }
        .into());
    }
    decode_frame_inner(r.rest(), max_body).map_err(|e| match e {
        WireError::Decode(d) => WireError::Decode(DecodeError::new(d.position + 4, d.reason)),
        other => other,
    })
}

/// Decodes the part after the length prefix.
pub fn decode_frame_inner(bytes: &[u8], max_body: usize) -> Result<Frame, WireError> {
    let mut r = Reader::new(bytes);
    let plen = r.u8()? as usize;
    let raw = r.take(plen)?;
    let id = std::str::from_utf8(raw).map_err(|_| DecodeError::new(1, "protocol id is not UTF-8"))?;
    let protocol = ProtocolId::parse(id)?;
    let request_id = r.u64()?;
    let kind_at = r.position();
    let kind = FrameKind::from_u8(r.u8()?)
        .ok_or_else(|| DecodeError::new(kind_at, "unknown frame kind"))?;
    let body = r.rest().to_vec();
    if body.len() > max_body {
        return Err(WireError::FrameTooLarge {
            size: body.len(),
            limit: max_body,
        });
    }
    Ok(Frame {
        protocol,
        request_id,
        kind,
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Light,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Light => "light",
        })
    }
}

/// What a node has mounted, as advertised in the handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub peer: PeerId,
    pub protocols: BTreeMap<ProtocolId, Mode>,
}

impl Capabilities {
    pub fn new(peer: PeerId) -> Self {
        Self {
            peer,
            protocols: BTreeMap::new(),
        }
    }

    pub fn with(mut self, protocol: ProtocolId, mode: Mode) -> Self {
        self.protocols.insert(protocol, mode);
        self
    }

    pub fn mode(&self, protocol: ProtocolId) -> Option<Mode> {
        self.protocols.get(&protocol).copied()
    }

    pub fn has(&self, protocol: ProtocolId) -> bool {
        self.protocols.contains_key(&protocol)
    }

    pub fn serves(&self, protocol: ProtocolId) -> bool {
        self.mode(protocol) == Some(Mode::Full)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(self.peer.as_str()).u8(self.protocols.len() as u8);
        for (p, m) in &self.protocols {
            w.str(p.as_str()).u8(match m {
                Mode::Full => 0,
                Mode::Light => 1,
            });
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let peer = PeerId::new(r.str(MAX_PEER_ID_LEN)?)?;
        let count = r.u8()?;
        let mut protocols = BTreeMap::new();
        let mut last: Option<ProtocolId> = None;
        for _ in 0..count {
            let at = r.position();
            let p = ProtocolId::parse(r.str(64)?)?;
            if p == ProtocolId::Handshake || last.is_some_and(|l| l >= p) {
                return Err(DecodeError::new(at, "protocols not in canonical order").into());
            }
            last = Some(p);
            let mode_at = r.position();
            let mode = match r.u8()? {
                0 => Mode::Full,
                1 => Mode::Light,
                _ => return Err(DecodeError::new(mode_at, "unknown mode").into()),
            };
            if p == ProtocolId::Relay && mode != Mode::Full {
                return Err(DecodeError::new(mode_at, "relay is full-only").into());
            }
            protocols.insert(p, mode);
        }
        r.finish()?;
        Ok(Self { peer, protocols })
    }
}

/// The handshake frame carrying a capability advertisement. Sent first on
/// every connection and again whenever a node re-advertises.
pub fn advertisement_frame(caps: &Capabilities) -> Frame {
    Frame::push(ProtocolId::Handshake, caps.encode())
}

pub fn read_advertisement(frame: &Frame) -> Result<Capabilities, WireError> {
    if frame.protocol != ProtocolId::Handshake {
        return Err(DecodeError::new(0, "expected a handshake frame").into());
    }
    Capabilities::decode(&frame.body)
}

/// Which protocols a connection can carry, from the local node's point of view.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Usable {
    /// Protocol ids both sides advertise.
    pub shared: BTreeSet<ProtocolId>,
    /// Req/rep protocols the local node may send requests for.
    pub can_request: BTreeSet<ProtocolId>,
    /// Req/rep protocols the local node answers for this remote.
    pub can_serve: BTreeSet<ProtocolId>,
}

pub fn usable(local: &Capabilities, remote: &Capabilities) -> Usable {
    let shared = local
        .protocols
        .keys()
        .filter(|p| remote.has(**p))
        .copied()
        .collect::<BTreeSet<_>>();
    let can_request = shared
        .iter()
        .filter(|p| p.is_req_rep() && remote.serves(**p))
        .copied()
        .collect();
    let can_serve = shared
        .iter()
        .filter(|p| p.is_req_rep() && local.serves(**p))
        .copied()
        .collect();
    Usable {
        shared,
        can_request,
        can_serve,
    }
}
