//! Peer bootstrap from static multiaddrs and a signed, versioned peer list.
//!
//! The peer list is a small text document:
//!
//! ```text
//! waku-peer-list v1
//! seq: 2
//! signer: <64 hex chars, ed25519 public key>
//! peer: /ip4/10.0.0.1/tcp/60000/p2p/<peer id>
//! peer: ...
//! signature: <128 hex chars>
//! ```
//!
//! Every line ends in `\n`. The signature is ed25519 over
//! `"waku-peer-list/v1\0" || u64_be(seq) || u32_be(count) || (u32_be(len) || addr)*`.
//! A document is accepted only if it is in exactly this canonical form.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use thiserror::Error;

use crate::wire::PeerId;

const HEADER: &str = "waku-peer-list v1";
const SIGNING_DOMAIN: &[u8] = b"waku-peer-list/v1\0";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid multiaddr {input:?}: bad {segment} segment: {reason}")]
pub struct MultiaddrError {
    pub input: String,
    pub segment: &'static str,
    pub reason: String,
}

/// `/ip4/<a.b.c.d>/tcp/<port>/p2p/<peer id>`, the only supported grammar.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Multiaddr {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub peer: PeerId,
}

impl Multiaddr {
    pub fn new(ip: Ipv4Addr, port: u16, peer: PeerId) -> Self {
        Self { ip, port, peer }
    }
}

pub fn parse_multiaddr(s: &str) -> Result<Multiaddr, MultiaddrError> {
    let err = |segment, reason: &str| MultiaddrError {
        input: s.to_owned(),
        segment,
        reason: reason.to_owned(),
    };
    let parts: Vec<&str> = s.split('/').collect();
    if parts.first() != Some(&"") {
        return Err(err("prefix", "must start with '/'"));
    }
    let part = |i: usize| parts.get(i).copied();
    if part(1) != Some("ip4") {
        return Err(err("scheme", "expected ip4"));
    }
    let ip = part(2)
        .ok_or_else(|| err("ip4", "missing address"))?
        .parse::<Ipv4Addr>()
        .map_err(|_| err("ip4", "not a dotted-quad IPv4 address"))?;
    if part(3) != Some("tcp") {
        return Err(err("transport", "expected tcp"));
    }
    let port_str = part(4).ok_or_else(|| err("tcp", "missing port"))?;
    let canonical = !port_str.is_empty()
        && port_str.bytes().all(|b| b.is_ascii_digit())
        && (port_str == "0" || !port_str.starts_with('0'));
    if !canonical {
        return Err(err("tcp", "port must be a decimal number without leading zeros"));
    }
    let port = port_str
        .parse::<u16>()
        .map_err(|_| err("tcp", "port out of range"))?;
    if part(5) != Some("p2p") {
        return Err(err("p2p", "missing /p2p/<peer id>"));
    }
    let peer = PeerId::new(part(6).unwrap_or_default()).map_err(|e| err("p2p", &e.to_string()))?;
    if parts.len() > 7 {
        return Err(err("suffix", "unexpected trailing segments"));
    }
    Ok(Multiaddr { ip, port, peer })
}

impl fmt::Display for Multiaddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/ip4/{}/tcp/{}/p2p/{}", self.ip, self.port, self.peer)
    }
}

impl FromStr for Multiaddr {
    type Err = MultiaddrError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_multiaddr(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("unauthenticated: {0}")]
    Unauthenticated(String),
    #[error("stale list: seq {seq} is not newer than {last_seen}")]
    Stale { seq: u64, last_seen: u64 },
    #[error("invalid signing key: {0}")]
    InvalidKey(String),
    #[error("seq {seq} must exceed last published seq {last}")]
    SeqNotIncreased { seq: u64, last: u64 },
    #[error("duplicate peer {0}")]
    DuplicatePeer(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPeerList {
    pub seq: u64,
    pub peers: Vec<Multiaddr>,
    pub signer: [u8; 32],
    pub signature: [u8; 64],
}

fn signing_payload(seq: u64, peers: &[Multiaddr]) -> Vec<u8> {
    let mut out = SIGNING_DOMAIN.to_vec();
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&(peers.len() as u32).to_be_bytes());
    for p in peers {
        let s = p.to_string();
        out.extend_from_slice(&(s.len() as u32).to_be_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out
}

fn check_unique(peers: &[Multiaddr]) -> Result<(), DiscoveryError> {
    let mut ids = BTreeSet::new();
    for p in peers {
        if !ids.insert(&p.peer) {
            return Err(DiscoveryError::DuplicatePeer(p.peer.to_string()));
        }
    }
    Ok(())
}

impl SignedPeerList {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{HEADER}\nseq: {}\nsigner: {}\n",
            self.seq,
            hex::encode(self.signer)
        );
        for p in &self.peers {
            out.push_str(&format!("peer: {p}\n"));
        }
        out.push_str(&format!("signature: {}\n", hex::encode(self.signature)));
        out
    }

    /// Strict parse; anything that does not re-serialize to the same bytes
    /// is rejected. Does not check the signature.
    pub fn parse(text: &str) -> Result<Self, DiscoveryError> {
        let bad = |why: &str| DiscoveryError::Unauthenticated(format!("malformed document: {why}"));
        let body = text.strip_suffix('\n').ok_or_else(|| bad("missing final newline"))?;
        let mut lines = body.split('\n');
        if lines.next() != Some(HEADER) {
            return Err(bad("bad header"));
        }
        let field = |line: Option<&str>, name: &str| -> Result<String, DiscoveryError> {
            line.and_then(|l| l.strip_prefix(name))
                .and_then(|l| l.strip_prefix(": "))
                .map(str::to_owned)
                .ok_or_else(|| bad(&format!("expected {name} field")))
        };
        let seq = field(lines.next(), "seq")?
            .parse::<u64>()
            .map_err(|_| bad("seq is not a number"))?;
        let mut signer = [0u8; 32];
        hex::decode_to_slice(field(lines.next(), "signer")?, &mut signer)
            .map_err(|_| bad("signer is not 32 hex bytes"))?;
        let rest: Vec<&str> = lines.collect();
        let (last, peer_lines) = rest.split_last().ok_or_else(|| bad("missing signature"))?;
        let mut signature = [0u8; 64];
        hex::decode_to_slice(field(Some(last), "signature")?, &mut signature)
            .map_err(|_| bad("signature is not 64 hex bytes"))?;
        let peers = peer_lines
            .iter()
            .map(|l| {
                let addr = field(Some(l), "peer")?;
                parse_multiaddr(&addr).map_err(|e| bad(&e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_unique(&peers).map_err(|e| bad(&e.to_string()))?;
        let doc = Self {
            seq,
            peers,
            signer,
            signature,
        };
        if doc.to_text() != text {
            return Err(bad("not in canonical form"));
        }
        Ok(doc)
    }
}

/// Publishes peer lists under one key, enforcing strictly increasing seq.
#[derive(Debug)]
pub struct PeerListSigner {
    key: SigningKey,
    last_published: Option<u64>,
}

impl PeerListSigner {
    pub fn new(key: SigningKey) -> Self {
        Self {
            key,
            last_published: None,
        }
    }

    pub fn from_hex(secret: &str) -> Result<Self, DiscoveryError> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(secret.trim(), &mut bytes)
            .map_err(|e| DiscoveryError::InvalidKey(e.to_string()))?;
        Ok(Self::new(SigningKey::from_bytes(&bytes)))
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn last_published(&self) -> Option<u64> {
        self.last_published
    }

    /// An empty peer list is a valid update that withdraws all peers.
    pub fn build(&mut self, peers: Vec<Multiaddr>, seq: u64) -> Result<SignedPeerList, DiscoveryError> {
        if let Some(last) = self.last_published {
            if seq <= last {
                return Err(DiscoveryError::SeqNotIncreased { seq, last });
            }
        }
        check_unique(&peers)?;
        let signature = self.key.sign(&signing_payload(seq, &peers)).to_bytes();
        self.last_published = Some(seq);
        Ok(SignedPeerList {
            seq,
            peers,
            signer: self.key.verifying_key().to_bytes(),
            signature,
        })
    }
}

pub fn parse_verifying_key(hex_key: &str) -> Result<VerifyingKey, DiscoveryError> {
    let mut bytes = [0u8; 32];
    hex::decode_to_slice(hex_key.trim(), &mut bytes)
        .map_err(|e| DiscoveryError::InvalidKey(e.to_string()))?;
    VerifyingKey::from_bytes(&bytes).map_err(|e| DiscoveryError::InvalidKey(e.to_string()))
}

/// Node identity for an ed25519 secret key: base58 of its public key.
pub fn peer_id_from_secret_hex(secret: &str) -> Result<PeerId, DiscoveryError> {
    let key = PeerListSigner::from_hex(secret)?.verifying_key();
    Ok(PeerId::from_public_key(&key.to_bytes()))
}

/// Returns the document's seq and peers if it is canonical, signed by
/// `trusted`, and newer than `last_seen_seq`. The caller persists the seq.
pub fn verify_peer_list(
    text: &str,
    trusted: &VerifyingKey,
    last_seen_seq: Option<u64>,
) -> Result<(u64, Vec<Multiaddr>), DiscoveryError> {
    let doc = SignedPeerList::parse(text)?;
    if doc.signer != trusted.to_bytes() {
        return Err(DiscoveryError::Unauthenticated("signer is not the trusted key".into()));
    }
    let signature = Signature::from_bytes(&doc.signature);
    trusted
        .verify_strict(&signing_payload(doc.seq, &doc.peers), &signature)
        .map_err(|_| DiscoveryError::Unauthenticated("bad signature".into()))?;
    if let Some(last_seen) = last_seen_seq {
        if doc.seq <= last_seen {
            return Err(DiscoveryError::Stale {
                seq: doc.seq,
                last_seen,
            });
        }
    }
    Ok((doc.seq, doc.peers))
}

/// Static nodes first, in configured order, then verified list entries;
/// duplicates by peer id keep their first position.
pub fn bootstrap(static_nodes: &[Multiaddr], listed: &[Multiaddr]) -> Vec<Multiaddr> {
    let mut seen = BTreeSet::new();
    static_nodes
        .iter()
        .chain(listed)
        .filter(|m| seen.insert(m.peer.clone()))
        .cloned()
        .collect()
}
