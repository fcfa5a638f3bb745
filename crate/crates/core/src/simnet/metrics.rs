//! Dissemination metrics extracted from a transcript.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{EventKind, Transcript};
use crate::message::MessageDigest;
use crate::wire::ProtocolId;
use crate::Nanos;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DigestMetrics {
    /// Relay app deliveries, one per receiving node.
    pub reach: usize,
    /// MESSAGE frames sent carrying this digest.
    pub message_sends: usize,
    /// Deliveries at the publisher itself, which need no transmission.
    pub local_deliveries: usize,
    /// Time of the earliest transcript event carrying the digest.
    pub first_seen: Nanos,
    /// Latest relay delivery minus `first_seen`.
    pub max_latency: Nanos,
}

impl DigestMetrics {
    /// Copies handled per delivery: `(message_sends + local_deliveries) / reach`.
    /// Zero when nothing was delivered.
    pub fn redundancy(&self) -> f64 {
        if self.reach == 0 {
            return 0.0;
        }
        (self.message_sends + self.local_deliveries) as f64 / self.reach as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub digests: usize,
    pub app_deliveries: usize,
    pub message_sends: usize,
    pub frames_sent: usize,
    pub frames_delivered: usize,
    pub frames_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimMetrics {
    pub per_digest: BTreeMap<MessageDigest, DigestMetrics>,
    pub totals: Totals,
    /// Computed from a truncated transcript.
    pub partial: bool,
}

#[derive(Serialize)]
struct Row {
    digest: String,
    reach: usize,
    message_sends: usize,
    redundancy: f64,
    max_latency_ns: Nanos,
    partial: bool,
}

impl SimMetrics {
    /// One CSV row per digest.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for (d, m) in &self.per_digest {
            out.serialize(Row {
                digest: d.to_hex(),
                reach: m.reach,
                message_sends: m.message_sends,
                redundancy: m.redundancy(),
                max_latency_ns: m.max_latency,
                partial: self.partial,
            })?;
        }
        if self.per_digest.is_empty() {
            out.write_record(["digest", "reach", "message_sends", "redundancy", "max_latency_ns", "partial"])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn metrics(t: &Transcript) -> SimMetrics {
    let mut per: BTreeMap<MessageDigest, DigestMetrics> = BTreeMap::new();
    let mut totals = Totals::default();
    for e in &t.events {
        match e.kind {
            EventKind::FrameSent => totals.frames_sent += 1,
            EventKind::FrameDelivered => totals.frames_delivered += 1,
            EventKind::FrameDropped => totals.frames_dropped += 1,
            EventKind::AppDelivery => totals.app_deliveries += 1,
            EventKind::Timer => {}
        }
        let Some(d) = e.digest else { continue };
        let m = per.entry(d).or_insert_with(|| DigestMetrics {
            first_seen: e.time,
            ..DigestMetrics::default()
        });
        match e.kind {
            EventKind::FrameSent if e.label == "MESSAGE" => {
                m.message_sends += 1;
                totals.message_sends += 1;
            }
            EventKind::AppDelivery if e.protocol == Some(ProtocolId::Relay) => {
                m.reach += 1;
                if e.src == e.dst {
                    m.local_deliveries += 1;
                }
                m.max_latency = m.max_latency.max(e.time - m.first_seen);
            }
            _ => {}
        }
    }
    totals.digests = per.len();
    SimMetrics {
        per_digest: per,
        totals,
        partial: t.truncated,
    }
}
