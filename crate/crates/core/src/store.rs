//! Capacity-bounded message archive with cursor-paged history queries.
//!
//! Entries are indexed by `(receiver_time, digest)`. Sender timestamps stay
//! inside the message and are never used for ordering.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::ops::Bound;
use std::path::Path;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::message::{
    matches, read_message, write_message, ContentFilter, MessageDigest, MessageLimits, PubsubTopic,
    WakuMessage,
};
use crate::relay::read_topic;
use crate::Nanos;

pub const DEFAULT_PAGE_SIZE: u32 = 20;
pub const MAX_PAGE_SIZE: u32 = 100;
pub const DEFAULT_CAPACITY: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("store not in full mode")]
    NotFullMode,
    #[error("store not mounted")]
    NotMounted,
    #[error("peer {0} did not advertise store full mode")]
    NotAdvertised(String),
    #[error("invalid history response: {0}")]
    Validation(String),
    #[error("store query timed out")]
    Timeout,
    #[error("store server error: {0}")]
    Remote(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("snapshot io: {0}")]
    Io(String),
}

/// Index key of an archived message; also the pagination cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cursor {
    pub receiver_time: Nanos,
    pub digest: MessageDigest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredMessage {
    pub msg: WakuMessage,
    pub pubsub_topic: PubsubTopic,
    pub receiver_time: Nanos,
    pub digest: MessageDigest,
}

impl StoredMessage {
    pub fn new(msg: WakuMessage, pubsub_topic: PubsubTopic, receiver_time: Nanos) -> Self {
        let digest = msg.digest();
        Self {
            msg,
            pubsub_topic,
            receiver_time,
            digest,
        }
    }

    pub fn key(&self) -> Cursor {
        Cursor {
            receiver_time: self.receiver_time,
            digest: self.digest,
        }
    }

    fn write(&self, w: &mut Writer) {
        w.str(self.pubsub_topic.as_str()).i64(self.receiver_time);
        write_message(w, &self.msg);
    }

    fn read(r: &mut Reader<'_>, limits: &MessageLimits) -> Result<Self, DecodeError> {
        let topic = read_topic(r)?;
        let receiver_time = r.i64()?;
        let msg = read_message(r, limits)?;
        Ok(Self::new(msg, topic, receiver_time))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryQuery {
    pub pubsub_topic: Option<PubsubTopic>,
    pub filter: ContentFilter,
    /// Inclusive lower bound on receiver time.
    pub time_start: Option<Nanos>,
    /// Exclusive upper bound on receiver time.
    pub time_end: Option<Nanos>,
    pub page_size: u32,
    /// Exclusive resume point; need not exist in the archive.
    pub cursor: Option<Cursor>,
    pub direction: Direction,
}

impl Default for HistoryQuery {
    fn default() -> Self {
        Self {
            pubsub_topic: None,
            filter: ContentFilter::default(),
            time_start: None,
            time_end: None,
            page_size: DEFAULT_PAGE_SIZE,
            cursor: None,
            direction: Direction::Forward,
        }
    }
}

impl HistoryQuery {
    pub fn topic(pubsub_topic: PubsubTopic, filter: ContentFilter) -> Self {
        Self {
            pubsub_topic: Some(pubsub_topic),
            filter,
            ..Default::default()
        }
    }

    /// Out-of-range page sizes are clamped rather than rejected.
    pub fn effective_page_size(&self) -> usize {
        self.page_size.clamp(1, MAX_PAGE_SIZE) as usize
    }

    pub fn accepts(&self, m: &StoredMessage) -> bool {
        self.pubsub_topic
            .as_ref()
            .is_none_or(|t| *t == m.pubsub_topic)
            && matches(&m.msg, &self.filter)
            && self.time_start.is_none_or(|s| m.receiver_time >= s)
            && self.time_end.is_none_or(|e| m.receiver_time < e)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match &self.pubsub_topic {
            Some(t) => w.u8(1).str(t.as_str()),
            None => w.u8(0),
        };
        w.u32(self.filter.content_topics.len() as u32);
        for t in &self.filter.content_topics {
            w.str(t);
        }
        for bound in [self.time_start, self.time_end] {
            match bound {
                Some(v) => w.u8(1).i64(v),
                None => w.u8(0),
            };
        }
        w.u32(self.page_size);
        match &self.cursor {
            Some(c) => w.u8(1).i64(c.receiver_time).raw(&c.digest.0),
            None => w.u8(0),
        };
        w.u8(match self.direction {
            Direction::Forward => 0,
            Direction::Backward => 1,
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let pubsub_topic = if r.bool()? {
            Some(read_topic(&mut r)?)
        } else {
            None
        };
        let at = r.position();
        let n = r.u32()?;
        if n > 1024 {
            return Err(DecodeError::new(at, "too many content topics"));
        }
        let content_topics = (0..n)
            .map(|_| r.str(1024).map(str::to_owned))
            .collect::<Result<_, _>>()?;
        let time_start = if r.bool()? { Some(r.i64()?) } else { None };
        let time_end = if r.bool()? { Some(r.i64()?) } else { None };
        let page_size = r.u32()?;
        let cursor = if r.bool()? {
            Some(read_cursor(&mut r)?)
        } else {
            None
        };
        let at = r.position();
        let direction = match r.u8()? {
            0 => Direction::Forward,
            1 => Direction::Backward,
            _ => return Err(DecodeError::new(at, "unknown direction")),
        };
        r.finish()?;
        Ok(Self {
            pubsub_topic,
            filter: ContentFilter { content_topics },
            time_start,
            time_end,
            page_size,
            cursor,
            direction,
        })
    }
}

fn read_cursor(r: &mut Reader<'_>) -> Result<Cursor, DecodeError> {
    let receiver_time = r.i64()?;
    let digest = MessageDigest(r.take(32)?.try_into().unwrap());
    Ok(Cursor {
        receiver_time,
        digest,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoryResponse {
    pub messages: Vec<StoredMessage>,
    pub next_cursor: Option<Cursor>,
}

impl HistoryResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.messages.len() as u32);
        for m in &self.messages {
            m.write(&mut w);
        }
        match &self.next_cursor {
            Some(c) => w.u8(1).i64(c.receiver_time).raw(&c.digest.0),
            None => w.u8(0),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8], limits: &MessageLimits) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let at = r.position();
        let n = r.u32()?;
        if n > MAX_PAGE_SIZE {
            return Err(DecodeError::new(at, format!("{n} messages exceeds page limit")));
        }
        let messages = (0..n)
            .map(|_| StoredMessage::read(&mut r, limits))
            .collect::<Result<_, _>>()?;
        let next_cursor = if r.bool()? {
            Some(read_cursor(&mut r)?)
        } else {
            None
        };
        r.finish()?;
        Ok(Self {
            messages,
            next_cursor,
        })
    }

    /// Client-side checks that a server answer is consistent with the query.
    pub fn validate(&self, q: &HistoryQuery) -> Result<(), StoreError> {
        if self.messages.len() > q.effective_page_size() {
            return Err(StoreError::Validation(format!(
                "{} messages exceeds page size {}",
                self.messages.len(),
                q.effective_page_size()
            )));
        }
        for pair in self.messages.windows(2) {
            let ordered = match q.direction {
                Direction::Forward => pair[0].key() < pair[1].key(),
                Direction::Backward => pair[0].key() > pair[1].key(),
            };
            if !ordered {
                return Err(StoreError::Validation(
                    "messages not ordered in query direction".into(),
                ));
            }
        }
        if let Some(c) = q.cursor {
            let past = |m: &StoredMessage| match q.direction {
                Direction::Forward => m.key() > c,
                Direction::Backward => m.key() < c,
            };
            if !self.messages.iter().all(past) {
                return Err(StoreError::Validation("message not after cursor".into()));
            }
        }
        if let Some(bad) = self.messages.iter().find(|m| !q.accepts(m)) {
            return Err(StoreError::Validation(format!(
                "message {} does not match query",
                bad.digest
            )));
        }
        if let Some(next) = self.next_cursor {
            if self.messages.last().map(StoredMessage::key) != Some(next) {
                return Err(StoreError::Validation(
                    "next cursor is not the last returned key".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Archive {
    entries: BTreeMap<Cursor, StoredMessage>,
    capacity: usize,
}

impl Archive {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "archive capacity must be positive");
        Self {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &StoredMessage> {
        self.entries.values()
    }

    pub fn contains_digest(&self, digest: &MessageDigest) -> bool {
        self.entries.values().any(|m| m.digest == *digest)
    }

    /// Inserts at the sorted position and evicts the smallest keys beyond
    /// capacity. Returns false for a duplicate key.
    pub fn insert(&mut self, msg: WakuMessage, pubsub_topic: PubsubTopic, receiver_time: Nanos) -> bool {
        self.insert_stored(StoredMessage::new(msg, pubsub_topic, receiver_time))
    }

    pub fn insert_stored(&mut self, stored: StoredMessage) -> bool {
        let key = stored.key();
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, stored);
        while self.entries.len() > self.capacity {
            self.entries.pop_first();
        }
        true
    }

    pub fn query(&self, q: &HistoryQuery) -> HistoryResponse {
        let page = q.effective_page_size();
        let iter: Box<dyn Iterator<Item = &StoredMessage>> = match (q.direction, q.cursor) {
            (Direction::Forward, Some(c)) => Box::new(
                self.entries
                    .range((Bound::Excluded(c), Bound::Unbounded))
                    .map(|(_, v)| v),
            ),
            (Direction::Forward, None) => Box::new(self.entries.values()),
            (Direction::Backward, Some(c)) => Box::new(
                self.entries
                    .range((Bound::Unbounded, Bound::Excluded(c)))
                    .rev()
                    .map(|(_, v)| v),
            ),
            (Direction::Backward, None) => Box::new(self.entries.values().rev()),
        };
        let mut matching = iter.filter(|m| q.accepts(m));
        let messages: Vec<StoredMessage> = matching.by_ref().take(page).cloned().collect();
        let next_cursor = if messages.len() == page && matching.next().is_some() {
            messages.last().map(StoredMessage::key)
        } else {
            None
        };
        HistoryResponse {
            messages,
            next_cursor,
        }
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in self.entries.values() {
            let mut w = Writer::new();
            m.write(&mut w);
            let rec = w.finish();
            out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
            out.extend_from_slice(&rec);
        }
        out
    }

    pub fn from_snapshot_bytes(
        bytes: &[u8],
        capacity: usize,
        limits: &MessageLimits,
    ) -> Result<Self, DecodeError> {
        let mut archive = Self::new(capacity);
        let mut r = Reader::new(bytes);
        while !r.is_empty() {
            let base = r.position();
            let rec = r.bytes(usize::MAX)?;
            let mut inner = Reader::new(rec);
            let stored = StoredMessage::read(&mut inner, limits)
                .and_then(|m| inner.finish().map(|_| m))
                .map_err(|e| DecodeError::new(base + 4 + e.position, e.reason))?;
            archive.insert_stored(stored);
        }
        Ok(archive)
    }

    /// Writes the snapshot to a temporary file and renames it into place.
    pub fn write_snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| StoreError::Io(e.to_string());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.snapshot_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load_snapshot(path: &Path, capacity: usize, limits: &MessageLimits) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|e| StoreError::Io(e.to_string()))?;
        Ok(Self::from_snapshot_bytes(&bytes, capacity, limits)?)
    }
}

/// Trims a response until its encoding fits in `max_body` bytes, moving
/// `next_cursor` back so the client resumes after the last kept entry.
pub fn fit_response(mut resp: HistoryResponse, max_body: usize) -> HistoryResponse {
    while resp.messages.len() > 1 && resp.encode().len() + 1 > max_body {
        resp.messages.pop();
        resp.next_cursor = resp.messages.last().map(StoredMessage::key);
    }
    resp
}
