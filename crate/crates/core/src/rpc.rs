//! JSON-RPC 2.0 management API: envelope handling, the method registry and
//! the per-node state behind it (poll buffers, in-flight calls).
//!
//! Transport-agnostic: the daemon feeds HTTP bodies through [`parse_request`],
//! runs the resulting [`Call`] against its node with [`RpcState::execute`],
//! and completes deferred calls as [`RpcState::observe`] sees node outputs.

use std::collections::{BTreeMap, VecDeque};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::message::{ContentFilter, MessageDigest, PubsubTopic, WakuMessage};
use crate::node::{Node, Output};
use crate::store::{Cursor, Direction, HistoryQuery, HistoryResponse, StoredMessage, DEFAULT_PAGE_SIZE};
use crate::wire::{Capabilities, PeerId, ProtocolId};
use crate::Nanos;

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const SERVER_ERROR: i64 = -32000;

/// Messages kept per poll buffer; the oldest is dropped beyond this.
pub const POLL_BUFFER_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} ({code})")]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn params(message: impl Into<String>) -> Self {
        Self::new(INVALID_PARAMS, message)
    }

    fn server(message: impl ToString) -> Self {
        Self::new(SERVER_ERROR, message.to_string())
    }
}

/// Method name and the protocol that must be mounted to expose it.
pub const METHODS: [(&str, Option<ProtocolId>); 7] = [
    ("post_waku_v2_relay_v1_message", Some(ProtocolId::Relay)),
    ("get_waku_v2_relay_v1_messages", Some(ProtocolId::Relay)),
    ("get_waku_v2_store_v1_messages", Some(ProtocolId::Store)),
    ("post_waku_v2_filter_v1_subscription", Some(ProtocolId::Filter)),
    ("delete_waku_v2_filter_v1_subscription", Some(ProtocolId::Filter)),
    ("get_waku_v2_filter_v1_messages", Some(ProtocolId::Filter)),
    ("get_waku_v2_debug_v1_info", None),
];

/// Methods registered for a node with the given capabilities.
pub fn registered_methods(caps: &Capabilities) -> Vec<&'static str> {
    METHODS
        .iter()
        .filter(|(_, p)| p.is_none_or(|p| caps.has(p)))
        .map(|(m, _)| *m)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Value,
    pub method: String,
    pub params: Value,
}

/// Parses a JSON-RPC 2.0 request envelope. On failure returns the id to
/// echo (null when unknown) with the error.
pub fn parse_request(body: &str) -> Result<Request, (Value, RpcError)> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| (Value::Null, RpcError::new(PARSE_ERROR, format!("parse error: {e}"))))?;
    let Value::Object(obj) = v else {
        return Err((Value::Null, RpcError::new(INVALID_REQUEST, "request must be an object")));
    };
    let id = obj.get("id").cloned().unwrap_or(Value::Null);
    if !matches!(id, Value::Null | Value::Number(_) | Value::String(_)) {
        return Err((Value::Null, RpcError::new(INVALID_REQUEST, "id must be a number, string or null")));
    }
    if obj.get("jsonrpc") != Some(&Value::String("2.0".into())) {
        return Err((id, RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\"")));
    }
    let Some(Value::String(method)) = obj.get("method") else {
        return Err((id, RpcError::new(INVALID_REQUEST, "method must be a string")));
    };
    let params = obj.get("params").cloned().unwrap_or(Value::Array(Vec::new()));
    if !matches!(params, Value::Array(_)) {
        return Err((id, RpcError::new(INVALID_PARAMS, "params must be an array")));
    }
    Ok(Request {
        id,
        method: method.clone(),
        params,
    })
}

pub fn success_response(id: Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

pub fn error_response(id: Value, err: &RpcError) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": err.code, "message": err.message}})
}

#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    RelayPost {
        topic: PubsubTopic,
        msg: WakuMessage,
    },
    RelayGet {
        topic: PubsubTopic,
    },
    StoreQuery {
        query: HistoryQuery,
        peer: Option<PeerId>,
    },
    FilterSubscribe {
        topic: PubsubTopic,
        filter: ContentFilter,
        peer: Option<PeerId>,
    },
    FilterUnsubscribe {
        id: String,
    },
    FilterGet {
        id: String,
    },
    DebugInfo,
}

fn positional(params: &Value, n: usize) -> Result<&[Value], RpcError> {
    let arr = params.as_array().map(Vec::as_slice).unwrap_or_default();
    if arr.len() != n {
        return Err(RpcError::params(format!("expected {n} params, got {}", arr.len())));
    }
    Ok(arr)
}

fn topic_param(v: &Value) -> Result<PubsubTopic, RpcError> {
    let s = v.as_str().ok_or_else(|| RpcError::params("topic must be a string"))?;
    PubsubTopic::new(s).map_err(|e| RpcError::params(e.to_string()))
}

fn string_param(v: &Value, what: &str) -> Result<String, RpcError> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| RpcError::params(format!("{what} must be a string")))
}

/// Resolves a method against the registry of a node with `caps`.
pub fn parse_call(method: &str, params: &Value, caps: &Capabilities) -> Result<Call, RpcError> {
    if !registered_methods(caps).contains(&method) {
        return Err(RpcError::new(METHOD_NOT_FOUND, format!("method not found: {method}")));
    }
    match method {
        "post_waku_v2_relay_v1_message" => {
            let p = positional(params, 2)?;
            Ok(Call::RelayPost {
                topic: topic_param(&p[0])?,
                msg: message_from_json(&p[1]).map_err(RpcError::params)?,
            })
        }
        "get_waku_v2_relay_v1_messages" => {
            let p = positional(params, 1)?;
            Ok(Call::RelayGet {
                topic: topic_param(&p[0])?,
            })
        }
        "get_waku_v2_store_v1_messages" => {
            let p = positional(params, 1)?;
            let (query, peer) = query_from_json(&p[0]).map_err(RpcError::params)?;
            Ok(Call::StoreQuery { query, peer })
        }
        "post_waku_v2_filter_v1_subscription" => {
            let arr = params.as_array().map(Vec::as_slice).unwrap_or_default();
            if !(2..=3).contains(&arr.len()) {
                return Err(RpcError::params("expected contentFilters, topic and optional peerId"));
            }
            let filters = arr[0]
                .as_array()
                .ok_or_else(|| RpcError::params("contentFilters must be an array"))?;
            let topics = filters
                .iter()
                .map(|f| {
                    f.get("contentTopic")
                        .and_then(Value::as_str)
                        .map(str::to_owned)
                        .ok_or_else(|| RpcError::params("content filter needs a contentTopic string"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let peer = match arr.get(2) {
                None | Some(Value::Null) => None,
                Some(v) => Some(peer_param(v)?),
            };
            Ok(Call::FilterSubscribe {
                topic: topic_param(&arr[1])?,
                filter: ContentFilter::topics(topics),
                peer,
            })
        }
        "delete_waku_v2_filter_v1_subscription" => {
            let p = positional(params, 1)?;
            Ok(Call::FilterUnsubscribe {
                id: string_param(&p[0], "subscription id")?,
            })
        }
        "get_waku_v2_filter_v1_messages" => {
            let p = positional(params, 1)?;
            Ok(Call::FilterGet {
                id: string_param(&p[0], "subscription id")?,
            })
        }
        "get_waku_v2_debug_v1_info" => {
            positional(params, 0)?;
            Ok(Call::DebugInfo)
        }
        _ => unreachable!("registry covers every method"),
    }
}

fn peer_param(v: &Value) -> Result<PeerId, RpcError> {
    let s = v.as_str().ok_or_else(|| RpcError::params("peerId must be a string"))?;
    PeerId::new(s).map_err(|e| RpcError::params(e.to_string()))
}

// ---- JSON shapes ---------------------------------------------------------

pub fn message_to_json(msg: &WakuMessage) -> Value {
    json!({
        "payload": BASE64.encode(&msg.payload),
        "contentTopic": msg.content_topic,
        "version": msg.version,
        "timestamp": msg.timestamp,
    })
}

/// `payload` and `contentTopic` are required; `version` and `timestamp` default to 0.
pub fn message_from_json(v: &Value) -> Result<WakuMessage, String> {
    let obj = v.as_object().ok_or("message must be an object")?;
    let payload = obj
        .get("payload")
        .and_then(Value::as_str)
        .ok_or("payload must be a base64 string")?;
    let payload = BASE64
        .decode(payload)
        .map_err(|e| format!("payload is not base64: {e}"))?;
    let content_topic = obj
        .get("contentTopic")
        .and_then(Value::as_str)
        .ok_or("contentTopic must be a string")?;
    let version = match obj.get("version") {
        None => 0,
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or("version must be an unsigned 32-bit integer")?,
    };
    let timestamp = match obj.get("timestamp") {
        None => 0,
        Some(v) => v.as_i64().ok_or("timestamp must be a 64-bit integer")?,
    };
    Ok(WakuMessage::new(content_topic, payload)
        .with_version(version)
        .with_timestamp(timestamp))
}

fn cursor_to_json(c: &Cursor) -> Value {
    json!({"receiverTime": c.receiver_time, "digest": c.digest.to_hex()})
}

fn cursor_from_json(v: &Value) -> Result<Cursor, String> {
    let receiver_time = v
        .get("receiverTime")
        .and_then(Value::as_i64)
        .ok_or("cursor.receiverTime must be an integer")?;
    let digest = v
        .get("digest")
        .and_then(Value::as_str)
        .ok_or("cursor.digest must be a hex string")?;
    let digest = MessageDigest::from_hex(digest).map_err(|e| format!("cursor.digest: {e}"))?;
    Ok(Cursor {
        receiver_time,
        digest,
    })
}

pub fn query_to_json(q: &HistoryQuery, peer: Option<&PeerId>) -> Value {
    let mut obj = Map::new();
    if let Some(t) = &q.pubsub_topic {
        obj.insert("pubsubTopic".into(), json!(t.as_str()));
    }
    obj.insert("filter".into(), json!({"contentTopics": q.filter.content_topics}));
    if let Some(t) = q.time_start {
        obj.insert("timeStart".into(), json!(t));
    }
    if let Some(t) = q.time_end {
        obj.insert("timeEnd".into(), json!(t));
    }
    obj.insert("pageSize".into(), json!(q.page_size));
    if let Some(c) = &q.cursor {
        obj.insert("cursor".into(), cursor_to_json(c));
    }
    obj.insert(
        "direction".into(),
        json!(match q.direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }),
    );
    if let Some(p) = peer {
        obj.insert("peerId".into(), json!(p.as_str()));
    }
    Value::Object(obj)
}

pub fn query_from_json(v: &Value) -> Result<(HistoryQuery, Option<PeerId>), String> {
    let obj = v.as_object().ok_or("query must be an object")?;
    let present = |k: &str| obj.get(k).filter(|v| !v.is_null());
    let pubsub_topic = present("pubsubTopic")
        .map(|t| {
            t.as_str()
                .ok_or_else(|| "pubsubTopic must be a string".to_owned())
                .and_then(|s| PubsubTopic::new(s).map_err(|e| e.to_string()))
        })
        .transpose()?;
    let content_topics = match present("filter") {
        None => Vec::new(),
        Some(f) => f
            .get("contentTopics")
            .and_then(Value::as_array)
            .ok_or("filter.contentTopics must be an array")?
            .iter()
            .map(|t| t.as_str().map(str::to_owned).ok_or("content topics must be strings"))
            .collect::<Result<_, _>>()?,
    };
    let int = |k: &str| -> Result<Option<i64>, String> {
        present(k)
            .map(|v| v.as_i64().ok_or(format!("{k} must be an integer")))
            .transpose()
    };
    let page_size = match present("pageSize") {
        None => DEFAULT_PAGE_SIZE,
        Some(v) => v
            .as_u64()
            .map(|n| n.min(u32::MAX as u64) as u32)
            .ok_or("pageSize must be a non-negative integer")?,
    };
    let direction = match present("direction").map(Value::as_str) {
        None | Some(Some("forward")) => Direction::Forward,
        Some(Some("backward")) => Direction::Backward,
        Some(_) => return Err("direction must be \"forward\" or \"backward\"".into()),
    };
    let peer = present("peerId")
        .map(|p| {
            p.as_str()
                .ok_or_else(|| "peerId must be a string".to_owned())
                .and_then(|s| PeerId::new(s).map_err(|e| e.to_string()))
        })
        .transpose()?;
    Ok((
        HistoryQuery {
            pubsub_topic,
            filter: ContentFilter { content_topics },
            time_start: int("timeStart")?,
            time_end: int("timeEnd")?,
            page_size,
            cursor: present("cursor").map(cursor_from_json).transpose()?,
            direction,
        },
        peer,
    ))
}

fn stored_to_json(m: &StoredMessage) -> Value {
    json!({
        "message": message_to_json(&m.msg),
        "pubsubTopic": m.pubsub_topic.as_str(),
        "receiverTime": m.receiver_time,
        "digest": m.digest.to_hex(),
    })
}

pub fn history_to_json(resp: &HistoryResponse) -> Value {
    json!({
        "messages": resp.messages.iter().map(stored_to_json).collect::<Vec<_>>(),
        "cursor": resp.next_cursor.as_ref().map(cursor_to_json),
    })
}

pub fn debug_info(caps: &Capabilities, listen_addresses: &[String]) -> Value {
    json!({
        "peerId": caps.peer.as_str(),
        "capabilities": caps
            .protocols
            .iter()
            .map(|(p, m)| json!({"protocol": p.as_str(), "mode": m.to_string()}))
            .collect::<Vec<_>>(),
        "listenAddresses": listen_addresses,
    })
}

// ---- execution -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Exec {
    Done(Value),
    /// Completes when the node emits the result for this request id.
    Pending(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PendingCall {
    Store,
    FilterSubscribe,
    FilterUnsubscribe,
}

#[derive(Debug, Default)]
pub struct RpcState {
    relay_buffers: BTreeMap<PubsubTopic, VecDeque<WakuMessage>>,
    filter_buffers: BTreeMap<String, VecDeque<WakuMessage>>,
    pending: BTreeMap<u64, PendingCall>,
    listen_addresses: Vec<String>,
}

fn push_capped(buf: &mut VecDeque<WakuMessage>, msg: WakuMessage) {
    if buf.len() == POLL_BUFFER_CAP {
        buf.pop_front();
    }
    buf.push_back(msg);
}

impl RpcState {
    pub fn new(listen_addresses: Vec<String>) -> Self {
        Self {
            listen_addresses,
            ..Self::default()
        }
    }

    pub fn execute(&mut self, node: &mut Node, call: Call, now: Nanos) -> Result<Exec, RpcError> {
        match call {
            Call::RelayPost { topic, msg } => {
                node.publish(topic, msg, now).map_err(RpcError::server)?;
                Ok(Exec::Done(Value::Bool(true)))
            }
            Call::RelayGet { topic } => {
                let drained: Vec<Value> = self
                    .relay_buffers
                    .get_mut(&topic)
                    .map(|b| b.drain(..).map(|m| message_to_json(&m)).collect())
                    .unwrap_or_default();
                Ok(Exec::Done(Value::Array(drained)))
            }
            Call::StoreQuery { query, peer } => {
                let target = match peer {
                    Some(p) => Some(p),
                    None if node.archive().is_some() => None,
                    None => Some(
                        node.find_server(ProtocolId::Store)
                            .ok_or_else(|| RpcError::server("no connected store peer"))?,
                    ),
                };
                match target {
                    None => {
                        let resp = node.local_store_query(&query).map_err(RpcError::server)?;
                        Ok(Exec::Done(history_to_json(&resp)))
                    }
                    Some(p) => {
                        let id = node.store_query(&p, query, now).map_err(RpcError::server)?;
                        self.pending.insert(id, PendingCall::Store);
                        Ok(Exec::Pending(id))
                    }
                }
            }
            Call::FilterSubscribe {
                topic,
                filter,
                peer,
            } => {
                let server = match peer {
                    Some(p) => p,
                    None => node
                        .find_server(ProtocolId::Filter)
                        .ok_or_else(|| RpcError::server("no connected filter peer"))?,
                };
                let id = node
                    .filter_subscribe(&server, topic, filter, now)
                    .map_err(RpcError::server)?;
                self.pending.insert(id, PendingCall::FilterSubscribe);
                Ok(Exec::Pending(id))
            }
            Call::FilterUnsubscribe { id } => {
                let server = node
                    .client_subscriptions()
                    .get(&id)
                    .map(|s| s.server.clone())
                    .ok_or_else(|| RpcError::server("no such subscription"))?;
                let req = node
                    .filter_unsubscribe(&server, &id, now)
                    .map_err(RpcError::server)?;
                self.filter_buffers.remove(&id);
                self.pending.insert(req, PendingCall::FilterUnsubscribe);
                Ok(Exec::Pending(req))
            }
            Call::FilterGet { id } => {
                let buf = self
                    .filter_buffers
                    .get_mut(&id)
                    .ok_or_else(|| RpcError::server("no such subscription"))?;
                let drained = buf.drain(..).map(|m| message_to_json(&m)).collect();
                Ok(Exec::Done(Value::Array(drained)))
            }
            Call::DebugInfo => Ok(Exec::Done(debug_info(node.capabilities(), &self.listen_addresses))),
        }
    }

    /// Feeds a node output through the API state. Returns the completion of
    /// a deferred call when `out` resolves one.
    pub fn observe(&mut self, out: &Output) -> Option<(u64, Result<Value, RpcError>)> {
        match out {
            Output::Delivered { topic, msg, .. } => {
                push_capped(self.relay_buffers.entry(topic.clone()).or_default(), msg.clone());
                None
            }
            Output::FilterPush { push, .. } => {
                if let Some(buf) = self.filter_buffers.get_mut(&push.subscription_id) {
                    push_capped(buf, push.msg.clone());
                }
                None
            }
            Output::StoreResult { request_id, result } => {
                self.pending.remove(request_id)?;
                Some((
                    *request_id,
                    result.as_ref().map(history_to_json).map_err(RpcError::server),
                ))
            }
            Output::FilterSubscribed { request_id, result } => {
                self.pending.remove(request_id)?;
                if let Ok(id) = result {
                    self.filter_buffers.entry(id.clone()).or_default();
                }
                Some((
                    *request_id,
                    result.clone().map(Value::String).map_err(RpcError::server),
                ))
            }
            Output::FilterUnsubscribed { request_id, result } => {
                self.pending.remove(request_id)?;
                Some((
                    *request_id,
                    result.clone().map(|_| Value::Bool(true)).map_err(RpcError::server),
                ))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::parse_config;

    fn node(name: &str, argv: &[&str]) -> Node {
        Node::new(&parse_config(argv).unwrap(), PeerId::new(name).unwrap(), 1, 0).unwrap()
    }

    fn call(state: &mut RpcState, n: &mut Node, method: &str, params: Value) -> Result<Value, RpcError> {
        let c = parse_call(method, &params, n.capabilities())?;
        let r = state.execute(n, c, 0)?;
        for out in n.take_outputs() {
            state.observe(&out);
        }
        match r {
            Exec::Done(v) => Ok(v),
            Exec::Pending(id) => panic!("unexpected pending call {id}"),
        }
    }

    #[test]
    fn envelope_errors() {
        assert_eq!(parse_request("{").unwrap_err().1.code, PARSE_ERROR);
        assert_eq!(parse_request("[]").unwrap_err().1.code, INVALID_REQUEST);
        let (id, e) = parse_request(r#"{"jsonrpc":"1.0","id":4,"method":"x"}"#).unwrap_err();
        assert_eq!((id, e.code), (json!(4), INVALID_REQUEST));
        assert_eq!(
            parse_request(r#"{"jsonrpc":"2.0","id":1,"method":"x","params":{}}"#).unwrap_err().1.code,
            INVALID_PARAMS
        );
        let req = parse_request(r#"{"jsonrpc":"2.0","id":"a","method":"m"}"#).unwrap();
        assert_eq!(req.params, json!([]));
    }

    #[test]
    fn unknown_and_unmounted_methods_not_found() {
        let n = node("A", &["--relay:true"]);
        let e = parse_call("no_such_method", &json!([]), n.capabilities()).unwrap_err();
        assert_eq!(e.code, METHOD_NOT_FOUND);
        let e = parse_call("get_waku_v2_store_v1_messages", &json!([{}]), n.capabilities()).unwrap_err();
        assert_eq!(e.code, METHOD_NOT_FOUND);
        assert!(registered_methods(n.capabilities()).contains(&"post_waku_v2_relay_v1_message"));
    }

    #[test]
    fn invalid_params() {
        let n = node("A", &["--relay:true"]);
        let caps = n.capabilities();
        for params in [json!([]), json!(["t"]), json!(["t", {"payload": "!!", "contentTopic": "c"}]), json!(["", {}])] {
            let e = parse_call("post_waku_v2_relay_v1_message", &params, caps).unwrap_err();
            assert_eq!(e.code, INVALID_PARAMS, "{params}");
        }
    }

    #[test]
    fn relay_post_then_poll_drains_once() {
        let mut n = node("A", &["--relay:true", "--topics:t"]);
        let mut s = RpcState::default();
        let msg = json!({"payload": BASE64.encode(b"hi"), "contentTopic": "c", "version": 0, "timestamp": 5});
        assert_eq!(call(&mut s, &mut n, "post_waku_v2_relay_v1_message", json!(["t", msg.clone()])), Ok(json!(true)));
        assert_eq!(call(&mut s, &mut n, "get_waku_v2_relay_v1_messages", json!(["t"])), Ok(json!([msg])));
        assert_eq!(call(&mut s, &mut n, "get_waku_v2_relay_v1_messages", json!(["t"])), Ok(json!([])));
    }

    #[test]
    fn poll_buffer_drops_oldest_beyond_cap() {
        let mut s = RpcState::default();
        let t = PubsubTopic::new("t").unwrap();
        for i in 0..(POLL_BUFFER_CAP + 5) {
            let msg = WakuMessage::new("c", (i as u32).to_le_bytes().to_vec());
            s.observe(&Output::Delivered { topic: t.clone(), digest: msg.digest(), msg, from: None });
        }
        let mut n = node("A", &["--relay:true"]);
        let Exec::Done(Value::Array(got)) = s.execute(&mut n, Call::RelayGet { topic: t }, 0).unwrap() else {
            panic!()
        };
        assert_eq!(got.len(), POLL_BUFFER_CAP);
        assert_eq!(got[0]["payload"], json!(BASE64.encode(5u32.to_le_bytes())));
    }

    #[test]
    fn local_store_query_over_rpc() {
        let mut n = node("B", &["--relay:true", "--store:true", "--persist-messages:true"]);
        let mut s = RpcState::default();
        n.publish(PubsubTopic::new("pub1").unwrap(), WakuMessage::new("content1", b"msg1".to_vec()), 3).unwrap();
        let v = call(
            &mut s,
            &mut n,
            "get_waku_v2_store_v1_messages",
            json!([{"pubsubTopic": "pub1", "filter": {"contentTopics": ["content1"]}}]),
        )
        .unwrap();
        assert_eq!(v["messages"].as_array().unwrap().len(), 1);
        assert_eq!(v["messages"][0]["message"]["payload"], json!(BASE64.encode(b"msg1")));
        assert_eq!(v["messages"][0]["receiverTime"], json!(3));
        assert_eq!(v["cursor"], Value::Null);
    }

    #[test]
    fn debug_info_lists_capabilities() {
        let mut n = node("A", &["--relay:true", "--store:true"]);
        let mut s = RpcState::new(vec!["/ip4/127.0.0.1/tcp/60000/p2p/A".into()]);
        let v = call(&mut s, &mut n, "get_waku_v2_debug_v1_info", json!([])).unwrap();
        assert_eq!(v["peerId"], json!("A"));
        assert_eq!(
            v["capabilities"],
            json!([
                {"protocol": "/vac/waku/relay/2.0.0", "mode": "full"},
                {"protocol": "/vac/waku/store/2.0.0", "mode": "light"},
            ])
        );
        assert_eq!(v["listenAddresses"][0], json!("/ip4/127.0.0.1/tcp/60000/p2p/A"));
    }

    #[test]
    fn query_json_round_trip() {
        let q = HistoryQuery {
            pubsub_topic: Some(PubsubTopic::new("p").unwrap()),
            filter: ContentFilter::topics(["a"]),
            time_start: Some(1),
            time_end: Some(9),
            page_size: 7,
            cursor: Some(Cursor { receiver_time: 4, digest: WakuMessage::new("a", vec![]).digest() }),
            direction: Direction::Backward,
        };
        let peer = PeerId::new("B").unwrap();
        assert_eq!(query_from_json(&query_to_json(&q, Some(&peer))).unwrap(), (q, Some(peer)));
        let (d, p) = query_from_json(&json!({})).unwrap();
        assert_eq!((d, p), (HistoryQuery { pubsub_topic: None, ..HistoryQuery::default() }, None));
    }

    #[test]
    fn message_json_round_trip() {
        let m = WakuMessage::new("c", vec![0, 255, 7]).with_version(2).with_timestamp(-9);
        assert_eq!(message_from_json(&message_to_json(&m)).unwrap(), m);
    }
}
