//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails. Run with `cargo test -p wakunode --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use tempfile::TempDir;
use waku_core::discovery::{parse_multiaddr, verify_peer_list, DiscoveryError, Multiaddr, PeerListSigner};
use waku_core::message::{decode_message, encode_message, ContentFilter, MessageDigest, PubsubTopic, WakuMessage};
use waku_core::node::{parse_config, Mount, NodeConfig, Output};
use waku_core::relay::RelayRpc;
use waku_core::store::{Archive, Cursor, Direction, HistoryQuery, HistoryResponse, StoredMessage};
use waku_core::simnet::{
    random_topology, run_figure2_scenario, EventKind, Scenario, Sim, SimConfig, SimEvent,
};
use waku_core::wire::{decode_frame, encode_frame, Capabilities, Frame, FrameKind, Mode, PeerId, ProtocolId};
use waku_core::Nanos;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const MS: Nanos = 1_000_000;

fn topic(s: &str) -> PubsubTopic {
    PubsubTopic::new(s).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sim(seed: u64, jitter_ms: u64) -> Sim {
    Sim::new(SimConfig {
        seed,
        jitter: Duration::from_millis(jitter_ms),
        ..SimConfig::default()
    })
    .unwrap()
}

fn relay_deliveries<'a>(events: &'a [SimEvent], digest: &'a MessageDigest) -> impl Iterator<Item = &'a SimEvent> {
    events.iter().filter(move |e| {
        e.kind == EventKind::AppDelivery && e.protocol == Some(ProtocolId::Relay) && e.digest.as_ref() == Some(digest)
    })
}

// ---- 1 -------------------------------------------------------------------

fn figure2() -> Outcome {
    let started = Instant::now();
    let mut s = Sim::new(Scenario::figure2().sim_config(0)).map_err(err)?;
    let report = run_figure2_scenario(&mut s);
    let wall = started.elapsed();
    if let Some(f) = report.failed_step() {
        return Err(format!("step {} {} failed: {}", f.index, f.action, f.detail));
    }
    let msg1 = WakuMessage::new("content1", b"msg1".to_vec());
    let b = s.node("B").ok_or("no B")?;
    let archived: Vec<_> = b.archive().ok_or("B has no archive")?.iter().map(|m| m.msg.clone()).collect();
    ensure!(archived == vec![msg1.clone()], "B archive {archived:?}");
    let answers: Vec<_> = s
        .observed("C")
        .iter()
        .filter_map(|o| match o {
            Output::StoreResult { result: Ok(r), .. } => Some(r.messages.iter().map(|m| m.msg.clone()).collect::<Vec<_>>()),
            _ => None,
        })
        .collect();
    ensure!(answers == vec![vec![msg1]], "C store answers {answers:?}");
    ensure!(wall < Duration::from_secs(1), "took {wall:?}");
    Ok(format!("C received exactly [msg1] in {wall:?} wall"))
}

// ---- 2 -------------------------------------------------------------------

const LISTING: [&str; 11] = [
    "--staticnode:/ip4/134.209.139.210/tcp/30303/p2p/16Uiu2HAmPLe7Mzm8TsYUubgCAW1aJoeFScxrLj8ppHFivPo97bUZ",
    "--relay:true",
    "--topics:/waku/2/default-waku/proto",
    "--store:true",
    "--persist-messages:true",
    "--store-capacity:1000",
    "--filter:true",
    "--lightpush:true",
    "--rpc:true",
    "--rpcAddress:127.0.0.1",
    "--rpc-port:8545",
];

fn listing_node() -> Outcome {
    let parsed = parse_config(&LISTING).map_err(err)?;
    let expected = NodeConfig {
        staticnode: vec![parse_multiaddr(
            "/ip4/134.209.139.210/tcp/30303/p2p/16Uiu2HAmPLe7Mzm8TsYUubgCAW1aJoeFScxrLj8ppHFivPo97bUZ",
        )
        .map_err(err)?],
        relay: true,
        topics: vec![topic("/waku/2/default-waku/proto")],
        store: true,
        persist_messages: true,
        store_capacity: 1000,
        filter: Mount::Full,
        lightpush: Mount::Full,
        rpc: true,
        rpc_address: Ipv4Addr::LOCALHOST,
        rpc_port: 8545,
        ..NodeConfig::default()
    };
    ensure!(parsed == expected, "parsed config differs: {parsed:?}");

    // The static node is a public host; the test stays on loopback.
    let dir = TempDir::new().map_err(err)?;
    let mut config = parsed;
    config.staticnode.clear();
    config.listen_port = 0;
    config.data_dir = dir.path().to_path_buf();
    let rt = tokio::runtime::Runtime::new().map_err(err)?;
    rt.block_on(async move {
        let h = wakunode::start(config).await.map_err(|e| format!("{e:#}"))?;
        let body = json!({"jsonrpc": "2.0", "id": 1, "method": "get_waku_v2_debug_v1_info", "params": []}).to_string();
        let reply = tokio::task::spawn_blocking(move || -> Result<Value, String> {
            let mut resp = ureq::post("http://127.0.0.1:8545/").send(&body).map_err(err)?;
            serde_json::from_str(&resp.body_mut().read_to_string().map_err(err)?).map_err(err)
        })
        .await
        .map_err(err)?;
        let subscribed = h
            .inspect(|n| n.relay().is_some_and(|r| r.topic(&topic("/waku/2/default-waku/proto")).is_some_and(|t| t.subscribed_locally)))
            .await;
        h.stop().await.map_err(|e| format!("{e:#}"))?;
        let reply = reply?;
        let want = json!([
            {"protocol": "/vac/waku/relay/2.0.0", "mode": "full"},
            {"protocol": "/vac/waku/store/2.0.0", "mode": "full"},
            {"protocol": "/vac/waku/filter/2.0.0", "mode": "full"},
            {"protocol": "/vac/waku/lightpush/2.0.0", "mode": "full"},
        ]);
        ensure!(reply["result"]["capabilities"] == want, "debug info {reply}");
        ensure!(subscribed == Some(true), "not subscribed to the default topic");
        Ok("config parsed; RPC on 127.0.0.1:8545 reports relay, store, filter, lightpush full".to_owned())
    })
}

// ---- 3, 4 ----------------------------------------------------------------

struct GossipRun {
    checked: usize,
    max_ratio: f64,
}

fn bfs_oracle(adj: &[Vec<usize>], subscribed: &[bool], from: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if subscribed[v] && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().filter(|&v| subscribed[v]).collect()
}

fn gossip_runs() -> Result<GossipRun, String> {
    let mut checked = 0;
    let mut max_ratio: f64 = 0.0;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0000 + case);
        let n = rng.random_range(2..=20);
        let extra = rng.random_range(0..=n);
        let topo = random_topology(n, extra, 0.75, &mut rng);
        let mut s = sim(case, 4);
        let name = |i: usize| format!("n{i}");
        for i in 0..n {
            let mut args = vec!["--relay:true".to_owned()];
            if topo.subscribed[i] {
                args.push("--topics:t".into());
            }
            s.add_node_args(&name(i), &args).map_err(err)?;
        }
        for &(a, b) in &topo.edges {
            s.connect(&name(a), &name(b)).map_err(err)?;
        }
        s.run_until_idle(Nanos::MAX);
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &topo.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let e = topo.edges.len();
        for k in 0..3 {
            let p = rng.random_range(0..n);
            let msg = WakuMessage::new("c", format!("case{case}-msg{k}").into_bytes());
            let digest = s.publish(&name(p), &topic("t"), msg).map_err(err)?.map_err(err)?.digest;
            let t = s.run_until_idle(Nanos::MAX);
            ensure!(!t.truncated, "case {case}: run did not settle");

            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for ev in relay_deliveries(&t.events, &digest) {
                *counts.entry(ev.dst.as_str().to_owned()).or_default() += 1;
            }
            ensure!(
                counts.values().all(|&c| c == 1),
                "case {case}: duplicate application delivery {counts:?}"
            );
            let got: BTreeSet<String> = counts.into_keys().collect();
            let want: BTreeSet<String> = bfs_oracle(&adj, &topo.subscribed, p).into_iter().map(name).collect();
            ensure!(got == want, "case {case} msg {k}: delivered {got:?}, oracle {want:?}");

            let sends = t
                .events
                .iter()
                .filter(|ev| ev.kind == EventKind::FrameSent && ev.label == "MESSAGE" && ev.digest == Some(digest))
                .count();
            ensure!(sends <= 2 * e, "case {case} msg {k}: {sends} MESSAGE frames > 2E = {}", 2 * e);
            if e > 0 {
                max_ratio = max_ratio.max(sends as f64 / e as f64);
            }
            checked += 1;
        }
    }
    Ok(GossipRun { checked, max_ratio })
}

fn exactly_once() -> Outcome {
    let started = Instant::now();
    let run = gossip_runs()?;
    let wall = started.elapsed();
    ensure!(wall < Duration::from_secs(30), "took {wall:?}");
    Ok(format!("{} messages over 50 topologies match the BFS oracle in {wall:?}", run.checked))
}

fn message_bound() -> Outcome {
    let run = gossip_runs()?;
    Ok(format!("{} messages, max MESSAGE frames / E = {:.2}", run.checked, run.max_ratio))
}

// ---- 5 -------------------------------------------------------------------

fn oracle_query(all: &[StoredMessage], q: &HistoryQuery) -> Vec<Cursor> {
    let mut hits: Vec<Cursor> = all
        .iter()
        .filter(|m| q.pubsub_topic.as_ref().is_none_or(|t| *t == m.pubsub_topic))
        .filter(|m| q.filter.content_topics.is_empty() || q.filter.content_topics.contains(&m.msg.content_topic))
        .filter(|m| q.time_start.is_none_or(|s| m.receiver_time >= s))
        .filter(|m| q.time_end.is_none_or(|e| m.receiver_time < e))
        .map(|m| m.key())
        .collect();
    hits.sort();
    if q.direction == Direction::Backward {
        hits.reverse();
    }
    hits
}

fn traverse(archive: &Archive, mut q: HistoryQuery) -> Result<Vec<Cursor>, String> {
    let limit = q.page_size.clamp(1, 100) as usize;
    let mut out = Vec::new();
    for _ in 0..10_000 {
        let HistoryResponse { messages, next_cursor } = archive.query(&q);
        ensure!(messages.len() <= limit, "page of {} exceeds {limit}", messages.len());
        out.extend(messages.iter().map(|m| m.key()));
        match next_cursor {
            None => return Ok(out),
            Some(c) => {
                ensure!(messages.last().map(|m| m.key()) == Some(c), "cursor is not the last key of the page");
                q.cursor = Some(c);
            }
        }
    }
    Err("pagination did not terminate".into())
}

fn store_queries() -> Outcome {
    let topics = ["p1", "p2"];
    let contents = ["a", "b", "c"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5709E);
    let mut pages = 0;
    for case in 0..200 {
        let capacity = rng.random_range(1..=1000);
        let mut archive = Archive::new(capacity);
        let mut inserted: BTreeMap<Cursor, StoredMessage> = BTreeMap::new();
        for i in 0..rng.random_range(0..=1100) {
            let msg = WakuMessage::new(contents[rng.random_range(0..3)], format!("{case}/{i}").into_bytes());
            let stored = StoredMessage::new(msg, topic(topics[rng.random_range(0..2)]), rng.random_range(0..300));
            archive.insert_stored(stored.clone());
            inserted.insert(stored.key(), stored);
        }
        // Newest `capacity` keys survive.
        let kept: Vec<StoredMessage> = inserted.into_values().rev().take(capacity).collect();
        let actual: BTreeSet<Cursor> = archive.iter().map(|m| m.key()).collect();
        ensure!(
            actual == kept.iter().map(|m| m.key()).collect::<BTreeSet<_>>(),
            "case {case}: archive contents differ from the newest {capacity}"
        );
        for _ in 0..4 {
            let mut q = HistoryQuery {
                pubsub_topic: rng.random_bool(0.5).then(|| topic(topics[rng.random_range(0..2)])),
                filter: ContentFilter::topics(contents.iter().filter(|_| rng.random_bool(0.4)).copied()),
                time_start: rng.random_bool(0.4).then(|| rng.random_range(0..300)),
                time_end: rng.random_bool(0.4).then(|| rng.random_range(0..320)),
                page_size: rng.random_range(0..=130),
                cursor: None,
                direction: if rng.random_bool(0.5) { Direction::Forward } else { Direction::Backward },
            };
            let want = oracle_query(&kept, &q);
            let got = traverse(&archive, q.clone())?;
            ensure!(got == want, "case {case}: paged traversal differs for {q:?}");
            q.direction = match q.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            };
            let mut reversed = want;
            reversed.reverse();
            ensure!(traverse(&archive, q.clone())? == reversed, "case {case}: reverse traversal differs");
            pages += 1;
        }
    }

    let mut archive = Archive::new(1000);
    let mut order: Vec<Nanos> = (0..1500).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for t in order {
        archive.insert(WakuMessage::new("a", t.to_le_bytes().to_vec()), topic("p1"), t);
    }
    let times: Vec<Nanos> = archive.iter().map(|m| m.receiver_time).collect();
    ensure!(times == (500..1500).collect::<Vec<_>>(), "eviction kept {} entries starting at {:?}", times.len(), times.first());
    Ok(format!("200 archives, {pages} queries traversed both ways; eviction drops the oldest 500 of 1500"))
}

// ---- 6 -------------------------------------------------------------------

fn filter_case(seed: u64) -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = sim(seed, 3);
    let relays = 5;
    for i in 0..relays {
        s.add_node_args(&format!("r{i}"), &["--relay:true", "--topics:t"]).map_err(err)?;
    }
    s.add_node_args("S", &["--relay:true", "--topics:t", "--filter:true"]).map_err(err)?;
    s.add_node_args("L", &["--filter:light"]).map_err(err)?;
    for i in 1..relays {
        s.connect(&format!("r{}", rng.random_range(0..i)), &format!("r{i}")).map_err(err)?;
    }
    s.connect("S", "r0").map_err(err)?;
    s.connect("S", &format!("r{}", relays - 1)).map_err(err)?;
    s.connect("L", "S").map_err(err)?;
    s.run_until_idle(Nanos::MAX);
    let server = s.node("S").unwrap().peer_id().clone();
    let client = s.node("L").unwrap().peer_id().clone();
    let wanted = ContentFilter::topics(["a", "b"]);

    let mut k = 0;
    let mut publish_burst = |s: &mut Sim, rng: &mut ChaCha8Rng, span: Nanos| -> Result<(), String> {
        let start = s.now();
        let mut at = start;
        while at < start + span {
            at += rng.random_range(1..=15) * MS;
            s.advance_to(at);
            let ct = ["a", "b", "c"][rng.random_range(0..3)];
            let msg = WakuMessage::new(ct, format!("{seed}-{k}").into_bytes());
            k += 1;
            s.publish(&format!("r{}", rng.random_range(0..relays)), &topic("t"), msg).map_err(err)?.map_err(err)?;
        }
        Ok(())
    };

    publish_burst(&mut s, &mut rng, 200 * MS)?;
    s.call("L", |n, now| n.filter_subscribe(&server, topic("t"), wanted.clone(), now))
        .map_err(err)?
        .map_err(err)?;
    publish_burst(&mut s, &mut rng, 400 * MS)?;
    let id = s
        .observed("L")
        .iter()
        .find_map(|o| match o {
            Output::FilterSubscribed { result, .. } => Some(result.clone()),
            _ => None,
        })
        .ok_or("no subscribe answer")?
        .map_err(err)?;
    s.call("L", |n, now| n.filter_unsubscribe(&server, &id, now)).map_err(err)?.map_err(err)?;
    publish_burst(&mut s, &mut rng, 200 * MS)?;
    s.run_until_idle(Nanos::MAX);

    let events = &s.transcript().events;
    let at_server = |label: &str| {
        events
            .iter()
            .position(|e| e.kind == EventKind::FrameDelivered && e.dst == server && e.src == client && e.label == label)
    };
    let opened = at_server("FILTER_SUBSCRIBE").ok_or("subscribe never reached S")?;
    let closed = at_server("FILTER_UNSUBSCRIBE").ok_or("unsubscribe never reached S")?;
    let payloads: BTreeMap<MessageDigest, String> = s
        .observed("S")
        .iter()
        .filter_map(|o| match o {
            Output::Delivered { msg, digest, .. } if matches!(msg.content_topic.as_str(), "a" | "b") => {
                Some((*digest, msg.content_topic.clone()))
            }
            _ => None,
        })
        .collect();
    let expected: BTreeSet<MessageDigest> = events
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            *i > opened
                && *i < closed
                && e.kind == EventKind::AppDelivery
                && e.protocol == Some(ProtocolId::Relay)
                && e.dst == server
                && e.digest.is_some_and(|d| payloads.contains_key(&d))
        })
        .filter_map(|(_, e)| e.digest)
        .collect();
    let pushed: Vec<MessageDigest> = events
        .iter()
        .filter(|e| e.kind == EventKind::FrameDelivered && e.dst == client && e.label == "MESSAGE_PUSH")
        .filter_map(|e| e.digest)
        .collect();
    let pushed_set: BTreeSet<MessageDigest> = pushed.iter().copied().collect();
    ensure!(pushed.len() == pushed_set.len(), "seed {seed}: duplicate pushes");
    ensure!(pushed_set == expected, "seed {seed}: pushed {} digests, expected {}", pushed_set.len(), expected.len());
    let relay_frames = s
        .transcript()
        .involving(&client)
        .filter(|e| e.label == "MESSAGE")
        .count();
    ensure!(relay_frames == 0, "seed {seed}: light client saw {relay_frames} MESSAGE frames");
    Ok((expected.len(), k))
}

fn filter_window() -> Outcome {
    let mut pushed = 0;
    let mut published = 0;
    for seed in 0..10 {
        let (p, k) = filter_case(seed)?;
        ensure!(p > 0, "seed {seed}: nothing matched during the subscription");
        pushed += p;
        published += k;
    }
    Ok(format!("10 seeds, {pushed} pushes of {published} publishes match the active window; no MESSAGE frames at the client"))
}

// ---- 7 -------------------------------------------------------------------

fn lightpush_world(seed: u64) -> Result<Sim, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11647);
    let topo = random_topology(12, 8, 0.8, &mut rng);
    let mut s = sim(seed, 5);
    for i in 0..topo.nodes {
        let mut args = vec!["--relay:true".to_owned()];
        if topo.subscribed[i] {
            args.push("--topics:t".into());
        }
        if i == 0 {
            args.push("--lightpush:true".into());
        }
        s.add_node_args(&format!("n{i}"), &args).map_err(err)?;
    }
    for &(a, b) in &topo.edges {
        s.connect(&format!("n{a}"), &format!("n{b}")).map_err(err)?;
    }
    s.add_node_args("C", &["--lightpush:light"]).map_err(err)?;
    s.connect("C", "n0").map_err(err)?;
    s.run_until_idle(Nanos::MAX);
    Ok(s)
}

fn without_client(events: &[SimEvent], client: &PeerId) -> Vec<SimEvent> {
    events.iter().filter(|e| e.src != *client && e.dst != *client).cloned().collect()
}

fn lightpush_equivalence() -> Outcome {
    let mut compared = 0;
    for seed in 0..10 {
        let msg = WakuMessage::new("c", format!("pushed-{seed}").into_bytes());

        let mut pushed = lightpush_world(seed)?;
        let server = pushed.node("n0").unwrap().peer_id().clone();
        let client = pushed.node("C").unwrap().peer_id().clone();
        let start = pushed.transcript().events.len();
        pushed
            .call("C", |n, now| n.lightpush(&server, topic("t"), msg.clone(), now))
            .map_err(err)?
            .map_err(err)?;
        pushed.run_until_idle(Nanos::MAX);
        let arrival = pushed.transcript().events[start..]
            .iter()
            .find(|e| e.kind == EventKind::FrameDelivered && e.label == "LIGHTPUSH_REQUEST")
            .ok_or("request never arrived")?
            .time;

        let mut direct = lightpush_world(seed)?;
        direct.advance_to(arrival);
        direct.publish("n0", &topic("t"), msg.clone()).map_err(err)?.map_err(err)?;
        direct.run_until_idle(Nanos::MAX);

        let a = without_client(&pushed.transcript().events, &client);
        let b = without_client(&direct.transcript().events, &client);
        ensure!(a == b, "seed {seed}: third-party transcripts differ ({} vs {} events)", a.len(), b.len());
        let ok = pushed.observed("C").iter().any(|o| matches!(o, Output::LightpushResult { result: Ok(r), .. } if r.is_success));
        ensure!(ok, "seed {seed}: client did not get a success response");
        compared += a.len();
    }
    Ok(format!("10 seeds, {compared} third-party events identical"))
}

// ---- 8 -------------------------------------------------------------------

fn oracle_caps(peer: &PeerId, relay: bool, mounts: [(ProtocolId, Mount); 3]) -> Option<Capabilities> {
    let mut caps = Capabilities::new(peer.clone());
    if relay {
        caps.protocols.insert(ProtocolId::Relay, Mode::Full);
    }
    for (p, m) in mounts {
        match m {
            Mount::Off => {}
            Mount::Full if !relay => return None,
            Mount::Full => {
                caps.protocols.insert(p, Mode::Full);
            }
            Mount::Light => {
                caps.protocols.insert(p, Mode::Light);
            }
        }
    }
    Some(caps)
}

fn flag(m: Mount) -> &'static str {
    match m {
        Mount::Off => "false",
        Mount::Light => "light",
        Mount::Full => "true",
    }
}

fn mount_rules() -> Outcome {
    let mounts = [Mount::Off, Mount::Light, Mount::Full];
    let mut valid = 0;
    let mut invalid = 0;
    let mut invalid_configs = Vec::new();
    for relay in [false, true] {
        for store in mounts {
            for filter in mounts {
                for lightpush in mounts {
                    let mut args = vec![format!("--relay:{relay}"), format!("--filter:{}", flag(filter)), format!("--lightpush:{}", flag(lightpush))];
                    match store {
                        Mount::Off => args.push("--store:false".into()),
                        Mount::Light => args.push("--store:true".into()),
                        Mount::Full => args.extend(["--store:true".into(), "--persist-messages:true".into()]),
                    }
                    let label = args.join(" ");
                    let mut s = sim(0, 0);
                    s.add_node_args("observer", &["--store:true"]).map_err(err)?;
                    let peer = PeerId::new("X").unwrap();
                    let oracle = oracle_caps(&peer, relay, [(ProtocolId::Store, store), (ProtocolId::Filter, filter), (ProtocolId::Lightpush, lightpush)]);
                    match (s.add_node_args("X", &args), oracle) {
                        (Err(e), None) => {
                            ensure!(e.to_string().contains("--relay:true"), "{label}: error {e} does not name --relay:true");
                            invalid += 1;
                            invalid_configs.push(parse_config(&args).map_err(err)?);
                        }
                        (Ok(_), Some(want)) => {
                            s.connect("observer", "X").map_err(err)?;
                            s.run_until_idle(Nanos::MAX);
                            let mounted = s.node("X").unwrap().capabilities().clone();
                            let seen = s.node("observer").unwrap().remote_capabilities(&peer).cloned();
                            ensure!(mounted == want, "{label}: mounted {mounted:?}, oracle {want:?}");
                            ensure!(seen.as_ref() == Some(&want), "{label}: advertised {seen:?}, oracle {want:?}");
                            valid += 1;
                        }
                        (Ok(_), None) => return Err(format!("{label}: started without relay")),
                        (Err(e), Some(_)) => return Err(format!("{label}: rejected: {e}")),
                    }
                }
            }
        }
    }
    let rt = tokio::runtime::Runtime::new().map_err(err)?;
    let daemon_rejections = rt.block_on(async {
        let mut n = 0;
        for mut c in invalid_configs {
            let dir = TempDir::new().map_err(err)?;
            c.listen_port = 0;
            c.data_dir = dir.path().to_path_buf();
            match wakunode::start(c).await {
                Ok(h) => {
                    h.stop().await.ok();
                    return Err("daemon started a full-mode protocol without relay".to_owned());
                }
                Err(e) => ensure!(format!("{e:#}").contains("--relay:true"), "daemon error {e:#}"),
            }
            n += 1;
        }
        Ok::<_, String>(n)
    })?;
    Ok(format!("{valid} valid combinations advertise the oracle set; {invalid} invalid rejected in sim, {daemon_rejections} by the daemon"))
}

// ---- 9 -------------------------------------------------------------------

fn corrupt(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut b = text.as_bytes().to_vec();
    let i = rng.random_range(0..b.len());
    match rng.random_range(0..6) {
        0 => b[i] ^= 1 << rng.random_range(0..7),
        1 => b[i] = rng.random_range(0x20..0x7f),
        2 => {
            b.remove(i);
        }
        3 => b.insert(i, rng.random_range(0x20..0x7f)),
        4 => b.truncate(i),
        _ => {
            let j = rng.random_range(0..b.len());
            b.swap(i, j);
        }
    }
    String::from_utf8(b).unwrap()
}

fn peer_list_auth() -> Outcome {
    let mut signer = PeerListSigner::from_hex(&"07".repeat(32)).map_err(err)?;
    let key = signer.verifying_key();
    let peers: Vec<Multiaddr> = (0..3u8)
        .map(|i| Multiaddr::new(Ipv4Addr::new(10, 0, 0, i + 1), 60000 + u16::from(i), PeerId::new(format!("peer{i}")).unwrap()))
        .collect();
    let doc = signer.build(peers.clone(), 1).map_err(err)?.to_text();
    ensure!(verify_peer_list(&doc, &key, None).is_ok(), "valid list rejected");

    let mut rng = ChaCha8Rng::seed_from_u64(0x9EE2);
    let mut rejected = 0;
    while rejected < 1000 {
        let bad = corrupt(&doc, &mut rng);
        if bad == doc {
            continue;
        }
        ensure!(verify_peer_list(&bad, &key, None).is_err(), "corruption accepted:\n{bad}");
        rejected += 1;
    }
    let mut other = PeerListSigner::from_hex(&"08".repeat(32)).map_err(err)?;
    let forged = other.build(peers.clone(), 2).map_err(err)?.to_text();
    ensure!(
        matches!(verify_peer_list(&forged, &key, Some(1)), Err(DiscoveryError::Unauthenticated(_))),
        "foreign signer accepted"
    );
    ensure!(
        matches!(verify_peer_list(&doc, &key, Some(1)), Err(DiscoveryError::Stale { .. })),
        "replay not stale"
    );
    let next = signer.build(peers.clone(), 2).map_err(err)?.to_text();
    let (seq, got) = verify_peer_list(&next, &key, Some(1)).map_err(err)?;
    ensure!(seq == 2 && got == peers, "successor not accepted intact");
    Ok("1000 corruptions rejected, foreign signer and replay refused, successor accepted".into())
}

// ---- 10 ------------------------------------------------------------------

fn jsonl(scenario: &Scenario, seed: u64) -> Result<String, String> {
    let (s, report) = scenario.execute(seed).map_err(err)?;
    ensure!(report.success, "{} failed at seed {seed}", scenario.name);
    Ok(s.transcript().to_jsonl())
}

fn determinism() -> Outcome {
    let mut compared = 0;
    for scenario in [Scenario::figure2(), Scenario::random()] {
        for seed in [0, 1, 42, 9001] {
            ensure!(jsonl(&scenario, seed)? == jsonl(&scenario, seed)?, "{} seed {seed} not reproducible", scenario.name);
            compared += 1;
        }
    }
    for seed in [3, 4] {
        let once = lightpush_world(seed)?.transcript().to_jsonl();
        ensure!(once == lightpush_world(seed)?.transcript().to_jsonl(), "programmatic sim seed {seed} not reproducible");
        compared += 1;
    }
    let random = Scenario::random();
    let distinct: BTreeSet<String> = (0..4).map(|s| jsonl(&random, s)).collect::<Result<_, _>>()?;
    ensure!(distinct.len() == 4, "different seeds gave identical random transcripts");
    Ok(format!("{compared} reruns byte-identical; 4 seeds give 4 distinct random transcripts"))
}

// ---- 11 ------------------------------------------------------------------

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

fn golden_vectors() -> Outcome {
    let g: Golden = toml::from_str(include_str!("../../core/fixtures/golden.toml")).map_err(err)?;
    for v in &g.message {
        let m = WakuMessage::new(v.content_topic.clone(), hex::decode(&v.payload).map_err(err)?)
            .with_version(v.version)
            .with_timestamp(v.timestamp);
        let bytes = hex::decode(&v.bytes).map_err(err)?;
        ensure!(decode_message(&bytes).map_err(err)? == m, "{}: decode differs", v.name);
        ensure!(encode_message(&m).map_err(err)? == bytes, "{}: encode differs", v.name);
        ensure!(m.digest().to_hex() == v.digest, "{}: digest differs", v.name);
    }
    for v in &g.frame {
        let f = Frame {
            protocol: ProtocolId::parse(&v.protocol).map_err(err)?,
            request_id: v.request_id.parse().map_err(err)?,
            kind: v.kind,
            body: hex::decode(&v.body).map_err(err)?,
        };
        let bytes = hex::decode(&v.bytes).map_err(err)?;
        ensure!(decode_frame(&bytes).map_err(err)? == f, "{}: decode differs", v.name);
        ensure!(encode_frame(&f).map_err(err)? == bytes, "{}: encode differs", v.name);
    }

    let seeds: Vec<Vec<u8>> = g
        .message
        .iter()
        .map(|m| &m.bytes)
        .chain(g.frame.iter().map(|f| &f.bytes))
        .map(|h| hex::decode(h).unwrap())
        .collect();
    let limits = Default::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let inputs = 20_000;
    for i in 0..inputs {
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..rng.random_range(0..200)).map(|_| rng.random()).collect()
        } else {
            let mut b = seeds[rng.random_range(0..seeds.len())].clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            b
        };
        catch_unwind(|| {
            let _ = decode_message(&bytes);
            let _ = decode_frame(&bytes);
            let _ = RelayRpc::decode(&bytes, &limits);
            let _ = HistoryQuery::decode(&bytes);
            let _ = HistoryResponse::decode(&bytes, &limits);
            let _ = Capabilities::decode(&bytes);
        })
        .map_err(|_| format!("decoder panicked on {}", hex::encode(&bytes)))?;
    }
    Ok(format!(
        "{} message and {} frame vectors round-trip; {inputs} fuzzed inputs decoded without panic",
        g.message.len(),
        g.frame.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("figure-2 scenario", figure2),
        ("example configuration", listing_node),
        ("exactly-once relay delivery", exactly_once),
        ("relay message bound", message_bound),
        ("store query semantics", store_queries),
        ("filter push window", filter_window),
        ("lightpush equivalence", lightpush_equivalence),
        ("mount rules and advertisement", mount_rules),
        ("peer-list authentication", peer_list_auth),
        ("simulator determinism", determinism),
        ("golden vectors and fuzzing", golden_vectors),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}")))
        });
        let elapsed = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
