//! Declarative scenario scripts.
//!
//! A scenario is a TOML document with an optional `[sim]` table and a list
//! of `[[step]]` tables, each tagged by `action`. Steps run in order; the
//! first failing step ends the run and is named in the report.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{random_topology, Sim, SimConfig, SimError};
use crate::message::{ContentFilter, PubsubTopic, WakuMessage};
use crate::node::Output;
use crate::store::{HistoryQuery, DEFAULT_PAGE_SIZE};
use crate::wire::PeerId;

/// The A/B/C publish, archive and query interaction.
pub const FIGURE2_TOML: &str = include_str!("../../scenarios/figure2.toml");
/// Twenty relay nodes on a seeded random graph with one publish.
pub const RANDOM_TOML: &str = include_str!("../../scenarios/random.toml");

fn default_latency_ms() -> u64 {
    10
}

fn default_run_ms() -> u64 {
    600_000
}

fn default_prefix() -> String {
    "n".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    #[serde(default = "default_latency_ms")]
    pub latency_ms: u64,
    #[serde(default)]
    pub jitter_ms: u64,
    #[serde(default)]
    pub loss_rate: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            latency_ms: default_latency_ms(),
            jitter_ms: 0,
            loss_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    AddNode {
        name: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Connect {
        a: String,
        b: String,
        latency_ms: Option<u64>,
    },
    Disconnect {
        a: String,
        b: String,
    },
    /// Runs until idle, giving up `for_ms` after the current time.
    Run {
        #[serde(default = "default_run_ms")]
        for_ms: u64,
    },
    Subscribe {
        node: String,
        topic: String,
    },
    Publish {
        node: String,
        topic: String,
        content_topic: String,
        payload: String,
        #[serde(default)]
        timestamp: i64,
    },
    /// Issues the request, runs until idle and requires success.
    Lightpush {
        node: String,
        peer: String,
        topic: String,
        content_topic: String,
        payload: String,
    },
    /// Issues the request, runs until idle and requires success.
    FilterSubscribe {
        node: String,
        peer: String,
        topic: String,
        content_topics: Vec<String>,
    },
    /// Issues the query, runs until idle and, when `expect` is given,
    /// requires exactly those payloads in order.
    StoreQuery {
        node: String,
        peer: String,
        topic: Option<String>,
        #[serde(default)]
        content_topics: Vec<String>,
        page_size: Option<u32>,
        expect: Option<Vec<String>>,
    },
    /// Exact payloads the node has relay-delivered so far, in order.
    ExpectDelivered {
        node: String,
        payloads: Vec<String>,
    },
    /// Exact archive contents in key order.
    ExpectArchived {
        node: String,
        payloads: Vec<String>,
    },
    /// Adds nodes `{prefix}0..{prefix}{nodes-1}` on a random connected graph.
    /// Subscribed nodes additionally get `--topics:{topic}`.
    RandomTopology {
        nodes: usize,
        #[serde(default)]
        extra_edges: usize,
        subscribe_prob: f64,
        topic: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_prefix")]
        prefix: String,
    },
}

impl Step {
    pub fn action(&self) -> &'static str {
        match self {
            Step::AddNode { .. } => "add_node",
            Step::Connect { .. } => "connect",
            Step::Disconnect { .. } => "disconnect",
            Step::Run { .. } => "run",
            Step::Subscribe { .. } => "subscribe",
            Step::Publish { .. } => "publish",
            Step::Lightpush { .. } => "lightpush",
            Step::FilterSubscribe { .. } => "filter_subscribe",
            Step::StoreQuery { .. } => "store_query",
            Step::ExpectDelivered { .. } => "expect_delivered",
            Step::ExpectArchived { .. } => "expect_archived",
            Step::RandomTopology { .. } => "random_topology",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(rename = "step", default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub action: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub success: bool,
    pub steps: Vec<StepReport>,
}

impl ScenarioReport {
    pub fn failed_step(&self) -> Option<&StepReport> {
        self.steps.iter().find(|s| !s.ok)
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn figure2() -> Self {
        Self::parse(FIGURE2_TOML).expect("embedded scenario parses")
    }

    pub fn random() -> Self {
        Self::parse(RANDOM_TOML).expect("embedded scenario parses")
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            default_latency: Duration::from_millis(self.sim.latency_ms),
            jitter: Duration::from_millis(self.sim.jitter_ms),
            loss_rate: self.sim.loss_rate,
        }
    }

    /// Builds a sim from the `[sim]` table and runs the steps on it.
    pub fn execute(&self, seed: u64) -> Result<(Sim, ScenarioReport), ScenarioError> {
        let mut sim = Sim::new(self.sim_config(seed))?;
        let report = self.run(&mut sim);
        Ok((sim, report))
    }

    pub fn run(&self, sim: &mut Sim) -> ScenarioReport {
        let mut steps = Vec::new();
        let mut success = true;
        for (index, step) in self.steps.iter().enumerate() {
            let result = run_step(sim, index, step);
            let ok = result.is_ok();
            steps.push(StepReport {
                index,
                action: step.action(),
                ok,
                detail: result.unwrap_or_else(|e| e),
            });
            if !ok {
                success = false;
                break;
            }
        }
        ScenarioReport {
            name: self.name.clone(),
            success,
            steps,
        }
    }
}

/// Runs the embedded Figure 2 scenario on `sim`.
pub fn run_figure2_scenario(sim: &mut Sim) -> ScenarioReport {
    Scenario::figure2().run(sim)
}

type StepResult = Result<String, String>;

fn topic(s: &str) -> Result<PubsubTopic, String> {
    PubsubTopic::new(s).map_err(|e| e.to_string())
}

fn peer(s: &str) -> Result<PeerId, String> {
    PeerId::new(s).map_err(|e| e.to_string())
}

fn text(payload: &[u8]) -> String {
    String::from_utf8_lossy(payload).into_owned()
}

fn settle(sim: &mut Sim) -> Result<(), String> {
    if sim.run_for(Duration::from_millis(default_run_ms())).truncated {
        return Err("network did not go idle".into());
    }
    Ok(())
}

fn expect_payloads(what: &str, got: Vec<String>, want: &[String]) -> StepResult {
    if got == want {
        Ok(format!("{what}: {got:?}"))
    } else {
        Err(format!("{what}: expected {want:?}, got {got:?}"))
    }
}

fn run_step(sim: &mut Sim, index: usize, step: &Step) -> StepResult {
    let sim_err = |e: SimError| e.to_string();
    match step {
        Step::AddNode { name, args } => {
            sim.add_node_args(name, args).map_err(sim_err)?;
            Ok(format!("added {name}"))
        }
        Step::Connect { a, b, latency_ms } => {
            let latency = latency_ms.map_or(sim.config().default_latency, Duration::from_millis);
            sim.connect_with(a, b, latency).map_err(sim_err)?;
            Ok(format!("linked {a} and {b}"))
        }
        Step::Disconnect { a, b } => {
            sim.disconnect(a, b).map_err(sim_err)?;
            Ok(format!("unlinked {a} and {b}"))
        }
        Step::Run { for_ms } => {
            let t = sim.run_for(Duration::from_millis(*for_ms));
            if t.truncated {
                return Err(format!("still busy after {for_ms} ms"));
            }
            Ok(format!("idle at {} ns", sim.now()))
        }
        Step::Subscribe { node, topic: t } => {
            let t = topic(t)?;
            sim.call(node, |n, now| n.subscribe(t, now))
                .map_err(sim_err)?
                .map_err(|e| e.to_string())?;
            Ok(format!("{node} subscribed"))
        }
        Step::Publish {
            node,
            topic: t,
            content_topic,
            payload,
            timestamp,
        } => {
            let msg = WakuMessage::new(content_topic.as_str(), payload.as_bytes().to_vec()).with_timestamp(*timestamp);
            let receipt = sim
                .publish(node, &topic(t)?, msg)
                .map_err(sim_err)?
                .map_err(|e| e.to_string())?;
            Ok(format!("{} eager sends", receipt.eager_sends))
        }
        Step::Lightpush {
            node,
            peer: p,
            topic: t,
            content_topic,
            payload,
        } => {
            let (t, p) = (topic(t)?, peer(p)?);
            let msg = WakuMessage::new(content_topic.as_str(), payload.as_bytes().to_vec());
            let id = sim
                .call(node, |n, now| n.lightpush(&p, t, msg, now))
                .map_err(sim_err)?
                .map_err(|e| e.to_string())?;
            settle(sim)?;
            let result = sim.observed(node).iter().find_map(|o| match o {
                Output::LightpushResult { request_id, result } if *request_id == id => Some(result.clone()),
                _ => None,
            });
            match result {
                Some(Ok(r)) if r.is_success => Ok(r.info),
                Some(Ok(r)) => Err(format!("lightpush refused: {}", r.info)),
                Some(Err(e)) => Err(e.to_string()),
                None => Err("no lightpush response".into()),
            }
        }
        Step::FilterSubscribe {
            node,
            peer: p,
            topic: t,
            content_topics,
        } => {
            let (t, p) = (topic(t)?, peer(p)?);
            let filter = ContentFilter::topics(content_topics.iter().map(String::as_str));
            let id = sim
                .call(node, |n, now| n.filter_subscribe(&p, t, filter, now))
                .map_err(sim_err)?
                .map_err(|e| e.to_string())?;
            settle(sim)?;
            let result = sim.observed(node).iter().find_map(|o| match o {
                Output::FilterSubscribed { request_id, result } if *request_id == id => Some(result.clone()),
                _ => None,
            });
            match result {
                Some(Ok(sub)) => Ok(format!("subscription {sub}")),
                Some(Err(e)) => Err(e.to_string()),
                None => Err("no filter response".into()),
            }
        }
        Step::StoreQuery {
            node,
            peer: p,
            topic: t,
            content_topics,
            page_size,
            expect,
        } => {
            let p = peer(p)?;
            let q = HistoryQuery {
                pubsub_topic: t.as_deref().map(topic).transpose()?,
                filter: ContentFilter::topics(content_topics.iter().map(String::as_str)),
                page_size: page_size.unwrap_or(DEFAULT_PAGE_SIZE),
                ..HistoryQuery::default()
            };
            let id = sim
                .call(node, |n, now| n.store_query(&p, q, now))
                .map_err(sim_err)?
                .map_err(|e| e.to_string())?;
            settle(sim)?;
            let result = sim.observed(node).iter().find_map(|o| match o {
                Output::StoreResult { request_id, result } if *request_id == id => Some(result.clone()),
                _ => None,
            });
            let resp = match result {
                Some(Ok(r)) => r,
                Some(Err(e)) => return Err(e.to_string()),
                None => return Err("no store response".into()),
            };
            let got: Vec<String> = resp.messages.iter().map(|m| text(&m.msg.payload)).collect();
            match expect {
                Some(want) => expect_payloads("store response", got, want),
                None => Ok(format!("store response: {got:?}")),
            }
        }
        Step::ExpectDelivered { node, payloads } => {
            sim.node(node).ok_or_else(|| format!("unknown node {node}"))?;
            let got = sim
                .observed(node)
                .iter()
                .filter_map(|o| match o {
                    Output::Delivered { msg, .. } => Some(text(&msg.payload)),
                    _ => None,
                })
                .collect();
            expect_payloads("delivered", got, payloads)
        }
        Step::ExpectArchived { node, payloads } => {
            let n = sim.node(node).ok_or_else(|| format!("unknown node {node}"))?;
            let archive = n.archive().ok_or_else(|| format!("{node} has no full store"))?;
            let got = archive.iter().map(|m| text(&m.msg.payload)).collect();
            expect_payloads("archived", got, payloads)
        }
        Step::RandomTopology {
            nodes,
            extra_edges,
            subscribe_prob,
            topic: t,
            args,
            prefix,
        } => {
            if !(0.0..=1.0).contains(subscribe_prob) {
                return Err(format!("subscribe_prob {subscribe_prob} outside [0, 1]"));
            }
            let mut rng = sim.rng_for(&["topology", &index.to_string()]);
            let topo = random_topology(*nodes, *extra_edges, *subscribe_prob, &mut rng);
            for i in 0..topo.nodes {
                let mut a = args.clone();
                if topo.subscribed[i] {
                    a.push(format!("--topics:{t}"));
                }
                sim.add_node_args(&format!("{prefix}{i}"), &a).map_err(sim_err)?;
            }
            for &(a, b) in &topo.edges {
                sim.connect(&format!("{prefix}{a}"), &format!("{prefix}{b}"))
                    .map_err(sim_err)?;
            }
            let subs = topo.subscribed.iter().filter(|s| **s).count();
            Ok(format!("{} nodes, {} edges, {subs} subscribed", topo.nodes, topo.edges.len()))
        }
    }
}
