//! Command-line configuration in `--name:value` form.

use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::discovery::{parse_multiaddr, parse_verifying_key, Multiaddr};
use crate::message::{MessageLimits, PubsubTopic, DEFAULT_MAX_PAYLOAD};
use crate::relay::RelayParams;
use crate::store::DEFAULT_CAPACITY;
use crate::wire::{Capabilities, Mode, PeerId, ProtocolId};

pub const DEFAULT_LISTEN_PORT: u16 = 60000;
pub const DEFAULT_RPC_PORT: u16 = 8545;
pub const DEFAULT_DATA_DIR: &str = "wakunode-data";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown flag {0}")]
    UnknownFlag(String),
    #[error("flag {0} must have the form --name:value")]
    MissingValue(String),
    #[error("invalid value {value:?} for --{flag}: {reason}")]
    Malformed {
        flag: &'static str,
        value: String,
        reason: String,
    },
    #[error("--{flag}: {reason}")]
    Invalid { flag: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StartError {
    #[error("{0} full mode requires relay (--relay:true)")]
    RelayRequired(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Mount state of a request/reply protocol. On the command line `true`
/// selects full mode and `light` selects light (requester-only) mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Mount {
    #[default]
    Off,
    Full,
    Light,
}

impl Mount {
    pub fn mode(self) -> Option<Mode> {
        match self {
            Mount::Off => None,
            Mount::Full => Some(Mode::Full),
            Mount::Light => Some(Mode::Light),
        }
    }
}

impl fmt::Display for Mount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mount::Off => "false",
            Mount::Full => "true",
            Mount::Light => "light",
        })
    }
}

impl FromStr for Mount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "false" => Ok(Mount::Off),
            "true" => Ok(Mount::Full),
            "light" => Ok(Mount::Light),
            _ => Err("expected true, false or light".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub staticnode: Vec<Multiaddr>,
    pub relay: bool,
    pub topics: Vec<PubsubTopic>,
    pub store: bool,
    pub persist_messages: bool,
    pub store_capacity: usize,
    pub filter: Mount,
    pub lightpush: Mount,
    pub rpc: bool,
    pub rpc_address: Ipv4Addr,
    pub rpc_port: u16,
    pub listen_port: u16,
    pub peer_list_url: Option<String>,
    /// Hex ed25519 public key the peer list must be signed with.
    pub peer_list_key: Option<String>,
    pub data_dir: PathBuf,
    /// Hex ed25519 secret key; generated and persisted when absent.
    pub nodekey: Option<String>,
    pub relay_params: RelayParams,
    pub max_message_size: usize,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            staticnode: Vec::new(),
            relay: false,
            topics: Vec::new(),
            store: false,
            persist_messages: false,
            store_capacity: DEFAULT_CAPACITY,
            filter: Mount::Off,
            lightpush: Mount::Off,
            rpc: false,
            rpc_address: Ipv4Addr::LOCALHOST,
            rpc_port: DEFAULT_RPC_PORT,
            listen_port: DEFAULT_LISTEN_PORT,
            peer_list_url: None,
            peer_list_key: None,
            data_dir: PathBuf::from(DEFAULT_DATA_DIR),
            nodekey: None,
            relay_params: RelayParams::default(),
            max_message_size: DEFAULT_MAX_PAYLOAD,
        }
    }
}

fn value<T: FromStr>(flag: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Malformed {
        flag,
        value: raw.to_owned(),
        reason: e.to_string(),
    })
}

fn boolean(flag: &'static str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::Malformed {
            flag,
            value: raw.to_owned(),
            reason: "expected true or false".into(),
        }),
    }
}

fn millis(flag: &'static str, raw: &str) -> Result<Duration, ConfigError> {
    value::<u64>(flag, raw).map(Duration::from_millis)
}

fn hex32(flag: &'static str, raw: &str) -> Result<String, ConfigError> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(raw, &mut out).map_err(|e| ConfigError::Malformed {
        flag,
        value: raw.to_owned(),
        reason: e.to_string(),
    })?;
    Ok(raw.to_ascii_lowercase())
}

/// Parses `--name:value` flags. Later occurrences of a scalar flag win;
/// `--staticnode` accumulates.
pub fn parse_config<S: AsRef<str>>(args: &[S]) -> Result<NodeConfig, ConfigError> {
    let mut c = NodeConfig::default();
    for arg in args {
        let arg = arg.as_ref();
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| ConfigError::UnknownFlag(arg.to_owned()))?;
        let (name, raw) = body
            .split_once(':')
            .ok_or_else(|| ConfigError::MissingValue(arg.to_owned()))?;
        match name {
            "staticnode" => c.staticnode.push(parse_multiaddr(raw).map_err(|e| {
                ConfigError::Malformed {
                    flag: "staticnode",
                    value: raw.to_owned(),
                    reason: e.to_string(),
                }
            })?),
            "relay" => c.relay = boolean("relay", raw)?,
            "topics" => {
                c.topics = raw
                    .split([' ', ','])
                    .filter(|t| !t.is_empty())
                    .map(|t| value::<PubsubTopic>("topics", t))
                    .collect::<Result<_, _>>()?;
            }
            "store" => c.store = boolean("store", raw)?,
            "persist-messages" => c.persist_messages = boolean("persist-messages", raw)?,
            "store-capacity" => c.store_capacity = value("store-capacity", raw)?,
            "filter" => c.filter = value("filter", raw)?,
            "lightpush" => c.lightpush = value("lightpush", raw)?,
            "rpc" => c.rpc = boolean("rpc", raw)?,
            "rpcAddress" | "rpc-address" => c.rpc_address = value("rpc-address", raw)?,
            "rpc-port" | "rpcPort" => c.rpc_port = value("rpc-port", raw)?,
            "listen-port" => c.listen_port = value("listen-port", raw)?,
            "peer-list-url" => c.peer_list_url = Some(raw.to_owned()),
            "peer-list-key" => {
                parse_verifying_key(raw).map_err(|e| ConfigError::Malformed {
                    flag: "peer-list-key",
                    value: raw.to_owned(),
                    reason: e.to_string(),
                })?;
                c.peer_list_key = Some(raw.to_ascii_lowercase());
            }
            "data-dir" => c.data_dir = PathBuf::from(raw),
            "nodekey" => c.nodekey = Some(hex32("nodekey", raw)?),
            "mesh-degree" => c.relay_params.mesh_degree = value("mesh-degree", raw)?,
            "heartbeat-interval-ms" => {
                c.relay_params.heartbeat_interval = millis("heartbeat-interval-ms", raw)?
            }
            "seen-ttl-ms" => c.relay_params.seen_ttl = millis("seen-ttl-ms", raw)?,
            "gossip-window" => c.relay_params.gossip_window = value("gossip-window", raw)?,
            "max-message-size" => c.max_message_size = value("max-message-size", raw)?,
            _ => return Err(ConfigError::UnknownFlag(arg.to_owned())),
        }
    }
    c.validate()?;
    Ok(c)
}

impl NodeConfig {
    /// Cross-flag checks that do not depend on what gets mounted.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.persist_messages && !self.store {
            return Err(ConfigError::Invalid {
                flag: "persist-messages",
                reason: "requires --store:true".into(),
            });
        }
        if self.store_capacity == 0 {
            return Err(ConfigError::Invalid {
                flag: "store-capacity",
                reason: "must be at least 1".into(),
            });
        }
        if self.max_message_size == 0 {
            return Err(ConfigError::Invalid {
                flag: "max-message-size",
                reason: "must be at least 1".into(),
            });
        }
        if self.peer_list_url.is_some() != self.peer_list_key.is_some() {
            return Err(ConfigError::Invalid {
                flag: "peer-list-key",
                reason: "--peer-list-url and --peer-list-key must be given together".into(),
            });
        }
        self.relay_params
            .validate()
            .map_err(|e| ConfigError::Invalid {
                flag: "mesh-degree",
                reason: e.to_string(),
            })
    }

    /// Formats back to flags; `parse_config(&c.to_args())` yields `c`.
    pub fn to_args(&self) -> Vec<String> {
        let d = NodeConfig::default();
        let mut out: Vec<String> = self
            .staticnode
            .iter()
            .map(|m| format!("--staticnode:{m}"))
            .collect();
        let mut push = |cond: bool, s: String| {
            if cond {
                out.push(s);
            }
        };
        push(self.relay != d.relay, format!("--relay:{}", self.relay));
        push(
            !self.topics.is_empty(),
            format!(
                "--topics:{}",
                self.topics.iter().map(PubsubTopic::as_str).collect::<Vec<_>>().join(",")
            ),
        );
        push(self.store != d.store, format!("--store:{}", self.store));
        push(
            self.persist_messages != d.persist_messages,
            format!("--persist-messages:{}", self.persist_messages),
        );
        push(
            self.store_capacity != d.store_capacity,
            format!("--store-capacity:{}", self.store_capacity),
        );
        push(self.filter != d.filter, format!("--filter:{}", self.filter));
        push(self.lightpush != d.lightpush, format!("--lightpush:{}", self.lightpush));
        push(self.rpc != d.rpc, format!("--rpc:{}", self.rpc));
        push(
            self.rpc_address != d.rpc_address,
            format!("--rpcAddress:{}", self.rpc_address),
        );
        push(self.rpc_port != d.rpc_port, format!("--rpc-port:{}", self.rpc_port));
        push(
            self.listen_port != d.listen_port,
            format!("--listen-port:{}", self.listen_port),
        );
        if let Some(u) = &self.peer_list_url {
            push(true, format!("--peer-list-url:{u}"));
        }
        if let Some(k) = &self.peer_list_key {
            push(true, format!("--peer-list-key:{k}"));
        }
        push(
            self.data_dir != d.data_dir,
            format!("--data-dir:{}", self.data_dir.display()),
        );
        if let Some(k) = &self.nodekey {
            push(true, format!("--nodekey:{k}"));
        }
        let (p, dp) = (&self.relay_params, &d.relay_params);
        push(p.mesh_degree != dp.mesh_degree, format!("--mesh-degree:{}", p.mesh_degree));
        push(
            p.heartbeat_interval != dp.heartbeat_interval,
            format!("--heartbeat-interval-ms:{}", p.heartbeat_interval.as_millis()),
        );
        push(p.seen_ttl != dp.seen_ttl, format!("--seen-ttl-ms:{}", p.seen_ttl.as_millis()));
        push(
            p.gossip_window != dp.gossip_window,
            format!("--gossip-window:{}", p.gossip_window),
        );
        push(
            self.max_message_size != d.max_message_size,
            format!("--max-message-size:{}", self.max_message_size),
        );
        out
    }

    pub fn message_limits(&self) -> MessageLimits {
        MessageLimits {
            max_payload: self.max_message_size,
            ..MessageLimits::default()
        }
    }

    pub fn store_mount(&self) -> Mount {
        match (self.store, self.persist_messages) {
            (false, _) => Mount::Off,
            (true, true) => Mount::Full,
            (true, false) => Mount::Light,
        }
    }

    /// The protocol set a node started from this config mounts. Full-mode
    /// request/reply protocols without relay are an error, never a downgrade.
    pub fn capabilities(&self, peer: PeerId) -> Result<Capabilities, StartError> {
        self.validate()?;
        let mut caps = Capabilities::new(peer);
        if self.relay {
            caps = caps.with(ProtocolId::Relay, Mode::Full);
        }
        for (protocol, mount) in [
            (ProtocolId::Store, self.store_mount()),
            (ProtocolId::Filter, self.filter),
            (ProtocolId::Lightpush, self.lightpush),
        ] {
            if mount == Mount::Full && !self.relay {
                return Err(StartError::RelayRequired(protocol.name()));
            }
            if let Some(mode) = mount.mode() {
                caps = caps.with(protocol, mode);
            }
        }
        Ok(caps)
    }
}
