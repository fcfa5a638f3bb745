//! Networked daemon around [`waku_core::node::Node`]: TCP transport with
//! length-prefixed frames, the JSON-RPC endpoint, node identity and
//! signed peer-list bootstrap.

mod daemon;
mod http;
pub mod identity;
pub mod peerlist;
pub mod transport;

pub use daemon::{start, wall_now, NodeHandle};
