//! Modular peer-to-peer messaging: gossip relay, history store, content
//! filtering and light push over a capability-negotiated framed transport.
//!
//! Every protocol engine is a plain state machine driven by [`node::Node`].
//! The in-process simulator in [`simnet`] and the `wakunode` daemon both feed
//! the same node type, so behaviour observed in simulation is the behaviour
//! of the daemon.

pub mod codec;
pub mod discovery;
pub mod filter;
pub mod lightpush;
pub mod message;
pub mod node;
pub mod relay;
pub mod rpc;
pub mod simnet;
pub mod store;
pub mod wire;

/// Nanoseconds, used for both wall-clock and virtual time.
pub type Nanos = i64;
