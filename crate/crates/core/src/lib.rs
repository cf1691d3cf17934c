//! Causal broadcast for large, dynamic overlay networks.
//!
//! The crate contains three broadcast protocols that plug into one
//! process contract ([`protocol::Protocol`]):
//!
//! - [`rbroadcast::RBroadcast`], flooding reliable broadcast over FIFO links;
//! - [`pc::PcBroadcast`], which keeps causal order under link additions by
//!   holding new links unsafe until a ping phase proves them safe;
//! - [`vc::VcBroadcast`], a vector-clock baseline.
//!
//! [`sim`] runs them inside a deterministic discrete-event network,
//! [`oracle`] checks finished traces for causal-order, exactly-once and
//! safe-link violations, and [`metrics`] samples path lengths and buffer
//! occupancy.

pub mod metrics;
pub mod oracle;
pub mod pc;
pub mod protocol;
pub mod rbroadcast;
pub mod runner;
pub mod sim;
pub mod trace;
pub mod vc;
