//! Deterministic discrete-event simulator and protocol library for running
//! full-scale TCP over IEEE 802.15.4 low-power lossy networks.
//!
//! The protocol modules (`tcp`, `coap`, `sixlowpan`, `buffers`, `mmc`) are
//! sans-IO state machines. The `net` module wires them onto a simulated radio
//! medium driven by the `sim` event engine, and `experiments` turns scenario
//! configs into CSV results.

pub mod analytics;
pub mod buffers;
pub mod coap;
pub mod experiments;
pub mod mmc;
pub mod net;
pub mod phy;
pub mod sim;
pub mod sixlowpan;
pub mod tcp;
pub mod workloads;

pub use sim::{NodeId, SimTime};
