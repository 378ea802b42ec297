//! Event engine, simulated clock, seeded random streams and topology.

mod engine;
mod rng;
mod time;
mod topology;

pub use engine::{Event, EventHandle, EventQueue};
pub use rng::{Layer, SimRng};
pub use time::{SimTime, MS, SEC};
pub use topology::{build_topology, Role, Topology, TopologyError, TopologySpec};

/// Dense node index into a [`Topology`].
pub type NodeId = u16;
