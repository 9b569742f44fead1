//! Distributed detection of social situations among co-located agents.

pub mod geom;
pub mod harness;
pub mod metrics;
pub mod mobility;
pub mod netsim;
pub mod percept;
pub mod protocol;
pub mod sl;
pub mod trace;
pub mod wire;
