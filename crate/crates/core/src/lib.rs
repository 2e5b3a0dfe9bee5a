//! Cycle-accurate, flit-level simulator for multichip 2.5D packages.
//!
//! Processing chips are 2D mesh NoCs. They reach each other and the
//! in-package DRAM stacks over one of three fabrics:
//!
//! - `Substrate`: one 15 Gbps serial I/O link per adjacent chip pair, plus
//!   128 Gbps wide I/O memory links.
//! - `Interposer`: the mesh continues across chip boundaries, and memory
//!   uses wide I/O.
//! - `Wireless`: mm-wave wireless interfaces (WIs) share one 16 Gbps
//!   channel. A MAC based on broadcast control packets arbitrates it.
//!
//! The usual flow is [`config::parse_arch`], then [`topology::build_topology`],
//! then [`routing::compute_tables`], then [`engine::run`].

pub mod config;
pub mod energy;
pub mod engine;
pub mod experiment;
pub mod fabric;
pub mod mac;
pub mod routing;
pub mod topology;
pub mod traffic;

pub use config::{Fabric, LinkKind, SystemConfig};
pub use engine::{run, MetricsReport, RunParams};
pub use routing::{EdgeWeighting, ForwardingTable, RoutingMode, TieBreak};
pub use topology::{build_topology, Topology};

/// Simulation time, in clock cycles.
pub type Cycle = u64;
/// Index of a switch node in a [`Topology`].
pub type NodeId = usize;
/// Index of a physical (or wireless routing) link in a [`Topology`].
pub type LinkId = usize;
/// Globally unique packet identifier. It also serves as the MAC's PktID.
pub type PacketId = u32;
