//! Chip/memory layout, WI placement and the switch-level link graph.
//!
//! Node ids are contiguous. Chip switches come first (chip by chip,
//! row-major inside a chip), then one base-die switch per memory stack.
//! Core `i` attaches to switch `i`. Memory channel `m` attaches to the base
//! switch of stack `m / channels_per_stack`.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::config::{cluster_dims, mesh_dims, ConfigError, Fabric, LinkKind, MemoryAttach, SystemConfig};
use crate::{LinkId, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology is disconnected: node {0} unreachable from node 0")]
    Disconnected(NodeId),
    #[error("topology check failed: {0}")]
    Check(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    ChipSwitch { chip: usize, row: usize, col: usize },
    MemorySwitch { stack: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub is_wi: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub kind: LinkKind,
    pub bits_per_cycle: f64,
    pub traversal_cycles_per_flit: u32,
    pub energy_pj_per_bit: f64,
}

impl Link {
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.endpoints.0 == node {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryStack {
    pub id: usize,
    pub num_layers: usize,
    pub num_channels: usize,
    pub base_switch: NodeId,
    /// WI on the base logic die. Only meaningful in the wireless fabric,
    /// where it is the base switch itself.
    pub wi: NodeId,
    pub side: Side,
}

/// A traffic source or sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Endpoint {
    Core(usize),
    MemChannel(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct Topology {
    pub config: SystemConfig,
    pub rows: usize,
    pub cols: usize,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub wi_nodes: Vec<NodeId>,
    pub stacks: Vec<MemoryStack>,
    /// Incident link ids per node, in link-id order.
    pub incident: Vec<Vec<LinkId>>,
}

impl Topology {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cores(&self) -> usize {
        self.config.total_cores()
    }

    pub fn num_mem_channels(&self) -> usize {
        self.stacks.len() * self.config.channels_per_stack
    }

    /// Cores first, then memory channels.
    pub fn num_endpoints(&self) -> usize {
        self.num_cores() + self.num_mem_channels()
    }

    pub fn endpoint(&self, index: usize) -> Option<Endpoint> {
        let cores = self.num_cores();
        if index < cores {
            Some(Endpoint::Core(index))
        } else if index < self.num_endpoints() {
            Some(Endpoint::MemChannel(index - cores))
        } else {
            None
        }
    }

    pub fn endpoint_index(&self, ep: Endpoint) -> usize {
        match ep {
            Endpoint::Core(i) => i,
            Endpoint::MemChannel(m) => self.num_cores() + m,
        }
    }

    pub fn attach_node(&self, ep: Endpoint) -> NodeId {
        match ep {
            Endpoint::Core(i) => i,
            Endpoint::MemChannel(m) => self.stacks[m / self.config.channels_per_stack].base_switch,
        }
    }

    /// Local port index of an endpoint at its attach switch.
    pub fn local_port(&self, ep: Endpoint) -> usize {
        match ep {
            Endpoint::Core(_) => 0,
            Endpoint::MemChannel(m) => m % self.config.channels_per_stack,
        }
    }

    pub fn endpoints_at(&self, node: NodeId) -> Vec<Endpoint> {
        match self.nodes[node].kind {
            NodeKind::ChipSwitch { .. } => vec![Endpoint::Core(node)],
            NodeKind::MemorySwitch { stack } => (0..self.config.channels_per_stack)
                .map(|c| Endpoint::MemChannel(stack * self.config.channels_per_stack + c))
                .collect(),
        }
    }

    pub fn chip_of(&self, node: NodeId) -> Option<usize> {
        match self.nodes[node].kind {
            NodeKind::ChipSwitch { chip, .. } => Some(chip),
            NodeKind::MemorySwitch { .. } => None,
        }
    }

    pub fn position(&self, node: NodeId) -> Option<(usize, usize, usize)> {
        match self.nodes[node].kind {
            NodeKind::ChipSwitch { chip, row, col } => Some((chip, row, col)),
            NodeKind::MemorySwitch { .. } => None,
        }
    }

    pub fn node_at(&self, chip: usize, row: usize, col: usize) -> NodeId {
        chip * self.rows * self.cols + row * self.cols + col
    }

    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = (LinkId, NodeId)> + '_ {
        self.incident[node].iter().map(move |&l| (l, self.links[l].other(node)))
    }

    pub fn links_of_kind(&self, kind: LinkKind) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(move |l| l.kind == kind)
    }

    /// Breadth-first hop distances from `src` over all links.
    pub fn bfs_hops(&self, src: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes()];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let d = dist[u].unwrap();
            for (_, v) in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Structural checks of the graph against its configuration.
    pub fn check(&self) -> Result<(), TopologyError> {
        let cfg = &self.config;
        let fail = |m: String| Err(TopologyError::Check(m));
        if let Some(pos) = self.bfs_hops(0).iter().position(Option::is_none) {
            return Err(TopologyError::Disconnected(pos));
        }
        // Each chip mesh must be connected through its own mesh wires.
        for chip in 0..cfg.num_chips {
            let base = self.node_at(chip, 0, 0);
            let n = self.rows * self.cols;
            let mut seen = vec![false; n];
            seen[0] = true;
            let mut q = VecDeque::from([base]);
            while let Some(u) = q.pop_front() {
                for &l in &self.incident[u] {
                    let link = &self.links[l];
                    if link.kind != LinkKind::MeshWire {
                        continue;
                    }
                    let v = link.other(u);
                    if self.chip_of(v) == Some(chip) && !seen[v - base] {
                        seen[v - base] = true;
                        q.push_back(v);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return fail(format!("chip {chip} mesh is not connected"));
            }
        }
        let serial = self.links_of_kind(LinkKind::SerialIo).count();
        let wireless = self.links_of_kind(LinkKind::Wireless).count();
        match cfg.fabric {
            Fabric::Substrate => {
                if serial != cfg.num_chips - 1 {
                    return fail(format!("expected {} serial links, found {serial}", cfg.num_chips - 1));
                }
                if self.links_of_kind(LinkKind::WideIo).count() != cfg.num_memories {
                    return fail("expected one wide I/O link per stack".into());
                }
            }
            Fabric::Interposer => {
                if serial != 0 || wireless != 0 {
                    return fail("interposer fabric has serial or wireless links".into());
                }
            }
            Fabric::Wireless => {
                let expected_wis = cfg.num_chips * (cfg.cores_per_chip / cfg.wi_density) + cfg.num_memories;
                if self.wi_nodes.len() != expected_wis {
                    return fail(format!("expected {expected_wis} WIs, found {}", self.wi_nodes.len()));
                }
                let w = self.wi_nodes.len();
                if wireless != w * (w - 1) / 2 {
                    return fail("wireless links do not form a clique".into());
                }
                for l in &self.links {
                    let chips = (self.chip_of(l.endpoints.0), self.chip_of(l.endpoints.1));
                    let wired_between = match chips {
                        (Some(a), Some(b)) => a != b,
                        _ => true,
                    };
                    if l.kind != LinkKind::Wireless && wired_between {
                        return fail(format!("wireless fabric has wired link {} between chips/stacks", l.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Total hop distance from `(r, c)` to every switch of a `rows x cols` mesh.
pub fn mesh_hop_sum(rows: usize, cols: usize, r: usize, c: usize) -> usize {
    let mut total = 0;
    for rr in 0..rows {
        for cc in 0..cols {
            total += rr.abs_diff(r) + cc.abs_diff(c);
        }
    }
    total
}

/// WI switch coordinates for one chip: the mesh is tiled into rectangular
/// clusters of `wi_density` switches and each cluster gets the member switch
/// with the smallest hop sum to the whole chip mesh. Ties go to the lowest
/// `(row, col)`. Clusters are returned in row-major order.
pub fn place_wis(cores_per_chip: usize, wi_density: usize) -> Result<Vec<(usize, usize)>, TopologyError> {
    let (rows, cols) = mesh_dims(cores_per_chip)?;
    if wi_density == 0 || !cores_per_chip.is_multiple_of(wi_density) {
        return Err(ConfigError::Invariant(format!(
            "wi_density {wi_density} does not divide {cores_per_chip}"
        ))
        .into());
    }
    let (cr, cc) = cluster_dims(rows, cols, wi_density)?;
    let mut out = Vec::with_capacity(cores_per_chip / wi_density);
    for r0 in (0..rows).step_by(cr) {
        for c0 in (0..cols).step_by(cc) {
            let best = (r0..r0 + cr)
                .flat_map(|r| (c0..c0 + cc).map(move |c| (r, c)))
                .min_by_key(|&(r, c)| (mesh_hop_sum(rows, cols, r, c), r, c))
                .unwrap();
            out.push(best);
        }
    }
    Ok(out)
}

struct Builder<'a> {
    cfg: &'a SystemConfig,
    links: Vec<Link>,
}

impl Builder<'_> {
    fn add(&mut self, a: NodeId, b: NodeId, kind: LinkKind) {
        let params = self.cfg.link_params.get(kind);
        self.links.push(Link {
            id: self.links.len(),
            endpoints: (a.min(b), a.max(b)),
            kind,
            bits_per_cycle: self.cfg.bits_per_cycle(kind),
            traversal_cycles_per_flit: self.cfg.flit_cycles(kind),
            energy_pj_per_bit: params.energy_pj_per_bit,
        });
    }
}

/// Row of the boundary switch facing the `index`-th of `count` neighbours
/// stacked along one chip edge: the centre of that neighbour's segment.
fn facing_row(rows: usize, index: usize, count: usize) -> usize {
    let start = rows * index / count;
    let end = (rows * (index + 1) / count).max(start + 1);
    start + (end - start - 1) / 2
}

/// Expands a validated configuration into the node/link graph.
pub fn build_topology(cfg: &SystemConfig) -> Result<Topology, TopologyError> {
    cfg.validate()?;
    let (rows, cols) = cfg.mesh_dims()?;
    let per_chip = rows * cols;
    let chip_nodes = cfg.num_chips * per_chip;
    let id = |chip: usize, r: usize, c: usize| chip * per_chip + r * cols + c;

    let mut nodes = Vec::with_capacity(chip_nodes + cfg.num_memories);
    for chip in 0..cfg.num_chips {
        for row in 0..rows {
            for col in 0..cols {
                nodes.push(Node { id: nodes.len(), kind: NodeKind::ChipSwitch { chip, row, col }, is_wi: false });
            }
        }
    }

    // ceil(Y/2) stacks on the left of the chip row, the rest on the right.
    let left = cfg.num_memories.div_ceil(2);
    let right = cfg.num_memories - left;
    let mut stacks = Vec::with_capacity(cfg.num_memories);
    for s in 0..cfg.num_memories {
        let node = nodes.len();
        nodes.push(Node { id: node, kind: NodeKind::MemorySwitch { stack: s }, is_wi: false });
        stacks.push(MemoryStack {
            id: s,
            num_layers: cfg.layers_per_stack,
            num_channels: cfg.channels_per_stack,
            base_switch: node,
            wi: node,
            side: if s < left { Side::Left } else { Side::Right },
        });
    }

    let mut b = Builder { cfg, links: Vec::new() };
    for chip in 0..cfg.num_chips {
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    b.add(id(chip, r, c), id(chip, r, c + 1), LinkKind::MeshWire);
                }
                if r + 1 < rows {
                    b.add(id(chip, r, c), id(chip, r + 1, c), LinkKind::MeshWire);
                }
            }
        }
    }

    let last = cfg.num_chips - 1;
    // (stack, chip, boundary column, rank on that side, stacks on that side)
    let stack_faces: Vec<(usize, usize, usize, usize, usize)> = stacks
        .iter()
        .map(|s| match s.side {
            Side::Left => (s.id, 0, 0, s.id, left),
            Side::Right => (s.id, last, cols - 1, s.id - left, right),
        })
        .collect();

    let mut wi_nodes = Vec::new();
    match cfg.fabric {
        Fabric::Substrate => {
            let mid = (rows - 1) / 2;
            for chip in 0..last {
                b.add(id(chip, mid, cols - 1), id(chip + 1, mid, 0), LinkKind::SerialIo);
            }
            for &(s, chip, col, rank, count) in &stack_faces {
                b.add(stacks[s].base_switch, id(chip, facing_row(rows, rank, count), col), LinkKind::WideIo);
            }
        }
        Fabric::Interposer => {
            for chip in 0..last {
                for r in 0..rows {
                    b.add(id(chip, r, cols - 1), id(chip + 1, r, 0), LinkKind::InterposerWire);
                }
            }
            for &(s, chip, col, rank, count) in &stack_faces {
                match cfg.interposer_memory {
                    MemoryAttach::WideIo => {
                        b.add(stacks[s].base_switch, id(chip, facing_row(rows, rank, count), col), LinkKind::WideIo)
                    }
                    MemoryAttach::Mesh => {
                        for r in 0..rows {
                            b.add(stacks[s].base_switch, id(chip, r, col), LinkKind::InterposerWire);
                        }
                    }
                }
            }
        }
        Fabric::Wireless => {
            let spots = place_wis(cfg.cores_per_chip, cfg.wi_density)?;
            for chip in 0..cfg.num_chips {
                for &(r, c) in &spots {
                    wi_nodes.push(id(chip, r, c));
                }
            }
            wi_nodes.sort_unstable();
            wi_nodes.extend(stacks.iter().map(|s| s.wi));
            for (i, &a) in wi_nodes.iter().enumerate() {
                for &bn in &wi_nodes[i + 1..] {
                    b.add(a, bn, LinkKind::Wireless);
                }
            }
        }
    }
    for &w in &wi_nodes {
        nodes[w].is_wi = true;
    }

    let links = b.links;
    let mut incident = vec![Vec::new(); nodes.len()];
    for l in &links {
        incident[l.endpoints.0].push(l.id);
        incident[l.endpoints.1].push(l.id);
    }

    let topo = Topology { config: cfg.clone(), rows, cols, nodes, links, wi_nodes, stacks, incident };
    if let Some(pos) = topo.bfs_hops(0).iter().position(Option::is_none) {
        return Err(TopologyError::Disconnected(pos));
    }
    Ok(topo)
}
