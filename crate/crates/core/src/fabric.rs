//! Switches, virtual channels, credits and wired links.
//!
//! Each switch runs a three-stage pipeline: route computation when a header
//! lands in an input VC, VC and switch allocation the cycle after, and
//! traversal the cycle after that. A flit allocated at cycle `s` reaches the
//! next switch at `s + 2 + link_cycles`, or its sink at `s + 2`. The credit
//! for the slot it vacated arrives upstream at `s + 1`.
//!
//! All effects produced in cycle `t` land at `t + 1` or later, so switches
//! can be evaluated in any order within a cycle.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::energy::{Category, EnergyLedger};
use crate::routing::{ForwardingTable, RoutingError};
use crate::topology::Topology;
use crate::traffic::{Injection, PacketClass};
use crate::{Cycle, LinkId, NodeId, PacketId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("routing failed at node {node} for packet {pid}: {source}")]
    Route {
        node: NodeId,
        pid: PacketId,
        #[source]
        source: RoutingError,
    },
    #[error("invariant violated at cycle {cycle}: {msg}")]
    Invariant { cycle: Cycle, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlitKind {
    Header,
    Body,
    Tail,
    HeaderTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flit {
    pub pid: PacketId,
    pub seq: u16,
    pub len: u16,
}

impl Flit {
    pub fn is_head(&self) -> bool {
        self.seq == 0
    }

    pub fn is_tail(&self) -> bool {
        self.seq + 1 == self.len
    }

    pub fn kind(&self) -> FlitKind {
        match (self.is_head(), self.is_tail()) {
            (true, true) => FlitKind::HeaderTail,
            (true, false) => FlitKind::Header,
            (false, true) => FlitKind::Tail,
            (false, false) => FlitKind::Body,
        }
    }
}

impl fmt::Display for Flit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}.{}", self.pid, self.seq)
    }
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub id: PacketId,
    /// Endpoint indices (cores, then memory channels).
    pub src: usize,
    pub dst: usize,
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub len: u16,
    pub inject_cycle: Cycle,
    pub class: PacketClass,
    pub ejected: u16,
    pub done: Option<Cycle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcState {
    Idle,
    RouteComputed,
    Active,
}

#[derive(Debug, Clone)]
pub struct VirtualChannel {
    /// Flits and the first cycle each may be allocated.
    pub buf: VecDeque<(Flit, Cycle)>,
    pub owner: Option<PacketId>,
    pub out_port: Option<usize>,
    pub out_vc: Option<usize>,
    /// Far-end WI when the route leaves over the air.
    pub wireless_dst: Option<NodeId>,
}

impl VirtualChannel {
    fn new(depth: usize) -> Self {
        VirtualChannel { buf: VecDeque::with_capacity(depth), owner: None, out_port: None, out_vc: None, wireless_dst: None }
    }

    pub fn state(&self) -> VcState {
        match (self.out_port, self.out_vc) {
            (None, _) => VcState::Idle,
            (Some(_), None) => VcState::RouteComputed,
            (Some(_), Some(_)) => VcState::Active,
        }
    }

    fn release(&mut self) {
        self.owner = None;
        self.out_port = None;
        self.out_vc = None;
        self.wireless_dst = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Local { endpoint: usize },
    Link { link: LinkId, up_node: NodeId, up_port: usize },
    WirelessRx,
}

#[derive(Debug, Clone)]
pub struct InputPort {
    pub kind: InputKind,
    pub vcs: Vec<VirtualChannel>,
    rr: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Eject { endpoint: usize },
    Link { link: LinkId, down_node: NodeId, down_port: usize, cycles: u32 },
    WirelessTx,
}

#[derive(Debug, Clone)]
pub struct OutputPort {
    pub kind: OutputKind,
    pub credits: Vec<u32>,
    pub owner: Vec<Option<PacketId>>,
    /// First cycle the port may be allocated again (serialized links).
    pub busy_until: Cycle,
    rr_va: usize,
    rr_sa: usize,
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub node: NodeId,
    pub inputs: Vec<InputPort>,
    pub outputs: Vec<OutputPort>,
    /// Input/output port of each local endpoint, by local index.
    pub local_in: Vec<usize>,
    pub local_out: Vec<usize>,
    pub wireless_tx: Option<usize>,
    pub wireless_rx: Option<usize>,
    pub buffered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrive { node: u32, port: u16, vc: u16, flit: Flit },
    Credit { node: u32, port: u16, vc: u16 },
    Eject { endpoint: u32, flit: Flit },
    TxArrive { node: u32, vc: u16, flit: Flit, wdst: u32 },
}

/// A flit handed to a WI's wireless transmit buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxArrival {
    pub node: NodeId,
    pub vc: usize,
    pub flit: Flit,
    pub dest: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ejection {
    pub endpoint: usize,
    pub flit: Flit,
}

#[derive(Debug, Default)]
pub struct Delivered {
    pub ejected: Vec<Ejection>,
    pub tx: Vec<TxArrival>,
    /// Packets whose tail was ejected this cycle.
    pub completed: Vec<PacketId>,
}

impl Delivered {
    pub fn clear(&mut self) {
        self.ejected.clear();
        self.tx.clear();
        self.completed.clear();
    }
}

#[derive(Debug, Clone)]
struct Source {
    node: NodeId,
    port: usize,
    queue: VecDeque<PacketId>,
    active: Vec<Option<(PacketId, u16)>>,
    rr: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FabricCounters {
    pub created_flits: u64,
    /// Flits that entered a local input VC.
    pub injected_flits: u64,
    pub ejected_flits: u64,
    pub created_packets: u64,
    pub completed_packets: u64,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub depth: usize,
    pub vcs: usize,
    pub flit_bits: u32,
    pub switches: Vec<Switch>,
    pub packets: Vec<Packet>,
    pub counters: FabricCounters,
    /// Flit movements (allocations and injections) in the last cycle.
    pub moved: u64,
    table: ForwardingTable,
    /// Output port for each link, seen from endpoints.0 and endpoints.1.
    link_out: Vec<[usize; 2]>,
    link_ends: Vec<(NodeId, NodeId)>,
    link_kind: Vec<crate::config::LinkKind>,
    /// (node, local port) of every endpoint.
    endpoint_at: Vec<(NodeId, usize)>,
    sources: Vec<Source>,
    wheel: Vec<Vec<Event>>,
    trace: Option<Vec<String>>,
    scratch_req: Vec<(usize, usize)>,
    scratch_nom: Vec<Option<(usize, usize)>>,
}

impl Network {
    pub fn new(topo: &Topology, table: &ForwardingTable) -> Self {
        let cfg = &topo.config;
        let depth = cfg.vc_depth_flits as usize;
        let vcs = cfg.vcs_per_port;
        let n = topo.num_nodes();
        let mut switches: Vec<Switch> = (0..n)
            .map(|node| Switch {
                node,
                inputs: Vec::new(),
                outputs: Vec::new(),
                local_in: Vec::new(),
                local_out: Vec::new(),
                wireless_tx: None,
                wireless_rx: None,
                buffered: 0,
            })
            .collect();
        let new_out = |kind: OutputKind, credits: u32| OutputPort {
            kind,
            credits: vec![credits; vcs],
            owner: vec![None; vcs],
            busy_until: 0,
            rr_va: 0,
            rr_sa: 0,
        };
        let new_in = |kind: InputKind| InputPort { kind, vcs: (0..vcs).map(|_| VirtualChannel::new(depth)).collect(), rr: 0 };

        let mut endpoint_at = Vec::with_capacity(topo.num_endpoints());
        for e in 0..topo.num_endpoints() {
            let ep = topo.endpoint(e).expect("endpoint index in range");
            let node = topo.attach_node(ep);
            let local = topo.local_port(ep);
            let sw = &mut switches[node];
            debug_assert_eq!(sw.local_in.len(), local);
            sw.local_in.push(sw.inputs.len());
            sw.inputs.push(new_in(InputKind::Local { endpoint: e }));
            sw.local_out.push(sw.outputs.len());
            sw.outputs.push(new_out(OutputKind::Eject { endpoint: e }, u32::MAX));
            endpoint_at.push((node, sw.inputs.len() - 1));
        }

        for &w in &topo.wi_nodes {
            let sw = &mut switches[w];
            sw.wireless_tx = Some(sw.outputs.len());
            sw.outputs.push(new_out(OutputKind::WirelessTx, depth as u32));
            sw.wireless_rx = Some(sw.inputs.len());
            sw.inputs.push(new_in(InputKind::WirelessRx));
        }

        let mut link_out = vec![[usize::MAX; 2]; topo.links.len()];
        for l in &topo.links {
            let (a, b) = l.endpoints;
            if l.kind == crate::config::LinkKind::Wireless {
                link_out[l.id] = [switches[a].wireless_tx.unwrap(), switches[b].wireless_tx.unwrap()];
                continue;
            }
            for (side, (from, to)) in [(a, b), (b, a)].into_iter().enumerate() {
                let in_port = switches[to].inputs.len();
                let out_port = switches[from].outputs.len();
                switches[to].inputs.push(new_in(InputKind::Link { link: l.id, up_node: from, up_port: out_port }));
                switches[from].outputs.push(new_out(
                    OutputKind::Link { link: l.id, down_node: to, down_port: in_port, cycles: l.traversal_cycles_per_flit },
                    depth as u32,
                ));
                link_out[l.id][side] = out_port;
            }
        }

        let max_delay = topo
            .links
            .iter()
            .map(|l| l.traversal_cycles_per_flit as usize)
            .max()
            .unwrap_or(1)
            .max(cfg.flit_cycles(crate::config::LinkKind::Wireless) as usize);
        let sources = endpoint_at
            .iter()
            .map(|&(node, port)| Source { node, port, queue: VecDeque::new(), active: vec![None; vcs], rr: 0 })
            .collect();
        let max_ports = switches.iter().map(|s| s.inputs.len()).max().unwrap_or(0);
        Network {
            depth,
            vcs,
            flit_bits: cfg.flit_bits,
            switches,
            packets: Vec::new(),
            counters: FabricCounters::default(),
            moved: 0,
            table: table.clone(),
            link_out,
            link_ends: topo.links.iter().map(|l| l.endpoints).collect(),
            link_kind: topo.links.iter().map(|l| l.kind).collect(),
            endpoint_at,
            sources,
            wheel: vec![Vec::new(); max_delay + 4],
            trace: None,
            scratch_req: Vec::new(),
            scratch_nom: vec![None; max_ports],
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Drains collected `cycle,node,event` lines.
    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn log(&mut self, t: Cycle, node: NodeId, ev: impl FnOnce() -> String) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(format!("{t},{node},{}", ev()));
        }
    }

    fn schedule(&mut self, at: Cycle, now: Cycle, ev: Event) {
        let w = self.wheel.len() as u64;
        assert!(at > now && at - now < w, "event delay {} exceeds wheel size {w}", at - now);
        self.wheel[(at % w) as usize].push(ev);
    }

    pub fn endpoint_node(&self, endpoint: usize) -> NodeId {
        self.endpoint_at[endpoint].0
    }

    pub fn wireless_rx_port(&self, node: NodeId) -> Option<usize> {
        self.switches[node].wireless_rx
    }

    /// Flits resident in a WI's wireless receive VC.
    pub fn wireless_rx_occupancy(&self, node: NodeId, vc: usize) -> usize {
        let sw = &self.switches[node];
        sw.wireless_rx.map_or(0, |p| sw.inputs[p].vcs[vc].buf.len())
    }

    /// Over-the-air delivery into a WI's receive VC.
    pub fn schedule_wireless_arrival(&mut self, node: NodeId, vc: usize, flit: Flit, at: Cycle, now: Cycle) {
        let port = self.switches[node].wireless_rx.expect("node is a WI");
        self.schedule(at, now, Event::Arrive { node: node as u32, port: port as u16, vc: vc as u16, flit });
    }

    /// A wireless transmit buffer slot freed by the MAC.
    pub fn schedule_wireless_credit(&mut self, node: NodeId, vc: usize, at: Cycle, now: Cycle) {
        let port = self.switches[node].wireless_tx.expect("node is a WI");
        self.schedule(at, now, Event::Credit { node: node as u32, port: port as u16, vc: vc as u16 });
    }

    /// Registers a packet and queues it at its source endpoint.
    pub fn create_packet(&mut self, inj: &Injection) -> PacketId {
        let id = self.packets.len() as PacketId;
        let len = u16::try_from(inj.flits).expect("packet length fits in u16");
        assert!(len >= 1, "packet needs at least one flit");
        self.packets.push(Packet {
            id,
            src: inj.src,
            dst: inj.dst,
            src_node: self.endpoint_at[inj.src].0,
            dst_node: self.endpoint_at[inj.dst].0,
            len,
            inject_cycle: inj.cycle,
            class: inj.class,
            ejected: 0,
            done: None,
        });
        self.sources[inj.src].queue.push_back(id);
        self.counters.created_flits += len as u64;
        self.counters.created_packets += 1;
        id
    }

    fn route(&self, node: NodeId, pid: PacketId) -> Result<(usize, Option<NodeId>), FabricError> {
        let p = &self.packets[pid as usize];
        if node == p.dst_node {
            let local = self.endpoint_at[p.dst].1;
            // Local input and output ports are created in pairs.
            let idx = self.switches[node].local_in.iter().position(|&i| i == local).expect("local port");
            return Ok((self.switches[node].local_out[idx], None));
        }
        let link = self.table.next_hop(node, p.dst_node).map_err(|source| FabricError::Route { node, pid, source })?;
        let (a, b) = self.link_ends[link];
        let side = usize::from(node != a);
        let wdst = (self.link_kind[link] == crate::config::LinkKind::Wireless).then_some(if side == 0 { b } else { a });
        Ok((self.link_out[link][side], wdst))
    }

    fn accept(&mut self, node: NodeId, port: usize, vc: usize, flit: Flit, now: Cycle) -> Result<(), FabricError> {
        let route = if flit.is_head() { Some(self.route(node, flit.pid)?) } else { None };
        let depth = self.depth;
        let sw = &mut self.switches[node];
        let v = &mut sw.inputs[port].vcs[vc];
        if v.buf.len() >= depth {
            return Err(FabricError::Invariant { cycle: now, msg: format!("VC {node}:{port}:{vc} overflow by {flit}") });
        }
        if let Some((out, wdst)) = route {
            if v.owner.is_some() || !v.buf.is_empty() {
                return Err(FabricError::Invariant {
                    cycle: now,
                    msg: format!("header {flit} entered occupied VC {node}:{port}:{vc} owned by {:?}", v.owner),
                });
            }
            v.owner = Some(flit.pid);
            v.out_port = Some(out);
            v.wireless_dst = wdst;
        } else if v.owner != Some(flit.pid) {
            return Err(FabricError::Invariant {
                cycle: now,
                msg: format!("{flit} entered VC {node}:{port}:{vc} owned by {:?}", v.owner),
            });
        }
        v.buf.push_back((flit, now + 1));
        sw.buffered += 1;
        Ok(())
    }

    /// Applies everything due at cycle `t`.
    pub fn deliver(&mut self, t: Cycle, out: &mut Delivered) -> Result<(), FabricError> {
        let w = self.wheel.len() as u64;
        let events = std::mem::take(&mut self.wheel[(t % w) as usize]);
        for ev in &events {
            match *ev {
                Event::Arrive { node, port, vc, flit } => self.accept(node as usize, port as usize, vc as usize, flit, t)?,
                Event::Credit { node, port, vc } => {
                    let c = &mut self.switches[node as usize].outputs[port as usize].credits[vc as usize];
                    *c += 1;
                    if *c as usize > self.depth {
                        return Err(FabricError::Invariant {
                            cycle: t,
                            msg: format!("credit overflow at {node}:{port}:{vc}"),
                        });
                    }
                }
                Event::Eject { endpoint, flit } => {
                    let p = &mut self.packets[flit.pid as usize];
                    if p.dst != endpoint as usize || p.ejected != flit.seq {
                        return Err(FabricError::Invariant {
                            cycle: t,
                            msg: format!("{flit} ejected at endpoint {endpoint} out of order (expected seq {})", p.ejected),
                        });
                    }
                    p.ejected += 1;
                    self.counters.ejected_flits += 1;
                    if flit.is_tail() {
                        p.done = Some(t);
                        self.counters.completed_packets += 1;
                        out.completed.push(flit.pid);
                    }
                    out.ejected.push(Ejection { endpoint: endpoint as usize, flit });
                }
                Event::TxArrive { node, vc, flit, wdst } => {
                    out.tx.push(TxArrival { node: node as usize, vc: vc as usize, flit, dest: wdst as usize })
                }
            }
        }
        let mut events = events;
        events.clear();
        self.wheel[(t % w) as usize] = events;
        Ok(())
    }

    /// Each endpoint pushes at most one flit into a local input VC.
    pub fn inject(&mut self, t: Cycle) -> Result<(), FabricError> {
        for e in 0..self.sources.len() {
            let (node, port) = (self.sources[e].node, self.sources[e].port);
            if self.sources[e].queue.is_empty() && self.sources[e].active.iter().all(Option::is_none) {
                continue;
            }
            for vc in 0..self.vcs {
                let src = &mut self.sources[e];
                if src.active[vc].is_none() && !src.queue.is_empty() {
                    let v = &self.switches[node].inputs[port].vcs[vc];
                    if v.buf.is_empty() && v.owner.is_none() {
                        src.active[vc] = Some((src.queue.pop_front().unwrap(), 0));
                    }
                }
            }
            let src = &self.sources[e];
            let pick = (0..self.vcs).map(|k| (src.rr + k) % self.vcs).find(|&vc| {
                src.active[vc].is_some() && self.switches[node].inputs[port].vcs[vc].buf.len() < self.depth
            });
            if let Some(vc) = pick {
                let (pid, seq) = self.sources[e].active[vc].unwrap();
                let flit = Flit { pid, seq, len: self.packets[pid as usize].len };
                self.accept(node, port, vc, flit, t)?;
                self.counters.injected_flits += 1;
                self.moved += 1;
                let src = &mut self.sources[e];
                src.active[vc] = if flit.is_tail() { None } else { Some((pid, seq + 1)) };
                src.rr = (vc + 1) % self.vcs;
                self.log(t, node, || format!("inject {flit} vc={vc}"));
            }
        }
        Ok(())
    }

    /// VC and switch allocation plus traversal for every switch.
    pub fn allocate(&mut self, t: Cycle, ledger: &mut EnergyLedger) {
        for node in 0..self.switches.len() {
            if self.switches[node].buffered > 0 {
                self.allocate_switch(node, t, ledger);
            }
        }
    }

    fn out_vc_free(&self, o: &OutputPort, vc: usize) -> bool {
        o.owner[vc].is_none()
            && match o.kind {
                OutputKind::Eject { .. } => true,
                _ => o.credits[vc] as usize == self.depth,
            }
    }

    fn allocate_switch(&mut self, node: NodeId, t: Cycle, ledger: &mut EnergyLedger) {
        let vcs = self.vcs;
        let n_in = self.switches[node].inputs.len();
        let n_flat = n_in * vcs;

        // VC allocation for headers waiting at the front of their VC.
        let mut req = std::mem::take(&mut self.scratch_req);
        req.clear();
        {
            let sw = &self.switches[node];
            for (p, ip) in sw.inputs.iter().enumerate() {
                for (v, vc) in ip.vcs.iter().enumerate() {
                    if let (Some(&(f, ready)), Some(o), None) = (vc.buf.front(), vc.out_port, vc.out_vc) {
                        if f.is_head() && ready <= t {
                            req.push((o, p * vcs + v));
                        }
                    }
                }
            }
        }
        if !req.is_empty() {
            req.sort_unstable_by_key(|&(o, flat)| {
                let rr = self.switches[node].outputs[o].rr_va;
                (o, (flat + n_flat - rr % n_flat) % n_flat)
            });
            let mut i = 0;
            while i < req.len() {
                let o = req[i].0;
                let mut j = i;
                while j < req.len() && req[j].0 == o {
                    j += 1;
                }
                let mut last = None;
                for &(_, flat) in &req[i..j] {
                    let free = (0..vcs).find(|&ov| self.out_vc_free(&self.switches[node].outputs[o], ov));
                    let Some(ov) = free else { break };
                    let (p, v) = (flat / vcs, flat % vcs);
                    let sw = &mut self.switches[node];
                    let pid = sw.inputs[p].vcs[v].owner;
                    sw.outputs[o].owner[ov] = pid;
                    sw.inputs[p].vcs[v].out_vc = Some(ov);
                    last = Some(flat);
                }
                if let Some(flat) = last {
                    self.switches[node].outputs[o].rr_va = (flat + 1) % n_flat;
                }
                i = j;
            }
        }
        self.scratch_req = req;

        // Switch allocation: each input port nominates one VC, each output
        // grants one input port.
        let mut nom = std::mem::take(&mut self.scratch_nom);
        for slot in nom.iter_mut().take(n_in) {
            *slot = None;
        }
        {
            let sw = &self.switches[node];
            for (p, ip) in sw.inputs.iter().enumerate() {
                for k in 0..vcs {
                    let v = (ip.rr + k) % vcs;
                    let vc = &ip.vcs[v];
                    let (Some(&(_, ready)), Some(o), Some(ov)) = (vc.buf.front(), vc.out_port, vc.out_vc) else {
                        continue;
                    };
                    let op = &sw.outputs[o];
                    let credit_ok = matches!(op.kind, OutputKind::Eject { .. }) || op.credits[ov] > 0;
                    if ready <= t && op.busy_until <= t && credit_ok {
                        nom[p] = Some((v, o));
                        break;
                    }
                }
            }
        }
        let n_out = self.switches[node].outputs.len();
        for o in 0..n_out {
            let rr = self.switches[node].outputs[o].rr_sa;
            let winner = (0..n_in).map(|k| (rr + k) % n_in).find(|&p| matches!(nom[p], Some((_, oo)) if oo == o));
            if let Some(p) = winner {
                let (v, _) = nom[p].unwrap();
                self.switches[node].outputs[o].rr_sa = (p + 1) % n_in;
                self.switches[node].inputs[p].rr = (v + 1) % vcs;
                self.traverse(node, p, v, o, t, ledger);
            }
        }
        self.scratch_nom = nom;
    }

    fn traverse(&mut self, node: NodeId, p: usize, v: usize, o: usize, t: Cycle, ledger: &mut EnergyLedger) {
        let bits = self.flit_bits;
        let sw = &mut self.switches[node];
        let in_kind = sw.inputs[p].kind;
        let vc = &mut sw.inputs[p].vcs[v];
        let (flit, _) = vc.buf.pop_front().expect("nominated VC has a flit");
        let ov = vc.out_vc.expect("allocated");
        let wdst = vc.wireless_dst;
        if flit.is_tail() {
            vc.release();
        }
        sw.buffered -= 1;
        let op = &mut sw.outputs[o];
        let kind = op.kind;
        if flit.is_tail() {
            op.owner[ov] = None;
        }
        match kind {
            OutputKind::Eject { .. } => {}
            OutputKind::Link { cycles, .. } => {
                op.credits[ov] -= 1;
                op.busy_until = t + cycles as u64;
            }
            OutputKind::WirelessTx => {
                op.credits[ov] -= 1;
                op.busy_until = t + 1;
            }
        }
        self.moved += 1;
        ledger.charge_hop(flit.pid, bits, Category::Switch).expect("switch rate");
        if let InputKind::Link { up_node, up_port, .. } = in_kind {
            self.schedule(t + 1, t, Event::Credit { node: up_node as u32, port: up_port as u16, vc: v as u16 });
        }
        match kind {
            OutputKind::Eject { endpoint } => {
                self.schedule(t + 2, t, Event::Eject { endpoint: endpoint as u32, flit });
            }
            OutputKind::Link { link, down_node, down_port, cycles } => {
                ledger.charge_link(flit.pid, bits, self.link_kind[link]);
                self.schedule(
                    t + 2 + cycles as u64,
                    t,
                    Event::Arrive { node: down_node as u32, port: down_port as u16, vc: ov as u16, flit },
                );
            }
            OutputKind::WirelessTx => {
                let wdst = wdst.expect("wireless route has a far end");
                self.schedule(t + 2, t, Event::TxArrive { node: node as u32, vc: ov as u16, flit, wdst: wdst as u32 });
            }
        }
        self.log(t, node, || format!("sa {flit} in={p}.{v} out={o}.{ov}"));
    }

    /// Flits sitting in switch input buffers.
    pub fn buffered_flits(&self) -> usize {
        self.switches.iter().map(|s| s.buffered).sum()
    }

    /// Flits in transit on links or towards sinks and WI transmit buffers.
    pub fn in_transit_flits(&self) -> usize {
        self.wheel
            .iter()
            .flatten()
            .filter(|e| matches!(e, Event::Arrive { .. } | Event::Eject { .. } | Event::TxArrive { .. }))
            .count()
    }

    /// Flits of created packets not yet pushed into the network.
    pub fn source_pending_flits(&self) -> u64 {
        self.counters.created_flits - self.counters.injected_flits
    }

    pub fn is_idle(&self) -> bool {
        self.counters.created_flits == self.counters.ejected_flits
    }

    /// Checks buffer bounds, wormhole integrity, credit conservation and
    /// flit conservation. `tx_occupancy(node, vc)` reports the MAC's
    /// transmit buffers, `mac_held` the flits the MAC holds in total.
    pub fn check_invariants(
        &self,
        t: Cycle,
        tx_occupancy: &dyn Fn(NodeId, usize) -> usize,
        mac_held: usize,
    ) -> Result<(), FabricError> {
        let fail = |msg: String| Err(FabricError::Invariant { cycle: t, msg });
        // In-flight flits and credits per (node, port, vc), keyed by the
        // upstream output port.
        let mut flits_to: std::collections::HashMap<(usize, usize, usize), usize> = Default::default();
        let mut credits_to: std::collections::HashMap<(usize, usize, usize), usize> = Default::default();
        let mut tx_to: std::collections::HashMap<(usize, usize), usize> = Default::default();
        for ev in self.wheel.iter().flatten() {
            match *ev {
                Event::Arrive { node, port, vc, .. } => {
                    *flits_to.entry((node as usize, port as usize, vc as usize)).or_default() += 1
                }
                Event::Credit { node, port, vc } => {
                    *credits_to.entry((node as usize, port as usize, vc as usize)).or_default() += 1
                }
                Event::TxArrive { node, vc, .. } => *tx_to.entry((node as usize, vc as usize)).or_default() += 1,
                Event::Eject { .. } => {}
            }
        }
        let mut buffered = 0;
        for sw in &self.switches {
            let mut count = 0;
            for (p, ip) in sw.inputs.iter().enumerate() {
                for (v, vc) in ip.vcs.iter().enumerate() {
                    count += vc.buf.len();
                    if vc.buf.len() > self.depth {
                        return fail(format!("VC {}:{p}:{v} holds {} flits", sw.node, vc.buf.len()));
                    }
                    let mut prev: Option<Flit> = None;
                    for &(f, _) in &vc.buf {
                        if Some(f.pid) != vc.owner && !(f.is_head() && prev.is_none() && vc.owner.is_none()) {
                            return fail(format!("VC {}:{p}:{v} holds {f} but is owned by {:?}", sw.node, vc.owner));
                        }
                        if let Some(pf) = prev {
                            if pf.pid != f.pid || pf.seq + 1 != f.seq {
                                return fail(format!("VC {}:{p}:{v} holds {pf} then {f}", sw.node));
                            }
                        }
                        prev = Some(f);
                    }
                }
            }
            if count != sw.buffered {
                return fail(format!("switch {} counts {} buffered, holds {count}", sw.node, sw.buffered));
            }
            buffered += count;
            for (o, op) in sw.outputs.iter().enumerate() {
                for v in 0..self.vcs {
                    let outstanding = match op.kind {
                        OutputKind::Eject { .. } => continue,
                        OutputKind::Link { down_node, down_port, .. } => {
                            self.switches[down_node].inputs[down_port].vcs[v].buf.len()
                                + flits_to.get(&(down_node, down_port, v)).copied().unwrap_or(0)
                        }
                        OutputKind::WirelessTx => tx_occupancy(sw.node, v) + tx_to.get(&(sw.node, v)).copied().unwrap_or(0),
                    };
                    let returning = credits_to.get(&(sw.node, o, v)).copied().unwrap_or(0);
                    let credits = op.credits[v] as usize;
                    if credits > self.depth || credits + outstanding + returning != self.depth {
                        return fail(format!(
                            "credit conservation at {}:{o}:{v}: credits {credits} + downstream {outstanding} + returning {returning} != {}",
                            sw.node, self.depth
                        ));
                    }
                }
            }
        }
        let in_network = buffered as u64 + self.in_transit_flits() as u64 + mac_held as u64;
        if self.counters.injected_flits != in_network + self.counters.ejected_flits {
            return fail(format!(
                "flit conservation: injected {} != in-network {in_network} + ejected {}",
                self.counters.injected_flits, self.counters.ejected_flits
            ));
        }
        Ok(())
    }

    /// Short description of blocked VCs, for deadlock reports.
    pub fn snapshot(&self, limit: usize) -> String {
        let mut s = String::new();
        let mut shown = 0;
        for sw in &self.switches {
            for (p, ip) in sw.inputs.iter().enumerate() {
                for (v, vc) in ip.vcs.iter().enumerate() {
                    if let Some(&(f, _)) = vc.buf.front() {
                        if shown < limit {
                            s.push_str(&format!(
                                "node {} in {p}.{v}: {} flits, front {f}, out {:?}.{:?}\n",
                                sw.node,
                                vc.buf.len(),
                                vc.out_port,
                                vc.out_vc
                            ));
                        }
                        shown += 1;
                    }
                }
            }
        }
        if shown > limit {
            s.push_str(&format!("... {} more occupied VCs\n", shown - limit));
        }
        s
    }
}
