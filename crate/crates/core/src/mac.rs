//! Control-packet MAC for the shared wireless channel.
//!
//! WIs take turns in ascending id order. A turn opens with a broadcast
//! control packet listing `(DestWI, PktID, NumFlits)` tuples, followed by
//! the announced flits back to back. The next WI starts when the window
//! ends. WIs not named in any tuple sleep through the data phase.
//!
//! Receive buffers are protected by a mirror of every WI's receive VCs.
//! A WI publishes its true free slots when it sends its own control
//! packet; between publications senders only subtract what they announce,
//! so the mirror never exceeds the real free space.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::config::LinkKind;
use crate::energy::EnergyLedger;
use crate::fabric::{Flit, Network, TxArrival};
use crate::topology::Topology;
use crate::{Cycle, NodeId, PacketId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("MAC protocol violation at cycle {cycle}: {msg}")]
    Protocol { cycle: Cycle, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tuple {
    /// Destination WI (index into the WI sequence).
    pub dest: usize,
    pub pid: PacketId,
    pub num_flits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlPacket {
    pub sender: usize,
    pub tuples: Vec<Tuple>,
}

impl ControlPacket {
    pub fn total_flits(&self) -> u64 {
        self.tuples.iter().map(|t| t.num_flits as u64).sum()
    }

    /// Control airtime plus the airtime of every announced flit.
    pub fn duration(&self, control_cycles: u32, flit_cycles: u32) -> Cycle {
        control_cycles as Cycle + self.total_flits() * flit_cycles as Cycle
    }
}

/// One turn as seen by every WI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlRecord {
    pub cycle: Cycle,
    pub packet: ControlPacket,
    pub duration: Cycle,
    pub sleepers: Vec<usize>,
}

impl fmt::Display for ControlRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},", self.cycle, self.packet.sender)?;
        let tuples: Vec<String> =
            self.packet.tuples.iter().map(|t| format!("{}:{}:{}", t.dest, t.pid, t.num_flits)).collect();
        write!(f, "{}", tuples.join(";"))
    }
}

/// A flit crossing the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AirFlit {
    pub start: Cycle,
    pub arrive: Cycle,
    pub sender: usize,
    pub dest: usize,
    pub flit: Flit,
}

#[derive(Debug, Clone, Default)]
struct TxVc {
    buf: VecDeque<Flit>,
    pid: Option<PacketId>,
    dest: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    start: Cycle,
    sender: usize,
    tx_vc: usize,
    dest: usize,
    rx_vc: usize,
    pid: PacketId,
}

#[derive(Debug, Clone)]
pub struct Mac {
    pub wi_nodes: Vec<NodeId>,
    wi_of_node: Vec<Option<usize>>,
    depth: u32,
    vcs: usize,
    pub control_cycles: u32,
    pub flit_cycles: u32,
    control_bits: u32,
    flit_bits: u32,
    sleep_pj_per_cycle: f64,
    tx: Vec<Vec<TxVc>>,
    tx_rr: Vec<usize>,
    mirror_free: Vec<Vec<u32>>,
    bound: Vec<Vec<Option<PacketId>>>,
    turn: usize,
    next_turn: Cycle,
    slots: VecDeque<Slot>,
    /// Control packets sent per WI.
    pub turns: Vec<u64>,
    pub idle_turns: u64,
    pub sleep_cycles: Vec<u64>,
    pub air_flits: u64,
    records: Option<Vec<ControlRecord>>,
    air_log: Option<Vec<AirFlit>>,
}

impl Mac {
    pub fn new(topo: &Topology, sleep_pj_per_cycle: f64) -> Self {
        let cfg = &topo.config;
        let n = topo.wi_nodes.len();
        let mut wi_of_node = vec![None; topo.num_nodes()];
        for (i, &w) in topo.wi_nodes.iter().enumerate() {
            wi_of_node[w] = Some(i);
        }
        let vcs = cfg.vcs_per_port;
        Mac {
            wi_nodes: topo.wi_nodes.clone(),
            wi_of_node,
            depth: cfg.vc_depth_flits,
            vcs,
            control_cycles: cfg.control_packet_cycles(),
            flit_cycles: cfg.flit_cycles(LinkKind::Wireless),
            control_bits: cfg.control_packet_bits,
            flit_bits: cfg.flit_bits,
            sleep_pj_per_cycle,
            tx: vec![vec![TxVc::default(); vcs]; n],
            tx_rr: vec![0; n],
            mirror_free: vec![vec![cfg.vc_depth_flits; vcs]; n],
            bound: vec![vec![None; vcs]; n],
            turn: 0,
            next_turn: 0,
            slots: VecDeque::new(),
            turns: vec![0; n],
            idle_turns: 0,
            sleep_cycles: vec![0; n],
            air_flits: 0,
            records: None,
            air_log: None,
        }
    }

    pub fn num_wis(&self) -> usize {
        self.wi_nodes.len()
    }

    /// Keeps every control packet and every flit crossing the channel.
    pub fn enable_recording(&mut self) {
        self.records = Some(Vec::new());
        self.air_log = Some(Vec::new());
    }

    pub fn records(&self) -> &[ControlRecord] {
        self.records.as_deref().unwrap_or(&[])
    }

    pub fn air_log(&self) -> &[AirFlit] {
        self.air_log.as_deref().unwrap_or(&[])
    }

    pub fn wi_index(&self, node: NodeId) -> Option<usize> {
        self.wi_of_node.get(node).copied().flatten()
    }

    pub fn tx_occupancy(&self, node: NodeId, vc: usize) -> usize {
        self.wi_index(node).map_or(0, |w| self.tx[w][vc].buf.len())
    }

    /// Flits waiting in transmit buffers.
    pub fn held_flits(&self) -> usize {
        self.tx.iter().flatten().map(|v| v.buf.len()).sum()
    }

    pub fn accept(&mut self, a: &TxArrival, cycle: Cycle) -> Result<(), MacError> {
        let fail = |msg: String| Err(MacError::Protocol { cycle, msg });
        let (Some(w), Some(d)) = (self.wi_index(a.node), self.wi_index(a.dest)) else {
            return fail(format!("wireless flit {} between non-WI nodes {} -> {}", a.flit, a.node, a.dest));
        };
        let depth = self.depth as usize;
        let vc = &mut self.tx[w][a.vc];
        if vc.buf.len() >= depth {
            return fail(format!("transmit VC {w}.{} overflow", a.vc));
        }
        if a.flit.is_head() {
            if vc.pid.is_some() || !vc.buf.is_empty() {
                return fail(format!("header {} entered busy transmit VC {w}.{}", a.flit, a.vc));
            }
            vc.pid = Some(a.flit.pid);
            vc.dest = Some(d);
        } else if vc.pid != Some(a.flit.pid) {
            return fail(format!("{} entered transmit VC {w}.{} owned by {:?}", a.flit, a.vc, vc.pid));
        }
        vc.buf.push_back(a.flit);
        Ok(())
    }

    /// Receive VC at `dest` for `pid`: the existing binding, else the lowest
    /// VC that is unbound and fully free in the mirror.
    fn rx_vc_for(&self, dest: usize, pid: PacketId) -> Option<(usize, bool)> {
        if let Some(v) = self.bound[dest].iter().position(|&b| b == Some(pid)) {
            return Some((v, false));
        }
        (0..self.vcs).find(|&v| self.bound[dest][v].is_none() && self.mirror_free[dest][v] == self.depth).map(|v| (v, true))
    }

    /// Builds the sender's control packet and claims mirrored slots.
    fn build(&mut self, sender: usize, net: &Network, cycle: Cycle) -> Result<(ControlPacket, Vec<(usize, usize)>), MacError> {
        let node = self.wi_nodes[sender];
        for v in 0..self.vcs {
            let occ = net.wireless_rx_occupancy(node, v) as u32;
            self.mirror_free[sender][v] = self.depth - occ;
        }
        let mut tuples = Vec::new();
        let mut lanes = Vec::new();
        let start = self.tx_rr[sender];
        for k in 0..self.vcs {
            let v = (start + k) % self.vcs;
            let tx = &self.tx[sender][v];
            let (Some(pid), Some(dest)) = (tx.pid, tx.dest) else { continue };
            let buffered = tx.buf.len() as u32;
            if buffered == 0 {
                continue;
            }
            let Some((rx, fresh)) = self.rx_vc_for(dest, pid) else { continue };
            let n = buffered.min(self.mirror_free[dest][rx]);
            if n == 0 {
                continue;
            }
            let dnode = self.wi_nodes[dest];
            let true_free = self.depth as usize - net.wireless_rx_occupancy(dnode, rx);
            if n as usize > true_free {
                return Err(MacError::Protocol {
                    cycle,
                    msg: format!("mirror of WI {dest} VC {rx} promises {n} slots, {true_free} free"),
                });
            }
            if fresh {
                let port = net.wireless_rx_port(dnode).expect("WI has a receive port");
                let real = &net.switches[dnode].inputs[port].vcs[rx];
                if real.owner.is_some() || !real.buf.is_empty() {
                    return Err(MacError::Protocol {
                        cycle,
                        msg: format!("WI {dest} VC {rx} reserved for packet {pid} while occupied"),
                    });
                }
                self.bound[dest][rx] = Some(pid);
            }
            self.mirror_free[dest][rx] -= n;
            tuples.push(Tuple { dest, pid, num_flits: n });
            lanes.push((v, rx));
        }
        self.tx_rr[sender] = (start + 1) % self.vcs;
        Ok((ControlPacket { sender, tuples }, lanes))
    }

    /// Runs the turn that starts at `cycle`, if any, then moves the flits
    /// whose airtime starts now.
    pub fn step(&mut self, cycle: Cycle, net: &mut Network, ledger: &mut EnergyLedger) -> Result<(), MacError> {
        if self.wi_nodes.is_empty() {
            return Ok(());
        }
        if cycle == self.next_turn {
            self.start_turn(cycle, net, ledger)?;
        }
        while self.slots.front().is_some_and(|s| s.start == cycle) {
            let s = self.slots.pop_front().unwrap();
            let tx = &mut self.tx[s.sender][s.tx_vc];
            let flit = tx.buf.pop_front().ok_or_else(|| MacError::Protocol {
                cycle,
                msg: format!("WI {} announced flits of packet {} it does not hold", s.sender, s.pid),
            })?;
            if flit.pid != s.pid {
                return Err(MacError::Protocol { cycle, msg: format!("slot for packet {} carried {flit}", s.pid) });
            }
            if flit.is_tail() {
                tx.pid = None;
                tx.dest = None;
                // Every WI sees the tail go out and drops the reservation.
                self.bound[s.dest][s.rx_vc] = None;
            }
            let arrive = cycle + self.flit_cycles as Cycle;
            net.schedule_wireless_credit(self.wi_nodes[s.sender], s.tx_vc, cycle + 1, cycle);
            net.schedule_wireless_arrival(self.wi_nodes[s.dest], s.rx_vc, flit, arrive, cycle);
            ledger.charge_link(flit.pid, self.flit_bits, LinkKind::Wireless);
            net.moved += 1;
            self.air_flits += 1;
            if let Some(log) = self.air_log.as_mut() {
                log.push(AirFlit { start: cycle, arrive, sender: s.sender, dest: s.dest, flit });
            }
        }
        Ok(())
    }

    fn start_turn(&mut self, cycle: Cycle, net: &Network, ledger: &mut EnergyLedger) -> Result<(), MacError> {
        let sender = self.turn;
        let (cp, lanes) = self.build(sender, net, cycle)?;
        let duration = cp.duration(self.control_cycles, self.flit_cycles);
        let mut j = 0u64;
        for (t, &(tx_vc, rx_vc)) in cp.tuples.iter().zip(&lanes) {
            for _ in 0..t.num_flits {
                self.slots.push_back(Slot {
                    start: cycle + self.control_cycles as Cycle + j * self.flit_cycles as Cycle,
                    sender,
                    tx_vc,
                    dest: t.dest,
                    rx_vc,
                    pid: t.pid,
                });
                j += 1;
            }
        }
        ledger.charge_control(self.control_bits);
        let data_phase = duration - self.control_cycles as Cycle;
        let sleepers: Vec<usize> =
            (0..self.num_wis()).filter(|&w| w != sender && !cp.tuples.iter().any(|t| t.dest == w)).collect();
        if data_phase > 0 {
            for &w in &sleepers {
                self.sleep_cycles[w] += data_phase;
            }
            ledger.charge_static(self.sleep_pj_per_cycle * (data_phase * sleepers.len() as u64) as f64);
        }
        if cp.tuples.is_empty() {
            self.idle_turns += 1;
        }
        self.turns[sender] += 1;
        if let Some(r) = self.records.as_mut() {
            r.push(ControlRecord { cycle, packet: cp, duration, sleepers });
        }
        self.next_turn = cycle + duration;
        self.turn = (self.turn + 1) % self.num_wis();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(n: &[u32]) -> ControlPacket {
        ControlPacket {
            sender: 0,
            tuples: n.iter().enumerate().map(|(i, &f)| Tuple { dest: 1, pid: i as u32, num_flits: f }).collect(),
        }
    }

    #[test]
    fn durations() {
        assert_eq!(cp(&[]).duration(5, 5), 5);
        assert_eq!(cp(&[16]).duration(5, 5), 85);
        assert_eq!(cp(&[16; 8]).duration(5, 5), 645);
    }

    #[test]
    fn record_format() {
        let r = ControlRecord { cycle: 10, packet: cp(&[3, 4]), duration: 40, sleepers: vec![2] };
        assert_eq!(r.to_string(), "10,0,1:0:3;1:1:4");
    }
}
