#![allow(dead_code)]

use std::collections::BTreeMap;

use mcnoc::config::parse_arch;
use mcnoc::energy::EnergyParams;
use mcnoc::engine::{prepare, run_detailed, RunOutput, RunParams};
use mcnoc::routing::{RoutingMode, RoutingOptions};
use mcnoc::traffic::{TraceRecord, TraceReplay, TrafficSource, TrafficSpec};
use mcnoc::{ForwardingTable, LinkKind, Topology};

pub const PAPER_ARCHS: [&str; 6] = ["1C4M", "2C4M", "4C4M", "8C4M", "4C2M", "4C1M"];
pub const FABRICS: [&str; 3] = ["substrate", "interposer", "wireless"];

pub fn system(arch: &str, fabric: &str, mode: RoutingMode) -> (Topology, ForwardingTable) {
    let cfg = parse_arch(&format!("{arch}:{fabric}"), &BTreeMap::new()).unwrap();
    prepare(&cfg, &RoutingOptions { mode, ..Default::default() }).unwrap()
}

pub fn checked_params(total: u64) -> RunParams {
    RunParams { total_cycles: total, warmup_cycles: 0, check_invariants: true, ..Default::default() }
}

/// Runs the given packets alone on an otherwise idle network, to completion.
pub fn replay(topo: &Topology, table: &ForwardingTable, records: Vec<TraceRecord>) -> RunOutput {
    let source = TrafficSource::Trace(TraceReplay::new(records, topo.num_cores()));
    let params = RunParams { drain: true, ..checked_params(10) };
    run_detailed(topo, table, source, &TrafficSpec::default(), &EnergyParams::default(), &params).unwrap()
}

/// Links a packet crosses, with their per-flit cycles.
pub fn route_cycles(topo: &Topology, table: &ForwardingTable, src: usize, dst: usize) -> Vec<(LinkKind, u64)> {
    table
        .route_links(topo, src, dst)
        .unwrap()
        .into_iter()
        .map(|l| (topo.links[l].kind, topo.links[l].traversal_cycles_per_flit as u64))
        .collect()
}

/// Closed form for an unloaded wormhole packet of `len` flits.
pub fn zero_load_formula(links: &[u64], len: u64) -> u64 {
    let max = links.iter().copied().max().unwrap_or(1);
    3 * (links.len() as u64 + 1) + links.iter().sum::<u64>() + (len - 1) * max
}

/// Flit-by-flit schedule of a lone packet, written from the router
/// pipeline rules: RC on arrival, VA/SA no earlier than the next cycle,
/// two cycles through the crossbar plus the link's serialization, one
/// SA per `cycles` on an output, credits back one cycle after the
/// downstream SA, one flit per cycle from the source.
pub fn zero_load_oracle(links: &[u64], len: usize, depth: usize) -> u64 {
    let hops = links.len();
    let mut sa = vec![vec![0u64; len]; hops + 1];
    let mut arrive = vec![vec![0u64; len]; hops + 1];
    for i in 0..len {
        let mut inj = i as u64;
        if i >= depth {
            inj = inj.max(sa[0][i - depth] + 1);
        }
        if i > 0 {
            inj = inj.max(arrive[0][i - 1] + 1);
        }
        arrive[0][i] = inj;
        for k in 0..=hops {
            let out_cycles = if k < hops { links[k] } else { 1 };
            let mut s = arrive[k][i] + 1;
            if i > 0 {
                s = s.max(sa[k][i - 1] + out_cycles);
            }
            if k < hops && i >= depth {
                s = s.max(sa[k + 1][i - depth] + 1);
            }
            sa[k][i] = s;
            if k < hops {
                arrive[k + 1][i] = s + 2 + out_cycles;
            }
        }
    }
    sa[hops][len - 1] + 2
}
