//! The cycle loop, measurement windowing, metrics and load sweeps.
//!
//! Each cycle runs in a fixed order: due events land (arrivals, credits,
//! ejections), the MAC takes its turn, traffic is generated, sources push
//! flits, and every switch allocates. Throughput counts flits ejected in
//! `[warmup, total)`; latency and energy cover packets created at or after
//! `warmup` that were delivered.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SystemConfig};
use crate::energy::{Category, EnergyLedger, EnergyParams};
use crate::fabric::{Delivered, FabricCounters, FabricError, Network, Packet};
use crate::mac::{AirFlit, ControlRecord, Mac, MacError};
use crate::routing::{check_deadlock_freedom, compute_tables, ForwardingTable, RoutingError, RoutingMode, RoutingOptions};
use crate::topology::{build_topology, Topology, TopologyError};
use crate::traffic::{
    load_trace, replicate_trace, Injection, PacketClass, Pattern, TraceReplay, TrafficError, TrafficSource, TrafficSpec,
    UniformRandom,
};
use crate::Cycle;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("all-pairs routing has a cyclic channel dependency (through links {0:?}); refusing to simulate")]
    CyclicRouting(Vec<usize>),
    #[error("invalid run parameters: {0}")]
    Params(String),
    #[error("deadlock: no flit moved for {idle} cycles (at cycle {cycle}, {in_flight} flits in flight)\n{snapshot}")]
    Deadlock { cycle: Cycle, idle: Cycle, in_flight: u64, snapshot: String },
}

impl SimError {
    pub fn is_runtime(&self) -> bool {
        matches!(self, SimError::Deadlock { .. } | SimError::Fabric(_) | SimError::Mac(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub total_cycles: Cycle,
    pub warmup_cycles: Cycle,
    /// Keep running without new traffic until measured packets arrive.
    pub drain: bool,
    pub drain_limit: Cycle,
    pub check_invariants: bool,
    pub deadlock_threshold: Cycle,
    pub event_trace: bool,
    pub mac_trace: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            total_cycles: 10_000,
            warmup_cycles: 1_000,
            drain: false,
            drain_limit: 200_000,
            check_invariants: false,
            deadlock_threshold: 5_000,
            event_trace: false,
            mac_trace: false,
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.warmup_cycles >= self.total_cycles {
            return Err(SimError::Params(format!(
                "warmup_cycles {} must be below total_cycles {}",
                self.warmup_cycles, self.total_cycles
            )));
        }
        if self.deadlock_threshold == 0 {
            return Err(SimError::Params("deadlock_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn measured_cycles(&self) -> Cycle {
        self.total_cycles - self.warmup_cycles
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub packets: u64,
    pub avg_latency_cycles: f64,
    pub avg_energy_pj: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacStats {
    pub turns_per_wi: Vec<u64>,
    pub idle_turns: u64,
    pub air_flits: u64,
    pub sleep_cycles_per_wi: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arch: String,
    pub cores: usize,
    pub total_cycles: Cycle,
    pub warmup_cycles: Cycle,
    pub end_cycle: Cycle,
    pub injection_load: f64,
    pub p_mem: f64,
    pub seed: u64,
    /// Flits ejected in the window per core per cycle.
    pub throughput: f64,
    pub bandwidth_bits_per_s_per_core: f64,
    pub avg_latency_cycles: f64,
    pub avg_latency_ns: f64,
    /// Mean over measured packets of their attributed energy.
    pub avg_packet_energy_pj: f64,
    /// The same plus control-packet energy spent in the window, shared
    /// evenly among the measured packets.
    pub avg_packet_energy_with_control_pj: f64,
    pub created_packets: u64,
    pub delivered_packets: u64,
    pub measured_packets: u64,
    /// Packets created in the window that had not arrived when the run ended.
    pub undelivered_measured: u64,
    pub window_flits: u64,
    pub in_flight_flits: u64,
    pub per_class: BTreeMap<String, ClassStats>,
    /// `(lower bound in cycles, count)` with power-of-two buckets.
    pub latency_histogram: Vec<(u64, u64)>,
    pub energy_by_category_pj: BTreeMap<String, f64>,
    pub mac: Option<MacStats>,
}

/// Report plus the run's internals, for tests and traces.
#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub packets: Vec<Packet>,
    pub ledger: EnergyLedger,
    pub mac_records: Vec<ControlRecord>,
    pub air_log: Vec<AirFlit>,
    pub event_trace: Vec<String>,
    pub counters: FabricCounters,
    /// Flits inside switches, on links or held by the MAC at the end.
    pub in_network_flits: u64,
}

/// Topology plus forwarding tables for a configuration. All-pairs tables
/// must pass the channel dependency check.
pub fn prepare(cfg: &SystemConfig, routing: &RoutingOptions) -> Result<(Topology, ForwardingTable), SimError> {
    let topo = build_topology(cfg)?;
    let table = compute_tables(&topo, routing, cfg.seed)?;
    if table.mode == RoutingMode::AllPairsSp {
        let check = check_deadlock_freedom(&table, &topo);
        if !check.acyclic {
            let links = check.witness.unwrap_or_default().iter().map(|&(l, _)| l).collect();
            return Err(SimError::CyclicRouting(links));
        }
    }
    Ok((topo, table))
}

pub fn build_source(topo: &Topology, traffic: &TrafficSpec) -> Result<TrafficSource, SimError> {
    traffic.validate()?;
    let cfg = &topo.config;
    Ok(match traffic.pattern {
        Pattern::UniformRandom => TrafficSource::Uniform(UniformRandom::new(
            traffic,
            topo.num_cores(),
            topo.num_mem_channels(),
            cfg.packet_flits,
        )),
        Pattern::TraceReplay => {
            let path = traffic.trace_path.as_ref().expect("validated");
            let records = if traffic.replicate > 1 {
                if traffic.replicate != cfg.num_chips {
                    return Err(TrafficError::Spec(format!(
                        "replicate {} does not match {} chips",
                        traffic.replicate, cfg.num_chips
                    ))
                    .into());
                }
                let per_chip = cfg.cores_per_chip;
                let recs = load_trace(path, per_chip, per_chip + topo.num_mem_channels())?;
                replicate_trace(&recs, per_chip, cfg.num_chips, per_chip, topo.stacks.len(), cfg.channels_per_stack)
            } else {
                load_trace(path, topo.num_cores(), topo.num_endpoints())?
            };
            TrafficSource::Trace(TraceReplay::new(records, topo.num_cores()))
        }
    })
}

pub fn run(
    topo: &Topology,
    table: &ForwardingTable,
    traffic: &TrafficSpec,
    energy: &EnergyParams,
    params: &RunParams,
) -> Result<MetricsReport, SimError> {
    let source = build_source(topo, traffic)?;
    Ok(run_detailed(topo, table, source, traffic, energy, params)?.report)
}

pub fn run_detailed(
    topo: &Topology,
    table: &ForwardingTable,
    mut source: TrafficSource,
    traffic: &TrafficSpec,
    energy: &EnergyParams,
    params: &RunParams,
) -> Result<RunOutput, SimError> {
    params.validate()?;
    energy.validate().map_err(|e| SimError::Params(e.to_string()))?;
    let cfg = &topo.config;
    let mut net = Network::new(topo, table);
    let mut mac = Mac::new(topo, energy.wi_sleep_pj_per_cycle);
    let mut ledger = EnergyLedger::new(energy.clone());
    if params.event_trace {
        net.enable_trace();
    }
    if params.mac_trace {
        mac.enable_recording();
    }
    let cores = topo.num_cores();
    let static_per_cycle = energy.switch_static_pj_per_cycle * topo.num_nodes() as f64;

    let mut out = Delivered::default();
    let mut injections: Vec<Injection> = Vec::new();
    let mut window_flits = 0u64;
    let mut control_at_warmup = 0.0;
    let mut control_at_end = 0.0;
    let mut last_progress: Cycle = 0;
    let mut measured_pending = 0u64;
    let in_window = |c: Cycle| c >= params.warmup_cycles && c < params.total_cycles;
    let mut t: Cycle = 0;
    let hard_end = if params.drain { params.total_cycles + params.drain_limit } else { params.total_cycles };
    while t < hard_end {
        if t >= params.total_cycles && measured_pending == 0 {
            break;
        }
        if t == params.warmup_cycles {
            control_at_warmup = ledger.category_total(Category::Control);
        }
        if t == params.total_cycles {
            control_at_end = ledger.category_total(Category::Control);
        }
        out.clear();
        net.moved = 0;
        net.deliver(t, &mut out)?;
        for a in &out.tx {
            mac.accept(a, t)?;
        }
        if in_window(t) {
            window_flits += out.ejected.len() as u64;
        }
        measured_pending -= out.completed.iter().filter(|&&p| in_window(net.packets[p as usize].inject_cycle)).count() as u64;
        mac.step(t, &mut net, &mut ledger)?;

        injections.clear();
        if t < params.total_cycles {
            source.step(t, &mut injections);
            if traffic.memory_replies {
                for &pid in &out.completed {
                    let p = &net.packets[pid as usize];
                    if p.class == PacketClass::CoreToMemory {
                        injections.push(Injection {
                            cycle: t,
                            src: p.dst,
                            dst: p.src,
                            flits: p.len as u32,
                            class: PacketClass::MemoryToCore,
                        });
                    }
                }
            }
        }
        for inj in &injections {
            net.create_packet(inj);
        }
        if in_window(t) {
            measured_pending += injections.len() as u64;
        }
        net.inject(t)?;
        net.allocate(t, &mut ledger);
        if static_per_cycle > 0.0 {
            ledger.charge_static(static_per_cycle);
        }
        if params.check_invariants {
            net.check_invariants(t, &|n, v| mac.tx_occupancy(n, v), mac.held_flits())?;
            if !ledger.is_consistent() {
                return Err(SimError::Fabric(FabricError::Invariant {
                    cycle: t,
                    msg: "energy categories do not sum to the total".into(),
                }));
            }
        }
        if net.moved > 0 || net.counters.injected_flits == net.counters.ejected_flits {
            last_progress = t;
        } else if t - last_progress >= params.deadlock_threshold {
            return Err(SimError::Deadlock {
                cycle: t,
                idle: t - last_progress,
                in_flight: net.counters.injected_flits - net.counters.ejected_flits,
                snapshot: net.snapshot(20),
            });
        }
        t += 1;
    }
    if t <= params.total_cycles {
        control_at_end = ledger.category_total(Category::Control);
    }
    let end_cycle = t;

    let measured: Vec<&Packet> = net
        .packets
        .iter()
        .filter(|p| p.inject_cycle >= params.warmup_cycles && p.inject_cycle < params.total_cycles && p.done.is_some())
        .collect();
    let latency = |p: &Packet| (p.done.unwrap() - p.inject_cycle) as f64;
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0u64), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    let avg_latency = mean(&mut measured.iter().map(|p| latency(p)));
    let avg_energy = mean(&mut measured.iter().map(|p| ledger.packet_total(p.id)));
    let control_window = control_at_end - control_at_warmup;
    let avg_energy_ctrl =
        if measured.is_empty() { 0.0 } else { avg_energy + control_window / measured.len() as f64 };

    let mut per_class = BTreeMap::new();
    for class in PacketClass::ALL {
        let ps: Vec<&&Packet> = measured.iter().filter(|p| p.class == class).collect();
        if ps.is_empty() {
            continue;
        }
        per_class.insert(
            class.name().to_string(),
            ClassStats {
                packets: ps.len() as u64,
                avg_latency_cycles: mean(&mut ps.iter().map(|p| latency(p))),
                avg_energy_pj: mean(&mut ps.iter().map(|p| ledger.packet_total(p.id))),
            },
        );
    }

    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for p in &measured {
        let l = p.done.unwrap() - p.inject_cycle;
        let bucket = if l == 0 { 0 } else { 1u64 << (63 - l.leading_zeros()) };
        *hist.entry(bucket).or_default() += 1;
    }

    let throughput = window_flits as f64 / (cores as f64 * params.measured_cycles() as f64);
    let mac_stats = (!topo.wi_nodes.is_empty()).then(|| MacStats {
        turns_per_wi: mac.turns.clone(),
        idle_turns: mac.idle_turns,
        air_flits: mac.air_flits,
        sleep_cycles_per_wi: mac.sleep_cycles.clone(),
    });
    let report = MetricsReport {
        arch: cfg.arch_name(),
        cores,
        total_cycles: params.total_cycles,
        warmup_cycles: params.warmup_cycles,
        end_cycle,
        injection_load: traffic.injection_load,
        p_mem: traffic.p_mem,
        seed: traffic.seed,
        throughput,
        bandwidth_bits_per_s_per_core: throughput * cfg.flit_bits as f64 * cfg.clock_ghz * 1e9,
        avg_latency_cycles: avg_latency,
        avg_latency_ns: avg_latency / cfg.clock_ghz,
        avg_packet_energy_pj: avg_energy,
        avg_packet_energy_with_control_pj: avg_energy_ctrl,
        created_packets: net.counters.created_packets,
        delivered_packets: net.counters.completed_packets,
        measured_packets: measured.len() as u64,
        undelivered_measured: measured_pending,
        window_flits,
        in_flight_flits: net.counters.created_flits - net.counters.ejected_flits,
        per_class,
        latency_histogram: hist.into_iter().collect(),
        energy_by_category_pj: Category::ALL.iter().map(|&c| (c.name().to_string(), ledger.category_total(c))).collect(),
        mac: mac_stats,
    };
    Ok(RunOutput {
        report,
        packets: net.packets.clone(),
        mac_records: mac.records().to_vec(),
        air_log: mac.air_log().to_vec(),
        event_trace: net.take_trace(),
        counters: net.counters,
        in_network_flits: (net.buffered_flits() + net.in_transit_flits() + mac.held_flits()) as u64,
        ledger,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub loads: Vec<f64>,
    pub reports: Vec<MetricsReport>,
    /// Delivered flits/core/cycle at the highest load.
    pub saturation_throughput: f64,
    pub saturation_bandwidth_bits_per_s_per_core: f64,
    /// First load whose latency exceeds three times the lowest-load latency.
    pub knee_load: Option<f64>,
}

/// Runs every load independently (in parallel) with the same seed.
pub fn saturation_sweep(
    topo: &Topology,
    table: &ForwardingTable,
    traffic: &TrafficSpec,
    energy: &EnergyParams,
    params: &RunParams,
    loads: &[f64],
) -> Result<SweepResult, SimError> {
    if loads.is_empty() || loads.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::Params("sweep loads must be non-empty and strictly ascending".into()));
    }
    let reports: Vec<MetricsReport> = loads
        .par_iter()
        .map(|&load| run(topo, table, &TrafficSpec { injection_load: load, ..traffic.clone() }, energy, params))
        .collect::<Result<_, _>>()?;
    let last = reports.last().unwrap();
    let base = reports[0].avg_latency_cycles;
    let knee_load = reports
        .iter()
        .zip(loads)
        .find(|(r, _)| base > 0.0 && r.avg_latency_cycles > 3.0 * base)
        .map(|(_, &l)| l);
    Ok(SweepResult {
        loads: loads.to_vec(),
        saturation_throughput: last.throughput,
        saturation_bandwidth_bits_per_s_per_core: last.bandwidth_bits_per_s_per_core,
        knee_load,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_arch;
    use crate::traffic::TraceRecord;

    fn setup(name: &str) -> (Topology, ForwardingTable) {
        let cfg = parse_arch(name, &BTreeMap::new()).unwrap();
        prepare(&cfg, &RoutingOptions::default()).unwrap()
    }

    fn single(topo: &Topology, table: &ForwardingTable, src: usize, dst: usize) -> RunOutput {
        let rec = TraceRecord { cycle: 0, src, dst, flits: 64 };
        let source = TrafficSource::Trace(TraceReplay::new(vec![rec], topo.num_cores()));
        let params = RunParams { total_cycles: 5000, warmup_cycles: 0, check_invariants: true, ..Default::default() };
        run_detailed(topo, table, source, &TrafficSpec::default(), &EnergyParams::default(), &params).unwrap()
    }

    #[test]
    fn zero_load_gives_empty_report() {
        let (topo, table) = setup("1C4M:interposer");
        let traffic = TrafficSpec { injection_load: 1e-9, ..Default::default() };
        let r = run(&topo, &table, &traffic, &EnergyParams::default(), &RunParams { total_cycles: 2000, ..Default::default() })
            .unwrap();
        assert_eq!(r.delivered_packets, 0);
        assert_eq!(r.throughput, 0.0);
    }

    #[test]
    fn lone_packet_across_a_mesh_row() {
        let (topo, table) = setup("4C4M:interposer");
        // Cores 0 and 3 sit at the ends of the first row of chip 0.
        let out = single(&topo, &table, 0, 3);
        let p = &out.packets[0];
        assert_eq!(p.done.unwrap() - p.inject_cycle, 3 * 4 + 3 + 63);
    }

    #[test]
    fn run_params_validation() {
        let bad = RunParams { warmup_cycles: 10, total_cycles: 10, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wireless_packet_is_delivered_in_order() {
        let (topo, table) = setup("4C4M:wireless");
        let out = single(&topo, &table, 0, 63);
        let p = &out.packets[0];
        assert_eq!(p.ejected, 64);
        assert!(p.done.is_some());
        let expect = 64.0 * 32.0 * 2.3 * route_wireless_hops(&topo, &table, p) as f64;
        assert!((out.ledger.packet_category(0, Category::Wireless) - expect).abs() < 1e-6);
    }

    fn route_wireless_hops(topo: &Topology, table: &ForwardingTable, p: &Packet) -> usize {
        table
            .route_links(topo, p.src_node, p.dst_node)
            .unwrap()
            .iter()
            .filter(|&&l| topo.links[l].kind == crate::config::LinkKind::Wireless)
            .count()
    }
}
