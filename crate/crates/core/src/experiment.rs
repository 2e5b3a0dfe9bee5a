//! Spec files and the experiment runner.
//!
//! One TOML file describes the system (`[arch]`, `[link_params.*]`,
//! `[energy]`), the workload (`[traffic]`), routing (`[routing]`), run
//! parameters (`[run]`) and optionally an `[experiment]` that expands into
//! a grid of cells. Every cell yields one CSV row; wireless cells with a
//! matching interposer cell also yield a gain row.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_arch, ConfigError, Fabric, LinkKind, SystemConfig};
use crate::energy::EnergyParams;
use crate::engine::{prepare, run, MetricsReport, RunParams, SimError};
use crate::routing::{RoutingMode, RoutingOptions};
use crate::traffic::{Pattern, TrafficSpec};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid spec:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: SimError,
    },
    #[error("writing results: {0}")]
    Output(String),
}

impl ExperimentError {
    /// Deadlocks and broken invariants, as opposed to bad input.
    pub fn is_runtime(&self) -> bool {
        match self {
            ExperimentError::Cell { source, .. } => source.is_runtime(),
            ExperimentError::Output(_) => true,
            ExperimentError::Spec(_) => false,
        }
    }
}

/// A problem found by validation, with the spec path it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FabricCompare,
    ChipCountSweep,
    MemFractionSweep,
    TraceSuite,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FabricCompare => "fabric-compare",
            ExperimentKind::ChipCountSweep => "chip-count-sweep",
            ExperimentKind::MemFractionSweep => "mem-fraction-sweep",
            ExperimentKind::TraceSuite => "trace-suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub archs: Vec<String>,
    #[serde(default)]
    pub fabrics: Vec<Fabric>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub p_mem: Vec<f64>,
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    /// Copy each single-chip trace onto every chip.
    #[serde(default = "yes")]
    pub replicate: bool,
    /// Offered load for the peak-bandwidth run.
    #[serde(default = "default_bandwidth_load")]
    pub bandwidth_load: f64,
    /// Offered load for the drained latency run.
    #[serde(default = "default_latency_load")]
    pub latency_load: f64,
    /// Offered load for the drained energy run.
    #[serde(default = "default_energy_load")]
    pub energy_load: f64,
    #[serde(default = "default_energy_cycles")]
    pub energy_cycles: u64,
}

fn yes() -> bool {
    true
}
fn default_bandwidth_load() -> f64 {
    1.0
}
fn default_latency_load() -> f64 {
    0.05
}
fn default_energy_load() -> f64 {
    0.002
}
fn default_energy_cycles() -> u64 {
    100_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchBlock {
    /// `4C4M` or `4C4M:wireless`.
    pub name: Option<String>,
    pub fabric: Option<Fabric>,
    #[serde(default)]
    pub overrides: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParamBlock {
    pub bandwidth_gbps: Option<f64>,
    pub energy_pj_per_bit: Option<f64>,
}

/// Replaces individual energy rates after link parameters are applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyBlock {
    pub wireless_pj_per_bit: Option<f64>,
    pub wideio_pj_per_bit: Option<f64>,
    pub serialio_pj_per_bit: Option<f64>,
    pub mesh_wire_pj_per_bit: Option<f64>,
    pub interposer_wire_pj_per_bit: Option<f64>,
    pub switch_dynamic_pj_per_bit: Option<f64>,
    pub switch_static_pj_per_cycle: Option<f64>,
    pub wi_sleep_pj_per_cycle: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub experiment: Option<ExperimentBlock>,
    #[serde(default)]
    pub arch: ArchBlock,
    #[serde(default)]
    pub link_params: BTreeMap<String, LinkParamBlock>,
    #[serde(default)]
    pub energy: EnergyBlock,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default)]
    pub routing: RoutingOptions,
    #[serde(default)]
    pub run: RunParams,
    /// Directory relative trace paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub arch: Option<String>,
    pub fabric: Option<Fabric>,
    pub load: Option<f64>,
    pub p_mem: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<RoutingMode>,
}

pub fn parse_spec(text: &str, origin: &str) -> Result<SpecFile, SpecError> {
    if text.trim().is_empty() {
        return Err(SpecError::Parse { path: origin.to_string(), message: "spec file is empty".into() });
    }
    toml::from_str(text).map_err(|e| SpecError::Parse { path: origin.to_string(), message: e.to_string() })
}

pub fn load_spec(path: &Path) -> Result<SpecFile, SpecError> {
    let text =
        fs::read_to_string(path).map_err(|source| SpecError::Io { path: path.display().to_string(), source })?;
    let mut spec = parse_spec(&text, &path.display().to_string())?;
    spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(spec)
}

fn value_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SpecFile {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(a) = &o.arch {
            self.arch.name = Some(a.clone());
        }
        if let Some(f) = o.fabric {
            self.arch.fabric = Some(f);
        }
        if let Some(p) = o.p_mem {
            self.traffic.p_mem = p;
            if let Some(e) = self.experiment.as_mut() {
                e.p_mem = vec![p];
            }
        }
        if let Some(s) = o.seed {
            self.traffic.seed = s;
            if let Some(e) = self.experiment.as_mut() {
                e.seeds = vec![s];
            }
        }
        if let Some(l) = o.load {
            self.traffic.injection_load = l;
            if let Some(e) = self.experiment.as_mut() {
                e.bandwidth_load = l;
                e.latency_load = l;
                e.energy_load = l;
            }
        }
        if let Some(m) = o.mode {
            self.routing.mode = m;
        }
        if let (Some(a), Some(e)) = (&o.arch, self.experiment.as_mut()) {
            e.archs = vec![a.clone()];
        }
        if let (Some(f), Some(e)) = (o.fabric, self.experiment.as_mut()) {
            e.fabrics = vec![f];
        }
    }

    /// Arch name without fabric, and the fabric if the name carries one.
    fn split_name(name: &str) -> (String, Option<&str>) {
        match name.split_once(':') {
            Some((a, f)) => (a.to_string(), Some(f)),
            None => (name.to_string(), None),
        }
    }

    /// System configuration for one arch/fabric pair.
    pub fn system_config(&self, arch: &str, fabric: Fabric, seed: u64) -> Result<SystemConfig, ConfigError> {
        let (arch, _) = Self::split_name(arch);
        let mut overrides: BTreeMap<String, String> =
            self.arch.overrides.iter().map(|(k, v)| (k.clone(), value_string(v))).collect();
        for (kind, block) in &self.link_params {
            let kind: LinkKind = kind.parse()?;
            let key = kind.name().replace('-', "_");
            if let Some(b) = block.bandwidth_gbps {
                overrides.insert(format!("link_params.{key}.bandwidth_gbps"), b.to_string());
            }
            if let Some(e) = block.energy_pj_per_bit {
                overrides.insert(format!("link_params.{key}.energy_pj_per_bit"), e.to_string());
            }
        }
        // Interposer wires cost the same as mesh wires unless set.
        if let Some(m) = overrides.get("link_params.mesh_wire.energy_pj_per_bit").cloned() {
            overrides.entry("link_params.interposer_wire.energy_pj_per_bit".into()).or_insert(m);
        }
        overrides.insert("seed".into(), seed.to_string());
        parse_arch(&format!("{arch}:{fabric}"), &overrides)
    }

    pub fn energy_params(&self, cfg: &SystemConfig) -> EnergyParams {
        let mut p = EnergyParams::from_config(cfg);
        let e = &self.energy;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.wireless_pj_per_bit, e.wireless_pj_per_bit);
        set(&mut p.wideio_pj_per_bit, e.wideio_pj_per_bit);
        set(&mut p.serialio_pj_per_bit, e.serialio_pj_per_bit);
        set(&mut p.mesh_wire_pj_per_bit, e.mesh_wire_pj_per_bit);
        set(&mut p.interposer_wire_pj_per_bit, e.interposer_wire_pj_per_bit.or(e.mesh_wire_pj_per_bit));
        set(&mut p.switch_dynamic_pj_per_bit, e.switch_dynamic_pj_per_bit);
        set(&mut p.switch_static_pj_per_cycle, e.switch_static_pj_per_cycle);
        set(&mut p.wi_sleep_pj_per_cycle, e.wi_sleep_pj_per_cycle);
        p
    }

    fn resolve_trace(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The single-run system: arch name plus fabric from the name or
    /// `[arch] fabric`.
    pub fn single_arch(&self) -> Result<(String, Fabric), Diagnostic> {
        let name = self.arch.name.as_deref().ok_or_else(|| Diagnostic {
            path: "arch.name".into(),
            message: "missing (needed when there is no [experiment])".into(),
        })?;
        let (arch, f) = Self::split_name(name);
        let fabric = match (f, self.arch.fabric) {
            (_, Some(f)) => f,
            (Some(f), None) => {
                f.parse::<Fabric>().map_err(|e| Diagnostic { path: "arch.name".into(), message: e.to_string() })?
            }
            (None, None) => {
                return Err(Diagnostic { path: "arch.fabric".into(), message: "missing fabric".into() });
            }
        };
        Ok((arch, fabric))
    }
}

/// One point of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub arch: String,
    pub fabric: Fabric,
    pub p_mem: f64,
    pub seed: u64,
    pub trace: Option<PathBuf>,
}

impl Cell {
    pub fn label(&self) -> String {
        let mut s = format!("{}_{}_pmem{}_seed{}", self.arch, self.fabric, self.p_mem, self.seed);
        if let Some(t) = &self.trace {
            s.push('_');
            s.push_str(&t.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default());
        }
        s
    }
}

fn defaults_for(e: &ExperimentBlock, spec: &SpecFile) -> ExperimentBlock {
    let mut e = e.clone();
    if e.archs.is_empty() {
        e.archs = match e.kind {
            ExperimentKind::ChipCountSweep => vec!["1C4M".into(), "4C4M".into(), "8C4M".into()],
            _ => vec![spec.arch.name.clone().map_or("4C4M".into(), |n| SpecFile::split_name(&n).0)],
        };
    }
    if e.fabrics.is_empty() {
        e.fabrics = match e.kind {
            ExperimentKind::FabricCompare => Fabric::ALL.to_vec(),
            _ => vec![Fabric::Interposer, Fabric::Wireless],
        };
    }
    if e.seeds.is_empty() {
        e.seeds = vec![spec.traffic.seed];
    }
    if e.p_mem.is_empty() {
        e.p_mem = match e.kind {
            ExperimentKind::MemFractionSweep => vec![0.2, 0.4, 0.6, 0.8],
            _ => vec![spec.traffic.p_mem],
        };
    }
    e
}

/// Schema and invariant checks without running anything.
pub fn validate_spec(spec: &SpecFile) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    let mut push = |path: &str, message: String| d.push(Diagnostic { path: path.into(), message });
    if let Err(e) = spec.run.validate() {
        push("run", e.to_string());
    }
    if let Err(e) = spec.traffic.validate() {
        if spec.experiment.is_none() {
            push("traffic", e.to_string());
        }
    }
    for kind in spec.link_params.keys() {
        if let Err(e) = kind.parse::<LinkKind>() {
            push(&format!("link_params.{kind}"), e.to_string());
        }
    }
    let pairs: Vec<(String, Fabric)> = match &spec.experiment {
        None => match spec.single_arch() {
            Ok(p) => vec![p],
            Err(diag) => {
                push(&diag.path, diag.message);
                Vec::new()
            }
        },
        Some(e) => {
            let e = defaults_for(e, spec);
            for (i, &p) in e.p_mem.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    push(&format!("experiment.p_mem[{i}]"), format!("{p} not in [0, 1]"));
                }
            }
            for (name, l) in
                [("bandwidth_load", e.bandwidth_load), ("latency_load", e.latency_load), ("energy_load", e.energy_load)]
            {
                if !(l > 0.0 && l <= 1.0) {
                    push(&format!("experiment.{name}"), format!("{l} not in (0, 1]"));
                }
            }
            if e.energy_cycles <= spec.run.warmup_cycles {
                push("experiment.energy_cycles", "must exceed run.warmup_cycles".into());
            }
            if e.kind == ExperimentKind::TraceSuite {
                if e.traces.is_empty() {
                    push("experiment.traces", "trace-suite needs at least one trace".into());
                }
                for (i, t) in e.traces.iter().enumerate() {
                    if !spec.resolve_trace(t).is_file() {
                        push(&format!("experiment.traces[{i}]"), format!("missing trace file {}", t.display()));
                    }
                }
            }
            e.archs.iter().flat_map(|a| e.fabrics.iter().map(move |&f| (a.clone(), f))).collect()
        }
    };
    for (arch, fabric) in pairs {
        if let Err(e) = spec.system_config(&arch, fabric, spec.traffic.seed) {
            let path = match &e {
                ConfigError::UnknownOverride(k) | ConfigError::BadValue { key: k, .. } => format!("arch.overrides.{k}"),
                _ => format!("arch[{arch}:{fabric}]"),
            };
            push(&path, e.to_string());
        }
    }
    if let Err(e) = spec.energy_params(&SystemConfig::default_for_validation()).validate() {
        push("energy", e.to_string());
    }
    d
}

pub fn plan(spec: &SpecFile) -> Result<(ExperimentBlock, Vec<Cell>), SpecError> {
    let diags = validate_spec(spec);
    if !diags.is_empty() {
        return Err(SpecError::Invalid(diags));
    }
    let e = defaults_for(spec.experiment.as_ref().expect("experiment block"), spec);
    let mut cells = Vec::new();
    let traces: Vec<Option<PathBuf>> =
        if e.kind == ExperimentKind::TraceSuite { e.traces.iter().cloned().map(Some).collect() } else { vec![None] };
    for arch in &e.archs {
        for trace in &traces {
            for &p_mem in &e.p_mem {
                for &fabric in &e.fabrics {
                    for &seed in &e.seeds {
                        cells.push(Cell { arch: SpecFile::split_name(arch).0, fabric, p_mem, seed, trace: trace.clone() });
                    }
                }
            }
        }
    }
    Ok((e, cells))
}

/// Metrics for one cell, with the reports they came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub routing: RoutingMode,
    pub throughput: f64,
    pub bandwidth_bits_per_s_per_core: f64,
    pub avg_latency_cycles: f64,
    pub avg_latency_ns: f64,
    pub avg_packet_energy_pj: f64,
    pub avg_packet_energy_with_control_pj: f64,
    pub bandwidth_report: MetricsReport,
    pub latency_report: Option<MetricsReport>,
    pub energy_report: Option<MetricsReport>,
}

fn run_cell(spec: &SpecFile, e: &ExperimentBlock, cell: &Cell) -> Result<CellResult, SimError> {
    let cfg = spec.system_config(&cell.arch, cell.fabric, cell.seed)?;
    let (topo, table) = prepare(&cfg, &spec.routing)?;
    let energy = spec.energy_params(&cfg);
    let base = TrafficSpec { p_mem: cell.p_mem, seed: cell.seed, ..spec.traffic.clone() };
    let drained = RunParams { drain: true, ..spec.run.clone() };
    if let Some(trace) = &cell.trace {
        let traffic = TrafficSpec {
            pattern: Pattern::TraceReplay,
            trace_path: Some(spec.resolve_trace(trace)),
            replicate: if e.replicate { cfg.num_chips } else { 1 },
            ..base
        };
        let r = run(&topo, &table, &traffic, &energy, &drained)?;
        return Ok(CellResult {
            cell: cell.clone(),
            routing: table.mode,
            throughput: r.throughput,
            bandwidth_bits_per_s_per_core: r.bandwidth_bits_per_s_per_core,
            avg_latency_cycles: r.avg_latency_cycles,
            avg_latency_ns: r.avg_latency_ns,
            avg_packet_energy_pj: r.avg_packet_energy_pj,
            avg_packet_energy_with_control_pj: r.avg_packet_energy_with_control_pj,
            bandwidth_report: r,
            latency_report: None,
            energy_report: None,
        });
    }
    let bw = run(&topo, &table, &TrafficSpec { injection_load: e.bandwidth_load, ..base.clone() }, &energy, &spec.run)?;
    let lat = run(&topo, &table, &TrafficSpec { injection_load: e.latency_load, ..base.clone() }, &energy, &drained)?;
    let en_params = RunParams { total_cycles: e.energy_cycles, ..drained };
    let en = run(&topo, &table, &TrafficSpec { injection_load: e.energy_load, ..base }, &energy, &en_params)?;
    Ok(CellResult {
        cell: cell.clone(),
        routing: table.mode,
        throughput: bw.throughput,
        bandwidth_bits_per_s_per_core: bw.bandwidth_bits_per_s_per_core,
        avg_latency_cycles: lat.avg_latency_cycles,
        avg_latency_ns: lat.avg_latency_ns,
        avg_packet_energy_pj: en.avg_packet_energy_pj,
        avg_packet_energy_with_control_pj: en.avg_packet_energy_with_control_pj,
        bandwidth_report: bw,
        latency_report: Some(lat),
        energy_report: Some(en),
    })
}

/// One CSV line. Columns are fixed; cell rows leave the gain columns
/// empty and gain rows leave the metric columns empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub row_type: &'static str,
    pub experiment: &'static str,
    pub arch: String,
    pub fabric: String,
    pub p_mem: f64,
    pub seed: Option<u64>,
    pub trace: String,
    pub routing: String,
    pub throughput_flits_per_core_cycle: Option<f64>,
    pub bandwidth_gbps_per_core: Option<f64>,
    pub avg_latency_cycles: Option<f64>,
    pub avg_latency_ns: Option<f64>,
    pub avg_packet_energy_pj: Option<f64>,
    pub avg_packet_energy_with_control_pj: Option<f64>,
    pub delivered_packets: Option<u64>,
    pub measured_packets: Option<u64>,
    pub undelivered_measured: Option<u64>,
    pub bandwidth_gain_pct: Option<f64>,
    pub energy_gain_pct: Option<f64>,
    pub latency_gain_pct: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 20] = [
    "row_type",
    "experiment",
    "arch",
    "fabric",
    "p_mem",
    "seed",
    "trace",
    "routing",
    "throughput_flits_per_core_cycle",
    "bandwidth_gbps_per_core",
    "avg_latency_cycles",
    "avg_latency_ns",
    "avg_packet_energy_pj",
    "avg_packet_energy_with_control_pj",
    "delivered_packets",
    "measured_packets",
    "undelivered_measured",
    "bandwidth_gain_pct",
    "energy_gain_pct",
    "latency_gain_pct",
];

fn mode_name(m: RoutingMode) -> &'static str {
    match m {
        RoutingMode::SingleTree => "single-tree",
        RoutingMode::AllPairsSp => "all-pairs",
    }
}

fn trace_name(t: &Option<PathBuf>) -> String {
    t.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

pub fn cell_row(kind: ExperimentKind, r: &CellResult) -> CsvRow {
    let counts = r.latency_report.as_ref().unwrap_or(&r.bandwidth_report);
    CsvRow {
        row_type: "cell",
        experiment: kind.name(),
        arch: r.cell.arch.clone(),
        fabric: r.cell.fabric.to_string(),
        p_mem: r.cell.p_mem,
        seed: Some(r.cell.seed),
        trace: trace_name(&r.cell.trace),
        routing: mode_name(r.routing).into(),
        throughput_flits_per_core_cycle: Some(r.throughput),
        bandwidth_gbps_per_core: Some(r.bandwidth_bits_per_s_per_core / 1e9),
        avg_latency_cycles: Some(r.avg_latency_cycles),
        avg_latency_ns: Some(r.avg_latency_ns),
        avg_packet_energy_pj: Some(r.avg_packet_energy_pj),
        avg_packet_energy_with_control_pj: Some(r.avg_packet_energy_with_control_pj),
        delivered_packets: Some(counts.delivered_packets),
        measured_packets: Some(counts.measured_packets),
        undelivered_measured: Some(counts.undelivered_measured),
        bandwidth_gain_pct: None,
        energy_gain_pct: None,
        latency_gain_pct: None,
    }
}

/// CSV row for a single run.
pub fn report_row(r: &MetricsReport, fabric: Fabric, routing: RoutingMode, trace: Option<&Path>) -> CsvRow {
    CsvRow {
        row_type: "cell",
        experiment: "single",
        arch: r.arch.clone(),
        fabric: fabric.to_string(),
        p_mem: r.p_mem,
        seed: Some(r.seed),
        trace: trace.map(|p| p.display().to_string()).unwrap_or_default(),
        routing: mode_name(routing).into(),
        throughput_flits_per_core_cycle: Some(r.throughput),
        bandwidth_gbps_per_core: Some(r.bandwidth_bits_per_s_per_core / 1e9),
        avg_latency_cycles: Some(r.avg_latency_cycles),
        avg_latency_ns: Some(r.avg_latency_ns),
        avg_packet_energy_pj: Some(r.avg_packet_energy_pj),
        avg_packet_energy_with_control_pj: Some(r.avg_packet_energy_with_control_pj),
        delivered_packets: Some(r.delivered_packets),
        measured_packets: Some(r.measured_packets),
        undelivered_measured: Some(r.undelivered_measured),
        bandwidth_gain_pct: None,
        energy_gain_pct: None,
        latency_gain_pct: None,
    }
}

/// Relative gains of wireless over the interposer baseline, in percent.
/// Positive means wireless is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gains {
    pub bandwidth_pct: f64,
    pub energy_pct: f64,
    pub latency_pct: f64,
}

pub fn gains(baseline: &CellMeans, wireless: &CellMeans) -> Gains {
    let pct = |num: f64, den: f64| if den == 0.0 { 0.0 } else { 100.0 * num / den };
    Gains {
        bandwidth_pct: pct(wireless.bandwidth - baseline.bandwidth, baseline.bandwidth),
        energy_pct: pct(baseline.energy - wireless.energy, baseline.energy),
        latency_pct: pct(baseline.latency - wireless.latency, baseline.latency),
    }
}

/// Seed-averaged metrics of one (arch, p_mem, trace, fabric) group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellMeans {
    pub bandwidth: f64,
    pub energy: f64,
    pub latency: f64,
}

fn means(rs: &[&CellResult]) -> CellMeans {
    let n = rs.len().max(1) as f64;
    CellMeans {
        bandwidth: rs.iter().map(|r| r.bandwidth_bits_per_s_per_core).sum::<f64>() / n,
        energy: rs.iter().map(|r| r.avg_packet_energy_pj).sum::<f64>() / n,
        latency: rs.iter().map(|r| r.avg_latency_cycles).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub cells: Vec<CellResult>,
    pub rows: Vec<CsvRow>,
}

impl ExperimentResult {
    pub fn gain_rows(&self) -> impl Iterator<Item = &CsvRow> {
        self.rows.iter().filter(|r| r.row_type == "gain")
    }

    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[CsvRow]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(|e| ExperimentError::Output(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Output(e.to_string()))
}

fn build_rows(kind: ExperimentKind, results: &[CellResult]) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = results.iter().map(|r| cell_row(kind, r)).collect();
    let mut groups: Vec<(String, u64, String)> = Vec::new();
    for r in results {
        let key = (r.cell.arch.clone(), r.cell.p_mem.to_bits(), trace_name(&r.cell.trace));
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (arch, p_bits, trace) in groups {
        let pick = |f: Fabric| -> Vec<&CellResult> {
            results
                .iter()
                .filter(|r| {
                    r.cell.arch == arch && r.cell.p_mem.to_bits() == p_bits && trace_name(&r.cell.trace) == trace && r.cell.fabric == f
                })
                .collect()
        };
        let (base, wl) = (pick(Fabric::Interposer), pick(Fabric::Wireless));
        if base.is_empty() || wl.is_empty() {
            continue;
        }
        let g = gains(&means(&base), &means(&wl));
        rows.push(CsvRow {
            row_type: "gain",
            experiment: kind.name(),
            arch,
            fabric: "wireless-vs-interposer".into(),
            p_mem: f64::from_bits(p_bits),
            seed: None,
            trace,
            routing: mode_name(base[0].routing).into(),
            throughput_flits_per_core_cycle: None,
            bandwidth_gbps_per_core: None,
            avg_latency_cycles: None,
            avg_latency_ns: None,
            avg_packet_energy_pj: None,
            avg_packet_energy_with_control_pj: None,
            delivered_packets: None,
            measured_packets: None,
            undelivered_measured: None,
            bandwidth_gain_pct: Some(g.bandwidth_pct),
            energy_gain_pct: Some(g.energy_pct),
            latency_gain_pct: Some(g.latency_pct),
        });
    }
    rows
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| ExperimentError::Output(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| ExperimentError::Output(format!("{}: {e}", path.display())))
}

/// Runs every cell (in parallel). With `out_dir`, writes `results.csv` and
/// one JSON file per cell under `cells/`.
pub fn run_experiment(spec: &SpecFile, out_dir: Option<&Path>) -> Result<ExperimentResult, ExperimentError> {
    let (e, cells) = plan(spec)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("cells")).map_err(|err| ExperimentError::Output(err.to_string()))?;
    }
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|c| {
            let r = run_cell(spec, &e, c).map_err(|source| ExperimentError::Cell { cell: c.label(), source })?;
            if let Some(dir) = out_dir {
                let json = serde_json::to_vec_pretty(&r).map_err(|err| ExperimentError::Output(err.to_string()))?;
                write_atomic(&dir.join("cells").join(format!("{}.json", c.label())), &json)?;
            }
            Ok(r)
        })
        .collect::<Result<_, ExperimentError>>()?;
    let rows = build_rows(e.kind, &results);
    let result = ExperimentResult { kind: e.kind, cells: results, rows };
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("results.csv"), result.to_csv()?.as_bytes())?;
    }
    Ok(result)
}

/// A single run from a spec without an `[experiment]` block.
pub fn run_single(spec: &SpecFile) -> Result<MetricsReport, ExperimentError> {
    let diags = validate_spec(spec);
    if !diags.is_empty() {
        return Err(SpecError::Invalid(diags).into());
    }
    let (arch, fabric) = spec.single_arch().map_err(|d| SpecError::Invalid(vec![d]))?;
    let label = format!("{arch}:{fabric}");
    let wrap = |source: SimError| ExperimentError::Cell { cell: label.clone(), source };
    let cfg = spec.system_config(&arch, fabric, spec.traffic.seed).map_err(|e| wrap(e.into()))?;
    let (topo, table) = prepare(&cfg, &spec.routing).map_err(wrap)?;
    let mut traffic = spec.traffic.clone();
    if let Some(p) = &traffic.trace_path {
        traffic.trace_path = Some(spec.resolve_trace(p));
    }
    run(&topo, &table, &traffic, &spec.energy_params(&cfg), &spec.run).map_err(wrap)
}

impl SystemConfig {
    /// Any valid configuration, for checks that only need link defaults.
    fn default_for_validation() -> SystemConfig {
        parse_arch("1C1M:substrate", &BTreeMap::new()).expect("built-in arch parses")
    }
}
