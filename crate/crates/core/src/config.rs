//! Architecture configuration: `XCYM:<fabric>` names, defaults and overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total core count the paper-scale systems keep constant across chip counts.
pub const DEFAULT_TOTAL_CORES: usize = 64;
/// Cores served by one wireless interface unless overridden.
pub const DEFAULT_WI_DENSITY: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed architecture name `{0}` (expected <X>C<Y>M:<fabric>)")]
    MalformedName(String),
    #[error("unknown fabric `{0}` (expected substrate, interposer or wireless)")]
    UnknownFabric(String),
    #[error("unknown override key `{0}`")]
    UnknownOverride(String),
    #[error("override `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fabric {
    Substrate,
    Interposer,
    Wireless,
}

impl Fabric {
    pub const ALL: [Fabric; 3] = [Fabric::Substrate, Fabric::Interposer, Fabric::Wireless];
}

impl fmt::Display for Fabric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fabric::Substrate => "substrate",
            Fabric::Interposer => "interposer",
            Fabric::Wireless => "wireless",
        })
    }
}

impl FromStr for Fabric {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "substrate" => Ok(Fabric::Substrate),
            "interposer" => Ok(Fabric::Interposer),
            "wireless" => Ok(Fabric::Wireless),
            _ => Err(ConfigError::UnknownFabric(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    MeshWire,
    InterposerWire,
    SerialIo,
    WideIo,
    Wireless,
}

impl LinkKind {
    pub const ALL: [LinkKind; 5] = [
        LinkKind::MeshWire,
        LinkKind::InterposerWire,
        LinkKind::SerialIo,
        LinkKind::WideIo,
        LinkKind::Wireless,
    ];

    /// Wire kinds are single-cycle regardless of their nominal bandwidth.
    pub fn is_single_cycle(self) -> bool {
        matches!(self, LinkKind::MeshWire | LinkKind::InterposerWire)
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkKind::MeshWire => "mesh-wire",
            LinkKind::InterposerWire => "interposer-wire",
            LinkKind::SerialIo => "serial-io",
            LinkKind::WideIo => "wide-io",
            LinkKind::Wireless => "wireless",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        LinkKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| ConfigError::UnknownOverride(format!("link_params.{s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_gbps: f64,
    pub energy_pj_per_bit: f64,
}

/// Per-kind physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParamTable(pub BTreeMap<LinkKind, LinkParams>);

impl LinkParamTable {
    /// Published constants: 16 Gbps / 2.3 pJ/bit wireless, 128 Gbps /
    /// 6.5 pJ/bit wide I/O, 15 Gbps / 5 pJ/bit serial I/O. Wire energy is a
    /// configured 65 nm estimate; wire bandwidth is one flit per cycle.
    pub fn defaults(flit_bits: u32, clock_ghz: f64) -> Self {
        let wire_gbps = flit_bits as f64 * clock_ghz;
        let mut m = BTreeMap::new();
        m.insert(LinkKind::MeshWire, LinkParams { bandwidth_gbps: wire_gbps, energy_pj_per_bit: 0.45 });
        m.insert(LinkKind::InterposerWire, LinkParams { bandwidth_gbps: wire_gbps, energy_pj_per_bit: 0.45 });
        m.insert(LinkKind::SerialIo, LinkParams { bandwidth_gbps: 15.0, energy_pj_per_bit: 5.0 });
        m.insert(LinkKind::WideIo, LinkParams { bandwidth_gbps: 128.0, energy_pj_per_bit: 6.5 });
        m.insert(LinkKind::Wireless, LinkParams { bandwidth_gbps: 16.0, energy_pj_per_bit: 2.3 });
        LinkParamTable(m)
    }

    pub fn get(&self, kind: LinkKind) -> LinkParams {
        self.0[&kind]
    }

    pub fn set(&mut self, kind: LinkKind, params: LinkParams) {
        self.0.insert(kind, params);
    }
}

/// How memory stacks attach to the chip array in the interposer fabric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryAttach {
    /// One wide I/O link per stack, as in the substrate fabric.
    WideIo,
    /// Interposer wires from the stack's base switch to every switch of the
    /// facing chip boundary column.
    Mesh,
}

impl FromStr for MemoryAttach {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "wide-io" => Ok(MemoryAttach::WideIo),
            "mesh" => Ok(MemoryAttach::Mesh),
            _ => Err(ConfigError::BadValue { key: "interposer_memory".into(), value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_chips: usize,
    pub num_memories: usize,
    pub fabric: Fabric,
    pub cores_per_chip: usize,
    /// Cores per wireless interface.
    pub wi_density: usize,
    pub chip_edge_mm: f64,
    pub flit_bits: u32,
    pub packet_flits: u32,
    pub vcs_per_port: usize,
    pub vc_depth_flits: u32,
    pub clock_ghz: f64,
    pub channels_per_stack: usize,
    pub layers_per_stack: usize,
    /// MAC control packet size; its airtime follows from the wireless rate.
    pub control_packet_bits: u32,
    pub interposer_memory: MemoryAttach,
    pub link_params: LinkParamTable,
    pub seed: u64,
}

impl SystemConfig {
    pub fn arch_name(&self) -> String {
        format!("{}C{}M", self.num_chips, self.num_memories)
    }

    pub fn total_cores(&self) -> usize {
        self.num_chips * self.cores_per_chip
    }

    pub fn memory_channels(&self) -> usize {
        self.num_memories * self.channels_per_stack
    }

    pub fn mesh_dims(&self) -> Result<(usize, usize), ConfigError> {
        mesh_dims(self.cores_per_chip)
    }

    pub fn bits_per_cycle(&self, kind: LinkKind) -> f64 {
        self.link_params.get(kind).bandwidth_gbps / self.clock_ghz
    }

    /// Cycles one flit occupies a link of this kind.
    pub fn flit_cycles(&self, kind: LinkKind) -> u32 {
        if kind.is_single_cycle() {
            1
        } else {
            serialization_cycles(self.flit_bits, self.bits_per_cycle(kind))
        }
    }

    pub fn control_packet_cycles(&self) -> u32 {
        serialization_cycles(self.control_packet_bits, self.bits_per_cycle(LinkKind::Wireless))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |msg: String| Err(ConfigError::Invariant(msg));
        if self.num_chips == 0 {
            return inv("at least one processing chip is required".into());
        }
        if self.cores_per_chip == 0 {
            return inv("cores_per_chip must be positive".into());
        }
        let (rows, cols) = self.mesh_dims()?;
        if self.wi_density == 0 || !self.cores_per_chip.is_multiple_of(self.wi_density) {
            return inv(format!(
                "wi_density {} does not divide cores_per_chip {}",
                self.wi_density, self.cores_per_chip
            ));
        }
        cluster_dims(rows, cols, self.wi_density)?;
        for (name, v) in [
            ("flit_bits", self.flit_bits as usize),
            ("packet_flits", self.packet_flits as usize),
            ("vcs_per_port", self.vcs_per_port),
            ("vc_depth_flits", self.vc_depth_flits as usize),
            ("channels_per_stack", self.channels_per_stack),
            ("control_packet_bits", self.control_packet_bits as usize),
        ] {
            if v == 0 {
                return inv(format!("{name} must be positive"));
            }
        }
        if !(self.clock_ghz > 0.0 && self.clock_ghz.is_finite()) {
            return inv("clock_ghz must be positive".into());
        }
        if self.chip_edge_mm.is_nan() || self.chip_edge_mm <= 0.0 {
            return inv("chip_edge_mm must be positive".into());
        }
        for kind in LinkKind::ALL {
            let p = self.link_params.get(kind);
            if !(p.bandwidth_gbps > 0.0 && p.bandwidth_gbps.is_finite()) {
                return inv(format!("{kind} bandwidth must be positive"));
            }
            if !(p.energy_pj_per_bit >= 0.0 && p.energy_pj_per_bit.is_finite()) {
                return inv(format!("{kind} energy must be non-negative"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "cores_per_chip" => self.cores_per_chip = num(key, value)?,
            "wi_density" => self.wi_density = num(key, value)?,
            "chip_edge_mm" => self.chip_edge_mm = num(key, value)?,
            "flit_bits" => self.flit_bits = num(key, value)?,
            "packet_flits" => self.packet_flits = num(key, value)?,
            "vcs_per_port" => self.vcs_per_port = num(key, value)?,
            "vc_depth_flits" => self.vc_depth_flits = num(key, value)?,
            "clock_ghz" => self.clock_ghz = num(key, value)?,
            "channels_per_stack" => self.channels_per_stack = num(key, value)?,
            "layers_per_stack" => self.layers_per_stack = num(key, value)?,
            "control_packet_bits" => self.control_packet_bits = num(key, value)?,
            "interposer_memory" => self.interposer_memory = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            _ => {
                // link_params.<kind>.<field>
                let mut parts = key.split('.');
                match (parts.next(), parts.next(), parts.next(), parts.next()) {
                    (Some("link_params"), Some(kind), Some(field), None) => {
                        let kind: LinkKind = kind.parse()?;
                        let mut p = self.link_params.get(kind);
                        match field {
                            "bandwidth_gbps" => p.bandwidth_gbps = num(key, value)?,
                            "energy_pj_per_bit" => p.energy_pj_per_bit = num(key, value)?,
                            _ => return Err(ConfigError::UnknownOverride(key.to_string())),
                        }
                        self.link_params.set(kind, p);
                    }
                    _ => return Err(ConfigError::UnknownOverride(key.to_string())),
                }
            }
        }
        Ok(())
    }
}

/// Cycles needed to push `bits` through a lane carrying `bits_per_cycle`.
pub fn serialization_cycles(bits: u32, bits_per_cycle: f64) -> u32 {
    // 32 / 6.4 must come out as exactly 5, not 6.
    let raw = bits as f64 / bits_per_cycle;
    ((raw - 1e-9).ceil() as u32).max(1)
}

/// Splits a chip's core count into a near-square `rows x cols` mesh with
/// `rows >= cols`. Perfect squares give square meshes.
pub fn mesh_dims(cores: usize) -> Result<(usize, usize), ConfigError> {
    if cores == 0 {
        return Err(ConfigError::Invariant("cores_per_chip must be positive".into()));
    }
    let rows = (1..=cores).find(|d| cores.is_multiple_of(*d) && d * d >= cores).unwrap();
    let cols = cores / rows;
    if rows > 2 * cols {
        return Err(ConfigError::Invariant(format!(
            "cores_per_chip {cores} does not form a square or 2:1 mesh"
        )));
    }
    Ok((rows, cols))
}

/// Dimensions of the rectangular WI clusters that tile a `rows x cols`
/// mesh with `density` switches each. Prefers the most square tile.
pub fn cluster_dims(rows: usize, cols: usize, density: usize) -> Result<(usize, usize), ConfigError> {
    (1..=rows)
        .filter(|cr| rows.is_multiple_of(*cr) && density.is_multiple_of(*cr))
        .map(|cr| (cr, density / cr))
        .filter(|&(_, cc)| cc <= cols && cols.is_multiple_of(cc))
        .min_by_key(|&(cr, cc)| (cr.abs_diff(cc), std::cmp::Reverse(cr)))
        .ok_or_else(|| {
            ConfigError::Invariant(format!(
                "wi_density {density} does not tile a {rows}x{cols} mesh"
            ))
        })
}

/// Parses `<X>C<Y>M:<fabric>` and applies overrides on top of the defaults.
///
/// Unless overridden, the 64 cores are split evenly over the chips
/// (16 per chip when X does not divide 64). There is one WI per 16 cores,
/// or one per chip when chips are smaller.
pub fn parse_arch(name: &str, overrides: &BTreeMap<String, String>) -> Result<SystemConfig, ConfigError> {
    let malformed = || ConfigError::MalformedName(name.to_string());
    let (arch, fabric) = name.split_once(':').ok_or_else(malformed)?;
    let fabric: Fabric = fabric.parse()?;
    let (num_chips, num_memories) = parse_xcym(arch).ok_or_else(malformed)?;
    if num_chips == 0 {
        return Err(malformed());
    }

    let cores_per_chip = if DEFAULT_TOTAL_CORES.is_multiple_of(num_chips) {
        DEFAULT_TOTAL_CORES / num_chips
    } else {
        16
    };
    let flit_bits = 32;
    let clock_ghz = 2.5;
    let mut cfg = SystemConfig {
        num_chips,
        num_memories,
        fabric,
        cores_per_chip,
        wi_density: DEFAULT_WI_DENSITY.min(cores_per_chip),
        chip_edge_mm: 10.0,
        flit_bits,
        packet_flits: 64,
        vcs_per_port: 8,
        vc_depth_flits: 16,
        clock_ghz,
        channels_per_stack: 4,
        layers_per_stack: 4,
        control_packet_bits: flit_bits,
        interposer_memory: MemoryAttach::WideIo,
        link_params: LinkParamTable::defaults(flit_bits, clock_ghz),
        seed: 1,
    };

    let density_overridden = overrides.contains_key("wi_density");
    for (k, v) in overrides {
        cfg.apply_override(k, v)?;
    }
    if !density_overridden {
        cfg.wi_density = DEFAULT_WI_DENSITY.min(cfg.cores_per_chip);
        if !cfg.cores_per_chip.is_multiple_of(cfg.wi_density) {
            cfg.wi_density = cfg.cores_per_chip;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_xcym(arch: &str) -> Option<(usize, usize)> {
    let upper = arch.trim().to_ascii_uppercase();
    let (x, rest) = upper.split_once('C')?;
    let y = rest.strip_suffix('M')?;
    if x.is_empty() || y.is_empty() || !x.bytes().all(|b| b.is_ascii_digit()) || !y.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((x.parse().ok()?, y.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn four_chip_wireless() {
        let cfg = parse_arch("4C4M:wireless", &ov(&[("cores_per_chip", "16")])).unwrap();
        assert_eq!(cfg.num_chips, 4);
        assert_eq!(cfg.num_memories, 4);
        assert_eq!(cfg.fabric, Fabric::Wireless);
        assert_eq!(cfg.total_cores(), 64);
        assert_eq!(cfg.wi_density, 16);
    }

    #[test]
    fn defaults_are_published_constants() {
        let cfg = parse_arch("1C4M:wireless", &BTreeMap::new()).unwrap();
        assert_eq!(cfg.num_chips, 1);
        assert_eq!(cfg.num_memories, 4);
        assert_eq!(cfg.flit_bits, 32);
        assert_eq!(cfg.packet_flits, 64);
        assert_eq!(cfg.vcs_per_port, 8);
        assert_eq!(cfg.vc_depth_flits, 16);
        assert_eq!(cfg.clock_ghz, 2.5);
        assert_eq!(cfg.cores_per_chip, 64);
        assert_eq!(cfg.wi_density, 16);
        assert_eq!(cfg.link_params.get(LinkKind::Wireless).bandwidth_gbps, 16.0);
        assert_eq!(cfg.link_params.get(LinkKind::Wireless).energy_pj_per_bit, 2.3);
        assert_eq!(cfg.link_params.get(LinkKind::WideIo).energy_pj_per_bit, 6.5);
        assert_eq!(cfg.link_params.get(LinkKind::SerialIo).bandwidth_gbps, 15.0);
        assert_eq!(cfg.link_params.get(LinkKind::SerialIo).energy_pj_per_bit, 5.0);
    }

    #[test]
    fn eight_chip_system_uses_one_wi_per_chip() {
        let cfg = parse_arch("8C4M:wireless", &BTreeMap::new()).unwrap();
        assert_eq!(cfg.cores_per_chip, 8);
        assert_eq!(cfg.wi_density, 8);
        assert_eq!(cfg.mesh_dims().unwrap(), (4, 2));
    }

    #[test]
    fn zero_vcs_is_rejected() {
        let err = parse_arch("4C4M:wireless", &ov(&[("vcs_per_port", "0")])).unwrap_err();
        assert!(matches!(err, ConfigError::Invariant(_)), "{err}");
    }

    #[test]
    fn bad_density_is_rejected() {
        let err = parse_arch("4C4M:wireless", &ov(&[("cores_per_chip", "16"), ("wi_density", "3")])).unwrap_err();
        assert!(matches!(err, ConfigError::Invariant(_)));
    }

    #[test]
    fn malformed_names() {
        for name in ["4C4M", "C4M:wireless", "4X4M:wireless", "0C4M:wireless", "4C4:wireless"] {
            assert!(matches!(parse_arch(name, &BTreeMap::new()), Err(ConfigError::MalformedName(_))), "{name}");
        }
        assert!(matches!(parse_arch("4C4M:optical", &BTreeMap::new()), Err(ConfigError::UnknownFabric(_))));
    }

    #[test]
    fn unknown_override_key() {
        let err = parse_arch("4C4M:substrate", &ov(&[("warp_factor", "9")])).unwrap_err();
        assert_eq!(err, ConfigError::UnknownOverride("warp_factor".into()));
    }

    #[test]
    fn link_param_override() {
        let cfg = parse_arch("2C2M:substrate", &ov(&[("link_params.serial_io.bandwidth_gbps", "30")])).unwrap();
        assert_eq!(cfg.flit_cycles(LinkKind::SerialIo), 3);
    }

    #[test]
    fn serialization_cycles_match_rates() {
        let cfg = parse_arch("4C4M:substrate", &BTreeMap::new()).unwrap();
        assert_eq!(cfg.flit_cycles(LinkKind::SerialIo), 6);
        assert_eq!(cfg.flit_cycles(LinkKind::WideIo), 1);
        assert_eq!(cfg.flit_cycles(LinkKind::Wireless), 5);
        assert_eq!(cfg.flit_cycles(LinkKind::MeshWire), 1);
        assert_eq!(cfg.control_packet_cycles(), 5);
    }

    #[test]
    fn mesh_and_cluster_shapes() {
        assert_eq!(mesh_dims(16).unwrap(), (4, 4));
        assert_eq!(mesh_dims(1).unwrap(), (1, 1));
        assert!(mesh_dims(3).is_err());
        assert_eq!(cluster_dims(4, 4, 4).unwrap(), (2, 2));
        assert_eq!(cluster_dims(8, 8, 16).unwrap(), (4, 4));
        assert_eq!(cluster_dims(4, 2, 8).unwrap(), (4, 2));
        assert!(cluster_dims(4, 4, 3).is_err());
    }
}
