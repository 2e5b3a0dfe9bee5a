//! Per-bit energy accounting for every flit movement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{LinkKind, SystemConfig};
use crate::PacketId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("unknown energy category `{0}`")]
    UnknownCategory(String),
    #[error("category {0} has no per-bit rate")]
    NoRate(Category),
    #[error("no delivered packets to average over")]
    EmptyDeliveredSet,
    #[error("energy parameter {0} must be non-negative")]
    Negative(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Wireless,
    Serial,
    Wide,
    Wire,
    Switch,
    Control,
    Static,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Wireless,
        Category::Serial,
        Category::Wide,
        Category::Wire,
        Category::Switch,
        Category::Control,
        Category::Static,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Wireless => "wireless",
            Category::Serial => "serial",
            Category::Wide => "wide",
            Category::Wire => "wire",
            Category::Switch => "switch",
            Category::Control => "control",
            Category::Static => "static",
        }
    }

    pub fn of_link(kind: LinkKind) -> Category {
        match kind {
            LinkKind::MeshWire | LinkKind::InterposerWire => Category::Wire,
            LinkKind::SerialIo => Category::Serial,
            LinkKind::WideIo => Category::Wide,
            LinkKind::Wireless => Category::Wireless,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = EnergyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or(EnergyError::UnknownCategory(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub wireless_pj_per_bit: f64,
    pub wideio_pj_per_bit: f64,
    pub serialio_pj_per_bit: f64,
    pub mesh_wire_pj_per_bit: f64,
    pub interposer_wire_pj_per_bit: f64,
    pub switch_dynamic_pj_per_bit: f64,
    /// Leakage per switch per cycle.
    pub switch_static_pj_per_cycle: f64,
    /// Receiver power per sleeping WI per cycle.
    pub wi_sleep_pj_per_cycle: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            wireless_pj_per_bit: 2.3,
            wideio_pj_per_bit: 6.5,
            serialio_pj_per_bit: 5.0,
            mesh_wire_pj_per_bit: 0.45,
            interposer_wire_pj_per_bit: 0.45,
            switch_dynamic_pj_per_bit: 0.98,
            switch_static_pj_per_cycle: 0.0,
            wi_sleep_pj_per_cycle: 0.0,
        }
    }
}

impl EnergyParams {
    /// Link rates come from the configuration's link parameters; switch and
    /// static terms keep their defaults.
    pub fn from_config(cfg: &SystemConfig) -> Self {
        EnergyParams {
            wireless_pj_per_bit: cfg.link_params.get(LinkKind::Wireless).energy_pj_per_bit,
            wideio_pj_per_bit: cfg.link_params.get(LinkKind::WideIo).energy_pj_per_bit,
            serialio_pj_per_bit: cfg.link_params.get(LinkKind::SerialIo).energy_pj_per_bit,
            mesh_wire_pj_per_bit: cfg.link_params.get(LinkKind::MeshWire).energy_pj_per_bit,
            interposer_wire_pj_per_bit: cfg.link_params.get(LinkKind::InterposerWire).energy_pj_per_bit,
            ..EnergyParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let fields = [
            ("wireless_pj_per_bit", self.wireless_pj_per_bit),
            ("wideio_pj_per_bit", self.wideio_pj_per_bit),
            ("serialio_pj_per_bit", self.serialio_pj_per_bit),
            ("mesh_wire_pj_per_bit", self.mesh_wire_pj_per_bit),
            ("interposer_wire_pj_per_bit", self.interposer_wire_pj_per_bit),
            ("switch_dynamic_pj_per_bit", self.switch_dynamic_pj_per_bit),
            ("switch_static_pj_per_cycle", self.switch_static_pj_per_cycle),
            ("wi_sleep_pj_per_cycle", self.wi_sleep_pj_per_cycle),
        ];
        match fields.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            Some((name, _)) => Err(EnergyError::Negative(name)),
            None => Ok(()),
        }
    }

    /// Per-bit rate of a category. Wire means on-chip mesh wire; control
    /// packets go over the air.
    pub fn rate(&self, category: Category) -> Result<f64, EnergyError> {
        match category {
            Category::Wireless | Category::Control => Ok(self.wireless_pj_per_bit),
            Category::Serial => Ok(self.serialio_pj_per_bit),
            Category::Wide => Ok(self.wideio_pj_per_bit),
            Category::Wire => Ok(self.mesh_wire_pj_per_bit),
            Category::Switch => Ok(self.switch_dynamic_pj_per_bit),
            Category::Static => Err(EnergyError::NoRate(Category::Static)),
        }
    }

    pub fn link_rate(&self, kind: LinkKind) -> f64 {
        match kind {
            LinkKind::MeshWire => self.mesh_wire_pj_per_bit,
            LinkKind::InterposerWire => self.interposer_wire_pj_per_bit,
            LinkKind::SerialIo => self.serialio_pj_per_bit,
            LinkKind::WideIo => self.wideio_pj_per_bit,
            LinkKind::Wireless => self.wireless_pj_per_bit,
        }
    }
}

type Breakdown = [f64; 7];

#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub params: EnergyParams,
    per_packet: Vec<Breakdown>,
    totals: Breakdown,
}

impl EnergyLedger {
    pub fn new(params: EnergyParams) -> Self {
        EnergyLedger { params, per_packet: Vec::new(), totals: [0.0; 7] }
    }

    fn add(&mut self, pid: PacketId, category: Category, pj: f64) {
        let idx = pid as usize;
        if idx >= self.per_packet.len() {
            self.per_packet.resize(idx + 1, [0.0; 7]);
        }
        self.per_packet[idx][category.index()] += pj;
        self.totals[category.index()] += pj;
    }

    /// Adds `bits x rate(category)` to the packet and the category total.
    pub fn charge_hop(&mut self, pid: PacketId, bits: u32, category: Category) -> Result<f64, EnergyError> {
        let pj = bits as f64 * self.params.rate(category)?;
        self.add(pid, category, pj);
        Ok(pj)
    }

    /// Charges a traversal of a link of `kind`.
    pub fn charge_link(&mut self, pid: PacketId, bits: u32, kind: LinkKind) -> f64 {
        let pj = bits as f64 * self.params.link_rate(kind);
        self.add(pid, Category::of_link(kind), pj);
        pj
    }

    /// Control packets are not attributed to any data packet.
    pub fn charge_control(&mut self, bits: u32) -> f64 {
        let pj = bits as f64 * self.params.wireless_pj_per_bit;
        self.totals[Category::Control.index()] += pj;
        pj
    }

    pub fn charge_static(&mut self, pj: f64) {
        self.totals[Category::Static.index()] += pj;
    }

    pub fn packet_total(&self, pid: PacketId) -> f64 {
        self.per_packet.get(pid as usize).map_or(0.0, |b| b.iter().sum())
    }

    pub fn packet_category(&self, pid: PacketId, category: Category) -> f64 {
        self.per_packet.get(pid as usize).map_or(0.0, |b| b[category.index()])
    }

    pub fn category_total(&self, category: Category) -> f64 {
        self.totals[category.index()]
    }

    pub fn grand_total(&self) -> f64 {
        self.totals.iter().sum()
    }

    /// Mean per-packet energy over `delivered`.
    pub fn avg_packet_energy(&self, delivered: &[PacketId]) -> Result<f64, EnergyError> {
        if delivered.is_empty() {
            return Err(EnergyError::EmptyDeliveredSet);
        }
        Ok(delivered.iter().map(|&p| self.packet_total(p)).sum::<f64>() / delivered.len() as f64)
    }

    /// Packet sums plus unattributed categories must equal the grand total.
    pub fn is_consistent(&self) -> bool {
        let mut by_cat = [0.0; 7];
        for b in &self.per_packet {
            for (acc, v) in by_cat.iter_mut().zip(b) {
                *acc += v;
            }
        }
        let packets: f64 = by_cat.iter().sum();
        let unattributed = self.category_total(Category::Control) + self.category_total(Category::Static);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
        Category::ALL
            .iter()
            .filter(|c| !matches!(c, Category::Control | Category::Static))
            .all(|&c| close(by_cat[c.index()], self.totals[c.index()]))
            && close(packets + unattributed, self.grand_total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn per_hop_charges() {
        let mut l = EnergyLedger::new(EnergyParams::default());
        assert!((l.charge_hop(0, 32, Category::Wireless).unwrap() - 73.6).abs() < 1e-9);
        assert!((l.charge_hop(1, 32, Category::Wide).unwrap() - 208.0).abs() < 1e-9);
        assert_eq!(l.charge_hop(2, 0, Category::Serial).unwrap(), 0.0);
        assert_eq!(l.charge_hop(2, 32, Category::Static), Err(EnergyError::NoRate(Category::Static)));
        assert!("plasma".parse::<Category>().is_err());
        assert_eq!("wide".parse::<Category>().unwrap(), Category::Wide);
    }

    #[test]
    fn averages() {
        let mut l = EnergyLedger::new(EnergyParams { switch_dynamic_pj_per_bit: 1.0, ..Default::default() });
        l.charge_hop(0, 100, Category::Switch).unwrap();
        assert_eq!(l.avg_packet_energy(&[0]).unwrap(), 100.0);
        l.charge_hop(1, 300, Category::Switch).unwrap();
        assert_eq!(l.avg_packet_energy(&[0, 1]).unwrap(), 200.0);
        assert_eq!(l.avg_packet_energy(&[]), Err(EnergyError::EmptyDeliveredSet));
    }

    #[test]
    fn one_wireless_hop_two_switches_closed_form() {
        let mut l = EnergyLedger::new(EnergyParams::default());
        for _ in 0..64 {
            l.charge_hop(7, 32, Category::Switch).unwrap();
            l.charge_link(7, 32, LinkKind::Wireless);
            l.charge_hop(7, 32, Category::Switch).unwrap();
        }
        let expect = 64.0 * 32.0 * (2.3 + 2.0 * 0.98);
        assert!((l.packet_total(7) - expect).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn ledger_stays_consistent(charges in prop::collection::vec((0u32..20, 0u32..64, 0usize..5), 0..200),
                                   control in 0u32..10) {
            let mut l = EnergyLedger::new(EnergyParams::default());
            let cats = [Category::Wireless, Category::Serial, Category::Wide, Category::Wire, Category::Switch];
            let mut before = 0.0;
            for (pid, bits, c) in charges {
                let prev = l.packet_total(pid);
                l.charge_hop(pid, bits, cats[c]).unwrap();
                // Adding a hop never lowers a packet's energy.
                prop_assert!(l.packet_total(pid) >= prev);
                prop_assert!(l.grand_total() >= before);
                before = l.grand_total();
            }
            l.charge_control(control * 32);
            l.charge_static(1.5);
            prop_assert!(l.is_consistent());
        }

        #[test]
        fn zero_rates_give_zero_energy(bits in 0u32..1000) {
            let zero = EnergyParams {
                wireless_pj_per_bit: 0.0, wideio_pj_per_bit: 0.0, serialio_pj_per_bit: 0.0,
                mesh_wire_pj_per_bit: 0.0, interposer_wire_pj_per_bit: 0.0, switch_dynamic_pj_per_bit: 0.0,
                ..Default::default()
            };
            let mut l = EnergyLedger::new(zero);
            for c in [Category::Wireless, Category::Serial, Category::Wide, Category::Wire, Category::Switch] {
                l.charge_hop(0, bits, c).unwrap();
            }
            prop_assert_eq!(l.avg_packet_energy(&[0]).unwrap(), 0.0);
        }
    }
}
