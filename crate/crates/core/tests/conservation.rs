mod common;

use common::*;
use mcnoc::energy::{Category, EnergyParams};
use mcnoc::engine::{build_source, run_detailed, saturation_sweep, RunOutput, RunParams};
use mcnoc::routing::RoutingMode;
use mcnoc::traffic::TrafficSpec;
use proptest::prelude::*;

fn run(arch: &str, fabric: &str, mode: RoutingMode, load: f64, p_mem: f64, seed: u64, cycles: u64) -> RunOutput {
    let (topo, table) = system(arch, fabric, mode);
    let traffic = TrafficSpec::uniform(load, p_mem, seed);
    let source = build_source(&topo, &traffic).unwrap();
    run_detailed(&topo, &table, source, &traffic, &EnergyParams::default(), &checked_params(cycles)).unwrap()
}

fn assert_conserved(out: &RunOutput) {
    let c = out.counters;
    assert_eq!(c.injected_flits, c.ejected_flits + out.in_network_flits, "{c:?}");
    assert!(c.injected_flits <= c.created_flits);
    assert_eq!(out.report.in_flight_flits, c.created_flits - c.ejected_flits);
    let done = out.packets.iter().filter(|p| p.done.is_some()).count() as u64;
    assert_eq!(done, out.report.delivered_packets);
    assert!(out.ledger.is_consistent());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn flits_are_conserved(
        arch in prop::sample::select(vec!["1C4M", "2C4M", "4C4M", "4C1M"]),
        fabric in prop::sample::select(FABRICS.to_vec()),
        all_pairs in any::<bool>(),
        load in 0.005f64..0.6,
        p_mem in 0.0f64..1.0,
        seed in 0u64..500,
    ) {
        let mode = if all_pairs { RoutingMode::AllPairsSp } else { RoutingMode::SingleTree };
        let out = run(arch, fabric, mode, load, p_mem, seed, 1_500);
        assert_conserved(&out);
    }
}

#[test]
fn drained_runs_deliver_everything() {
    for fabric in FABRICS {
        let (topo, table) = system("4C4M", fabric, RoutingMode::SingleTree);
        let traffic = TrafficSpec::uniform(0.01, 0.4, 2);
        let params = RunParams { drain: true, warmup_cycles: 200, ..checked_params(2_000) };
        let source = build_source(&topo, &traffic).unwrap();
        let out = run_detailed(&topo, &table, source, &traffic, &EnergyParams::default(), &params).unwrap();
        assert_conserved(&out);
        assert_eq!(out.report.undelivered_measured, 0);
    }
}

#[test]
fn identical_seeds_identical_reports() {
    for fabric in FABRICS {
        let a = run("4C4M", fabric, RoutingMode::SingleTree, 0.1, 0.2, 7, 2_000);
        let b = run("4C4M", fabric, RoutingMode::SingleTree, 0.1, 0.2, 7, 2_000);
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
        let c = run("4C4M", fabric, RoutingMode::SingleTree, 0.1, 0.2, 8, 2_000);
        assert_ne!(a.report.created_packets + a.report.delivered_packets, 0);
        assert_ne!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&c.report).unwrap());
    }
}

#[test]
fn per_hop_energy_is_exact() {
    let bits = 64.0 * 32.0;
    for (fabric, cat, rate) in
        [("wireless", Category::Wireless, 2.3), ("substrate", Category::Serial, 5.0), ("substrate", Category::Wide, 6.5)]
    {
        let (topo, table) = system("4C4M", fabric, RoutingMode::SingleTree);
        let traffic = TrafficSpec::uniform(0.003, 0.5, 3);
        let params = RunParams { drain: true, ..checked_params(3_000) };
        let source = build_source(&topo, &traffic).unwrap();
        let out = run_detailed(&topo, &table, source, &traffic, &EnergyParams::default(), &params).unwrap();
        let mut checked = 0;
        for p in out.packets.iter().filter(|p| p.done.is_some()) {
            let hops = table
                .route_links(&topo, p.src_node, p.dst_node)
                .unwrap()
                .iter()
                .filter(|&&l| Category::of_link(topo.links[l].kind) == cat)
                .count();
            let got = out.ledger.packet_category(p.id, cat);
            assert!((got - hops as f64 * bits * rate).abs() < 1e-6, "{fabric} p{}: {got}", p.id);
            checked += usize::from(hops > 0);
        }
        assert!(checked > 0, "{fabric}: no packet used {cat:?}");
    }
}

#[test]
fn throughput_plateaus_and_latency_rises() {
    let (topo, table) = system("4C4M", "interposer", RoutingMode::SingleTree);
    let loads = [0.01, 0.05, 0.2, 0.5, 1.0];
    let traffic = TrafficSpec::uniform(0.0, 0.2, 1);
    let params = RunParams { total_cycles: 4_000, warmup_cycles: 500, ..Default::default() };
    let sweep = saturation_sweep(&topo, &table, &traffic, &EnergyParams::default(), &params, &loads).unwrap();
    let thr: Vec<f64> = sweep.reports.iter().map(|r| r.throughput).collect();
    // Below saturation delivered matches offered.
    assert!((thr[0] - 0.01).abs() < 0.003, "{thr:?}");
    // Past the knee extra load adds little.
    let last = thr[thr.len() - 1];
    assert!(last < 0.5, "{thr:?}");
    assert!((last - thr[thr.len() - 2]).abs() <= 0.25 * last, "{thr:?}");
    assert!(sweep.saturation_throughput >= last * 0.99);
}
