mod common;

use common::*;
use mcnoc::routing::RoutingMode;
use mcnoc::traffic::TraceRecord;
use mcnoc::LinkKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(cores: usize, endpoints: usize, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let src = rng.gen_range(0..cores);
        let dst = rng.gen_range(0..endpoints);
        if src != dst {
            out.push((src, dst));
        }
    }
    out
}

fn latency_of(arch: &str, fabric: &str, src: usize, dst: usize, flits: u32) -> (u64, Vec<(LinkKind, u64)>) {
    let (topo, table) = system(arch, fabric, RoutingMode::SingleTree);
    let out = replay(&topo, &table, vec![TraceRecord { cycle: 0, src, dst, flits }]);
    let p = &out.packets[0];
    assert_eq!(p.ejected as u32, flits);
    let ep = |i: usize| topo.endpoint(i).unwrap();
    let links = route_cycles(&topo, &table, topo.attach_node(ep(src)), topo.attach_node(ep(dst)));
    (p.done.unwrap() - p.inject_cycle, links)
}

#[test]
fn worked_examples() {
    assert_eq!(zero_load_oracle(&[], 1, 16), 3);
    assert_eq!(zero_load_oracle(&[1], 64, 16), 70);
    assert_eq!(zero_load_formula(&[1], 64), 70);
    assert_eq!(zero_load_formula(&[1, 1, 1], 64), 78);
}

#[test]
fn oracle_matches_closed_form() {
    for links in [vec![1], vec![6], vec![1, 6, 1], vec![1, 1, 6, 6, 1], vec![5, 1], vec![1; 9]] {
        for len in [1, 2, 4, 16, 17, 64] {
            assert_eq!(zero_load_oracle(&links, len, 16), zero_load_formula(&links, len as u64), "{links:?} len {len}");
        }
    }
}

#[test]
fn wired_fabrics_match_the_oracle() {
    for fabric in ["substrate", "interposer"] {
        for arch in ["2C4M", "4C4M"] {
            let (topo, _) = system(arch, fabric, RoutingMode::SingleTree);
            for (i, (src, dst)) in random_pairs(topo.num_cores(), topo.num_endpoints(), 12, 11).into_iter().enumerate() {
                let flits = [64, 4, 1][i % 3];
                let (lat, links) = latency_of(arch, fabric, src, dst, flits);
                let cycles: Vec<u64> = links.iter().map(|l| l.1).collect();
                assert_eq!(lat, zero_load_oracle(&cycles, flits as usize, 16), "{arch}:{fabric} {src}->{dst} {links:?}");
            }
        }
    }
}

#[test]
fn wireless_fabric_on_chip_exact_and_air_bounded() {
    let (topo, _) = system("4C4M", "wireless", RoutingMode::SingleTree);
    let mut exact = 0;
    for (src, dst) in random_pairs(topo.num_cores(), topo.num_endpoints(), 30, 5) {
        let (lat, links) = latency_of("4C4M", "wireless", src, dst, 64);
        let cycles: Vec<u64> = links.iter().map(|l| l.1).collect();
        let bound = zero_load_oracle(&cycles, 64, 16);
        if links.iter().any(|l| l.0 == LinkKind::Wireless) {
            assert!(lat >= bound, "{src}->{dst}: {lat} < {bound}");
        } else {
            assert_eq!(lat, bound);
            exact += 1;
        }
    }
    assert!(exact > 0);
}
