mod common;

use std::collections::{BTreeMap, VecDeque};

use common::*;
use mcnoc::config::parse_arch;
use mcnoc::engine::prepare;
use mcnoc::routing::{check_deadlock_freedom, compute_tables, RoutingMode, RoutingOptions};
use mcnoc::{build_topology, EdgeWeighting, TieBreak, Topology};

/// Hop distances by breadth-first search over the raw link list.
fn bfs_oracle(topo: &Topology, src: usize) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); topo.nodes.len()];
    for l in &topo.links {
        adj[l.endpoints.0].push(l.endpoints.1);
        adj[l.endpoints.1].push(l.endpoints.0);
    }
    let mut dist = vec![None; topo.nodes.len()];
    dist[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

#[test]
fn all_pairs_hop_distances_equal_bfs() {
    for arch in PAPER_ARCHS {
        for fabric in FABRICS {
            let cfg = parse_arch(&format!("{arch}:{fabric}"), &BTreeMap::new()).unwrap();
            let topo = build_topology(&cfg).unwrap();
            assert!(topo.num_nodes() <= 140);
            for tie_break in [TieBreak::LowestId, TieBreak::DimensionOrder] {
                let opts = RoutingOptions { mode: RoutingMode::AllPairsSp, weighting: EdgeWeighting::HopCount, tie_break };
                let table = compute_tables(&topo, &opts, 1).unwrap();
                for src in 0..topo.num_nodes() {
                    let oracle = bfs_oracle(&topo, src);
                    for dst in 0..topo.num_nodes() {
                        let path = table.route(&topo, src, dst).unwrap();
                        assert_eq!(Some(path.len() - 1), oracle[dst], "{arch}:{fabric} {src}->{dst}");
                    }
                }
            }
        }
    }
}

#[test]
fn single_tree_routes_lie_on_a_spanning_tree() {
    for arch in PAPER_ARCHS {
        for fabric in FABRICS {
            let (topo, table) = system(arch, fabric, RoutingMode::SingleTree);
            assert_eq!(table.tree_links.len(), topo.num_nodes() - 1);
            let mut used = std::collections::BTreeSet::new();
            for s in 0..topo.num_nodes() {
                for d in 0..topo.num_nodes() {
                    used.extend(table.route_links(&topo, s, d).unwrap());
                }
            }
            let tree: std::collections::BTreeSet<_> = table.tree_links.iter().copied().collect();
            assert!(used.is_subset(&tree), "{arch}:{fabric}");
            assert!(check_deadlock_freedom(&table, &topo).acyclic);
        }
    }
}

#[test]
fn all_pairs_paper_systems_pass_the_deadlock_gate() {
    for arch in PAPER_ARCHS {
        for fabric in FABRICS {
            let cfg = parse_arch(&format!("{arch}:{fabric}"), &BTreeMap::new()).unwrap();
            let opts = RoutingOptions { mode: RoutingMode::AllPairsSp, ..Default::default() };
            prepare(&cfg, &opts).unwrap();
        }
    }
}

#[test]
fn dimension_order_on_a_lone_mesh_is_xy() {
    let cfg = parse_arch("1C1M:substrate", &BTreeMap::new()).unwrap();
    let topo = build_topology(&cfg).unwrap();
    let opts = RoutingOptions {
        mode: RoutingMode::AllPairsSp,
        weighting: EdgeWeighting::HopCount,
        tie_break: TieBreak::DimensionOrder,
    };
    let table = compute_tables(&topo, &opts, 1).unwrap();
    assert!(check_deadlock_freedom(&table, &topo).acyclic);
}
