use mcnoc::traffic::{Injection, PacketClass, TrafficSpec, UniformRandom};
use proptest::prelude::*;

fn generate(load: f64, p_mem: f64, seed: u64, cores: usize, mem: usize, flits: u32, cycles: u64) -> Vec<Injection> {
    let spec = TrafficSpec::uniform(load, p_mem, seed);
    let mut g = UniformRandom::new(&spec, cores, mem, flits);
    let mut out = Vec::new();
    for t in 0..cycles {
        g.step(t, &mut out);
    }
    out
}

fn within_sigmas(observed: f64, n: f64, p: f64, k: f64) -> bool {
    (observed - n * p).abs() <= k * (n * p * (1.0 - p)).sqrt()
}

#[test]
fn offered_load_within_one_percent() {
    let (cores, cycles) = (64, 100_000u64);
    for load in [0.05, 0.2, 0.6] {
        let inj = generate(load, 0.2, 3, cores, 16, 4, cycles);
        let flits: u64 = inj.iter().map(|i| i.flits as u64).sum();
        let offered = flits as f64 / (cores as f64 * cycles as f64);
        assert!((offered - load).abs() / load < 0.01, "load {load}: offered {offered}");
    }
}

#[test]
fn destinations_are_uniform_within_three_sigma() {
    let (cores, mem, p_mem) = (64usize, 16usize, 0.3);
    let inj = generate(0.4, p_mem, 9, cores, mem, 4, 50_000);
    let n = inj.len() as f64;
    let mem_count = inj.iter().filter(|i| i.dst >= cores).count() as f64;
    assert!(within_sigmas(mem_count, n, p_mem, 3.0), "memory share {}", mem_count / n);

    let mut hist = vec![0u64; cores + mem];
    for i in &inj {
        assert_ne!(i.src, i.dst);
        hist[i.dst] += 1;
    }
    for (d, &h) in hist.iter().enumerate() {
        // Each core is one of cores-1 peers for every other source.
        let p = if d >= cores { p_mem / mem as f64 } else { (1.0 - p_mem) / cores as f64 };
        assert!(within_sigmas(h as f64, n, p, 3.0), "dst {d}: {h} vs {}", n * p);
    }
}

#[test]
fn classes_follow_endpoint_ranges() {
    let inj = generate(0.3, 0.5, 1, 16, 4, 8, 2_000);
    for i in inj {
        let expect = if i.dst >= 16 { PacketClass::CoreToMemory } else { PacketClass::CoreToCore };
        assert_eq!(i.class, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_stream(seed in 0u64..1000, load in 0.01f64..1.0, p_mem in 0.0f64..1.0) {
        let a = generate(load, p_mem, seed, 8, 4, 4, 500);
        let b = generate(load, p_mem, seed, 8, 4, 4, 500);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.cycle, x.src, x.dst), (y.cycle, y.src, y.dst));
        }
    }

    #[test]
    fn destinations_in_range(seed in 0u64..1000, cores in 2usize..40, mem in 0usize..20) {
        for i in generate(0.5, 0.4, seed, cores, mem, 2, 200) {
            prop_assert!(i.src < cores && i.dst < cores + mem && i.src != i.dst);
        }
    }
}
