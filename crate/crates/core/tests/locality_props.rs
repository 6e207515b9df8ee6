use proptest::prelude::*;

use accmer::config::SamplerMode;
use accmer::locality::{self, simulate_cache, CacheConfig, Workload};

fn fully_associative(lines: u64) -> CacheConfig {
    CacheConfig {
        capacity_bytes: 64 * lines,
        line_bytes: 64,
        associativity: lines,
        transition_bytes: 64,
    }
}

proptest! {
    #[test]
    fn misses_non_increasing_in_capacity(trace in prop::collection::vec(0u64..40, 0..300)) {
        let mut last = u64::MAX;
        for lines in 1..=48 {
            let s = simulate_cache(&trace, &fully_associative(lines)).unwrap();
            prop_assert_eq!(s.hits + s.misses, trace.len() as u64);
            prop_assert!(s.misses <= last);
            last = s.misses;
        }
    }

    #[test]
    fn line_expansion_counts(slots in prop::collection::vec(0usize..1000, 0..50), tb in 1u64..300) {
        let cfg = CacheConfig { transition_bytes: tb, ..CacheConfig::default() };
        let lines = locality::slots_to_lines(slots.iter().copied(), &cfg);
        let expect: u64 = slots
            .iter()
            .map(|&s| {
                let (a, b) = (s as u64 * tb, (s as u64 + 1) * tb);
                b.div_ceil(64) - a / 64
            })
            .sum();
        prop_assert_eq!(lines.len() as u64, expect);
    }
}

#[test]
fn distinct_slots_shrink_with_alpha() {
    let mut last = f64::INFINITY;
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let w = Workload {
            capacity: 4000,
            batch_size: 64,
            alpha,
            weight_decay: 1.0,
            calls: 62 * 10,
            seed: 21,
        };
        let run = locality::run_workload(&w, SamplerMode::Accmer).unwrap();
        let distinct = locality::distinct_slots_per_window(&run.trace).unwrap();
        assert!(distinct <= last, "α={alpha}: {distinct} > {last}");
        last = distinct;
    }
}

#[test]
fn alpha_one_has_lowest_miss_rate() {
    let w = Workload {
        capacity: 10_000,
        batch_size: 128,
        alpha: 1.0,
        weight_decay: 1.0,
        calls: 1000,
        seed: 3,
    };
    let report = locality::bench_modes(&w, &CacheConfig::default()).unwrap();
    let a = report.row("accmer").unwrap().miss_rate;
    for other in ["uniform", "prioritized"] {
        assert!(a < report.row(other).unwrap().miss_rate, "{}", report.table());
    }
}

#[test]
fn accmer_half_beats_uniform() {
    let w = Workload {
        capacity: 10_000,
        batch_size: 128,
        alpha: 0.5,
        weight_decay: 0.8,
        calls: 1000,
        seed: 5,
    };
    let report = locality::bench_modes(&w, &CacheConfig::default()).unwrap();
    let u = report.row("uniform").unwrap();
    let a = report.row("accmer").unwrap();
    assert!(a.miss_rate < u.miss_rate);
    assert!(a.miss_rate_reduction > 0.0);
    assert_eq!(u.miss_rate_reduction, 0.0);
    assert_eq!(report.level, "simulated-lru");
}

#[test]
fn bench_is_deterministic() {
    let w = Workload {
        capacity: 1000,
        batch_size: 32,
        alpha: 0.5,
        weight_decay: 1.0,
        calls: 200,
        seed: 9,
    };
    let a = locality::bench_modes(&w, &CacheConfig::default()).unwrap();
    let b = locality::bench_modes(&w, &CacheConfig::default()).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.hits, x.misses), (y.hits, y.misses));
    }
}
