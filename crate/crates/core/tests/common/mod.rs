//! Shared helpers for the integration tests.
#![allow(dead_code)]

use accmer::config::{RunConfig, SamplerMode};
use statrs::distribution::{ContinuousCDF, Normal};

/// The small predator-prey configuration used for the learning checks:
/// 4 predators, 4 prey, 7×7 grid, no punishment, 150k environment steps.
pub fn desk_config(mode: SamplerMode) -> RunConfig {
    RunConfig {
        n_agents: 4,
        n_prey: 4,
        grid_size: 7,
        punishment: 0.0,
        sampler_mode: mode,
        reuse_ratio: 0.5,
        total_steps: 150_000,
        buffer_capacity: 10_000,
        batch_size: 32,
        target_sync_episodes: 10,
        env_discount: 0.95,
        learning_rate: 5e-4,
        grad_clip: 10.0,
        eval_interval: 5000,
        eval_episodes: 32,
        seed: 1,
        ..RunConfig::default()
    }
}

/// Mean of the last five checkpoints (fewer if the curve is shorter).
pub fn final_reward(curve: &[f64]) -> f64 {
    let tail = &curve[curve.len().saturating_sub(5)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// One-sided Mann-Kendall p-value for an increasing trend, with the tie
/// correction and continuity correction on `S`.
pub fn mann_kendall_increasing(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 1.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = match s.signum() {
        1 => (s - 1) as f64 / var.sqrt(),
        -1 => (s + 1) as f64 / var.sqrt(),
        _ => 0.0,
    };
    1.0 - Normal::standard().cdf(z)
}

#[test]
fn mann_kendall_reference_values() {
    // strictly increasing, n = 10: S = 45, var = 125, z = 44/√125
    let up: Vec<f64> = (0..10).map(f64::from).collect();
    let expect = 1.0 - Normal::standard().cdf(44.0 / 125f64.sqrt());
    assert!((mann_kendall_increasing(&up) - expect).abs() < 1e-15);
    assert!(mann_kendall_increasing(&up) < 1e-4);
    let down: Vec<f64> = up.iter().rev().copied().collect();
    assert!(mann_kendall_increasing(&down) > 0.99);
    assert_eq!(mann_kendall_increasing(&[1.0; 8]), 1.0);
}
