//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N: PASS|FAIL ...` line to stderr (uncaptured) before asserting.
//!
//! Run with `cargo test -p accmer --test acceptance`.

mod common;

use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::time::Instant;

use rand::Rng;

use accmer::config::SamplerMode;
use accmer::learner::train::{train_run, RunArtifacts};
use accmer::learner::{BatchInputs, LearnerParams, LearnerShape, Mixer};
use accmer::locality::{self, CacheConfig, CacheSim, Workload};
use accmer::prioritization::{f_pi, optimal_weight, WeightInputs};
use accmer::replay::WeightTable;
use accmer::rng::RngStreams;
use accmer::sampler::Sampler;
use accmer::MixerKind;

use common::{desk_config, final_reward, mann_kendall_increasing};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
}

fn full_table(weights: &[f64]) -> WeightTable<f64> {
    let mut t = WeightTable::new(weights.len(), 1.0);
    for i in 0..weights.len() {
        t.on_insert(i);
    }
    let idx: Vec<usize> = (0..weights.len()).collect();
    t.update_weights(&idx, weights).unwrap();
    t
}

#[test]
fn c01_reuse_window_semantics() {
    let start = Instant::now();
    let (d, b, alpha) = (16, 6, 0.5);
    let mut weights: Vec<f64> = (0..d).map(|i| ((i * 7) % 16) as f64).collect();
    let mut table = full_table(&weights);
    let mut sampler = Sampler::new(SamplerMode::Accmer, b, alpha, d);
    let mut rng = RngStreams::new(1).stream("sampler");

    let top = |t: &WeightTable<f64>| t.top_k(3).unwrap();
    let first_top = top(&table);
    let t1 = sampler.next_batch(&mut rng, &table).unwrap();
    let t2 = sampler.next_batch(&mut rng, &table).unwrap();
    // reshuffle weights so the ranking differs at the next refresh
    weights.reverse();
    let idx: Vec<usize> = (0..d).collect();
    table.update_weights(&idx, &weights).unwrap();
    let second_top = top(&table);
    let t3 = sampler.next_batch(&mut rng, &table).unwrap();
    let t4 = sampler.next_batch(&mut rng, &table).unwrap();

    let disjoint = |s: &accmer::SampleBatch| {
        let a: HashSet<_> = s.reuse_indices.iter().collect();
        s.fresh_indices.iter().all(|i| !a.contains(i)) && s.len() == b
    };
    let pass = sampler.reuse_count() == 3
        && sampler.window() == 2
        && t1.reuse_indices == first_top
        && t2.reuse_indices == t1.reuse_indices
        && t3.reuse_indices == second_top
        && t4.reuse_indices == t3.reuse_indices
        && t1.reuse_indices != t3.reuse_indices
        && [&t1, &t2, &t3, &t4].iter().all(|s| disjoint(s))
        && start.elapsed().as_secs_f64() < 1.0;
    report(
        1,
        pass,
        &format!(
            "|S-|={} window={} S-(T1,T2)={:?} S-(T3,T4)={:?}",
            sampler.reuse_count(),
            sampler.window(),
            t1.reuse_indices,
            t3.reuse_indices
        ),
    );
    assert!(pass);
}

fn brute_f(p: &[f64]) -> f64 {
    let n = p.len();
    let mut loo = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for (j, &pj) in p.iter().enumerate() {
            if j != i {
                prod *= pj;
            }
        }
        loo += prod;
    }
    let all: f64 = p.iter().product();
    1.0 + loo - n as f64 * all
}

#[test]
fn c02_f_pi_exhaustive_grid() {
    let start = Instant::now();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut worst = 0.0f64;
    let mut max_ok = true;
    for n in 2..=4u32 {
        let mut best = f64::NEG_INFINITY;
        let mut argmax = Vec::new();
        for code in 0..5usize.pow(n) {
            let mut c = code;
            let p: Vec<f64> = (0..n)
                .map(|_| {
                    let v = grid[c % 5];
                    c /= 5;
                    v
                })
                .collect();
            let f = f_pi(&p).unwrap();
            worst = worst.max((f - brute_f(&p)).abs());
            if f > best {
                best = f;
                argmax = vec![p.clone()];
            } else if f == best {
                argmax.push(p.clone());
            }
        }
        let one_zero_rest_one = |p: &Vec<f64>| {
            p.iter().filter(|&&x| x == 0.0).count() == 1 && p.iter().filter(|&&x| x == 1.0).count() == p.len() - 1
        };
        max_ok &= best == 2.0 && argmax.len() == n as usize && argmax.iter().all(one_zero_rest_one);
        max_ok &= f_pi(&vec![1.0; n as usize]).unwrap() == 1.0;
    }
    let pass = worst <= 1e-12 && max_ok && start.elapsed().as_secs_f64() < 1.0;
    report(2, pass, &format!("max |f - brute| = {worst:e}, grid maximum 2 at one-zero patterns: {max_ok}"));
    assert!(pass);
}

#[test]
fn c03_optimal_weight_oracle() {
    let mut rng = RngStreams::new(3).stream("weights");
    let mut worst = 0.0f64;
    let mut zero_ok = true;
    for k in 0..10_000 {
        let n = rng.gen_range(2..6);
        let q_k: f64 = rng.gen_range(-5.0..5.0);
        let inputs = WeightInputs {
            q_k,
            bellman_target: if k % 10 == 0 { q_k } else { rng.gen_range(-5.0..5.0) },
            q_star_estimate: rng.gen_range(-5.0..5.0),
            action_probs: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        };
        let w = optimal_weight(&inputs).unwrap();
        let brute = (inputs.q_k - inputs.bellman_target).abs()
            * (-(inputs.q_k - inputs.q_star_estimate).abs()).exp()
            * brute_f(&inputs.action_probs);
        worst = worst.max((w - brute).abs());
        if k % 10 == 0 {
            zero_ok &= w == 0.0;
        }
    }
    let pass = worst <= 1e-12 && zero_ok;
    report(3, pass, &format!("max |w - brute| = {worst:e}, zero Bellman error gives 0: {zero_ok}"));
    assert!(pass);
}

fn toy_learner(seed: u64) -> (LearnerParams<f64>, BatchInputs<f64>, Vec<f64>, Vec<f64>) {
    let shape = LearnerShape {
        n_agents: 2,
        obs_len: 6,
        state_len: 5,
        agent_hidden: 8,
        mixer_hidden: 4,
        mixer: MixerKind::Qmix,
    };
    let streams = RngStreams::new(seed);
    let p = LearnerParams::<f64>::new(shape, 5, &mut streams.stream("init"));
    let mut rng = streams.stream("data");
    let len = 5;
    let il = shape.agent_input();
    let mut gen = |k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let batch = BatchInputs {
        len,
        n_agents: 2,
        input_len: il,
        state_len: 5,
        inputs: gen(len * 2 * il),
        next_inputs: gen(len * 2 * il),
        states: gen(len * 5),
        next_states: gen(len * 5),
        actions: (0..len * 2).map(|k| (k * 5 + 1) % 6).collect(),
        rewards: gen(len),
        dones: vec![false; len],
    };
    let targets = p.td_targets(&batch, 0.9).iter().map(|y| y + 0.5).collect();
    let weights: Vec<f64> = (0..len).map(|i| 0.5 + i as f64 * 0.3).collect();
    (p, batch, targets, weights)
}

#[test]
fn c04_gradient_fidelity() {
    let start = Instant::now();
    let h = 1e-5;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let (p, batch, targets, weights) = toy_learner(seed);
        let (_, grads) = p.weighted_loss(&batch, &targets, &weights).unwrap();
        let mut rng = RngStreams::new(seed).stream("coords");
        let n_agent = p.agent.params.len();
        let n_total = n_agent + p.mixer.params.len();
        for _ in 0..60 {
            let k = rng.gen_range(0..n_total);
            let loss_at = |delta: f64| {
                let mut q = p.clone();
                if k < n_agent {
                    q.agent.params[k] += delta;
                } else {
                    q.mixer.params[k - n_agent] += delta;
                }
                q.weighted_loss(&batch, &targets, &weights).unwrap().0
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let analytic = if k < n_agent { grads.agent[k] } else { grads.mixer[k - n_agent] };
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let pass = checked >= 200 && worst <= 1e-4 && start.elapsed().as_secs_f64() < 30.0;
    report(4, pass, &format!("{checked} coordinates, max relative error {worst:e}"));
    assert!(pass);
}

#[test]
fn c05_mixer_monotonicity() {
    let mut rng = RngStreams::new(5).stream("mixer");
    let h = 1e-6;
    let mut min_slope = f64::INFINITY;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let s_len = 3 + k % 5;
        let m = Mixer::<f64>::init(MixerKind::Qmix, n, s_len, 8, &mut rng);
        let qs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s: Vec<f64> = (0..s_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for a in 0..n {
            let mut up = qs.clone();
            let mut down = qs.clone();
            up[a] += h;
            down[a] -= h;
            let slope = (m.forward(&up, &s).unwrap() - m.forward(&down, &s).unwrap()) / (2.0 * h);
            min_slope = min_slope.min(slope);
        }
    }
    let pass = min_slope >= -1e-9;
    report(5, pass, &format!("min estimated dQtot/dQa over 1000 inputs = {min_slope:e}"));
    assert!(pass);
}

#[test]
fn c06_alpha_zero_equivalence() {
    let (d, b) = (500, 32);
    let init: Vec<f64> = (0..d).map(|i| ((i * 37) % 101) as f64 + 1.0).collect();
    let stream = |mode| {
        let mut table = full_table(&init);
        let mut sampler = Sampler::new(mode, b, 0.0, d);
        let mut rng = RngStreams::new(6).stream("sampler");
        let mut wrng = RngStreams::new(6).stream("weights");
        let mut out: Vec<u8> = Vec::new();
        for _ in 0..10_000 {
            let batch = sampler.next_batch(&mut rng, &table).unwrap();
            let idx = batch.to_vec();
            for &i in &idx {
                out.extend_from_slice(&(i as u32).to_le_bytes());
            }
            let w: Vec<f64> = idx.iter().map(|_| wrng.gen_range(0.0..10.0)).collect();
            table.update_weights(&idx, &w).unwrap();
            table.apply_decay(0.9);
        }
        out
    };
    let accmer = stream(SamplerMode::Accmer);
    let uniform = stream(SamplerMode::Uniform);
    let pass = accmer == uniform && accmer.len() == 10_000 * b * 4;
    report(6, pass, &format!("{} index bytes per mode, identical: {}", accmer.len(), accmer == uniform));
    assert!(pass);
}

#[test]
fn c07_locality_proxy() {
    let start = Instant::now();
    let w = Workload {
        capacity: 10_000,
        batch_size: 128,
        alpha: 0.5,
        weight_decay: 1.0,
        calls: 5000,
        seed: 7,
    };
    let cache = CacheConfig {
        capacity_bytes: 1 << 20,
        line_bytes: 64,
        associativity: 8,
        transition_bytes: 256,
    };
    let runs = vec![
        locality::run_workload(&w, SamplerMode::Uniform).unwrap(),
        locality::run_workload(&w, SamplerMode::Accmer).unwrap(),
    ];
    let report_ = locality::compare_modes(&cache, &runs).unwrap();
    let u = report_.row("uniform").unwrap();
    let a = report_.row("accmer").unwrap();
    let reduction = a.miss_rate_reduction;
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let json = serde_json::json!({ "workload": w, "report": report_, "accmer_miss_rate_reduction": reduction });
    std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let pass = a.miss_rate < u.miss_rate && reduction >= 0.10 && start.elapsed().as_secs_f64() < 120.0;
    report(
        7,
        pass,
        &format!(
            "miss rate uniform {:.4} accmer {:.4}, reduction {:.1}% (report {})",
            u.miss_rate,
            a.miss_rate,
            100.0 * reduction,
            path.display()
        ),
    );
    assert!(pass);
}

#[test]
fn c08_distinct_slot_bound() {
    let (d, b, alpha) = (2000, 40, 0.5);
    let window = d / b;
    let bound = (alpha * b as f64).floor() as usize + window * (b - (alpha * b as f64).floor() as usize);
    let w = Workload {
        capacity: d,
        batch_size: b,
        alpha,
        weight_decay: 0.9,
        calls: (100 * window) as u64,
        seed: 8,
    };
    let run = locality::run_workload(&w, SamplerMode::Accmer).unwrap();
    let mut counts = Vec::new();
    for win in 0..100u64 {
        let lo = win * window as u64;
        let hi = lo + window as u64;
        let set: HashSet<u32> = run
            .trace
            .records
            .iter()
            .filter(|r| r.batch >= lo && r.batch < hi)
            .map(|r| r.slot)
            .collect();
        counts.push(set.len());
    }
    let max = *counts.iter().max().unwrap();
    let pass = counts.len() == 100 && max <= bound;
    report(8, pass, &format!("100 windows, max distinct {max} <= bound {bound}"));
    assert!(pass);
}

fn desk_pair() -> &'static (RunArtifacts<f64>, RunArtifacts<f64>, f64) {
    use std::sync::OnceLock;
    static RUNS: OnceLock<(RunArtifacts<f64>, RunArtifacts<f64>, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let acc = train_run::<f64>(&desk_config(SamplerMode::Accmer)).unwrap();
        let pri = train_run::<f64>(&desk_config(SamplerMode::Prioritized)).unwrap();
        (acc, pri, start.elapsed().as_secs_f64())
    })
}

#[test]
fn c09_learning_smoke() {
    let (acc, pri, secs) = desk_pair();
    let curve = |r: &RunArtifacts<f64>| r.curves.iter().map(|c| c.eval_mean_reward).collect::<Vec<_>>();
    let (ca, cp) = (curve(acc), curve(pri));
    let (pa, pp) = (mann_kendall_increasing(&ca), mann_kendall_increasing(&cp));
    let (fa, fp) = (final_reward(&ca), final_reward(&cp));
    let pass = pa < 0.05 && pp < 0.05 && fa >= 2.0 && fp >= 2.0 && fa >= 0.85 * fp && *secs <= 1800.0;
    report(
        9,
        pass,
        &format!(
            "accmer: MK p={pa:.2e} final {fa:.3}; prioritized: MK p={pp:.2e} final {fp:.3}; ratio {:.3}; {secs:.0}s",
            fa / fp
        ),
    );
    assert!(pass);
}

#[test]
fn c10_sampling_wall_clock() {
    let (acc, pri, _) = desk_pair();
    let (a, p) = (acc.sampling.mean_ns(), pri.sampling.mean_ns());
    let pass = a <= p;
    report(
        10,
        pass,
        &format!("mean sampling time per batch: accmer {:.1} us, prioritized {:.1} us ({:.1}x)", a / 1e3, p / 1e3, p / a),
    );
    assert!(pass);
}

/// Reference LRU: one recency-ordered list per set.
fn brute_lru(lines: &[u64], n_sets: u64, ways: usize) -> (u64, u64) {
    let mut sets: Vec<VecDeque<u64>> = vec![VecDeque::new(); n_sets as usize];
    let (mut hits, mut misses) = (0, 0);
    for &l in lines {
        let set = &mut sets[(l % n_sets) as usize];
        if let Some(pos) = set.iter().position(|&x| x == l) {
            set.remove(pos);
            set.push_front(l);
            hits += 1;
        } else {
            if set.len() == ways {
                set.pop_back();
            }
            set.push_front(l);
            misses += 1;
        }
    }
    (hits, misses)
}

#[test]
fn c11_cache_simulator_oracle() {
    let mut rng = RngStreams::new(11).stream("traces");
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let line = 1u64 << rng.gen_range(4..8);
        let ways = rng.gen_range(1..5u64);
        let sets = rng.gen_range(1..5u64);
        let cfg = CacheConfig {
            capacity_bytes: line * ways * sets,
            line_bytes: line,
            associativity: ways,
            transition_bytes: line,
        };
        let len = rng.gen_range(0..40);
        let universe = rng.gen_range(1..24u64);
        let lines: Vec<u64> = (0..len).map(|_| rng.gen_range(0..universe)).collect();
        let mut sim = CacheSim::new(&cfg).unwrap();
        for &l in &lines {
            sim.access(l);
        }
        let (h, m) = brute_lru(&lines, sets, ways as usize);
        if (sim.stats.hits, sim.stats.misses) != (h, m) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(11, pass, &format!("100000 random traces, {mismatches} mismatches against reference LRU"));
    assert!(pass);
}
