//! Trace-driven cache model for replay sampling.
//!
//! Slots live in one contiguous array, slot `i` occupying bytes
//! `[i·tb, (i+1)·tb)` for transition size `tb`. A sampler access trace is
//! expanded to the cache lines it touches and replayed through a
//! set-associative LRU cache (`set = line mod n_sets`). This is a single
//! simulated level, not a model of any particular processor.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::SamplerMode;
use crate::replay::WeightTable;
use crate::rng::{RngStreams, SAMPLER_STREAM, WORKLOAD_STREAM};
use crate::sampler::{DistinctTracker, Sampler, SamplerError};
use crate::trace::AccessTrace;

#[derive(Debug, Error, PartialEq)]
pub enum LocalityError {
    #[error("invalid cache config: {0}")]
    Config(String),
    #[error("traces have different lengths: {0:?}")]
    MismatchedTraces(Vec<usize>),
    #[error("no traces to compare")]
    Empty,
    #[error("workload: {0}")]
    Workload(String),
}

impl From<SamplerError> for LocalityError {
    fn from(e: SamplerError) -> Self {
        LocalityError::Workload(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    pub line_bytes: u64,
    pub associativity: u64,
    /// Serialized size of one transition slot.
    pub transition_bytes: u64,
}

impl Default for CacheConfig {
    /// 1 MiB, 64-byte lines, 8 ways, 256-byte slots.
    fn default() -> Self {
        CacheConfig {
            capacity_bytes: 1 << 20,
            line_bytes: 64,
            associativity: 8,
            transition_bytes: 256,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), LocalityError> {
        let bad = |m: String| Err(LocalityError::Config(m));
        if self.capacity_bytes == 0 || self.line_bytes == 0 || self.associativity == 0 || self.transition_bytes == 0 {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if !self.line_bytes.is_power_of_two() {
            return bad(format!("line_bytes {} is not a power of two", self.line_bytes));
        }
        if self.capacity_bytes % (self.line_bytes * self.associativity) != 0 {
            return bad(format!(
                "capacity {} is not a multiple of line_bytes·associativity = {}",
                self.capacity_bytes,
                self.line_bytes * self.associativity
            ));
        }
        Ok(())
    }

    pub fn n_sets(&self) -> u64 {
        self.capacity_bytes / (self.line_bytes * self.associativity)
    }

    /// Lines covered by one slot, `⌈tb / line⌉` when slot-aligned.
    pub fn lines_of(&self, slot: u64) -> std::ops::Range<u64> {
        let start = slot * self.transition_bytes;
        let end = start + self.transition_bytes;
        start / self.line_bytes..end.div_ceil(self.line_bytes)
    }
}

/// Expand every slot access to its line addresses, in order.
pub fn slots_to_lines(slots: impl IntoIterator<Item = usize>, config: &CacheConfig) -> Vec<u64> {
    let mut out = Vec::new();
    for s in slots {
        out.extend(config.lines_of(s as u64));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn miss_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.misses as f64 / total as f64
        }
    }
}

/// Set-associative LRU cache with per-way timestamps.
#[derive(Debug, Clone)]
pub struct CacheSim {
    n_sets: u64,
    ways: usize,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    clock: u64,
    pub stats: CacheStats,
}

impl CacheSim {
    pub fn new(config: &CacheConfig) -> Result<Self, LocalityError> {
        config.validate()?;
        let n = (config.n_sets() * config.associativity) as usize;
        Ok(CacheSim {
            n_sets: config.n_sets(),
            ways: config.associativity as usize,
            tags: vec![0; n],
            // stamp 0 marks an empty way
            stamps: vec![0; n],
            clock: 0,
            stats: CacheStats::default(),
        })
    }

    /// Access one line; returns whether it hit.
    pub fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        let set = (line % self.n_sets) as usize;
        let base = set * self.ways;
        let tags = &mut self.tags[base..base + self.ways];
        let stamps = &mut self.stamps[base..base + self.ways];
        let mut victim = 0;
        for w in 0..self.ways {
            if stamps[w] != 0 && tags[w] == line {
                stamps[w] = self.clock;
                self.stats.hits += 1;
                return true;
            }
            if stamps[w] < stamps[victim] {
                victim = w;
            }
        }
        tags[victim] = line;
        stamps[victim] = self.clock;
        self.stats.misses += 1;
        false
    }
}

pub fn simulate_cache(lines: &[u64], config: &CacheConfig) -> Result<CacheStats, LocalityError> {
    let mut sim = CacheSim::new(config)?;
    for &l in lines {
        sim.access(l);
    }
    Ok(sim.stats)
}

/// Simulate a trace without materializing its line list.
pub fn simulate_trace(trace: &AccessTrace, config: &CacheConfig) -> Result<CacheStats, LocalityError> {
    let mut sim = CacheSim::new(config)?;
    for s in trace.slots() {
        for l in config.lines_of(s as u64) {
            sim.access(l);
        }
    }
    Ok(sim.stats)
}

/// Mean distinct slots per reuse window (`⌊d/b⌋` batches), counting only
/// complete windows. `None` when the trace holds no complete window.
pub fn distinct_slots_per_window(trace: &AccessTrace) -> Option<f64> {
    if trace.batch_size == 0 || trace.capacity == 0 {
        return None;
    }
    let window = (trace.capacity / trace.batch_size).max(1) as usize;
    let mut tracker = DistinctTracker::new(trace.capacity as usize, window);
    let mut i = 0;
    let recs = &trace.records;
    while i < recs.len() {
        let b = recs[i].batch;
        let mut j = i;
        while j < recs.len() && recs[j].batch == b {
            j += 1;
        }
        tracker.record(recs[i..j].iter().map(|r| r.slot as usize));
        i = j;
    }
    let done = tracker.completed();
    (!done.is_empty()).then(|| done.iter().sum::<usize>() as f64 / done.len() as f64)
}

/// Synthetic sampler workload: a full buffer whose weights are redrawn for
/// every sampled slot, with one new insertion per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Workload {
    pub capacity: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub weight_decay: f64,
    pub calls: u64,
    pub seed: u64,
}

/// One sampler run over a [`Workload`].
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub label: String,
    pub trace: AccessTrace,
    pub sample_wall_ms: f64,
}

/// Drive `mode` through `w`. Weight redraws come from the workload stream and
/// the sampler uses its own stream, so modes see identical weight sequences
/// per call.
pub fn run_workload(w: &Workload, mode: SamplerMode) -> Result<ModeRun, LocalityError> {
    if w.batch_size == 0 || w.batch_size > w.capacity {
        return Err(LocalityError::Workload(format!(
            "need 0 < b <= d, got b={} d={}",
            w.batch_size, w.capacity
        )));
    }
    if !(0.0..=1.0).contains(&w.alpha) {
        return Err(LocalityError::Workload(format!("α out of [0,1]: {}", w.alpha)));
    }
    if !(w.weight_decay > 0.0 && w.weight_decay <= 1.0) {
        return Err(LocalityError::Workload(format!("weight_decay out of (0,1]: {}", w.weight_decay)));
    }
    let streams = RngStreams::new(w.seed);
    let mut wrng = streams.stream(WORKLOAD_STREAM);
    let mut srng = streams.stream(SAMPLER_STREAM);
    let mut table = WeightTable::<f64>::new(w.capacity, 1.0);
    for i in 0..w.capacity {
        table.on_insert(i);
    }
    let all: Vec<usize> = (0..w.capacity).collect();
    let init: Vec<f64> = (0..w.capacity).map(|_| wrng.gen::<f64>()).collect();
    table
        .update_weights(&all, &init)
        .map_err(|e| LocalityError::Workload(e.to_string()))?;

    let mut sampler = Sampler::new(mode, w.batch_size, w.alpha, w.capacity);
    let mut trace = AccessTrace::new(mode, w.capacity, w.batch_size);
    let mut fresh = vec![0.0; w.batch_size];
    let mut elapsed = 0u128;
    for call in 0..w.calls {
        table.on_insert((call % w.capacity as u64) as usize);
        let start = Instant::now();
        let batch = sampler.next_batch(&mut srng, &table)?;
        elapsed += start.elapsed().as_nanos();
        trace.record(call, &batch);
        for x in fresh.iter_mut() {
            *x = wrng.gen::<f64>();
        }
        table
            .update_weights(&batch.to_vec(), &fresh)
            .map_err(|e| LocalityError::Workload(e.to_string()))?;
        table.apply_decay(w.weight_decay);
    }
    Ok(ModeRun {
        label: mode.as_str().to_string(),
        trace,
        sample_wall_ms: elapsed as f64 / 1e6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRow {
    pub mode: String,
    pub misses: u64,
    pub hits: u64,
    pub miss_rate: f64,
    pub distinct_slots_mean: Option<f64>,
    pub sample_wall_ms: f64,
    /// `(baseline − this) / baseline` miss rate, baseline being the uniform
    /// row (or the first row when no uniform trace is given).
    pub miss_rate_reduction: f64,
    pub sample_wall_delta_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityReport {
    /// Always "simulated-lru": this is a model, not a hardware counter.
    pub level: &'static str,
    pub cache: CacheConfig,
    pub baseline: String,
    pub rows: Vec<ModeRow>,
}

impl LocalityReport {
    pub fn row(&self, label: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.mode == label)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>12} {:>12} {:>10} {:>14} {:>12} {:>12}\n",
            "mode", "misses", "hits", "miss_rate", "distinct/win", "sample_ms", "reduction"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>12} {:>12} {:>10.4} {:>14} {:>12.3} {:>11.1}%\n",
                r.mode,
                r.misses,
                r.hits,
                r.miss_rate,
                r.distinct_slots_mean.map_or("-".to_string(), |d| format!("{d:.1}")),
                r.sample_wall_ms,
                100.0 * r.miss_rate_reduction
            ));
        }
        s
    }
}

/// Simulate every run against one cache and report deltas vs the baseline.
pub fn compare_modes(config: &CacheConfig, runs: &[ModeRun]) -> Result<LocalityReport, LocalityError> {
    config.validate()?;
    if runs.is_empty() {
        return Err(LocalityError::Empty);
    }
    let lens: Vec<usize> = runs.iter().map(|r| r.trace.records.len()).collect();
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(LocalityError::MismatchedTraces(lens));
    }
    let stats = runs
        .iter()
        .map(|r| simulate_trace(&r.trace, config))
        .collect::<Result<Vec<_>, _>>()?;
    let base = runs
        .iter()
        .position(|r| r.trace.mode == SamplerMode::Uniform && r.label == SamplerMode::Uniform.as_str())
        .unwrap_or(0);
    let base_rate = stats[base].miss_rate();
    let base_ms = runs[base].sample_wall_ms;
    let rows = runs
        .iter()
        .zip(&stats)
        .map(|(r, s)| ModeRow {
            mode: r.label.clone(),
            misses: s.misses,
            hits: s.hits,
            miss_rate: s.miss_rate(),
            distinct_slots_mean: distinct_slots_per_window(&r.trace),
            sample_wall_ms: r.sample_wall_ms,
            miss_rate_reduction: if base_rate > 0.0 {
                (base_rate - s.miss_rate()) / base_rate
            } else {
                0.0
            },
            sample_wall_delta_ms: r.sample_wall_ms - base_ms,
        })
        .collect();
    Ok(LocalityReport {
        level: "simulated-lru",
        cache: *config,
        baseline: runs[base].label.clone(),
        rows,
    })
}

/// Run uniform, prioritized and accmer on one workload and compare them.
pub fn bench_modes(w: &Workload, config: &CacheConfig) -> Result<LocalityReport, LocalityError> {
    let runs = SamplerMode::ALL
        .iter()
        .map(|&m| run_workload(w, m))
        .collect::<Result<Vec<_>, _>>()?;
    compare_modes(config, &runs)
}
