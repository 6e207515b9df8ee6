//! Mini-batch construction.
//!
//! In `accmer` mode a batch is a cached reuse set `S⁻` of the `⌊α·b⌋`
//! highest-weight slots, re-ranked once every `⌊d/b⌋` calls, plus a fresh
//! uniform draw `S⁺` from the remaining occupied slots. `uniform` and
//! `prioritized` modes are reference samplers: the former is the `α = 0`
//! special case (and consumes the random stream identically), the latter
//! re-ranks the whole table on every call.

use rand::Rng;
use thiserror::Error;

use crate::config::{reuse_count, RunConfig, SamplerMode};
use crate::replay::{ReplayError, WeightTable};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("buffer holds {fill} transitions, batch needs {needed}")]
    Underfilled { fill: usize, needed: usize },
    #[error("complement has {available} slots, asked for {count}")]
    ComplementTooSmall { available: usize, count: usize },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleBatch {
    /// `S⁻`: ranked slots (the cached reuse set in accmer mode).
    pub reuse_indices: Vec<usize>,
    /// `S⁺`: uniformly drawn slots.
    pub fresh_indices: Vec<usize>,
    /// Position of this batch inside its reuse window, `0..⌊d/b⌋`.
    pub step_in_window: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.reuse_indices.len() + self.fresh_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `S⁻` followed by `S⁺`.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.reuse_indices.iter().chain(&self.fresh_indices).copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.indices().collect()
    }
}

/// Rank the table and return the top `⌊α·b⌋` slots.
pub fn refresh_reuse_set<T: Scalar>(table: &WeightTable<T>, alpha: f64, batch: usize) -> Result<Vec<usize>, SamplerError> {
    let fill = table.occupied();
    if fill < batch {
        return Err(SamplerError::Underfilled { fill, needed: batch });
    }
    Ok(table.top_k(reuse_count(alpha, batch))?)
}

/// Draw `count` distinct slots uniformly without replacement from
/// `0..fill` minus `exclude`. `exclude` must hold distinct occupied slots.
pub fn sample_complement<R: Rng + ?Sized>(
    rng: &mut R,
    fill: usize,
    exclude: &[usize],
    count: usize,
) -> Result<Vec<usize>, SamplerError> {
    let mut out = Vec::with_capacity(count);
    let mut sorted = exclude.to_vec();
    sample_complement_into(rng, fill, &mut sorted, count, &mut out)?;
    Ok(out)
}

// Positions in the complement are mapped back to slots by skipping over the
// sorted excluded slots, so every complement slot is equally likely.
fn sample_complement_into<R: Rng + ?Sized>(
    rng: &mut R,
    fill: usize,
    exclude_sorted: &mut Vec<usize>,
    count: usize,
    out: &mut Vec<usize>,
) -> Result<(), SamplerError> {
    out.clear();
    exclude_sorted.sort_unstable();
    let available = fill.saturating_sub(exclude_sorted.len());
    if count > available {
        return Err(SamplerError::ComplementTooSmall { available, count });
    }
    if count == 0 {
        return Ok(());
    }
    for pos in rand::seq::index::sample(rng, available, count).iter() {
        let mut slot = pos;
        for &e in exclude_sorted.iter() {
            if e <= slot {
                slot += 1;
            } else {
                break;
            }
        }
        out.push(slot);
    }
    Ok(())
}

/// Stateful batch builder owned by the training thread.
#[derive(Debug, Clone)]
pub struct Sampler {
    mode: SamplerMode,
    batch_size: usize,
    reuse_count: usize,
    window: usize,
    step_in_window: usize,
    cached: Vec<usize>,
    sorted: Vec<usize>,
    scratch: Vec<u32>,
}

impl Sampler {
    /// `capacity` is the buffer size `d`; the reuse window is `⌊d/b⌋` calls.
    pub fn new(mode: SamplerMode, batch_size: usize, alpha: f64, capacity: usize) -> Self {
        assert!(batch_size > 0 && batch_size <= capacity, "need 0 < b <= d");
        Sampler {
            mode,
            batch_size,
            reuse_count: reuse_count(alpha, batch_size),
            window: (capacity / batch_size).max(1),
            step_in_window: 0,
            cached: Vec::new(),
            sorted: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        Self::new(cfg.sampler_mode, cfg.batch_size, cfg.reuse_ratio, cfg.buffer_capacity)
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `|S⁻|` in accmer mode.
    pub fn reuse_count(&self) -> usize {
        self.reuse_count
    }

    /// Calls per reuse window, `⌊d/b⌋`.
    pub fn window(&self) -> usize {
        self.window
    }

    /// The cached reuse set (accmer mode), in rank order.
    pub fn cached_reuse_set(&self) -> &[usize] {
        &self.cached
    }

    pub fn next_batch<T: Scalar, R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        table: &WeightTable<T>,
    ) -> Result<SampleBatch, SamplerError> {
        let fill = table.occupied();
        if fill < self.batch_size {
            return Err(SamplerError::Underfilled {
                fill,
                needed: self.batch_size,
            });
        }
        let step = self.step_in_window;
        let batch = match self.mode {
            SamplerMode::Uniform => {
                self.sorted.clear();
                let mut fresh = Vec::with_capacity(self.batch_size);
                sample_complement_into(rng, fill, &mut self.sorted, self.batch_size, &mut fresh)?;
                SampleBatch {
                    reuse_indices: Vec::new(),
                    fresh_indices: fresh,
                    step_in_window: step,
                }
            }
            SamplerMode::Prioritized => {
                let mut ranked = Vec::with_capacity(self.batch_size);
                table.top_k_into(self.batch_size, &mut self.scratch, &mut ranked)?;
                SampleBatch {
                    reuse_indices: ranked,
                    fresh_indices: Vec::new(),
                    step_in_window: step,
                }
            }
            SamplerMode::Accmer => {
                if step == 0 {
                    table.top_k_into(self.reuse_count, &mut self.scratch, &mut self.cached)?;
                }
                self.sorted.clear();
                self.sorted.extend_from_slice(&self.cached);
                let mut fresh = Vec::with_capacity(self.batch_size - self.reuse_count);
                sample_complement_into(
                    rng,
                    fill,
                    &mut self.sorted,
                    self.batch_size - self.reuse_count,
                    &mut fresh,
                )?;
                SampleBatch {
                    reuse_indices: self.cached.clone(),
                    fresh_indices: fresh,
                    step_in_window: step,
                }
            }
        };
        self.step_in_window = (step + 1) % self.window;
        Ok(batch)
    }
}

/// Counts distinct slots touched per reuse window.
#[derive(Debug, Clone)]
pub struct DistinctTracker {
    window: usize,
    calls: usize,
    stamp: Vec<u32>,
    epoch: u32,
    current: usize,
    completed: Vec<usize>,
}

impl DistinctTracker {
    pub fn new(capacity: usize, window: usize) -> Self {
        DistinctTracker {
            window: window.max(1),
            calls: 0,
            stamp: vec![0; capacity],
            epoch: 1,
            current: 0,
            completed: Vec::new(),
        }
    }

    pub fn record(&mut self, slots: impl IntoIterator<Item = usize>) {
        for s in slots {
            if self.stamp[s] != self.epoch {
                self.stamp[s] = self.epoch;
                self.current += 1;
            }
        }
        self.calls += 1;
        if self.calls % self.window == 0 {
            self.completed.push(self.current);
            self.current = 0;
            self.epoch += 1;
        }
    }

    /// Distinct-slot counts of every completed window, in order.
    pub fn completed(&self) -> &[usize] {
        &self.completed
    }

    /// Drain completed windows (used for per-interval reporting).
    pub fn take_completed(&mut self) -> Vec<usize> {
        std::mem::take(&mut self.completed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;
    use std::collections::HashSet;

    fn full_table(weights: &[f64]) -> WeightTable<f64> {
        let mut t = WeightTable::new(weights.len(), 1.0);
        for i in 0..weights.len() {
            t.on_insert(i);
        }
        let idx: Vec<usize> = (0..weights.len()).collect();
        t.update_weights(&idx, weights).unwrap();
        t
    }

    fn ramp(d: usize) -> WeightTable<f64> {
        full_table(&(0..d).map(|i| ((i * 7919) % d) as f64 / d as f64).collect::<Vec<_>>())
    }

    #[test]
    fn reuse_set_sizes() {
        let t = ramp(16);
        assert_eq!(refresh_reuse_set(&t, 0.5, 6).unwrap().len(), 3);
        assert!(refresh_reuse_set(&t, 0.0, 6).unwrap().is_empty());
        let all = refresh_reuse_set(&t, 1.0, 6).unwrap();
        assert_eq!(all, t.top_k(6).unwrap());
        let s = Sampler::new(SamplerMode::Accmer, 6, 0.5, 16);
        assert_eq!((s.reuse_count(), s.window()), (3, 2));
    }

    #[test]
    fn underfilled() {
        let mut t = WeightTable::new(16, 1.0);
        for i in 0..5 {
            t.on_insert(i);
        }
        assert!(matches!(
            refresh_reuse_set(&t, 0.5, 6),
            Err(SamplerError::Underfilled { fill: 5, needed: 6 })
        ));
        let mut s = Sampler::new(SamplerMode::Accmer, 6, 0.5, 16);
        let mut rng = RngStreams::new(0).stream("sampler");
        assert!(s.next_batch(&mut rng, &t).is_err());
    }

    #[test]
    fn complement_excludes_reuse_set() {
        let mut rng = RngStreams::new(3).stream("sampler");
        for _ in 0..200 {
            let fresh = sample_complement(&mut rng, 16, &[4, 9, 15], 3).unwrap();
            assert_eq!(fresh.len(), 3);
            let set: HashSet<_> = fresh.iter().copied().collect();
            assert_eq!(set.len(), 3);
            assert!(fresh.iter().all(|s| *s < 16 && ![4, 9, 15].contains(s)));
        }
        assert!(sample_complement(&mut rng, 16, &[1], 0).unwrap().is_empty());
        assert!(matches!(
            sample_complement(&mut rng, 4, &[0, 1], 3),
            Err(SamplerError::ComplementTooSmall { available: 2, count: 3 })
        ));
        // exhaustive: complement of size == count returns everything
        let mut all = sample_complement(&mut rng, 6, &[2], 5).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn window_reuse_and_refresh() {
        let mut t = ramp(16);
        let mut s = Sampler::new(SamplerMode::Accmer, 6, 0.5, 16);
        let mut rng = RngStreams::new(11).stream("sampler");
        let b1 = s.next_batch(&mut rng, &t).unwrap();
        let b2 = s.next_batch(&mut rng, &t).unwrap();
        assert_eq!(b1.reuse_indices, b2.reuse_indices);
        assert_eq!((b1.step_in_window, b2.step_in_window), (0, 1));
        // invert the weights: the next refresh must pick a different set
        let inv: Vec<f64> = t.weights().iter().map(|w| 1.0 - w).collect();
        let idx: Vec<usize> = (0..16).collect();
        t.update_weights(&idx, &inv).unwrap();
        let b3 = s.next_batch(&mut rng, &t).unwrap();
        assert_eq!(b3.reuse_indices, t.top_k(3).unwrap());
        assert_ne!(b3.reuse_indices, b1.reuse_indices);
        assert_eq!(b3.step_in_window, 0);
    }

    #[test]
    fn uniform_exhaustive_when_d_equals_b() {
        let t = ramp(8);
        let mut s = Sampler::new(SamplerMode::Uniform, 8, 0.5, 8);
        let mut rng = RngStreams::new(2).stream("sampler");
        let mut all = s.next_batch(&mut rng, &t).unwrap().to_vec();
        all.sort();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn prioritized_reranks_every_call() {
        let mut t = ramp(32);
        let mut s = Sampler::new(SamplerMode::Prioritized, 4, 0.5, 32);
        let mut rng = RngStreams::new(2).stream("sampler");
        let b1 = s.next_batch(&mut rng, &t).unwrap();
        assert_eq!(b1.reuse_indices, t.top_k(4).unwrap());
        assert!(b1.fresh_indices.is_empty());
        t.update_weights(&b1.reuse_indices, &[0.0; 4]).unwrap();
        let b2 = s.next_batch(&mut rng, &t).unwrap();
        assert_eq!(b2.reuse_indices, t.top_k(4).unwrap());
        assert!(b1.reuse_indices.iter().all(|i| !b2.reuse_indices.contains(i)));
    }

    #[test]
    fn tracker_counts_per_window() {
        let mut tr = DistinctTracker::new(10, 2);
        tr.record([1, 2, 3]);
        tr.record([3, 4]);
        tr.record([1]);
        tr.record([1]);
        assert_eq!(tr.completed(), &[4, 1]);
    }
}
