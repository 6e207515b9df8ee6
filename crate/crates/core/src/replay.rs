//! Fixed-capacity ring store of transitions and the co-indexed weight table.
//!
//! Transitions live in dense per-field arrays indexed by slot, and the
//! weight table is a flat array with the same indexing. Slots are filled in
//! order `0, 1, …, d-1` and then overwritten oldest-first, so the occupied
//! slots are always the prefix `0..len()`.

use std::cmp::Ordering;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("slot {index} is not occupied (fill count {occupied})")]
    IndexOutOfRange { index: usize, occupied: usize },
    #[error("weight for slot {index} must be finite and non-negative, got {weight}")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("{indices} indices but {weights} weights")]
    LengthMismatch { indices: usize, weights: usize },
    #[error("top_k asked for {k} slots but only {occupied} are occupied")]
    NotEnoughSlots { k: usize, occupied: usize },
    #[error("transition shape mismatch: {0}")]
    Shape(String),
    #[error("corrupt replay checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One environment step as stored in the buffer.
///
/// Observations are the concatenation of every agent's window; states are the
/// compact global feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<u8>,
    pub obs: Vec<u8>,
    pub actions: Vec<u8>,
    pub reward: T,
    pub next_state: Vec<u8>,
    pub next_obs: Vec<u8>,
    pub done: bool,
    pub step: u64,
}

/// Shape of every transition in a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionShape {
    pub n_agents: usize,
    pub obs_len: usize,
    pub state_len: usize,
}

impl TransitionShape {
    /// Serialized bytes of one slot with scalar width `scalar_bytes`.
    pub fn slot_bytes(&self, scalar_bytes: usize) -> usize {
        2 * self.state_len + 2 * self.n_agents * self.obs_len + self.n_agents + scalar_bytes + 1 + 8
    }
}

/// Ring buffer of transitions with capacity `d`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    shape: TransitionShape,
    capacity: usize,
    cursor: usize,
    fill: usize,
    states: Vec<u8>,
    next_states: Vec<u8>,
    obs: Vec<u8>,
    next_obs: Vec<u8>,
    actions: Vec<u8>,
    rewards: Vec<T>,
    dones: Vec<bool>,
    steps: Vec<u64>,
}

/// Borrowed view of one occupied slot.
#[derive(Debug, Clone, Copy)]
pub struct TransitionRef<'a, T> {
    pub state: &'a [u8],
    pub obs: &'a [u8],
    pub actions: &'a [u8],
    pub reward: T,
    pub next_state: &'a [u8],
    pub next_obs: &'a [u8],
    pub done: bool,
    pub step: u64,
}

impl<'a, T: Scalar> TransitionRef<'a, T> {
    pub fn agent_obs(&self, agent: usize, obs_len: usize) -> &'a [u8] {
        &self.obs[agent * obs_len..(agent + 1) * obs_len]
    }

    pub fn agent_next_obs(&self, agent: usize, obs_len: usize) -> &'a [u8] {
        &self.next_obs[agent * obs_len..(agent + 1) * obs_len]
    }

    pub fn to_owned(&self) -> Transition<T> {
        Transition {
            state: self.state.to_vec(),
            obs: self.obs.to_vec(),
            actions: self.actions.to_vec(),
            reward: self.reward,
            next_state: self.next_state.to_vec(),
            next_obs: self.next_obs.to_vec(),
            done: self.done,
            step: self.step,
        }
    }
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, shape: TransitionShape) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        let s = shape.state_len;
        let o = shape.n_agents * shape.obs_len;
        ReplayBuffer {
            shape,
            capacity,
            cursor: 0,
            fill: 0,
            states: vec![0; capacity * s],
            next_states: vec![0; capacity * s],
            obs: vec![0; capacity * o],
            next_obs: vec![0; capacity * o],
            actions: vec![0; capacity * shape.n_agents],
            rewards: vec![T::zero(); capacity],
            dones: vec![false; capacity],
            steps: vec![0; capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    pub fn write_cursor(&self) -> usize {
        self.cursor
    }

    pub fn shape(&self) -> TransitionShape {
        self.shape
    }

    fn check(&self, t: &Transition<T>) -> Result<(), ReplayError> {
        let sh = self.shape;
        let o = sh.n_agents * sh.obs_len;
        let checks = [
            ("state", t.state.len(), sh.state_len),
            ("next_state", t.next_state.len(), sh.state_len),
            ("obs", t.obs.len(), o),
            ("next_obs", t.next_obs.len(), o),
            ("actions", t.actions.len(), sh.n_agents),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(ReplayError::Shape(format!("{name} has length {got}, expected {want}")));
            }
        }
        if !t.reward.is_finite() {
            return Err(ReplayError::Shape("reward is not finite".into()));
        }
        Ok(())
    }

    /// Write `t` at the cursor and advance it. Returns the slot written.
    pub fn insert(&mut self, t: &Transition<T>) -> Result<usize, ReplayError> {
        self.check(t)?;
        let slot = self.cursor;
        let s = self.shape.state_len;
        let o = self.shape.n_agents * self.shape.obs_len;
        let n = self.shape.n_agents;
        self.states[slot * s..(slot + 1) * s].copy_from_slice(&t.state);
        self.next_states[slot * s..(slot + 1) * s].copy_from_slice(&t.next_state);
        self.obs[slot * o..(slot + 1) * o].copy_from_slice(&t.obs);
        self.next_obs[slot * o..(slot + 1) * o].copy_from_slice(&t.next_obs);
        self.actions[slot * n..(slot + 1) * n].copy_from_slice(&t.actions);
        self.rewards[slot] = t.reward;
        self.dones[slot] = t.done;
        self.steps[slot] = t.step;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        Ok(slot)
    }

    pub fn get(&self, slot: usize) -> Option<TransitionRef<'_, T>> {
        if slot >= self.fill {
            return None;
        }
        let s = self.shape.state_len;
        let o = self.shape.n_agents * self.shape.obs_len;
        let n = self.shape.n_agents;
        Some(TransitionRef {
            state: &self.states[slot * s..(slot + 1) * s],
            obs: &self.obs[slot * o..(slot + 1) * o],
            actions: &self.actions[slot * n..(slot + 1) * n],
            reward: self.rewards[slot],
            next_state: &self.next_states[slot * s..(slot + 1) * s],
            next_obs: &self.next_obs[slot * o..(slot + 1) * o],
            done: self.dones[slot],
            step: self.steps[slot],
        })
    }
}

/// Per-slot prioritization weights, co-indexed with a [`ReplayBuffer`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable<T> {
    weights: Vec<T>,
    generation: Vec<u32>,
    occupied: usize,
    initial: T,
}

impl<T: Scalar> WeightTable<T> {
    /// Table of `capacity` slots, every weight equal to `initial`.
    pub fn new(capacity: usize, initial: T) -> Self {
        assert!(initial >= T::zero() && initial.is_finite());
        WeightTable {
            weights: vec![initial; capacity],
            generation: vec![0; capacity],
            occupied: 0,
            initial,
        }
    }

    pub fn capacity(&self) -> usize {
        self.weights.len()
    }

    pub fn occupied(&self) -> usize {
        self.occupied
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, slot: usize) -> T {
        self.weights[slot]
    }

    pub fn generation(&self, slot: usize) -> u32 {
        self.generation[slot]
    }

    /// Largest occupied weight, or the initial weight for an empty table.
    pub fn max_weight(&self) -> T {
        self.weights[..self.occupied]
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, w| Some(acc.map_or(w, |a| a.max(w))))
            .unwrap_or(self.initial)
    }

    /// Register a write into `slot`: the slot takes the current maximum weight
    /// and its generation advances.
    pub fn on_insert(&mut self, slot: usize) {
        let w = self.max_weight();
        self.weights[slot] = w;
        self.generation[slot] = self.generation[slot].wrapping_add(1);
        self.occupied = self.occupied.max(slot + 1);
    }

    pub fn update_weights(&mut self, indices: &[usize], new_weights: &[T]) -> Result<(), ReplayError> {
        if indices.len() != new_weights.len() {
            return Err(ReplayError::LengthMismatch {
                indices: indices.len(),
                weights: new_weights.len(),
            });
        }
        for (&i, &w) in indices.iter().zip(new_weights) {
            if i >= self.occupied {
                return Err(ReplayError::IndexOutOfRange {
                    index: i,
                    occupied: self.occupied,
                });
            }
            if !(w.is_finite() && w >= T::zero()) {
                return Err(ReplayError::InvalidWeight {
                    index: i,
                    weight: w.as_f64(),
                });
            }
        }
        for (&i, &w) in indices.iter().zip(new_weights) {
            self.weights[i] = w;
        }
        Ok(())
    }

    /// Multiply every occupied weight by `decay`.
    pub fn apply_decay(&mut self, decay: T) {
        if decay == T::one() {
            return;
        }
        for w in &mut self.weights[..self.occupied] {
            *w *= decay;
        }
    }

    /// The `k` occupied slots with the largest weights, descending, ties broken
    /// by lower slot index.
    pub fn top_k(&self, k: usize) -> Result<Vec<usize>, ReplayError> {
        let mut scratch = Vec::new();
        let mut out = Vec::with_capacity(k);
        self.top_k_into(k, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`top_k`](Self::top_k) for the hot path.
    pub fn top_k_into(&self, k: usize, scratch: &mut Vec<u32>, out: &mut Vec<usize>) -> Result<(), ReplayError> {
        if k > self.occupied {
            return Err(ReplayError::NotEnoughSlots {
                k,
                occupied: self.occupied,
            });
        }
        out.clear();
        if k == 0 {
            return Ok(());
        }
        scratch.clear();
        scratch.extend(0..self.occupied as u32);
        let w = &self.weights;
        let rank = |a: &u32, b: &u32| -> Ordering {
            w[*b as usize]
                .partial_cmp(&w[*a as usize])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, rank);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(rank);
        out.extend(head.iter().map(|&i| i as usize));
        Ok(())
    }
}

/// Store `t` in `buffer` and give its slot the table's current maximum weight.
pub fn push<T: Scalar>(
    buffer: &mut ReplayBuffer<T>,
    table: &mut WeightTable<T>,
    t: &Transition<T>,
) -> Result<usize, ReplayError> {
    let slot = buffer.insert(t)?;
    table.on_insert(slot);
    Ok(slot)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ACMRPLY\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint of a buffer and its weight table.
///
/// Layout (all integers little-endian):
///
/// ```text
/// magic      8 bytes  "ACMRPLY\0"
/// version    u32      1
/// scalar     u8       4 (f32) or 8 (f64), then 3 zero bytes
/// capacity   u64
/// fill       u64
/// cursor     u64
/// n_agents   u32
/// obs_len    u32
/// state_len  u32
/// fill × slot { state[state_len] next_state[state_len]
///               obs[n_agents·obs_len] next_obs[n_agents·obs_len]
///               actions[n_agents] reward:scalar done:u8 step:u64 }
/// initial    scalar
/// occupied   u64
/// capacity × { weight:scalar generation:u32 }
/// ```
pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    buffer: &ReplayBuffer<T>,
    table: &WeightTable<T>,
) -> Result<(), ReplayError> {
    let sh = buffer.shape;
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&[T::BYTES, 0, 0, 0]);
    b.extend_from_slice(&(buffer.capacity as u64).to_le_bytes());
    b.extend_from_slice(&(buffer.fill as u64).to_le_bytes());
    b.extend_from_slice(&(buffer.cursor as u64).to_le_bytes());
    for v in [sh.n_agents, sh.obs_len, sh.state_len] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for slot in 0..buffer.fill {
        let t = buffer.get(slot).expect("occupied");
        b.extend_from_slice(t.state);
        b.extend_from_slice(t.next_state);
        b.extend_from_slice(t.obs);
        b.extend_from_slice(t.next_obs);
        b.extend_from_slice(t.actions);
        t.reward.write_le(&mut b);
        b.push(t.done as u8);
        b.extend_from_slice(&t.step.to_le_bytes());
    }
    table.initial.write_le(&mut b);
    b.extend_from_slice(&(table.occupied as u64).to_le_bytes());
    for (w, g) in table.weights.iter().zip(&table.generation) {
        w.write_le(&mut b);
        b.extend_from_slice(&g.to_le_bytes());
    }
    out.write_all(&b)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ReplayError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.data.len())
            .ok_or_else(|| ReplayError::Checkpoint("truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ReplayError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ReplayError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<(ReplayBuffer<T>, WeightTable<T>), ReplayError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(ReplayError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ReplayError::Checkpoint(format!("unsupported version {version}")));
    }
    let width = c.take(4)?[0];
    if width != T::BYTES {
        return Err(ReplayError::Checkpoint(format!(
            "scalar width {width} does not match requested {}",
            T::BYTES
        )));
    }
    let capacity = c.u64()? as usize;
    let fill = c.u64()? as usize;
    let cursor = c.u64()? as usize;
    let shape = TransitionShape {
        n_agents: c.u32()? as usize,
        obs_len: c.u32()? as usize,
        state_len: c.u32()? as usize,
    };
    if capacity == 0 || fill > capacity || cursor >= capacity {
        return Err(ReplayError::Checkpoint("inconsistent header".into()));
    }
    let slot_bytes = shape.slot_bytes(width as usize);
    let needed = fill.saturating_mul(slot_bytes).saturating_add(capacity.saturating_mul(width as usize + 4));
    if needed > data.len() {
        return Err(ReplayError::Checkpoint("truncated".into()));
    }
    let mut buffer = ReplayBuffer::new(capacity, shape);
    let s = shape.state_len;
    let o = shape.n_agents * shape.obs_len;
    let n = shape.n_agents;
    let w = width as usize;
    for slot in 0..fill {
        buffer.states[slot * s..(slot + 1) * s].copy_from_slice(c.take(s)?);
        buffer.next_states[slot * s..(slot + 1) * s].copy_from_slice(c.take(s)?);
        buffer.obs[slot * o..(slot + 1) * o].copy_from_slice(c.take(o)?);
        buffer.next_obs[slot * o..(slot + 1) * o].copy_from_slice(c.take(o)?);
        buffer.actions[slot * n..(slot + 1) * n].copy_from_slice(c.take(n)?);
        buffer.rewards[slot] = T::read_le(c.take(w)?);
        buffer.dones[slot] = c.take(1)?[0] != 0;
        buffer.steps[slot] = c.u64()?;
    }
    buffer.fill = fill;
    buffer.cursor = cursor;
    let initial = T::read_le(c.take(w)?);
    let occupied = c.u64()? as usize;
    if occupied > capacity {
        return Err(ReplayError::Checkpoint("occupied exceeds capacity".into()));
    }
    let mut table = WeightTable::new(capacity, T::zero());
    table.initial = initial;
    table.occupied = occupied;
    for slot in 0..capacity {
        table.weights[slot] = T::read_le(c.take(w)?);
        table.generation[slot] = c.u32()?;
    }
    if c.pos != data.len() {
        return Err(ReplayError::Checkpoint("trailing bytes".into()));
    }
    Ok((buffer, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SHAPE: TransitionShape = TransitionShape {
        n_agents: 2,
        obs_len: 3,
        state_len: 2,
    };

    fn tr(tag: u8) -> Transition<f64> {
        Transition {
            state: vec![tag, tag],
            obs: vec![tag; 6],
            actions: vec![tag % 6, 0],
            reward: tag as f64,
            next_state: vec![tag + 1, tag],
            next_obs: vec![tag; 6],
            done: tag % 2 == 0,
            step: tag as u64,
        }
    }

    fn table_with(weights: &[f64]) -> WeightTable<f64> {
        let mut t = WeightTable::new(weights.len(), 1.0);
        for i in 0..weights.len() {
            t.on_insert(i);
        }
        let idx: Vec<usize> = (0..weights.len()).collect();
        t.update_weights(&idx, weights).unwrap();
        t
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(4, SHAPE);
        let mut table = WeightTable::new(4, 1.0);
        let slots: Vec<usize> = (1..=5).map(|k| push(&mut buf, &mut table, &tr(k)).unwrap()).collect();
        assert_eq!(slots, vec![0, 1, 2, 3, 0]);
        let tags: Vec<f64> = (0..4).map(|s| buf.get(s).unwrap().reward).collect();
        assert_eq!(tags, vec![5.0, 2.0, 3.0, 4.0]);
        assert_eq!(buf.len(), 4);
        assert_eq!(table.generation(0), 2);
    }

    #[test]
    fn first_push_and_saturation() {
        let mut buf = ReplayBuffer::new(3, SHAPE);
        let mut table = WeightTable::new(3, 1.0);
        assert_eq!(push(&mut buf, &mut table, &tr(1)).unwrap(), 0);
        assert_eq!(buf.len(), 1);
        assert!(buf.get(1).is_none());
        for k in 2..10 {
            push(&mut buf, &mut table, &tr(k)).unwrap();
        }
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn push_rejects_bad_shape() {
        let mut buf = ReplayBuffer::new(3, SHAPE);
        let mut table = WeightTable::new(3, 1.0);
        let mut t = tr(1);
        t.actions.push(0);
        assert!(matches!(push(&mut buf, &mut table, &t), Err(ReplayError::Shape(_))));
        assert_eq!(buf.len(), 0);
    }

    #[test]
    fn push_takes_current_max() {
        let mut buf = ReplayBuffer::new(4, SHAPE);
        let mut table = WeightTable::new(4, 1.0);
        push(&mut buf, &mut table, &tr(1)).unwrap();
        push(&mut buf, &mut table, &tr(2)).unwrap();
        table.update_weights(&[0, 1], &[3.0, 0.5]).unwrap();
        let s = push(&mut buf, &mut table, &tr(3)).unwrap();
        assert_eq!(table.weight(s), 3.0);
        assert_eq!(table.weight(1), 0.5);
    }

    #[test]
    fn update_named_slots_only() {
        let mut t = table_with(&[1.0; 4]);
        t.update_weights(&[2], &[0.7]).unwrap();
        assert_eq!(t.weights(), &[1.0, 1.0, 0.7, 1.0]);
        t.update_weights(&[], &[]).unwrap();
        assert_eq!(t.weights(), &[1.0, 1.0, 0.7, 1.0]);
        assert!(matches!(
            t.update_weights(&[1], &[-0.1]),
            Err(ReplayError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(t.update_weights(&[4], &[0.1]), Err(ReplayError::IndexOutOfRange { .. })));
        assert!(matches!(t.update_weights(&[1, 2], &[0.1]), Err(ReplayError::LengthMismatch { .. })));
    }

    #[test]
    fn unoccupied_slot_rejected() {
        let mut t = WeightTable::new(4, 1.0);
        t.on_insert(0);
        assert!(matches!(
            t.update_weights(&[1], &[0.5]),
            Err(ReplayError::IndexOutOfRange { index: 1, occupied: 1 })
        ));
    }

    #[test]
    fn decay_scales() {
        let mut t = table_with(&[1.0, 0.5]);
        t.apply_decay(1.0);
        assert_eq!(t.weights(), &[1.0, 0.5]);
        t.apply_decay(0.8);
        assert_eq!(t.weights(), &[0.8, 0.4]);
        let mut t = table_with(&[2.0]);
        for _ in 0..5 {
            t.apply_decay(0.5);
        }
        assert_eq!(t.weight(0), 2.0 * 0.5f64.powi(5));
    }

    #[test]
    fn top_k_examples() {
        let t = table_with(&[0.1, 0.9, 0.9, 0.2]);
        assert_eq!(t.top_k(2).unwrap(), vec![1, 2]);
        assert_eq!(t.top_k(0).unwrap(), Vec::<usize>::new());
        assert_eq!(t.top_k(4).unwrap(), vec![1, 2, 3, 0]);
        let u = table_with(&[0.3; 5]);
        assert_eq!(u.top_k(3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(t.top_k(5), Err(ReplayError::NotEnoughSlots { k: 5, occupied: 4 })));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut buf = ReplayBuffer::new(5, SHAPE);
        let mut table = WeightTable::new(5, 1.0);
        for k in 1..8 {
            push(&mut buf, &mut table, &tr(k)).unwrap();
        }
        table.update_weights(&[0, 3], &[0.25, 4.0]).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &buf, &table).unwrap();
        let (b2, t2): (ReplayBuffer<f64>, WeightTable<f64>) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(t2, table);
        assert_eq!(b2.len(), buf.len());
        assert_eq!(b2.write_cursor(), buf.write_cursor());
        for s in 0..5 {
            assert_eq!(b2.get(s).unwrap().to_owned(), buf.get(s).unwrap().to_owned());
        }
        assert!(read_checkpoint::<f64, _>(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint::<f32, _>(&bytes[..]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f64, _>(&bad[..]).is_err());
    }

    fn brute_top_k(w: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..w.len()).collect();
        // sort by (weight, -index) descending
        idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    proptest! {
        #[test]
        fn top_k_matches_sort(
            w in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5), Just(0.0)], 1..2000),
            kf in 0.0f64..=1.0,
        ) {
            let k = ((w.len() as f64) * kf) as usize;
            let t = table_with(&w);
            prop_assert_eq!(t.top_k(k).unwrap(), brute_top_k(&w, k));
        }

        #[test]
        fn decay_preserves_ranking(
            w in prop::collection::vec(0.0f64..10.0, 1..300),
            decay in 0.05f64..=1.0,
        ) {
            let mut t = table_with(&w);
            let k = w.len() / 2;
            let before = t.top_k(k).unwrap();
            t.apply_decay(decay);
            prop_assert_eq!(t.top_k(k).unwrap(), before);
        }

        #[test]
        fn push_never_lowers_others(
            w in prop::collection::vec(0.0f64..10.0, 2..50),
            extra in 1usize..20,
        ) {
            let d = w.len();
            let mut buf = ReplayBuffer::new(d, SHAPE);
            let mut table = WeightTable::new(d, 1.0);
            for k in 0..d { push(&mut buf, &mut table, &tr(k as u8)).unwrap(); }
            let idx: Vec<usize> = (0..d).collect();
            table.update_weights(&idx, &w).unwrap();
            for k in 0..extra {
                let before = table.weights().to_vec();
                let slot = push(&mut buf, &mut table, &tr(k as u8)).unwrap();
                for i in 0..d {
                    if i != slot { prop_assert!(table.weight(i) >= before[i]); }
                }
            }
        }
    }
}
