//! Value-decomposition Q-learner.
//!
//! Agents share one feedforward network (agent identity is appended to the
//! observation as a one-hot); a monotonic mixer combines the chosen-action
//! values into `Q_tot`. Training minimizes the weighted squared TD error
//! `Σ_i w_i (Q_tot,i − y_i)²` against one-step targets from target copies.

mod adam;
mod agent;
mod mixer;
pub mod train;

use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

pub use adam::Adam;
pub use agent::AgentNet;
pub use mixer::{Mixer, MixerCache};

use crate::config::{MixerKind, RunConfig};
use crate::env::{Observation, PredatorPrey, N_ACTIONS};
use crate::prioritization::{greedy_action, policy_prob};
use crate::replay::ReplayBuffer;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("corrupt parameter checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
    #[error(transparent)]
    Sampler(#[from] crate::sampler::SamplerError),
    #[error(transparent)]
    Prioritization(#[from] crate::prioritization::PrioritizationError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// Network sizes for one learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LearnerShape {
    pub n_agents: usize,
    pub obs_len: usize,
    pub state_len: usize,
    pub agent_hidden: usize,
    pub mixer_hidden: usize,
    pub mixer: MixerKind,
}

impl LearnerShape {
    pub fn for_task(task: &PredatorPrey, cfg: &RunConfig) -> Self {
        LearnerShape {
            n_agents: task.n_agents,
            obs_len: task.obs_len(),
            state_len: task.state_len(),
            agent_hidden: cfg.agent_hidden,
            mixer_hidden: cfg.mixer_hidden,
            mixer: cfg.mixer,
        }
    }

    /// Agent network input: observation followed by agent one-hot.
    pub fn agent_input(&self) -> usize {
        self.obs_len + self.n_agents
    }
}

/// Gradient buffers matching [`LearnerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub agent: Vec<T>,
    pub mixer: Vec<T>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &LearnerParams<T>) -> Self {
        Grads {
            agent: vec![T::zero(); params.agent.params.len()],
            mixer: vec![T::zero(); params.mixer.params.len()],
        }
    }

    pub fn norm(&self) -> T {
        self.agent.iter().chain(&self.mixer).map(|g| *g * *g).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.agent.iter().chain(&self.mixer).all(|g| g.is_finite())
    }

    pub fn scale(&mut self, k: T) {
        self.agent.iter_mut().chain(self.mixer.iter_mut()).for_each(|g| *g *= k);
    }
}

/// Online and target networks plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams<T> {
    pub shape: LearnerShape,
    pub agent: AgentNet<T>,
    pub mixer: Mixer<T>,
    pub target_agent: AgentNet<T>,
    pub target_mixer: Mixer<T>,
    pub adam_agent: Adam<T>,
    pub adam_mixer: Adam<T>,
    /// Per-feature scale applied to raw global-state features.
    pub state_scale: Vec<T>,
}

/// Network selector for shared forward helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nets {
    Online,
    Target,
}

/// Dense per-sample inputs gathered from replay slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs<T> {
    pub len: usize,
    pub n_agents: usize,
    pub input_len: usize,
    pub state_len: usize,
    /// `len × n_agents × input_len`
    pub inputs: Vec<T>,
    pub next_inputs: Vec<T>,
    /// `len × state_len`
    pub states: Vec<T>,
    pub next_states: Vec<T>,
    /// `len × n_agents`
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    pub dones: Vec<bool>,
}

impl<T: Scalar> BatchInputs<T> {
    pub fn agent_input(&self, i: usize, a: usize) -> &[T] {
        let k = (i * self.n_agents + a) * self.input_len;
        &self.inputs[k..k + self.input_len]
    }

    pub fn agent_next_input(&self, i: usize, a: usize) -> &[T] {
        let k = (i * self.n_agents + a) * self.input_len;
        &self.next_inputs[k..k + self.input_len]
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.state_len..(i + 1) * self.state_len]
    }

    pub fn next_state(&self, i: usize) -> &[T] {
        &self.next_states[i * self.state_len..(i + 1) * self.state_len]
    }

    pub fn joint_action(&self, i: usize) -> &[usize] {
        &self.actions[i * self.n_agents..(i + 1) * self.n_agents]
    }
}

/// Online forward pass over a batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchForward<T> {
    /// `Q_tot` per sample.
    pub q_tot: Vec<T>,
    /// `len × n_agents × N_ACTIONS`
    pub agent_q: Vec<T>,
    hidden: Vec<T>,
    caches: Vec<MixerCache<T>>,
}

impl<T: Scalar> BatchForward<T> {
    pub fn agent_values(&self, i: usize, a: usize, n_agents: usize) -> &[T] {
        let k = (i * n_agents + a) * N_ACTIONS;
        &self.agent_q[k..k + N_ACTIONS]
    }
}

/// Fill `out` with the agent network input: observation bits then one-hot id.
pub fn encode_agent_input<T: Scalar>(obs: &[u8], agent: usize, n_agents: usize, out: &mut [T]) {
    let (o, id) = out.split_at_mut(obs.len());
    for (dst, &b) in o.iter_mut().zip(obs) {
        *dst = if b != 0 { T::one() } else { T::zero() };
    }
    id.iter_mut().for_each(|x| *x = T::zero());
    id[agent] = T::one();
    debug_assert_eq!(id.len(), n_agents);
}

impl<T: Scalar> LearnerParams<T> {
    pub fn new<R: Rng + ?Sized>(shape: LearnerShape, grid_size: usize, rng: &mut R) -> Self {
        let agent = AgentNet::init(shape.agent_input(), shape.agent_hidden, N_ACTIONS, rng);
        let mixer = Mixer::init(shape.mixer, shape.n_agents, shape.state_len, shape.mixer_hidden, rng);
        Self::from_nets(shape, grid_size, agent, mixer)
    }

    /// Wrap explicit networks; targets start as copies.
    pub fn from_nets(shape: LearnerShape, grid_size: usize, agent: AgentNet<T>, mixer: Mixer<T>) -> Self {
        LearnerParams {
            shape,
            target_agent: agent.clone(),
            target_mixer: mixer.clone(),
            adam_agent: Adam::new(agent.params.len()),
            adam_mixer: Adam::new(mixer.params.len()),
            state_scale: state_scale(shape, grid_size),
            agent,
            mixer,
        }
    }

    fn nets(&self, which: Nets) -> (&AgentNet<T>, &Mixer<T>) {
        match which {
            Nets::Online => (&self.agent, &self.mixer),
            Nets::Target => (&self.target_agent, &self.target_mixer),
        }
    }

    /// Scaled global-state features.
    pub fn encode_state(&self, raw: &[u8], out: &mut [T]) {
        for ((dst, &r), &k) in out.iter_mut().zip(raw).zip(&self.state_scale) {
            *dst = T::from_u8(r).unwrap() * k;
        }
    }

    pub fn forward_agent(&self, which: Nets, input: &[T]) -> Result<Vec<T>, LearnerError> {
        self.nets(which).0.forward(input)
    }

    /// ε-greedy joint action. One uniform draw per agent decides exploration;
    /// exploring agents draw a second number for the action.
    pub fn select_actions<R: Rng + ?Sized>(&self, observations: &[Observation], epsilon: f64, rng: &mut R) -> Vec<u8> {
        let n = self.shape.n_agents;
        let mut input = vec![T::zero(); self.shape.agent_input()];
        let mut h = vec![T::zero(); self.shape.agent_hidden];
        let mut q = [T::zero(); N_ACTIONS];
        let mut out = Vec::with_capacity(n);
        for (a, obs) in observations.iter().enumerate() {
            let explore = rng.gen::<f64>() < epsilon;
            if explore {
                out.push(rng.gen_range(0..N_ACTIONS) as u8);
            } else {
                encode_agent_input(&obs.0, a, n, &mut input);
                self.agent.forward_into(&input, &mut h, &mut q);
                out.push(greedy_action(&q) as u8);
            }
        }
        out
    }

    /// Greedy joint action under the online agents.
    pub fn greedy_actions(&self, observations: &[Observation]) -> Vec<u8> {
        let n = self.shape.n_agents;
        let mut input = vec![T::zero(); self.shape.agent_input()];
        let mut h = vec![T::zero(); self.shape.agent_hidden];
        let mut q = [T::zero(); N_ACTIONS];
        observations
            .iter()
            .enumerate()
            .map(|(a, obs)| {
                encode_agent_input(&obs.0, a, n, &mut input);
                self.agent.forward_into(&input, &mut h, &mut q);
                greedy_action(&q) as u8
            })
            .collect()
    }

    /// `Q_tot(s, u)` under the chosen networks for one sample.
    pub fn q_tot(&self, which: Nets, inputs: &[&[T]], state: &[T], joint_action: &[usize]) -> Result<T, LearnerError> {
        let n = self.shape.n_agents;
        if inputs.len() != n || joint_action.len() != n {
            return Err(LearnerError::Shape(format!(
                "expected {n} agents, got {} inputs and {} actions",
                inputs.len(),
                joint_action.len()
            )));
        }
        let (agent, mixer) = self.nets(which);
        let mut qs = Vec::with_capacity(n);
        for (x, &u) in inputs.iter().zip(joint_action) {
            if u >= N_ACTIONS {
                return Err(LearnerError::Shape(format!("action {u} out of range")));
            }
            qs.push(agent.forward(x)?[u]);
        }
        mixer.forward(&qs, state)
    }

    // Greedy per-agent values then mixed; under a monotonic mixer this is the
    // joint greedy value.
    fn greedy_joint_value(&self, which: Nets, batch: &BatchInputs<T>, i: usize, next: bool, scratch: &mut Scratch<T>) -> T {
        let (agent, mixer) = self.nets(which);
        let n = self.shape.n_agents;
        for a in 0..n {
            let x = if next {
                batch.agent_next_input(i, a)
            } else {
                batch.agent_input(i, a)
            };
            agent.forward_into(x, &mut scratch.h, &mut scratch.q);
            scratch.qs[a] = scratch.q[greedy_action(&scratch.q)];
        }
        let s = if next { batch.next_state(i) } else { batch.state(i) };
        mixer.forward_cached(&scratch.qs, s, &mut scratch.cache)
    }

    /// One-step targets `r + γ·Q_tot^target(s′, greedy)`; terminal samples
    /// bootstrap 0.
    pub fn td_targets(&self, batch: &BatchInputs<T>, gamma: T) -> Vec<T> {
        let mut scratch = Scratch::new(self);
        (0..batch.len)
            .map(|i| {
                if batch.dones[i] || gamma == T::zero() {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + gamma * self.greedy_joint_value(Nets::Target, batch, i, true, &mut scratch)
                }
            })
            .collect()
    }

    /// Optimal-value proxy: the target networks' greedy joint value at `s`.
    pub fn q_star_estimates(&self, batch: &BatchInputs<T>) -> Vec<T> {
        let mut scratch = Scratch::new(self);
        (0..batch.len)
            .map(|i| self.greedy_joint_value(Nets::Target, batch, i, false, &mut scratch))
            .collect()
    }

    /// Online forward pass over every sample.
    pub fn forward_batch(&self, batch: &BatchInputs<T>) -> BatchForward<T> {
        let n = self.shape.n_agents;
        let hid = self.shape.agent_hidden;
        let mut fwd = BatchForward {
            q_tot: Vec::with_capacity(batch.len),
            agent_q: vec![T::zero(); batch.len * n * N_ACTIONS],
            hidden: vec![T::zero(); batch.len * n * hid],
            caches: Vec::with_capacity(batch.len),
        };
        let mut qs = vec![T::zero(); n];
        for i in 0..batch.len {
            let u = batch.joint_action(i);
            for a in 0..n {
                let k = i * n + a;
                let (h, q) = (
                    &mut fwd.hidden[k * hid..(k + 1) * hid],
                    &mut fwd.agent_q[k * N_ACTIONS..(k + 1) * N_ACTIONS],
                );
                self.agent.forward_into(batch.agent_input(i, a), h, q);
                qs[a] = q[u[a]];
            }
            let mut cache = self.mixer.new_cache();
            fwd.q_tot.push(self.mixer.forward_cached(&qs, batch.state(i), &mut cache));
            fwd.caches.push(cache);
        }
        fwd
    }

    /// `Σ w_i (Q_tot,i − y_i)²` and its exact gradient from a cached forward pass.
    pub fn loss_from_forward(
        &self,
        fwd: &BatchForward<T>,
        batch: &BatchInputs<T>,
        targets: &[T],
        weights: &[T],
    ) -> Result<(T, Grads<T>), LearnerError> {
        if targets.len() != batch.len || weights.len() != batch.len || fwd.q_tot.len() != batch.len {
            return Err(LearnerError::Shape(format!(
                "batch {} with {} targets and {} weights",
                batch.len,
                targets.len(),
                weights.len()
            )));
        }
        let n = self.shape.n_agents;
        let hid = self.shape.agent_hidden;
        let mut grads = Grads::zeros_like(self);
        let mut loss = T::zero();
        let mut qs = vec![T::zero(); n];
        let mut dqs = vec![T::zero(); n];
        let two = T::lit(2.0);
        for i in 0..batch.len {
            let err = fwd.q_tot[i] - targets[i];
            loss += weights[i] * err * err;
            let dq_tot = two * weights[i] * err;
            if dq_tot == T::zero() {
                continue;
            }
            let u = batch.joint_action(i);
            for a in 0..n {
                qs[a] = fwd.agent_values(i, a, n)[u[a]];
            }
            self.mixer
                .backward(&qs, batch.state(i), &fwd.caches[i], dq_tot, &mut grads.mixer, &mut dqs);
            for a in 0..n {
                let k = i * n + a;
                self.agent.backward_action(
                    batch.agent_input(i, a),
                    &fwd.hidden[k * hid..(k + 1) * hid],
                    u[a],
                    dqs[a],
                    &mut grads.agent,
                );
            }
        }
        if !loss.is_finite() {
            return Err(LearnerError::NonFinite(format!("weighted loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// Weighted squared TD loss with targets held constant.
    pub fn weighted_loss(&self, batch: &BatchInputs<T>, targets: &[T], weights: &[T]) -> Result<(T, Grads<T>), LearnerError> {
        let fwd = self.forward_batch(batch);
        self.loss_from_forward(&fwd, batch, targets, weights)
    }

    /// Adam step on the online networks. Returns `false` (and leaves every
    /// parameter and moment untouched) when the gradient is not finite.
    pub fn optimize_step(&mut self, grads: &Grads<T>, lr: T) -> bool {
        if grads.agent.len() != self.agent.params.len() || grads.mixer.len() != self.mixer.params.len() {
            log::warn!("gradient shape mismatch; step skipped");
            return false;
        }
        if !grads.is_finite() {
            log::warn!("non-finite gradient; step skipped");
            return false;
        }
        self.adam_agent.step(&mut self.agent.params, &grads.agent, lr);
        self.adam_mixer.step(&mut self.mixer.params, &grads.mixer, lr);
        true
    }

    /// Copy online parameters into the target networks.
    pub fn sync_targets(&mut self) {
        self.target_agent.params.copy_from_slice(&self.agent.params);
        self.target_mixer.params.copy_from_slice(&self.mixer.params);
    }

    /// Gather replay slots into dense network inputs.
    pub fn gather(&self, buffer: &ReplayBuffer<T>, slots: &[usize]) -> BatchInputs<T> {
        let n = self.shape.n_agents;
        let il = self.shape.agent_input();
        let sl = self.shape.state_len;
        let ol = self.shape.obs_len;
        let b = slots.len();
        let mut batch = BatchInputs {
            len: b,
            n_agents: n,
            input_len: il,
            state_len: sl,
            inputs: vec![T::zero(); b * n * il],
            next_inputs: vec![T::zero(); b * n * il],
            states: vec![T::zero(); b * sl],
            next_states: vec![T::zero(); b * sl],
            actions: Vec::with_capacity(b * n),
            rewards: Vec::with_capacity(b),
            dones: Vec::with_capacity(b),
        };
        for (i, &slot) in slots.iter().enumerate() {
            let t = buffer.get(slot).expect("sampled slot is occupied");
            for a in 0..n {
                let k = (i * n + a) * il;
                encode_agent_input(t.agent_obs(a, ol), a, n, &mut batch.inputs[k..k + il]);
                encode_agent_input(t.agent_next_obs(a, ol), a, n, &mut batch.next_inputs[k..k + il]);
            }
            self.encode_state(t.state, &mut batch.states[i * sl..(i + 1) * sl]);
            self.encode_state(t.next_state, &mut batch.next_states[i * sl..(i + 1) * sl]);
            batch.actions.extend(t.actions.iter().map(|&u| u as usize));
            batch.rewards.push(t.reward);
            batch.dones.push(t.done);
        }
        batch
    }

    /// Probability each agent's policy (ε-greedy over current online values)
    /// gave the action it took in sample `i`.
    pub fn action_probs(&self, fwd: &BatchForward<T>, batch: &BatchInputs<T>, i: usize, epsilon: T, out: &mut Vec<T>) {
        let n = self.shape.n_agents;
        out.clear();
        let u = batch.joint_action(i);
        for a in 0..n {
            out.push(policy_prob(fwd.agent_values(i, a, n), u[a], epsilon));
        }
    }
}

struct Scratch<T> {
    h: Vec<T>,
    q: [T; N_ACTIONS],
    qs: Vec<T>,
    cache: MixerCache<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(p: &LearnerParams<T>) -> Self {
        Scratch {
            h: vec![T::zero(); p.shape.agent_hidden],
            q: [T::zero(); N_ACTIONS],
            qs: vec![T::zero(); p.shape.n_agents],
            cache: p.mixer.new_cache(),
        }
    }
}

fn state_scale<T: Scalar>(shape: LearnerShape, grid_size: usize) -> Vec<T> {
    let pos = if grid_size > 1 {
        T::one() / T::from_usize(grid_size - 1).unwrap()
    } else {
        T::zero()
    };
    let mut k = Vec::with_capacity(shape.state_len);
    let n_prey = shape.state_len.saturating_sub(2 * shape.n_agents) / 3;
    k.resize(2 * shape.n_agents, pos);
    for _ in 0..n_prey {
        k.extend_from_slice(&[pos, pos, T::one()]);
    }
    k.resize(shape.state_len, T::one());
    k
}

const PARAMS_MAGIC: &[u8; 8] = b"ACMPARM\0";
const PARAMS_VERSION: u32 = 1;

/// Versioned binary parameter checkpoint.
///
/// ```text
/// magic    8 bytes "ACMPARM\0"
/// version  u32 = 1
/// scalar   u8 (4 or 8), 3 zero bytes
/// config   u32 length + UTF-8 `key = value` text of the run config
/// agent    u64 count + scalars       (online agent network)
/// mixer    u64 count + scalars       (online mixer)
/// target   u64 count + scalars  ×2   (target agent, target mixer)
/// ```
///
/// Optimizer moments are not stored; a loaded learner restarts Adam.
pub fn write_params<T: Scalar, W: Write>(mut out: W, params: &LearnerParams<T>, cfg: &RunConfig) -> Result<(), LearnerError> {
    let mut b = Vec::new();
    b.extend_from_slice(PARAMS_MAGIC);
    b.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    b.extend_from_slice(&[T::BYTES, 0, 0, 0]);
    let text = cfg.to_kv_text();
    b.extend_from_slice(&(text.len() as u32).to_le_bytes());
    b.extend_from_slice(text.as_bytes());
    for v in [
        &params.agent.params,
        &params.mixer.params,
        &params.target_agent.params,
        &params.target_mixer.params,
    ] {
        b.extend_from_slice(&(v.len() as u64).to_le_bytes());
        for x in v.iter() {
            x.write_le(&mut b);
        }
    }
    out.write_all(&b)?;
    Ok(())
}

/// Read a checkpoint written by [`write_params`].
pub fn read_params<T: Scalar, R: Read>(mut input: R) -> Result<(LearnerParams<T>, RunConfig), LearnerError> {
    let bad = |m: &str| LearnerError::Checkpoint(m.to_string());
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], LearnerError> {
        let end = pos.checked_add(n).filter(|e| *e <= data.len()).ok_or_else(|| bad("truncated"))?;
        let s = &data[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != PARAMS_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != PARAMS_VERSION {
        return Err(LearnerError::Checkpoint(format!("unsupported version {version}")));
    }
    let width = take(4)?[0];
    if width != T::BYTES {
        return Err(LearnerError::Checkpoint(format!("scalar width {width}, expected {}", T::BYTES)));
    }
    let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let text = std::str::from_utf8(take(len)?).map_err(|_| bad("config is not UTF-8"))?;
    let cfg = crate::config::validate_config(&crate::config::parse_kv_text(text)?)?;
    let task = PredatorPrey::from_config(&cfg);
    let shape = LearnerShape::for_task(&task, &cfg);
    let mut p = LearnerParams::from_nets(
        shape,
        cfg.grid_size,
        AgentNet::zeros(shape.agent_input(), shape.agent_hidden, N_ACTIONS),
        Mixer::zeros(shape.mixer, shape.n_agents, shape.state_len, shape.mixer_hidden),
    );
    for dst in [
        &mut p.agent.params,
        &mut p.mixer.params,
        &mut p.target_agent.params,
        &mut p.target_mixer.params,
    ] {
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != dst.len() {
            return Err(LearnerError::Checkpoint(format!(
                "parameter block has {count} values, config implies {}",
                dst.len()
            )));
        }
        let w = width as usize;
        let raw = take(count.checked_mul(w).ok_or_else(|| bad("overflow"))?)?;
        for (x, chunk) in dst.iter_mut().zip(raw.chunks_exact(w)) {
            *x = T::read_le(chunk);
            if !x.is_finite() {
                return Err(bad("non-finite parameter"));
            }
        }
    }
    if pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((p, cfg))
}
