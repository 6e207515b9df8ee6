//! The full training loop: act, store, sample, re-weight, update.

use std::io::{self, Write};
use std::time::Instant;

use crate::config::RunConfig;
use crate::env::{EnvState, Observation, PredatorPrey};
use crate::prioritization::{f_pi_unchecked, normalize_in_place};
use crate::replay::{push, ReplayBuffer, Transition, TransitionShape, WeightTable};
use crate::rng::{RngStreams, EXPLORATION_STREAM, LEARNER_INIT_STREAM, SAMPLER_STREAM, ENV_STREAM};
use crate::sampler::{DistinctTracker, Sampler};
use crate::scalar::Scalar;
use crate::trace::AccessTrace;

use super::{LearnerError, LearnerParams, LearnerShape};

pub const CURVES_VERSION_LINE: &str = "# accmer curves v1";
pub const CURVES_HEADER: &str = "train_step,episode,eval_mean_reward,loss,epsilon,wall_ms_per_step,distinct_slots_touched";

/// One evaluation checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub train_step: u64,
    /// Training episodes completed so far.
    pub episode: u64,
    pub eval_mean_reward: f64,
    /// Mean weighted loss over the updates since the previous row.
    pub loss: Option<f64>,
    pub epsilon: f64,
    /// Only filled when `record_timing` is set, so default curves stay
    /// byte-reproducible.
    pub wall_ms_per_step: Option<f64>,
    /// Mean distinct slots per reuse window completed since the previous row.
    pub distinct_slots_touched: Option<f64>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Write curves CSV: a version comment, the header, then one line per row.
pub fn write_curves<W: Write>(mut out: W, rows: &[CurveRow]) -> io::Result<()> {
    writeln!(out, "{CURVES_VERSION_LINE}")?;
    writeln!(out, "{CURVES_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:?},{},{:?},{},{}",
            r.train_step,
            r.episode,
            r.eval_mean_reward,
            opt(r.loss),
            r.epsilon,
            opt(r.wall_ms_per_step),
            opt(r.distinct_slots_touched)
        )?;
    }
    Ok(())
}

/// Wall time spent inside the sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SamplingStats {
    pub calls: u64,
    pub total_ns: u128,
}

impl SamplingStats {
    pub fn mean_ns(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.total_ns as f64 / self.calls as f64
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts<T> {
    pub config: RunConfig,
    pub curves: Vec<CurveRow>,
    pub trace: AccessTrace,
    pub params: LearnerParams<T>,
    pub buffer: ReplayBuffer<T>,
    pub table: WeightTable<T>,
    pub sampling: SamplingStats,
    /// Distinct-slot counts of every completed reuse window.
    pub window_distinct: Vec<usize>,
    pub episodes: u64,
    pub updates: u64,
    pub skipped_updates: u64,
}

/// Undiscounted return of `episodes` greedy episodes, each on its own stream.
pub fn evaluate<T: Scalar>(
    params: &LearnerParams<T>,
    task: &PredatorPrey,
    streams: &RngStreams,
    step: u64,
    episodes: usize,
) -> Result<Vec<f64>, LearnerError> {
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = streams.eval_stream(step, ep);
        let (mut state, mut obs) = task.reset(&mut rng)?;
        let mut total = 0.0;
        loop {
            let actions = params.greedy_actions(&obs);
            let (next, outcome) = task.step(&mut state, &actions, &mut rng)?;
            total += outcome.reward;
            obs = next;
            if outcome.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

fn flatten(obs: &[Observation]) -> Vec<u8> {
    obs.iter().flat_map(|o| o.0.iter().copied()).collect()
}

struct Episode {
    state: EnvState,
    obs: Vec<Observation>,
}

/// Run one configuration for `total_steps` environment steps.
pub fn train_run<T: Scalar>(cfg: &RunConfig) -> Result<RunArtifacts<T>, LearnerError> {
    cfg.check()?;
    let streams = RngStreams::new(cfg.seed);
    let mut env_rng = streams.stream(ENV_STREAM);
    let mut sampler_rng = streams.stream(SAMPLER_STREAM);
    let mut explore_rng = streams.stream(EXPLORATION_STREAM);

    let task = PredatorPrey::from_config(cfg);
    let shape = LearnerShape::for_task(&task, cfg);
    let mut params = LearnerParams::<T>::new(shape, cfg.grid_size, &mut streams.stream(LEARNER_INIT_STREAM));
    let mut buffer = ReplayBuffer::<T>::new(
        cfg.buffer_capacity,
        TransitionShape {
            n_agents: shape.n_agents,
            obs_len: shape.obs_len,
            state_len: shape.state_len,
        },
    );
    let mut table = WeightTable::<T>::new(cfg.buffer_capacity, T::one());
    let mut sampler = Sampler::from_config(cfg);
    let mut tracker = DistinctTracker::new(cfg.buffer_capacity, sampler.window());
    let mut trace = AccessTrace::new(cfg.sampler_mode, cfg.buffer_capacity, cfg.batch_size);
    let mut windows_reported = 0usize;

    let gamma = T::lit(cfg.env_discount);
    let decay = T::lit(cfg.weight_decay);
    let lr = T::lit(cfg.learning_rate);
    let weight_clip = (cfg.weight_clip > 0.0).then(|| T::lit(cfg.weight_clip));
    let grad_clip = (cfg.grad_clip > 0.0).then(|| T::lit(cfg.grad_clip));

    let (state, obs) = task.reset(&mut env_rng)?;
    let mut ep = Episode { state, obs };
    let mut episodes = 0u64;
    let mut updates = 0u64;
    let mut skipped = 0u64;
    let mut sampling = SamplingStats::default();
    let mut curves = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut interval_start = Instant::now();

    let mut raw_weights: Vec<T> = Vec::with_capacity(cfg.batch_size);
    let mut probs: Vec<T> = Vec::with_capacity(shape.n_agents);
    let mut slots: Vec<usize> = Vec::with_capacity(cfg.batch_size);

    for t in 1..=cfg.total_steps {
        let epsilon = cfg.epsilon_at(t - 1);
        let actions = params.select_actions(&ep.obs, epsilon, &mut explore_rng);
        let state_before = ep.state.features();
        let obs_before = flatten(&ep.obs);
        let (next_obs, outcome) = task.step(&mut ep.state, &actions, &mut env_rng)?;
        // running out of time is a truncation, not a terminal state
        let terminal = ep.state.live_prey() == 0;
        push(
            &mut buffer,
            &mut table,
            &Transition {
                state: state_before,
                obs: obs_before,
                actions,
                reward: T::lit(outcome.reward),
                next_state: ep.state.features(),
                next_obs: flatten(&next_obs),
                done: terminal,
                step: t,
            },
        )?;
        ep.obs = next_obs;
        if outcome.done {
            episodes += 1;
            if episodes % cfg.target_sync_episodes == 0 {
                params.sync_targets();
            }
            let (state, obs) = task.reset(&mut env_rng)?;
            ep = Episode { state, obs };
        }

        if table.occupied() >= cfg.batch_size {
            let start = Instant::now();
            let batch = sampler.next_batch(&mut sampler_rng, &table)?;
            sampling.total_ns += start.elapsed().as_nanos();
            sampling.calls += 1;
            if sampling.calls <= cfg.trace_batches {
                trace.record(sampling.calls - 1, &batch);
            }
            tracker.record(batch.indices());

            slots.clear();
            slots.extend(batch.indices());
            let inputs = params.gather(&buffer, &slots);
            let targets = params.td_targets(&inputs, gamma);
            let q_star = params.q_star_estimates(&inputs);
            let fwd = params.forward_batch(&inputs);
            let eps_t = T::lit(epsilon);
            raw_weights.clear();
            for i in 0..inputs.len {
                params.action_probs(&fwd, &inputs, i, eps_t, &mut probs);
                let q = fwd.q_tot[i];
                let mut w = (q - targets[i]).abs() * (-(q - q_star[i]).abs()).exp() * f_pi_unchecked(&probs);
                if !w.is_finite() {
                    return Err(LearnerError::NonFinite(format!(
                        "prioritization weight at step {t}, slot {}",
                        slots[i]
                    )));
                }
                if let Some(c) = weight_clip {
                    w = w.min(c);
                }
                raw_weights.push(w);
            }
            table.update_weights(&slots, &raw_weights)?;
            table.apply_decay(decay);
            normalize_in_place(&mut raw_weights)?;

            let (loss, mut grads) = params.loss_from_forward(&fwd, &inputs, &targets, &raw_weights)?;
            if let Some(c) = grad_clip {
                let norm = grads.norm();
                if norm > c {
                    grads.scale(c / norm);
                }
            }
            if params.optimize_step(&grads, lr) {
                updates += 1;
            } else {
                skipped += 1;
            }
            loss_sum += loss.as_f64();
            loss_count += 1;
        }

        if t % cfg.eval_interval == 0 {
            let returns = evaluate(&params, &task, &streams, t, cfg.eval_episodes)?;
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            let windows = &tracker.completed()[windows_reported..];
            windows_reported = tracker.completed().len();
            let row = CurveRow {
                train_step: t,
                episode: episodes,
                eval_mean_reward: mean,
                loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
                epsilon: cfg.epsilon_at(t),
                wall_ms_per_step: cfg
                    .record_timing
                    .then(|| interval_start.elapsed().as_secs_f64() * 1e3 / cfg.eval_interval as f64),
                distinct_slots_touched: (!windows.is_empty())
                    .then(|| windows.iter().sum::<usize>() as f64 / windows.len() as f64),
            };
            if !(mean.is_finite() && row.loss.map_or(true, f64::is_finite)) {
                return Err(LearnerError::NonFinite(format!("curve metrics at step {t}: {row:?}")));
            }
            log::info!(
                "step {t} episode {episodes} eval {mean:.3} loss {:?} eps {:.3}",
                row.loss,
                row.epsilon
            );
            curves.push(row);
            loss_sum = 0.0;
            loss_count = 0;
            interval_start = Instant::now();
        }
    }
    Ok(RunArtifacts {
        config: cfg.clone(),
        curves,
        trace,
        params,
        buffer,
        table,
        sampling,
        window_distinct: tracker.completed().to_vec(),
        episodes,
        updates,
        skipped_updates: skipped,
    })
}
