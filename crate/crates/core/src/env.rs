//! Partially observable grid-world predator-prey.
//!
//! Predators share a team reward. A live prey is captured (+1) when two or
//! more 4-adjacent predators choose `catch` in the same step; a prey with
//! exactly one adjacent catcher adds `punishment` instead. Surviving prey then
//! take a uniformly random legal move (or stay).

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::config::RunConfig;
use crate::rng::RngStream;

pub const N_ACTIONS: usize = 6;
/// Observation window radius; the window is `(2r+1)²` cells.
pub const OBS_RADIUS: usize = 2;
pub const OBS_CHANNELS: usize = 3;
pub const OBS_LEN: usize = OBS_CHANNELS * (2 * OBS_RADIUS + 1) * (2 * OBS_RADIUS + 1);

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("grid {grid}x{grid} cannot hold {entities} entities")]
    Capacity { grid: usize, entities: usize },
    #[error("joint action has {got} entries, expected {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("action {0} is not in 0..6")]
    InvalidAction(u8),
    #[error("episode already terminated")]
    Terminal,
}

/// Per-agent action: four compass moves, stay, catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ActionId {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
    Catch = 5,
}

impl ActionId {
    pub const ALL: [ActionId; N_ACTIONS] = [
        ActionId::Up,
        ActionId::Down,
        ActionId::Left,
        ActionId::Right,
        ActionId::Stay,
        ActionId::Catch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            ActionId::Up => (-1, 0),
            ActionId::Down => (1, 0),
            ActionId::Left => (0, -1),
            ActionId::Right => (0, 1),
            ActionId::Stay | ActionId::Catch => (0, 0),
        }
    }
}

impl TryFrom<u8> for ActionId {
    type Error = EnvError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ActionId::ALL.get(v as usize).copied().ok_or(EnvError::InvalidAction(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: u8,
    pub col: u8,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Pos {
            row: row as u8,
            col: col as u8,
        }
    }

    fn offset(self, dr: isize, dc: isize, grid: usize) -> Option<Pos> {
        let r = self.row as isize + dr;
        let c = self.col as isize + dc;
        if r < 0 || c < 0 || r >= grid as isize || c >= grid as isize {
            None
        } else {
            Some(Pos::new(r as usize, c as usize))
        }
    }

    fn adjacent(self, other: Pos) -> bool {
        self.row.abs_diff(other.row) as u16 + self.col.abs_diff(other.col) as u16 == 1
    }
}

/// Flattened egocentric window, channel-major `[wall | predator | prey]`,
/// each channel row-major over the `(2r+1)²` window. Values are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation(pub Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub grid_size: usize,
    pub predators: Vec<Pos>,
    pub prey: Vec<Pos>,
    pub prey_alive: Vec<bool>,
    pub step_count: u32,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub captures: u32,
    pub solo_catches: u32,
    pub done: bool,
}

/// Static rules of one predator-prey task.
#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPrey {
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_prey: usize,
    pub punishment: f64,
    pub episode_limit: u32,
}

impl PredatorPrey {
    pub fn from_config(cfg: &RunConfig) -> Self {
        PredatorPrey {
            grid_size: cfg.grid_size,
            n_agents: cfg.n_agents,
            n_prey: cfg.n_prey,
            punishment: cfg.punishment,
            episode_limit: cfg.episode_limit,
        }
    }

    pub fn obs_len(&self) -> usize {
        OBS_LEN
    }

    /// Length of [`EnvState::features`]: predator `(row, col)` pairs followed by
    /// prey `(row, col, alive)` triples.
    pub fn state_len(&self) -> usize {
        2 * self.n_agents + 3 * self.n_prey
    }

    pub fn reset(&self, rng: &mut RngStream) -> Result<(EnvState, Vec<Observation>), EnvError> {
        let cells = self.grid_size * self.grid_size;
        let entities = self.n_agents + self.n_prey;
        if entities > cells {
            return Err(EnvError::Capacity {
                grid: self.grid_size,
                entities,
            });
        }
        let picks = rand::seq::index::sample(rng, cells, entities);
        let to_pos = |i: usize| Pos::new(i / self.grid_size, i % self.grid_size);
        let mut it = picks.iter();
        let predators: Vec<Pos> = it.by_ref().take(self.n_agents).map(to_pos).collect();
        let prey: Vec<Pos> = it.map(to_pos).collect();
        let state = EnvState {
            grid_size: self.grid_size,
            predators,
            prey_alive: vec![true; prey.len()],
            prey,
            step_count: 0,
        };
        let obs = state.observe_all();
        Ok((state, obs))
    }

    pub fn step(
        &self,
        state: &mut EnvState,
        joint_action: &[u8],
        rng: &mut RngStream,
    ) -> Result<(Vec<Observation>, StepOutcome), EnvError> {
        if joint_action.len() != self.n_agents {
            return Err(EnvError::ActionLength {
                got: joint_action.len(),
                expected: self.n_agents,
            });
        }
        let actions = joint_action
            .iter()
            .map(|&a| ActionId::try_from(a))
            .collect::<Result<Vec<_>, _>>()?;
        if state.is_terminal(self.episode_limit) {
            return Err(EnvError::Terminal);
        }
        let grid = self.grid_size;

        // moves, in agent-index order against already-updated positions
        for (agent, action) in actions.iter().enumerate() {
            let (dr, dc) = action.delta();
            if dr == 0 && dc == 0 {
                continue;
            }
            let Some(target) = state.predators[agent].offset(dr, dc, grid) else {
                continue;
            };
            if !state.occupied(target) {
                state.predators[agent] = target;
            }
        }

        let mut captures = 0u32;
        let mut solo = 0u32;
        for p in 0..state.prey.len() {
            if !state.prey_alive[p] {
                continue;
            }
            let prey_pos = state.prey[p];
            let catchers = actions
                .iter()
                .zip(&state.predators)
                .filter(|(a, pos)| **a == ActionId::Catch && pos.adjacent(prey_pos))
                .count();
            if catchers >= 2 {
                state.prey_alive[p] = false;
                captures += 1;
            } else if catchers == 1 {
                solo += 1;
            }
        }

        for p in 0..state.prey.len() {
            if !state.prey_alive[p] {
                continue;
            }
            let here = state.prey[p];
            let mut options = [here; 5];
            let mut n = 1;
            for action in &ActionId::ALL[..4] {
                let (dr, dc) = action.delta();
                if let Some(next) = here.offset(dr, dc, grid) {
                    if !state.occupied(next) {
                        options[n] = next;
                        n += 1;
                    }
                }
            }
            state.prey[p] = options[rng.gen_range(0..n)];
        }

        state.step_count += 1;
        let reward = captures as f64 + solo as f64 * self.punishment;
        let done = state.is_terminal(self.episode_limit);
        Ok((
            state.observe_all(),
            StepOutcome {
                reward,
                captures,
                solo_catches: solo,
                done,
            },
        ))
    }
}

impl EnvState {
    pub fn n_agents(&self) -> usize {
        self.predators.len()
    }

    pub fn live_prey(&self) -> usize {
        self.prey_alive.iter().filter(|a| **a).count()
    }

    pub fn is_terminal(&self, episode_limit: u32) -> bool {
        self.live_prey() == 0 || self.step_count >= episode_limit
    }

    fn occupied(&self, pos: Pos) -> bool {
        self.predators.contains(&pos)
            || self
                .prey
                .iter()
                .zip(&self.prey_alive)
                .any(|(p, alive)| *alive && *p == pos)
    }

    /// Egocentric window for `agent`; cells outside the grid are walls.
    pub fn observe(&self, agent: usize) -> Observation {
        let side = 2 * OBS_RADIUS + 1;
        let plane = side * side;
        let mut v = vec![0u8; OBS_LEN];
        let me = self.predators[agent];
        let r = OBS_RADIUS as isize;
        for dr in -r..=r {
            for dc in -r..=r {
                let cell = (dr + r) as usize * side + (dc + r) as usize;
                match me.offset(dr, dc, self.grid_size) {
                    None => v[cell] = 1,
                    Some(pos) => {
                        if self.predators.iter().enumerate().any(|(i, p)| i != agent && *p == pos) {
                            v[plane + cell] = 1;
                        }
                        if self.prey.iter().zip(&self.prey_alive).any(|(p, a)| *a && *p == pos) {
                            v[2 * plane + cell] = 1;
                        }
                    }
                }
            }
        }
        Observation(v)
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.n_agents()).map(|a| self.observe(a)).collect()
    }

    /// Compact global state: predator `(row, col)`, then prey `(row, col, alive)`.
    /// Captured prey report `(0, 0, 0)`.
    pub fn features(&self) -> Vec<u8> {
        let mut f = Vec::with_capacity(2 * self.predators.len() + 3 * self.prey.len());
        for p in &self.predators {
            f.push(p.row);
            f.push(p.col);
        }
        for (p, alive) in self.prey.iter().zip(&self.prey_alive) {
            if *alive {
                f.extend_from_slice(&[p.row, p.col, 1]);
            } else {
                f.extend_from_slice(&[0, 0, 0]);
            }
        }
        f
    }
}

/// One row of the transition log export.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub actions: Vec<u8>,
    pub reward: f64,
    pub captures: u32,
    pub solo_catches: u32,
}

pub const TRANSITION_LOG_HEADER: &str = "step,actions,reward,captures,solo_catches";

/// Write rows as CSV; actions are space-separated inside one field.
pub fn write_transition_log<W: Write>(mut out: W, rows: &[LogRow]) -> io::Result<()> {
    writeln!(out, "{TRANSITION_LOG_HEADER}")?;
    let mut actions = String::new();
    for r in rows {
        actions.clear();
        for (i, a) in r.actions.iter().enumerate() {
            if i > 0 {
                actions.push(' ');
            }
            let _ = write!(actions, "{a}");
        }
        writeln!(out, "{},{},{:?},{},{}", r.step, actions, r.reward, r.captures, r.solo_catches)?;
    }
    Ok(())
}
