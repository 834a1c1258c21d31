//! Continuous 2D point-mass navigation in grid mazes.

mod maze;

pub use maze::{Cell, EnvConfig, MazeSpec, BUILTIN_MAZES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the flattened state `[px, py, vx, vy]`.
pub const STATE_DIM: usize = 4;
/// Dimension of an action.
pub const ACTION_DIM: usize = 2;

/// A full state vector `[px, py, vx, vy]`; goals live in the same space.
pub type StateVec = [f64; STATE_DIM];

/// Per-step penalty on squared action magnitude.
pub const ACTION_COST: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub step: usize,
}

impl EnvState {
    pub fn to_vec(&self) -> StateVec {
        [self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn from_vec(v: &StateVec, step: usize) -> Self {
        Self {
            pos: [v[0], v[1]],
            vel: [v[2], v[3]],
            step,
        }
    }
}

/// Acceleration command, clamped componentwise to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 2]);

impl Action {
    pub fn new(ax: f64, ay: f64) -> Self {
        Self([ax, ay]).clamped()
    }

    pub fn clamped(self) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        Self([c(self.0[0]), c(self.0[1])])
    }

    pub fn norm_sq(&self) -> f64 {
        self.0[0] * self.0[0] + self.0[1] * self.0[1]
    }
}

/// Bounding box and speed limit of a maze, used to scale network inputs and
/// to clamp generated goals back into the valid state range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateScale {
    pub extent: [f64; 2],
    pub cell_size: f64,
    pub max_speed: f64,
}

impl StateScale {
    pub fn for_maze(spec: &MazeSpec) -> Self {
        Self {
            extent: spec.extent(),
            cell_size: spec.config.cell_size,
            max_speed: spec.config.max_speed,
        }
    }

    /// Positions in cell units, velocities as a fraction of the speed limit.
    /// No shift is applied.
    pub fn normalize(&self, s: &StateVec) -> StateVec {
        let (p, v) = (self.cell_size, self.max_speed);
        [s[0] / p, s[1] / p, s[2] / v, s[3] / v]
    }

    pub fn denormalize(&self, s: &StateVec) -> StateVec {
        let (p, v) = (self.cell_size, self.max_speed);
        [s[0] * p, s[1] * p, s[2] * v, s[3] * v]
    }

    /// Position clamped into the box, velocity rescaled to the speed limit.
    pub fn clamp(&self, s: &StateVec) -> StateVec {
        let c = |x: f64, hi: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, hi) };
        let mut out = [c(s[0], self.extent[0]), c(s[1], self.extent[1]), s[2], s[3]];
        if out[2].is_nan() || out[3].is_nan() {
            out[2] = 0.0;
            out[3] = 0.0;
        }
        let speed = libm::hypot(out[2], out[3]);
        if speed > self.max_speed {
            let k = self.max_speed / speed;
            out[2] *= k;
            out[3] *= k;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub wall_contact: bool,
}

/// Start-cell center plus seeded per-axis jitter.
pub fn reset(spec: &MazeSpec, seed: u64) -> EnvState {
    reset_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn reset_with<R: Rng + ?Sized>(spec: &MazeSpec, rng: &mut R) -> EnvState {
    let (r, c) = spec.start_cell();
    let mut pos = spec.cell_center(r, c);
    let j = spec.config.start_jitter * spec.config.cell_size;
    if j > 0.0 {
        pos[0] += rng.random_range(-j..=j);
        pos[1] += rng.random_range(-j..=j);
    }
    EnvState {
        pos,
        vel: [0.0, 0.0],
        step: 0,
    }
}

/// Euclidean distance between the position parts of two state vectors.
pub fn distance(a: &StateVec, b: &StateVec) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

pub fn reached_target(spec: &MazeSpec, pos: [f64; 2]) -> bool {
    let t = spec.target_position();
    libm::hypot(pos[0] - t[0], pos[1] - t[1]) <= spec.config.target_radius
}

pub fn is_terminal(spec: &MazeSpec, state: &EnvState) -> bool {
    state.step >= spec.config.max_steps || reached_target(spec, state.pos)
}

/// Semi-implicit Euler step with axis-separated wall sliding.
pub fn step(spec: &MazeSpec, state: &EnvState, action: Action) -> Result<StepOutcome> {
    if is_terminal(spec, state) {
        return Err(Error::EpisodeDone(state.step));
    }
    let a = action.clamped();
    let cfg = &spec.config;
    let mut vel = [state.vel[0] + a.0[0] * cfg.dt, state.vel[1] + a.0[1] * cfg.dt];
    let speed = libm::hypot(vel[0], vel[1]);
    if speed > cfg.max_speed {
        let k = cfg.max_speed / speed;
        vel = [vel[0] * k, vel[1] * k];
    }
    let mut pos = state.pos;
    let mut wall_contact = false;
    let nx = pos[0] + vel[0] * cfg.dt;
    if spec.is_free_point(nx, pos[1]) {
        pos[0] = nx;
    } else {
        vel[0] = 0.0;
        wall_contact = true;
    }
    let ny = pos[1] + vel[1] * cfg.dt;
    if spec.is_free_point(pos[0], ny) {
        pos[1] = ny;
    } else {
        vel[1] = 0.0;
        wall_contact = true;
    }
    let reached = reached_target(spec, pos);
    let reward = if reached { 1.0 } else { 0.0 } - ACTION_COST * a.norm_sq();
    let next = EnvState {
        pos,
        vel,
        step: state.step + 1,
    };
    Ok(StepOutcome {
        state: next,
        reward,
        done: reached || next.step >= cfg.max_steps,
        wall_contact,
    })
}
