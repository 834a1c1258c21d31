//! Scripted data-collecting controllers, dataset collection and the
//! normalized-score metric.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, DatasetMeta, Tier, Transition};
use crate::env::{self, Action, EnvState, MazeSpec};
use crate::error::{Error, Result};

/// Episodes used to measure the random and expert reference returns.
pub const BASELINE_EPISODES: usize = 5000;

/// Shortest 4-connected path by breadth-first search, neighbors expanded in
/// the order north, east, south, west.
pub fn plan_waypoints(spec: &MazeSpec, from: (usize, usize), to: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    for &(r, c) in [&from, &to] {
        if !spec.is_free(r, c) {
            return Err(Error::Unreachable(r, c));
        }
    }
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; rows * cols];
    let mut seen = vec![false; rows * cols];
    let mut queue = VecDeque::new();
    seen[from.0 * cols + from.1] = true;
    queue.push_back(from);
    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == to {
            break;
        }
        let neighbors = [
            (r.wrapping_sub(1), c),
            (r, c + 1),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
        ];
        for (nr, nc) in neighbors {
            if spec.is_free(nr, nc) && !seen[nr * cols + nc] {
                seen[nr * cols + nc] = true;
                parent[nr * cols + nc] = Some((r, c));
                queue.push_back((nr, nc));
            }
        }
    }
    if !seen[to.0 * cols + to.1] {
        return Err(Error::Unreachable(to.0, to.1));
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(p) = parent[cur.0 * cols + cur.1] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// PD waypoint follower with Gaussian action noise.
#[derive(Debug, Clone)]
pub struct ExpertController {
    waypoints: Vec<[f64; 2]>,
    cursor: usize,
    kp: f64,
    kd: f64,
    noise_std: f64,
    advance_radius: f64,
}

impl ExpertController {
    pub const EXPERT_KP: f64 = 4.0;
    pub const KD: f64 = 3.0;
    pub const EXPERT_NOISE: f64 = 0.05;
    pub const MEDIUM_NOISE: f64 = 0.3;

    /// Controller for `tier`, following the shortest path from the cell
    /// containing `state` to the target cell.
    pub fn new(spec: &MazeSpec, state: &EnvState, tier: Tier) -> Result<Self> {
        let (kp, noise) = match tier {
            Tier::Expert => (Self::EXPERT_KP, Self::EXPERT_NOISE),
            Tier::Medium => (Self::EXPERT_KP / 2.0, Self::MEDIUM_NOISE),
        };
        let here = spec
            .cell_at(state.pos[0], state.pos[1])
            .ok_or_else(|| Error::Config("state outside the maze".into()))?;
        let cells = plan_waypoints(spec, here, spec.target_cell())?;
        let waypoints = cells.iter().map(|&(r, c)| spec.cell_center(r, c)).collect();
        Ok(Self::with_waypoints(waypoints, kp, noise, 0.3 * spec.config.cell_size))
    }

    pub fn with_waypoints(waypoints: Vec<[f64; 2]>, kp: f64, noise_std: f64, advance_radius: f64) -> Self {
        assert!(!waypoints.is_empty(), "expert needs at least one waypoint");
        Self {
            waypoints,
            cursor: 0,
            kp,
            kd: Self::KD,
            noise_std,
            advance_radius,
        }
    }

    pub fn with_gains(mut self, kp: f64, kd: f64, noise_std: f64) -> Self {
        self.kp = kp;
        self.kd = kd;
        self.noise_std = noise_std;
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.noise_std = 0.0;
        self
    }

    pub fn current_waypoint(&self) -> [f64; 2] {
        self.waypoints[self.cursor]
    }

    pub fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, rng: &mut R) -> Action {
        while self.cursor + 1 < self.waypoints.len() {
            let w = self.waypoints[self.cursor];
            if libm::hypot(w[0] - state.pos[0], w[1] - state.pos[1]) <= self.advance_radius {
                self.cursor += 1;
            } else {
                break;
            }
        }
        let w = self.waypoints[self.cursor];
        let mut a = [0.0; 2];
        for i in 0..2 {
            a[i] = self.kp * (w[i] - state.pos[i]) - self.kd * state.vel[i];
        }
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("positive std");
            for ai in &mut a {
                *ai += noise.sample(rng);
            }
        }
        Action::new(a[0], a[1])
    }
}

/// Anything that maps a state to an action, possibly stochastically.
pub trait Controller {
    fn act(&mut self, state: &EnvState, rng: &mut ChaCha8Rng) -> Action;
}

impl Controller for ExpertController {
    fn act(&mut self, state: &EnvState, rng: &mut ChaCha8Rng) -> Action {
        ExpertController::act(self, state, rng)
    }
}

/// Uniform actions in `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomController;

impl Controller for RandomController {
    fn act(&mut self, _state: &EnvState, rng: &mut ChaCha8Rng) -> Action {
        Action::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }
}

/// Summary of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub ret: f64,
    pub success: bool,
    pub wall_contact: bool,
}

/// Runs one episode from a reset drawn from `rng`; `k` labels the transitions.
pub fn rollout<C: Controller>(spec: &MazeSpec, controller: &mut C, k: usize, rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let start = env::reset_with(spec, rng);
    rollout_from(spec, start, controller, k, rng)
}

pub fn rollout_from<C: Controller>(
    spec: &MazeSpec,
    start: EnvState,
    controller: &mut C,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let mut state = start;
    let mut transitions = Vec::new();
    let mut ret = 0.0;
    let mut wall_contact = false;
    let mut success = false;
    loop {
        let a = controller.act(&state, rng);
        let out = env::step(spec, &state, a)?;
        ret += out.reward;
        wall_contact |= out.wall_contact;
        success |= env::reached_target(spec, out.state.pos);
        transitions.push(Transition {
            k,
            j: state.step,
            s: state.to_vec(),
            a: a.0,
            sp: out.state.to_vec(),
            r: out.reward,
            done: out.done,
        });
        state = out.state;
        if out.done {
            break;
        }
    }
    Ok(Rollout {
        transitions,
        ret,
        success,
        wall_contact,
    })
}

/// Mean return and success rate of the scripted controller for `tier`.
pub fn evaluate_expert(spec: &MazeSpec, tier: Tier, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut wins = 0usize;
    for _ in 0..episodes {
        let start = env::reset_with(spec, &mut rng);
        let mut ctrl = ExpertController::new(spec, &start, tier)?;
        let r = rollout_from(spec, start, &mut ctrl, 0, &mut rng)?;
        total += r.ret;
        wins += usize::from(r.success);
    }
    Ok((total / episodes as f64, wins as f64 / episodes as f64))
}

/// Mean return and success rate of uniform-random actions.
pub fn evaluate_random(spec: &MazeSpec, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut wins = 0usize;
    for _ in 0..episodes {
        let r = rollout(spec, &mut RandomController, 0, &mut rng)?;
        total += r.ret;
        wins += usize::from(r.success);
    }
    Ok((total / episodes as f64, wins as f64 / episodes as f64))
}

/// Default trajectory count per built-in maze; 200 for anything else.
pub fn default_dataset_size(maze: &str) -> usize {
    match maze {
        "medium" => 400,
        "large" => 800,
        _ => 200,
    }
}

/// Records `k` episodes of the `tier` controller and measures the score
/// baselines.
pub fn collect(spec: &MazeSpec, tier: Tier, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    for traj in 0..k {
        let start = env::reset_with(spec, &mut rng);
        let mut ctrl = ExpertController::new(spec, &start, tier)?;
        let r = rollout_from(spec, start, &mut ctrl, traj, &mut rng)?;
        total += r.ret;
        transitions.extend(r.transitions);
    }
    let baseline_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let (random_mean_return, _) = evaluate_random(spec, BASELINE_EPISODES, baseline_seed)?;
    let (expert_mean_return, _) = evaluate_expert(spec, Tier::Expert, BASELINE_EPISODES, baseline_seed)?;
    let meta = DatasetMeta {
        tier,
        k,
        maze: spec.name.clone(),
        seed,
        mean_return: total / k as f64,
        random_mean_return,
        expert_mean_return,
    };
    Dataset::new(meta, transitions)
}

/// `100 · (score − random) / (expert − random)`.
pub fn normalized_score(score: f64, random_score: f64, expert_score: f64) -> Result<f64> {
    let denom = expert_score - random_score;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateScore(expert_score));
    }
    Ok(100.0 * (score - random_score) / denom)
}
