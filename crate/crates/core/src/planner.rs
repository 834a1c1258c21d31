//! High-level subgoal selection: the cross-entropy method over sequences of
//! CVAE latents, scored by segment values of the low-level agent, run as a
//! receding-horizon controller.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cvae::{log_prior, Cvae};
use crate::env::{self, Action, EnvState, MazeSpec, StateVec};
use crate::error::{Error, Result};
use crate::gcrl::{standard_pairs, GoalAgent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Look-ahead in subgoals.
    pub horizon: usize,
    /// Weight of the latent log-prior in the objective.
    pub lambda: f64,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    /// Policy draws per value estimate.
    pub value_samples: usize,
    /// Execute the policy mean instead of sampling.
    pub greedy: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            lambda: 10.0,
            population: 128,
            elites: 16,
            iterations: 10,
            init_std: 1.0,
            value_samples: 4,
            greedy: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 {
            return Err(Error::Config("horizon and iterations must be at least 1".into()));
        }
        if self.elites == 0 || self.elites >= self.population {
            return Err(Error::Config("need 1 <= elites < population".into()));
        }
        Ok(())
    }
}

/// Minimum standard deviation kept by the CEM refit.
pub const MIN_STD: f64 = 1e-3;

/// Segment values between consecutive goals.
pub trait GoalValue {
    /// `V(from_i, to_i)` for every row, averaging over the shared standard
    /// normal `noise` draws where the value is stochastic.
    fn values(&self, from: &[StateVec], to: &[StateVec], noise: &[[f64; 2]]) -> Vec<f64>;
}

impl GoalValue for GoalAgent {
    fn values(&self, from: &[StateVec], to: &[StateVec], noise: &[[f64; 2]]) -> Vec<f64> {
        self.value_with_noise(from, to, self.n - 1, noise)
    }
}

/// A latent sequence, its decoded goals and its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCandidate {
    pub z: Vec<f64>,
    pub goals: Vec<StateVec>,
    pub value: f64,
}

/// `V(s_0, g_1) + Σ V(g_i, g_{i+1}) + λ · log p(z)` for one latent sequence.
pub fn objective<V: GoalValue + ?Sized>(
    value: &V,
    cvae: &Cvae,
    s0: &StateVec,
    z: &[f64],
    lambda: f64,
    noise: &[[f64; 2]],
) -> (f64, Vec<StateVec>) {
    let goals = cvae.decode_sequence(s0, z);
    let mut from = Vec::with_capacity(goals.len());
    from.push(*s0);
    from.extend_from_slice(&goals[..goals.len() - 1]);
    let v: f64 = value.values(&from, &goals, noise).iter().sum();
    (v + lambda * log_prior(z), goals)
}

/// [`objective`] for a population stored row by row in `zs`, decoding all
/// candidates in lockstep.
pub fn objective_batch<V: GoalValue + ?Sized>(
    value: &V,
    cvae: &Cvae,
    s0: &StateVec,
    zs: &[f64],
    horizon: usize,
    lambda: f64,
    noise: &[[f64; 2]],
) -> (Vec<f64>, Vec<Vec<StateVec>>) {
    let d = cvae.latent_dim;
    let dim = horizon * d;
    let p = zs.len() / dim;
    let mut prev = vec![*s0; p];
    let mut goals: Vec<Vec<StateVec>> = vec![Vec::with_capacity(horizon); p];
    let mut from = Vec::with_capacity(p * horizon);
    let mut to = Vec::with_capacity(p * horizon);
    let mut step_z = vec![0.0; p * d];
    for i in 0..horizon {
        for c in 0..p {
            step_z[c * d..(c + 1) * d].copy_from_slice(&zs[c * dim + i * d..c * dim + (i + 1) * d]);
        }
        let next = cvae.decode_rows(&step_z, &prev);
        for c in 0..p {
            from.push(prev[c]);
            to.push(next[c]);
            goals[c].push(next[c]);
        }
        prev = next;
    }
    let v = value.values(&from, &to, noise);
    // rows were pushed step-major: row i * p + c
    let mut out = vec![0.0; p];
    for i in 0..horizon {
        for c in 0..p {
            out[c] += v[i * p + c];
        }
    }
    for (c, o) in out.iter_mut().enumerate() {
        *o += lambda * log_prior(&zs[c * dim..(c + 1) * dim]);
    }
    (out, goals)
}

/// Result of a CEM run.
#[derive(Debug, Clone, PartialEq)]
pub struct CemResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Maximizes a black-box batch objective. `f` receives the population row by
/// row (`population x dim`) and returns one value per row. Each population
/// holds the current mean plus `population − 1` Gaussian draws, so the first
/// one contains the prior mode. The best sample ever evaluated is returned,
/// not the final mean.
pub fn cem_optimize<R, F>(dim: usize, cfg: &PlannerConfig, rng: &mut R, mut f: F) -> CemResult
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let p = cfg.population;
    let e = cfg.elites.clamp(1, p);
    let mut mean = vec![0.0; dim];
    let mut std = vec![cfg.init_std; dim];
    let mut best = vec![0.0; dim];
    let mut best_value = f64::NEG_INFINITY;
    let mut pop = vec![0.0; p * dim];
    for _ in 0..cfg.iterations {
        // row 0 is the current mean itself
        pop[..dim].copy_from_slice(&mean);
        for row in pop.chunks_exact_mut(dim).skip(1) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                let n: f64 = rng.sample(StandardNormal);
                *x = m + s * n;
            }
        }
        let values = f(&pop);
        assert_eq!(values.len(), p, "objective must score every candidate");
        let mut order: Vec<usize> = (0..p).collect();
        // NaN scores sort last
        order.sort_by(|&a, &b| {
            let (va, vb) = (values[a], values[b]);
            vb.partial_cmp(&va).unwrap_or_else(|| va.is_nan().cmp(&vb.is_nan()))
        });
        if values[order[0]] > best_value {
            best_value = values[order[0]];
            best.copy_from_slice(&pop[order[0] * dim..(order[0] + 1) * dim]);
        }
        for k in 0..dim {
            let m = order[..e].iter().map(|&i| pop[i * dim + k]).sum::<f64>() / e as f64;
            let v = order[..e].iter().map(|&i| (pop[i * dim + k] - m).powi(2)).sum::<f64>() / e as f64;
            mean[k] = m;
            std[k] = libm::sqrt(v).max(MIN_STD);
        }
    }
    CemResult {
        best,
        best_value,
        mean,
        std,
    }
}

/// The CEM-optimal latent sequence from `s0` and its decoded goals.
pub fn plan<V: GoalValue + ?Sized, R: Rng + ?Sized>(
    value: &V,
    cvae: &Cvae,
    s0: &StateVec,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> PlanCandidate {
    let noise = standard_pairs(cfg.value_samples, rng);
    let dim = cfg.horizon * cvae.latent_dim;
    let res = cem_optimize(dim, cfg, rng, |zs| {
        objective_batch(value, cvae, s0, zs, cfg.horizon, cfg.lambda, &noise).0
    });
    let goals = cvae.decode_sequence(s0, &res.best);
    PlanCandidate {
        z: res.best,
        goals,
        value: res.best_value,
    }
}

/// First subgoal of the CEM-optimal plan.
pub fn plan_subgoal<V: GoalValue + ?Sized, R: Rng + ?Sized>(
    value: &V,
    cvae: &Cvae,
    s0: &StateVec,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> StateVec {
    plan(value, cvae, s0, cfg, rng).goals[0]
}

/// One low-level step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub state: StateVec,
    pub action: [f64; 2],
    pub goal: StateVec,
    /// Index of the planning call that produced `goal`.
    pub plan: usize,
    pub reward: f64,
    pub wall_contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ret: f64,
    pub success: bool,
    pub wall_contacts: usize,
    pub steps: usize,
    pub plans: Vec<PlanCandidate>,
    pub trace: Vec<TraceStep>,
}

/// Receding-horizon loop: plan from the current state every `n` steps and
/// follow the first subgoal with the low-level policy, counting down `h`
/// from `n − 1` to 0. `planner` produces the plan for a state.
pub fn run_episode_with<F>(spec: &MazeSpec, agent: &GoalAgent, greedy: bool, seed: u64, mut planner: F) -> Result<Episode>
where
    F: FnMut(&StateVec, &mut ChaCha8Rng) -> Result<PlanCandidate>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state: EnvState = env::reset_with(spec, &mut rng);
    let n = agent.n;
    let mut ep = Episode {
        ret: 0.0,
        success: false,
        wall_contacts: 0,
        steps: 0,
        plans: Vec::new(),
        trace: Vec::new(),
    };
    'outer: loop {
        let plan = planner(&state.to_vec(), &mut rng)?;
        let goal = plan.goals[0];
        ep.plans.push(plan);
        for h in (0..n).rev() {
            let a: Action = agent.act(&state.to_vec(), &goal, h, greedy, &mut rng);
            let out = env::step(spec, &state, a)?;
            ep.ret += out.reward;
            ep.wall_contacts += usize::from(out.wall_contact);
            ep.success |= env::reached_target(spec, out.state.pos);
            ep.trace.push(TraceStep {
                step: state.step,
                state: state.to_vec(),
                action: a.0,
                goal,
                plan: ep.plans.len() - 1,
                reward: out.reward,
                wall_contact: out.wall_contact,
            });
            state = out.state;
            ep.steps += 1;
            if out.done {
                break 'outer;
            }
        }
    }
    Ok(ep)
}

/// [`run_episode_with`] using [`plan`].
pub fn run_episode(spec: &MazeSpec, agent: &GoalAgent, cvae: &Cvae, cfg: &PlannerConfig, seed: u64) -> Result<Episode> {
    cfg.validate()?;
    run_episode_with(spec, agent, cfg.greedy, seed, |s, rng| Ok(plan(agent, cvae, s, cfg, rng)))
}
