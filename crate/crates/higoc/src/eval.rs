//! Episode evaluation of trained agents.

use std::time::Instant;

use higoc_core::cvae::Cvae;
use higoc_core::env::MazeSpec;
use higoc_core::expert::rollout;
use higoc_core::flat::{FlatAgent, FlatController};
use higoc_core::gcrl::GoalAgent;
use higoc_core::planner::{plan, run_episode_with, Episode, PlannerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Per-episode seed; identical across agents so every agent faces the same
/// start states.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (episode as u64).wrapping_add(0x632b_e59b_d9b4_e019)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub successes: usize,
    /// Episodes with at least one wall contact.
    pub contact_episodes: usize,
    pub plan_calls: usize,
    pub plan_seconds: f64,
}

impl EvalSummary {
    pub fn episodes(&self) -> usize {
        self.returns.len()
    }

    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes().max(1) as f64
    }

    pub fn contact_rate(&self) -> f64 {
        self.contact_episodes as f64 / self.episodes().max(1) as f64
    }

    fn push(&mut self, ret: f64, success: bool, contact: bool) {
        self.returns.push(ret);
        self.successes += usize::from(success);
        self.contact_episodes += usize::from(contact);
    }
}

/// One planner episode with wall-clock timing of every planning call.
pub fn higoc_episode(
    spec: &MazeSpec,
    agent: &GoalAgent,
    cvae: &Cvae,
    cfg: &PlannerConfig,
    seed: u64,
    seconds: &mut f64,
) -> Result<Episode> {
    cfg.validate()?;
    let ep = run_episode_with(spec, agent, cfg.greedy, seed, |s, rng| {
        let t = Instant::now();
        let p = plan(agent, cvae, s, cfg, rng);
        *seconds += t.elapsed().as_secs_f64();
        Ok(p)
    })?;
    Ok(ep)
}

pub fn evaluate_higoc(
    spec: &MazeSpec,
    agent: &GoalAgent,
    cvae: &Cvae,
    cfg: &PlannerConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut out = EvalSummary::default();
    for e in 0..episodes {
        let ep = higoc_episode(spec, agent, cvae, cfg, episode_seed(seed, e), &mut out.plan_seconds)?;
        out.plan_calls += ep.plans.len();
        out.push(ep.ret, ep.success, ep.wall_contacts > 0);
    }
    Ok(out)
}

/// Greedy flat-policy episodes.
pub fn evaluate_flat(spec: &MazeSpec, agent: &FlatAgent, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let mut out = EvalSummary::default();
    let mut ctrl = FlatController { agent, greedy: true };
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, e));
        let r = rollout(spec, &mut ctrl, 0, &mut rng)?;
        out.push(r.ret, r.success, r.wall_contact);
    }
    Ok(out)
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for fewer
/// than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
