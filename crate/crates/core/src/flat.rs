//! Non-hierarchical baseline: conservative soft actor-critic on raw
//! environment rewards with a discounted infinite-horizon backup.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{reached_target, Action, EnvState, MazeSpec, StateScale, STATE_DIM};
use crate::error::{Error, Result};
use crate::expert::Controller;
use crate::gcrl::{LogRow, Window};
use crate::sac::{CriticBatch, SacConfig, SacLearner, SacNets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatConfig {
    pub gamma: f64,
    pub batch: usize,
    pub steps: usize,
    pub target_update: usize,
    pub tau: f64,
    pub log_every: usize,
    pub sac: SacConfig,
}

impl Default for FlatConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch: 256,
            steps: 60_000,
            target_update: 1,
            tau: 0.005,
            log_every: 1000,
            sac: SacConfig::default(),
        }
    }
}

impl FlatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if self.batch == 0 || self.target_update == 0 {
            return Err(Error::Config("batch and target_update must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("tau must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `r + γ V(s')`, or `r` alone when `s'` is terminal.
pub fn discounted_backup(r: f64, terminal: bool, gamma: f64, next_value: f64) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * next_value
    }
}

/// State-only critic and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatAgent {
    pub nets: SacNets,
    pub scale: StateScale,
}

impl FlatAgent {
    pub fn new<R: Rng + ?Sized>(scale: StateScale, cfg: &SacConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            nets: SacNets::new(STATE_DIM, cfg, rng)?,
            scale,
        })
    }

    /// Critic batch from dataset transitions. Only reaching the target ends
    /// the bootstrap; time-limit truncation does not.
    pub fn critic_batch(&self, spec: &MazeSpec, dataset: &Dataset, indices: &[usize], gamma: f64) -> CriticBatch {
        let mut b = CriticBatch::default();
        for &i in indices {
            let t = &dataset.transitions()[i];
            b.obs.extend_from_slice(&self.scale.normalize(&t.s));
            b.actions.extend_from_slice(&t.a);
            b.rewards.push(t.r);
            b.next_obs.extend_from_slice(&self.scale.normalize(&t.sp));
            let terminal = reached_target(spec, [t.sp[0], t.sp[1]]);
            b.discounts.push(if terminal { 0.0 } else { gamma });
        }
        b
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &EnvState, greedy: bool, rng: &mut R) -> Action {
        let obs = self.scale.normalize(&state.to_vec());
        let a = if greedy {
            self.nets.greedy_actions(&obs)
        } else {
            self.nets.sample_actions(&obs, rng).0
        };
        Action::new(a[0], a[1])
    }
}

/// [`FlatAgent`] as an episode controller.
#[derive(Debug, Clone, Copy)]
pub struct FlatController<'a> {
    pub agent: &'a FlatAgent,
    pub greedy: bool,
}

impl Controller for FlatController<'_> {
    fn act(&mut self, state: &EnvState, rng: &mut ChaCha8Rng) -> Action {
        self.agent.act(state, self.greedy, rng)
    }
}

pub fn train_flat(dataset: &Dataset, spec: &MazeSpec, cfg: &FlatConfig, seed: u64) -> Result<(FlatAgent, Vec<LogRow>)> {
    cfg.validate()?;
    let total = dataset.transitions().len();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = FlatAgent::new(StateScale::for_maze(spec), &cfg.sac, &mut rng)?;
    let scale = agent.scale;
    let mut learner = SacLearner::new(agent.nets, cfg.sac.clone());
    let shell = FlatAgent {
        nets: learner.nets.clone(),
        scale,
    };
    let mut log = Vec::new();
    let mut window = Window::default();
    let mut idx = Vec::with_capacity(cfg.batch);
    for step in 1..=cfg.steps {
        idx.clear();
        idx.extend((0..cfg.batch).map(|_| rng.random_range(0..total)));
        let batch = shell.critic_batch(spec, dataset, &idx, cfg.gamma);
        let c = learner.critic_step(&batch, &mut rng)?;
        let a = learner.actor_step(&batch.obs, &mut rng)?;
        if step % cfg.target_update == 0 {
            learner.nets.soft_target_update(cfg.tau);
        }
        window.add(c, a);
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            log.push(window.flush(step));
        }
    }
    Ok((
        FlatAgent {
            nets: learner.nets,
            scale,
        },
        log,
    ))
}
