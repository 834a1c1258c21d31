//! Goal-conditioned offline training: hindsight relabeling with deadline
//! (TDM) rewards, perturbed goals from the CVAE, and the conservative
//! soft actor-critic update.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::{goal_pairs, Cvae, CvaeConfig, CvaeTrainer, ElboStats};
use crate::dataset::Dataset;
use crate::env::{distance, Action, StateScale, StateVec, ACTION_DIM};
use crate::error::{Error, Result};
use crate::sac::{ActorStats, CriticBatch, CriticStats, SacConfig, SacLearner, SacNets};

/// Observation width of the goal-conditioned networks:
/// scaled state, scaled goal offset, remaining-steps fraction.
pub const GOAL_OBS_DIM: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the deadline reward.
    pub beta: f64,
    /// Goal-sampling period in low-level steps.
    pub n: usize,
    /// Probability of replacing a relabeled goal by a perturbed one.
    pub eta: f64,
    /// Std of the latent noise used for perturbed goals.
    pub eps_scale: f64,
    pub batch: usize,
    /// Gradient steps of the RL loop.
    pub steps: usize,
    /// CVAE pre-training steps.
    pub cvae_steps: usize,
    pub target_update: usize,
    pub tau: f64,
    /// Largest future offset for relabeled goals; `None` caps at `n`.
    pub her_window: Option<usize>,
    /// Per-step discount inside a segment. `1.0` keeps segments undiscounted.
    pub segment_discount: f64,
    /// Training-log row period.
    pub log_every: usize,
    pub sac: SacConfig,
    pub cvae: CvaeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            n: 10,
            eta: 0.3,
            eps_scale: 0.5,
            batch: 256,
            steps: 60_000,
            cvae_steps: 10_000,
            target_update: 1,
            tau: 0.005,
            her_window: None,
            segment_discount: 1.0,
            log_every: 1000,
            sac: SacConfig::default(),
            cvae: CvaeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if self.n == 0 {
            return bad("N must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 || self.target_update == 0 {
            return bad("batch size and target update period must be positive");
        }
        if self.her_window == Some(0) {
            return bad("HER window must be at least 1");
        }
        Ok(())
    }

    fn window(&self) -> usize {
        self.her_window.unwrap_or(self.n)
    }
}

/// A dataset transition with a hindsight goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRelabeledSample {
    pub s: StateVec,
    pub a: [f64; 2],
    pub sp: StateVec,
    pub g: StateVec,
    /// Steps remaining until the goal deadline after this transition.
    pub h: usize,
    pub r_env: f64,
    pub r_tdm: f64,
    pub r_g: f64,
    pub perturbed: bool,
}

impl GoalRelabeledSample {
    pub fn terminal(&self) -> bool {
        self.h == 0
    }
}

/// `r_TDM = −d(s', g)` at the deadline, zero before it.
pub fn tdm_reward(sp: &StateVec, g: &StateVec, h: usize) -> f64 {
    if h == 0 {
        -distance(sp, g)
    } else {
        0.0
    }
}

/// Value of a segment step: `r_g` alone at the deadline, otherwise `r_g` plus
/// the value of the rest of the segment.
pub fn segment_backup(r_g: f64, h: usize, next_value: f64) -> f64 {
    if h == 0 {
        r_g
    } else {
        r_g + next_value
    }
}

/// Relabels transition `index` of `dataset` with a goal `τ − (j + 1)` steps
/// past its next state, `τ` uniform in `[j + 1, min(j + window, len)]`.
pub fn her_relabel<R: Rng + ?Sized>(
    dataset: &Dataset,
    index: usize,
    rng: &mut R,
    cvae: Option<&Cvae>,
    cfg: &TrainConfig,
) -> GoalRelabeledSample {
    let t = &dataset.transitions()[index];
    let len = dataset.trajectory_range(t.k).len();
    let hi = (t.j + cfg.window()).min(len);
    let tau = rng.random_range(t.j + 1..=hi);
    let h = tau - (t.j + 1);
    let mut g = dataset.state(t.k, tau);
    let mut perturbed = false;
    if let Some(model) = cvae {
        if cfg.eta > 0.0 && rng.random::<f64>() < cfg.eta {
            let prev = dataset.state(t.k, tau.saturating_sub(cfg.n));
            g = model.perturb_goal(&g, &prev, cfg.eps_scale, rng);
            perturbed = true;
        }
    }
    let r_tdm = tdm_reward(&t.sp, &g, h);
    GoalRelabeledSample {
        s: t.s,
        a: t.a,
        sp: t.sp,
        g,
        h,
        r_env: t.r,
        r_tdm,
        r_g: t.r + cfg.beta * r_tdm,
        perturbed,
    }
}

pub fn relabel_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    size: usize,
    rng: &mut R,
    cvae: Option<&Cvae>,
    cfg: &TrainConfig,
) -> Vec<GoalRelabeledSample> {
    let total = dataset.transitions().len();
    (0..size)
        .map(|_| {
            let i = rng.random_range(0..total);
            her_relabel(dataset, i, rng, cvae, cfg)
        })
        .collect()
}

/// Goal-conditioned critic and policy with their input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalAgent {
    pub nets: SacNets,
    pub scale: StateScale,
    /// Segment length the remaining-steps input is normalized by.
    pub n: usize,
}

impl GoalAgent {
    pub fn new<R: Rng + ?Sized>(scale: StateScale, n: usize, cfg: &SacConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            nets: SacNets::new(GOAL_OBS_DIM, cfg, rng)?,
            scale,
            n,
        })
    }

    /// `[s, g − s, h / N]` with states scaled.
    pub fn features(&self, s: &StateVec, g: &StateVec, h: usize) -> [f64; GOAL_OBS_DIM] {
        let sn = self.scale.normalize(s);
        let gn = self.scale.normalize(g);
        [
            sn[0],
            sn[1],
            sn[2],
            sn[3],
            gn[0] - sn[0],
            gn[1] - sn[1],
            gn[2] - sn[2],
            gn[3] - sn[3],
            h as f64 / self.n as f64,
        ]
    }

    /// Critic inputs and bootstrap targets' inputs for a relabeled batch.
    pub fn critic_batch(&self, samples: &[GoalRelabeledSample], segment_discount: f64) -> CriticBatch {
        let mut b = CriticBatch::default();
        for x in samples {
            b.obs.extend_from_slice(&self.features(&x.s, &x.g, x.h));
            b.actions.extend_from_slice(&x.a);
            b.rewards.push(x.r_g);
            b.next_obs
                .extend_from_slice(&self.features(&x.sp, &x.g, x.h.saturating_sub(1)));
            b.discounts.push(if x.h == 0 { 0.0 } else { segment_discount });
        }
        b
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &StateVec, g: &StateVec, h: usize, greedy: bool, rng: &mut R) -> Action {
        let obs = self.features(s, g, h);
        let a = if greedy {
            self.nets.greedy_actions(&obs)
        } else {
            self.nets.sample_actions(&obs, rng).0
        };
        Action::new(a[0], a[1])
    }

    /// `min(Q_1, Q_2)(s, g, h, a)` per row.
    pub fn q(&self, s: &[StateVec], g: &[StateVec], h: usize, a: &[[f64; 2]]) -> Vec<f64> {
        let mut obs = Vec::with_capacity(s.len() * GOAL_OBS_DIM);
        for (si, gi) in s.iter().zip(g) {
            obs.extend_from_slice(&self.features(si, gi, h));
        }
        let acts: Vec<f64> = a.iter().flatten().copied().collect();
        self.nets.q_values(&obs, &acts)
    }

    /// Mean over `noise.len()` policy draws of `min(Q_1, Q_2)(s, g, h, a)`,
    /// one value per `(from, to)` pair. Each entry of `noise` is a standard
    /// normal pair shared by every row, so candidates are compared under the
    /// same draws.
    pub fn value_with_noise(&self, from: &[StateVec], to: &[StateVec], h: usize, noise: &[[f64; 2]]) -> Vec<f64> {
        let n = from.len();
        let mut obs = Vec::with_capacity(n * GOAL_OBS_DIM);
        for (s, g) in from.iter().zip(to) {
            obs.extend_from_slice(&self.features(s, g, h));
        }
        let (mean, log_std) = self.nets.policy_heads(&obs);
        let k = noise.len().max(1);
        let mut rep_obs = Vec::with_capacity(n * k * GOAL_OBS_DIM);
        let mut acts = Vec::with_capacity(n * k * ACTION_DIM);
        for i in 0..n {
            let o = &obs[i * GOAL_OBS_DIM..(i + 1) * GOAL_OBS_DIM];
            for j in 0..k {
                rep_obs.extend_from_slice(o);
                for d in 0..ACTION_DIM {
                    let e = noise.get(j).map_or(0.0, |e| e[d]);
                    let m = i * ACTION_DIM + d;
                    acts.push(libm::tanh(mean[m] + libm::exp(log_std[m]) * e));
                }
            }
        }
        let q = self.nets.q_values(&rep_obs, &acts);
        q.chunks_exact(k).map(|c| c.iter().sum::<f64>() / k as f64).collect()
    }

    /// Segment-start value `V(s, g)` with `h = N − 1`, averaged over `samples`
    /// policy draws.
    pub fn value_estimate<R: Rng + ?Sized>(&self, from: &StateVec, to: &StateVec, samples: usize, rng: &mut R) -> f64 {
        let noise = standard_pairs(samples, rng);
        self.value_with_noise(&[*from], &[*to], self.n - 1, &noise)[0]
    }
}

pub fn standard_pairs<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..k)
        .map(|_| [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)])
        .collect()
}

/// One logged window of training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub critic_loss: f64,
    pub cql_penalty: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub eval_ns: Option<f64>,
}

#[derive(Debug, Default)]
pub(crate) struct Window {
    critic: CriticStats,
    actor: ActorStats,
    count: usize,
}

impl Window {
    pub(crate) fn add(&mut self, c: CriticStats, a: ActorStats) {
        self.critic.td_loss += c.td_loss;
        self.critic.cql_penalty += c.cql_penalty;
        self.actor.loss += a.loss;
        self.actor.entropy += a.entropy;
        self.count += 1;
    }

    pub(crate) fn flush(&mut self, step: usize) -> LogRow {
        let k = self.count.max(1) as f64;
        let row = LogRow {
            step,
            critic_loss: self.critic.td_loss / k,
            cql_penalty: self.critic.cql_penalty / k,
            actor_loss: self.actor.loss / k,
            entropy: self.actor.entropy / k,
            eval_ns: None,
        };
        *self = Self::default();
        row
    }
}

/// Everything [`train`] produces.
#[derive(Debug, Clone)]
pub struct Trained {
    pub agent: GoalAgent,
    pub cvae: Cvae,
    pub cvae_log: Vec<ElboStats>,
    pub log: Vec<LogRow>,
}

/// Pre-trains the CVAE on `N`-step goal pairs for `cvae_steps`.
pub fn pretrain_cvae(dataset: &Dataset, scale: StateScale, cfg: &TrainConfig, seed: u64) -> Result<(Cvae, Vec<ElboStats>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ae);
    let pairs = goal_pairs(dataset, cfg.n);
    if pairs.is_empty() {
        return Err(Error::Config("no trajectory is longer than N steps".into()));
    }
    let model = Cvae::new(scale, &cfg.cvae, &mut rng)?;
    let mut trainer = CvaeTrainer::new(model, cfg.cvae.clone());
    let log = trainer.train(&pairs, cfg.cvae_steps, &mut rng)?;
    Ok((trainer.model, log))
}

/// CVAE pre-training followed by the RL loop.
pub fn train(dataset: &Dataset, scale: StateScale, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    let (cvae, cvae_log) = pretrain_cvae(dataset, scale, cfg, seed)?;
    let (agent, log) = train_agent(dataset, &cvae, cfg, seed, |_, _| None)?;
    Ok(Trained {
        agent,
        cvae,
        cvae_log,
        log,
    })
}

/// The RL loop on top of an already trained CVAE. `eval` is called at every
/// log row and may attach a normalized score.
pub fn train_agent<F>(dataset: &Dataset, cvae: &Cvae, cfg: &TrainConfig, seed: u64, mut eval: F) -> Result<(GoalAgent, Vec<LogRow>)>
where
    F: FnMut(usize, &GoalAgent) -> Option<f64>,
{
    cfg.validate()?;
    if dataset.transitions().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = GoalAgent::new(cvae.scale, cfg.n, &cfg.sac, &mut rng)?;
    let scale = agent.scale;
    let mut learner = SacLearner::new(agent.nets, cfg.sac.clone());
    let mut shell = GoalAgent {
        nets: learner.nets.clone(),
        scale,
        n: cfg.n,
    };
    let mut log = Vec::new();
    let mut window = Window::default();
    for step in 1..=cfg.steps {
        let samples = relabel_batch(dataset, cfg.batch, &mut rng, Some(cvae), cfg);
        let batch = shell.critic_batch(&samples, cfg.segment_discount);
        let c = learner.critic_step(&batch, &mut rng)?;
        let a = learner.actor_step(&batch.obs, &mut rng)?;
        if step % cfg.target_update == 0 {
            learner.nets.soft_target_update(cfg.tau);
        }
        window.add(c, a);
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            let mut row = window.flush(step);
            shell.nets = learner.nets.clone();
            row.eval_ns = eval(step, &shell);
            log.push(row);
        }
    }
    shell.nets = learner.nets;
    Ok((shell, log))
}

/// Single-sample bootstrap target `y` under the given nets.
pub fn td_target<R: Rng + ?Sized>(agent: &GoalAgent, sample: &GoalRelabeledSample, cfg: &TrainConfig, rng: &mut R) -> f64 {
    let learner = SacLearner::new(agent.nets.clone(), cfg.sac.clone());
    let batch = agent.critic_batch(core::slice::from_ref(sample), cfg.segment_discount);
    learner.td_targets(&batch, rng)[0]
}

/// Reference values used by probes: `V(s_t, s_{t+N})` along dataset
/// trajectories next to `V(s_t, perturbed goal)`.
pub fn ood_probe<R: Rng + ?Sized>(
    agent: &GoalAgent,
    cvae: &Cvae,
    dataset: &Dataset,
    probes: usize,
    eps_scale: f64,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let pairs = goal_pairs(dataset, agent.n);
    let mut from = Vec::with_capacity(probes);
    let mut data_goals = Vec::with_capacity(probes);
    let mut pert_goals = Vec::with_capacity(probes);
    for _ in 0..probes {
        let p = pairs[rng.random_range(0..pairs.len())];
        from.push(p.prev);
        data_goals.push(p.next);
        pert_goals.push(cvae.perturb_goal(&p.next, &p.prev, eps_scale, rng));
    }
    let noise = standard_pairs(samples, rng);
    let h = agent.n - 1;
    let vd = agent.value_with_noise(&from, &data_goals, h, &noise);
    let vp = agent.value_with_noise(&from, &pert_goals, h, &noise);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&vd), mean(&vp))
}
