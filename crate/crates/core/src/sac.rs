//! Twin-critic soft actor-critic with a conservative (logsumexp) critic
//! penalty, operating on flat observation feature vectors.
//!
//! Both the goal-conditioned agent and the flat baseline are thin feature
//! builders on top of [`SacLearner`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::{softplus, Activation, Adam, Graph, Mlp, Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2: f64 = core::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    /// Weight of the conservative penalty; zero gives plain TD learning.
    pub alpha_cql: f64,
    /// Uniform and policy action draws per state in the penalty, each.
    pub cql_samples: usize,
    pub target_entropy: f64,
    /// Subtract `alpha · log π(a'|s')` inside the bootstrap.
    pub backup_entropy: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            critic_lr: 3e-4,
            actor_lr: 1e-4,
            alpha_lr: 1e-4,
            init_alpha: 0.1,
            alpha_cql: 1.0,
            cql_samples: 10,
            target_entropy: -(ACTION_DIM as f64),
            backup_entropy: true,
        }
    }
}

/// Online critics, their target copies, the policy and the entropy
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacNets {
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub policy: Mlp,
    pub log_alpha: f64,
    pub obs_dim: usize,
}

fn squash_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (libm::tanh(raw) + 1.0)
}

/// `ln(1 − tanh²u)` evaluated without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

impl SacNets {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, cfg: &SacConfig, rng: &mut R) -> Result<Self> {
        let h = cfg.hidden;
        let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
        let q0 = Mlp::new(&[obs_dim + ACTION_DIM, h, h, 1], &acts, rng)?;
        let q1 = Mlp::new(&[obs_dim + ACTION_DIM, h, h, 1], &acts, rng)?;
        let policy = Mlp::new(&[obs_dim, h, h, 2 * ACTION_DIM], &acts, rng)?;
        Ok(Self {
            targets: [q0.clone(), q1.clone()],
            critics: [q0, q1],
            policy,
            log_alpha: libm::log(cfg.init_alpha),
            obs_dim,
        })
    }

    pub fn alpha(&self) -> f64 {
        libm::exp(self.log_alpha)
    }

    /// Policy mean (pre-squash) and log standard deviation, row by row.
    pub fn policy_heads(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = obs.len() / self.obs_dim;
        let out = self.policy.forward_rows(n, obs);
        let mut mean = Vec::with_capacity(n * ACTION_DIM);
        let mut log_std = Vec::with_capacity(n * ACTION_DIM);
        for row in out.chunks_exact(2 * ACTION_DIM) {
            mean.extend_from_slice(&row[..ACTION_DIM]);
            log_std.extend(row[ACTION_DIM..].iter().map(|&r| squash_log_std(r)));
        }
        (mean, log_std)
    }

    /// `tanh` of the policy mean.
    pub fn greedy_actions(&self, obs: &[f64]) -> Vec<f64> {
        let (mean, _) = self.policy_heads(obs);
        mean.into_iter().map(libm::tanh).collect()
    }

    /// Reparameterized samples and their log-densities.
    pub fn sample_actions<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let (mean, log_std) = self.policy_heads(obs);
        let n = mean.len() / ACTION_DIM;
        let mut actions = Vec::with_capacity(mean.len());
        let mut logp = vec![0.0; n];
        for i in 0..n {
            for d in 0..ACTION_DIM {
                let k = i * ACTION_DIM + d;
                let e: f64 = rng.sample(StandardNormal);
                let u = mean[k] + libm::exp(log_std[k]) * e;
                actions.push(libm::tanh(u));
                logp[i] += -0.5 * e * e - log_std[k] - 0.5 * LN_2PI - log_one_minus_tanh_sq(u);
            }
        }
        (actions, logp)
    }

    fn critic_input(&self, obs: &[f64], actions: &[f64]) -> Vec<f64> {
        let n = obs.len() / self.obs_dim;
        let mut x = Vec::with_capacity(n * (self.obs_dim + ACTION_DIM));
        for (o, a) in obs.chunks_exact(self.obs_dim).zip(actions.chunks_exact(ACTION_DIM)) {
            x.extend_from_slice(o);
            x.extend_from_slice(a);
        }
        x
    }

    fn min_q(&self, nets: &[Mlp; 2], obs: &[f64], actions: &[f64]) -> Vec<f64> {
        let n = obs.len() / self.obs_dim;
        let x = self.critic_input(obs, actions);
        let a = nets[0].forward_rows(n, &x);
        let b = nets[1].forward_rows(n, &x);
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }

    /// `min(Q_1, Q_2)` of the online critics.
    pub fn q_values(&self, obs: &[f64], actions: &[f64]) -> Vec<f64> {
        self.min_q(&self.critics, obs, actions)
    }

    /// `min(Q̄_1, Q̄_2)` of the target critics.
    pub fn target_q_values(&self, obs: &[f64], actions: &[f64]) -> Vec<f64> {
        self.min_q(&self.targets, obs, actions)
    }

    /// Each critic's output separately.
    pub fn twin_q_values(&self, obs: &[f64], actions: &[f64]) -> [Vec<f64>; 2] {
        let n = obs.len() / self.obs_dim;
        let x = self.critic_input(obs, actions);
        [self.critics[0].forward_rows(n, &x), self.critics[1].forward_rows(n, &x)]
    }

    /// `θ̄ ← (1 − tau)·θ̄ + tau·θ` for both twins.
    pub fn soft_target_update(&mut self, tau: f64) {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.soft_update_from(c, tau);
        }
    }
}

/// Transitions already mapped to feature vectors. The bootstrap target is
/// `r + discount · (min Q̄(s', a') − alpha · log π(a'|s'))`, so a zero
/// discount cuts the bootstrap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticBatch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub discounts: Vec<f64>,
}

impl CriticBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriticStats {
    pub td_loss: f64,
    pub cql_penalty: f64,
    pub q_data: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    /// Monte-Carlo entropy estimate `−mean log π`.
    pub entropy: f64,
    pub alpha: f64,
}

/// Networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct SacLearner {
    pub nets: SacNets,
    pub cfg: SacConfig,
    critic_opt: [Adam; 2],
    actor_opt: Adam,
    alpha_opt: Adam,
}

impl SacLearner {
    pub fn new(nets: SacNets, cfg: SacConfig) -> Self {
        let critic_opt = [
            Adam::new(nets.critics[0].params(), cfg.critic_lr),
            Adam::new(nets.critics[1].params(), cfg.critic_lr),
        ];
        let actor_opt = Adam::new(nets.policy.params(), cfg.actor_lr);
        let alpha_opt = Adam::new(&[Tensor::vector(vec![nets.log_alpha])], cfg.alpha_lr);
        Self {
            nets,
            cfg,
            critic_opt,
            actor_opt,
            alpha_opt,
        }
    }

    /// Bootstrapped regression targets for a batch.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &CriticBatch, rng: &mut R) -> Vec<f64> {
        let (next_a, next_logp) = self.nets.sample_actions(&batch.next_obs, rng);
        let next_q = self.nets.target_q_values(&batch.next_obs, &next_a);
        let alpha = if self.cfg.backup_entropy { self.nets.alpha() } else { 0.0 };
        (0..batch.len())
            .map(|i| {
                let d = batch.discounts[i];
                if d == 0.0 {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + d * (next_q[i] - alpha * next_logp[i])
                }
            })
            .collect()
    }

    /// One step on both twins: mean squared TD error plus
    /// `alpha_cql · mean(logsumexp_a Q(s, a) − Q(s, a_data))`, the logsumexp
    /// running over the data action, `cql_samples` uniform actions and
    /// `cql_samples` policy actions.
    pub fn critic_step<R: Rng + ?Sized>(&mut self, batch: &CriticBatch, rng: &mut R) -> Result<CriticStats> {
        let targets = self.td_targets(batch, rng);
        self.critic_step_with_targets(batch, &targets, rng)
    }

    pub fn critic_step_with_targets<R: Rng + ?Sized>(
        &mut self,
        batch: &CriticBatch,
        targets: &[f64],
        rng: &mut R,
    ) -> Result<CriticStats> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let od = self.nets.obs_dim;
        let m = if self.cfg.alpha_cql > 0.0 { self.cfg.cql_samples } else { 0 };
        let per = 1 + 2 * m;
        let mut actions = Vec::with_capacity(n * per * ACTION_DIM);
        let policy_actions = if m > 0 {
            let mut rep = Vec::with_capacity(n * m * od);
            for o in batch.obs.chunks_exact(od) {
                for _ in 0..m {
                    rep.extend_from_slice(o);
                }
            }
            self.nets.sample_actions(&rep, rng).0
        } else {
            Vec::new()
        };
        let mut obs = Vec::with_capacity(n * per * od);
        for i in 0..n {
            let o = &batch.obs[i * od..(i + 1) * od];
            for _ in 0..per {
                obs.extend_from_slice(o);
            }
            actions.extend_from_slice(&batch.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
            for _ in 0..m * ACTION_DIM {
                actions.push(rng.random_range(-1.0..=1.0));
            }
            actions.extend_from_slice(&policy_actions[i * m * ACTION_DIM..(i + 1) * m * ACTION_DIM]);
        }
        let x = self.nets.critic_input(&obs, &actions);
        let mut g = Graph::new();
        let x = g.constant_matrix(n * per, od + ACTION_DIM, x);
        let y = g.constant_matrix(n, 1, targets.to_vec());
        let mut bound = Vec::with_capacity(2);
        let mut total: Option<Var> = None;
        let mut stats = CriticStats::default();
        for critic in &self.nets.critics {
            let b = critic.bind(&mut g, true);
            let q = b.forward(&mut g, x);
            let q = g.reshape(q, n, per);
            let q_data = g.slice_cols(q, 0, 1);
            let err = g.sub(q_data, y);
            let sq = g.square(err);
            let td = g.mean(sq);
            stats.td_loss += 0.5 * g.scalar(td);
            stats.q_data += 0.5 * g.value(q_data).iter().sum::<f64>() / n as f64;
            let mut loss = td;
            if m > 0 {
                let lse = g.row_logsumexp(q);
                let gap = g.sub(lse, q_data);
                let pen = g.mean(gap);
                stats.cql_penalty += 0.5 * g.scalar(pen);
                let weighted = g.scale(pen, self.cfg.alpha_cql);
                loss = g.add(loss, weighted);
            }
            total = Some(match total {
                Some(t) => g.add(t, loss),
                None => loss,
            });
            bound.push(b);
        }
        let total = total.expect("two critics");
        let value = g.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss {value} (td {}, penalty {}, mean target {})",
                stats.td_loss,
                stats.cql_penalty,
                targets.iter().sum::<f64>() / n as f64
            )));
        }
        let grads = g.backward(total)?;
        for (j, b) in bound.iter().enumerate() {
            let gr = b.grads(&grads, &self.nets.critics[j]);
            self.critic_opt[j].step(self.nets.critics[j].params_mut(), &gr)?;
        }
        Ok(stats)
    }

    /// One ascent step on `E[min Q(s, a) − alpha · log π(a|s)]` with
    /// reparameterized actions, followed by one temperature step.
    pub fn actor_step<R: Rng + ?Sized>(&mut self, obs: &[f64], rng: &mut R) -> Result<ActorStats> {
        let critics = self.nets.critics.clone();
        let od = self.nets.obs_dim;
        self.actor_step_with(obs, rng, |g, o, a| {
            let x = g.concat(&[o, a]);
            let q0 = critics[0].bind(g, false).forward(g, x);
            let q1 = critics[1].bind(g, false).forward(g, x);
            debug_assert_eq!(g.shape(o).1, od);
            g.min(q0, q1)
        })
    }

    /// Actor step against an arbitrary differentiable critic
    /// `q(graph, obs, actions) -> [n, 1]`.
    pub fn actor_step_with<R, F>(&mut self, obs: &[f64], rng: &mut R, q: F) -> Result<ActorStats>
    where
        R: Rng + ?Sized,
        F: FnOnce(&mut Graph, Var, Var) -> Var,
    {
        let od = self.nets.obs_dim;
        let n = obs.len() / od;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let eps: Vec<f64> = (0..n * ACTION_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let base: Vec<f64> = eps
            .chunks_exact(ACTION_DIM)
            .map(|e| e.iter().map(|x| -0.5 * x * x - 0.5 * LN_2PI).sum())
            .collect();
        let alpha = self.nets.alpha();
        let mut g = Graph::new();
        let o = g.constant_matrix(n, od, obs.to_vec());
        let pol = self.nets.policy.bind(&mut g, true);
        let out = pol.forward(&mut g, o);
        let mean = g.slice_cols(out, 0, ACTION_DIM);
        let raw = g.slice_cols(out, ACTION_DIM, ACTION_DIM);
        let t = g.tanh(raw);
        let t = g.scale(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
        let log_std = g.add_const(t, LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
        let std = g.exp(log_std);
        let e = g.constant_matrix(n, ACTION_DIM, eps);
        let spread = g.mul(std, e);
        let u = g.add(mean, spread);
        let a = g.tanh(u);
        // log π = base − Σ log_std − Σ ln(1 − tanh²u)
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let c = g.add(u, sp);
        let c = g.scale(c, -2.0);
        let c = g.add_const(c, 2.0 * LN_2);
        let corr = g.row_sum(c);
        let ls = g.row_sum(log_std);
        let base = g.constant_matrix(n, 1, base);
        let logp = g.sub(base, ls);
        let logp = g.sub(logp, corr);
        let qv = q(&mut g, o, a);
        let weighted = g.scale(logp, alpha);
        let per = g.sub(weighted, qv);
        let loss = g.mean(per);
        let loss_value = g.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("actor loss {loss_value}")));
        }
        let mean_logp = g.value(logp).iter().sum::<f64>() / n as f64;
        let grads = g.backward(loss)?;
        let gr = pol.grads(&grads, &self.nets.policy);
        self.actor_opt.step(self.nets.policy.params_mut(), &gr)?;
        // d/d(log alpha) of −log_alpha · (log π + target_entropy)
        let grad_alpha = -(mean_logp + self.cfg.target_entropy);
        let mut la = [Tensor::vector(vec![self.nets.log_alpha])];
        self.alpha_opt.step(&mut la, &[Tensor::vector(vec![grad_alpha])])?;
        self.nets.log_alpha = la[0].data()[0];
        Ok(ActorStats {
            loss: loss_value,
            entropy: -mean_logp,
            alpha,
        })
    }
}
