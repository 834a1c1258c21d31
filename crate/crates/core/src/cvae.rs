//! Conditional VAE over pairs of goals `N` steps apart.
//!
//! The encoder maps `(g_next, g_prev)` to a diagonal Gaussian in latent
//! space; the decoder maps `(z, g_prev)` back to `g_next`. Both work on
//! goals scaled by [`StateScale`] and the decoder output is clamped into the
//! maze box.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::env::{StateScale, StateVec, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, BoundMlp, Graph, Mlp, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Consecutive goals drawn from one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPair {
    pub prev: StateVec,
    pub next: StateVec,
}

/// Every pair `(s_t, s_{t+n})` inside a trajectory; pairs that would run past
/// the end are dropped.
pub fn goal_pairs(dataset: &Dataset, n: usize) -> Vec<GoalPair> {
    dataset
        .state_pairs(n)
        .into_iter()
        .map(|(prev, next)| GoalPair { prev, next })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub beta_kl: f64,
    pub warmup: usize,
    /// Per-dimension floor on the batch-mean KL inside the loss, in nats.
    pub free_bits: f64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            hidden: 64,
            lr: 1e-3,
            batch: 256,
            beta_kl: 0.1,
            warmup: 1000,
            free_bits: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cvae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub scale: StateScale,
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboStats {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `KL(N(mean, exp(log_var)) ‖ N(0, I))` in closed form.
pub fn kl_diag(mean: &[f64], log_var: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| 0.5 * (m * m + libm::exp(lv) - 1.0 - lv))
        .sum()
}

/// Log density of the standard normal, summed over entries.
pub fn log_prior(z: &[f64]) -> f64 {
    z.iter().map(|&x| -0.5 * (x * x + LN_2PI)).sum()
}

impl Cvae {
    pub fn new<R: Rng + ?Sized>(scale: StateScale, cfg: &CvaeConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.latent_dim;
        let h = cfg.hidden;
        let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
        Ok(Self {
            encoder: Mlp::new(&[2 * STATE_DIM, h, h, 2 * d], &acts, rng)?,
            decoder: Mlp::new(&[d + STATE_DIM, h, h, STATE_DIM], &acts, rng)?,
            latent_dim: d,
            scale,
        })
    }

    /// Same architecture with every weight zero.
    pub fn zeros(scale: StateScale, cfg: &CvaeConfig) -> Result<Self> {
        let d = cfg.latent_dim;
        let h = cfg.hidden;
        let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
        Ok(Self {
            encoder: Mlp::zeros(&[2 * STATE_DIM, h, h, 2 * d], &acts)?,
            decoder: Mlp::zeros(&[d + STATE_DIM, h, h, STATE_DIM], &acts)?,
            latent_dim: d,
            scale,
        })
    }

    fn encoder_input(&self, next: &StateVec, prev: &StateVec, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.scale.normalize(next));
        out.extend_from_slice(&self.scale.normalize(prev));
    }

    /// Posterior mean and log-variance.
    pub fn encode(&self, next: &StateVec, prev: &StateVec) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(2 * STATE_DIM);
        self.encoder_input(next, prev, &mut x);
        let out = self.encoder.forward_rows(1, &x);
        let d = self.latent_dim;
        (out[..d].to_vec(), out[d..].to_vec())
    }

    pub fn decode(&self, z: &[f64], prev: &StateVec) -> StateVec {
        self.decode_rows(z, core::slice::from_ref(prev))[0]
    }

    /// Decodes one latent per conditioning goal; `z` holds the latents row by row.
    pub fn decode_rows(&self, z: &[f64], prev: &[StateVec]) -> Vec<StateVec> {
        let d = self.latent_dim;
        assert_eq!(z.len(), prev.len() * d, "decode_rows latent length");
        let mut x = Vec::with_capacity(prev.len() * (d + STATE_DIM));
        for (zi, p) in z.chunks_exact(d).zip(prev) {
            x.extend_from_slice(zi);
            x.extend_from_slice(&self.scale.normalize(p));
        }
        let out = self.decoder.forward_rows(prev.len(), &x);
        out.chunks_exact(STATE_DIM)
            .map(|row| {
                let g = self.scale.denormalize(&[row[0], row[1], row[2], row[3]]);
                self.scale.clamp(&g)
            })
            .collect()
    }

    /// Negative ELBO on a batch: summed squared error in scaled goal space plus
    /// `beta_kl` times the closed-form KL, both averaged over the batch.
    /// `noise` supplies the reparameterization draws, `latent_dim` per pair.
    pub fn elbo_loss(&self, pairs: &[GoalPair], noise: &[f64], beta_kl: f64) -> ElboStats {
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, false);
        let dec = self.decoder.bind(&mut g, false);
        let (_, stats) = self.elbo_graph(&mut g, &enc, &dec, pairs, noise, beta_kl, 0.0);
        stats
    }

    fn elbo_graph(
        &self,
        g: &mut Graph,
        enc: &BoundMlp,
        dec: &BoundMlp,
        pairs: &[GoalPair],
        noise: &[f64],
        beta_kl: f64,
        free_bits: f64,
    ) -> (Var, ElboStats) {
        let n = pairs.len();
        let d = self.latent_dim;
        assert_eq!(noise.len(), n * d, "elbo noise length");
        let mut x = Vec::with_capacity(n * 2 * STATE_DIM);
        let mut prev = Vec::with_capacity(n * STATE_DIM);
        let mut target = Vec::with_capacity(n * STATE_DIM);
        for p in pairs {
            self.encoder_input(&p.next, &p.prev, &mut x);
            prev.extend_from_slice(&self.scale.normalize(&p.prev));
            target.extend_from_slice(&self.scale.normalize(&p.next));
        }
        let x = g.constant_matrix(n, 2 * STATE_DIM, x);
        let stats = enc.forward(g, x);
        let mean = g.slice_cols(stats, 0, d);
        let log_var = g.slice_cols(stats, d, d);
        let half = g.scale(log_var, 0.5);
        let std = g.exp(half);
        let eps = g.constant_matrix(n, d, noise.to_vec());
        let spread = g.mul(std, eps);
        let z = g.add(mean, spread);
        let prev = g.constant_matrix(n, STATE_DIM, prev);
        let dec_in = g.concat(&[z, prev]);
        let recon = dec.forward(g, dec_in);
        let target = g.constant_matrix(n, STATE_DIM, target);
        let err = g.sub(recon, target);
        let sq = g.square(err);
        let sq = g.row_sum(sq);
        let recon_loss = g.mean(sq);
        let m2 = g.square(mean);
        let var = g.exp(log_var);
        let t = g.add(m2, var);
        let t = g.sub(t, log_var);
        let t = g.add_const(t, -1.0);
        let t = g.scale(t, 0.5);
        let per_dim = g.reshape(t, 1, n * d);
        let kl = g.sum(per_dim);
        let kl = g.scale(kl, 1.0 / n as f64);
        let penalized = if free_bits > 0.0 {
            // mean over the batch per dimension, floored at free_bits
            let ones = g.constant_matrix(1, n, vec![1.0 / n as f64; n]);
            let t = g.matmul(ones, t);
            let neg = g.scale(t, -1.0);
            let floor = g.constant_matrix(1, d, vec![-free_bits; d]);
            let capped = g.min(neg, floor);
            let s = g.sum(capped);
            g.scale(s, -1.0)
        } else {
            kl
        };
        let weighted = g.scale(penalized, beta_kl);
        let loss = g.add(recon_loss, weighted);
        let stats = ElboStats {
            loss: g.scalar(loss),
            recon: g.scalar(recon_loss),
            kl: g.scalar(kl),
        };
        (loss, stats)
    }

    /// `g_1 = decode(z_1, s_0)`, `g_{i+1} = decode(z_{i+1}, g_i)` with `z_i ~ N(0, I)`.
    pub fn sample_goal_sequence<R: Rng + ?Sized>(&self, s0: &StateVec, horizon: usize, rng: &mut R) -> Vec<StateVec> {
        let z: Vec<f64> = (0..horizon * self.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.decode_sequence(s0, &z)
    }

    /// Autoregressive decoding of `z.len() / latent_dim` goals starting from `s0`.
    pub fn decode_sequence(&self, s0: &StateVec, z: &[f64]) -> Vec<StateVec> {
        let mut out = Vec::with_capacity(z.len() / self.latent_dim);
        let mut prev = *s0;
        for zi in z.chunks_exact(self.latent_dim) {
            prev = self.decode(zi, &prev);
            out.push(prev);
        }
        out
    }

    /// `decode(encode_mean(s_tau | s_prev) + eps, s_prev)` with
    /// `eps ~ N(0, eps_scale^2 I)`.
    pub fn perturb_goal<R: Rng + ?Sized>(&self, s_tau: &StateVec, s_prev: &StateVec, eps_scale: f64, rng: &mut R) -> StateVec {
        let (mut z, _) = self.encode(s_tau, s_prev);
        for zi in &mut z {
            let e: f64 = rng.sample(StandardNormal);
            *zi += eps_scale * e;
        }
        self.decode(&z, s_prev)
    }
}

/// Model plus optimizer state for the ELBO objective.
#[derive(Debug, Clone)]
pub struct CvaeTrainer {
    pub model: Cvae,
    pub cfg: CvaeConfig,
    enc_opt: Adam,
    dec_opt: Adam,
    steps: usize,
}

impl CvaeTrainer {
    pub fn new(model: Cvae, cfg: CvaeConfig) -> Self {
        let enc_opt = Adam::new(model.encoder.params(), cfg.lr);
        let dec_opt = Adam::new(model.decoder.params(), cfg.lr);
        Self {
            model,
            cfg,
            enc_opt,
            dec_opt,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// KL weight after linear warmup.
    pub fn beta(&self) -> f64 {
        if self.cfg.warmup == 0 {
            return self.cfg.beta_kl;
        }
        self.cfg.beta_kl * ((self.steps + 1) as f64 / self.cfg.warmup as f64).min(1.0)
    }

    /// One gradient step on a batch.
    pub fn step<R: Rng + ?Sized>(&mut self, pairs: &[GoalPair], rng: &mut R) -> Result<ElboStats> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let noise: Vec<f64> = (0..pairs.len() * self.model.latent_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let beta = self.beta();
        let mut g = Graph::new();
        let enc = self.model.encoder.bind(&mut g, true);
        let dec = self.model.decoder.bind(&mut g, true);
        let (loss, stats) = self
            .model
            .elbo_graph(&mut g, &enc, &dec, pairs, &noise, beta, self.cfg.free_bits);
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite(alloc::format!("cvae loss at step {}", self.steps)));
        }
        let grads = g.backward(loss)?;
        let ge = enc.grads(&grads, &self.model.encoder);
        let gd = dec.grads(&grads, &self.model.decoder);
        self.enc_opt.step(self.model.encoder.params_mut(), &ge)?;
        self.dec_opt.step(self.model.decoder.params_mut(), &gd)?;
        self.steps += 1;
        Ok(stats)
    }

    /// `steps` minibatch updates on uniformly drawn pairs. Returns the loss of
    /// every step.
    pub fn train<R: Rng + ?Sized>(&mut self, pairs: &[GoalPair], steps: usize, rng: &mut R) -> Result<Vec<ElboStats>> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut log = Vec::with_capacity(steps);
        let mut batch = vec![pairs[0]; self.cfg.batch.max(1)];
        for _ in 0..steps {
            for b in &mut batch {
                *b = pairs[rng.random_range(0..pairs.len())];
            }
            log.push(self.step(&batch, rng)?);
        }
        Ok(log)
    }
}

/// Trains a fresh model on the `n`-step goal pairs of `dataset`.
pub fn train_cvae<R: Rng + ?Sized>(
    dataset: &Dataset,
    scale: StateScale,
    n: usize,
    cfg: &CvaeConfig,
    steps: usize,
    rng: &mut R,
) -> Result<(Cvae, Vec<ElboStats>)> {
    let pairs = goal_pairs(dataset, n);
    let model = Cvae::new(scale, cfg, rng)?;
    let mut trainer = CvaeTrainer::new(model, cfg.clone());
    let log = trainer.train(&pairs, steps, rng)?;
    Ok((trainer.model, log))
}
