//! Deep deterministic policy gradient with target networks and replay.
//!
//! The actor maps a state to a normalized action in `[0,1]²`; the critic maps
//! the concatenation `[s, a]` to a scalar value.

mod mlp;
mod replay;

pub use mlp::{Adam, ForwardCache, Mlp, OutputActivation};
pub use replay::{ReplayBuffer, Transition};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exp, ln, sqrt};

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("expected dimension {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("action outside [0,1]")]
    ActionRange,
    #[error("replay holds {have} transitions, {need} needed")]
    Underfilled { have: usize, need: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgHyperparams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub discount: f64,
    /// Noise variance at the first episode.
    pub noise_initial: f64,
    /// Noise variance at episode `noise_episodes`.
    pub noise_final: f64,
    pub noise_episodes: usize,
    pub minibatch_size: usize,
    pub replay_capacity: usize,
    pub hidden: usize,
    pub warmup_episodes: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Scale applied to the last actor layer at initialization.
    pub actor_last_layer_scale: f64,
}

impl Default for DdpgHyperparams {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 2e-3,
            tau: 0.005,
            discount: 0.99,
            noise_initial: 0.5,
            noise_final: 0.1,
            noise_episodes: 100,
            minibatch_size: 64,
            replay_capacity: 1_000_000,
            hidden: 512,
            warmup_episodes: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            actor_last_layer_scale: 0.01,
        }
    }
}

impl DdpgHyperparams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let e = AgentError::Hyperparams;
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(e("learning rates must be positive"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(e("tau must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(e("discount must lie in [0, 1)"));
        }
        if !(self.noise_final > 0.0 && self.noise_initial >= self.noise_final) {
            return Err(e("noise needs z_i >= z_f > 0"));
        }
        if self.noise_episodes == 0 {
            return Err(e("noise horizon must be positive"));
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.replay_capacity {
            return Err(e("minibatch must be positive and fit in the replay"));
        }
        if self.hidden == 0 {
            return Err(e("hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(e("invalid Adam constants"));
        }
        Ok(())
    }
}

/// Exploration variance `σ(m) = z_i·exp(−m·ln(z_i/z_f)/m_tot)`, held at `z_f`
/// past `m_tot`.
pub fn exploration_noise(m: usize, hp: &DdpgHyperparams) -> f64 {
    let m = m.min(hp.noise_episodes) as f64;
    hp.noise_initial * exp(-m * ln(hp.noise_initial / hp.noise_final) / hp.noise_episodes as f64)
}

/// `a + N(0, variance)` per component, clamped to `[0,1]`.
pub fn perturb_action<R: Rng + ?Sized>(a: [f64; 2], variance: f64, rng: &mut R) -> [f64; 2] {
    let std = sqrt(variance.max(0.0));
    a.map(|x| {
        let z: f64 = StandardNormal.sample(rng);
        (x + std * z).clamp(0.0, 1.0)
    })
}

fn check_dim(expected: usize, found: usize) -> Result<(), AgentError> {
    if expected == found {
        Ok(())
    } else {
        Err(AgentError::Dimension { expected, found })
    }
}

/// Row-wise `[s, a]` for a critic.
pub fn critic_input(states: &[f64], actions: &[f64], batch: usize) -> Vec<f64> {
    let sd = states.len() / batch.max(1);
    let mut x = Vec::with_capacity(batch * (sd + ACTION_DIM));
    for i in 0..batch {
        x.extend_from_slice(&states[i * sd..(i + 1) * sd]);
        x.extend_from_slice(&actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
    }
    x
}

/// Loss `(1/N)Σ(y − Q(s,a))²` and its parameter gradient.
pub fn critic_gradient(critic: &Mlp, states: &[f64], actions: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = labels.len();
    let cache = critic.forward_cached(&critic_input(states, actions, n), n);
    let q = cache.output();
    let inv = 1.0 / n as f64;
    let loss = labels.iter().zip(q).map(|(y, q)| (y - q) * (y - q)).sum::<f64>() * inv;
    let d_q: Vec<f64> = labels.iter().zip(q).map(|(y, q)| -2.0 * (y - q) * inv).collect();
    let (grad, _) = critic.backward(&cache, &d_q, true);
    (loss, grad)
}

/// Actor loss `−(1/N)Σ Q(s, μ(s))` and its gradient in the actor parameters;
/// the critic is held fixed.
pub fn actor_gradient(actor: &Mlp, critic: &Mlp, states: &[f64]) -> (f64, Vec<f64>) {
    let n = states.len() / actor.input_dim();
    let a_cache = actor.forward_cached(states, n);
    let c_cache = critic.forward_cached(&critic_input(states, a_cache.output(), n), n);
    let inv = 1.0 / n as f64;
    let loss = -c_cache.output().iter().sum::<f64>() * inv;
    let (_, d_in) = critic.backward(&c_cache, &vec![-inv; n], false);
    let cd = critic.input_dim();
    let d_a: Vec<f64> = d_in.chunks_exact(cd).flat_map(|row| row[cd - ACTION_DIM..].iter().copied()).collect();
    let (grad, _) = actor.backward(&a_cache, &d_a, true);
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean `Q(s, μ(s))` over the minibatch before the actor step.
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ddpg {
    pub hp: DdpgHyperparams,
    state_dim: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hp: DdpgHyperparams, rng: &mut R) -> Result<Self, AgentError> {
        hp.validate()?;
        if state_dim == 0 {
            return Err(AgentError::Dimension { expected: 1, found: 0 });
        }
        let h = hp.hidden;
        let actor = Mlp::init(&[state_dim, h, h, ACTION_DIM], OutputActivation::Sigmoid, hp.actor_last_layer_scale, rng);
        let critic = Mlp::init(&[state_dim + ACTION_DIM, h, h, 1], OutputActivation::Identity, 1.0, rng);
        Ok(Self::from_networks(hp, actor, critic))
    }

    /// Wraps given networks; targets start as copies.
    pub fn from_networks(hp: DdpgHyperparams, actor: Mlp, critic: Mlp) -> Self {
        assert_eq!(actor.output_dim(), ACTION_DIM);
        assert_eq!(critic.input_dim(), actor.input_dim() + ACTION_DIM);
        assert_eq!(critic.output_dim(), 1);
        let actor_opt = Adam::new(actor.params().len(), hp.actor_lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps);
        let critic_opt = Adam::new(critic.params().len(), hp.critic_lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps);
        Self {
            state_dim: actor.input_dim(),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            hp,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Deterministic policy output.
    pub fn act(&self, s: &[f64]) -> Result<[f64; 2], AgentError> {
        check_dim(self.state_dim, s.len())?;
        let y = self.actor.forward(s, 1);
        Ok([y[0], y[1]])
    }

    /// Policy output plus exploration noise for episode `m`.
    pub fn act_with_noise<R: Rng + ?Sized>(&self, s: &[f64], m: usize, rng: &mut R) -> Result<[f64; 2], AgentError> {
        Ok(perturb_action(self.act(s)?, exploration_noise(m, &self.hp), rng))
    }

    pub fn q_value(&self, s: &[f64], a: [f64; 2]) -> Result<f64, AgentError> {
        check_dim(self.state_dim, s.len())?;
        Ok(self.critic.forward(&critic_input(s, &a, 1), 1)[0])
    }

    /// `y = r + discount·Q'(s', μ'(s'))`, or `r` for terminal transitions.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Vec<f64> {
        let n = batch.len();
        if n == 0 {
            return Vec::new();
        }
        let next: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
        let a_next = self.actor_target.forward(&next, n);
        let q_next = self.critic_target.forward(&critic_input(&next, &a_next, n), n);
        batch
            .iter()
            .zip(q_next)
            .map(|(t, q)| if t.terminal { t.reward } else { t.reward + self.hp.discount * q })
            .collect()
    }

    fn unpack(batch: &[&Transition]) -> (Vec<f64>, Vec<f64>) {
        let states = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
        let actions = batch.iter().flat_map(|t| t.action).collect();
        (states, actions)
    }

    /// One Adam step on the critic loss. Returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[&Transition], labels: &[f64]) -> Result<f64, AgentError> {
        check_dim(batch.len(), labels.len())?;
        let (states, actions) = Self::unpack(batch);
        check_dim(batch.len() * self.state_dim, states.len())?;
        let (loss, grad) = critic_gradient(&self.critic, &states, &actions, labels);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AgentError::NonFiniteGradient);
        }
        self.critic_opt.step(self.critic.params_mut(), &grad);
        Ok(loss)
    }

    /// One Adam ascent step on mean `Q(s, μ(s))`. Returns that mean before the step.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let (states, _) = Self::unpack(batch);
        check_dim(batch.len() * self.state_dim, states.len())?;
        let (loss, grad) = actor_gradient(&self.actor, &self.critic, &states);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AgentError::NonFiniteGradient);
        }
        self.actor_opt.step(self.actor.params_mut(), &grad);
        Ok(-loss)
    }

    pub fn soft_update(&mut self) {
        self.actor_target.soft_update_from(&self.actor, self.hp.tau);
        self.critic_target.soft_update_from(&self.critic, self.hp.tau);
    }

    /// Sample a minibatch, update critic then actor, then move the targets.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats, AgentError> {
        let batch = buffer.sample(self.hp.minibatch_size, rng)?;
        let labels = self.critic_targets(&batch);
        let critic_loss = self.critic_update(&batch, &labels)?;
        let mean_q = self.actor_update(&batch)?;
        self.soft_update();
        Ok(UpdateStats { critic_loss, mean_q })
    }
}
