//! Training and evaluation loops over the bidding environment.

use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vpp_core::agent::{AgentError, Ddpg, ReplayBuffer, Transition};
use vpp_core::env::{BidAction, EpisodeSeeds, Environment, StepRecord, Variant};

use crate::config::ScenarioConfig;
use crate::data::ScenarioData;
use crate::HarnessError;

/// Evaluation episodes draw from streams disjoint from training.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 32;
/// A run fails when more than this fraction of its episodes abort.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Agent,
    /// Bid the largest feasible export at the production marginal cost.
    PriceTaker,
    /// Stay out of the market.
    NoVpp,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Agent => "agent",
            Policy::PriceTaker => "price-taker",
            Policy::NoVpp => "no-vpp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub episode: usize,
    pub hour: usize,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub records: Vec<StepRecord>,
    pub aborted: Option<Abort>,
    /// Mean critic loss over the episode's updates.
    pub critic_loss: Option<f64>,
}

/// Per-episode totals in €, over the completed hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub hours: usize,
    pub r_da: f64,
    pub balancing: f64,
    pub net_market_profit: f64,
    pub c_vpp: f64,
    pub c_shd: f64,
    pub total_reward: f64,
    pub shield_activations: usize,
    pub infeasible_dispatches: usize,
    pub mean_mcp: f64,
    pub aborted: bool,
    pub critic_loss: Option<f64>,
}

impl EpisodeLog {
    pub fn summary(&self) -> EpisodeSummary {
        let r = &self.records;
        let sum = |f: fn(&StepRecord) -> f64| r.iter().map(f).sum::<f64>();
        EpisodeSummary {
            episode: self.episode,
            hours: r.len(),
            r_da: sum(|s| s.reward.r_da),
            balancing: sum(|s| s.balancing_cost),
            net_market_profit: sum(StepRecord::net_market_profit),
            c_vpp: sum(|s| s.c_vpp),
            c_shd: sum(|s| s.shield_penalty),
            total_reward: sum(|s| s.reward.total),
            shield_activations: r.iter().filter(|s| s.shield_activated).count(),
            infeasible_dispatches: r.iter().filter(|s| !s.dispatch_feasible).count(),
            mean_mcp: if r.is_empty() { 0.0 } else { sum(|s| s.mcp) / r.len() as f64 },
            aborted: self.aborted.is_some(),
            critic_loss: self.critic_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub episodes: Vec<EpisodeLog>,
}

impl RunLog {
    pub fn summaries(&self) -> Vec<EpisodeSummary> {
        self.episodes.iter().map(EpisodeLog::summary).collect()
    }

    pub fn aborts(&self) -> impl Iterator<Item = &Abort> {
        self.episodes.iter().filter_map(|e| e.aborted.as_ref())
    }

    pub fn records(&self) -> impl Iterator<Item = (usize, &StepRecord)> {
        self.episodes.iter().flat_map(|e| e.records.iter().map(move |r| (e.episode, r)))
    }

    pub fn check_aborts(&self) -> Result<(), HarnessError> {
        let aborted = self.aborts().count();
        let episodes = self.episodes.len();
        if aborted as f64 > MAX_ABORT_FRACTION * episodes as f64 {
            return Err(HarnessError::Aborted { aborted, episodes });
        }
        Ok(())
    }
}

pub struct TrainOutput {
    pub agent: Ddpg,
    pub log: RunLog,
    pub updates: usize,
    /// Updates dropped for a non-finite gradient.
    pub skipped_updates: usize,
}

pub fn build_env(cfg: &ScenarioConfig, data: &ScenarioData, variant: Variant) -> Result<Environment, HarnessError> {
    let env_cfg = vpp_core::env::EnvConfig { variant, ..cfg.env };
    Environment::new(data.network.clone(), data.fleet.clone(), data.rivals.clone(), env_cfg)
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn seeds(cfg: &ScenarioConfig, episode: u64) -> EpisodeSeeds {
    EpisodeSeeds { availability: cfg.seeds.network_noise, rival: cfg.seeds.rival, episode }
}

fn reset(env: &mut Environment, seeds: EpisodeSeeds) -> Result<Vec<f64>, HarnessError> {
    env.reset(seeds).map_err(|e| HarnessError::Solver(format!("reset of episode {}: {e}", seeds.episode)))
}

/// Train a fresh agent for `cfg.episodes.train` episodes. `on_checkpoint`
/// receives the agent every `cfg.checkpoint_every` episodes.
pub fn train(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    mut on_checkpoint: impl FnMut(usize, &Ddpg) -> Result<(), HarnessError>,
) -> Result<TrainOutput, HarnessError> {
    let hp = cfg.hyper.clone();
    let mut env = build_env(cfg, data, cfg.env.variant)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.agent_init);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.exploration);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.replay);
    let mut agent = Ddpg::new(env.state_dim(), hp.clone(), &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(hp.replay_capacity)?;
    let (mut updates, mut skipped) = (0, 0);
    let mut log = RunLog::default();

    for m in 0..cfg.episodes.train {
        let mut state = reset(&mut env, seeds(cfg, m as u64))?;
        let mut records = Vec::with_capacity(24);
        let mut aborted = None;
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        loop {
            let action = agent.act_with_noise(&state, m, &mut explore_rng)?;
            let bid = env.denormalize(action).map_err(|e| HarnessError::Solver(e.to_string()))?;
            let hour = env.hour();
            let out = match env.step(bid) {
                Ok(out) => out,
                Err(e) => {
                    aborted = Some(Abort { episode: m, hour, cause: e.to_string() });
                    break;
                }
            };
            buffer.push(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: out.reward.total * cfg.reward_scale,
                next_state: out.state.clone(),
                terminal: out.done,
            })?;
            if m >= hp.warmup_episodes && buffer.len() >= hp.minibatch_size {
                match agent.train_step(&buffer, &mut replay_rng) {
                    Ok(stats) => {
                        updates += 1;
                        loss_sum += stats.critic_loss;
                        loss_n += 1;
                    }
                    Err(AgentError::NonFiniteGradient) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            records.push(out.record);
            state = out.state;
            if out.done {
                break;
            }
        }
        let critic_loss = (loss_n > 0).then(|| loss_sum / loss_n as f64);
        log.episodes.push(EpisodeLog { episode: m, records, aborted, critic_loss });
        if cfg.checkpoint_every > 0 && (m + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(m + 1, &agent)?;
        }
    }
    Ok(TrainOutput { agent, log, updates, skipped_updates: skipped })
}

fn choose(env: &mut Environment, policy: Policy, agent: Option<&Ddpg>, state: &[f64]) -> Result<BidAction, String> {
    match policy {
        Policy::Agent => {
            let a = agent.ok_or("agent policy without an agent")?.act(state).map_err(|e| e.to_string())?;
            env.denormalize(a).map_err(|e| e.to_string())
        }
        Policy::PriceTaker => env.price_taker_bid().map_err(|e| e.to_string()),
        Policy::NoVpp => Ok(BidAction { price: 0.0, quantity: 0.0 }),
    }
}

fn run_episode(
    env: &mut Environment,
    policy: Policy,
    agent: Option<&Ddpg>,
    episode: usize,
    seeds: EpisodeSeeds,
) -> Result<EpisodeLog, HarnessError> {
    let mut state = reset(env, seeds)?;
    let mut records = Vec::with_capacity(24);
    let mut aborted = None;
    loop {
        let hour = env.hour();
        let out = choose(env, policy, agent, &state).and_then(|bid| env.step(bid).map_err(|e| e.to_string()));
        match out {
            Ok(out) => {
                records.push(out.record);
                state = out.state;
                if out.done {
                    break;
                }
            }
            Err(cause) => {
                aborted = Some(Abort { episode, hour, cause });
                break;
            }
        }
    }
    Ok(EpisodeLog { episode, records, aborted, critic_loss: None })
}

/// Evaluate `policy` greedily on `episodes` held-out days, split over up to
/// `threads` workers. Results are ordered by episode.
pub fn evaluate(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    policy: Policy,
    agent: Option<&Ddpg>,
    episodes: usize,
    threads: usize,
) -> Result<RunLog, HarnessError> {
    let variant = if policy == Policy::NoVpp { Variant::Unsafe } else { cfg.env.variant };
    if policy == Policy::Agent {
        let agent = agent.ok_or_else(|| HarnessError::Config("agent policy needs a checkpoint".into()))?;
        let found = build_env(cfg, data, variant)?.state_dim();
        if agent.state_dim() != found {
            return Err(HarnessError::Dimension { expected: agent.state_dim(), found });
        }
    }
    let threads = threads.clamp(1, episodes.max(1));
    let chunk = episodes.div_ceil(threads);
    let work = |range: std::ops::Range<usize>| -> Result<Vec<EpisodeLog>, HarnessError> {
        let mut env = build_env(cfg, data, variant)?;
        range.map(|k| run_episode(&mut env, policy, agent, k, seeds(cfg, EVAL_STREAM_OFFSET + k as u64))).collect()
    };
    let parts: Vec<Result<Vec<EpisodeLog>, HarnessError>> = if threads == 1 {
        vec![work(0..episodes)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|i| {
                    let range = (i * chunk).min(episodes)..((i + 1) * chunk).min(episodes);
                    s.spawn(move || work(range))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Solver("evaluation worker panicked".into()))))
                .collect()
        })
    };
    let mut log = RunLog::default();
    for part in parts {
        log.episodes.extend(part?);
    }
    Ok(log)
}
