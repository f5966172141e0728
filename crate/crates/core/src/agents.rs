//! Baseline agents: no-op, uniform random, and a linear policy trained by
//! the cross-entropy method.
//!
//! All agents emit flat action vectors in `[-1, 1]^n`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Env, EnvError, Observation};

pub trait Agent {
    fn act(&mut self, obs: &Observation) -> Vec<f64>;
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("the no-op agent needs a parameterized action space")]
    NoopNeedsParameterized,
    #[error("the environment has no reward to train on")]
    NoReward,
    #[error("population must be at least 8, got {0}")]
    Population(usize),
    #[error("elite fraction must be in (0, 0.5], got {0}")]
    EliteFraction(f64),
    #[error("policy expects {expected_obs} observations and {expected_act} actions, env has {obs} and {act}")]
    Shape {
        expected_obs: usize,
        expected_act: usize,
        obs: usize,
        act: usize,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Never intervenes: every meta-action is "off".
#[derive(Clone, Debug)]
pub struct NoopAgent {
    width: usize,
}

impl NoopAgent {
    pub fn new(env: &Env) -> Result<Self, AgentError> {
        if !env.is_parameterized() {
            return Err(AgentError::NoopNeedsParameterized);
        }
        Ok(NoopAgent {
            width: env.action_width(),
        })
    }
}

impl Agent for NoopAgent {
    fn act(&mut self, _obs: &Observation) -> Vec<f64> {
        // meta components sit at even positions
        (0..self.width)
            .map(|i| if i % 2 == 0 { -1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RandomAgent {
    width: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(width: usize, seed: u64) -> Self {
        RandomAgent {
            width,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, _obs: &Observation) -> Vec<f64> {
        (0..self.width)
            .map(|_| self.rng.random_range(-1.0..=1.0))
            .collect()
    }
}

/// Welford running mean and variance per observation component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Standard deviations, with near-constant components mapped to 1.
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&s| {
                let sd = if self.count > 1 {
                    libm::sqrt(s / (self.count - 1) as f64)
                } else {
                    0.0
                };
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Linear policy on z-normalized observations, squashed by `tanh`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Row-major `act_dim x obs_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
}

impl Policy {
    pub fn param_count(obs_dim: usize, act_dim: usize) -> usize {
        act_dim * (obs_dim + 1)
    }

    /// Builds a policy from a flat parameter vector (weights, then bias).
    pub fn from_params(
        obs_dim: usize,
        act_dim: usize,
        params: &[f64],
        stats: &RunningStats,
    ) -> Self {
        let (w, b) = params.split_at(act_dim * obs_dim);
        Policy {
            obs_dim,
            act_dim,
            weights: w.to_vec(),
            bias: b.to_vec(),
            obs_mean: stats.mean.clone(),
            obs_std: stats.std(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn check_env(&self, env: &Env) -> Result<(), AgentError> {
        if self.obs_dim != env.observation_len() || self.act_dim != env.action_width() {
            return Err(AgentError::Shape {
                expected_obs: self.obs_dim,
                expected_act: self.act_dim,
                obs: env.observation_len(),
                act: env.action_width(),
            });
        }
        Ok(())
    }

    pub fn action(&self, obs: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = obs
            .iter()
            .zip(&self.obs_mean)
            .zip(&self.obs_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        (0..self.act_dim)
            .map(|r| {
                let row = &self.weights[r * self.obs_dim..(r + 1) * self.obs_dim];
                let pre: f64 = row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>() + self.bias[r];
                libm::tanh(pre)
            })
            .collect()
    }
}

impl Agent for Policy {
    fn act(&mut self, obs: &Observation) -> Vec<f64> {
        self.action(&obs.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub episode: u64,
    pub seed: u64,
    pub total_return: f64,
    pub steps: usize,
    /// Values of every model column at the end of the episode.
    pub final_values: Vec<f64>,
}

/// Runs one full episode, optionally feeding every observation to `seen`.
pub fn run_episode(
    env: &mut Env,
    agent: &mut dyn Agent,
    episode: u64,
    mut seen: Option<&mut dyn FnMut(&Observation)>,
) -> Result<EpisodeOutcome, EnvError> {
    let mut obs = env.reset_episode(episode)?;
    let mut total = 0.0;
    let mut steps = 0;
    loop {
        if let Some(f) = seen.as_mut() {
            f(&obs);
        }
        let action = agent.act(&obs);
        let tr = env.step(&Action::Flat(action))?;
        total += tr.reward;
        steps += 1;
        obs = tr.observation;
        if tr.done {
            break;
        }
    }
    let state = env.state().expect("episode ran");
    Ok(EpisodeOutcome {
        episode,
        seed: state.seed(),
        total_return: total,
        steps,
        final_values: state.values().to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub seed: u64,
    /// Spread of the initial parameters and of the first sampling
    /// distribution.
    pub init_std: f64,
    /// Added to the refit standard deviation each generation.
    pub extra_std: f64,
    /// Re-evaluate the previous elite alongside the new samples, within the
    /// same population budget.
    #[serde(default = "yes")]
    pub keep_elites: bool,
}

fn yes() -> bool {
    true
}

impl CemConfig {
    pub fn new(iterations: usize, population: usize, elite_fraction: f64, seed: u64) -> Self {
        CemConfig {
            iterations,
            population,
            elite_fraction,
            seed,
            init_std: 0.5,
            extra_std: 0.05,
            keep_elites: true,
        }
    }

    pub fn elite_count(&self) -> usize {
        let n = libm::ceil(self.elite_fraction * self.population as f64) as usize;
        n.clamp(1, self.population)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub iteration: usize,
    /// Env episode index every member was evaluated on.
    pub episode: u64,
    pub episode_seed: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub elite_mean_return: f64,
    pub discarded: usize,
    pub best_snapshot: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: CemConfig,
    pub env_seed: u64,
    pub generations: Vec<GenerationRecord>,
    pub best_return: Option<f64>,
    pub best_snapshot: String,
}

/// Cross-entropy method over linear policy parameters.
///
/// Each generation samples `population` parameter vectors from a diagonal
/// Gaussian, evaluates each on the same episode, and refits the Gaussian to
/// the elite. Observation statistics come from a warm-up episode of the
/// initial policy. With `keep_elites` they stay fixed and the previous elite
/// takes the place of that many fresh samples; otherwise they are refreshed
/// after each generation. Returns the best policy seen; with zero iterations
/// that is the initial policy.
pub fn cem_train(env: &mut Env, cfg: &CemConfig) -> Result<(Policy, TrainReport), AgentError> {
    if !env.has_reward() {
        return Err(AgentError::NoReward);
    }
    if cfg.population < 8 {
        return Err(AgentError::Population(cfg.population));
    }
    if !(cfg.elite_fraction > 0.0 && cfg.elite_fraction <= 0.5) {
        return Err(AgentError::EliteFraction(cfg.elite_fraction));
    }
    let obs_dim = env.observation_len();
    let act_dim = env.action_width();
    let dim = Policy::param_count(obs_dim, act_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let mut mean: Vec<f64> = (0..dim).map(|_| cfg.init_std * normal()).collect();
    let mut std = vec![cfg.init_std; dim];

    // Observation statistics from one episode of the initial policy.
    let mut stats = RunningStats::new(obs_dim);
    {
        let mut probe = Policy::from_params(obs_dim, act_dim, &mean, &RunningStats::new(obs_dim));
        let mut collect = |o: &Observation| stats.push(&o.values);
        run_episode(env, &mut probe, 0, Some(&mut collect))?;
    }
    let mut best = Policy::from_params(obs_dim, act_dim, &mean, &stats);
    let mut best_return: Option<f64> = None;
    let mut best_snapshot = String::from("initial");
    let mut generations = Vec::with_capacity(cfg.iterations);
    let n_elite = cfg.elite_count();
    let mut carried: Vec<Vec<f64>> = Vec::new();

    for it in 0..cfg.iterations {
        let episode = it as u64;
        let frozen = stats.clone();
        let mut next_stats = stats.clone();
        let refresh_stats = !cfg.keep_elites;
        let mut scored: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(cfg.population);
        let mut discarded = 0;
        for k in 0..cfg.population {
            let params: Vec<f64> = match carried.get(k) {
                Some(p) => p.clone(),
                None => mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| m + s * normal())
                    .collect(),
            };
            let mut policy = Policy::from_params(obs_dim, act_dim, &params, &frozen);
            let mut collect = |o: &Observation| next_stats.push(&o.values);
            match run_episode(env, &mut policy, episode, Some(&mut collect)) {
                Ok(out) if out.total_return.is_finite() => {
                    scored.push((out.total_return, k, params));
                }
                Ok(out) => {
                    log::warn!(
                        "generation {it} sample {k}: non-finite return {}",
                        out.total_return
                    );
                    discarded += 1;
                }
                Err(e) => {
                    log::warn!("generation {it} sample {k}: episode failed: {e}");
                    discarded += 1;
                }
            }
        }
        if refresh_stats {
            stats = next_stats;
        }
        if scored.is_empty() {
            generations.push(GenerationRecord {
                iteration: it,
                episode,
                episode_seed: env.seed_for(episode),
                mean_return: f64::NAN,
                max_return: f64::NAN,
                elite_mean_return: f64::NAN,
                discarded,
                best_snapshot: best_snapshot.clone(),
            });
            continue;
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mean_return = scored.iter().map(|s| s.0).sum::<f64>() / scored.len() as f64;
        let (top_return, top_k, top_params) = &scored[0];
        if best_return.is_none_or(|b| *top_return > b) {
            best_return = Some(*top_return);
            best_snapshot = format!("g{it}-s{top_k}");
            best = Policy::from_params(obs_dim, act_dim, top_params, &frozen);
        }
        let elite = &scored[..n_elite.min(scored.len())];
        let elite_mean_return = elite.iter().map(|s| s.0).sum::<f64>() / elite.len() as f64;
        if cfg.keep_elites {
            carried = elite.iter().map(|s| s.2.clone()).collect();
        }
        let ne = elite.len() as f64;
        for j in 0..dim {
            let m = elite.iter().map(|s| s.2[j]).sum::<f64>() / ne;
            let var = elite
                .iter()
                .map(|s| (s.2[j] - m) * (s.2[j] - m))
                .sum::<f64>()
                / ne;
            mean[j] = m;
            std[j] = libm::sqrt(var) + cfg.extra_std;
        }
        generations.push(GenerationRecord {
            iteration: it,
            episode,
            episode_seed: env.seed_for(episode),
            mean_return,
            max_return: *top_return,
            elite_mean_return,
            discarded,
            best_snapshot: best_snapshot.clone(),
        });
    }

    Ok((
        best,
        TrainReport {
            config: cfg.clone(),
            env_seed: env.config().seed,
            generations,
            best_return,
            best_snapshot,
        },
    ))
}
