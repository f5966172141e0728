//! File formats, the XMILE reader and the `sdrl` command line over
//! [`sdrl_core`].

use std::path::Path;

use sdrl_core::agents::{run_episode, Agent, AgentError, NoopAgent, Policy, RandomAgent};
use sdrl_core::{Env, EnvError, Injection, ModelError, ModelIr};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod cli;
pub mod config;
pub mod format;
pub mod manifest;
pub mod xmile;

pub use sdrl_core;

use xmile::ParseFailure;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Parse(#[from] ParseFailure),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Config(_) => 2,
            Error::Runtime(_) | Error::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<EnvError> for Error {
    fn from(e: EnvError) -> Self {
        if e.is_config() {
            Error::Config(e.to_string())
        } else {
            Error::Runtime(e.to_string())
        }
    }
}

impl From<AgentError> for Error {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Env(e) => e.into(),
            other => Error::Config(other.to_string()),
        }
    }
}

pub fn model_error(e: ModelError) -> Error {
    match e {
        ModelError::Invalid(ds) => Error::Config(
            ds.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        other => Error::Config(other.to_string()),
    }
}

/// Reads a model from XMILE (`.xmile`, `.xml`, `.stmx`) or IR JSON (`.json`).
pub fn load_model(path: &Path) -> Result<ModelIr, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model_bytes(path, &bytes)
}

pub fn load_model_bytes(path: &Path, bytes: &[u8]) -> Result<ModelIr, Error> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        return model_from_json(bytes);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    let parsed = xmile::parse_xmile(text)?;
    for w in &parsed.warnings {
        log::warn!("{}:{w}", path.display());
    }
    Ok(parsed.model)
}

/// Reads IR JSON; the model is validated on the way in.
pub fn model_from_json(bytes: &[u8]) -> Result<ModelIr, Error> {
    serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("model JSON: {e}")))
}

pub fn model_to_json(model: &ModelIr) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(model).expect("IR serializes");
    v.push(b'\n');
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub agent: String,
    pub episode: u64,
    pub seed: u64,
    pub steps: usize,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub rewards: Vec<f64>,
    /// Injections applied at each env step.
    pub injections: Vec<Vec<Injection>>,
}

/// Which agent drives an episode.
#[derive(Clone, Debug)]
pub enum AgentChoice {
    Noop,
    Random { seed: u64 },
    Policy(Box<Policy>),
}

impl AgentChoice {
    pub fn label(&self) -> String {
        match self {
            AgentChoice::Noop => "noop".into(),
            AgentChoice::Random { seed } => format!("random(seed={seed})"),
            AgentChoice::Policy(_) => "policy".into(),
        }
    }

    pub fn build(&self, env: &Env) -> Result<Box<dyn Agent>, Error> {
        Ok(match self {
            AgentChoice::Noop => Box::new(NoopAgent::new(env)?),
            AgentChoice::Random { seed } => Box::new(RandomAgent::new(env.action_width(), *seed)),
            AgentChoice::Policy(p) => {
                p.check_env(env)?;
                Box::new((**p).clone())
            }
        })
    }
}

/// Plays one episode and returns its summary; the env keeps the final state
/// for trajectory export.
pub fn play_episode(
    env: &mut Env,
    choice: &AgentChoice,
    episode: u64,
) -> Result<EpisodeSummary, Error> {
    let mut agent = choice.build(env)?;
    let mut obs = env.reset_episode(episode)?;
    let mut rewards = Vec::new();
    let mut injections = Vec::new();
    loop {
        let a = agent.act(&obs);
        let tr = env.step(&sdrl_core::Action::Flat(a))?;
        rewards.push(tr.reward);
        injections.push(tr.info.injections);
        obs = tr.observation;
        if tr.done {
            break;
        }
    }
    let state = env.state().expect("episode ran");
    Ok(EpisodeSummary {
        agent: choice.label(),
        episode,
        seed: state.seed(),
        steps: rewards.len(),
        total_return: rewards.iter().sum(),
        rewards,
        injections,
    })
}

/// Total return of one episode, without recording.
pub fn episode_return(env: &mut Env, choice: &AgentChoice, episode: u64) -> Result<f64, Error> {
    let mut agent = choice.build(env)?;
    Ok(run_episode(env, agent.as_mut(), episode, None)?.total_return)
}
