//! The episodic environment over the engine.
//!
//! Observations are the observable variables in name order. Actions are
//! either composite values, parameterized `(apply, value)` pairs, or a flat
//! vector in `[-1, 1]^n`; flat vectors are accepted whatever
//! `flatten_spaces` says, since every space has a flat form.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CompiledModel, EngineError, Injection, Integrator, SimState};
use crate::expr::Expr;
use crate::ident::VariableId;
use crate::model::{whole_multiple, Limits, ModelError, ModelIr, SimSpecs, VariableKind};
use crate::reward::{BoundReward, RewardSpec, StateView};
use crate::space::{infer_action_kind, ActionKind, ActionSpec, ActionValue, FlatSpec, SpaceError};

/// Per-variable limit override: a range, or a category list that makes the
/// variable categorical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LimitOverride {
    Range(f64, f64),
    Categories(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub model: Arc<ModelIr>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub dt: Option<f64>,
    /// Model time per env step; a whole multiple of dt. Defaults to dt.
    pub env_step: Option<f64>,
    pub observables: Option<Vec<VariableId>>,
    pub actionables: Option<Vec<VariableId>>,
    pub unit_type_map: BTreeMap<String, ActionKind>,
    pub default_unit_limits: BTreeMap<String, Limits>,
    pub var_limit_overrides: BTreeMap<VariableId, LimitOverride>,
    /// Replaces stock initial values.
    pub stock_initials: BTreeMap<VariableId, f64>,
    pub parameterize_action_space: bool,
    pub flatten_spaces: bool,
    pub seed: u64,
    pub integrator: Integrator,
    pub reward: Option<RewardSpec>,
}

impl EnvConfig {
    pub fn new(model: Arc<ModelIr>) -> Self {
        EnvConfig {
            model,
            start: None,
            stop: None,
            dt: None,
            env_step: None,
            observables: None,
            actionables: None,
            unit_type_map: BTreeMap::new(),
            default_unit_limits: BTreeMap::new(),
            var_limit_overrides: BTreeMap::new(),
            stock_initials: BTreeMap::new(),
            parameterize_action_space: false,
            flatten_spaces: false,
            seed: 0,
            integrator: Integrator::Euler,
            reward: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("unresolved limits for {0}")]
    UnresolvedLimits(VariableId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("environment has not been reset")]
    NotReset,
    #[error("episode is over; call reset")]
    EpisodeDone,
    #[error("this environment takes {expected} actions")]
    WrongActionForm { expected: &'static str },
}

impl EnvError {
    /// Configuration and model errors, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            EnvError::Config(_) | EnvError::UnresolvedLimits(_) | EnvError::Model(_)
        ) || matches!(
            self,
            EnvError::Engine(
                EngineError::Unvalidated(_) | EngineError::InitialReferencesFlow { .. }
            )
        )
    }
}

fn config_err(msg: impl Into<String>) -> EnvError {
    EnvError::Config(msg.into())
}

#[derive(Clone, Debug)]
pub enum Action {
    Composite(Vec<ActionValue>),
    Parameterized(Vec<(bool, ActionValue)>),
    Flat(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepInfo {
    /// Model time after the step.
    pub t: f64,
    /// History rows produced during this step, one per dt.
    pub history: Vec<Vec<f64>>,
    /// Observation by variable name.
    pub keyed: BTreeMap<VariableId, f64>,
    pub injections: Vec<Injection>,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Env {
    config: EnvConfig,
    model: Arc<CompiledModel>,
    flat: FlatSpec,
    observables: Vec<VariableId>,
    obs_cols: Vec<usize>,
    substeps: usize,
    reward: Option<BoundReward>,
    state: Option<SimState>,
    next_episode: u64,
    episode: u64,
    prev_target: Option<f64>,
    prev_values: Vec<f64>,
    prev_t: f64,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Env, EnvError> {
        let base = &config.model;
        let mut specs: SimSpecs = base.specs().clone();
        if let Some(v) = config.start {
            specs.start = v;
        }
        if let Some(v) = config.stop {
            specs.stop = v;
        }
        if let Some(v) = config.dt {
            specs.dt = v;
        }
        let mut ir = base.with_specs(specs.clone())?;
        if !config.stock_initials.is_empty() {
            ir = with_stock_initials(&ir, &config.stock_initials)?;
        }

        let env_step = config.env_step.unwrap_or(specs.dt);
        let total = specs
            .steps()
            .ok_or_else(|| config_err("bad simulation specs"))?;
        let substeps = whole_multiple(env_step, specs.dt).ok_or_else(|| {
            config_err(alloc::format!(
                "env_step {env_step} is not a positive whole multiple of dt {}",
                specs.dt
            ))
        })?;
        if substeps > total || total % substeps != 0 {
            return Err(config_err(alloc::format!(
                "env_step {env_step} does not divide the horizon [{}, {}]",
                specs.start,
                specs.stop
            )));
        }

        let constants: BTreeSet<VariableId> = ir.constant_converters().into_iter().collect();
        let actionables: Vec<VariableId> = match &config.actionables {
            Some(list) => {
                let mut seen = BTreeSet::new();
                for v in list {
                    if !ir.variables().contains_key(v) {
                        return Err(config_err(alloc::format!("unknown actionable `{v}`")));
                    }
                    if !constants.contains(v) {
                        return Err(config_err(alloc::format!(
                            "`{v}` is not a constant converter and cannot be actionable"
                        )));
                    }
                    if !seen.insert(v.clone()) {
                        return Err(config_err(alloc::format!(
                            "`{v}` listed twice as actionable"
                        )));
                    }
                }
                list.clone()
            }
            None => constants.iter().cloned().collect(),
        };
        let actionable_set: BTreeSet<&VariableId> = actionables.iter().collect();
        for v in config.var_limit_overrides.keys() {
            if !actionable_set.contains(v) {
                return Err(config_err(alloc::format!(
                    "limit override for `{v}`, which is not actionable"
                )));
            }
        }

        let mut compiled = CompiledModel::new(&ir)?;
        let mut action_specs = Vec::with_capacity(actionables.len());
        for v in &actionables {
            let spec = resolve_spec(&ir, &config, v)?;
            let limits = match &spec.domain {
                crate::space::ActionDomain::Continuous { min, max } => Limits::new(*min, *max),
                crate::space::ActionDomain::Discrete { min, max } => {
                    Limits::new(*min as f64, *max as f64)
                }
                crate::space::ActionDomain::Categorical { categories } => Limits::new(
                    categories.iter().copied().fold(f64::INFINITY, f64::min),
                    categories.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ),
            };
            compiled.set_limits(v.as_str(), Some(limits))?;
            action_specs.push(spec);
        }

        let observables: Vec<VariableId> = match &config.observables {
            Some(list) => {
                let mut list = list.clone();
                list.sort();
                list.dedup();
                for v in &list {
                    if !ir.variables().contains_key(v) {
                        return Err(config_err(alloc::format!("unknown observable `{v}`")));
                    }
                    if actionable_set.contains(v) {
                        return Err(config_err(alloc::format!(
                            "`{v}` is actionable and cannot also be observed"
                        )));
                    }
                }
                list
            }
            None => ir
                .variables()
                .keys()
                .filter(|v| !actionable_set.contains(v))
                .cloned()
                .collect(),
        };
        let obs_cols = observables
            .iter()
            .map(|v| compiled.column_index(v.as_str()).expect("known variable"))
            .collect();

        let reward = match &config.reward {
            Some(r) => Some(
                BoundReward::bind(&compiled, r)
                    .map_err(|e| config_err(alloc::format!("reward: {e}")))?,
            ),
            None => None,
        };

        Ok(Env {
            flat: FlatSpec::new(action_specs, config.parameterize_action_space),
            model: Arc::new(compiled),
            observables,
            obs_cols,
            substeps,
            reward,
            state: None,
            next_episode: 0,
            episode: 0,
            prev_target: None,
            prev_values: Vec::new(),
            prev_t: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<CompiledModel> {
        &self.model
    }

    pub fn action_specs(&self) -> &[ActionSpec] {
        &self.flat.specs
    }

    pub fn flat_spec(&self) -> &FlatSpec {
        &self.flat
    }

    pub fn action_width(&self) -> usize {
        self.flat.width()
    }

    pub fn is_parameterized(&self) -> bool {
        self.flat.parameterized
    }

    pub fn observation_names(&self) -> &[VariableId] {
        &self.observables
    }

    pub fn observation_len(&self) -> usize {
        self.observables.len()
    }

    /// dt steps per env step.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Env steps per episode.
    pub fn episode_len(&self) -> usize {
        self.model.total_steps() / self.substeps
    }

    pub fn has_reward(&self) -> bool {
        self.reward.is_some()
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    /// Index of the current (or last) episode.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn seed_for(&self, episode: u64) -> u64 {
        self.config.seed.wrapping_add(episode)
    }

    /// Starts the next episode.
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let ep = self.next_episode;
        self.reset_episode(ep)
    }

    /// Starts episode `episode`, seeded with `seed + episode`.
    pub fn reset_episode(&mut self, episode: u64) -> Result<Observation, EnvError> {
        let state = SimState::init(
            Arc::clone(&self.model),
            self.seed_for(episode),
            self.config.integrator,
            &[],
        )?;
        self.episode = episode;
        self.next_episode = episode.wrapping_add(1);
        self.prev_values = state.values().to_vec();
        self.prev_t = state.t();
        self.prev_target = self
            .reward
            .as_ref()
            .and_then(|r| r.target(&StateView::new(&self.model, &self.prev_values, self.prev_t)));
        let obs = self.observe(state.values());
        self.state = Some(state);
        Ok(obs)
    }

    /// Reward baseline recorded at the last boundary.
    pub fn reward_baseline(&self) -> Option<f64> {
        self.prev_target
    }

    fn observe(&self, values: &[f64]) -> Observation {
        Observation {
            values: self.obs_cols.iter().map(|&c| values[c]).collect(),
        }
    }

    pub fn keyed(&self, obs: &Observation) -> BTreeMap<VariableId, f64> {
        self.observables
            .iter()
            .cloned()
            .zip(obs.values.iter().copied())
            .collect()
    }

    /// Turns an action into the injections it stands for.
    pub fn injections_for(&self, action: &Action) -> Result<Vec<Injection>, EnvError> {
        let pairs: Vec<(bool, ActionValue)> = match action {
            Action::Flat(v) => self.flat.unflatten_parameterized(v)?,
            Action::Composite(vals) => {
                if self.flat.parameterized {
                    return Err(EnvError::WrongActionForm {
                        expected: "parameterized",
                    });
                }
                vals.iter().map(|a| (true, *a)).collect()
            }
            Action::Parameterized(pairs) => {
                if !self.flat.parameterized {
                    return Err(EnvError::WrongActionForm {
                        expected: "composite",
                    });
                }
                pairs.clone()
            }
        };
        if pairs.len() != self.flat.specs.len() {
            return Err(SpaceError::WrongLength {
                expected: self.flat.specs.len(),
                got: pairs.len(),
            }
            .into());
        }
        let mut out = Vec::new();
        for (spec, (apply, value)) in self.flat.specs.iter().zip(pairs) {
            let v = spec.to_model_value(value)?;
            if apply {
                out.push(Injection::new(spec.variable.clone(), v));
            }
        }
        Ok(out)
    }

    pub fn step(&mut self, action: &Action) -> Result<Transition, EnvError> {
        let injections = self.injections_for(action)?;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if state.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let first_new_row = state.history_len();
        state.step(self.substeps, &injections)?;
        let state = self.state.as_ref().expect("checked above");
        let cur = StateView::new(&self.model, state.values(), state.t());
        let reward = match &self.reward {
            Some(r) => {
                let prev = StateView::new(&self.model, &self.prev_values, self.prev_t);
                let reward = r.reward(self.prev_target, &prev, &cur);
                self.prev_target = r.target(&cur);
                reward
            }
            None => 0.0,
        };
        self.prev_values.clear();
        self.prev_values.extend_from_slice(state.values());
        self.prev_t = state.t();
        let observation = self.observe(state.values());
        let history = (first_new_row..state.history_len())
            .map(|r| state.history_row(r).to_vec())
            .collect();
        Ok(Transition {
            info: StepInfo {
                t: state.t(),
                history,
                keyed: self.keyed(&observation),
                injections,
            },
            observation,
            reward,
            done: state.is_done(),
        })
    }
}

fn with_stock_initials(
    ir: &ModelIr,
    initials: &BTreeMap<VariableId, f64>,
) -> Result<ModelIr, EnvError> {
    let mut vars: Vec<_> = ir.variables().values().cloned().collect();
    for (id, v) in initials {
        let var = vars
            .iter_mut()
            .find(|x| &x.id == id)
            .ok_or_else(|| config_err(alloc::format!("unknown stock `{id}`")))?;
        if var.kind != VariableKind::Stock {
            return Err(config_err(alloc::format!("`{id}` is not a stock")));
        }
        var.initial = Some(Expr::Num(*v));
    }
    Ok(ModelIr::new(ir.specs().clone(), vars, ir.tables().clone())?)
}

/// Builds the action spec for `v`: overrides, then the model's limits, then
/// the per-unit defaults.
fn resolve_spec(ir: &ModelIr, config: &EnvConfig, v: &VariableId) -> Result<ActionSpec, EnvError> {
    let var = &ir.variables()[v];
    let kind = infer_action_kind(var, &config.unit_type_map);
    let limits = match config.var_limit_overrides.get(v) {
        Some(LimitOverride::Categories(cats)) => {
            return Ok(ActionSpec::categorical(v.clone(), cats.clone())?);
        }
        Some(LimitOverride::Range(min, max)) => Some(Limits::new(*min, *max)),
        None => var.limits.or_else(|| {
            var.units.as_ref().and_then(|u| {
                config
                    .default_unit_limits
                    .iter()
                    .find(|(k, _)| k.trim().eq_ignore_ascii_case(u.trim()))
                    .map(|(_, l)| *l)
            })
        }),
    };
    let limits = limits.ok_or_else(|| EnvError::UnresolvedLimits(v.clone()))?;
    match kind {
        ActionKind::Continuous => Ok(ActionSpec::continuous(v.clone(), limits.min, limits.max)?),
        ActionKind::Discrete => Ok(ActionSpec::discrete(v.clone(), limits.min, limits.max)?),
        ActionKind::Categorical => Err(config_err(alloc::format!(
            "`{v}` is mapped to categorical but has no category list override"
        ))),
    }
}

impl core::fmt::Display for Observation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}
