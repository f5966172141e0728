//! JSON form of [`EnvConfig`].
//!
//! ```json
//! {
//!   "model": "models/bathtub.xmile",
//!   "env_step": 1.0,
//!   "actionables": ["valve"],
//!   "var_limit_overrides": {"valve": [0, 1], "vat": {"categories": [0.15, 0.3]}},
//!   "parameterize_action_space": true,
//!   "seed": 7,
//!   "reward": {"scalar_delta": {"computed": {"name": "closeness", "expr": "-ABS(level - target)"}}}
//! }
//! ```
//!
//! `model` is a path relative to the config file, or an inline IR object.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sdrl_core::env::LimitOverride;
use sdrl_core::{
    ActionKind, ComputedState, Direction, EnvConfig, Integrator, Limits, ModelIr, RewardSpec,
    RewardTarget, VariableId,
};
use serde::{Deserialize, Serialize};

use crate::{load_model_bytes, Error};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(Box<ModelIr>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OverrideDoc {
    Pair([f64; 2]),
    Range { range: [f64; 2] },
    Categories { categories: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetDoc {
    Variable(VariableId),
    Computed { name: String, expr: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDoc {
    ScalarDelta(TargetDoc),
    BinarizedDelta {
        #[serde(flatten)]
        target: TargetDoc,
        direction: Direction,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfigDoc {
    pub model: ModelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<Vec<VariableId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actionables: Option<Vec<VariableId>>,
    #[serde(default)]
    pub unit_type_map: BTreeMap<String, ActionKind>,
    #[serde(default)]
    pub default_unit_limits: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub var_limit_overrides: BTreeMap<VariableId, OverrideDoc>,
    #[serde(default)]
    pub stock_initials: BTreeMap<VariableId, f64>,
    #[serde(default)]
    pub parameterize_action_space: bool,
    #[serde(default)]
    pub flatten_spaces: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardDoc>,
}

/// A config file resolved against its directory.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: EnvConfig,
    /// Raw bytes of the config file.
    pub config_bytes: Vec<u8>,
    /// Raw bytes of the model file, or its canonical JSON when inline.
    pub model_bytes: Vec<u8>,
    pub model_path: Option<PathBuf>,
}

fn target(doc: &TargetDoc) -> Result<RewardTarget, Error> {
    Ok(match doc {
        TargetDoc::Variable(v) => RewardTarget::Variable(v.clone()),
        TargetDoc::Computed { name, expr } => RewardTarget::Computed(
            ComputedState::expression(name.as_str(), expr)
                .map_err(|e| Error::Config(format!("reward expression `{expr}`: {e}")))?,
        ),
    })
}

impl RewardDoc {
    pub fn to_spec(&self) -> Result<RewardSpec, Error> {
        Ok(match self {
            RewardDoc::ScalarDelta(t) => RewardSpec::ScalarDelta(target(t)?),
            RewardDoc::BinarizedDelta {
                target: t,
                direction,
            } => RewardSpec::BinarizedDelta {
                target: target(t)?,
                direction: *direction,
            },
        })
    }
}

impl EnvConfigDoc {
    pub fn from_json(bytes: &[u8]) -> Result<Self, Error> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Builds the core config; relative model paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<(EnvConfig, Vec<u8>, Option<PathBuf>), Error> {
        let (model, model_bytes, path) = match &self.model {
            ModelSource::Path(p) => {
                let full = base.join(p);
                let bytes = std::fs::read(&full)
                    .map_err(|e| Error::Config(format!("model {}: {e}", full.display())))?;
                let m = load_model_bytes(&full, &bytes)?;
                (m, bytes, Some(full))
            }
            ModelSource::Inline(m) => {
                let bytes = serde_json::to_vec(m).expect("IR serializes");
                ((**m).clone(), bytes, None)
            }
        };
        let mut c = EnvConfig::new(Arc::new(model));
        c.start = self.start;
        c.stop = self.stop;
        c.dt = self.dt;
        c.env_step = self.env_step;
        c.observables = self.observables.clone();
        c.actionables = self.actionables.clone();
        c.unit_type_map = self.unit_type_map.clone();
        c.default_unit_limits = self
            .default_unit_limits
            .iter()
            .map(|(k, [a, b])| (k.clone(), Limits::new(*a, *b)))
            .collect();
        c.var_limit_overrides = self
            .var_limit_overrides
            .iter()
            .map(|(k, o)| {
                let o = match o {
                    OverrideDoc::Pair([a, b]) | OverrideDoc::Range { range: [a, b] } => {
                        LimitOverride::Range(*a, *b)
                    }
                    OverrideDoc::Categories { categories } => {
                        LimitOverride::Categories(categories.clone())
                    }
                };
                (k.clone(), o)
            })
            .collect();
        c.stock_initials = self.stock_initials.clone();
        c.parameterize_action_space = self.parameterize_action_space;
        c.flatten_spaces = self.flatten_spaces;
        c.seed = self.seed;
        c.integrator = self.integrator;
        c.reward = self.reward.as_ref().map(RewardDoc::to_spec).transpose()?;
        Ok((c, model_bytes, path))
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, Error> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    let doc = EnvConfigDoc::from_json(&bytes)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (config, model_bytes, model_path) = doc.resolve(base)?;
    Ok(LoadedConfig {
        config,
        config_bytes: bytes,
        model_bytes,
        model_path,
    })
}
