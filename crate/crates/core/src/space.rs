//! Composite action spaces: per-variable continuous, discrete and
//! categorical domains, their flattening to `[-1, 1]^n`, and the
//! parameterized `(apply, value)` form.
//!
//! Kinds use the mathematical terms: continuous for a real interval,
//! discrete for an ordered integer range, categorical for an unordered set
//! of values addressed by index.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::VariableId;
use crate::model::Variable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Continuous,
    Discrete,
    Categorical,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Continuous => "continuous",
            ActionKind::Discrete => "discrete",
            ActionKind::Categorical => "categorical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionDomain {
    Continuous { min: f64, max: f64 },
    Discrete { min: i64, max: i64 },
    Categorical { categories: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub variable: VariableId,
    pub domain: ActionDomain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionValue {
    Continuous(f64),
    Discrete(i64),
    Categorical(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("`{variable}`: {reason}")]
    BadSpec {
        variable: VariableId,
        reason: String,
    },
    #[error("`{variable}`: value {value} is outside [{min}, {max}]")]
    OutOfRange {
        variable: VariableId,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("`{variable}`: expected a {expected} value")]
    WrongKind {
        variable: VariableId,
        expected: ActionKind,
    },
    #[error("action has {got} components, the space has {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("flat component {index} = {value} is outside [-1, 1]")]
    FlatOutOfRange { index: usize, value: f64 },
}

fn bad(variable: &VariableId, reason: impl Into<String>) -> SpaceError {
    SpaceError::BadSpec {
        variable: variable.clone(),
        reason: reason.into(),
    }
}

impl ActionSpec {
    pub fn continuous(variable: VariableId, min: f64, max: f64) -> Result<Self, SpaceError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(bad(
                &variable,
                alloc::format!("need finite min < max, got [{min}, {max}]"),
            ));
        }
        Ok(ActionSpec {
            variable,
            domain: ActionDomain::Continuous { min, max },
        })
    }

    /// Integer range; the bounds must be whole numbers.
    pub fn discrete(variable: VariableId, min: f64, max: f64) -> Result<Self, SpaceError> {
        let whole = |v: f64| v.is_finite() && libm::trunc(v) == v && libm::fabs(v) < 9.0e15;
        if !(whole(min) && whole(max) && min < max) {
            return Err(bad(
                &variable,
                alloc::format!(
                    "discrete limits must be integers with min < max, got [{min}, {max}]"
                ),
            ));
        }
        Ok(ActionSpec {
            variable,
            domain: ActionDomain::Discrete {
                min: min as i64,
                max: max as i64,
            },
        })
    }

    pub fn categorical(variable: VariableId, categories: Vec<f64>) -> Result<Self, SpaceError> {
        if categories.iter().any(|c| !c.is_finite()) {
            return Err(bad(&variable, "categories must be finite"));
        }
        let mut sorted = categories.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if categories.len() < 2 || sorted.len() != categories.len() {
            return Err(bad(&variable, "need at least two distinct categories"));
        }
        Ok(ActionSpec {
            variable,
            domain: ActionDomain::Categorical { categories },
        })
    }

    pub fn kind(&self) -> ActionKind {
        match self.domain {
            ActionDomain::Continuous { .. } => ActionKind::Continuous,
            ActionDomain::Discrete { .. } => ActionKind::Discrete,
            ActionDomain::Categorical { .. } => ActionKind::Categorical,
        }
    }

    /// The model value an action stands for, range-checked.
    pub fn to_model_value(&self, value: ActionValue) -> Result<f64, SpaceError> {
        let out_of_range = |v: f64, min: f64, max: f64| SpaceError::OutOfRange {
            variable: self.variable.clone(),
            value: v,
            min,
            max,
        };
        match (&self.domain, value) {
            (ActionDomain::Continuous { min, max }, ActionValue::Continuous(v)) => {
                if v.is_finite() && v >= *min && v <= *max {
                    Ok(v)
                } else {
                    Err(out_of_range(v, *min, *max))
                }
            }
            (ActionDomain::Discrete { min, max }, ActionValue::Discrete(v)) => {
                if v >= *min && v <= *max {
                    Ok(v as f64)
                } else {
                    Err(out_of_range(v as f64, *min as f64, *max as f64))
                }
            }
            (ActionDomain::Categorical { categories }, ActionValue::Categorical(i)) => categories
                .get(i)
                .copied()
                .ok_or_else(|| out_of_range(i as f64, 0.0, (categories.len() - 1) as f64)),
            _ => Err(SpaceError::WrongKind {
                variable: self.variable.clone(),
                expected: self.kind(),
            }),
        }
    }

    /// Maps a component in `[-1, 1]` onto this domain.
    pub fn unflatten_one(&self, v: f64) -> ActionValue {
        let unit = (v + 1.0) / 2.0;
        match &self.domain {
            ActionDomain::Continuous { min, max } => {
                ActionValue::Continuous((min + unit * (max - min)).clamp(*min, *max))
            }
            ActionDomain::Discrete { min, max } => {
                let (lo, hi) = (*min as f64, *max as f64);
                // libm::round rounds half away from zero.
                let r = libm::round(lo + unit * (hi - lo)).clamp(lo, hi);
                ActionValue::Discrete(r as i64)
            }
            ActionDomain::Categorical { categories } => {
                let k = categories.len();
                let idx = libm::floor(unit * k as f64).max(0.0) as usize;
                ActionValue::Categorical(idx.min(k - 1))
            }
        }
    }

    /// Inverse of [`unflatten_one`](Self::unflatten_one). Categories map to
    /// the centre of their bin.
    pub fn flatten_one(&self, value: ActionValue) -> Result<f64, SpaceError> {
        self.to_model_value(value)?;
        Ok(match (&self.domain, value) {
            (ActionDomain::Continuous { min, max }, ActionValue::Continuous(v)) => {
                2.0 * (v - min) / (max - min) - 1.0
            }
            (ActionDomain::Discrete { min, max }, ActionValue::Discrete(v)) => {
                2.0 * (v - min) as f64 / (max - min) as f64 - 1.0
            }
            (ActionDomain::Categorical { categories }, ActionValue::Categorical(i)) => {
                2.0 * (i as f64 + 0.5) / categories.len() as f64 - 1.0
            }
            _ => unreachable!("checked by to_model_value"),
        })
    }
}

/// The flattened view of a composite space. With `parameterized`, each
/// variable takes two adjacent components: the meta-action (apply when
/// `>= 0`) followed by the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSpec {
    pub specs: Vec<ActionSpec>,
    pub parameterized: bool,
}

impl FlatSpec {
    pub fn new(specs: Vec<ActionSpec>, parameterized: bool) -> Self {
        FlatSpec {
            specs,
            parameterized,
        }
    }

    pub fn width(&self) -> usize {
        if self.parameterized {
            2 * self.specs.len()
        } else {
            self.specs.len()
        }
    }

    fn check(&self, v: &[f64]) -> Result<(), SpaceError> {
        if v.len() != self.width() {
            return Err(SpaceError::WrongLength {
                expected: self.width(),
                got: v.len(),
            });
        }
        match v.iter().position(|x| !(-1.0..=1.0).contains(x)) {
            Some(index) => Err(SpaceError::FlatOutOfRange {
                index,
                value: v[index],
            }),
            None => Ok(()),
        }
    }

    pub fn flatten(&self, action: &[ActionValue]) -> Result<Vec<f64>, SpaceError> {
        if action.len() != self.specs.len() {
            return Err(SpaceError::WrongLength {
                expected: self.specs.len(),
                got: action.len(),
            });
        }
        if self.parameterized {
            let pairs: Vec<(bool, ActionValue)> = action.iter().map(|a| (true, *a)).collect();
            return self.flatten_parameterized(&pairs);
        }
        self.specs
            .iter()
            .zip(action)
            .map(|(s, a)| s.flatten_one(*a))
            .collect()
    }

    /// Unflattens a plain (not parameterized) vector.
    pub fn unflatten(&self, v: &[f64]) -> Result<Vec<ActionValue>, SpaceError> {
        if self.parameterized {
            return Ok(self
                .unflatten_parameterized(v)?
                .into_iter()
                .map(|(_, a)| a)
                .collect());
        }
        self.check(v)?;
        Ok(self
            .specs
            .iter()
            .zip(v)
            .map(|(s, x)| s.unflatten_one(*x))
            .collect())
    }

    pub fn flatten_parameterized(
        &self,
        action: &[(bool, ActionValue)],
    ) -> Result<Vec<f64>, SpaceError> {
        if action.len() != self.specs.len() {
            return Err(SpaceError::WrongLength {
                expected: self.specs.len(),
                got: action.len(),
            });
        }
        let mut out = Vec::with_capacity(2 * action.len());
        for (s, (apply, a)) in self.specs.iter().zip(action) {
            out.push(if *apply { 1.0 } else { -1.0 });
            out.push(s.flatten_one(*a)?);
        }
        Ok(out)
    }

    pub fn unflatten_parameterized(
        &self,
        v: &[f64],
    ) -> Result<Vec<(bool, ActionValue)>, SpaceError> {
        if !self.parameterized {
            return Ok(self.unflatten(v)?.into_iter().map(|a| (true, a)).collect());
        }
        self.check(v)?;
        Ok(self
            .specs
            .iter()
            .zip(v.chunks(2))
            .map(|(s, pair)| (pair[0] >= 0.0, s.unflatten_one(pair[1])))
            .collect())
    }
}

/// Substrings of a variable name that mark it as a count.
const DISCRETE_MARKERS: [&str; 5] = ["count", "number", "num_", "capacity", "population"];

/// Kind of an actionable variable: the unit mapping wins, then the name
/// heuristic. Categorical is never inferred.
pub fn infer_action_kind(
    variable: &Variable,
    unit_type_map: &BTreeMap<String, ActionKind>,
) -> ActionKind {
    if let Some(units) = &variable.units {
        let units = units.trim();
        if let Some((_, k)) = unit_type_map
            .iter()
            .find(|(u, _)| u.trim().eq_ignore_ascii_case(units))
        {
            return *k;
        }
    }
    let name = variable.id.as_str();
    if DISCRETE_MARKERS.iter().any(|m| name.contains(m)) {
        ActionKind::Discrete
    } else {
        ActionKind::Continuous
    }
}
