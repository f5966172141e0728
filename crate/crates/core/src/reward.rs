//! Delta rewards over model variables or computed states.

use alloc::string::String;
use alloc::sync::Arc;
use core::fmt;

use crate::engine::{CompiledModel, EngineError, PureExpr};
use crate::expr::{parse_expression, Expr, ExprError};
use crate::ident::VariableId;

/// Read-only view of the engine's values at one time point.
#[derive(Clone, Copy)]
pub struct StateView<'a> {
    model: &'a CompiledModel,
    values: &'a [f64],
    t: f64,
}

impl<'a> StateView<'a> {
    pub fn new(model: &'a CompiledModel, values: &'a [f64], t: f64) -> Self {
        StateView { model, values, t }
    }

    pub fn get(&self, var: &str) -> Option<f64> {
        self.model.column_index(var).map(|i| self.values[i])
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn model(&self) -> &'a CompiledModel {
        self.model
    }
}

pub type StateFn = dyn Fn(&StateView<'_>) -> f64 + Send + Sync;
pub type TransitionFn = dyn Fn(&StateView<'_>, &StateView<'_>) -> f64 + Send + Sync;

/// A named quantity derived from the model's values, for rewards on things
/// the model does not hold as a variable.
#[derive(Clone)]
pub enum ComputedState {
    /// Equation over model variables, e.g. `ec / (ec + pc) * 100`.
    Expression {
        name: String,
        expr: Expr,
    },
    Function {
        name: String,
        func: Arc<StateFn>,
    },
}

impl ComputedState {
    pub fn expression(name: impl Into<String>, text: &str) -> Result<Self, ExprError> {
        Ok(ComputedState::Expression {
            name: name.into(),
            expr: parse_expression(text)?,
        })
    }

    pub fn function(
        name: impl Into<String>,
        func: impl Fn(&StateView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ComputedState::Function {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ComputedState::Expression { name, .. } | ComputedState::Function { name, .. } => name,
        }
    }
}

impl fmt::Debug for ComputedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComputedState::Expression { name, expr } => write!(f, "{name} = {expr}"),
            ComputedState::Function { name, .. } => write!(f, "{name} = <fn>"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum RewardTarget {
    Variable(VariableId),
    Computed(ComputedState),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Clone)]
pub enum RewardSpec {
    /// `target(t+1) - target(t)`.
    ScalarDelta(RewardTarget),
    /// 1 when the target moved in `direction`, else 0.
    BinarizedDelta {
        target: RewardTarget,
        direction: Direction,
    },
    /// Arbitrary function of the previous and current states.
    Custom(Arc<TransitionFn>),
}

impl fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardSpec::ScalarDelta(t) => f.debug_tuple("ScalarDelta").field(t).finish(),
            RewardSpec::BinarizedDelta { target, direction } => f
                .debug_struct("BinarizedDelta")
                .field("target", target)
                .field("direction", direction)
                .finish(),
            RewardSpec::Custom(_) => f.write_str("Custom(<fn>)"),
        }
    }
}

impl RewardSpec {
    pub fn scalar_delta_on(var: &str) -> Option<Self> {
        VariableId::new(var).map(|v| RewardSpec::ScalarDelta(RewardTarget::Variable(v)))
    }
}

#[derive(Clone)]
pub(crate) enum BoundTarget {
    Column(usize),
    Expr(PureExpr),
    Func(Arc<StateFn>),
}

impl BoundTarget {
    pub(crate) fn bind(model: &CompiledModel, target: &RewardTarget) -> Result<Self, EngineError> {
        match target {
            RewardTarget::Variable(v) => model
                .column_index(v.as_str())
                .map(BoundTarget::Column)
                .ok_or_else(|| EngineError::UnknownVariable(v.clone())),
            RewardTarget::Computed(ComputedState::Expression { expr, .. }) => {
                Ok(BoundTarget::Expr(model.compile_pure(expr)?))
            }
            RewardTarget::Computed(ComputedState::Function { func, .. }) => {
                Ok(BoundTarget::Func(Arc::clone(func)))
            }
        }
    }

    pub(crate) fn eval(&self, view: &StateView<'_>) -> f64 {
        match self {
            BoundTarget::Column(i) => view.values[*i],
            BoundTarget::Expr(e) => e.eval(view.model, view.values, view.t),
            BoundTarget::Func(f) => f(view),
        }
    }
}

/// Reward function bound to one compiled model.
#[derive(Clone)]
pub(crate) enum BoundReward {
    Delta(BoundTarget),
    Binarized(BoundTarget, Direction),
    Custom(Arc<TransitionFn>),
}

impl BoundReward {
    pub(crate) fn bind(model: &CompiledModel, spec: &RewardSpec) -> Result<Self, EngineError> {
        Ok(match spec {
            RewardSpec::ScalarDelta(t) => BoundReward::Delta(BoundTarget::bind(model, t)?),
            RewardSpec::BinarizedDelta { target, direction } => {
                BoundReward::Binarized(BoundTarget::bind(model, target)?, *direction)
            }
            RewardSpec::Custom(f) => BoundReward::Custom(Arc::clone(f)),
        })
    }

    /// Target value used as the delta baseline; custom rewards have none.
    pub(crate) fn target(&self, view: &StateView<'_>) -> Option<f64> {
        match self {
            BoundReward::Delta(t) | BoundReward::Binarized(t, _) => Some(t.eval(view)),
            BoundReward::Custom(_) => None,
        }
    }

    pub(crate) fn reward(
        &self,
        prev_target: Option<f64>,
        prev: &StateView<'_>,
        cur: &StateView<'_>,
    ) -> f64 {
        match self {
            BoundReward::Delta(t) => t.eval(cur) - prev_target.unwrap_or(f64::NAN),
            BoundReward::Binarized(t, dir) => {
                let delta = t.eval(cur) - prev_target.unwrap_or(f64::NAN);
                let moved = match dir {
                    Direction::Increase => delta > 0.0,
                    Direction::Decrease => delta < 0.0,
                };
                if moved {
                    1.0
                } else {
                    0.0
                }
            }
            BoundReward::Custom(f) => f(prev, cur),
        }
    }
}
