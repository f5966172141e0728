//! Stock-and-flow system-dynamics models as episodic reinforcement-learning
//! environments.
//!
//! This crate is `no_std` (it needs `alloc`). It carries the model
//! representation, the equation parser, the fixed-step simulation engine,
//! the environment with its composite action spaces and delta rewards, and
//! the baseline agents. File formats, the XMILE reader and the command line
//! live in the `sdrl` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agents;
pub mod engine;
pub mod env;
pub mod expr;
pub mod ident;
pub mod model;
pub mod reward;
pub mod space;

pub use engine::{CompiledModel, EngineError, Injection, Integrator, SimState};
pub use env::{Action, Env, EnvConfig, EnvError, Observation, Transition};
pub use expr::{parse_expression, BinaryOp, Builtin, Expr, ExprError, UnaryOp};
pub use ident::VariableId;
pub use model::{
    Diagnostic, Limits, LookupTable, ModelError, ModelIr, Severity, SimSpecs, Variable,
    VariableKind,
};
pub use reward::{ComputedState, Direction, RewardSpec, RewardTarget, StateView};
pub use space::{ActionKind, ActionSpec, ActionValue, FlatSpec};
