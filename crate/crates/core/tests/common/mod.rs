#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use sdrl_core::{parse_expression, CompiledModel, Expr, ModelIr, SimSpecs, Variable, VariableId};

pub fn id(s: &str) -> VariableId {
    VariableId::new(s).unwrap()
}

pub fn eq(s: &str) -> Expr {
    parse_expression(s).unwrap()
}

pub fn model(specs: SimSpecs, vars: Vec<Variable>) -> ModelIr {
    ModelIr::new(specs, vars, BTreeMap::new()).unwrap()
}

pub fn compiled(m: &ModelIr) -> Arc<CompiledModel> {
    Arc::new(CompiledModel::new(m).unwrap())
}

/// dS/dt = -k S, S(0) = 100.
pub fn decay(dt: f64) -> ModelIr {
    model(
        SimSpecs::new(0.0, 10.0, dt),
        vec![
            Variable::stock(id("s"), eq("100")).with_outflow(id("out")),
            Variable::flow(id("out"), eq("k * s")),
            Variable::constant(id("k"), 0.1).with_limits(0.0, 1.0),
        ],
    )
}

/// Closed A -> B transfer with a time-varying rate and a return flow.
pub fn transfer(steps: usize) -> ModelIr {
    model(
        SimSpecs::new(0.0, steps as f64 * 0.01, 0.01),
        vec![
            Variable::stock(id("a"), eq("80"))
                .with_inflow(id("back"))
                .with_outflow(id("f")),
            Variable::stock(id("b"), eq("20"))
                .with_inflow(id("f"))
                .with_outflow(id("back")),
            Variable::flow(id("f"), eq("rate * a * (1 + 0.5 * SIN(TIME))")),
            Variable::flow(id("back"), eq("0.02 * b")),
            Variable::constant(id("rate"), 0.3).with_limits(0.0, 1.0),
        ],
    )
}

/// Level with a controllable inflow, a proportional drain and a target.
pub fn bathtub() -> ModelIr {
    model(
        SimSpecs::new(0.0, 40.0, 0.25),
        vec![
            Variable::stock(id("level"), eq("0"))
                .with_inflow(id("filling"))
                .with_outflow(id("draining"))
                .non_negative(),
            Variable::flow(id("filling"), eq("valve * 10")),
            Variable::flow(id("draining"), eq("level / 5")),
            Variable::constant(id("valve"), 0.2).with_limits(0.0, 1.0),
            Variable::constant(id("target"), 40.0),
            Variable::aux(id("gap"), eq("target - level")),
        ],
    )
}

/// Two stocks with noise, smoothing, a delay and two injectable levers.
pub fn noisy() -> ModelIr {
    model(
        SimSpecs::new(0.0, 5.0, 0.25),
        vec![
            Variable::stock(id("x"), eq("10"))
                .with_inflow(id("gain"))
                .with_outflow(id("loss"))
                .non_negative(),
            Variable::stock(id("y"), eq("1")).with_inflow(id("growth")),
            Variable::flow(id("gain"), eq("push * (1 + RANDOM(-0.5, 0.5))")),
            Variable::flow(id("loss"), eq("x * drag")),
            Variable::flow(id("growth"), eq("SMTH1(x, 2) * 0.01 + DELAY3(gain, 1)")),
            Variable::aux(id("share"), eq("x / (x + y) * 100")),
            Variable::constant(id("push"), 3.0).with_limits(0.0, 10.0),
            Variable::constant(id("drag"), 0.2).with_limits(0.0, 2.0),
        ],
    )
}
