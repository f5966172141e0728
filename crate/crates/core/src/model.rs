//! In-memory model representation shared by the parser, the engine and the
//! environment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{is_reserved, Expr};
use crate::ident::VariableId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Stock,
    Flow,
    Auxiliary,
    Constant,
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariableKind::Stock => "stock",
            VariableKind::Flow => "flow",
            VariableKind::Auxiliary => "auxiliary",
            VariableKind::Constant => "constant",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub min: f64,
    pub max: f64,
}

impl Limits {
    pub fn new(min: f64, max: f64) -> Self {
        Limits { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub id: VariableId,
    pub kind: VariableKind,
    /// Right-hand side for flows and auxiliaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equation: Option<Expr>,
    /// Literal value of a constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Initial-value expression of a stock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Expr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inflows: Vec<VariableId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outflows: Vec<VariableId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<Limits>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub non_negative: bool,
}

impl Variable {
    fn bare(id: VariableId, kind: VariableKind) -> Self {
        Variable {
            id,
            kind,
            equation: None,
            value: None,
            initial: None,
            inflows: Vec::new(),
            outflows: Vec::new(),
            units: None,
            limits: None,
            non_negative: false,
        }
    }

    pub fn stock(id: VariableId, initial: Expr) -> Self {
        Variable {
            initial: Some(initial),
            ..Variable::bare(id, VariableKind::Stock)
        }
    }

    pub fn flow(id: VariableId, equation: Expr) -> Self {
        Variable {
            equation: Some(equation),
            ..Variable::bare(id, VariableKind::Flow)
        }
    }

    pub fn aux(id: VariableId, equation: Expr) -> Self {
        Variable {
            equation: Some(equation),
            ..Variable::bare(id, VariableKind::Auxiliary)
        }
    }

    pub fn constant(id: VariableId, value: f64) -> Self {
        Variable {
            value: Some(value),
            ..Variable::bare(id, VariableKind::Constant)
        }
    }

    pub fn with_inflow(mut self, flow: VariableId) -> Self {
        self.inflows.push(flow);
        self
    }

    pub fn with_outflow(mut self, flow: VariableId) -> Self {
        self.outflows.push(flow);
        self
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }

    pub fn with_limits(mut self, min: f64, max: f64) -> Self {
        self.limits = Some(Limits::new(min, max));
        self
    }

    pub fn non_negative(mut self) -> Self {
        self.non_negative = true;
        self
    }

    /// Every variable referenced by this variable's expressions.
    pub fn references(&self) -> BTreeSet<VariableId> {
        let mut refs = BTreeSet::new();
        for e in self.equation.iter().chain(self.initial.iter()) {
            refs.extend(e.references(false));
        }
        refs
    }
}

/// Piecewise-linear graphical function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub x_points: Vec<f64>,
    pub y_points: Vec<f64>,
}

impl LookupTable {
    pub fn new(x_points: Vec<f64>, y_points: Vec<f64>) -> Self {
        LookupTable { x_points, y_points }
    }

    /// Why the table is unusable, if it is.
    pub fn problem(&self) -> Option<String> {
        if self.x_points.len() != self.y_points.len() {
            return Some(format!(
                "{} x points but {} y points",
                self.x_points.len(),
                self.y_points.len()
            ));
        }
        if self.x_points.len() < 2 {
            return Some("needs at least two points".to_string());
        }
        if self
            .x_points
            .iter()
            .chain(self.y_points.iter())
            .any(|v| !v.is_finite())
        {
            return Some("non-finite point".to_string());
        }
        if self.x_points.windows(2).any(|w| w[0] >= w[1]) {
            return Some("x points must be strictly ascending".to_string());
        }
        None
    }

    /// Linear interpolation, clamped to the end values outside the x range.
    pub fn eval(&self, x: f64) -> f64 {
        let xs = &self.x_points;
        let ys = &self.y_points;
        let last = xs.len() - 1;
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[last] {
            return ys[last];
        }
        let hi = xs.partition_point(|&p| p <= x);
        let lo = hi - 1;
        let frac = (x - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + frac * (ys[hi] - ys[lo])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpecs {
    pub start: f64,
    pub stop: f64,
    pub dt: f64,
    #[serde(default)]
    pub time_units: String,
}

impl SimSpecs {
    pub fn new(start: f64, stop: f64, dt: f64) -> Self {
        SimSpecs {
            start,
            stop,
            dt,
            time_units: String::new(),
        }
    }

    /// Number of dt steps in the horizon, when it is a whole number.
    pub fn steps(&self) -> Option<usize> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.dt.is_finite()) {
            return None;
        }
        if self.start >= self.stop || self.dt <= 0.0 {
            return None;
        }
        whole_multiple(self.stop - self.start, self.dt)
    }

    /// Model time after `n` dt steps. Computed from the step count so long
    /// runs do not accumulate rounding.
    pub fn time_at(&self, n: usize) -> f64 {
        self.start + n as f64 * self.dt
    }
}

/// `span / unit` as a positive integer, within 1e-9 relative tolerance.
pub fn whole_multiple(span: f64, unit: f64) -> Option<usize> {
    let n = span / unit;
    let r = libm::round(n);
    if r >= 1.0 && libm::fabs(n - r) <= 1e-9 * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub variable: Option<VariableId>,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    fn error(variable: Option<&VariableId>, code: &str, message: String) -> Self {
        Diagnostic {
            variable: variable.cloned(),
            severity: Severity::Error,
            code: code.to_string(),
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.variable {
            Some(v) => write!(f, "{sev}[{}] {v}: {}", self.code, self.message),
            None => write!(f, "{sev}[{}] {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate variable `{0}`")]
    Duplicate(VariableId),
    #[error("model is invalid: {}", summarize(.0))]
    Invalid(Vec<Diagnostic>),
}

fn summarize(diags: &[Diagnostic]) -> String {
    let mut out = String::new();
    for (i, d) in diags.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        out.push_str(&d.to_string());
    }
    out
}

/// A parsed stock-and-flow model. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelIr {
    specs: SimSpecs,
    variables: BTreeMap<VariableId, Variable>,
    tables: BTreeMap<VariableId, LookupTable>,
    dependency_order: Vec<VariableId>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    specs: SimSpecs,
    variables: BTreeMap<VariableId, Variable>,
    #[serde(default)]
    tables: BTreeMap<VariableId, LookupTable>,
}

impl TryFrom<RawModel> for ModelIr {
    type Error = ModelError;

    fn try_from(raw: RawModel) -> Result<Self, ModelError> {
        if let Some((key, v)) = raw.variables.iter().find(|(k, v)| **k != v.id) {
            return Err(ModelError::Invalid(alloc::vec![Diagnostic::error(
                Some(key),
                "id_mismatch",
                format!("keyed as `{key}` but named `{}`", v.id),
            )]));
        }
        let ir = ModelIr::assemble(raw.specs, raw.variables, raw.tables);
        ir.checked()
    }
}

impl From<ModelIr> for RawModel {
    fn from(m: ModelIr) -> Self {
        RawModel {
            specs: m.specs,
            variables: m.variables,
            tables: m.tables,
        }
    }
}

impl ModelIr {
    /// Builds and validates a model; any Error diagnostic rejects it.
    pub fn new(
        specs: SimSpecs,
        variables: Vec<Variable>,
        tables: BTreeMap<VariableId, LookupTable>,
    ) -> Result<Self, ModelError> {
        Self::unchecked(specs, variables, tables)?.checked()
    }

    /// Builds a model without validating it. The dependency order is
    /// computed best-effort and is incomplete when the model has cycles.
    pub fn unchecked(
        specs: SimSpecs,
        variables: Vec<Variable>,
        tables: BTreeMap<VariableId, LookupTable>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for v in variables {
            if map.contains_key(&v.id) {
                return Err(ModelError::Duplicate(v.id));
            }
            map.insert(v.id.clone(), v);
        }
        Ok(Self::assemble(specs, map, tables))
    }

    fn assemble(
        specs: SimSpecs,
        variables: BTreeMap<VariableId, Variable>,
        tables: BTreeMap<VariableId, LookupTable>,
    ) -> Self {
        let mut ir = ModelIr {
            specs,
            variables,
            tables,
            dependency_order: Vec::new(),
        };
        ir.dependency_order = ir.topo_order().0;
        ir
    }

    fn checked(self) -> Result<Self, ModelError> {
        let errors: Vec<_> = self
            .validate()
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(errors))
        }
    }

    /// Same model with different simulation specs.
    pub fn with_specs(&self, specs: SimSpecs) -> Result<Self, ModelError> {
        let mut m = self.clone();
        m.specs = specs;
        m.checked()
    }

    pub fn specs(&self) -> &SimSpecs {
        &self.specs
    }

    pub fn variables(&self) -> &BTreeMap<VariableId, Variable> {
        &self.variables
    }

    pub fn variable(&self, id: &str) -> Option<&Variable> {
        self.variables.get(id)
    }

    pub fn tables(&self) -> &BTreeMap<VariableId, LookupTable> {
        &self.tables
    }

    /// Non-stock variables in evaluation order.
    pub fn dependency_order(&self) -> &[VariableId] {
        &self.dependency_order
    }

    pub fn stocks(&self) -> impl Iterator<Item = &Variable> {
        self.variables
            .values()
            .filter(|v| v.kind == VariableKind::Stock)
    }

    /// The injectable intervention points: constant converters, by name.
    pub fn constant_converters(&self) -> Vec<VariableId> {
        self.variables
            .values()
            .filter(|v| v.kind == VariableKind::Constant)
            .map(|v| v.id.clone())
            .collect()
    }

    /// Instantaneous dependencies of a non-stock variable on other
    /// non-stock variables.
    fn instant_deps(&self, v: &Variable) -> BTreeSet<VariableId> {
        let mut deps = v
            .equation
            .as_ref()
            .map(|e| e.references(true))
            .unwrap_or_default();
        deps.retain(|d| {
            self.variables
                .get(d)
                .is_some_and(|dv| dv.kind != VariableKind::Stock)
        });
        deps
    }

    /// Kahn's algorithm, smallest name first. Also returns the nodes left
    /// over, which all sit on or behind a cycle.
    fn topo_order(&self) -> (Vec<VariableId>, BTreeSet<VariableId>) {
        let nodes: Vec<&Variable> = self
            .variables
            .values()
            .filter(|v| v.kind != VariableKind::Stock)
            .collect();
        let mut indegree: BTreeMap<&VariableId, usize> = BTreeMap::new();
        let mut dependents: BTreeMap<VariableId, Vec<&VariableId>> = BTreeMap::new();
        for v in &nodes {
            let deps = self.instant_deps(v);
            indegree.insert(&v.id, deps.len());
            for d in deps {
                dependents.entry(d).or_default().push(&v.id);
            }
        }
        let mut ready: BTreeSet<&VariableId> = indegree
            .iter()
            .filter(|(_, &n)| n == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id.clone());
            if let Some(ds) = dependents.get(id) {
                for d in ds {
                    let n = indegree.get_mut(d).expect("known node");
                    *n -= 1;
                    if *n == 0 {
                        ready.insert(d);
                    }
                }
            }
        }
        let placed: BTreeSet<&VariableId> = order.iter().collect();
        let left = indegree
            .keys()
            .filter(|id| !placed.contains(*id))
            .map(|id| (*id).clone())
            .collect();
        (order, left)
    }

    /// Strongly connected components of the instantaneous graph restricted
    /// to `nodes`, keeping only real cycles.
    fn cycles(&self, nodes: &BTreeSet<VariableId>) -> Vec<Vec<VariableId>> {
        struct Tarjan<'a> {
            graph: BTreeMap<&'a VariableId, Vec<VariableId>>,
            index: BTreeMap<VariableId, usize>,
            low: BTreeMap<VariableId, usize>,
            stack: Vec<VariableId>,
            on_stack: BTreeSet<VariableId>,
            next: usize,
            out: Vec<Vec<VariableId>>,
        }
        impl Tarjan<'_> {
            fn visit(&mut self, v: &VariableId) {
                self.index.insert(v.clone(), self.next);
                self.low.insert(v.clone(), self.next);
                self.next += 1;
                self.stack.push(v.clone());
                self.on_stack.insert(v.clone());
                let succ = self.graph.get(v).cloned().unwrap_or_default();
                for w in &succ {
                    if !self.index.contains_key(w) {
                        self.visit(w);
                        let lw = self.low[w];
                        let lv = self.low.get_mut(v).unwrap();
                        *lv = (*lv).min(lw);
                    } else if self.on_stack.contains(w) {
                        let iw = self.index[w];
                        let lv = self.low.get_mut(v).unwrap();
                        *lv = (*lv).min(iw);
                    }
                }
                if self.low[v] == self.index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = self.stack.pop().unwrap();
                        self.on_stack.remove(&w);
                        let done = w == *v;
                        comp.push(w);
                        if done {
                            break;
                        }
                    }
                    let self_loop = comp.len() == 1
                        && self
                            .graph
                            .get(&comp[0])
                            .is_some_and(|s| s.contains(&comp[0]));
                    if comp.len() > 1 || self_loop {
                        comp.sort();
                        self.out.push(comp);
                    }
                }
            }
        }
        let mut graph = BTreeMap::new();
        for id in nodes {
            let v = &self.variables[id];
            let deps: Vec<VariableId> = self
                .instant_deps(v)
                .into_iter()
                .filter(|d| nodes.contains(d))
                .collect();
            graph.insert(id, deps);
        }
        let mut t = Tarjan {
            graph,
            index: BTreeMap::new(),
            low: BTreeMap::new(),
            stack: Vec::new(),
            on_stack: BTreeSet::new(),
            next: 0,
            out: Vec::new(),
        };
        for id in nodes {
            if !t.index.contains_key(id) {
                t.visit(id);
            }
        }
        t.out
    }

    /// Checks every structural invariant. An empty result means the model
    /// is well formed.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let s = &self.specs;
        if s.steps().is_none() {
            diags.push(Diagnostic::error(
                None,
                "bad_sim_specs",
                format!(
                    "need start < stop, dt > 0 and a whole number of steps (start {}, stop {}, dt {})",
                    s.start, s.stop, s.dt
                ),
            ));
        }
        for (id, t) in &self.tables {
            if let Some(p) = t.problem() {
                diags.push(Diagnostic::error(Some(id), "bad_table", p));
            }
        }
        for v in self.variables.values() {
            self.validate_variable(v, &mut diags);
        }
        let (_, left) = self.topo_order();
        for cycle in self.cycles(&left) {
            let names: Vec<&str> = cycle.iter().map(VariableId::as_str).collect();
            diags.push(Diagnostic::error(
                Some(&cycle[0]),
                "cycle",
                format!(
                    "instantaneous dependency cycle without a stock: {}",
                    names.join(" -> ")
                ),
            ));
        }
        diags
    }

    fn validate_variable(&self, v: &Variable, diags: &mut Vec<Diagnostic>) {
        let id = Some(&v.id);
        if is_reserved(v.id.as_str()) {
            diags.push(Diagnostic::error(
                id,
                "reserved_name",
                format!("`{}` is a reserved word", v.id),
            ));
        }
        if let Some(l) = v.limits {
            if !(l.min.is_finite() && l.max.is_finite()) || l.min > l.max {
                diags.push(Diagnostic::error(
                    id,
                    "bad_limits",
                    format!("limits [{}, {}] need finite min <= max", l.min, l.max),
                ));
            }
        }
        let shape_ok = match v.kind {
            VariableKind::Stock => v.initial.is_some() && v.equation.is_none() && v.value.is_none(),
            VariableKind::Flow | VariableKind::Auxiliary => {
                v.equation.is_some() && v.initial.is_none() && v.value.is_none()
            }
            VariableKind::Constant => {
                v.value.is_some_and(f64::is_finite) && v.equation.is_none() && v.initial.is_none()
            }
        };
        if !shape_ok {
            let wanted = match v.kind {
                VariableKind::Stock => "an initial expression only",
                VariableKind::Flow | VariableKind::Auxiliary => "an equation only",
                VariableKind::Constant => "a finite literal value only",
            };
            diags.push(Diagnostic::error(
                id,
                "bad_shape",
                format!("a {} must carry {wanted}", v.kind),
            ));
        }
        if v.kind != VariableKind::Stock {
            if !v.inflows.is_empty() || !v.outflows.is_empty() {
                diags.push(Diagnostic::error(
                    id,
                    "bad_shape",
                    format!(
                        "only stocks have inflows/outflows, `{}` is a {}",
                        v.id, v.kind
                    ),
                ));
            }
            if v.non_negative {
                diags.push(Diagnostic::error(
                    id,
                    "bad_shape",
                    "only stocks can be non-negative".to_string(),
                ));
            }
        }
        for f in v.inflows.iter().chain(v.outflows.iter()) {
            match self.variables.get(f) {
                None => diags.push(Diagnostic::error(
                    id,
                    "unknown_reference",
                    format!("flow `{f}` does not exist"),
                )),
                Some(fv) if fv.kind != VariableKind::Flow => diags.push(Diagnostic::error(
                    id,
                    "not_a_flow",
                    format!("`{f}` is a {}, not a flow", fv.kind),
                )),
                Some(_) => {}
            }
        }
        for e in v.equation.iter().chain(v.initial.iter()) {
            e.walk(&mut |node| match node {
                Expr::Var(r) if !self.variables.contains_key(r) => {
                    diags.push(Diagnostic::error(
                        id,
                        "unknown_reference",
                        format!("unknown variable `{r}`"),
                    ));
                }
                Expr::Lookup(t, _) if !self.tables.contains_key(t) => {
                    diags.push(Diagnostic::error(
                        id,
                        "unknown_builtin",
                        format!("`{t}` is neither a builtin nor a graphical function"),
                    ));
                }
                Expr::Call(b, args) => {
                    let (lo, hi) = b.arity();
                    if args.len() < lo || args.len() > hi {
                        diags.push(Diagnostic::error(
                            id,
                            "arity",
                            format!("{} called with {} argument(s)", b.name(), args.len()),
                        ));
                    }
                }
                _ => {}
            });
        }
    }
}
