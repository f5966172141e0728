//! Reader for the supported XMILE subset.
//!
//! One `<model>` with `<stock>`, `<flow>`, `<aux>` and `<gf>` variables.
//! Auxiliaries whose equation folds to a number become constants. Layout
//! sections are skipped with a warning; arrays, modules and per-variable
//! time steps are rejected.

use std::collections::BTreeMap;
use std::fmt;

use roxmltree::{Document, Node};
use sdrl_core::model::{Limits, LookupTable, ModelError, ModelIr, SimSpecs, Variable};
use sdrl_core::{parse_expression, Expr, ExprError, Severity, VariableId};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostic {
    pub line: u32,
    pub column: u32,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {sev}[{}]: {}",
            self.line, self.column, self.code, self.message
        )
    }
}

#[derive(Debug)]
pub struct ParsedModel {
    pub model: ModelIr,
    pub warnings: Vec<ParseDiagnostic>,
}

/// All diagnostics from a failed parse; at least one is an error.
#[derive(Debug)]
pub struct ParseFailure {
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for d in &self.diagnostics {
            if !first {
                writeln!(f)?;
            }
            first = false;
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseFailure {}

pub fn parse_xmile(source: &str) -> Result<ParsedModel, ParseFailure> {
    let doc = match Document::parse(source) {
        Ok(doc) => doc,
        Err(e) => {
            let pos = e.pos();
            return Err(ParseFailure {
                diagnostics: vec![ParseDiagnostic {
                    line: pos.row,
                    column: pos.col,
                    severity: Severity::Error,
                    code: "malformed_xml".into(),
                    message: e.to_string(),
                }],
            });
        }
    };
    let mut p = Parser {
        doc: &doc,
        diags: Vec::new(),
        positions: BTreeMap::new(),
    };
    let model = p.document();
    let has_error = p.diags.iter().any(|d| d.severity == Severity::Error);
    match model {
        Some(model) if !has_error => Ok(ParsedModel {
            model,
            warnings: p.diags,
        }),
        _ => {
            if !has_error {
                p.diags.push(p.diag(
                    doc.root_element(),
                    Severity::Error,
                    "invalid_model",
                    "model could not be built",
                ));
            }
            Err(ParseFailure {
                diagnostics: p.diags,
            })
        }
    }
}

struct Parser<'a, 'input> {
    doc: &'a Document<'input>,
    diags: Vec<ParseDiagnostic>,
    /// Element position of each variable, for model-level diagnostics.
    positions: BTreeMap<VariableId, (u32, u32)>,
}

fn tag<'a>(n: &Node<'a, '_>) -> &'a str {
    n.tag_name().name()
}

fn child<'a, 'i>(n: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    n.children().find(|c| c.is_element() && tag(c) == name)
}

fn text_of(n: Node<'_, '_>) -> String {
    n.children()
        .filter(|c| c.is_text())
        .filter_map(|c| c.text())
        .collect::<String>()
}

impl<'a, 'input> Parser<'a, 'input> {
    fn pos_of(&self, byte: usize) -> (u32, u32) {
        let p = self.doc.text_pos_at(byte);
        (p.row, p.col)
    }

    fn diag(
        &self,
        n: Node<'_, '_>,
        severity: Severity,
        code: &str,
        msg: impl Into<String>,
    ) -> ParseDiagnostic {
        let (line, column) = self.pos_of(n.range().start);
        ParseDiagnostic {
            line,
            column,
            severity,
            code: code.into(),
            message: msg.into(),
        }
    }

    fn error(&mut self, n: Node<'_, '_>, code: &str, msg: impl Into<String>) {
        let d = self.diag(n, Severity::Error, code, msg);
        self.diags.push(d);
    }

    fn warn(&mut self, n: Node<'_, '_>, code: &str, msg: impl Into<String>) {
        let d = self.diag(n, Severity::Warning, code, msg);
        self.diags.push(d);
    }

    fn document(&mut self) -> Option<ModelIr> {
        let root = self.doc.root_element();
        if tag(&root) != "xmile" {
            self.error(
                root,
                "not_xmile",
                format!("root element is <{}>, expected <xmile>", tag(&root)),
            );
            return None;
        }
        let mut specs = None;
        let mut models = Vec::new();
        for n in root.children().filter(Node::is_element) {
            match tag(&n) {
                "sim_specs" => specs = self.sim_specs(n),
                "model" => models.push(n),
                "dimensions" => self.error(
                    n,
                    "unsupported_arrays",
                    "array dimensions are not supported",
                ),
                "macro" => self.error(n, "unsupported_macros", "macros are not supported"),
                "header" | "prefs" | "data" | "behavior" | "style" | "model_units" => {}
                other => self.warn(n, "ignored_element", format!("ignored <{other}>")),
            }
        }
        let Some(specs) = specs else {
            self.error(root, "missing_sim_specs", "no <sim_specs> element");
            return None;
        };
        let model = match models.as_slice() {
            [] => {
                self.error(root, "missing_model", "no <model> element");
                return None;
            }
            [m] => *m,
            [_, extra, ..] => {
                self.error(
                    *extra,
                    "unsupported_submodels",
                    "only one <model> is supported",
                );
                return None;
            }
        };
        if let Some(name) = model.attribute("name") {
            if !name.is_empty() {
                self.warn(
                    model,
                    "named_model",
                    format!("model `{name}` treated as the root model"),
                );
            }
        }
        self.model(model, specs)
    }

    fn number(&mut self, n: Node<'_, '_>, what: &str) -> Option<f64> {
        let t = text_of(n);
        match t.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.error(
                    n,
                    "bad_number",
                    format!("{what}: `{}` is not a number", t.trim()),
                );
                None
            }
        }
    }

    fn attr_number(&mut self, n: Node<'_, '_>, attr: &str) -> Option<Option<f64>> {
        match n.attribute(attr) {
            None => Some(None),
            Some(s) => match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Some(Some(v)),
                _ => {
                    self.error(
                        n,
                        "bad_number",
                        format!("attribute {attr}=`{s}` is not a number"),
                    );
                    None
                }
            },
        }
    }

    fn sim_specs(&mut self, n: Node<'_, '_>) -> Option<SimSpecs> {
        let mut start = None;
        let mut stop = None;
        let mut dt = 1.0;
        for c in n.children().filter(Node::is_element) {
            match tag(&c) {
                "start" => start = self.number(c, "start"),
                "stop" => stop = self.number(c, "stop"),
                "dt" => {
                    let v = self.number(c, "dt")?;
                    let reciprocal = c.attribute("reciprocal") == Some("true");
                    dt = if reciprocal { 1.0 / v } else { v };
                }
                other => self.warn(
                    c,
                    "ignored_element",
                    format!("ignored <{other}> in <sim_specs>"),
                ),
            }
        }
        if let Some(method) = n.attribute("method") {
            if !method.eq_ignore_ascii_case("euler") {
                self.warn(
                    n,
                    "integration_method",
                    format!("method `{method}` ignored; the integrator is chosen at run time"),
                );
            }
        }
        let (Some(start), Some(stop)) = (start, stop) else {
            self.error(
                n,
                "missing_sim_specs",
                "<sim_specs> needs <start> and <stop>",
            );
            return None;
        };
        let mut specs = SimSpecs::new(start, stop, dt);
        if let Some(u) = n.attribute("time_units") {
            specs.time_units = u.to_string();
        }
        Some(specs)
    }

    fn model(&mut self, model: Node<'_, 'input>, specs: SimSpecs) -> Option<ModelIr> {
        let mut vars: Vec<Variable> = Vec::new();
        let mut tables: BTreeMap<VariableId, LookupTable> = BTreeMap::new();
        let mut eqn_nodes: Vec<(usize, Node<'_, '_>)> = Vec::new();
        for n in model.children().filter(Node::is_element) {
            match tag(&n) {
                "variables" => {
                    for v in n.children().filter(Node::is_element) {
                        self.variable(v, &mut vars, &mut tables, &mut eqn_nodes);
                    }
                }
                "views" | "display" => {
                    self.warn(n, "ignored_layout", format!("<{}> ignored", tag(&n)))
                }
                "module" => self.error(n, "unsupported_submodels", "modules are not supported"),
                "sim_specs" => self.error(
                    n,
                    "unsupported_variable_dt",
                    "model-level <sim_specs> is not supported",
                ),
                other => self.warn(n, "ignored_element", format!("ignored <{other}>")),
            }
        }
        if self.diags.iter().any(|d| d.severity == Severity::Error) {
            return None;
        }
        // Calls to unknown functions parse as lookups; report the ones that
        // name no graphical function as unknown builtins.
        let mut bad = false;
        for (i, node) in &eqn_nodes {
            let v = &vars[*i];
            let mut missing = Vec::new();
            for e in [&v.equation, &v.initial].into_iter().flatten() {
                e.walk(&mut |x| {
                    if let Expr::Lookup(t, _) = x {
                        if !tables.contains_key(t) {
                            missing.push(t.clone());
                        }
                    }
                });
            }
            for t in missing {
                bad = true;
                self.error(
                    *node,
                    "unknown_builtin",
                    format!("`{t}` is neither a builtin nor a graphical function"),
                );
            }
        }
        if bad {
            return None;
        }
        match ModelIr::new(specs, vars, tables) {
            Ok(m) => {
                for d in m.validate() {
                    let (line, column) = d
                        .variable
                        .as_ref()
                        .and_then(|v| self.positions.get(v).copied())
                        .unwrap_or_else(|| self.pos_of(model.range().start));
                    self.diags.push(ParseDiagnostic {
                        line,
                        column,
                        severity: d.severity,
                        code: d.code,
                        message: d.message,
                    });
                }
                Some(m)
            }
            Err(ModelError::Duplicate(id)) => {
                self.error(model, "duplicate_name", format!("`{id}` is defined twice"));
                None
            }
            Err(ModelError::Invalid(ds)) => {
                for d in ds {
                    let (line, column) = d
                        .variable
                        .as_ref()
                        .and_then(|v| self.positions.get(v).copied())
                        .unwrap_or_else(|| self.pos_of(model.range().start));
                    let message = match &d.variable {
                        Some(v) => format!("{v}: {}", d.message),
                        None => d.message,
                    };
                    self.diags.push(ParseDiagnostic {
                        line,
                        column,
                        severity: d.severity,
                        code: d.code,
                        message,
                    });
                }
                None
            }
        }
    }

    fn equation(&mut self, n: Node<'_, '_>) -> Option<Expr> {
        let text = text_of(n);
        match parse_expression(&text) {
            Ok(e) => Some(e),
            Err(ExprError { pos, code, message }) => {
                let text_start = n
                    .children()
                    .find(|c| c.is_text())
                    .map(|c| c.range().start)
                    .unwrap_or(n.range().start);
                let byte = text
                    .char_indices()
                    .nth(pos)
                    .map(|(b, _)| b)
                    .unwrap_or(text.len());
                let (line, column) = self.pos_of(text_start + byte);
                self.diags.push(ParseDiagnostic {
                    line,
                    column,
                    severity: Severity::Error,
                    code: code.into(),
                    message: format!("{message} in `{}`", text.trim()),
                });
                None
            }
        }
    }

    fn graphical(&mut self, n: Node<'_, '_>) -> Option<LookupTable> {
        if let Some(t) = n.attribute("type") {
            if !t.eq_ignore_ascii_case("continuous") {
                self.warn(
                    n,
                    "gf_type",
                    format!("graphical function type `{t}` evaluated as continuous"),
                );
            }
        }
        let list = |p: &mut Self, c: Node<'_, '_>| -> Option<Vec<f64>> {
            let sep = c.attribute("sep").unwrap_or(",");
            let t = text_of(c);
            let out: Result<Vec<f64>, _> = t.split(sep).map(|s| s.trim().parse::<f64>()).collect();
            match out {
                Ok(v) => Some(v),
                Err(_) => {
                    p.error(c, "bad_number", format!("bad point list `{}`", t.trim()));
                    None
                }
            }
        };
        let y = match child(n, "ypts") {
            Some(c) => list(self, c)?,
            None => {
                self.error(n, "bad_graphical_function", "<gf> needs <ypts>");
                return None;
            }
        };
        let x = if let Some(c) = child(n, "xpts") {
            list(self, c)?
        } else if let Some(c) = child(n, "xscale") {
            let min = self.attr_number(c, "min")?;
            let max = self.attr_number(c, "max")?;
            let (Some(min), Some(max)) = (min, max) else {
                self.error(c, "bad_graphical_function", "<xscale> needs min and max");
                return None;
            };
            if y.len() < 2 {
                self.error(
                    n,
                    "bad_graphical_function",
                    "a graphical function needs at least two points",
                );
                return None;
            }
            let k = (y.len() - 1) as f64;
            (0..y.len())
                .map(|i| min + (max - min) * i as f64 / k)
                .collect()
        } else {
            self.error(n, "bad_graphical_function", "<gf> needs <xscale> or <xpts>");
            return None;
        };
        let table = LookupTable::new(x, y);
        if let Some(problem) = table.problem() {
            self.error(n, "bad_graphical_function", problem);
            return None;
        }
        Some(table)
    }

    fn limits(&mut self, n: Node<'_, '_>) -> Option<Option<Limits>> {
        let min = self.attr_number(n, "min")?;
        let max = self.attr_number(n, "max")?;
        match (min, max) {
            (Some(a), Some(b)) => Some(Some(Limits::new(a, b))),
            _ => {
                self.warn(
                    n,
                    "partial_range",
                    format!("<{}> without both min and max ignored", tag(&n)),
                );
                Some(None)
            }
        }
    }

    fn variable<'n>(
        &mut self,
        n: Node<'n, 'input>,
        vars: &mut Vec<Variable>,
        tables: &mut BTreeMap<VariableId, LookupTable>,
        eqn_nodes: &mut Vec<(usize, Node<'n, 'input>)>,
    ) {
        let kind = tag(&n);
        if !matches!(kind, "stock" | "flow" | "aux" | "gf") {
            match kind {
                "module" => self.error(n, "unsupported_submodels", "modules are not supported"),
                "group" => self.warn(n, "ignored_element", "<group> ignored"),
                other => self.error(
                    n,
                    "unsupported_variable",
                    format!("<{other}> is not supported"),
                ),
            }
            return;
        }
        let Some(raw) = n.attribute("name") else {
            self.error(n, "missing_name", format!("<{kind}> without a name"));
            return;
        };
        let Some(id) = VariableId::new(raw) else {
            self.error(n, "bad_name", format!("`{raw}` is not a usable name"));
            return;
        };
        if sdrl_core::expr::is_reserved(id.as_str()) {
            self.error(
                n,
                "reserved_name",
                format!("`{raw}` clashes with a builtin name"),
            );
            return;
        }
        if self.positions.contains_key(&id) {
            self.error(n, "duplicate_name", format!("`{id}` is defined twice"));
            return;
        }
        self.positions
            .insert(id.clone(), self.pos_of(n.range().start));

        if kind == "gf" {
            if let Some(t) = self.graphical(n) {
                tables.insert(id, t);
            }
            return;
        }

        let mut eqn = None;
        let mut eqn_node = n;
        let mut inflows = Vec::new();
        let mut outflows = Vec::new();
        let mut units = None;
        let mut range = None;
        let mut scale = None;
        let mut non_negative = false;
        let mut gf = None;
        for c in n.children().filter(Node::is_element) {
            match tag(&c) {
                "eqn" => {
                    eqn_node = c;
                    eqn = self.equation(c);
                    if eqn.is_none() {
                        return;
                    }
                }
                "inflow" | "outflow" => {
                    let t = text_of(c);
                    match VariableId::new(&t) {
                        Some(f) if kind == "stock" => {
                            if tag(&c) == "inflow" {
                                inflows.push(f)
                            } else {
                                outflows.push(f)
                            }
                        }
                        Some(_) => self.error(
                            c,
                            "misplaced_flow",
                            format!("<{}> outside a stock", tag(&c)),
                        ),
                        None => self.error(c, "bad_name", format!("bad flow name `{t}`")),
                    }
                }
                "non_negative" => non_negative = true,
                "units" => {
                    let t = text_of(c).trim().to_string();
                    if !t.is_empty() {
                        units = Some(t);
                    }
                }
                "range" => range = self.limits(c).flatten(),
                "scale" => scale = self.limits(c).flatten(),
                "gf" => gf = self.graphical(c),
                "dimensions" | "element" => self.error(
                    c,
                    "unsupported_arrays",
                    "arrayed variables are not supported",
                ),
                "dt" => self.error(
                    c,
                    "unsupported_variable_dt",
                    "a per-variable time step is not supported",
                ),
                "doc" | "format" | "display" | "event_poster" | "conveyor" | "queue" | "leak" => {
                    if matches!(tag(&c), "conveyor" | "queue" | "leak") {
                        self.error(
                            c,
                            "unsupported_stock_type",
                            format!("<{}> stocks are not supported", tag(&c)),
                        );
                    }
                }
                other => self.warn(c, "ignored_element", format!("ignored <{other}> in `{id}`")),
            }
        }
        if n.attribute("dt").is_some() {
            self.error(
                n,
                "unsupported_variable_dt",
                "a per-variable time step is not supported",
            );
        }
        let Some(eqn) = eqn else {
            self.error(n, "missing_equation", format!("`{id}` has no <eqn>"));
            return;
        };
        let mut v = match kind {
            "stock" => {
                let mut v = Variable::stock(id.clone(), eqn);
                v.inflows = inflows;
                v.outflows = outflows;
                v.non_negative = non_negative;
                v
            }
            "flow" => {
                if non_negative {
                    self.warn(
                        n,
                        "flow_non_negative",
                        format!("non_negative on flow `{id}` ignored"),
                    );
                }
                let e = match gf {
                    Some(t) => {
                        tables.insert(id.clone(), t);
                        Expr::Lookup(id.clone(), Box::new(eqn))
                    }
                    None => eqn,
                };
                Variable::flow(id.clone(), e)
            }
            _ => match gf {
                Some(t) => {
                    tables.insert(id.clone(), t);
                    Variable::aux(id.clone(), Expr::Lookup(id.clone(), Box::new(eqn)))
                }
                None => match eqn.fold_constant() {
                    Some(value) if value.is_finite() => Variable::constant(id.clone(), value),
                    _ => Variable::aux(id.clone(), eqn),
                },
            },
        };
        v.units = units;
        v.limits = range.or(scale);
        vars.push(v);
        eqn_nodes.push((vars.len() - 1, eqn_node));
    }
}
