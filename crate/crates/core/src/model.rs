//! Factored causal POMDP model.
//!
//! A model is loaded from a JSON document ([`ModelDocument`]), checked with
//! [`validate_model`], and resolved into an immutable [`CausalPomdp`] whose
//! names have been replaced by indices.
//!
//! States are full assignments of the declared variables. They are indexed in
//! row-major order over the declared variable order (the first variable is the
//! most significant digit), and that single ordering is shared by CPT parent
//! rows, belief vectors and alpha tables throughout the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interventions::{DomainSpec, ShiftMatrix};

/// Maximum deviation from 1 accepted for a CPT distribution at load time.
pub const CPT_TOLERANCE: f64 = 1e-9;

/// Distributions closer than this to unit mass are kept bit-exact instead of
/// being renormalized, so that render/load is idempotent.
const RENORMALIZE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action index {0} out of range")]
    ActionOutOfRange(usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown value `{value}` for variable `{variable}`")]
    UnknownValue { variable: String, value: String },
    #[error("malformed state: {0}")]
    MalformedState(String),
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
}

// ---------------------------------------------------------------------------
// Document (wire) form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentLists {
    #[serde(default)]
    pub prev: Vec<String>,
    #[serde(default)]
    pub curr: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardDocument {
    pub vars: Vec<String>,
    pub table: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDocument {
    pub name: String,
    pub shifts: BTreeMap<String, Vec<Vec<f64>>>,
}

/// The model file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub variables: Vec<VariableSpec>,
    pub actions: Vec<String>,
    pub parents: BTreeMap<String, ParentLists>,
    pub transition: BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>,
    pub reward: RewardDocument,
    pub observables: Vec<String>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<DomainDocument>,
}

impl ModelDocument {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            ModelError::Parse {
                path,
                message: err.into_inner().to_string(),
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub rule: String,
    pub detail: String,
}

impl Finding {
    fn new(path: impl Into<String>, rule: &str, detail: impl Into<String>) -> Self {
        Finding {
            path: path.into(),
            rule: rule.to_string(),
            detail: detail.into(),
        }
    }
}

/// List of violated invariants. Empty iff the document is a valid model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn with_rule<'a>(&'a self, rule: &'a str) -> impl Iterator<Item = &'a Finding> + 'a {
        self.findings.iter().filter(move |f| f.rule == rule)
    }

    fn push(&mut self, path: impl Into<String>, rule: &str, detail: impl Into<String>) {
        self.findings.push(Finding::new(path, rule, detail));
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} finding(s)", self.findings.len())?;
        for finding in &self.findings {
            write!(f, "; {} [{}]: {}", finding.path, finding.rule, finding.detail)?;
        }
        Ok(())
    }
}

/// Rule identifiers used in validation reports.
pub mod rules {
    pub const EMPTY: &str = "non-empty";
    pub const DUPLICATE: &str = "unique-label";
    pub const UNKNOWN_REFERENCE: &str = "unknown-reference";
    pub const PARENT_ORDERING: &str = "parent-ordering";
    pub const CPT_SHAPE: &str = "cpt-shape";
    pub const CPT_ENTRY: &str = "cpt-entry";
    pub const CPT_NORMALIZATION: &str = "cpt-normalization";
    pub const CPT_RENORMALIZED: &str = "cpt-renormalized";
    pub const REWARD_SHAPE: &str = "reward-shape";
    pub const REWARD_FINITE: &str = "reward-finite";
    pub const OBSERVABLE_DECLARED: &str = "observable-is-state-variable";
    pub const GAMMA_RANGE: &str = "gamma-range";
    pub const SHIFT_SHAPE: &str = "shift-shape";
    pub const SHIFT_ROW_STOCHASTIC: &str = "shift-row-stochastic";
}

fn check_unique<'a>(
    report: &mut ValidationReport,
    path: &str,
    labels: impl IntoIterator<Item = &'a String>,
) {
    let mut seen = BTreeSet::new();
    for (i, label) in labels.into_iter().enumerate() {
        if !seen.insert(label.as_str()) {
            report.push(
                format!("{path}[{i}]"),
                rules::DUPLICATE,
                format!("`{label}` appears more than once"),
            );
        }
    }
}

/// Checks every invariant of a parsed model document.
pub fn validate_model(doc: &ModelDocument) -> ValidationReport {
    let mut report = ValidationReport::default();

    if doc.variables.is_empty() {
        report.push("variables", rules::EMPTY, "at least one variable is required");
    }
    check_unique(&mut report, "variables", doc.variables.iter().map(|v| &v.name));
    for (i, var) in doc.variables.iter().enumerate() {
        if var.values.is_empty() {
            report.push(
                format!("variables[{i}].values"),
                rules::EMPTY,
                format!("variable `{}` has an empty domain", var.name),
            );
        }
        check_unique(&mut report, &format!("variables[{i}].values"), &var.values);
    }
    if doc.actions.is_empty() {
        report.push("actions", rules::EMPTY, "at least one action is required");
    }
    check_unique(&mut report, "actions", &doc.actions);

    let position: BTreeMap<&str, usize> = doc
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let size_of = |name: &str| position.get(name).map(|&i| doc.variables[i].values.len());

    // parents
    for (var, lists) in &doc.parents {
        let Some(&own) = position.get(var.as_str()) else {
            report.push(
                format!("parents.{var}"),
                rules::UNKNOWN_REFERENCE,
                format!("`{var}` is not a declared variable"),
            );
            continue;
        };
        check_unique(&mut report, &format!("parents.{var}.prev"), &lists.prev);
        check_unique(&mut report, &format!("parents.{var}.curr"), &lists.curr);
        for (j, p) in lists.prev.iter().enumerate() {
            if !position.contains_key(p.as_str()) {
                report.push(
                    format!("parents.{var}.prev[{j}]"),
                    rules::UNKNOWN_REFERENCE,
                    format!("`{p}` is not a declared variable"),
                );
            }
        }
        for (j, p) in lists.curr.iter().enumerate() {
            match position.get(p.as_str()) {
                None => report.push(
                    format!("parents.{var}.curr[{j}]"),
                    rules::UNKNOWN_REFERENCE,
                    format!("`{p}` is not a declared variable"),
                ),
                Some(&k) if k >= own => report.push(
                    format!("parents.{var}.curr[{j}]"),
                    rules::PARENT_ORDERING,
                    format!(
                        "next-slice parent `{p}` must be declared before `{var}`"
                    ),
                ),
                Some(_) => {}
            }
        }
    }

    // transition
    for name in doc.transition.keys() {
        if !position.contains_key(name.as_str()) {
            report.push(
                format!("transition.{name}"),
                rules::UNKNOWN_REFERENCE,
                format!("`{name}` is not a declared variable"),
            );
        }
    }
    for var in &doc.variables {
        let Some(per_action) = doc.transition.get(&var.name) else {
            report.push(
                format!("transition.{}", var.name),
                rules::CPT_SHAPE,
                "missing conditional table",
            );
            continue;
        };
        let lists = doc.parents.get(&var.name).cloned().unwrap_or_default();
        let rows: Option<usize> = lists
            .prev
            .iter()
            .chain(lists.curr.iter())
            .map(|p| size_of(p))
            .product();
        for action in per_action.keys() {
            if !doc.actions.contains(action) {
                report.push(
                    format!("transition.{}.{action}", var.name),
                    rules::UNKNOWN_REFERENCE,
                    format!("`{action}` is not a declared action"),
                );
            }
        }
        for action in &doc.actions {
            let path = format!("transition.{}.{action}", var.name);
            let Some(table) = per_action.get(action) else {
                report.push(path, rules::CPT_SHAPE, "missing table for action");
                continue;
            };
            if let Some(rows) = rows {
                if table.len() != rows {
                    report.push(
                        path.clone(),
                        rules::CPT_SHAPE,
                        format!("expected {rows} parent rows, found {}", table.len()),
                    );
                }
            }
            for (r, dist) in table.iter().enumerate() {
                let path = format!("{path}[{r}]");
                if dist.len() != var.values.len() {
                    report.push(
                        path,
                        rules::CPT_SHAPE,
                        format!(
                            "expected {} probabilities, found {}",
                            var.values.len(),
                            dist.len()
                        ),
                    );
                    continue;
                }
                if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
                    report.push(path, rules::CPT_ENTRY, format!("entry {bad} is not a probability"));
                    continue;
                }
                let sum: f64 = dist.iter().sum();
                if (sum - 1.0).abs() > CPT_TOLERANCE {
                    report.push(
                        path,
                        rules::CPT_NORMALIZATION,
                        format!(
                            "distribution of `{}` for parent row {r} sums to {sum}",
                            var.name
                        ),
                    );
                }
            }
        }
    }

    // reward
    check_unique(&mut report, "reward.vars", &doc.reward.vars);
    let mut reward_rows = Some(1usize);
    for (j, v) in doc.reward.vars.iter().enumerate() {
        match size_of(v) {
            Some(n) => reward_rows = reward_rows.map(|r| r * n),
            None => {
                reward_rows = None;
                report.push(
                    format!("reward.vars[{j}]"),
                    rules::UNKNOWN_REFERENCE,
                    format!("`{v}` is not a declared variable"),
                );
            }
        }
    }
    for action in doc.reward.table.keys() {
        if !doc.actions.contains(action) {
            report.push(
                format!("reward.table.{action}"),
                rules::UNKNOWN_REFERENCE,
                format!("`{action}` is not a declared action"),
            );
        }
    }
    for action in &doc.actions {
        let path = format!("reward.table.{action}");
        let Some(row) = doc.reward.table.get(action) else {
            report.push(path, rules::REWARD_SHAPE, "missing reward row for action");
            continue;
        };
        if let Some(n) = reward_rows {
            if row.len() != n {
                report.push(
                    path.clone(),
                    rules::REWARD_SHAPE,
                    format!("expected {n} entries, found {}", row.len()),
                );
            }
        }
        if let Some((k, r)) = row.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            report.push(format!("{path}[{k}]"), rules::REWARD_FINITE, format!("{r} is not finite"));
        }
    }

    // observables
    check_unique(&mut report, "observables", &doc.observables);
    for (j, o) in doc.observables.iter().enumerate() {
        if !position.contains_key(o.as_str()) {
            report.push(
                format!("observables[{j}]"),
                rules::OBSERVABLE_DECLARED,
                format!("observable `{o}` is not a state variable"),
            );
        }
    }

    if !(doc.gamma.is_finite() && (0.0..1.0).contains(&doc.gamma)) {
        report.push("gamma", rules::GAMMA_RANGE, format!("{} is outside [0, 1)", doc.gamma));
    }

    // domains
    check_unique(&mut report, "domains", doc.domains.iter().map(|d| &d.name));
    for (k, domain) in doc.domains.iter().enumerate() {
        for (var, rows) in &domain.shifts {
            let path = format!("domains[{k}].shifts.{var}");
            let Some(m) = size_of(var) else {
                report.push(path, rules::UNKNOWN_REFERENCE, format!("`{var}` is not a declared variable"));
                continue;
            };
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                report.push(
                    path,
                    rules::SHIFT_SHAPE,
                    format!("expected a {m}x{m} matrix"),
                );
                continue;
            }
            if let Err(err) = ShiftMatrix::from_rows(rows) {
                report.push(path, rules::SHIFT_ROW_STOCHASTIC, err.to_string());
            }
        }
    }

    report
}

// ---------------------------------------------------------------------------
// Resolved model
// ---------------------------------------------------------------------------

/// One conditional distribution over a variable's domain per parent assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    arity: usize,
    probs: Vec<f64>,
}

impl ConditionalTable {
    pub fn from_rows(arity: usize, rows: &[Vec<f64>]) -> Self {
        let mut probs = Vec::with_capacity(arity * rows.len());
        for row in rows {
            assert_eq!(row.len(), arity, "conditional row has wrong arity");
            probs.extend_from_slice(row);
        }
        ConditionalTable { arity, probs }
    }

    /// Size of the child variable's domain.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Number of parent assignments.
    pub fn parent_rows(&self) -> usize {
        self.probs.len() / self.arity
    }

    pub fn distribution(&self, parent_row: usize) -> &[f64] {
        &self.probs[parent_row * self.arity..(parent_row + 1) * self.arity]
    }

    pub fn distributions(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.arity)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.distributions().map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentSet {
    /// Previous-slice parents.
    pub prev: Vec<usize>,
    /// Next-slice parents; every entry precedes the child in declaration order.
    pub curr: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub vars: Vec<usize>,
    /// `values[action][assignment of vars, row-major]`
    pub values: Vec<Vec<f64>>,
}

/// A validated, immutable factored causal POMDP.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalPomdp {
    variables: Vec<VariableSpec>,
    actions: Vec<String>,
    parents: Vec<ParentSet>,
    /// `transition[variable][action]`
    transition: Vec<Vec<ConditionalTable>>,
    reward: RewardTable,
    observables: Vec<usize>,
    gamma: f64,
    domains: Vec<DomainSpec>,
    state_strides: Vec<usize>,
    state_count: usize,
    observation_count: usize,
}

/// Parses, validates and resolves a model document.
pub fn load_model(text: &str) -> Result<CausalPomdp, ModelError> {
    load_model_with_adjustments(text).map(|(model, _)| model)
}

/// Like [`load_model`], also returning the CPT renormalizations applied to
/// distributions that were within tolerance but not exactly normalized.
pub fn load_model_with_adjustments(text: &str) -> Result<(CausalPomdp, Vec<Finding>), ModelError> {
    let doc = ModelDocument::parse(text)?;
    CausalPomdp::from_document(&doc)
}

impl CausalPomdp {
    pub fn from_document(doc: &ModelDocument) -> Result<(Self, Vec<Finding>), ModelError> {
        let report = validate_model(doc);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        let index_of = |name: &str| {
            doc.variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
        };
        let resolve_all = |names: &[String]| -> Result<Vec<usize>, ModelError> {
            names.iter().map(|n| index_of(n)).collect()
        };

        let mut adjustments = Vec::new();
        let mut parents = Vec::with_capacity(doc.variables.len());
        let mut transition = Vec::with_capacity(doc.variables.len());
        for var in &doc.variables {
            let lists = doc.parents.get(&var.name).cloned().unwrap_or_default();
            parents.push(ParentSet {
                prev: resolve_all(&lists.prev)?,
                curr: resolve_all(&lists.curr)?,
            });
            let mut per_action = Vec::with_capacity(doc.actions.len());
            for action in &doc.actions {
                let mut rows = doc.transition[&var.name][action].clone();
                for (r, dist) in rows.iter_mut().enumerate() {
                    let sum: f64 = dist.iter().sum();
                    if (sum - 1.0).abs() > RENORMALIZE_THRESHOLD {
                        dist.iter_mut().for_each(|p| *p /= sum);
                        adjustments.push(Finding::new(
                            format!("transition.{}.{action}[{r}]", var.name),
                            rules::CPT_RENORMALIZED,
                            format!("distribution summed to {sum}; rescaled to unit mass"),
                        ));
                    }
                }
                per_action.push(ConditionalTable::from_rows(var.values.len(), &rows));
            }
            transition.push(per_action);
        }

        let reward = RewardTable {
            vars: resolve_all(&doc.reward.vars)?,
            values: doc
                .actions
                .iter()
                .map(|a| doc.reward.table[a].clone())
                .collect(),
        };

        let mut domains = Vec::with_capacity(doc.domains.len());
        for d in &doc.domains {
            let mut spec = DomainSpec::identity(&d.name);
            for (var, rows) in &d.shifts {
                let matrix = ShiftMatrix::from_rows(rows).map_err(|err| {
                    ModelError::Invalid(ValidationReport {
                        findings: vec![Finding::new(
                            format!("domains.{}.shifts.{var}", d.name),
                            rules::SHIFT_ROW_STOCHASTIC,
                            err.to_string(),
                        )],
                    })
                })?;
                spec = spec.with_shift(var, matrix);
            }
            domains.push(spec);
        }

        let model = CausalPomdp::assemble(
            doc.variables.clone(),
            doc.actions.clone(),
            parents,
            transition,
            reward,
            resolve_all(&doc.observables)?,
            doc.gamma,
            domains,
        );
        Ok((model, adjustments))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        variables: Vec<VariableSpec>,
        actions: Vec<String>,
        parents: Vec<ParentSet>,
        transition: Vec<Vec<ConditionalTable>>,
        reward: RewardTable,
        observables: Vec<usize>,
        gamma: f64,
        domains: Vec<DomainSpec>,
    ) -> Self {
        let mut state_strides = vec![1; variables.len()];
        for i in (0..variables.len().saturating_sub(1)).rev() {
            state_strides[i] = state_strides[i + 1] * variables[i + 1].values.len();
        }
        let state_count = variables.iter().map(|v| v.values.len()).product();
        let observation_count = observables.iter().map(|&i| variables[i].values.len()).product();
        CausalPomdp {
            variables,
            actions,
            parents,
            transition,
            reward,
            observables,
            gamma,
            domains,
            state_strides,
            state_count,
            observation_count,
        }
    }

    /// Renders back to the document form. `load_model(render(m)) == m`.
    pub fn to_document(&self) -> ModelDocument {
        let name = |i: usize| self.variables[i].name.clone();
        let names = |ix: &[usize]| ix.iter().map(|&i| name(i)).collect::<Vec<_>>();
        let parents = self
            .parents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (
                    name(i),
                    ParentLists {
                        prev: names(&p.prev),
                        curr: names(&p.curr),
                    },
                )
            })
            .collect();
        let transition = self
            .transition
            .iter()
            .enumerate()
            .map(|(i, per_action)| {
                let tables = per_action
                    .iter()
                    .zip(&self.actions)
                    .map(|(t, a)| (a.clone(), t.to_rows()))
                    .collect();
                (name(i), tables)
            })
            .collect();
        let reward = RewardDocument {
            vars: names(&self.reward.vars),
            table: self
                .actions
                .iter()
                .cloned()
                .zip(self.reward.values.iter().cloned())
                .collect(),
        };
        let domains = self
            .domains
            .iter()
            .map(|d| DomainDocument {
                name: d.name().to_string(),
                shifts: d
                    .shifts()
                    .map(|(var, m)| (var.to_string(), m.to_rows()))
                    .collect(),
            })
            .collect();
        ModelDocument {
            variables: self.variables.clone(),
            actions: self.actions.clone(),
            parents,
            transition,
            reward,
            observables: names(&self.observables),
            gamma: self.gamma,
            domains,
        }
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    // -- accessors ---------------------------------------------------------

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn parents(&self, variable: usize) -> &ParentSet {
        &self.parents[variable]
    }

    pub fn conditional_table(&self, variable: usize, action: usize) -> &ConditionalTable {
        &self.transition[variable][action]
    }

    pub fn reward_table(&self) -> &RewardTable {
        &self.reward
    }

    pub fn observables(&self) -> &[usize] {
        &self.observables
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Domains declared in the model file (not including the implicit base).
    pub fn declared_domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn variable_index(&self, name: &str) -> Result<usize, ModelError> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    pub fn action_index(&self, label: &str) -> Result<usize, ModelError> {
        self.actions
            .iter()
            .position(|a| a == label)
            .ok_or_else(|| ModelError::UnknownAction(label.to_string()))
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    /// Number of distinct observations, `prod |dom(V)|` over observables
    /// (1 when nothing is observable).
    pub fn observation_count(&self) -> usize {
        self.observation_count
    }

    // -- states ------------------------------------------------------------

    /// All full assignments in row-major declared order.
    pub fn enumerate_states(&self) -> Vec<Vec<usize>> {
        (0..self.state_count).map(|i| self.state_of(i)).collect()
    }

    pub fn state_of(&self, index: usize) -> Vec<usize> {
        debug_assert!(index < self.state_count);
        self.state_strides
            .iter()
            .zip(&self.variables)
            .map(|(stride, v)| (index / stride) % v.values.len())
            .collect()
    }

    pub fn state_index(&self, state: &[usize]) -> usize {
        state
            .iter()
            .zip(&self.state_strides)
            .map(|(v, stride)| v * stride)
            .sum()
    }

    pub fn check_state(&self, state: &[usize]) -> Result<(), ModelError> {
        if state.len() != self.variables.len() {
            return Err(ModelError::MalformedState(format!(
                "expected {} coordinates, got {}",
                self.variables.len(),
                state.len()
            )));
        }
        for (v, spec) in state.iter().zip(&self.variables) {
            if *v >= spec.values.len() {
                return Err(ModelError::MalformedState(format!(
                    "value index {v} out of range for `{}`",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn state_labels(&self, state: &[usize]) -> Vec<&str> {
        state
            .iter()
            .zip(&self.variables)
            .map(|(&v, spec)| spec.values[v].as_str())
            .collect()
    }

    /// Row index into a variable's CPT: parents are `prev ++ curr`, `prev`
    /// read from the current state and `curr` from the next state.
    pub fn parent_row(&self, variable: usize, state: &[usize], next: &[usize]) -> usize {
        let parents = &self.parents[variable];
        let prev = parents.prev.iter().map(|&p| (p, state[p]));
        let curr = parents.curr.iter().map(|&p| (p, next[p]));
        prev.chain(curr)
            .fold(0, |row, (p, v)| row * self.variables[p].values.len() + v)
    }

    /// `P(next | state, action; domain)`: the product over variables of each
    /// factor after applying the domain's shift for that variable (identity
    /// when the domain does not mention it).
    pub fn transition_prob(
        &self,
        state: &[usize],
        action: usize,
        next: &[usize],
        domain: &DomainSpec,
    ) -> Result<f64, ModelError> {
        self.check_state(state)?;
        self.check_state(next)?;
        if action >= self.actions.len() {
            return Err(ModelError::ActionOutOfRange(action));
        }
        let mut shifts = vec![None; self.variables.len()];
        for (name, matrix) in domain.shifts() {
            let i = self.variable_index(name)?;
            if matrix.size() != self.variables[i].values.len() {
                return Err(ModelError::MalformedState(format!(
                    "shift for `{name}` has size {}, domain has {} values",
                    matrix.size(),
                    self.variables[i].values.len()
                )));
            }
            shifts[i] = Some(matrix);
        }
        let mut prob = 1.0;
        for (i, shift) in shifts.iter().enumerate() {
            let dist = self.transition[i][action].distribution(self.parent_row(i, state, next));
            let target = next[i];
            let factor = match shift {
                Some(m) => (0..dist.len()).map(|j| m.get(j, target) * dist[j]).sum(),
                None => dist[target],
            };
            prob *= factor;
        }
        Ok(prob)
    }

    /// `R(s, a)`, read from the reward-relevant coordinates of `state`.
    pub fn reward(&self, state: &[usize], action: usize) -> f64 {
        let row = self
            .reward
            .vars
            .iter()
            .fold(0, |row, &v| row * self.variables[v].values.len() + state[v]);
        self.reward.values[action][row]
    }

    // -- observations ------------------------------------------------------

    /// Projection of a state onto the observable variables.
    pub fn observe(&self, next: &[usize]) -> Vec<usize> {
        self.observables.iter().map(|&i| next[i]).collect()
    }

    pub fn observation_index(&self, next: &[usize]) -> usize {
        self.observables
            .iter()
            .fold(0, |idx, &i| idx * self.variables[i].values.len() + next[i])
    }

    /// `O(s', o)`: 1 when `o` is the projection of `s'`, else 0.
    pub fn observation_prob(&self, next: &[usize], observation: usize) -> f64 {
        if self.observation_index(next) == observation {
            1.0
        } else {
            0.0
        }
    }

    pub fn observation_values(&self, observation: usize) -> Vec<usize> {
        let mut rest = observation;
        let mut values = vec![0; self.observables.len()];
        for (slot, &i) in values.iter_mut().zip(&self.observables).rev() {
            let n = self.variables[i].values.len();
            *slot = rest % n;
            rest /= n;
        }
        values
    }

    /// Observation key: observable value labels joined by `,` (empty string
    /// when nothing is observable).
    pub fn observation_label(&self, observation: usize) -> String {
        self.observation_values(observation)
            .iter()
            .zip(&self.observables)
            .map(|(&v, &i)| self.variables[i].values[v].as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn observation_from_label(&self, label: &str) -> Result<usize, ModelError> {
        (0..self.observation_count)
            .find(|&o| self.observation_label(o) == label)
            .ok_or_else(|| ModelError::MalformedObservation(format!("unknown observation key `{label}`")))
    }

    /// Resolves a `{variable: value}` observation map; it must name exactly
    /// the observable variables.
    pub fn observation_from_map(&self, map: &BTreeMap<String, String>) -> Result<usize, ModelError> {
        if map.len() != self.observables.len() {
            return Err(ModelError::MalformedObservation(format!(
                "expected values for {} observable(s), got {}",
                self.observables.len(),
                map.len()
            )));
        }
        let mut idx = 0;
        for &i in &self.observables {
            let var = &self.variables[i];
            let label = map.get(&var.name).ok_or_else(|| {
                ModelError::MalformedObservation(format!("missing value for `{}`", var.name))
            })?;
            let v = var
                .values
                .iter()
                .position(|x| x == label)
                .ok_or_else(|| ModelError::UnknownValue {
                    variable: var.name.clone(),
                    value: label.clone(),
                })?;
            idx = idx * var.values.len() + v;
        }
        Ok(idx)
    }
}
