//! Exact finite-horizon value iteration over the joint state–domain belief.
//!
//! The horizon-`n` value function is `V_n(b) = max_i <alpha_i, b>`, where each
//! alpha function is a table over `S x D` (state-major, domain-minor, the same
//! layout as [`JointBelief`]). Stage 0 holds one alpha per action,
//! `alpha(s, d) = R(s, a)`. Stage `n` is built from stage `n - 1` by
//! projecting every previous alpha through each `(action, observation)` pair,
//!
//! ```text
//! g_j(s, d) = sum_{s' : obs(s') = o} P(s' | s, a; d) * alpha_j(s', d)
//! ```
//!
//! and then taking the cross-sum over observations:
//! `alpha = R(., a) + gamma * sum_o g_{j(o)}`. Pointwise-dominated tables are
//! pruned after every partial sum and again at the end.

mod convexity;
mod evaluate;
mod policy;
mod prune;

pub use convexity::{check_convexity, check_convexity_of, ConvexityReport, Violation, CONVEXITY_TOLERANCE};
pub use evaluate::{evaluate_policy_known_shift, EvalError, DEFAULT_NODE_BUDGET};
pub use policy::{
    AgentState, GreedyPolicy, PolicyDocument, PolicyError, PolicyRunner, PolicySpec, ReactivePolicy,
};
pub use prune::{prune_lp, prune_pointwise, LP_MARGIN};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::JointBelief;
use crate::dynamics::Dynamics;
use crate::model::{CausalPomdp, ModelError};

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("alpha tables have {expected} entries but the belief has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("alpha set is empty")]
    Empty,
    #[error("malformed alpha file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A linear piece of the value function, with the plan that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFunction {
    /// State-major table over `S x D`.
    pub values: Vec<f64>,
    /// Action executed first by this plan.
    pub action: usize,
    /// Index into the previous stage's set, per observation. Empty at stage 0.
    pub successors: Vec<usize>,
}

impl AlphaFunction {
    pub fn dot(&self, belief: &JointBelief) -> f64 {
        belief.dot(&self.values)
    }
}

/// Canonical order: value table lexicographically, then action, then
/// successor indices.
pub(crate) fn canonical_cmp(a: &AlphaFunction, b: &AlphaFunction) -> Ordering {
    lex_cmp(&a.values, &b.values)
        .then(a.action.cmp(&b.action))
        .then(a.successors.cmp(&b.successors))
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Stage-`n` alpha functions in canonical order, no two with equal tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSet {
    stage: usize,
    states: usize,
    domains: usize,
    alphas: Vec<AlphaFunction>,
}

impl AlphaSet {
    /// Builds a set, sorting canonically and dropping duplicate tables (the
    /// canonically first copy survives). Dominated members are kept; use
    /// [`prune_pointwise`] to drop them.
    pub fn new(stage: usize, states: usize, domains: usize, mut alphas: Vec<AlphaFunction>) -> Result<Self, PlanningError> {
        if alphas.is_empty() {
            return Err(PlanningError::Empty);
        }
        let width = states * domains;
        if let Some(bad) = alphas.iter().find(|a| a.values.len() != width) {
            return Err(PlanningError::DimensionMismatch {
                expected: width,
                actual: bad.values.len(),
            });
        }
        alphas.sort_by(canonical_cmp);
        alphas.dedup_by(|later, earlier| later.values == earlier.values);
        Ok(AlphaSet {
            stage,
            states,
            domains,
            alphas,
        })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn domain_count(&self) -> usize {
        self.domains
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[AlphaFunction] {
        &self.alphas
    }

    pub fn get(&self, index: usize) -> &AlphaFunction {
        &self.alphas[index]
    }

    /// Multiplies every table by `factor`, keeping plan links.
    pub fn scaled(&self, factor: f64) -> AlphaSet {
        let alphas = self
            .alphas
            .iter()
            .map(|a| AlphaFunction {
                values: a.values.iter().map(|v| v * factor).collect(),
                ..a.clone()
            })
            .collect();
        AlphaSet::new(self.stage, self.states, self.domains, alphas).expect("shape preserved")
    }

    pub fn to_file(&self, model: &CausalPomdp, domain_names: &[&str]) -> AlphaSetFile {
        AlphaSetFile {
            stage: self.stage,
            domains: domain_names.iter().map(|s| s.to_string()).collect(),
            alphas: self
                .alphas
                .iter()
                .map(|a| AlphaRecord {
                    action: model.actions()[a.action].clone(),
                    values: a.values.chunks_exact(self.domains).map(<[f64]>::to_vec).collect(),
                    successors: a
                        .successors
                        .iter()
                        .enumerate()
                        .map(|(o, &j)| (model.observation_label(o), j))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(model: &CausalPomdp, file: &AlphaSetFile) -> Result<Self, PlanningError> {
        let domains = file.domains.len();
        let mut alphas = Vec::with_capacity(file.alphas.len());
        for (k, record) in file.alphas.iter().enumerate() {
            if record.values.len() != model.state_count() || record.values.iter().any(|r| r.len() != domains) {
                return Err(PlanningError::Malformed(format!(
                    "alpha {k}: expected a {}x{domains} table",
                    model.state_count()
                )));
            }
            let action = model.action_index(&record.action)?;
            let mut successors = Vec::new();
            if !record.successors.is_empty() {
                successors = vec![0; model.observation_count()];
                if record.successors.len() != successors.len() {
                    return Err(PlanningError::Malformed(format!(
                        "alpha {k}: successors must cover every observation"
                    )));
                }
                for (label, &j) in &record.successors {
                    successors[model.observation_from_label(label)?] = j;
                }
            }
            alphas.push(AlphaFunction {
                values: record.values.concat(),
                action,
                successors,
            });
        }
        let set = AlphaSet::new(file.stage, model.state_count(), domains, alphas)?;
        if set.len() != file.alphas.len() {
            return Err(PlanningError::Malformed("duplicate alpha tables".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub action: String,
    /// State-major, domain-minor.
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub successors: BTreeMap<String, usize>,
}

/// On-disk alpha set. `domains` names the domain axis of every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSetFile {
    pub stage: usize,
    pub domains: Vec<String>,
    pub alphas: Vec<AlphaRecord>,
}

/// Stage 0: `alpha_a(s, d) = R(s, a)` for every action, deduplicated.
pub fn initial_alpha_set(dynamics: &Dynamics<'_>) -> AlphaSet {
    let domains = dynamics.domain_count();
    let alphas = (0..dynamics.action_count())
        .map(|a| AlphaFunction {
            values: dynamics
                .reward_row(a)
                .iter()
                .flat_map(|&r| std::iter::repeat_n(r, domains))
                .collect(),
            action: a,
            successors: Vec::new(),
        })
        .collect();
    AlphaSet::new(0, dynamics.state_count(), domains, alphas).expect("at least one action")
}

/// Partial cross-sum: summed projections plus the previous-stage index
/// chosen for each observation so far.
#[derive(Debug, Clone)]
pub(crate) struct Partial {
    pub values: Vec<f64>,
    pub choices: Vec<usize>,
}

/// Projection `g_j` of previous alpha `j` through `(action, observation)`.
fn project(dynamics: &Dynamics<'_>, prev: &AlphaFunction, action: usize, observation: usize) -> Vec<f64> {
    let domains = dynamics.domain_count();
    let consistent = dynamics.states_observing(observation);
    let mut out = vec![0.0; dynamics.state_count() * domains];
    for s in 0..dynamics.state_count() {
        for d in 0..domains {
            let row = dynamics.transition_row(d, action, s);
            out[s * domains + d] = consistent.iter().map(|&n| row[n] * prev.values[n * domains + d]).sum();
        }
    }
    out
}

/// Pruning applied to partial cross-sums and to the finished stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pruning {
    /// Drop duplicates and pointwise-dominated tables only.
    #[default]
    Pointwise,
    /// Pointwise, then drop tables that are not strictly best (by more than
    /// [`LP_MARGIN`]) anywhere on the belief simplex.
    Lp,
}

impl Pruning {
    fn apply(self, items: Vec<Partial>) -> Vec<Partial> {
        let items = prune::prune_partials(items);
        match self {
            Pruning::Pointwise => items,
            Pruning::Lp => prune::prune_partials_lp(items),
        }
    }
}

/// One exact backup `stage n-1 -> stage n` with pointwise pruning.
pub fn backup(dynamics: &Dynamics<'_>, prev: &AlphaSet) -> AlphaSet {
    backup_with(dynamics, prev, Pruning::Pointwise)
}

pub fn backup_with(dynamics: &Dynamics<'_>, prev: &AlphaSet, pruning: Pruning) -> AlphaSet {
    let gamma = dynamics.gamma();
    let domains = dynamics.domain_count();
    let mut out: Vec<AlphaFunction> = Vec::new();
    for action in 0..dynamics.action_count() {
        let mut acc: Vec<Partial> = vec![Partial {
            values: vec![0.0; dynamics.state_count() * domains],
            choices: Vec::new(),
        }];
        for observation in 0..dynamics.observation_count() {
            let projections: Vec<Partial> = prev
                .alphas
                .iter()
                .enumerate()
                .map(|(j, alpha)| Partial {
                    values: project(dynamics, alpha, action, observation),
                    choices: vec![j],
                })
                .collect();
            let projections = pruning.apply(projections);
            let mut next = Vec::with_capacity(acc.len() * projections.len());
            for left in &acc {
                for right in &projections {
                    let mut choices = left.choices.clone();
                    choices.push(right.choices[0]);
                    next.push(Partial {
                        values: left.values.iter().zip(&right.values).map(|(x, y)| x + y).collect(),
                        choices,
                    });
                }
            }
            acc = pruning.apply(next);
        }
        let reward = dynamics.reward_row(action);
        for partial in acc {
            let values = partial
                .values
                .iter()
                .enumerate()
                .map(|(k, g)| reward[k / domains] + gamma * g)
                .collect();
            out.push(AlphaFunction {
                values,
                action,
                successors: partial.choices,
            });
        }
    }
    let set = AlphaSet::new(prev.stage + 1, dynamics.state_count(), domains, out).expect("non-empty backup");
    match pruning {
        Pruning::Pointwise => prune_pointwise(&set),
        Pruning::Lp => prune_lp(&prune_pointwise(&set)),
    }
}

/// Stages `0..=horizon`.
pub fn plan(dynamics: &Dynamics<'_>, horizon: usize) -> Vec<AlphaSet> {
    plan_with(dynamics, horizon, Pruning::Pointwise)
}

pub fn plan_with(dynamics: &Dynamics<'_>, horizon: usize, pruning: Pruning) -> Vec<AlphaSet> {
    let mut stages = Vec::with_capacity(horizon + 1);
    let first = initial_alpha_set(dynamics);
    stages.push(match pruning {
        Pruning::Pointwise => prune_pointwise(&first),
        Pruning::Lp => prune_lp(&prune_pointwise(&first)),
    });
    for _ in 0..horizon {
        let next = backup_with(dynamics, stages.last().expect("non-empty"), pruning);
        stages.push(next);
    }
    stages
}

/// `max_i <alpha_i, b>` and the canonically first maximizer.
pub fn value_at(set: &AlphaSet, belief: &JointBelief) -> Result<(f64, usize), PlanningError> {
    let width = set.states * set.domains;
    if belief.as_slice().len() != width || belief.domain_count() != set.domains {
        return Err(PlanningError::DimensionMismatch {
            expected: width,
            actual: belief.as_slice().len(),
        });
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, alpha) in set.alphas.iter().enumerate() {
        let v = alpha.dot(belief);
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Action of the maximizing alpha at `belief`.
pub fn greedy_action(set: &AlphaSet, belief: &JointBelief) -> Result<usize, PlanningError> {
    let (_, i) = value_at(set, belief)?;
    Ok(set.alphas[i].action)
}
