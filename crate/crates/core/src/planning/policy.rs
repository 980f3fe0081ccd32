//! Evaluable policies.
//!
//! A reactive policy maps recent observations to an action: it looks up the
//! longest suffix of the observation history that has a rule, so a plain
//! last-observation map is the window-1 case. A greedy policy keeps a joint
//! belief over its own domain set and plays the action of the maximizing
//! alpha from the stage matching the remaining horizon.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{greedy_action, AlphaSet, PlanningError};
use crate::belief::{update_belief, BeliefError, JointBelief};
use crate::dynamics::Dynamics;
use crate::interventions::{DomainSet, ShiftError};
use crate::model::{CausalPomdp, ModelError};

/// Separator between observations in a reactive rule key, oldest first.
pub const HISTORY_SEPARATOR: char = '|';

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("reactive policy has no rule for observation `{0}`")]
    Uncovered(String),
    #[error("greedy policy has no alpha sets")]
    NoStages,
    #[error("greedy policy tables do not match its {domains} domain(s) over {states} states")]
    Shape { states: usize, domains: usize },
    #[error("observation is impossible under the policy's own domain set")]
    AgentLostTrack,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// `{"kind": "reactive", "initial": ..., "map": {...}}` or
/// `{"kind": "greedy", "alphas": "<path>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicyDocument {
    Reactive {
        initial: String,
        map: BTreeMap<String, String>,
    },
    Greedy {
        alphas: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactivePolicy {
    initial: usize,
    rules: BTreeMap<Vec<usize>, usize>,
    window: usize,
}

impl ReactivePolicy {
    /// Every single observation must have a rule.
    pub fn new(
        model: &CausalPomdp,
        initial: usize,
        rules: impl IntoIterator<Item = (Vec<usize>, usize)>,
    ) -> Result<Self, PolicyError> {
        let rules: BTreeMap<Vec<usize>, usize> = rules.into_iter().collect();
        if initial >= model.action_count() {
            return Err(ModelError::ActionOutOfRange(initial).into());
        }
        for (key, &action) in &rules {
            if action >= model.action_count() {
                return Err(ModelError::ActionOutOfRange(action).into());
            }
            if key.is_empty() || key.iter().any(|&o| o >= model.observation_count()) {
                return Err(ModelError::MalformedObservation(format!("bad rule key {key:?}")).into());
            }
        }
        for o in 0..model.observation_count() {
            if !rules.contains_key(&vec![o]) {
                return Err(PolicyError::Uncovered(model.observation_label(o)));
            }
        }
        let window = rules.keys().map(Vec::len).max().unwrap_or(1);
        Ok(ReactivePolicy { initial, rules, window })
    }

    /// Plays `action` at every step.
    pub fn constant(model: &CausalPomdp, action: usize) -> Result<Self, PolicyError> {
        Self::new(model, action, (0..model.observation_count()).map(|o| (vec![o], action)))
    }

    pub fn from_labels(
        model: &CausalPomdp,
        initial: &str,
        map: &BTreeMap<String, String>,
    ) -> Result<Self, PolicyError> {
        let mut rules = Vec::with_capacity(map.len());
        for (key, action) in map {
            let history = key
                .split(HISTORY_SEPARATOR)
                .map(|label| model.observation_from_label(label))
                .collect::<Result<Vec<_>, _>>()?;
            rules.push((history, model.action_index(action)?));
        }
        Self::new(model, model.action_index(initial)?, rules)
    }

    pub fn to_document(&self, model: &CausalPomdp) -> PolicyDocument {
        let sep = HISTORY_SEPARATOR.to_string();
        PolicyDocument::Reactive {
            initial: model.actions()[self.initial].clone(),
            map: self
                .rules
                .iter()
                .map(|(key, &a)| {
                    let labels: Vec<String> = key.iter().map(|&o| model.observation_label(o)).collect();
                    (labels.join(&sep), model.actions()[a].clone())
                })
                .collect(),
        }
    }

    /// Longest observation window the rules look at.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Action for a history of observations (oldest first).
    pub fn choose(&self, recent: &[usize]) -> usize {
        for len in (1..=self.window.min(recent.len())).rev() {
            if let Some(&a) = self.rules.get(&recent[recent.len() - len..]) {
                return a;
            }
        }
        self.initial
    }
}

/// Greedy over planned alpha sets. With stages `0..=n` the set for stage `r`
/// is used when `r` decisions remain after the current one, which is optimal
/// at matching horizon; with a single set it is used at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    domains: DomainSet,
    stages: Vec<AlphaSet>,
}

impl GreedyPolicy {
    pub fn new(model: &CausalPomdp, domains: DomainSet, mut stages: Vec<AlphaSet>) -> Result<Self, PolicyError> {
        if stages.is_empty() {
            return Err(PolicyError::NoStages);
        }
        if stages
            .iter()
            .any(|s| s.state_count() != model.state_count() || s.domain_count() != domains.len())
        {
            return Err(PolicyError::Shape {
                states: model.state_count(),
                domains: domains.len(),
            });
        }
        stages.sort_by_key(AlphaSet::stage);
        stages.dedup_by_key(|s| s.stage());
        Ok(GreedyPolicy { domains, stages })
    }

    pub fn domains(&self) -> &DomainSet {
        &self.domains
    }

    pub fn stages(&self) -> &[AlphaSet] {
        &self.stages
    }

    /// Largest planned stage not exceeding `remaining`, else the smallest.
    pub fn stage_for(&self, remaining: usize) -> &AlphaSet {
        self.stages
            .iter()
            .rev()
            .find(|s| s.stage() <= remaining)
            .unwrap_or(&self.stages[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Reactive(ReactivePolicy),
    Greedy(GreedyPolicy),
}

impl From<ReactivePolicy> for PolicySpec {
    fn from(p: ReactivePolicy) -> Self {
        PolicySpec::Reactive(p)
    }
}

impl From<GreedyPolicy> for PolicySpec {
    fn from(p: GreedyPolicy) -> Self {
        PolicySpec::Greedy(p)
    }
}

/// Internal state of an agent following a policy.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentState {
    /// Most recent observations, oldest first.
    Recent(Vec<usize>),
    /// Joint belief over the greedy policy's own domains.
    Belief(JointBelief),
}

/// Executes a policy step by step.
pub struct PolicyRunner<'p, 'm> {
    policy: &'p PolicySpec,
    dynamics: Option<Dynamics<'m>>,
}

impl<'p, 'm> PolicyRunner<'p, 'm> {
    pub fn new(model: &'m CausalPomdp, policy: &'p PolicySpec) -> Result<Self, PolicyError> {
        let dynamics = match policy {
            PolicySpec::Reactive(_) => None,
            PolicySpec::Greedy(g) => Some(Dynamics::new(model, &g.domains)?),
        };
        Ok(PolicyRunner { policy, dynamics })
    }

    /// Initial agent state. A greedy agent starts from `state_prior` times a
    /// uniform prior over its domains.
    pub fn start(&self, state_prior: &[f64]) -> Result<AgentState, PolicyError> {
        match self.policy {
            PolicySpec::Reactive(_) => Ok(AgentState::Recent(Vec::new())),
            PolicySpec::Greedy(g) => {
                let n = g.domains.len();
                let belief = JointBelief::product(state_prior, &vec![1.0 / n as f64; n])?;
                Ok(AgentState::Belief(belief))
            }
        }
    }

    /// Action to play with `remaining` further decisions after this one.
    pub fn act(&self, agent: &AgentState, remaining: usize) -> Result<usize, PolicyError> {
        match (self.policy, agent) {
            (PolicySpec::Reactive(p), AgentState::Recent(history)) => Ok(p.choose(history)),
            (PolicySpec::Greedy(g), AgentState::Belief(b)) => Ok(greedy_action(g.stage_for(remaining), b)?),
            _ => unreachable!("agent state does not belong to this policy"),
        }
    }

    pub fn advance(&self, agent: &AgentState, action: usize, observation: usize) -> Result<AgentState, PolicyError> {
        match (self.policy, agent) {
            (PolicySpec::Reactive(p), AgentState::Recent(history)) => {
                let mut next = history.clone();
                next.push(observation);
                if next.len() > p.window {
                    next.remove(0);
                }
                Ok(AgentState::Recent(next))
            }
            (PolicySpec::Greedy(_), AgentState::Belief(b)) => {
                let dynamics = self.dynamics.as_ref().expect("greedy runner has dynamics");
                match update_belief(dynamics, b, action, observation) {
                    Ok(next) => Ok(AgentState::Belief(next)),
                    Err(BeliefError::ImpossibleObservation { .. }) => Err(PolicyError::AgentLostTrack),
                    Err(other) => Err(other.into()),
                }
            }
            _ => unreachable!("agent state does not belong to this policy"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn longest_suffix_wins() {
        let tiger = fixtures::tiger();
        let map = BTreeMap::from([
            ("hl".to_string(), "listen".to_string()),
            ("hr".to_string(), "listen".to_string()),
            ("hl|hl".to_string(), "open-right".to_string()),
            ("hr|hr".to_string(), "open-left".to_string()),
        ]);
        let p = ReactivePolicy::from_labels(&tiger, "listen", &map).unwrap();
        assert_eq!(p.window(), 2);
        assert_eq!(p.choose(&[]), 0);
        assert_eq!(p.choose(&[0]), 0);
        assert_eq!(p.choose(&[1, 0]), 0);
        assert_eq!(p.choose(&[0, 0]), 2);
        assert_eq!(p.choose(&[1, 1, 1]), 1);
        assert_eq!(p.to_document(&tiger), PolicyDocument::Reactive {
            initial: "listen".into(),
            map,
        });
    }

    #[test]
    fn reactive_policy_must_cover_every_observation() {
        let tiger = fixtures::tiger();
        let map = BTreeMap::from([("hl".to_string(), "listen".to_string())]);
        assert!(matches!(
            ReactivePolicy::from_labels(&tiger, "listen", &map),
            Err(PolicyError::Uncovered(o)) if o == "hr"
        ));
    }

    #[test]
    fn policy_document_json() {
        let doc: PolicyDocument =
            serde_json::from_str(r#"{"kind":"reactive","initial":"listen","map":{"hl":"listen","hr":"listen"}}"#).unwrap();
        assert!(matches!(doc, PolicyDocument::Reactive { .. }));
        let doc: PolicyDocument = serde_json::from_str(r#"{"kind":"greedy","alphas":"plan.json"}"#).unwrap();
        assert_eq!(doc, PolicyDocument::Greedy { alphas: "plan.json".into() });
    }

    #[test]
    fn runner_keeps_a_bounded_window() {
        let tiger = fixtures::tiger();
        let spec: PolicySpec = ReactivePolicy::constant(&tiger, 0).unwrap().into();
        let runner = PolicyRunner::new(&tiger, &spec).unwrap();
        let mut agent = runner.start(&[0.25; 4]).unwrap();
        for o in [0, 1, 1] {
            assert_eq!(runner.act(&agent, 3).unwrap(), 0);
            agent = runner.advance(&agent, 0, o).unwrap();
        }
        assert_eq!(agent, AgentState::Recent(vec![1]));
    }
}
