//! Joint belief over latent state and latent domain, and its Bayes filter.
//!
//! After taking action `a` and observing `o`:
//!
//! ```text
//! b'(s', d) = O(s', o) / P(o | a, b) * sum_s b(s, d) * P(s' | s, a; d)
//! ```
//!
//! The domain never changes within an episode, so the update mixes states
//! within each domain slice and reweights the slices by how well each explains
//! `o`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Dynamics;
use crate::interventions::DomainSet;
use crate::model::{CausalPomdp, ModelError};

/// Normalization tolerance for beliefs.
pub const BELIEF_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("observation has probability {likelihood} under the current belief")]
    ImpossibleObservation { likelihood: f64 },
    #[error("trace step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<BeliefError>,
    },
    #[error("belief has {actual} entries, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("belief entries must be non-negative and sum to 1 (sum {sum})")]
    NotNormalized { sum: f64 },
    #[error("domain set is empty")]
    NoDomains,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Dense distribution `b(s, d)`, state-major (`values[s * |D| + d]`).
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    states: usize,
    domains: usize,
    values: Vec<f64>,
}

impl JointBelief {
    pub fn new(states: usize, domains: usize, values: Vec<f64>) -> Result<Self, BeliefError> {
        if values.len() != states * domains || values.is_empty() {
            return Err(BeliefError::DimensionMismatch {
                expected: states * domains,
                actual: values.len(),
            });
        }
        let sum: f64 = values.iter().sum();
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > BELIEF_TOLERANCE {
            return Err(BeliefError::NotNormalized { sum });
        }
        Ok(JointBelief {
            states,
            domains,
            values,
        })
    }

    /// Parses a state-major nested table `[[b(s, d) for d] for s]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, BeliefError> {
        let domains = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != domains) {
            return Err(BeliefError::DimensionMismatch {
                expected: domains,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), domains, rows.concat())
    }

    pub fn uniform(states: usize, domains: usize) -> Result<Self, BeliefError> {
        if domains == 0 {
            return Err(BeliefError::NoDomains);
        }
        let n = states * domains;
        Self::new(states, domains, vec![1.0 / n as f64; n])
    }

    /// `b(s, d) = state(s) * domain(d)`.
    pub fn product(state: &[f64], domain: &[f64]) -> Result<Self, BeliefError> {
        let values = state
            .iter()
            .flat_map(|&p| domain.iter().map(move |&q| p * q))
            .collect();
        Self::new(state.len(), domain.len(), values)
    }

    pub fn point_mass(states: usize, domains: usize, state: usize, domain: usize) -> Self {
        let mut values = vec![0.0; states * domains];
        values[state * domains + domain] = 1.0;
        JointBelief {
            states,
            domains,
            values,
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn domain_count(&self) -> usize {
        self.domains
    }

    pub fn get(&self, state: usize, domain: usize) -> f64 {
        self.values[state * self.domains + domain]
    }

    /// Flat state-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks_exact(self.domains).map(<[f64]>::to_vec).collect()
    }

    /// `b_S(s) = sum_d b(s, d)`.
    pub fn marginal_state(&self) -> Vec<f64> {
        self.values.chunks_exact(self.domains).map(|row| row.iter().sum()).collect()
    }

    /// `b_D(d) = sum_s b(s, d)`.
    pub fn marginal_domain(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.domains];
        for row in self.values.chunks_exact(self.domains) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &JointBelief, weight: f64) -> JointBelief {
        assert_eq!(self.values.len(), other.values.len(), "mixing beliefs of different shape");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        JointBelief {
            states: self.states,
            domains: self.domains,
            values,
        }
    }

    /// `sum_{s,d} table(s, d) * b(s, d)` for a state-major table.
    pub fn dot(&self, table: &[f64]) -> f64 {
        self.values.iter().zip(table).map(|(b, t)| b * t).sum()
    }
}

pub fn uniform_joint_belief(model: &CausalPomdp, domains: &DomainSet) -> Result<JointBelief, BeliefError> {
    JointBelief::uniform(model.state_count(), domains.len())
}

fn check_shape(dynamics: &Dynamics<'_>, belief: &JointBelief) -> Result<(), BeliefError> {
    let expected = dynamics.state_count() * dynamics.domain_count();
    if belief.states != dynamics.state_count() || belief.domains != dynamics.domain_count() {
        return Err(BeliefError::DimensionMismatch {
            expected,
            actual: belief.values.len(),
        });
    }
    Ok(())
}

/// Unnormalized `sum_s b(s, d) P(s' | s, a; d)` restricted to states
/// consistent with `observation`, state-major.
fn predict_consistent(dynamics: &Dynamics<'_>, belief: &JointBelief, action: usize, observation: usize) -> Vec<f64> {
    let domains = belief.domains;
    let mut out = vec![0.0; belief.values.len()];
    let consistent = dynamics.states_observing(observation);
    for d in 0..domains {
        for s in 0..belief.states {
            let weight = belief.get(s, d);
            let row = dynamics.transition_row(d, action, s);
            for &next in consistent {
                out[next * domains + d] += weight * row[next];
            }
        }
    }
    out
}

/// `P(o | a, b)`.
pub fn observation_likelihood(
    dynamics: &Dynamics<'_>,
    belief: &JointBelief,
    action: usize,
    observation: usize,
) -> Result<f64, BeliefError> {
    check_shape(dynamics, belief)?;
    Ok(predict_consistent(dynamics, belief, action, observation).iter().sum())
}

/// `P(o | a, b)` for every observation index.
pub fn observation_likelihoods(
    dynamics: &Dynamics<'_>,
    belief: &JointBelief,
    action: usize,
) -> Result<Vec<f64>, BeliefError> {
    check_shape(dynamics, belief)?;
    let domains = belief.domains;
    let mut out = vec![0.0; dynamics.observation_count()];
    for d in 0..domains {
        for s in 0..belief.states {
            let weight = belief.get(s, d);
            for (next, p) in dynamics.transition_row(d, action, s).iter().enumerate() {
                out[dynamics.observation_of(next)] += weight * p;
            }
        }
    }
    Ok(out)
}

/// Bayes update of the joint belief after `action` and `observation`.
pub fn update_belief(
    dynamics: &Dynamics<'_>,
    belief: &JointBelief,
    action: usize,
    observation: usize,
) -> Result<JointBelief, BeliefError> {
    check_shape(dynamics, belief)?;
    let mut values = predict_consistent(dynamics, belief, action, observation);
    let likelihood: f64 = values.iter().sum();
    if likelihood <= 0.0 {
        return Err(BeliefError::ImpossibleObservation { likelihood });
    }
    values.iter_mut().for_each(|v| *v /= likelihood);
    Ok(JointBelief {
        states: belief.states,
        domains: belief.domains,
        values,
    })
}

/// One `(action, observation)` pair of a recorded trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub action: String,
    pub observation: BTreeMap<String, String>,
}

impl TraceStep {
    pub fn resolve(&self, model: &CausalPomdp) -> Result<(usize, usize), ModelError> {
        Ok((model.action_index(&self.action)?, model.observation_from_map(&self.observation)?))
    }
}

/// `result[k]` is `initial` updated with the first `k` steps.
pub fn filter_trace(
    dynamics: &Dynamics<'_>,
    initial: &JointBelief,
    trace: &[TraceStep],
) -> Result<Vec<JointBelief>, BeliefError> {
    let model = dynamics.model();
    let mut out = Vec::with_capacity(trace.len() + 1);
    out.push(initial.clone());
    for (step, entry) in trace.iter().enumerate() {
        let at = |source: BeliefError| BeliefError::AtStep {
            step,
            source: Box::new(source),
        };
        let (action, observation) = entry.resolve(model).map_err(|e| at(e.into()))?;
        let next = update_belief(dynamics, out.last().expect("non-empty"), action, observation).map_err(at)?;
        out.push(next);
    }
    Ok(out)
}

/// Filter output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefRecord {
    pub step: usize,
    pub belief: Vec<Vec<f64>>,
    pub state_marginal: Vec<f64>,
    pub domain_marginal: Vec<f64>,
}

impl BeliefRecord {
    pub fn new(step: usize, belief: &JointBelief) -> Self {
        BeliefRecord {
            step,
            belief: belief.to_rows(),
            state_marginal: belief.marginal_state(),
            domain_marginal: belief.marginal_domain(),
        }
    }
}
