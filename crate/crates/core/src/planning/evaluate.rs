use thiserror::Error;

use super::policy::{AgentState, PolicyError, PolicyRunner, PolicySpec};
use crate::dynamics::Dynamics;
use crate::interventions::{DomainSet, DomainSpec, ShiftError};
use crate::model::CausalPomdp;

/// Default cap on belief-tree nodes for exact policy evaluation.
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("belief tree exceeds the node budget of {budget}; use a Monte Carlo estimate instead")]
    BudgetExceeded { budget: usize },
    #[error("state prior has {actual} entries, expected {expected}")]
    PriorShape { expected: usize, actual: usize },
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

struct Node {
    /// Probability of the observation history leading here.
    weight: f64,
    /// State distribution under the true domain, given the history.
    belief: Vec<f64>,
    agent: AgentState,
}

/// Exact expected discounted return of `policy` over `horizon + 1` decisions
/// when the environment runs under the fixed domain `sigma`.
///
/// The belief tree is swept forward one depth at a time; each node adds its
/// history probability times discounted expected immediate reward.
pub fn evaluate_policy_known_shift(
    model: &CausalPomdp,
    sigma: &DomainSpec,
    policy: &PolicySpec,
    state_prior: &[f64],
    horizon: usize,
    node_budget: usize,
) -> Result<f64, EvalError> {
    if state_prior.len() != model.state_count() {
        return Err(EvalError::PriorShape {
            expected: model.state_count(),
            actual: state_prior.len(),
        });
    }
    let world = Dynamics::new(model, &DomainSet::new(model, vec![sigma.clone()])?)?;
    let runner = PolicyRunner::new(model, policy)?;
    let states = model.state_count();

    let mut frontier = vec![Node {
        weight: 1.0,
        belief: state_prior.to_vec(),
        agent: runner.start(state_prior)?,
    }];
    let mut nodes = 1usize;
    let mut total = 0.0;
    let mut discount = 1.0;
    for depth in 0..=horizon {
        let remaining = horizon - depth;
        let mut next = Vec::new();
        for node in &frontier {
            let action = runner.act(&node.agent, remaining)?;
            let immediate: f64 = node
                .belief
                .iter()
                .zip(world.reward_row(action))
                .map(|(b, r)| b * r)
                .sum();
            total += discount * node.weight * immediate;
            if remaining == 0 {
                continue;
            }
            let mut predicted = vec![0.0; states];
            for (s, &b) in node.belief.iter().enumerate() {
                for (p, t) in predicted.iter_mut().zip(world.transition_row(0, action, s)) {
                    *p += b * t;
                }
            }
            for observation in 0..world.observation_count() {
                let consistent = world.states_observing(observation);
                let likelihood: f64 = consistent.iter().map(|&n| predicted[n]).sum();
                if likelihood <= 0.0 {
                    continue;
                }
                let mut belief = vec![0.0; states];
                for &n in consistent {
                    belief[n] = predicted[n] / likelihood;
                }
                nodes += 1;
                if nodes > node_budget {
                    return Err(EvalError::BudgetExceeded { budget: node_budget });
                }
                next.push(Node {
                    weight: node.weight * likelihood,
                    belief,
                    agent: runner.advance(&node.agent, action, observation)?,
                });
            }
        }
        frontier = next;
        discount *= model.gamma();
    }
    Ok(total)
}
