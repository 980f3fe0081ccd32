//! Brute-force reference values. Deliberately naive: plain recursion over the
//! full action/observation tree, no alpha tables, no caching.

use thiserror::Error;

use crate::belief::{observation_likelihoods, update_belief, BeliefError, JointBelief};
use crate::dynamics::Dynamics;
use crate::interventions::{DomainSet, DomainSpec, ShiftError};
use crate::model::CausalPomdp;
use crate::planning::{AgentState, PolicyError, PolicyRunner, PolicySpec, DEFAULT_NODE_BUDGET};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle tree exceeds the node budget of {budget}")]
    BudgetExceeded { budget: usize },
    #[error("oracle node budget must be positive")]
    ZeroBudget,
    #[error("state prior has {actual} entries, expected {expected}")]
    PriorShape { expected: usize, actual: usize },
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub max_nodes: usize,
    /// Observations with likelihood at or below this are not expanded.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_nodes: DEFAULT_NODE_BUDGET,
            tolerance: 0.0,
        }
    }
}

/// Value plus the number of belief nodes visited (root included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    pub nodes: usize,
}

struct Budget {
    used: usize,
    limit: usize,
}

impl Budget {
    fn new(config: &OracleConfig) -> Result<Self, OracleError> {
        if config.max_nodes == 0 {
            return Err(OracleError::ZeroBudget);
        }
        Ok(Budget {
            used: 1,
            limit: config.max_nodes,
        })
    }

    fn take(&mut self) -> Result<(), OracleError> {
        self.used += 1;
        if self.used > self.limit {
            Err(OracleError::BudgetExceeded { budget: self.limit })
        } else {
            Ok(())
        }
    }
}

fn expected_reward(dynamics: &Dynamics<'_>, belief: &JointBelief, action: usize) -> f64 {
    let mut total = 0.0;
    for s in 0..belief.state_count() {
        for d in 0..belief.domain_count() {
            total += belief.get(s, d) * dynamics.reward(s, action);
        }
    }
    total
}

fn expectimax(
    dynamics: &Dynamics<'_>,
    belief: &JointBelief,
    horizon: usize,
    config: &OracleConfig,
    budget: &mut Budget,
) -> Result<f64, OracleError> {
    let mut best = f64::NEG_INFINITY;
    for action in 0..dynamics.action_count() {
        let mut value = expected_reward(dynamics, belief, action);
        if horizon > 0 {
            let mut future = 0.0;
            for (observation, p) in observation_likelihoods(dynamics, belief, action)?.into_iter().enumerate() {
                if p <= config.tolerance {
                    continue;
                }
                budget.take()?;
                let next = update_belief(dynamics, belief, action, observation)?;
                future += p * expectimax(dynamics, &next, horizon - 1, config, budget)?;
            }
            value += dynamics.gamma() * future;
        }
        best = best.max(value);
    }
    Ok(best)
}

/// Optimal value of `horizon + 1` decisions from `belief` by exhaustive
/// expectimax over the belief tree.
pub fn expectimax_value(
    dynamics: &Dynamics<'_>,
    belief: &JointBelief,
    horizon: usize,
    config: &OracleConfig,
) -> Result<OracleValue, OracleError> {
    let mut budget = Budget::new(config)?;
    let value = expectimax(dynamics, belief, horizon, config, &mut budget)?;
    Ok(OracleValue {
        value,
        nodes: budget.used,
    })
}

#[allow(clippy::too_many_arguments)]
fn follow(
    world: &Dynamics<'_>,
    runner: &PolicyRunner<'_, '_>,
    belief: &JointBelief,
    agent: &AgentState,
    remaining: usize,
    config: &OracleConfig,
    budget: &mut Budget,
) -> Result<f64, OracleError> {
    let action = runner.act(agent, remaining)?;
    let mut value = expected_reward(world, belief, action);
    if remaining == 0 {
        return Ok(value);
    }
    let mut future = 0.0;
    for (observation, p) in observation_likelihoods(world, belief, action)?.into_iter().enumerate() {
        if p <= config.tolerance {
            continue;
        }
        budget.take()?;
        let next = update_belief(world, belief, action, observation)?;
        let next_agent = runner.advance(agent, action, observation)?;
        future += p * follow(world, runner, &next, &next_agent, remaining - 1, config, budget)?;
    }
    value += world.gamma() * future;
    Ok(value)
}

/// Value of a fixed policy over `horizon + 1` decisions when the world runs
/// under `sigma`, by direct recursion.
pub fn oracle_policy_value(
    model: &CausalPomdp,
    sigma: &DomainSpec,
    policy: &PolicySpec,
    state_prior: &[f64],
    horizon: usize,
    config: &OracleConfig,
) -> Result<OracleValue, OracleError> {
    if state_prior.len() != model.state_count() {
        return Err(OracleError::PriorShape {
            expected: model.state_count(),
            actual: state_prior.len(),
        });
    }
    let world = Dynamics::new(model, &DomainSet::new(model, vec![sigma.clone()])?)?;
    let runner = PolicyRunner::new(model, policy)?;
    let belief = JointBelief::product(state_prior, &[1.0])?;
    let agent = runner.start(state_prior)?;
    let mut budget = Budget::new(config)?;
    let value = follow(&world, &runner, &belief, &agent, horizon, config, &mut budget)?;
    Ok(OracleValue {
        value,
        nodes: budget.used,
    })
}
