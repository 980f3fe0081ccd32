//! Dense shifted kernels over the augmented state–domain space.
//!
//! [`Dynamics`] caches `P(s' | s, a; sigma)` for every domain of a
//! [`DomainSet`], along with the observation each state produces and the
//! reward table. Every belief, backup and sampling routine runs off this
//! cache. The direct product-of-factors evaluation in
//! [`CausalPomdp::transition_prob`] stays available as an independent path.

use crate::interventions::{shifted_cpt, DomainSet, ShiftError};
use crate::model::CausalPomdp;

#[derive(Debug, Clone)]
pub struct Dynamics<'m> {
    model: &'m CausalPomdp,
    domains: DomainSet,
    states: usize,
    actions: usize,
    observations: usize,
    /// `kernel[((d * A + a) * S + s) * S + s']`
    kernel: Vec<f64>,
    observation_of: Vec<usize>,
    states_by_observation: Vec<Vec<usize>>,
    /// `rewards[a * S + s]`
    rewards: Vec<f64>,
}

impl<'m> Dynamics<'m> {
    pub fn new(model: &'m CausalPomdp, domains: &DomainSet) -> Result<Self, ShiftError> {
        let states = model.state_count();
        let actions = model.action_count();
        let assignments = model.enumerate_states();
        let vars = model.variables().len();

        let mut kernel = Vec::with_capacity(domains.len() * actions * states * states);
        for domain in domains {
            let shifts = domain.bind(model)?;
            // shifted[var][action]
            let mut shifted = Vec::with_capacity(vars);
            for (i, shift) in shifts.iter().enumerate() {
                let mut per_action = Vec::with_capacity(actions);
                for a in 0..actions {
                    let table = model.conditional_table(i, a);
                    per_action.push(match shift {
                        Some(m) => shifted_cpt(table, m)?,
                        None => table.clone(),
                    });
                }
                shifted.push(per_action);
            }
            #[allow(clippy::needless_range_loop)]
            for a in 0..actions {
                for s in &assignments {
                    for next in &assignments {
                        let p = (0..vars)
                            .map(|i| shifted[i][a].distribution(model.parent_row(i, s, next))[next[i]])
                            .product();
                        kernel.push(p);
                    }
                }
            }
        }

        let observation_of: Vec<usize> = assignments.iter().map(|s| model.observation_index(s)).collect();
        let mut states_by_observation = vec![Vec::new(); model.observation_count()];
        for (s, &o) in observation_of.iter().enumerate() {
            states_by_observation[o].push(s);
        }
        let mut rewards = Vec::with_capacity(actions * states);
        for a in 0..actions {
            rewards.extend(assignments.iter().map(|s| model.reward(s, a)));
        }

        Ok(Dynamics {
            model,
            domains: domains.clone(),
            states,
            actions,
            observations: model.observation_count(),
            kernel,
            observation_of,
            states_by_observation,
            rewards,
        })
    }

    pub fn model(&self) -> &'m CausalPomdp {
        self.model
    }

    pub fn domains(&self) -> &DomainSet {
        &self.domains
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn observation_count(&self) -> usize {
        self.observations
    }

    pub fn gamma(&self) -> f64 {
        self.model.gamma()
    }

    /// Row `P(. | s, a; domain)`.
    pub fn transition_row(&self, domain: usize, action: usize, state: usize) -> &[f64] {
        let start = ((domain * self.actions + action) * self.states + state) * self.states;
        &self.kernel[start..start + self.states]
    }

    pub fn transition(&self, domain: usize, action: usize, state: usize, next: usize) -> f64 {
        self.transition_row(domain, action, state)[next]
    }

    pub fn observation_of(&self, state: usize) -> usize {
        self.observation_of[state]
    }

    /// States whose projection is `observation`, ascending.
    pub fn states_observing(&self, observation: usize) -> &[usize] {
        &self.states_by_observation[observation]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[action * self.states + state]
    }

    pub fn reward_row(&self, action: usize) -> &[f64] {
        &self.rewards[action * self.states..(action + 1) * self.states]
    }
}
