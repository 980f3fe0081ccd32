//! Shared test helpers: a random model generator and an independent flat
//! reference implementation that works straight from the model document,
//! without going through the library's factored kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use causal_pomdp::model::{DomainDocument, ModelDocument, ParentLists, RewardDocument, VariableSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_observations: usize,
    /// Declared domains besides the implicit base.
    pub max_extra_domains: usize,
    pub min_actions: usize,
    /// Always declare an observable variable.
    pub observed: bool,
}

impl Shape {
    /// At least two actions, an observed variable, and two or three domains.
    pub fn demanding() -> Self {
        Shape {
            min_actions: 2,
            observed: true,
            max_extra_domains: 2,
            ..Shape::default()
        }
    }
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_states: 8,
            max_actions: 3,
            max_observations: 3,
            max_extra_domains: 2,
            min_actions: 1,
            observed: false,
        }
    }
}

pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.gen_bool(0.2) {
        let mut one_hot = vec![0.0; n];
        one_hot[rng.gen_range(0..n)] = 1.0;
        return one_hot;
    }
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn random_document(rng: &mut ChaCha8Rng, shape: Shape) -> ModelDocument {
    let mut sizes = Vec::new();
    let mut product = 1;
    loop {
        let size = rng.gen_range(2..=3);
        if product * size > shape.max_states || (sizes.len() == 3) {
            break;
        }
        sizes.push(size);
        product *= size;
        if rng.gen_bool(0.35) {
            break;
        }
    }
    let variables: Vec<VariableSpec> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| VariableSpec {
            name: format!("V{i}"),
            values: (0..n).map(|v| format!("v{i}_{v}")).collect(),
        })
        .collect();
    let names: Vec<String> = variables.iter().map(|v| v.name.clone()).collect();
    let actions: Vec<String> = (0..rng.gen_range(shape.min_actions..=shape.max_actions)).map(|a| format!("a{a}")).collect();

    let mut parents = BTreeMap::new();
    let mut transition = BTreeMap::new();
    for (i, var) in variables.iter().enumerate() {
        let prev: Vec<String> = names
            .iter()
            .enumerate()
            .filter(|(j, _)| rng.gen_bool(if *j == i { 0.7 } else { 0.3 }))
            .map(|(_, n)| n.clone())
            .collect();
        let curr: Vec<String> = names[..i].iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
        let rows: usize = prev
            .iter()
            .chain(&curr)
            .map(|p| sizes[names.iter().position(|n| n == p).unwrap()])
            .product();
        let mut per_action = BTreeMap::new();
        for a in &actions {
            let table = (0..rows).map(|_| random_distribution(rng, sizes[i])).collect();
            per_action.insert(a.clone(), table);
        }
        transition.insert(var.name.clone(), per_action);
        if !prev.is_empty() || !curr.is_empty() || rng.gen_bool(0.5) {
            parents.insert(var.name.clone(), ParentLists { prev, curr });
        }
    }

    let observables = {
        let candidates: Vec<&String> = names
            .iter()
            .zip(&sizes)
            .filter(|(_, &n)| n <= shape.max_observations)
            .map(|(name, _)| name)
            .collect();
        match candidates.choose(rng) {
            Some(&n) if shape.observed || rng.gen_bool(0.85) => vec![n.clone()],
            _ => vec![],
        }
    };

    let mut reward_vars: Vec<String> = names.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
    if reward_vars.is_empty() {
        reward_vars.push(names.choose(rng).unwrap().clone());
    }
    let reward_states: usize = reward_vars
        .iter()
        .map(|r| sizes[names.iter().position(|n| n == r).unwrap()])
        .product();
    let table = actions
        .iter()
        .map(|a| (a.clone(), (0..reward_states).map(|_| rng.gen_range(-5.0..5.0)).collect()))
        .collect();

    let domains = (0..rng.gen_range(0..=shape.max_extra_domains))
        .map(|k| {
            let v = rng.gen_range(0..names.len());
            let m = sizes[v];
            let rows = if rng.gen_bool(0.3) {
                let target = random_simplex(rng, m);
                vec![target; m]
            } else {
                (0..m).map(|_| random_simplex(rng, m)).collect()
            };
            DomainDocument {
                name: format!("shift{k}"),
                shifts: BTreeMap::from([(names[v].clone(), rows)]),
            }
        })
        .collect();

    ModelDocument {
        variables,
        actions,
        parents,
        transition,
        reward: RewardDocument {
            vars: reward_vars,
            table,
        },
        observables,
        gamma: rng.gen_range(0.5..0.99),
        domains,
    }
}

/// Flat POMDP read directly off the document. Domain 0 is the identity and
/// domains `1..` are the declared ones, in file order.
#[derive(Debug, Clone)]
pub struct Flat {
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub domains: usize,
    /// `kernel[d][a][s][s']`
    pub kernel: Vec<Vec<Vec<Vec<f64>>>>,
    /// `obs[s']`
    pub obs: Vec<usize>,
    /// `reward[a][s]`
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

fn decode(mut index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for i in (0..sizes.len()).rev() {
        out[i] = index % sizes[i];
        index /= sizes[i];
    }
    out
}

fn encode(values: &[usize], sizes: &[usize]) -> usize {
    values.iter().zip(sizes).fold(0, |acc, (v, n)| acc * n + v)
}

pub fn flatten(doc: &ModelDocument) -> Flat {
    let names: Vec<&str> = doc.variables.iter().map(|v| v.name.as_str()).collect();
    let sizes: Vec<usize> = doc.variables.iter().map(|v| v.values.len()).collect();
    let pos = |n: &str| names.iter().position(|m| *m == n).unwrap();
    let states: usize = sizes.iter().product();
    let no_parents = ParentLists::default();

    let mut shift_sets: Vec<BTreeMap<&str, &Vec<Vec<f64>>>> = vec![BTreeMap::new()];
    for d in &doc.domains {
        shift_sets.push(d.shifts.iter().map(|(k, v)| (k.as_str(), v)).collect());
    }

    let kernel = shift_sets
        .iter()
        .map(|shifts| {
            doc.actions
                .iter()
                .map(|a| {
                    (0..states)
                        .map(|s| {
                            let x = decode(s, &sizes);
                            (0..states)
                                .map(|t| {
                                    let y = decode(t, &sizes);
                                    let mut p = 1.0;
                                    for (i, name) in names.iter().enumerate() {
                                        let lists = doc.parents.get(*name).unwrap_or(&no_parents);
                                        let mut pv = Vec::new();
                                        let mut ps = Vec::new();
                                        for q in &lists.prev {
                                            pv.push(x[pos(q)]);
                                            ps.push(sizes[pos(q)]);
                                        }
                                        for q in &lists.curr {
                                            pv.push(y[pos(q)]);
                                            ps.push(sizes[pos(q)]);
                                        }
                                        let row = &doc.transition[*name][a][encode(&pv, &ps)];
                                        let sum: f64 = row.iter().sum();
                                        let base: Vec<f64> = row.iter().map(|r| r / sum).collect();
                                        let dist = match shifts.get(name) {
                                            Some(m) => (0..sizes[i])
                                                .map(|j| (0..sizes[i]).map(|k| m[k][j] * base[k]).sum())
                                                .collect(),
                                            None => base,
                                        };
                                        p *= dist[y[i]];
                                    }
                                    p
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let obs_idx: Vec<usize> = doc.observables.iter().map(|o| pos(o)).collect();
    let obs_sizes: Vec<usize> = obs_idx.iter().map(|&i| sizes[i]).collect();
    let obs = (0..states)
        .map(|s| {
            let x = decode(s, &sizes);
            encode(&obs_idx.iter().map(|&i| x[i]).collect::<Vec<_>>(), &obs_sizes)
        })
        .collect();
    let r_idx: Vec<usize> = doc.reward.vars.iter().map(|v| pos(v)).collect();
    let r_sizes: Vec<usize> = r_idx.iter().map(|&i| sizes[i]).collect();
    let reward = doc
        .actions
        .iter()
        .map(|a| {
            (0..states)
                .map(|s| {
                    let x = decode(s, &sizes);
                    doc.reward.table[a][encode(&r_idx.iter().map(|&i| x[i]).collect::<Vec<_>>(), &r_sizes)]
                })
                .collect()
        })
        .collect();

    Flat {
        states,
        actions: doc.actions.len(),
        observations: obs_sizes.iter().product(),
        domains: shift_sets.len(),
        kernel,
        obs,
        reward,
        gamma: doc.gamma,
    }
}

impl Flat {
    /// Joint Bayes update over `(s, d)`, flat index `s * domains.len() + k`
    /// for the domains listed. `None` when the observation is impossible.
    pub fn update(&self, domains: &[usize], b: &[f64], a: usize, o: usize) -> Option<Vec<f64>> {
        let nd = domains.len();
        let mut out = vec![0.0; self.states * nd];
        for (k, &d) in domains.iter().enumerate() {
            for t in 0..self.states {
                if self.obs[t] != o {
                    continue;
                }
                out[t * nd + k] = (0..self.states).map(|s| b[s * nd + k] * self.kernel[d][a][s][t]).sum();
            }
        }
        let z: f64 = out.iter().sum();
        if z <= 0.0 {
            return None;
        }
        Some(out.into_iter().map(|v| v / z).collect())
    }

    pub fn likelihood(&self, domains: &[usize], b: &[f64], a: usize, o: usize) -> f64 {
        let nd = domains.len();
        let mut z = 0.0;
        for (k, &d) in domains.iter().enumerate() {
            for t in 0..self.states {
                if self.obs[t] == o {
                    z += (0..self.states).map(|s| b[s * nd + k] * self.kernel[d][a][s][t]).sum::<f64>();
                }
            }
        }
        z
    }

    /// Expectimax over the flat joint belief.
    pub fn value(&self, domains: &[usize], b: &[f64], horizon: usize) -> f64 {
        let nd = domains.len();
        (0..self.actions)
            .map(|a| {
                let now: f64 = (0..self.states * nd).map(|i| b[i] * self.reward[a][i / nd]).sum();
                if horizon == 0 {
                    return now;
                }
                let later: f64 = (0..self.observations)
                    .filter_map(|o| {
                        let p = self.likelihood(domains, b, a, o);
                        self.update(domains, b, a, o).map(|next| p * self.value(domains, &next, horizon - 1))
                    })
                    .sum();
                now + self.gamma * later
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tiger: listen until the same reading comes twice in a row, then open the
/// other door.
pub fn confirm_twice(tiger: &causal_pomdp::model::CausalPomdp) -> causal_pomdp::planning::PolicySpec {
    let map = [
        ("hl", "listen"),
        ("hr", "listen"),
        ("hl|hl", "open-right"),
        ("hr|hr", "open-left"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    causal_pomdp::planning::ReactivePolicy::from_labels(tiger, "listen", &map)
        .expect("valid tiger policy")
        .into()
}

/// Tiger: open the door opposite the last reading.
pub fn trust_once(tiger: &causal_pomdp::model::CausalPomdp) -> causal_pomdp::planning::PolicySpec {
    let map = [("hl", "open-right"), ("hr", "open-left")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    causal_pomdp::planning::ReactivePolicy::from_labels(tiger, "listen", &map)
        .expect("valid tiger policy")
        .into()
}
