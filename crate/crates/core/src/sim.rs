//! Forward sampling under a ground-truth domain, Monte Carlo policy values,
//! and passive domain-identification experiments.
//!
//! Every episode draws from its own ChaCha8 stream: the generator is seeded
//! with the run seed and switched to stream `episode`, so episode results do
//! not depend on how many episodes ran before them.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::{update_belief, BeliefError, JointBelief, BELIEF_TOLERANCE};
use crate::dynamics::Dynamics;
use crate::interventions::{DomainSet, DomainSpec, ShiftError};
use crate::model::CausalPomdp;
use crate::planning::{AgentState, PolicyError, PolicyRunner, PolicySpec};

/// Recorded in every simulation output.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.3), seed_from_u64(seed), stream = episode index";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain `{0}` is not in the domain set")]
    UnknownDomain(String),
    #[error("state prior must have {expected} non-negative entries summing to 1")]
    BadPrior { expected: usize },
    #[error("at least one episode is required")]
    NoEpisodes,
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// Hex SHA-256 of the model's canonical rendering.
pub fn model_hash(model: &CausalPomdp) -> String {
    hex::encode(Sha256::digest(model.render().as_bytes()))
}

pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

fn check_prior(model: &CausalPomdp, prior: &[f64]) -> Result<(), SimError> {
    let ok = prior.len() == model.state_count()
        && prior.iter().all(|p| *p >= 0.0)
        && (prior.iter().sum::<f64>() - 1.0).abs() <= BELIEF_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(SimError::BadPrior {
            expected: model.state_count(),
        })
    }
}

fn draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights)
        .expect("validated distribution has positive mass")
        .sample(rng)
}

pub fn uniform_prior(model: &CausalPomdp) -> Vec<f64> {
    vec![1.0 / model.state_count() as f64; model.state_count()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetadata {
    pub model_hash: String,
    pub domain: String,
    pub seed: u64,
    pub rng: String,
}

/// Indices follow the model's state, action and observation enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub observation: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub metadata: TrajectoryMetadata,
    pub initial_state: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for step in &self.steps {
            total += discount * step.reward;
            discount *= gamma;
        }
        total
    }
}

fn world_for<'m>(model: &'m CausalPomdp, domain: &DomainSpec) -> Result<Dynamics<'m>, SimError> {
    Ok(Dynamics::new(model, &DomainSet::new(model, vec![domain.clone()])?)?)
}

fn run_episode(
    world: &Dynamics<'_>,
    runner: &PolicyRunner<'_, '_>,
    prior: &[f64],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, Vec<TrajectoryStep>), SimError> {
    let initial = draw(rng, prior);
    let mut agent = runner.start(prior)?;
    let mut state = initial;
    let mut steps = Vec::with_capacity(horizon + 1);
    for depth in 0..=horizon {
        let action = runner.act(&agent, horizon - depth)?;
        let next_state = draw(rng, world.transition_row(0, action, state));
        let observation = world.observation_of(next_state);
        steps.push(TrajectoryStep {
            state,
            action,
            next_state,
            observation,
            reward: world.reward(state, action),
        });
        if depth < horizon {
            agent = runner.advance(&agent, action, observation)?;
        }
        state = next_state;
    }
    Ok((initial, steps))
}

/// One episode of `horizon + 1` decisions under `true_domain`.
pub fn sample_episode(
    model: &CausalPomdp,
    true_domain: &DomainSpec,
    policy: &PolicySpec,
    state_prior: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, SimError> {
    check_prior(model, state_prior)?;
    let world = world_for(model, true_domain)?;
    let runner = PolicyRunner::new(model, policy)?;
    let (initial_state, steps) = run_episode(&world, &runner, state_prior, horizon, &mut episode_rng(seed, 0))?;
    Ok(Trajectory {
        metadata: TrajectoryMetadata {
            model_hash: model_hash(model),
            domain: true_domain.name().to_string(),
            seed,
            rng: RNG_ALGORITHM.to_string(),
        },
        initial_state,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
}

/// Mean discounted return over `episodes` sampled episodes, with the
/// standard error of the mean (zero for a single episode).
pub fn monte_carlo_policy_value(
    model: &CausalPomdp,
    true_domain: &DomainSpec,
    policy: &PolicySpec,
    state_prior: &[f64],
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<MonteCarloEstimate, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    check_prior(model, state_prior)?;
    let world = world_for(model, true_domain)?;
    let runner = PolicyRunner::new(model, policy)?;
    // Welford: a constant return stream gives its value and zero spread exactly
    let mut mean = 0.0;
    let mut squares = 0.0;
    for episode in 0..episodes {
        let (_, steps) = run_episode(&world, &runner, state_prior, horizon, &mut episode_rng(seed, episode as u64))?;
        let mut discount = 1.0;
        let mut total = 0.0;
        for step in &steps {
            total += discount * step.reward;
            discount *= model.gamma();
        }
        let delta = total - mean;
        mean += delta / (episode + 1) as f64;
        squares += delta * (total - mean);
    }
    let n = episodes as f64;
    let stderr = if episodes > 1 {
        (squares / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, stderr, episodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationMetadata {
    pub model_hash: String,
    pub domains: Vec<String>,
    pub true_domain: String,
    pub steps: usize,
    pub episodes: usize,
    pub seed: u64,
    pub rng: String,
}

/// `posteriors[k]` is the domain marginal after `k` observations; index 0 is
/// the prior. A flagged episode stops at the step that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCurve {
    pub episode: usize,
    pub posteriors: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub metadata: IdentificationMetadata,
    /// Mean posterior mass on the true domain per step, over the episodes
    /// that reached that step.
    pub mean_true_mass: Vec<f64>,
    pub flagged: Vec<usize>,
    pub episodes: Vec<EpisodeCurve>,
}

impl IdentificationReport {
    /// Long-format rows `step,episode,domain,posterior`.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["step", "episode", "domain", "posterior"])?;
        for curve in &self.episodes {
            for (step, posterior) in curve.posteriors.iter().enumerate() {
                for (domain, p) in self.metadata.domains.iter().zip(posterior) {
                    writer.write_record([step.to_string(), curve.episode.to_string(), domain.clone(), p.to_string()])?;
                }
            }
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Samples `episodes` trajectories of `steps` decisions under `true_domain`,
/// filters each over the whole domain set from `prior` (uniform joint belief
/// when `None`) and records the domain posterior after every observation.
#[allow(clippy::too_many_arguments)]
pub fn identification_experiment(
    model: &CausalPomdp,
    domains: &DomainSet,
    true_domain: &str,
    policy: &PolicySpec,
    steps: usize,
    episodes: usize,
    seed: u64,
    prior: Option<&JointBelief>,
) -> Result<IdentificationReport, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    let truth = domains
        .position(true_domain)
        .ok_or_else(|| SimError::UnknownDomain(true_domain.to_string()))?;
    let prior = match prior {
        Some(b) => b.clone(),
        None => JointBelief::uniform(model.state_count(), domains.len())?,
    };
    if prior.state_count() != model.state_count() || prior.domain_count() != domains.len() {
        return Err(BeliefError::DimensionMismatch {
            expected: model.state_count() * domains.len(),
            actual: prior.as_slice().len(),
        }
        .into());
    }
    // the true state is drawn from the prior conditioned on the true domain
    let conditional: Vec<f64> = {
        let column: Vec<f64> = (0..prior.state_count()).map(|s| prior.get(s, truth)).collect();
        let mass: f64 = column.iter().sum();
        if mass <= 0.0 {
            return Err(SimError::BadPrior {
                expected: model.state_count(),
            });
        }
        column.iter().map(|p| p / mass).collect()
    };
    let world = world_for(model, &domains[truth])?;
    let filter = Dynamics::new(model, domains)?;
    let runner = PolicyRunner::new(model, policy)?;
    let agent_prior = prior.marginal_state();

    let mut curves = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut rng = episode_rng(seed, episode as u64);
        let mut state = draw(&mut rng, &conditional);
        let mut belief = prior.clone();
        let mut agent: AgentState = runner.start(&agent_prior)?;
        let mut posteriors = vec![belief.marginal_domain()];
        let mut error = None;
        for step in 0..steps {
            let action = runner.act(&agent, steps - 1 - step)?;
            let next = draw(&mut rng, world.transition_row(0, action, state));
            let observation = world.observation_of(next);
            belief = match update_belief(&filter, &belief, action, observation) {
                Ok(b) => b,
                Err(e) => {
                    error = Some(format!("step {step}: {e}"));
                    break;
                }
            };
            posteriors.push(belief.marginal_domain());
            agent = match runner.advance(&agent, action, observation) {
                Ok(a) => a,
                Err(e) => {
                    error = Some(format!("step {step}: {e}"));
                    break;
                }
            };
            state = next;
        }
        curves.push(EpisodeCurve {
            episode,
            posteriors,
            error,
        });
    }

    let mut mean_true_mass = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let reached: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.posteriors.get(k).map(|p| p[truth]))
            .collect();
        if reached.is_empty() {
            break;
        }
        mean_true_mass.push(reached.iter().sum::<f64>() / reached.len() as f64);
    }
    Ok(IdentificationReport {
        metadata: IdentificationMetadata {
            model_hash: model_hash(model),
            domains: domains.names().iter().map(|s| s.to_string()).collect(),
            true_domain: true_domain.to_string(),
            steps,
            episodes,
            seed,
            rng: RNG_ALGORITHM.to_string(),
        },
        mean_true_mass,
        flagged: curves.iter().filter(|c| c.error.is_some()).map(|c| c.episode).collect(),
        episodes: curves,
    })
}
