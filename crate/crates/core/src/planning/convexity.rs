use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{value_at, AlphaSet};
use crate::belief::JointBelief;

pub const CONVEXITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub lambda: f64,
    pub gap: f64,
    /// `"convexity"` or `"affine-pieces"`.
    pub check: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Uniform draw from the simplex (normalized unit exponentials).
pub(crate) fn random_joint_belief(rng: &mut impl Rng, states: usize, domains: usize) -> JointBelief {
    let weights: Vec<f64> = (0..states * domains).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let values: Vec<f64> = weights.iter().map(|w| w / total).collect();
    JointBelief::new(states, domains, values).expect("normalized draw")
}

/// Checks `V(l b1 + (1-l) b2) <= l V(b1) + (1-l) V(b2) + tol` on random
/// segments for an arbitrary belief function.
pub fn check_convexity_of(
    states: usize,
    domains: usize,
    samples: usize,
    seed: u64,
    value: impl Fn(&JointBelief) -> f64,
) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for _ in 0..samples {
        let b1 = random_joint_belief(&mut rng, states, domains);
        let b2 = random_joint_belief(&mut rng, states, domains);
        let lambda: f64 = rng.gen();
        let mixed = b1.mix(&b2, lambda);
        let gap = value(&mixed) - (lambda * value(&b1) + (1.0 - lambda) * value(&b2));
        if gap > CONVEXITY_TOLERANCE {
            violations.push(Violation {
                lambda,
                gap,
                check: "convexity".into(),
            });
        }
    }
    ConvexityReport { samples, violations }
}

/// Convexity check for the max-of-alphas value function. Along each segment it
/// also verifies that the value equals the largest per-alpha affine
/// interpolant.
pub fn check_convexity(set: &AlphaSet, samples: usize, seed: u64) -> ConvexityReport {
    let value = |b: &JointBelief| value_at(set, b).expect("dimensions match").0;
    let mut report = check_convexity_of(set.state_count(), set.domain_count(), samples, seed, value);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_affe);
    for _ in 0..samples {
        let b1 = random_joint_belief(&mut rng, set.state_count(), set.domain_count());
        let b2 = random_joint_belief(&mut rng, set.state_count(), set.domain_count());
        let lambda: f64 = rng.gen();
        let interpolated = set
            .alphas()
            .iter()
            .map(|a| lambda * a.dot(&b1) + (1.0 - lambda) * a.dot(&b2))
            .fold(f64::NEG_INFINITY, f64::max);
        let gap = (value(&b1.mix(&b2, lambda)) - interpolated).abs();
        if gap > CONVEXITY_TOLERANCE {
            report.violations.push(Violation {
                lambda,
                gap,
                check: "affine-pieces".into(),
            });
        }
    }
    report
}
