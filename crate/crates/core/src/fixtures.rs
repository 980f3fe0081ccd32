//! Bundled desk-scale models.

use crate::interventions::{DomainSpec, ShiftMatrix};
use crate::model::{load_model, CausalPomdp};

/// Tiger problem with the sensor reading `Z` folded into the state.
pub const TIGER: &str = include_str!("../models/tiger.json");

/// Single fair coin with two shifts that both produce a 3/4-heads coin.
pub const COIN: &str = include_str!("../models/coin.json");

pub fn tiger() -> CausalPomdp {
    load_model(TIGER).expect("bundled tiger model is valid")
}

pub fn coin() -> CausalPomdp {
    load_model(COIN).expect("bundled coin model is valid")
}

/// Sensor-degrading shift on the tiger's `Z`: listening accuracy 0.85 -> 0.64.
pub fn degraded_sensor() -> DomainSpec {
    DomainSpec::identity("degraded").with_shift(
        "Z",
        ShiftMatrix::from_rows(&[vec![0.7, 0.3], vec![0.3, 0.7]]).expect("row-stochastic"),
    )
}
