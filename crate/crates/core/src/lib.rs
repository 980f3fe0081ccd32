pub mod belief;
pub mod dynamics;
pub mod fixtures;
pub mod interventions;
pub mod model;
pub mod planning;
pub mod oracle;
pub mod sim;
pub mod cli;
