//! Gridded weather extraction, growing-season metrics and a household panel
//! regression battery comparing extraction choices.

pub mod battery;
pub mod config;
pub mod econometrics;
pub mod extract;
pub mod geo;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod survey;
