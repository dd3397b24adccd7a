//! Coupled EV traffic and distribution-grid co-simulation.

pub mod decisions;
pub mod engine;
pub mod ev;
pub mod network;
pub mod pdn;
pub mod rng;
pub mod scenario;
pub mod stations;
pub mod traffic;
pub mod tripgen;
pub mod v2g;
