//! Meso-macro traffic network simulation with demonstration-guided deep-Q
//! control of ramp meters and region perimeters.
//!
//! The crate couples an asymmetric cell-transmission freeway model with
//! generalized bathtub urban regions, layers classical controllers (ramp
//! integrator, perimeter gating) on top as demonstrators, and trains
//! recurrent Q-learners whose loss blends a TD term with an annealed
//! demonstration cross-entropy.

pub mod actm;
pub mod alloc;
pub mod bathtub;
pub mod config;
pub mod demand;
pub mod demonstrators;
pub mod drl;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod plan;
pub mod rng;

pub use config::{load_network_config, Scenario};
pub use engine::{run_episode, Policy, SimBundle, SimOptions, Simulation};
pub use metrics::EpisodeMetrics;
pub use net::Network;
