//! Discovery of closed-form governing equations for networked dynamical
//! systems.
//!
//! The pipeline simulates (or ingests) node trajectories on a graph, picks an
//! informative time window, differentiates the states, fits small neural
//! networks that split each node's derivative into a self term and a pairwise
//! interaction term, and finally regresses closed-form expressions from those
//! networks:
//!
//! ```text
//! ẋ_i = f(x_i) + Σ_j A_ij g(x_i, x_j)
//! ```
//!
//! Modules map one-to-one onto the pipeline stages; [`pipeline`] wires them
//! together from a JSON config.

pub mod chaos;
pub mod decoupler;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod symreg;
pub mod topology;

pub use error::{Error, Result};
