//! Elliptic and parabolic equations on finitely ramified (p.c.f.) fractals,
//! discretised on the approximating graphs `V_m` and on metric graphs.

pub mod cell_structure;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod forms;
pub mod harmonic_structure;
pub mod identification;
pub mod linalg;
pub mod measures;
pub mod metric_graph;
pub mod solvers;

pub use error::{Error, Result};
