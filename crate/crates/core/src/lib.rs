//! Bohmian mechanics on periodic grids: wave-function evolution, guided
//! trajectories, quantum-equilibrium sampling and measurement analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evolution;
pub mod grid;
pub mod dynamics;
pub mod equilibrium;
pub mod interp;
pub mod measurement;
pub mod scenarios;
pub mod spectral;
pub mod states;

pub use error::{Error, Result};
pub use grid::{density, inner_product, make_grid, normalize, AxisSpec, DensityField, Grid, ParticleSystem, WaveFunction};
