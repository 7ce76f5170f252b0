//! Multi-resolution inverse design of compliance-minimal structures with a
//! conditional cascaded diffusion model.

pub mod cascade;
pub mod cases;
pub mod config;
pub mod dataset;
pub mod ddpm;
pub mod error;
pub mod experiment;
pub mod fea;
pub mod fields;
pub mod grid;
pub mod metrics;
pub mod render;
pub mod simp;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use grid::{DensityField, Grid};
