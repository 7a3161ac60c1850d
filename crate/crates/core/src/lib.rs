//! Simulation, design and reconstruction toolkit for Fourier-plane
//! diffuser microscopes built from random multi-focal microlenses.
//!
//! The pipeline runs `design` -> `surface` -> `wavesim` -> `forward` ->
//! `recon`, with `analysis` providing the resolution, field-of-view and
//! depth-range experiments on top.

pub mod analysis;
pub mod config;
pub mod container;
pub mod design;
pub mod error;
pub mod fft;
pub mod forward;
pub mod par;
pub mod recon;
pub mod registration;
pub mod rng;
pub mod surface;
pub mod wavesim;

pub use design::{DesignReport, LayoutKind, OpticalSystem};
pub use error::{Error, Result};
