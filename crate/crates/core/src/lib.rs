//! Lorentzian metrics on circle bundles over flat product bases.
//!
//! The metric g = 2iA⊙η + f η⊙η + h is written in chart coordinates
//! (u, v, x¹..xⁿ); closed-form connection and curvature formulas are evaluated
//! and cross-checked against a brute-force Christoffel pipeline. On top of that
//! sit a spectral Poisson solver for Ricci-flat data, geodesic integration with
//! completeness probes, and holonomy sampling and classification.

pub mod base_geometry;
pub mod bundle_chart;
pub mod config;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod field;
pub mod geodesics;
pub mod holonomy;
pub mod par;
pub mod presets;
pub mod report;
pub mod ricci_flat;
pub mod sampling;

pub use error::{Error, Result};
