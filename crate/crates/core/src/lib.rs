//! Multi-detector 3D box fusion and pseudo-label generation for lidar
//! domain adaptation.
//!
//! Stages: per-frame KDE box fusion ([`fusion`]), Kalman tracking
//! ([`tracking`]), motion classification and static-object refinement
//! ([`staticrefine`]), and final assembly ([`pipeline`]). [`evalbench`]
//! provides AP evaluation and a synthetic scene generator.

pub mod error;
pub mod evalbench;
pub mod fusion;
pub mod geometry;
pub mod kde;
pub mod pipeline;
pub mod staticrefine;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{Box7, EgoPose};
