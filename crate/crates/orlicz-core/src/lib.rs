//! Coordinate marginals of generalized Orlicz balls.
//!
//! The ball `B_{φ,t}^N = {s ∈ ℝ^N : Σ φ(s_i) <= t N}` built from a potential
//! φ concentrates, as N grows, around product behaviour for its coordinate
//! marginals: uniform on the domain of φ above a critical level `t_crit`,
//! and a Gibbs density `∝ e^{α_t φ(s)}` at or below it. This crate computes
//! both sides of that statement at desk scale:
//!
//! * exact finite-N marginal laws of the sum statistic via FFT convolution
//!   powers of the pushforward density ψ, in log domain where tails
//!   underflow;
//! * the predicted laws via exponential tilting (partition function, rate
//!   function, tilt solver);
//! * total-variation distances between the two, together with the limiting
//!   constants that govern their decay rates;
//! * exact samplers (rejection and coordinate Gibbs) for cross-validation.

pub mod conv;
pub mod cramer;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod grid;
pub mod marginal;
pub mod potential;
pub mod pushforward;
pub mod sampler;
pub mod svg;
pub mod tilt;
pub mod truncation;
pub mod xi;

pub use error::{Error, Result};
pub use grid::GridDensity;
pub use potential::{MonotonePiece, PieceExpr, Potential, PotentialSpec};
pub use tilt::TiltFamily;
