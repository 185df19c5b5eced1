//! Perturbation-based saliency methods viewed through a per-pixel spectral lens.
//!
//! Every explanation method here is a (perturbation kernel, explainer, summary
//! statistic) triple: draws `x̃ ~ p(x̃|x,σ)` are pushed through an explainer
//! (gradient, squared gradient, finite difference, masked prediction) and
//! averaged by an adaptive Monte Carlo engine. Because the kernel acts as a
//! low-pass filter and the gradient as a high-pass filter, each method reads
//! out a frequency band of the classifier; the [`spectral`] module selects the
//! perturbation scale by kernel–classifier cosine similarity and aggregates
//! bands into lens maps. Everything is kept at desk scale so the [`oracle`]
//! module can verify the spectral identities against closed forms and
//! quadrature.
//!
//! All Fourier machinery is 1-D and per pixel (along the pixel *value* axis,
//! not spatial dimensions), with the ordinary-frequency convention
//! `f̂(ω) = ∫ f(u) e^{-i2πωu} du` and the origin recentered at the sample
//! being explained. PSDs are two-sided internally; interfaces that fold onto
//! non-negative frequencies say so.

pub mod error;
pub mod estimator;
pub mod eval;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Grid, GridShape, InputGrid};
