//! Flatland Gaussian splatting with noise-robust training.
//!
//! The world is 2D and cameras produce 1D RGB images. Scenes are explicit
//! sets of anisotropic Gaussian primitives rendered by depth-sorted alpha
//! blending, with a full analytic backward pass. On top of the plain
//! trainer sit the anti-noise components:
//!
//! - [`oc`]: per-primitive observation completeness from online camera
//!   position statistics, plus observation-based pruning,
//! - [`assess`]: per-view noise assessment maps (residual, learned
//!   uncertainty, texture, observation correction),
//! - [`anchors`]: histogram-based dynamic thresholds turning assessments
//!   into self-supervised clean/noise labels,
//! - [`classify`]: the two small MLP heads (uncertainty and clean mask),
//! - [`train`]: the training loop wiring everything together.
//!
//! [`scene`] holds the domain types, synthetic dataset generation, and
//! dataset serialization.

pub mod anchors;
pub mod assess;
pub mod classify;
pub mod metrics;
pub mod oc;
pub mod render;
pub mod rngutil;
pub mod scene;
pub mod train;
