//! Domain types for the flatland world: 2D space, 1D pinhole cameras,
//! 1D RGB images.
//!
//! Conventions used throughout the crate:
//! - camera forward axis is `(cos heading, sin heading)`, lateral axis is
//!   `(-sin heading, cos heading)`,
//! - a world point with camera-frame coordinates (depth d, lateral l)
//!   projects to pixel coordinate `u = focal * l / d + width / 2`,
//! - pixel `i` covers `[i, i+1)` and is sampled at its center `i + 0.5`,
//! - camera positions are normalized so every camera lies in [0,1]^2;
//!   observation statistics downstream rely on this.

mod gen;
mod io;

pub use gen::{generate_dataset, render_reference, Dataset};
pub use io::{load_dataset, save_dataset, DatasetFile, IoError, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance below which a point counts as behind the camera.
pub const NEAR_PLANE: f64 = 0.01;

pub type Vec2 = [f64; 2];
pub type Rgb = [f64; 3];

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One explicit scene element.
///
/// The world covariance is never stored; it is reconstructed as
/// `R(rotation) * diag(scale^2) * R(rotation)^T`, which is symmetric
/// positive definite whenever both scales are positive. Opacity is kept
/// as a logit so optimization is unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    /// Center position in world units.
    pub position: Vec2,
    /// Standard deviations along the two principal axes (world units, > 0).
    pub scale: Vec2,
    /// Principal-axis rotation in radians.
    pub rotation: f64,
    /// Opacity logit; alpha = sigmoid(opacity_logit).
    pub opacity_logit: f64,
    /// Linear RGB in [0,1].
    pub color: Rgb,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World covariance as (xx, xy, yy).
    pub fn covariance(&self) -> (f64, f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let s1 = self.scale[0] * self.scale[0];
        let s2 = self.scale[1] * self.scale[1];
        let xx = c * c * s1 + s * s * s2;
        let xy = c * s * (s1 - s2);
        let yy = s * s * s1 + c * c * s2;
        (xx, xy, yy)
    }
}

/// 1D pinhole camera in the 2D world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Camera center, normalized world coordinates in [0,1]^2.
    pub position: Vec2,
    /// Viewing direction in radians.
    pub heading: f64,
    /// Focal length in pixels (> 0).
    pub focal: f64,
    /// Image width in pixels (>= 8).
    pub width: usize,
}

impl CameraPose {
    pub fn forward(&self) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        [c, s]
    }

    pub fn lateral(&self) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        [-s, c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ProjectionError {
    #[error("point is behind the camera near-plane")]
    BehindCamera,
}

/// Projects a world point to (pixel coordinate, depth).
///
/// Errors with [`ProjectionError::BehindCamera`] when the camera-frame
/// depth is at or below the near-plane.
pub fn project_point(camera: &CameraPose, point: Vec2) -> Result<(f64, f64), ProjectionError> {
    let rel = sub(point, camera.position);
    let depth = dot(rel, camera.forward());
    if depth <= NEAR_PLANE {
        return Err(ProjectionError::BehindCamera);
    }
    let lateral = dot(rel, camera.lateral());
    let u = camera.focal * (lateral / depth) + camera.width as f64 / 2.0;
    Ok((u, depth))
}

/// One training or test view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: CameraPose,
    /// Reference image, one linear RGB color per pixel.
    pub image: Vec<Rgb>,
    /// Ground-truth distractor mask (true = distractor pixel).
    /// Present only for evaluation; never used by training.
    #[serde(with = "io::mask_as_ints")]
    pub gt_mask: Option<Vec<bool>>,
    pub image_id: usize,
}

impl ViewRecord {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    /// True when the view carries any ground-truth distractor pixel.
    pub fn has_distractors(&self) -> bool {
        self.gt_mask.as_ref().is_some_and(|m| m.iter().any(|&b| b))
    }
}

/// Parameters of the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_background_gaussians: usize,
    pub n_views: usize,
    pub image_width: usize,
    /// Fraction of views that receive transient distractors.
    pub distractor_view_fraction: f64,
    pub distractors_per_view: usize,
    pub rng_seed: u64,
    /// Depth scale of the scene; cameras stay inside [0,1]^2 regardless.
    pub world_extent: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_background_gaussians: 120,
            n_views: 40,
            image_width: 64,
            distractor_view_fraction: 0.3,
            distractors_per_view: 2,
            rng_seed: 0,
            world_extent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid scene config: {0}")]
    Invalid(String),
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_background_gaussians == 0 {
            return Err(ConfigError::Invalid("n_background_gaussians must be positive".into()));
        }
        if self.n_views == 0 {
            return Err(ConfigError::Invalid("n_views must be positive".into()));
        }
        if self.image_width < 8 {
            return Err(ConfigError::Invalid("image_width must be >= 8".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_view_fraction) {
            return Err(ConfigError::Invalid("distractor_view_fraction must be in [0,1]".into()));
        }
        if self.distractors_per_view == 0 {
            return Err(ConfigError::Invalid("distractors_per_view must be positive".into()));
        }
        if !(self.world_extent > 0.0) {
            return Err(ConfigError::Invalid("world_extent must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_camera() -> CameraPose {
        CameraPose { position: [0.0, 0.0], heading: 0.0, focal: 64.0, width: 128 }
    }

    #[test]
    fn point_on_optical_axis_projects_to_center() {
        let cam = test_camera();
        for depth in [0.05, 1.0, 37.5] {
            let (u, d) = project_point(&cam, [depth, 0.0]).unwrap();
            assert_eq!(u, 64.0);
            assert!((d - depth).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_arithmetic_matches_pinhole_formula() {
        // depth 2, lateral 1 with heading 0: forward = +x, lateral = +y.
        let cam = test_camera();
        let (u, d) = project_point(&cam, [2.0, 1.0]).unwrap();
        assert_eq!(u, 64.0 * 0.5 + 64.0);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = test_camera();
        assert_eq!(project_point(&cam, [0.0, 1.0]), Err(ProjectionError::BehindCamera));
        assert_eq!(project_point(&cam, [-1.0, 0.0]), Err(ProjectionError::BehindCamera));
        // Exactly on the near plane still counts as behind.
        assert_eq!(project_point(&cam, [NEAR_PLANE, 0.0]), Err(ProjectionError::BehindCamera));
    }

    #[test]
    fn lateral_perturbation_moves_u_by_focal_eps_over_depth() {
        let cam = CameraPose { position: [0.3, 0.4], heading: 1.1, focal: 96.0, width: 64 };
        let depth = 1.7;
        let base = [
            cam.position[0] + depth * cam.forward()[0],
            cam.position[1] + depth * cam.forward()[1],
        ];
        let eps = 1e-3;
        let shifted = [base[0] + eps * cam.lateral()[0], base[1] + eps * cam.lateral()[1]];
        let (u0, _) = project_point(&cam, base).unwrap();
        let (u1, _) = project_point(&cam, shifted).unwrap();
        assert!((u1 - u0 - cam.focal * eps / depth).abs() < 1e-9);
    }

    #[test]
    fn covariance_is_spd() {
        let g = GaussianPrimitive {
            position: [0.0, 0.0],
            scale: [0.3, 0.05],
            rotation: 0.7,
            opacity_logit: 0.0,
            color: [0.5; 3],
        };
        let (xx, xy, yy) = g.covariance();
        let det = xx * yy - xy * xy;
        let trace = xx + yy;
        assert!(det > 0.0);
        assert!(trace > 0.0);
    }
}
