//! Synthetic dataset generation.
//!
//! Cameras sit on a jittered line inside [0,1]^2 looking along +y at a
//! band of background Gaussians. A chosen fraction of views additionally
//! sees transient distractors: saturated, near-opaque primitives placed
//! close in front of that view's camera and composited into that view's
//! reference image only. Ground truth marks pixels where the
//! distractor-only accumulated blending weight exceeds 0.5.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::render::render_view;
use crate::rngutil::substream;
use crate::scene::{
    CameraPose, ConfigError, GaussianPrimitive, Rgb, SceneConfig, ViewRecord,
};

/// Background color used for references (and expected by trainers).
pub const BACKGROUND: Rgb = [0.0, 0.0, 0.0];

const DISTRACTOR_PALETTE: [Rgb; 4] = [
    [0.95, 0.06, 0.06],
    [0.06, 0.95, 0.06],
    [0.08, 0.08, 0.95],
    [0.95, 0.85, 0.05],
];

/// A generated scene: the shared background primitives and all views.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub true_scene: Vec<GaussianPrimitive>,
    pub views: Vec<ViewRecord>,
}

impl Dataset {
    pub fn to_file(&self) -> super::DatasetFile {
        super::DatasetFile {
            schema_version: super::SCHEMA_VERSION,
            config: self.config.clone(),
            primitives: self.true_scene.clone(),
            views: self.views.clone(),
        }
    }

    pub fn from_file(file: super::DatasetFile) -> Self {
        Self { config: file.config, true_scene: file.primitives, views: file.views }
    }
}

/// Composites `background + extras` into a reference image and derives
/// the ground-truth mask from the extras alone.
pub fn render_reference(
    background: &[GaussianPrimitive],
    extras: &[GaussianPrimitive],
    cam: &CameraPose,
) -> (Vec<Rgb>, Vec<bool>) {
    let mut combined = background.to_vec();
    combined.extend_from_slice(extras);
    let image = render_view(&combined, cam, BACKGROUND, None).color_image;
    let mask = if extras.is_empty() {
        vec![false; cam.width]
    } else {
        render_view(extras, cam, BACKGROUND, None)
            .weight_sums
            .iter()
            .map(|&w| w > 0.5)
            .collect()
    };
    (image, mask)
}

pub fn generate_dataset(config: &SceneConfig) -> Result<Dataset, ConfigError> {
    config.validate()?;
    let mut rng = substream(config.rng_seed, "dataset");
    let e = config.world_extent;
    let width = config.image_width;
    let focal = width as f64;

    // Cameras on a jittered line, inside the normalized unit square.
    let n = config.n_views;
    let cameras: Vec<CameraPose> = (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let x = (0.1 + 0.8 * frac + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
            let y = rng.gen_range(0.05..0.15);
            let heading = std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.05..0.05);
            CameraPose { position: [x, y], heading, focal, width }
        })
        .collect();

    // Background band, wide enough to cover every camera's field of view.
    let true_scene: Vec<GaussianPrimitive> = (0..config.n_background_gaussians)
        .map(|_| GaussianPrimitive {
            position: [
                rng.gen_range(0.1 - 0.85 * e..0.9 + 0.85 * e),
                rng.gen_range(1.1 * e..1.7 * e),
            ],
            scale: [rng.gen_range(0.03..0.09) * e, rng.gen_range(0.02..0.06) * e],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            opacity_logit: rng.gen_range(0.5..2.5),
            color: [
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
            ],
        })
        .collect();

    // Which views carry distractors.
    let n_distractor_views = (config.distractor_view_fraction * n as f64).round() as usize;
    let mut view_indices: Vec<usize> = (0..n).collect();
    view_indices.shuffle(&mut rng);
    let mut distractor_views = vec![false; n];
    for &v in view_indices.iter().take(n_distractor_views) {
        distractor_views[v] = true;
    }

    let views = cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let extras: Vec<GaussianPrimitive> = if distractor_views[i] {
                let fwd = cam.forward();
                let lat = cam.lateral();
                let k = config.distractors_per_view;
                let mut extras = Vec::with_capacity(3 * k);
                for slot in 0..k {
                    let depth = rng.gen_range(0.35..0.6) * e;
                    // One lateral slot per distractor so footprints stay
                    // separated within the view.
                    let slot_width = 0.64 / k as f64;
                    let lo = -0.32 + slot as f64 * slot_width + 0.15 * slot_width;
                    let hi = -0.32 + (slot + 1) as f64 * slot_width - 0.15 * slot_width;
                    let lateral = rng.gen_range(lo..hi) * depth;
                    let s = rng.gen_range(0.02..0.03) * e;
                    let base = DISTRACTOR_PALETTE[rng.gen_range(0..DISTRACTOR_PALETTE.len())];
                    let mut color = base;
                    for c in color.iter_mut() {
                        *c = (*c + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
                    }
                    // Three overlapping lobes give the distractor a
                    // near-flat core with a narrow soft fringe.
                    for offset in [-1.2, 0.0, 1.2] {
                        let l = lateral + offset * s;
                        extras.push(GaussianPrimitive {
                            position: [
                                cam.position[0] + depth * fwd[0] + l * lat[0],
                                cam.position[1] + depth * fwd[1] + l * lat[1],
                            ],
                            scale: [s, s * rng.gen_range(0.8..1.0)],
                            rotation: rng.gen_range(-0.3..0.3),
                            opacity_logit: rng.gen_range(3.2..4.0),
                            color,
                        });
                    }
                }
                extras
            } else {
                Vec::new()
            };
            let (image, mask) = render_reference(&true_scene, &extras, cam);
            ViewRecord { camera: cam.clone(), image, gt_mask: Some(mask), image_id: i }
        })
        .collect();

    Ok(Dataset { config: config.clone(), true_scene, views })
}
