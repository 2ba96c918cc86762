//! Forward rendering by depth-ordered alpha blending.
//!
//! Each primitive projects to a 1D Gaussian footprint
//! `g(x) = exp(-(x - mean_u)^2 / (2 var_u))`. Per pixel, splats blend
//! front to back:
//!
//!   w_k = alpha_k g_k(x) prod_{j<k} (1 - alpha_j g_j(x))
//!   C(x) = sum_k w_k c_k + T_final * background
//!   O(x) = sum_k w_k o_k                      (no background term)
//!
//! Splats are sorted by depth with ties broken by primitive index, and a
//! pixel stops blending once its transmittance drops below
//! [`EARLY_STOP_TRANSMITTANCE`]. The forward pass records every per-splat
//! weight contribution so [`backward`] can replay the exact computation.

mod backward;

pub use backward::{backward, Gradients};

use rayon::prelude::*;

use crate::scene::{project_point, CameraPose, GaussianPrimitive, Rgb, Vec2};

/// Anti-aliasing floor added to every projected variance (pixels^2).
pub const VAR_FLOOR: f64 = 0.25;
/// Blending for a pixel stops once transmittance falls below this.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;
/// Screen-space culling margin in projected standard deviations.
pub const CULL_SIGMAS: f64 = 4.0;

/// A primitive projected into a view.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat1D {
    pub mean_u: f64,
    pub var_u: f64,
    pub depth: f64,
    pub opacity: f64,
    pub color: Rgb,
    /// Index of the source primitive in the scene list.
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Splat(Splat1D),
    Culled,
}

/// Camera-frame geometry shared by projection and its derivatives.
struct ProjectionFrame {
    depth: f64,
    /// d mean_u / d position.
    jac: Vec2,
}

fn projection_frame(g: &GaussianPrimitive, cam: &CameraPose) -> Option<ProjectionFrame> {
    let rel = crate::scene::sub(g.position, cam.position);
    let forward = cam.forward();
    let lateral = cam.lateral();
    let depth = crate::scene::dot(rel, forward);
    if depth <= crate::scene::NEAR_PLANE {
        return None;
    }
    let lat = crate::scene::dot(rel, lateral);
    let s = cam.focal / depth;
    let t = cam.focal * lat / (depth * depth);
    let jac = [s * lateral[0] - t * forward[0], s * lateral[1] - t * forward[1]];
    Some(ProjectionFrame { depth, jac })
}

fn projected_variance(g: &GaussianPrimitive, jac: Vec2) -> f64 {
    let (xx, xy, yy) = g.covariance();
    jac[0] * jac[0] * xx + 2.0 * jac[0] * jac[1] * xy + jac[1] * jac[1] * yy + VAR_FLOOR
}

/// Projects one primitive; culls behind-camera and far-off-screen splats.
pub fn project_gaussian(
    g: &GaussianPrimitive,
    cam: &CameraPose,
    source_index: usize,
) -> Projection {
    let Some(frame) = projection_frame(g, cam) else {
        return Projection::Culled;
    };
    let mean_u = match project_point(cam, g.position) {
        Ok((u, _)) => u,
        Err(_) => return Projection::Culled,
    };
    let var_u = projected_variance(g, frame.jac);
    let margin = CULL_SIGMAS * var_u.sqrt();
    if mean_u < -margin || mean_u > cam.width as f64 + margin {
        return Projection::Culled;
    }
    Projection::Splat(Splat1D {
        mean_u,
        var_u,
        depth: frame.depth,
        opacity: g.opacity(),
        color: g.color,
        source_index,
    })
}

/// Projects a whole scene and sorts by depth (ties by primitive index).
pub fn project_scene(scene: &[GaussianPrimitive], cam: &CameraPose) -> Vec<Splat1D> {
    let mut splats: Vec<Splat1D> = scene
        .iter()
        .enumerate()
        .filter_map(|(i, g)| match project_gaussian(g, cam, i) {
            Projection::Splat(s) => Some(s),
            Projection::Culled => None,
        })
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| a.source_index.cmp(&b.source_index))
    });
    splats
}

/// One splat's contribution to one pixel, recorded in blending order.
#[derive(Debug, Clone, Copy)]
pub struct PixelContribution {
    /// Index into the sorted splat list.
    pub splat: usize,
    /// Blending weight w_k.
    pub weight: f64,
    /// Gaussian footprint value g_k(x).
    pub gauss: f64,
    /// alpha_k * g_k(x).
    pub alpha_g: f64,
    /// Transmittance before this splat.
    pub transmittance: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color_image: Vec<Rgb>,
    pub oc_image: Vec<f64>,
    pub weight_sums: Vec<f64>,
    pub final_transmittance: Vec<f64>,
    pub terminated_early: Vec<bool>,
    pub background: Rgb,
    /// Depth-sorted splats the image was rendered from.
    pub splats: Vec<Splat1D>,
    /// Per-pixel weight contributions, retained for the backward pass.
    pub contributions: Vec<Vec<PixelContribution>>,
}

fn render_pixel(
    splats: &[Splat1D],
    oc_values: Option<&[f64]>,
    background: Rgb,
    x: f64,
) -> (Rgb, f64, f64, f64, bool, Vec<PixelContribution>) {
    let mut color = [0.0; 3];
    let mut oc = 0.0;
    let mut weight_sum = 0.0;
    let mut t = 1.0;
    let mut terminated = false;
    let mut contribs = Vec::new();
    for (k, s) in splats.iter().enumerate() {
        if t < EARLY_STOP_TRANSMITTANCE {
            terminated = true;
            break;
        }
        let d = x - s.mean_u;
        let g = (-0.5 * d * d / s.var_u).exp();
        let a = s.opacity * g;
        let w = a * t;
        contribs.push(PixelContribution {
            splat: k,
            weight: w,
            gauss: g,
            alpha_g: a,
            transmittance: t,
        });
        for c in 0..3 {
            color[c] += w * s.color[c];
        }
        if let Some(oc_values) = oc_values {
            oc += w * oc_values[s.source_index];
        }
        weight_sum += w;
        t *= 1.0 - a;
    }
    for c in 0..3 {
        color[c] += t * background[c];
    }
    (color, oc, weight_sum, t, terminated, contribs)
}

/// Core forward pass over sorted splats.
///
/// `oc_values`, when given, is indexed by primitive (`source_index`) and
/// produces the observation-completeness image with the same blending
/// weights as the color image.
pub fn render(
    splats: &[Splat1D],
    width: usize,
    background: Rgb,
    oc_values: Option<&[f64]>,
) -> RenderOutput {
    debug_assert!(splats.windows(2).all(|w| w[0].depth <= w[1].depth));
    let per_pixel: Vec<_> = (0..width)
        .into_par_iter()
        .map(|i| render_pixel(splats, oc_values, background, i as f64 + 0.5))
        .collect();

    let mut out = RenderOutput {
        color_image: Vec::with_capacity(width),
        oc_image: Vec::with_capacity(width),
        weight_sums: Vec::with_capacity(width),
        final_transmittance: Vec::with_capacity(width),
        terminated_early: Vec::with_capacity(width),
        background,
        splats: splats.to_vec(),
        contributions: Vec::with_capacity(width),
    };
    for (color, oc, wsum, t, term, contribs) in per_pixel {
        out.color_image.push(color);
        out.oc_image.push(oc);
        out.weight_sums.push(wsum);
        out.final_transmittance.push(t);
        out.terminated_early.push(term);
        out.contributions.push(contribs);
    }
    out
}

/// Renders a scene's color and (optionally) OC image for one camera.
pub fn render_view(
    scene: &[GaussianPrimitive],
    cam: &CameraPose,
    background: Rgb,
    oc_values: Option<&[f64]>,
) -> RenderOutput {
    let splats = project_scene(scene, cam);
    render(&splats, cam.width, background, oc_values)
}

/// Color-only rendering of pre-projected splats (sorted internally).
pub fn render_color(splats: &[Splat1D], width: usize, background: Rgb) -> RenderOutput {
    let mut sorted = splats.to_vec();
    sorted.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| a.source_index.cmp(&b.source_index))
    });
    render(&sorted, width, background, None)
}

/// OC-only rendering; `oc_values` is indexed by `source_index`.
pub fn render_oc(splats: &[Splat1D], oc_values: &[f64], width: usize) -> Vec<f64> {
    let mut sorted = splats.to_vec();
    sorted.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| a.source_index.cmp(&b.source_index))
    });
    render(&sorted, width, [0.0; 3], Some(oc_values)).oc_image
}
