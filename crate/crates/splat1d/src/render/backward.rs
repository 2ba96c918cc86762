//! Analytic backward pass of the renderer.
//!
//! Per pixel, with a_k = alpha_k g_k(x) and T_k the transmittance before
//! splat k, the forward computes
//!
//!   C = sum_k T_k a_k c_k + T_N * bg,   T_{k+1} = T_k (1 - a_k).
//!
//! A reverse scan carries g_T = dL/dT_{k+1}:
//!
//!   dL/dc_k = w_k * dL/dC
//!   dL/da_k = T_k (dL/dC . c_k) - g_T T_k
//!   g_T    <- a_k (dL/dC . c_k) + g_T (1 - a_k)
//!
//! seeded with g_T = dL/dC . bg for the background term. From dL/da_k the
//! chain continues into the footprint (mean_u, var_u) and opacity, and
//! from there through the projection Jacobian and the world covariance
//! into position, scale, and rotation. Per-pixel partials are summed in
//! pixel order so results do not depend on the worker thread count.

use rayon::prelude::*;

use crate::scene::{CameraPose, GaussianPrimitive, Rgb, Vec2};

use super::RenderOutput;

/// Per-primitive parameter gradients (indexed like the scene list).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub position: Vec<Vec2>,
    pub scale: Vec<Vec2>,
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Rgb>,
    /// L2 norm of the position gradient; drives effective-observation
    /// tracking and densification.
    pub gradp: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![[0.0; 2]; n],
            scale: vec![[0.0; 2]; n],
            rotation: vec![0.0; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            gradp: vec![0.0; n],
        }
    }
}

/// Per-splat accumulators in footprint space.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    d_mean: f64,
    d_var: f64,
    d_alpha: f64,
    d_color: Rgb,
}

/// Gradients of the rendered image chained with `d_color_image`
/// (= dL/dC per pixel and channel).
///
/// The forward output must come from the same scene and camera; the
/// backward replays exactly the splats each pixel blended, including
/// early termination.
pub fn backward(
    scene: &[GaussianPrimitive],
    cam: &CameraPose,
    out: &RenderOutput,
    d_color_image: &[Rgb],
) -> Gradients {
    assert_eq!(d_color_image.len(), out.color_image.len());
    let n_splats = out.splats.len();

    // Pixel-parallel partials, then a sequential in-order reduction.
    let per_pixel: Vec<Vec<(usize, SplatGrad)>> = (0..out.contributions.len())
        .into_par_iter()
        .map(|px| {
            let x = px as f64 + 0.5;
            let d_out = d_color_image[px];
            let contribs = &out.contributions[px];
            let mut partials = Vec::with_capacity(contribs.len());
            let mut g_t =
                d_out[0] * out.background[0] + d_out[1] * out.background[1] + d_out[2] * out.background[2];
            for c in contribs.iter().rev() {
                let s = &out.splats[c.splat];
                let dout_dot_c =
                    d_out[0] * s.color[0] + d_out[1] * s.color[1] + d_out[2] * s.color[2];
                let d_a = c.transmittance * dout_dot_c - g_t * c.transmittance;
                g_t = c.alpha_g * dout_dot_c + g_t * (1.0 - c.alpha_g);

                let d_g = d_a * s.opacity;
                let delta = x - s.mean_u;
                let mut grad = SplatGrad {
                    d_alpha: d_a * c.gauss,
                    d_mean: d_g * c.gauss * delta / s.var_u,
                    d_var: d_g * c.gauss * delta * delta / (2.0 * s.var_u * s.var_u),
                    ..Default::default()
                };
                for ch in 0..3 {
                    grad.d_color[ch] = c.weight * d_out[ch];
                }
                partials.push((c.splat, grad));
            }
            partials
        })
        .collect();

    let mut acc = vec![SplatGrad::default(); n_splats];
    for partials in &per_pixel {
        for &(k, g) in partials {
            acc[k].d_mean += g.d_mean;
            acc[k].d_var += g.d_var;
            acc[k].d_alpha += g.d_alpha;
            for ch in 0..3 {
                acc[k].d_color[ch] += g.d_color[ch];
            }
        }
    }

    let mut grads = Gradients::zeros(scene.len());
    let forward = cam.forward();
    let lateral = cam.lateral();
    for (k, s) in out.splats.iter().enumerate() {
        let i = s.source_index;
        let g = &scene[i];
        let a = &acc[k];

        // Projection geometry (depth > near-plane is guaranteed: the
        // splat survived culling).
        let rel = crate::scene::sub(g.position, cam.position);
        let d = crate::scene::dot(rel, forward);
        let l = crate::scene::dot(rel, lateral);
        let f = cam.focal;
        let jac = [
            f / d * lateral[0] - f * l / (d * d) * forward[0],
            f / d * lateral[1] - f * l / (d * d) * forward[1],
        ];
        // dJ/dd and dJ/dl; dJ/dp = dJ/dd f^T + dJ/dl lat^T.
        let jd = [
            -f / (d * d) * lateral[0] + 2.0 * f * l / (d * d * d) * forward[0],
            -f / (d * d) * lateral[1] + 2.0 * f * l / (d * d * d) * forward[1],
        ];
        let jl = [-f / (d * d) * forward[0], -f / (d * d) * forward[1]];

        let (xx, xy, yy) = g.covariance();
        // u2 = Sigma J; dvar/dp_j = 2 u2 . (jd f_j + jl lat_j).
        let u2 = [xx * jac[0] + xy * jac[1], xy * jac[0] + yy * jac[1]];
        let u2_jd = u2[0] * jd[0] + u2[1] * jd[1];
        let u2_jl = u2[0] * jl[0] + u2[1] * jl[1];
        let dvar_dp = [
            2.0 * (u2_jd * forward[0] + u2_jl * lateral[0]),
            2.0 * (u2_jd * forward[1] + u2_jl * lateral[1]),
        ];

        let dpos = [
            a.d_mean * jac[0] + a.d_var * dvar_dp[0],
            a.d_mean * jac[1] + a.d_var * dvar_dp[1],
        ];

        // var = A Sxx + B Sxy + C Syy with the covariance entries built
        // from (scale, rotation).
        let qa = jac[0] * jac[0];
        let qb = 2.0 * jac[0] * jac[1];
        let qc = jac[1] * jac[1];
        let (sn, cs) = g.rotation.sin_cos();
        let s1 = g.scale[0];
        let s2 = g.scale[1];
        let dscale = [
            a.d_var * 2.0 * s1 * (qa * cs * cs + qb * cs * sn + qc * sn * sn),
            a.d_var * 2.0 * s2 * (qa * sn * sn - qb * cs * sn + qc * cs * cs),
        ];
        let drot = a.d_var
            * (s1 * s1 - s2 * s2)
            * (-2.0 * cs * sn * qa + (cs * cs - sn * sn) * qb + 2.0 * cs * sn * qc);

        let alpha = s.opacity;
        grads.position[i] = dpos;
        grads.scale[i] = dscale;
        grads.rotation[i] = drot;
        grads.opacity_logit[i] = a.d_alpha * alpha * (1.0 - alpha);
        grads.color[i] = a.d_color;
        grads.gradp[i] = crate::scene::norm(dpos);
    }
    grads
}
