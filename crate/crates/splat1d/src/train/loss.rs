//! Reconstruction loss: L1 mixed with windowed SSIM, with the exact
//! per-pixel gradient.
//!
//! loss = lambda_s (1 - mean SSIM)/2 + (1 - lambda_s) mean |X - Y|
//!
//! SSIM uses a length-11 Gaussian window (sigma 1.5, replicate padding,
//! C1 = 0.01^2, C2 = 0.03^2), computed per channel and averaged. The
//! backward scatters each window's partials
//!
//!   dS/dmu_x, dS/dsigma_x2, dS/dsigma_xy
//!
//! back onto the pixels it covers, so the returned gradient is the true
//! derivative of the scalar loss, SSIM coupling included.

use thiserror::Error;

use crate::scene::Rgb;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("image width {0} is smaller than the SSIM window {SSIM_WINDOW}")]
    WidthTooSmall(usize),
    #[error("image widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Per-pixel loss with the same mix as the scalar.
    pub per_pixel_loss: Vec<f64>,
    /// d loss / d rendered, per pixel and channel.
    pub per_pixel_grad: Vec<Rgb>,
    /// Channel-averaged SSIM map.
    pub ssim_map: Vec<f64>,
}

fn window_weights() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = (-((k as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wk;
    }
    for wk in w.iter_mut() {
        *wk /= sum;
    }
    w
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean channel-averaged SSIM between two images (evaluation metric).
pub fn ssim(a: &[Rgb], b: &[Rgb]) -> Result<f64, LossError> {
    let out = gs_loss(a, b, 1.0)?;
    Ok(out.ssim_map.iter().sum::<f64>() / out.ssim_map.len() as f64)
}

/// Scalar loss, per-pixel loss map, and exact per-pixel gradient.
pub fn gs_loss(rendered: &[Rgb], reference: &[Rgb], lambda_s: f64) -> Result<LossOutput, LossError> {
    let n = rendered.len();
    if n != reference.len() {
        return Err(LossError::WidthMismatch(n, reference.len()));
    }
    if n < SSIM_WINDOW {
        return Err(LossError::WidthTooSmall(n));
    }
    let w = window_weights();
    let half = SSIM_WINDOW / 2;
    let nf = n as f64;

    let mut ssim_map = vec![0.0; n];
    let mut grad = vec![[0.0; 3]; n];
    let mut l1_map = vec![0.0; n];
    let mut l1_sum = 0.0;

    for (px, g) in grad.iter_mut().enumerate() {
        let mut l1_px = 0.0;
        for c in 0..3 {
            let d = rendered[px][c] - reference[px][c];
            l1_px += d.abs() / 3.0;
            g[c] = (1.0 - lambda_s) * sign(d) / (3.0 * nf);
        }
        l1_map[px] = l1_px;
        l1_sum += l1_px / nf;
    }

    // SSIM per window center i and channel c, with gradient scatter.
    // dLoss/dSSIM_c(i) = -lambda_s / (2 * 3 * N).
    let d_loss_d_ssim = -lambda_s / (2.0 * 3.0 * nf);
    for i in 0..n {
        let idx = |k: usize| (i + k).saturating_sub(half).min(n - 1);
        for c in 0..3 {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            let mut xy = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let j = idx(k);
                let x = rendered[j][c];
                let y = reference[j][c];
                mu_x += wk * x;
                mu_y += wk * y;
                xx += wk * x * x;
                yy += wk * y * y;
                xy += wk * x * y;
            }
            let sigma_x2 = xx - mu_x * mu_x;
            let sigma_y2 = yy - mu_y * mu_y;
            let sigma_xy = xy - mu_x * mu_y;

            let a1 = 2.0 * mu_x * mu_y + SSIM_C1;
            let a2 = 2.0 * sigma_xy + SSIM_C2;
            let b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1;
            let b2 = sigma_x2 + sigma_y2 + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_map[i] += s / 3.0;

            if lambda_s == 0.0 {
                continue;
            }
            let ds_dmu_x = 2.0 * mu_y * a2 / (b1 * b2) - 2.0 * mu_x * s / b1;
            let ds_dsigma_x2 = -s / b2;
            let ds_dsigma_xy = 2.0 * a1 / (b1 * b2);
            for (k, &wk) in w.iter().enumerate() {
                let j = idx(k);
                let x = rendered[j][c];
                let y = reference[j][c];
                // d mu_x/dX_j = wk; d sigma_x2/dX_j = 2 wk (x - mu_x);
                // d sigma_xy/dX_j = wk (y - mu_y).
                let ds_dx = wk
                    * (ds_dmu_x + ds_dsigma_x2 * 2.0 * (x - mu_x) + ds_dsigma_xy * (y - mu_y));
                grad[j][c] += d_loss_d_ssim * ds_dx;
            }
        }
    }

    let ssim_mean = ssim_map.iter().sum::<f64>() / nf;
    let loss = lambda_s * (1.0 - ssim_mean) / 2.0 + (1.0 - lambda_s) * l1_sum;
    let per_pixel_loss = ssim_map
        .iter()
        .zip(&l1_map)
        .map(|(&s, &l)| lambda_s * (1.0 - s) / 2.0 + (1.0 - lambda_s) * l)
        .collect();
    Ok(LossOutput { loss, per_pixel_loss, per_pixel_grad: grad, ssim_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::substream;
    use rand::Rng;

    fn random_image(seed: u64, n: usize) -> Vec<Rgb> {
        let mut rng = substream(seed, "loss-img");
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn identical_images_give_zero_loss_and_unit_ssim() {
        let img = random_image(0, 32);
        let out = gs_loss(&img, &img, 0.2).unwrap();
        assert!(out.loss.abs() < 1e-12);
        for (&s, &l) in out.ssim_map.iter().zip(&out.per_pixel_loss) {
            assert!((s - 1.0).abs() < 1e-9);
            assert!(l.abs() < 1e-9);
        }
        for g in &out.per_pixel_grad {
            for c in 0..3 {
                assert!(g[c].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_zero_reduces_to_mean_absolute_error() {
        let a = random_image(1, 24);
        let b = random_image(2, 24);
        let out = gs_loss(&a, &b, 0.0).unwrap();
        let mut mae = 0.0;
        for (pa, pb) in a.iter().zip(&b) {
            for c in 0..3 {
                mae += (pa[c] - pb[c]).abs();
            }
        }
        mae /= (24 * 3) as f64;
        assert!((out.loss - mae).abs() < 1e-12);
    }

    #[test]
    fn narrow_images_are_rejected() {
        let img = random_image(3, 8);
        assert!(matches!(gs_loss(&img, &img, 0.2), Err(LossError::WidthTooSmall(8))));
    }

    /// Independent sliding-window oracle: per window, recompute the
    /// statistics with direct (unweighted-accumulator) loops.
    fn oracle_ssim_map(a: &[Rgb], b: &[Rgb]) -> Vec<f64> {
        let n = a.len();
        let half = SSIM_WINDOW / 2;
        let sigma = SSIM_SIGMA;
        let mut raw = vec![0.0; SSIM_WINDOW];
        for (k, r) in raw.iter_mut().enumerate() {
            *r = (-((k as f64 - half as f64).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
        let wsum: f64 = raw.iter().sum();
        let mut map = vec![0.0; n];
        for i in 0..n {
            for c in 0..3 {
                let mut mx = 0.0;
                let mut my = 0.0;
                for k in 0..SSIM_WINDOW {
                    let j = (i + k).saturating_sub(half).min(n - 1);
                    mx += raw[k] / wsum * a[j][c];
                    my += raw[k] / wsum * b[j][c];
                }
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cov = 0.0;
                for k in 0..SSIM_WINDOW {
                    let j = (i + k).saturating_sub(half).min(n - 1);
                    vx += raw[k] / wsum * (a[j][c] - mx) * (a[j][c] - mx);
                    vy += raw[k] / wsum * (b[j][c] - my) * (b[j][c] - my);
                    cov += raw[k] / wsum * (a[j][c] - mx) * (b[j][c] - my);
                }
                map[i] += (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
                    / 3.0;
            }
        }
        map
    }

    #[test]
    fn ssim_matches_the_windowed_oracle() {
        let a = random_image(4, 40);
        let b = random_image(5, 40);
        let out = gs_loss(&a, &b, 0.2).unwrap();
        let oracle = oracle_ssim_map(&a, &b);
        for (got, want) in out.ssim_map.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rendered = random_image(6, 24);
        let reference = random_image(7, 24);
        for lambda_s in [0.0, 0.2, 1.0] {
            let out = gs_loss(&rendered, &reference, lambda_s).unwrap();
            let h = 1e-6;
            for px in 0..24 {
                for c in 0..3 {
                    let orig = rendered[px][c];
                    rendered[px][c] = orig + h;
                    let plus = gs_loss(&rendered, &reference, lambda_s).unwrap().loss;
                    rendered[px][c] = orig - h;
                    let minus = gs_loss(&rendered, &reference, lambda_s).unwrap().loss;
                    rendered[px][c] = orig;
                    let fd = (plus - minus) / (2.0 * h);
                    let a = out.per_pixel_grad[px][c];
                    let denom = a.abs().max(fd.abs()).max(1e-4);
                    assert!((a - fd).abs() / denom < 1e-4, "px {px} c {c}: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn per_pixel_loss_averages_to_the_scalar() {
        let a = random_image(8, 32);
        let b = random_image(9, 32);
        let out = gs_loss(&a, &b, 0.37).unwrap();
        let mean = out.per_pixel_loss.iter().sum::<f64>() / 32.0;
        assert!((mean - out.loss).abs() < 1e-12);
        assert!(out.per_pixel_loss.iter().all(|&l| l >= 0.0));
    }
}
