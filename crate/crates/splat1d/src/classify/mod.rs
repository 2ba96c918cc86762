//! The two learned heads of the noise classifier.
//!
//! The uncertainty head predicts per-pixel beta from positional encoding,
//! a per-image embedding, and photometric features; the mask head
//! predicts the clean-region probability M_c from positional encoding,
//! beta, and the photometric features. Both train on their own losses
//! only:
//!
//!   L_uncer = mean[ L / (2 beta^2) + log beta ]   (L detached)
//!   L_sup   = mean over M_u pixels of |M_c - M_self|
//!
//! Neither loss ever reaches the Gaussian primitives: the loss map enters
//! detached and the heads share no parameters with the scene.

pub mod mlp;

pub use mlp::{Adam, Embedding, Mlp, MlpCache, MlpGrads};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scene::Rgb;

/// Number of sinusoidal frequencies in the positional encoding.
pub const POS_FREQUENCIES: usize = 8;
pub const F_POS_DIM: usize = 2 * POS_FREQUENCIES;
/// Per-image embedding width.
pub const ID_EMBED_DIM: usize = 8;
/// Photometric feature width: color + windowed mean + windowed std.
pub const F_C_DIM: usize = 9;
/// Window for the local photometric statistics.
pub const PHOTO_WINDOW: usize = 9;
pub const HIDDEN_DIM: usize = 64;
/// Lower bound on predicted uncertainty.
pub const BETA_FLOOR: f64 = 0.05;

pub const PSI_IN_DIM: usize = F_POS_DIM + ID_EMBED_DIM + F_C_DIM;
pub const ETA_IN_DIM: usize = F_POS_DIM + 1 + F_C_DIM;

/// Per-pixel input features, assembled from the cached static parts and
/// the embedding lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub f_pos: [f64; F_POS_DIM],
    pub f_id: [f64; ID_EMBED_DIM],
    pub f_c: [f64; F_C_DIM],
}

/// The static (non-learned) feature maps of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub f_pos: Vec<[f64; F_POS_DIM]>,
    pub f_c: Vec<[f64; F_C_DIM]>,
}

fn positional_encoding(x: f64) -> [f64; F_POS_DIM] {
    let mut out = [0.0; F_POS_DIM];
    for k in 0..POS_FREQUENCIES {
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        let (s, c) = (freq * x).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
    out
}

/// Photometric feature at one pixel: reference color plus windowed local
/// mean and (population) standard deviation, replicate-padded.
fn photometric_feature(image: &[Rgb], pixel: usize) -> [f64; F_C_DIM] {
    let n = image.len() as i64;
    let half = (PHOTO_WINDOW / 2) as i64;
    let w = PHOTO_WINDOW as f64;
    let mut mean = [0.0; 3];
    for o in -half..=half {
        let idx = (pixel as i64 + o).clamp(0, n - 1) as usize;
        for c in 0..3 {
            mean[c] += image[idx][c] / w;
        }
    }
    let mut var = [0.0; 3];
    for o in -half..=half {
        let idx = (pixel as i64 + o).clamp(0, n - 1) as usize;
        for c in 0..3 {
            let d = image[idx][c] - mean[c];
            var[c] += d * d / w;
        }
    }
    let mut out = [0.0; F_C_DIM];
    for c in 0..3 {
        out[c] = image[pixel][c];
        out[3 + c] = mean[c];
        out[6 + c] = var[c].sqrt();
    }
    out
}

/// Precomputes the static feature maps of a reference image.
pub fn extract_static_features(image: &[Rgb]) -> ViewFeatures {
    let width = image.len();
    let denom = (width - 1).max(1) as f64;
    ViewFeatures {
        f_pos: (0..width).map(|i| positional_encoding(i as f64 / denom)).collect(),
        f_c: (0..width).map(|i| photometric_feature(image, i)).collect(),
    }
}

/// Full feature vector of one pixel (embedding row included).
pub fn extract_features(
    image: &[Rgb],
    pixel: usize,
    image_id: usize,
    embedding: &Embedding,
) -> FeatureVector {
    let width = image.len();
    let denom = (width - 1).max(1) as f64;
    let mut f_id = [0.0; ID_EMBED_DIM];
    f_id.copy_from_slice(embedding.row(image_id));
    FeatureVector {
        f_pos: positional_encoding(pixel as f64 / denom),
        f_id,
        f_c: photometric_feature(image, pixel),
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    crate::scene::sigmoid(x)
}

/// Both heads plus the embedding table and their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseClassifier {
    pub psi: Mlp,
    pub eta: Mlp,
    pub embedding: Embedding,
}

impl NoiseClassifier {
    pub fn new<R: Rng>(n_images: usize, rng: &mut R) -> Self {
        Self {
            psi: Mlp::new(&[PSI_IN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], rng),
            eta: Mlp::new(&[ETA_IN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], rng),
            embedding: Embedding::new(n_images, ID_EMBED_DIM, rng),
        }
    }
}

fn psi_input(feats: &ViewFeatures, id_row: &[f64], pixel: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(&feats.f_pos[pixel]);
    buf.extend_from_slice(id_row);
    buf.extend_from_slice(&feats.f_c[pixel]);
}

fn eta_input(feats: &ViewFeatures, beta: f64, pixel: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(&feats.f_pos[pixel]);
    buf.push(beta);
    buf.extend_from_slice(&feats.f_c[pixel]);
}

/// Per-pixel uncertainty beta = softplus(raw) + floor.
pub fn predict_beta(psi: &Mlp, feats: &ViewFeatures, id_row: &[f64]) -> Vec<f64> {
    let mut buf = Vec::with_capacity(PSI_IN_DIM);
    (0..feats.f_pos.len())
        .map(|px| {
            psi_input(feats, id_row, px, &mut buf);
            softplus(psi.forward(&buf)) + BETA_FLOOR
        })
        .collect()
}

/// Per-pixel clean-region probability in (0,1); beta enters as a plain
/// input value, carrying no gradient back to the uncertainty head.
pub fn predict_mask(eta: &Mlp, feats: &ViewFeatures, beta: &[f64]) -> Vec<f64> {
    let mut buf = Vec::with_capacity(ETA_IN_DIM);
    (0..feats.f_pos.len())
        .map(|px| {
            eta_input(feats, beta[px], px, &mut buf);
            sigmoid(eta.forward(&buf))
        })
        .collect()
}

/// Scalar uncertainty loss of a (detached) per-pixel loss map.
pub fn uncertainty_loss(loss_map: &[f64], beta: &[f64]) -> f64 {
    let n = loss_map.len() as f64;
    loss_map
        .iter()
        .zip(beta)
        .map(|(&l, &b)| l / (2.0 * b * b) + b.ln())
        .sum::<f64>()
        / n
}

/// One training pass of the uncertainty head on a view: forward, loss,
/// and gradients for psi and the view's embedding row.
///
/// Returns (loss, beta map, psi grads, embedding-row grad).
pub fn uncertainty_step(
    psi: &Mlp,
    feats: &ViewFeatures,
    id_row: &[f64],
    loss_map: &[f64],
) -> (f64, Vec<f64>, MlpGrads, Vec<f64>) {
    let width = feats.f_pos.len();
    assert_eq!(loss_map.len(), width);
    let n = width as f64;
    let mut grads = MlpGrads::zeros(psi);
    let mut id_grad = vec![0.0; id_row.len()];
    let mut betas = Vec::with_capacity(width);
    let mut loss = 0.0;
    let mut buf = Vec::with_capacity(PSI_IN_DIM);
    let mut cache = MlpCache::default();
    for px in 0..width {
        psi_input(feats, id_row, px, &mut buf);
        let raw = psi.forward_cached(&buf, &mut cache);
        let beta = softplus(raw) + BETA_FLOOR;
        let l = loss_map[px];
        loss += (l / (2.0 * beta * beta) + beta.ln()) / n;
        // d/dbeta [l/(2 b^2) + ln b] = -l/b^3 + 1/b; chain softplus.
        let d_beta = (-l / (beta * beta * beta) + 1.0 / beta) / n;
        let d_raw = d_beta * sigmoid(raw);
        let d_input = psi.backward(&cache, d_raw, &mut grads);
        for (g, d) in id_grad.iter_mut().zip(&d_input[F_POS_DIM..F_POS_DIM + ID_EMBED_DIM]) {
            *g += d;
        }
        betas.push(beta);
    }
    (loss, betas, grads, id_grad)
}

/// Scalar supervision loss: mean |M_c - M_self| over M_u-active pixels
/// (zero when none are active).
pub fn supervision_loss(m_c: &[f64], m_self: &[bool], m_u: &[bool]) -> f64 {
    let active = m_u.iter().filter(|&&u| u).count();
    if active == 0 {
        return 0.0;
    }
    m_c.iter()
        .zip(m_self.iter().zip(m_u))
        .map(|(&p, (&s, &u))| if u { (p - s as u8 as f64).abs() } else { 0.0 })
        .sum::<f64>()
        / active as f64
}

/// One training pass of the mask head on a view's labels.
///
/// Returns (loss, mask map, eta grads).
pub fn supervision_step(
    eta: &Mlp,
    feats: &ViewFeatures,
    beta: &[f64],
    m_self: &[bool],
    m_u: &[bool],
) -> (f64, Vec<f64>, MlpGrads) {
    let width = feats.f_pos.len();
    let active = m_u.iter().filter(|&&u| u).count();
    let mut grads = MlpGrads::zeros(eta);
    let mut masks = Vec::with_capacity(width);
    let mut loss = 0.0;
    let mut buf = Vec::with_capacity(ETA_IN_DIM);
    let mut cache = MlpCache::default();
    for px in 0..width {
        eta_input(feats, beta[px], px, &mut buf);
        let raw = eta.forward_cached(&buf, &mut cache);
        let m_c = sigmoid(raw);
        masks.push(m_c);
        if active == 0 || !m_u[px] {
            continue;
        }
        let target = m_self[px] as u8 as f64;
        loss += (m_c - target).abs() / active as f64;
        let d_mc = (m_c - target).signum() / active as f64;
        let d_raw = d_mc * m_c * (1.0 - m_c);
        eta.backward(&cache, d_raw, &mut grads);
    }
    (loss, masks, grads)
}

#[cfg(test)]
mod tests;
