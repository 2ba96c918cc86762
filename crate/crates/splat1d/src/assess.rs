//! Per-view noise assessment maps.
//!
//! The hybrid assessment averages the reconstruction residual with the
//! learned uncertainty (normalized to [0,1] first):
//!
//!   A_h = 0.5 R + 0.5 beta_norm
//!
//! and observation cognitive correction down-weights it where the view is
//! both textured and incompletely observed:
//!
//!   OCR = clamp(1 - 3.0 (0.3 - clamp(O, 0, 0.3)) S, 0, 1)
//!   A_h_oc = A_h * OCR
//!
//! S is a per-view max-normalized central-difference edge response of the
//! reference image.

use thiserror::Error;

use crate::scene::Rgb;

/// Mixing weight between residual and uncertainty.
pub const LAMBDA_2: f64 = 0.5;
/// Correction strength.
pub const LAMBDA_3: f64 = 3.0;
/// Observation-completeness ceiling for the correction.
pub const OC_TH: f64 = 0.3;

/// All per-view assessment maps, cached between round boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentMaps {
    /// Reconstruction residual R (channel-mean absolute error).
    pub residual: Vec<f64>,
    /// Raw uncertainty beta from the uncertainty head (> 0).
    pub beta: Vec<f64>,
    /// Hybrid assessment A_h.
    pub hybrid: Vec<f64>,
    /// Texture intensity S in [0,1].
    pub texture: Vec<f64>,
    /// Observation correction ratio in [0,1].
    pub ocr: Vec<f64>,
    /// Corrected assessment A_h * OCR.
    pub corrected: Vec<f64>,
    /// Rendered per-pixel observation completeness.
    pub oc_pixels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssessError {
    #[error("image widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
}

/// Channel-mean absolute difference per pixel.
pub fn residual_map(rendered: &[Rgb], reference: &[Rgb]) -> Result<Vec<f64>, AssessError> {
    if rendered.len() != reference.len() {
        return Err(AssessError::WidthMismatch(rendered.len(), reference.len()));
    }
    Ok(rendered
        .iter()
        .zip(reference)
        .map(|(a, b)| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0)
        .collect())
}

/// `A_h = 0.5 R + 0.5 beta_norm`; `beta_norm` must already be in [0,1].
pub fn hybrid_map(residual: &[f64], beta_norm: &[f64]) -> Vec<f64> {
    residual
        .iter()
        .zip(beta_norm)
        .map(|(&r, &b)| LAMBDA_2 * r + (1.0 - LAMBDA_2) * b)
        .collect()
}

/// Scales raw beta values into [0,1] by a shared normalizer (the 99.5th
/// percentile over the current round's cached maps).
pub fn normalize_beta(beta: &[f64], normalizer: f64) -> Vec<f64> {
    let scale = normalizer.max(1e-12);
    beta.iter().map(|&b| (b / scale).clamp(0.0, 1.0)).collect()
}

/// Texture intensity: |I(x+1) - I(x-1)| / 2 averaged over channels with
/// replicate padding, normalized by the per-view maximum. Constant images
/// map to all zeros.
pub fn texture_map(reference: &[Rgb]) -> Vec<f64> {
    let n = reference.len();
    debug_assert!(n >= 3);
    let mut raw = vec![0.0; n];
    for i in 0..n {
        let left = reference[i.saturating_sub(1)];
        let right = reference[(i + 1).min(n - 1)];
        raw[i] = ((right[0] - left[0]).abs() + (right[1] - left[1]).abs() + (right[2] - left[2]).abs())
            / (3.0 * 2.0);
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max < 1e-12 {
        return vec![0.0; n];
    }
    raw.iter().map(|&v| v / max).collect()
}

/// Observation cognitive correction: returns (OCR, corrected).
pub fn occ_correct(hybrid: &[f64], oc_pixels: &[f64], texture: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ocr: Vec<f64> = oc_pixels
        .iter()
        .zip(texture)
        .map(|(&o, &s)| {
            let o_clamped = o.clamp(0.0, OC_TH);
            (1.0 - LAMBDA_3 * (OC_TH - o_clamped) * s).clamp(0.0, 1.0)
        })
        .collect();
    let corrected = hybrid.iter().zip(&ocr).map(|(&h, &r)| h * r).collect();
    (ocr, corrected)
}
