//! Evaluation metrics: PSNR and mask agreement.

use crate::scene::Rgb;

/// PSNR cap reported for (near-)zero MSE.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &[Rgb], b: &[Rgb]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            acc += d * d;
        }
    }
    acc / (a.len() as f64 * 3.0)
}

/// `10 log10(1 / MSE)` on [0,1] images, capped at 99 dB.
pub fn psnr(a: &[Rgb], b: &[Rgb]) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

/// Confusion counts of a predicted boolean mask against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaskCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MaskCounts {
    pub fn accumulate(&mut self, predicted: &[bool], truth: &[bool]) {
        assert_eq!(predicted.len(), truth.len());
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    /// Intersection over union; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            return 1.0;
        }
        self.tp as f64 / union as f64
    }

    /// F1 score; 1 when both masks are empty.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / denom as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_identical_images_is_capped() {
        let img = vec![[0.5; 3]; 16];
        assert_eq!(psnr(&img, &img), 99.0);
    }

    #[test]
    fn psnr_of_known_mse_is_exact() {
        // Per-channel difference 0.1 everywhere: MSE = 0.01, PSNR = 20.
        let a = vec![[0.5; 3]; 8];
        let b = vec![[0.6; 3]; 8];
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_mask_scores_one() {
        let truth = vec![true, false, true, true, false];
        let mut counts = MaskCounts::default();
        counts.accumulate(&truth, &truth);
        assert_eq!(counts.iou(), 1.0);
        assert_eq!(counts.f1(), 1.0);
    }

    #[test]
    fn empty_masks_score_one_and_disjoint_score_zero() {
        let mut counts = MaskCounts::default();
        counts.accumulate(&[false; 4], &[false; 4]);
        assert_eq!(counts.iou(), 1.0);
        assert_eq!(counts.f1(), 1.0);

        let mut counts = MaskCounts::default();
        counts.accumulate(&[true, true, false], &[false, false, true]);
        assert_eq!(counts.iou(), 0.0);
        assert_eq!(counts.f1(), 0.0);
    }
}
