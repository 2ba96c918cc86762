//! Dynamic threshold anchors over corrected-assessment histograms.
//!
//! Values are normalized by their 99.5th percentile and histogrammed into
//! L bins. Two anchors come out of the histogram:
//!
//! - T_o = t*/L where t* maximizes
//!   sigma^2(t) = [w(t) (M_global - M(t))]^2 / (w(t)(1 - w(t)) + eps)
//!   with w the cumulative probability mass and M the cumulative mean
//!   (note the squared w(M_global - M) numerator — this is the formula
//!   implemented here, deliberately not the textbook between-class
//!   variance),
//! - T_b = centroid of the mass at or below t*, divided by L.
//!
//! Weighted combinations give the label thresholds
//!   T_b2o = (1 - l4) T_b + l4 T_o,   T_o2b = l5 T_b + (1 - l5) T_o
//! and the self-supervision labels
//!   M_self = v < T_b2o,   M_u = (v < T_b2o) || (v > T_o2b).
//!
//! When sigma^2(t*) <= K the distribution is too unimodal for the anchors
//! to mean anything and a fixed percentile scheme takes over: the lowest
//! 50% of values are background, the top 10% are noise foreground.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator regularizer in sigma^2(t).
pub const SIGMA2_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Histogram resolution L.
    pub bins: usize,
    /// Dynamic-mode gate: dynamic iff sigma^2(t*) > fallback_k.
    pub fallback_k: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    /// Fixed-fallback background percentile (lowest values are clean).
    pub fixed_bg_percentile: f64,
    /// Fixed-fallback foreground percentile (highest values are noise).
    pub fixed_fg_percentile: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            bins: 1000,
            fallback_k: 2000.0,
            lambda4: 0.25,
            lambda5: 0.25,
            fixed_bg_percentile: 50.0,
            fixed_fg_percentile: 90.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Dynamic,
    FixedFallback,
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdMode::Dynamic => write!(f, "dynamic"),
            ThresholdMode::FixedFallback => write!(f, "fixed_fallback"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentHistogram {
    pub bins: Vec<u64>,
    pub total: u64,
    /// Raw value mapped to normalized 1.0 (the 99.5th percentile).
    pub normalization_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAnchors {
    pub t_star: usize,
    pub sigma2_max: f64,
    pub t_o: f64,
    pub t_b: f64,
    /// Clean-label threshold actually applied (T_b2o in dynamic mode,
    /// the background percentile in fallback mode).
    pub t_b2o: f64,
    /// Noise-label threshold actually applied (T_o2b in dynamic mode,
    /// the foreground percentile in fallback mode).
    pub t_o2b: f64,
    pub mode: ThresholdMode,
    pub normalization_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("empty input: no assessment samples")]
    EmptyInput,
    #[error("no histogram mass at or below t* = {0}")]
    EmptyBackgroundClass(usize),
    #[error("invalid lambda pair ({0}, {1}): need both in [0,1] and lambda4 <= 1 - lambda5")]
    InvalidLambda(f64, f64),
}

/// Nearest-rank percentile of an unsorted slice (p in [0, 100]).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * (p / 100.0).clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}

/// Histograms the samples; the 99.5th percentile maps to the top of the
/// normalized range and anything above it clamps to the last bin.
pub fn build_histogram(values: &[f64], n_bins: usize) -> Result<AssessmentHistogram, AnchorError> {
    if values.is_empty() {
        return Err(AnchorError::EmptyInput);
    }
    let scale = percentile(values, 99.5).max(1e-12);
    let mut bins = vec![0u64; n_bins];
    for &v in values {
        let normalized = (v / scale).clamp(0.0, 1.0);
        let bin = (normalized * (n_bins - 1) as f64).round() as usize;
        bins[bin.min(n_bins - 1)] += 1;
    }
    Ok(AssessmentHistogram { bins, total: values.len() as u64, normalization_scale: scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuResult {
    pub t_star: usize,
    pub sigma2_max: f64,
    pub t_o: f64,
}

/// Maximum inter-class variance scan; ties resolve to the lowest index.
pub fn otsu(hist: &AssessmentHistogram) -> OtsuResult {
    assert!(hist.total > 0);
    let l = hist.bins.len();
    let n = hist.total as f64;
    let mut m_global = 0.0;
    for (i, &h) in hist.bins.iter().enumerate() {
        m_global += i as f64 * h as f64 / n;
    }
    let mut t_star = 0;
    let mut sigma2_max = f64::NEG_INFINITY;
    let mut omega = 0.0;
    let mut m = 0.0;
    for t in 0..l {
        omega += hist.bins[t] as f64 / n;
        m += t as f64 * hist.bins[t] as f64 / n;
        let num = omega * (m_global - m);
        let sigma2 = num * num / (omega * (1.0 - omega) + SIGMA2_EPSILON);
        if sigma2 > sigma2_max {
            sigma2_max = sigma2;
            t_star = t;
        }
    }
    OtsuResult { t_star, sigma2_max, t_o: t_star as f64 / l as f64 }
}

/// Centroid of the background class (mass at or below t*), over L.
pub fn background_centroid(hist: &AssessmentHistogram, t_star: usize) -> Result<f64, AnchorError> {
    let n = hist.total as f64;
    let mut mass = 0.0;
    let mut first_moment = 0.0;
    for (i, &h) in hist.bins.iter().enumerate().take(t_star + 1) {
        mass += h as f64 / n;
        first_moment += i as f64 * h as f64 / n;
    }
    if mass <= 0.0 {
        return Err(AnchorError::EmptyBackgroundClass(t_star));
    }
    Ok(first_moment / mass / hist.bins.len() as f64)
}

/// Refined label thresholds as convex combinations of the two anchors.
pub fn combine_anchors(
    t_b: f64,
    t_o: f64,
    lambda4: f64,
    lambda5: f64,
) -> Result<(f64, f64), AnchorError> {
    let valid = (0.0..=1.0).contains(&lambda4)
        && (0.0..=1.0).contains(&lambda5)
        && lambda4 <= 1.0 - lambda5;
    if !valid {
        return Err(AnchorError::InvalidLambda(lambda4, lambda5));
    }
    let t_b2o = (1.0 - lambda4) * t_b + lambda4 * t_o;
    let t_o2b = lambda5 * t_b + (1.0 - lambda5) * t_o;
    Ok((t_b2o, t_o2b))
}

/// Normalized-value threshold at which the cumulative histogram mass
/// reaches `p` percent.
fn histogram_percentile_threshold(hist: &AssessmentHistogram, p: f64) -> f64 {
    let target = hist.total as f64 * p / 100.0;
    let mut cum = 0u64;
    for (i, &h) in hist.bins.iter().enumerate() {
        cum += h;
        if cum as f64 >= target {
            return i as f64 / hist.bins.len() as f64;
        }
    }
    1.0
}

/// Full anchor computation over a sample collection.
pub fn compute_anchors(values: &[f64], cfg: &AnchorConfig) -> Result<ThresholdAnchors, AnchorError> {
    let hist = build_histogram(values, cfg.bins)?;
    anchors_from_histogram(&hist, cfg)
}

pub fn anchors_from_histogram(
    hist: &AssessmentHistogram,
    cfg: &AnchorConfig,
) -> Result<ThresholdAnchors, AnchorError> {
    let o = otsu(hist);
    let dynamic = o.sigma2_max > cfg.fallback_k;
    if dynamic {
        let t_b = background_centroid(hist, o.t_star)?;
        let (t_b2o, t_o2b) = combine_anchors(t_b, o.t_o, cfg.lambda4, cfg.lambda5)?;
        Ok(ThresholdAnchors {
            t_star: o.t_star,
            sigma2_max: o.sigma2_max,
            t_o: o.t_o,
            t_b,
            t_b2o,
            t_o2b,
            mode: ThresholdMode::Dynamic,
            normalization_scale: hist.normalization_scale,
        })
    } else {
        let t_b = background_centroid(hist, o.t_star).unwrap_or(0.0);
        Ok(ThresholdAnchors {
            t_star: o.t_star,
            sigma2_max: o.sigma2_max,
            t_o: o.t_o,
            t_b,
            t_b2o: histogram_percentile_threshold(hist, cfg.fixed_bg_percentile),
            t_o2b: histogram_percentile_threshold(hist, cfg.fixed_fg_percentile),
            mode: ThresholdMode::FixedFallback,
            normalization_scale: hist.normalization_scale,
        })
    }
}

/// Self-supervision labels for one corrected map (raw values; normalized
/// internally by the anchors' scale). Returns (M_self, M_u).
pub fn make_labels(corrected: &[f64], anchors: &ThresholdAnchors) -> (Vec<bool>, Vec<bool>) {
    let scale = anchors.normalization_scale.max(1e-12);
    let mut m_self = Vec::with_capacity(corrected.len());
    let mut m_u = Vec::with_capacity(corrected.len());
    for &v in corrected {
        let vn = v / scale;
        let clean = vn < anchors.t_b2o;
        let noisy = vn > anchors.t_o2b;
        m_self.push(clean);
        m_u.push(clean || noisy);
    }
    (m_self, m_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::substream;
    use rand::Rng;

    /// Straight-line recomputation of the sigma^2 scan: per candidate t,
    /// re-derive w(t) and M(t) by direct summation instead of cumulative
    /// arrays.
    fn otsu_oracle(hist: &AssessmentHistogram) -> (usize, f64) {
        let l = hist.bins.len();
        let n = hist.total as f64;
        let m_global: f64 =
            (0..l).map(|i| i as f64 * hist.bins[i] as f64 / n).sum();
        let mut best = (0usize, f64::NEG_INFINITY);
        for t in 0..l {
            let omega: f64 = (0..=t).map(|i| hist.bins[i] as f64 / n).sum();
            let m: f64 = (0..=t).map(|i| i as f64 * hist.bins[i] as f64 / n).sum();
            let num = omega * (m_global - m);
            let sigma2 = num * num / (omega * (1.0 - omega) + SIGMA2_EPSILON);
            if sigma2 > best.1 {
                best = (t, sigma2);
            }
        }
        best
    }

    fn random_histogram(seed: u64) -> AssessmentHistogram {
        let mut rng = substream(seed, "hist");
        let l = 1000;
        let mut bins = vec![0u64; l];
        // A few modes plus a noise floor.
        for _ in 0..rng.gen_range(1..4) {
            let center = rng.gen_range(0..l);
            let width = rng.gen_range(1..80usize);
            let mass = rng.gen_range(100..20000u64);
            for _ in 0..mass {
                let offset = rng.gen_range(0..=2 * width) as i64 - width as i64;
                let b = (center as i64 + offset).clamp(0, l as i64 - 1) as usize;
                bins[b] += 1;
            }
        }
        for _ in 0..rng.gen_range(0..500) {
            bins[rng.gen_range(0..l)] += 1;
        }
        let total = bins.iter().sum();
        AssessmentHistogram { bins, total, normalization_scale: 1.0 }
    }

    #[test]
    fn otsu_matches_bruteforce_scan_on_random_histograms() {
        for seed in 0..50 {
            let hist = random_histogram(seed);
            let got = otsu(&hist);
            let (t, s) = otsu_oracle(&hist);
            assert_eq!(got.t_star, t, "seed {seed}");
            assert!((got.sigma2_max - s).abs() <= 1e-9 * s.abs().max(1.0), "seed {seed}");
        }
    }

    #[test]
    fn two_equal_spikes_split_between_the_modes() {
        let mut bins = vec![0u64; 1000];
        bins[100] = 5000;
        bins[900] = 5000;
        let hist = AssessmentHistogram { bins, total: 10000, normalization_scale: 1.0 };
        let got = otsu(&hist);
        assert!((100..900).contains(&got.t_star));
        let (t, _) = otsu_oracle(&hist);
        assert_eq!(got.t_star, t);
    }

    #[test]
    fn single_spike_has_flat_near_zero_sigma2() {
        let mut bins = vec![0u64; 1000];
        bins[400] = 7777;
        let hist = AssessmentHistogram { bins, total: 7777, normalization_scale: 1.0 };
        let got = otsu(&hist);
        assert_eq!(got.t_star, 0);
        assert!(got.sigma2_max.abs() < 1e-6);
    }

    #[test]
    fn histogram_conserves_counts_and_concentrates_constants() {
        let values = vec![0.42; 5000];
        let hist = build_histogram(&values, 1000).unwrap();
        assert_eq!(hist.total, 5000);
        assert_eq!(hist.bins.iter().sum::<u64>(), 5000);
        assert_eq!(hist.bins.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(build_histogram(&[], 1000), Err(AnchorError::EmptyInput));
    }

    #[test]
    fn uniform_values_fill_bins_uniformly() {
        let mut rng = substream(3, "uniform");
        let n = 1_000_000usize;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let hist = build_histogram(&values, 1000).unwrap();
        // Interior bins cover scale/999 of the value range each; the two
        // edge bins are half width under rounding-based binning and the
        // top bins also absorb the clamped tail.
        let expected = n as f64 * hist.normalization_scale / 999.0;
        let tol = 3.0 * (n as f64 / 1000.0).sqrt();
        let mut outliers = 0;
        for &c in &hist.bins[1..995] {
            if (c as f64 - expected).abs() > tol {
                outliers += 1;
            }
        }
        // 3-sigma is a per-bin bound; across 994 bins a few statistical
        // excursions are expected even for perfectly uniform input.
        assert!(outliers <= 5, "{outliers} bins deviate beyond 3 sigma");
        assert!((hist.bins[0] as f64 - expected / 2.0).abs() <= tol);
    }

    #[test]
    fn centroid_of_point_mass_is_its_bin() {
        let mut bins = vec![0u64; 1000];
        bins[123] = 10;
        let hist = AssessmentHistogram { bins, total: 10, normalization_scale: 1.0 };
        let t_b = background_centroid(&hist, 500).unwrap();
        assert!((t_b - 0.123).abs() < 1e-12);
    }

    #[test]
    fn centroid_of_uniform_range_is_its_midpoint() {
        let t_star = 600usize;
        let mut bins = vec![0u64; 1000];
        for b in bins.iter_mut().take(t_star + 1) {
            *b = 5;
        }
        let total = bins.iter().sum();
        let hist = AssessmentHistogram { bins, total, normalization_scale: 1.0 };
        let t_b = background_centroid(&hist, t_star).unwrap();
        assert!((t_b - (t_star as f64 / 2.0) / 1000.0).abs() <= 0.5 / 1000.0);
    }

    #[test]
    fn centroid_errors_without_background_mass() {
        let mut bins = vec![0u64; 1000];
        bins[900] = 10;
        let hist = AssessmentHistogram { bins, total: 10, normalization_scale: 1.0 };
        assert_eq!(background_centroid(&hist, 100), Err(AnchorError::EmptyBackgroundClass(100)));
    }

    #[test]
    fn centroid_never_exceeds_t_o() {
        for seed in 0..1000 {
            let hist = random_histogram(seed);
            let o = otsu(&hist);
            if let Ok(t_b) = background_centroid(&hist, o.t_star) {
                assert!(t_b <= o.t_o + 1e-12, "seed {seed}: t_b={t_b} t_o={}", o.t_o);
            }
        }
    }

    #[test]
    fn anchor_combination_endpoints_and_arithmetic() {
        let (b2o, o2b) = combine_anchors(0.1, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(b2o, 0.1);
        assert_eq!(o2b, 0.5);
        let (b2o, o2b) = combine_anchors(0.1, 0.5, 0.25, 0.25).unwrap();
        assert!((b2o - 0.2).abs() < 1e-15);
        assert!((o2b - 0.4).abs() < 1e-15);
    }

    #[test]
    fn anchor_ordering_holds_for_valid_lambdas() {
        let mut rng = substream(8, "lambda");
        for _ in 0..1000 {
            let t_b = rng.gen_range(0.0..0.5);
            let t_o = rng.gen_range(t_b..1.0);
            let l4 = rng.gen_range(0.0..1.0);
            let l5 = rng.gen_range(0.0..(1.0 - l4));
            let (b2o, o2b) = combine_anchors(t_b, t_o, l4, l5).unwrap();
            assert!(t_b <= b2o + 1e-12 && b2o <= o2b + 1e-12 && o2b <= t_o + 1e-12);
        }
    }

    #[test]
    fn invalid_lambdas_are_rejected() {
        assert!(matches!(
            combine_anchors(0.1, 0.5, 0.8, 0.5),
            Err(AnchorError::InvalidLambda(_, _))
        ));
        assert!(matches!(
            combine_anchors(0.1, 0.5, -0.1, 0.2),
            Err(AnchorError::InvalidLambda(_, _))
        ));
    }

    #[test]
    fn label_bands_behave_as_specified() {
        let anchors = ThresholdAnchors {
            t_star: 500,
            sigma2_max: 1e5,
            t_o: 0.5,
            t_b: 0.1,
            t_b2o: 0.2,
            t_o2b: 0.4,
            mode: ThresholdMode::Dynamic,
            normalization_scale: 1.0,
        };
        let (m_self, m_u) = make_labels(&[0.1, 0.3, 0.5], &anchors);
        assert_eq!(m_self, vec![true, false, false]);
        assert_eq!(m_u, vec![true, false, true]);
    }

    #[test]
    fn m_self_implies_m_u() {
        let mut rng = substream(10, "labels");
        let values: Vec<f64> = (0..5000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let anchors = compute_anchors(&values, &AnchorConfig::default()).unwrap();
        let (m_self, m_u) = make_labels(&values, &anchors);
        for (s, u) in m_self.iter().zip(&m_u) {
            assert!(!s || *u);
        }
    }

    #[test]
    fn labels_are_invariant_under_positive_rescaling() {
        let mut rng = substream(11, "rescale");
        let values: Vec<f64> = (0..10000)
            .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0.5..0.9) } else { rng.gen_range(0.0..0.15) })
            .collect();
        let cfg = AnchorConfig::default();
        let anchors = compute_anchors(&values, &cfg).unwrap();
        let labels = make_labels(&values, &anchors);

        let a = 3.7;
        let scaled: Vec<f64> = values.iter().map(|&v| a * v).collect();
        let anchors_scaled = compute_anchors(&scaled, &cfg).unwrap();
        let labels_scaled = make_labels(&scaled, &anchors_scaled);
        assert_eq!(anchors.mode, anchors_scaled.mode);
        assert_eq!(labels, labels_scaled);
    }

    #[test]
    fn exactly_k_goes_to_fallback() {
        // Force sigma2_max to land exactly on the gate by overriding the
        // config gate to the measured sigma2.
        let mut bins = vec![0u64; 1000];
        bins[100] = 4000;
        bins[950] = 6000;
        let hist = AssessmentHistogram { bins, total: 10000, normalization_scale: 1.0 };
        let o = otsu(&hist);
        let cfg = AnchorConfig { fallback_k: o.sigma2_max, ..Default::default() };
        let anchors = anchors_from_histogram(&hist, &cfg).unwrap();
        assert_eq!(anchors.mode, ThresholdMode::FixedFallback);
    }

    #[test]
    fn strongly_bimodal_histogram_selects_dynamic_mode() {
        let mut bins = vec![0u64; 1000];
        bins[50] = 4000;
        bins[950] = 6000;
        let hist = AssessmentHistogram { bins, total: 10000, normalization_scale: 1.0 };
        let o = otsu(&hist);
        assert!(o.sigma2_max > 2000.0, "sigma2_max = {}", o.sigma2_max);
        let anchors = anchors_from_histogram(&hist, &AnchorConfig::default()).unwrap();
        assert_eq!(anchors.mode, ThresholdMode::Dynamic);
    }

    #[test]
    fn fallback_labels_follow_the_percentiles() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let hist = build_histogram(&values, 1000).unwrap();
        let cfg = AnchorConfig { fallback_k: f64::INFINITY, ..Default::default() };
        let anchors = anchors_from_histogram(&hist, &cfg).unwrap();
        assert_eq!(anchors.mode, ThresholdMode::FixedFallback);
        let (m_self, m_u) = make_labels(&values, &anchors);
        let clean: usize = m_self.iter().filter(|&&b| b).count();
        let noisy: usize = m_self.iter().zip(&m_u).filter(|(s, u)| !**s && **u).count();
        // Strictly below the 50th-percentile threshold, top ~10% noisy.
        assert!((48..=51).contains(&clean), "clean = {clean}");
        assert!((8..=11).contains(&noisy), "noisy = {noisy}");
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(m_self[i], v / anchors.normalization_scale < anchors.t_b2o);
        }
    }

    /// Two-population separation: almost every foreground value must be
    /// noise-supervised and almost no background value may be.
    #[test]
    fn bimodal_population_labels_reach_high_precision_and_recall() {
        let mut rng = substream(12, "population");
        let n = 100_000usize;
        let mut normal = |mean: f64, sd: f64| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            mean + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut values = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            let fg = i % 5 == 0; // 20% foreground
            let v = if fg { normal(0.7, 0.05) } else { normal(0.1, 0.02) };
            values.push(v.max(0.0));
            truth.push(fg);
        }
        let anchors = compute_anchors(&values, &AnchorConfig::default()).unwrap();
        assert_eq!(anchors.mode, ThresholdMode::Dynamic);
        let (m_self, m_u) = make_labels(&values, &anchors);
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fnn = 0u64;
        for i in 0..n {
            let predicted_noise = m_u[i] && !m_self[i];
            match (predicted_noise, truth[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => {}
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fnn) as f64;
        assert!(precision >= 0.95, "precision = {precision}");
        assert!(recall >= 0.95, "recall = {recall}");
    }
}
