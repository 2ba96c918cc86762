//! The training loop.
//!
//! Each iteration visits one training view (shuffled per round):
//! render color and OC, compute the mixed L1/SSIM loss, multiply the
//! per-pixel loss gradient by the detached clean mask M_c, step the
//! primitives, update the per-primitive observation statistics, refresh
//! this view's assessment maps and labels, and train the two classifier
//! heads on their own losses. Every z steps (one round) the label
//! anchors are rebuilt from all cached maps and
//! densify / opacity-prune / observation-completeness-prune run.
//!
//! Masking and head training stay off during a warmup period (3 rounds
//! by default) while the residuals are still dominated by under-fitting.

mod loss;

pub use loss::{gs_loss, ssim, LossError, LossOutput, SSIM_WINDOW};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::{
    anchors_from_histogram, build_histogram, make_labels, AnchorConfig, ThresholdAnchors,
};
use crate::assess::{
    hybrid_map, normalize_beta, occ_correct, residual_map, texture_map, AssessError,
    AssessmentMaps,
};
use crate::classify::{
    extract_static_features, predict_beta, predict_mask, supervision_step, uncertainty_step,
    Adam, NoiseClassifier, ViewFeatures,
};
use crate::metrics::{psnr, MaskCounts};
use crate::oc::{
    effective_observation, ocp_prune, reset_epoch_counts, update_oc, update_stats,
    ObservationStats,
};
use crate::render::{backward, render_view, Gradients};
use crate::rngutil::substream;
use crate::scene::{sigmoid, Dataset, GaussianPrimitive, IoError, Rgb, Vec2};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Mask-head optimizer steps per view visit.
const ETA_STEPS_PER_VISIT: usize = 4;

/// Ablation switches (all off for the full pipeline).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    /// Observation cognitive correction off: OCR forced to 1.
    pub occ: bool,
    /// Observation-completeness pruning off.
    pub ocp: bool,
    /// Hybrid assessment off: residual-only assessment.
    pub hybrid: bool,
    /// Dynamic anchors off: always the fixed percentile scheme.
    pub dynamic_threshold: bool,
    /// Clean-mask loss gating off: M_c treated as all-ones.
    pub mask: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// SSIM weight in the mixed loss.
    pub lambda_s: f64,
    /// Round length z; 0 means "number of training views".
    pub densify_interval: usize,
    /// Clone/split when the round-averaged position-gradient norm
    /// exceeds this.
    pub densify_grad_threshold: f64,
    /// Remove primitives whose opacity falls below this.
    pub opacity_prune_threshold: f64,
    /// Iterations before masking and head training activate;
    /// None = 3 rounds.
    pub warmup_iters: Option<usize>,
    pub seed: u64,
    /// Evaluation cadence in iterations; 0 = final evaluation only.
    pub eval_every: usize,
    pub anchors: AnchorConfig,
    pub n_init_primitives: usize,
    pub max_primitives: usize,
    /// Densification stops after this fraction of the run.
    pub densify_stop_fraction: f64,
    /// Split (rather than clone) when the major scale exceeds this
    /// fraction of the world extent.
    pub split_scale_fraction: f64,
    /// Remove primitives whose major scale exceeds this fraction of the
    /// world extent (smeared-out floaters).
    pub oversize_prune_fraction: f64,
    pub background: Rgb,
    pub lr_position: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub disable: Toggles,
    /// Test hook: force a constant mask value instead of the learned M_c.
    pub mask_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lambda_s: 0.2,
            densify_interval: 0,
            densify_grad_threshold: 2e-4,
            opacity_prune_threshold: 0.005,
            warmup_iters: None,
            seed: 0,
            eval_every: 0,
            anchors: AnchorConfig::default(),
            n_init_primitives: 150,
            max_primitives: 1200,
            densify_stop_fraction: 0.7,
            split_scale_fraction: 0.04,
            oversize_prune_fraction: 0.15,
            background: [0.0, 0.0, 0.0],
            lr_position: 2e-3,
            lr_log_scale: 5e-3,
            lr_rotation: 2e-3,
            lr_opacity: 2.5e-2,
            lr_color: 1e-2,
            disable: Toggles::default(),
            mask_override: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error("numeric failure at iteration {0}: {1}")]
    NumericFailure(usize, String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One evaluation record (one metrics CSV row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mask_iou: f64,
    pub mask_f1: f64,
    pub n_gaussians: usize,
}

/// Audit record of one observation-completeness pruning removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpEvent {
    pub iteration: usize,
    pub id: u64,
    pub oc: f64,
    pub epoch_observation_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Moment {
    m: f64,
    v: f64,
}

impl Moment {
    fn update(&mut self, grad: f64, bc1: f64, bc2: f64, lr: f64) -> f64 {
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        lr * (self.m / bc1) / ((self.v / bc2).sqrt() + 1e-8)
    }
}

/// Adam moments of one primitive's parameter groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct PrimMoments {
    pos: [Moment; 2],
    log_scale: [Moment; 2],
    rot: Moment,
    opacity: Moment,
    color: [Moment; 3],
}

#[derive(Debug, Clone)]
struct PrimitiveOptimizer {
    t: u64,
    moments: Vec<PrimMoments>,
}

impl PrimitiveOptimizer {
    fn new(n: usize) -> Self {
        Self { t: 0, moments: vec![PrimMoments::default(); n] }
    }

    /// Per-group Adam step; scale moves in log space so it stays
    /// positive, and color/opacity honor their type bounds.
    fn step(
        &mut self,
        prims: &mut [GaussianPrimitive],
        grads: &Gradients,
        cfg: &TrainConfig,
        extent: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - 0.9f64.powi(self.t as i32);
        let bc2 = 1.0 - 0.999f64.powi(self.t as i32);
        let log_bounds = ((1e-5 * extent).ln(), (2.0 * extent).ln());
        for (i, g) in prims.iter_mut().enumerate() {
            let mm = &mut self.moments[i];
            for a in 0..2 {
                g.position[a] -=
                    mm.pos[a].update(grads.position[i][a], bc1, bc2, cfg.lr_position * extent);
                let log_grad = grads.scale[i][a] * g.scale[a];
                let delta = mm.log_scale[a].update(log_grad, bc1, bc2, cfg.lr_log_scale);
                if delta != 0.0 {
                    let ls = g.scale[a].ln() - delta;
                    g.scale[a] = ls.clamp(log_bounds.0, log_bounds.1).exp();
                }
            }
            g.rotation -= mm.rot.update(grads.rotation[i], bc1, bc2, cfg.lr_rotation);
            g.opacity_logit = (g.opacity_logit
                - mm.opacity.update(grads.opacity_logit[i], bc1, bc2, cfg.lr_opacity))
            .clamp(-10.0, 10.0);
            for c in 0..3 {
                g.color[c] = (g.color[c]
                    - mm.color[c].update(grads.color[i][c], bc1, bc2, cfg.lr_color))
                .clamp(0.0, 1.0);
            }
        }
    }
}

pub struct TrainState {
    pub config: TrainConfig,
    pub world_extent: f64,
    /// Round length.
    pub z: usize,
    pub warmup_iters: usize,
    pub train_views: Vec<usize>,
    pub test_views: Vec<usize>,
    pub primitives: Vec<GaussianPrimitive>,
    /// Stable identity per primitive, preserved through densify/prune.
    pub ids: Vec<u64>,
    next_id: u64,
    pub stats: Vec<ObservationStats>,
    optimizer: PrimitiveOptimizer,
    grad_accum: Vec<f64>,
    grad_count: Vec<u64>,
    pub classifier: NoiseClassifier,
    opt_psi: Adam,
    opt_eta: Adam,
    opt_embed: Adam,
    features: Vec<ViewFeatures>,
    textures: Vec<Vec<f64>>,
    pub image_ids: Vec<usize>,
    pub cached_maps: Vec<Option<AssessmentMaps>>,
    pub cached_labels: Vec<Option<(Vec<bool>, Vec<bool>)>>,
    pub anchors: Option<ThresholdAnchors>,
    pub iteration: usize,
    epoch_order: Vec<usize>,
    rng_shuffle: ChaCha12Rng,
    pub ocp_events: Vec<OcpEvent>,
    round_loss_acc: f64,
    /// Sum of the reconstruction loss over each completed round.
    pub round_losses: Vec<f64>,
    pub metrics_history: Vec<EvalRow>,
}

/// Deterministic train/test split: the highest-index distractor-free
/// views (at least one, n/8 in total) are held out.
pub fn split_views(dataset: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let n = dataset.views.len();
    let n_test = (n / 8).max(1).min(n.saturating_sub(1)).max(1);
    let mut test: Vec<usize> = (0..n)
        .rev()
        .filter(|&i| !dataset.views[i].has_distractors())
        .take(n_test)
        .collect();
    if test.len() < n_test {
        for i in (0..n).rev() {
            if test.len() >= n_test {
                break;
            }
            if !test.contains(&i) {
                test.push(i);
            }
        }
    }
    test.sort_unstable();
    let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
    (train, test)
}

impl TrainState {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        if config.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.lambda_s) {
            return Err(TrainError::Config("lambda_s must be in [0,1]".into()));
        }
        if dataset.views.len() < 2 {
            return Err(TrainError::Config("need at least 2 views".into()));
        }
        let width = dataset.views[0].camera.width;
        if width < SSIM_WINDOW {
            return Err(TrainError::Config(format!(
                "image width {width} is below the SSIM window {SSIM_WINDOW}"
            )));
        }

        let (train_views, test_views) = split_views(dataset);
        let z = if config.densify_interval > 0 { config.densify_interval } else { train_views.len() };
        let warmup_iters = config.warmup_iters.unwrap_or(3 * z);
        let extent = dataset.config.world_extent;

        // Initialize by back-projecting random reference pixels at random
        // depths, seeded with the pixel's color.
        let mut rng = substream(config.seed, "init");
        let n_init = config.n_init_primitives;
        let primitives: Vec<GaussianPrimitive> = (0..n_init)
            .map(|_| {
                let v = train_views[rng.gen_range(0..train_views.len())];
                let view = &dataset.views[v];
                let cam = &view.camera;
                let px = rng.gen_range(0..cam.width);
                let depth = rng.gen_range(0.9..1.8) * extent;
                let lateral = (px as f64 + 0.5 - cam.width as f64 / 2.0) / cam.focal * depth;
                let fwd = cam.forward();
                let lat = cam.lateral();
                GaussianPrimitive {
                    position: [
                        cam.position[0] + depth * fwd[0] + lateral * lat[0],
                        cam.position[1] + depth * fwd[1] + lateral * lat[1],
                    ],
                    scale: [rng.gen_range(0.02..0.05) * extent, rng.gen_range(0.02..0.05) * extent],
                    rotation: rng.gen_range(0.0..std::f64::consts::PI),
                    opacity_logit: 0.0,
                    color: view.image[px],
                }
            })
            .collect();

        let mut mlp_rng = substream(config.seed, "init-mlp");
        let classifier = NoiseClassifier::new(dataset.views.len(), &mut mlp_rng);
        let opt_psi = Adam::new(1e-3, classifier.psi.param_count());
        let opt_eta = Adam::new(1e-3, classifier.eta.param_count());
        let opt_embed = Adam::new(1e-3, classifier.embedding.data.len());

        let features = dataset.views.iter().map(|v| extract_static_features(&v.image)).collect();
        let textures = dataset.views.iter().map(|v| texture_map(&v.image)).collect();
        let image_ids = dataset.views.iter().map(|v| v.image_id).collect();
        let n_views = dataset.views.len();
        let n = primitives.len();
        let rng_shuffle = substream(config.seed, "shuffle");

        Ok(Self {
            config,
            world_extent: extent,
            z,
            warmup_iters,
            train_views,
            test_views,
            ids: (0..n as u64).collect(),
            next_id: n as u64,
            stats: vec![ObservationStats::default(); n],
            optimizer: PrimitiveOptimizer::new(n),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            primitives,
            classifier,
            opt_psi,
            opt_eta,
            opt_embed,
            features,
            textures,
            image_ids,
            cached_maps: vec![None; n_views],
            cached_labels: vec![None; n_views],
            anchors: None,
            iteration: 0,
            epoch_order: Vec::new(),
            rng_shuffle,
            ocp_events: Vec::new(),
            round_loss_acc: 0.0,
            round_losses: Vec::new(),
            metrics_history: Vec::new(),
        })
    }

    /// Appends a primitive mid-training (fresh stats and moments).
    pub fn inject_primitive(&mut self, g: GaussianPrimitive) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.primitives.push(g);
        self.ids.push(id);
        self.stats.push(ObservationStats::default());
        self.optimizer.moments.push(PrimMoments::default());
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
        id
    }

    pub fn n_primitives(&self) -> usize {
        self.primitives.len()
    }

    /// All parallel per-primitive arrays stay index-aligned.
    pub fn assert_aligned(&self) {
        let n = self.primitives.len();
        assert_eq!(self.ids.len(), n);
        assert_eq!(self.stats.len(), n);
        assert_eq!(self.optimizer.moments.len(), n);
        assert_eq!(self.grad_accum.len(), n);
        assert_eq!(self.grad_count.len(), n);
    }

    fn retain(&mut self, keep: &[bool]) {
        let filter = |i: usize| keep[i];
        let mut idx = 0;
        self.primitives.retain(|_| { let k = filter(idx); idx += 1; k });
        idx = 0;
        self.ids.retain(|_| { let k = filter(idx); idx += 1; k });
        idx = 0;
        self.stats.retain(|_| { let k = filter(idx); idx += 1; k });
        idx = 0;
        self.optimizer.moments.retain(|_| { let k = filter(idx); idx += 1; k });
        idx = 0;
        self.grad_accum.retain(|_| { let k = filter(idx); idx += 1; k });
        idx = 0;
        self.grad_count.retain(|_| { let k = filter(idx); idx += 1; k });
    }

    /// Current 99.5th-percentile beta normalizer over the cached maps
    /// plus the in-flight beta map.
    fn beta_normalizer(&self, current: &[f64]) -> f64 {
        let mut all: Vec<f64> = current.to_vec();
        for maps in self.cached_maps.iter().flatten() {
            all.extend_from_slice(&maps.beta);
        }
        crate::anchors::percentile(&all, 99.5)
    }

    /// Clean-mask probabilities for one view under the current heads.
    pub fn predict_view_mask(&self, view_idx: usize) -> Vec<f64> {
        let feats = &self.features[view_idx];
        let id_row = self.classifier.embedding.row(self.image_ids[view_idx]);
        let beta = predict_beta(&self.classifier.psi, feats, id_row);
        predict_mask(&self.classifier.eta, feats, &beta)
    }
}

/// Runs one training iteration.
pub fn train_step(state: &mut TrainState, dataset: &Dataset) -> Result<(), TrainError> {
    let iter = state.iteration;
    let epoch_len = state.train_views.len();
    if iter % epoch_len == 0 {
        state.epoch_order = state.train_views.clone();
        state.epoch_order.shuffle(&mut state.rng_shuffle);
    }
    let view_idx = state.epoch_order[iter % epoch_len];
    let view = &dataset.views[view_idx];
    let cam = &view.camera;
    let width = cam.width;

    // (1) forward render: color plus OC under the same weights.
    let oc_values: Vec<f64> = state.stats.iter().map(|s| s.oc).collect();
    let out = render_view(&state.primitives, cam, state.config.background, Some(&oc_values));

    // (2) reconstruction loss and its per-pixel gradient.
    let loss = gs_loss(&out.color_image, &view.image, state.config.lambda_s)?;
    if !loss.loss.is_finite() {
        return Err(TrainError::NumericFailure(iter, "reconstruction loss is not finite".into()));
    }

    let heads_active = iter >= state.warmup_iters;
    let masking_active = heads_active && !state.config.disable.mask;

    // Uncertainty head: forward (and, after warmup, one training step on
    // the detached loss map).
    let id_row: Vec<f64> = state.classifier.embedding.row(view.image_id).to_vec();
    let feats = &state.features[view_idx];
    let beta = if heads_active {
        let (_l_uncer, beta, psi_grads, id_grad) =
            uncertainty_step(&state.classifier.psi, feats, &id_row, &loss.per_pixel_loss);
        state.classifier.psi.step(&psi_grads, &mut state.opt_psi);
        state.classifier.embedding.step_row(view.image_id, &id_grad, &mut state.opt_embed);
        beta
    } else {
        predict_beta(&state.classifier.psi, feats, &id_row)
    };

    // (3) detached clean mask gating the reconstruction gradient.
    let m_c: Option<Vec<f64>> = if let Some(v) = state.config.mask_override {
        Some(vec![v; width])
    } else if masking_active {
        Some(predict_mask(&state.classifier.eta, feats, &beta))
    } else {
        None
    };
    let masked_grad: Vec<Rgb> = match &m_c {
        Some(m) => loss
            .per_pixel_grad
            .iter()
            .zip(m)
            .map(|(g, &w)| [g[0] * w, g[1] * w, g[2] * w])
            .collect(),
        None => loss.per_pixel_grad.clone(),
    };

    // (4)(5) backward into the primitives and optimizer step.
    let grads = backward(&state.primitives, cam, &out, &masked_grad);
    state
        .optimizer
        .step(&mut state.primitives, &grads, &state.config, state.world_extent);

    let mut visible = vec![false; state.primitives.len()];
    for s in &out.splats {
        visible[s.source_index] = true;
    }
    for i in 0..state.primitives.len() {
        state.grad_accum[i] += grads.gradp[i];
        if visible[i] {
            state.grad_count[i] += 1;
        }
    }

    // (6) observation statistics.
    for (i, stats) in state.stats.iter_mut().enumerate() {
        let u = effective_observation(grads.gradp[i]);
        update_stats(stats, cam.position, u);
        update_oc(stats, u);
    }

    // (7) assessment maps for this view.
    let residual = residual_map(&out.color_image, &view.image)?;
    let normalizer = state.beta_normalizer(&beta);
    let beta_norm = normalize_beta(&beta, normalizer);
    let hybrid =
        if state.config.disable.hybrid { residual.clone() } else { hybrid_map(&residual, &beta_norm) };
    let texture = state.textures[view_idx].clone();
    let (ocr, corrected) = if state.config.disable.occ {
        (vec![1.0; width], hybrid.clone())
    } else {
        occ_correct(&hybrid, &out.oc_image, &texture)
    };
    state.cached_maps[view_idx] = Some(AssessmentMaps {
        residual,
        beta: beta.clone(),
        hybrid,
        texture,
        ocr,
        corrected: corrected.clone(),
        oc_pixels: out.oc_image.clone(),
    });

    // (8) self-supervised labels and mask-head training. The mask head
    // takes a few steps per visit: it must keep up with the scene, or
    // unmasked distractor gradients corrupt the primitives while it
    // converges.
    if let Some(anchors) = &state.anchors {
        let (m_self, m_u) = make_labels(&corrected, anchors);
        if heads_active {
            for _ in 0..ETA_STEPS_PER_VISIT {
                let (_l_sup, _m, eta_grads) =
                    supervision_step(&state.classifier.eta, feats, &beta, &m_self, &m_u);
                state.classifier.eta.step(&eta_grads, &mut state.opt_eta);
            }
        }
        state.cached_labels[view_idx] = Some((m_self, m_u));
    }

    state.round_loss_acc += loss.loss;
    state.iteration += 1;

    // (9) round boundary: anchors, densify, prune.
    if state.iteration % state.z == 0 {
        state.round_losses.push(state.round_loss_acc);
        state.round_loss_acc = 0.0;
        rebuild_anchors(state);
        densify_and_prune(state);
        state.assert_aligned();
    }
    Ok(())
}

/// Rebuilds the label anchors from every cached corrected map. Skipped
/// until at least 1000 samples are cached.
fn rebuild_anchors(state: &mut TrainState) {
    let mut samples = Vec::new();
    for maps in state.cached_maps.iter().flatten() {
        samples.extend_from_slice(&maps.corrected);
    }
    if samples.len() < 1000 {
        return;
    }
    let cfg = if state.config.disable.dynamic_threshold {
        AnchorConfig { fallback_k: f64::INFINITY, ..state.config.anchors }
    } else {
        state.config.anchors
    };
    if let Ok(hist) = build_histogram(&samples, cfg.bins) {
        if let Ok(anchors) = anchors_from_histogram(&hist, &cfg) {
            state.anchors = Some(anchors);
        }
    }
}

/// Round-boundary densification and pruning.
pub fn densify_and_prune(state: &mut TrainState) {
    let cfg = state.config.clone();
    // Densification waits for masking to activate: growing primitives
    // toward still-unmasked distractors would chase noise.
    let densify_allowed = state.iteration >= state.warmup_iters
        && state.iteration <= (cfg.densify_stop_fraction * cfg.iterations as f64) as usize;

    // Clone small / split large primitives with high averaged gradient.
    if densify_allowed {
        let n = state.primitives.len();
        let split_threshold = cfg.split_scale_fraction * state.world_extent;
        let mut keep = vec![true; n];
        let mut children: Vec<(usize, GaussianPrimitive)> = Vec::new();
        for i in 0..n {
            if n + children.len() >= cfg.max_primitives {
                break;
            }
            let avg = state.grad_accum[i] / state.grad_count[i].max(1) as f64;
            if avg <= cfg.densify_grad_threshold {
                continue;
            }
            let g = &state.primitives[i];
            let major = g.scale[0].max(g.scale[1]);
            if major > split_threshold {
                // Split: two children replace the parent along its major
                // axis, scales reduced.
                keep[i] = false;
                let (sn, cs) = g.rotation.sin_cos();
                let dir: Vec2 = if g.scale[0] >= g.scale[1] { [cs, sn] } else { [-sn, cs] };
                for sign in [-0.5, 0.5] {
                    let mut child = g.clone();
                    child.position = [
                        g.position[0] + sign * major * dir[0],
                        g.position[1] + sign * major * dir[1],
                    ];
                    child.scale = [g.scale[0] / 1.6, g.scale[1] / 1.6];
                    children.push((i, child));
                }
            } else {
                children.push((i, g.clone()));
            }
        }
        let n_children = children.len();
        for (parent, child) in children {
            let parent_stats = state.stats[parent].clone();
            state.inject_primitive(child);
            *state.stats.last_mut().unwrap() = parent_stats;
        }
        keep.extend(std::iter::repeat(true).take(n_children));
        state.retain(&keep);
    }

    // Opacity pruning, plus removal of smeared-out primitives that have
    // grown far beyond any plausible scene element.
    let oversize = cfg.oversize_prune_fraction * state.world_extent;
    let keep: Vec<bool> = state
        .primitives
        .iter()
        .map(|g| {
            sigmoid(g.opacity_logit) >= cfg.opacity_prune_threshold
                && g.scale[0].max(g.scale[1]) <= oversize
        })
        .collect();
    state.retain(&keep);

    // Observation-completeness pruning (or just the counter reset).
    if state.config.disable.ocp {
        reset_epoch_counts(&mut state.stats);
    } else {
        let counts: Vec<u64> = state.stats.iter().map(|s| s.epoch_observation_count).collect();
        let pruned = ocp_prune(&mut state.stats);
        let mut keep = vec![true; state.primitives.len()];
        for &i in &pruned {
            keep[i] = false;
            state.ocp_events.push(OcpEvent {
                iteration: state.iteration,
                id: state.ids[i],
                oc: state.stats[i].oc,
                epoch_observation_count: counts[i],
            });
        }
        state.retain(&keep);
    }

    state.grad_accum = vec![0.0; state.primitives.len()];
    state.grad_count = vec![0; state.primitives.len()];
}

/// Forward-only assessment maps of every training view under the state's
/// current primitives and heads (for export; the beta normalizer spans
/// all views at once).
pub fn compute_assessment_maps(
    state: &TrainState,
    dataset: &Dataset,
) -> Result<Vec<(usize, AssessmentMaps)>, TrainError> {
    let oc_values: Vec<f64> = state.stats.iter().map(|s| s.oc).collect();
    let mut per_view = Vec::new();
    let mut all_betas = Vec::new();
    for &v in &state.train_views {
        let view = &dataset.views[v];
        let out = render_view(&state.primitives, &view.camera, state.config.background, Some(&oc_values));
        let residual = residual_map(&out.color_image, &view.image)?;
        let id_row = state.classifier.embedding.row(state.image_ids[v]);
        let beta = predict_beta(&state.classifier.psi, &state.features[v], id_row);
        all_betas.extend_from_slice(&beta);
        per_view.push((v, out.oc_image, residual, beta));
    }
    let normalizer = crate::anchors::percentile(&all_betas, 99.5);
    let mut maps = Vec::new();
    for (v, oc_pixels, residual, beta) in per_view {
        let beta_norm = normalize_beta(&beta, normalizer);
        let hybrid = if state.config.disable.hybrid {
            residual.clone()
        } else {
            hybrid_map(&residual, &beta_norm)
        };
        let texture = state.textures[v].clone();
        let (ocr, corrected) = if state.config.disable.occ {
            (vec![1.0; oc_pixels.len()], hybrid.clone())
        } else {
            occ_correct(&hybrid, &oc_pixels, &texture)
        };
        maps.push((v, AssessmentMaps { residual, beta, hybrid, texture, ocr, corrected, oc_pixels }));
    }
    Ok(maps)
}

/// Held-out reconstruction quality plus mask agreement on the
/// distractor-bearing training views.
pub fn evaluate(state: &TrainState, dataset: &Dataset) -> EvalRow {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for &v in &state.test_views {
        let view = &dataset.views[v];
        let out = render_view(&state.primitives, &view.camera, state.config.background, None);
        psnr_sum += psnr(&out.color_image, &view.image);
        ssim_sum += ssim(&out.color_image, &view.image).unwrap_or(0.0);
    }
    let n_test = state.test_views.len().max(1) as f64;

    let mut counts = MaskCounts::default();
    for &v in &state.train_views {
        let view = &dataset.views[v];
        let Some(gt) = view.gt_mask.as_ref() else { continue };
        if !view.has_distractors() {
            continue;
        }
        let m_c = state.predict_view_mask(v);
        let predicted: Vec<bool> = m_c.iter().map(|&m| m < 0.5).collect();
        counts.accumulate(&predicted, gt);
    }

    EvalRow {
        iteration: state.iteration,
        psnr: psnr_sum / n_test,
        ssim: ssim_sum / n_test,
        mask_iou: counts.iou(),
        mask_f1: counts.f1(),
        n_gaussians: state.primitives.len(),
    }
}

/// Runs the configured number of iterations, evaluating at the cadence
/// and once at the end.
pub fn train(state: &mut TrainState, dataset: &Dataset) -> Result<(), TrainError> {
    while state.iteration < state.config.iterations {
        train_step(state, dataset)?;
        let at_end = state.iteration == state.config.iterations;
        let cadence = state.config.eval_every > 0 && state.iteration % state.config.eval_every == 0;
        if cadence || at_end {
            let row = evaluate(state, dataset);
            state.metrics_history.push(row);
        }
    }
    Ok(())
}

/// Serializable training snapshot; enough to evaluate, render, and
/// export, given the dataset it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub iteration: usize,
    pub config: TrainConfig,
    pub primitives: Vec<GaussianPrimitive>,
    pub ids: Vec<u64>,
    pub stats: Vec<ObservationStats>,
    pub classifier: NoiseClassifier,
    pub anchors: Option<ThresholdAnchors>,
    pub metrics_history: Vec<EvalRow>,
}

impl TrainState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            iteration: self.iteration,
            config: self.config.clone(),
            primitives: self.primitives.clone(),
            ids: self.ids.clone(),
            stats: self.stats.clone(),
            classifier: self.classifier.clone(),
            anchors: self.anchors.clone(),
            metrics_history: self.metrics_history.clone(),
        }
    }

    /// Rebuilds an evaluable state from a checkpoint and its dataset.
    /// Optimizer moments and cached maps are not part of checkpoints;
    /// resumed states are for evaluation, rendering, and export.
    pub fn resume(ck: Checkpoint, dataset: &Dataset) -> Result<Self, TrainError> {
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(TrainError::Io(IoError::Schema(format!(
                "unsupported checkpoint schema_version {}",
                ck.schema_version
            ))));
        }
        let mut state = TrainState::new(dataset, ck.config)?;
        let n = ck.primitives.len();
        state.primitives = ck.primitives;
        state.ids = ck.ids;
        state.next_id = state.ids.iter().copied().max().map_or(0, |m| m + 1);
        state.stats = ck.stats;
        state.optimizer = PrimitiveOptimizer::new(n);
        state.grad_accum = vec![0.0; n];
        state.grad_count = vec![0; n];
        state.classifier = ck.classifier;
        state.anchors = ck.anchors;
        state.iteration = ck.iteration;
        state.metrics_history = ck.metrics_history;
        state.assert_aligned();
        Ok(state)
    }
}

pub fn save_checkpoint(path: &std::path::Path, ck: &Checkpoint) -> Result<(), IoError> {
    let text = serde_json::to_string(ck).map_err(|e| IoError::Schema(e.to_string()))?;
    // Write-then-rename so an interrupted run never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint, IoError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Schema(e.to_string()))
}
