//! Subcommand implementations. Every artifact is a plain text file under
//! the chosen output location; float formatting uses the shortest
//! round-trip representation so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use splat1d::scene::{
    generate_dataset, load_dataset, save_dataset, Dataset, SceneConfig,
};
use splat1d::train::{
    compute_assessment_maps, evaluate, load_checkpoint, save_checkpoint, train_step, EvalRow,
    Toggles, TrainConfig, TrainState,
};

use crate::CliError;

pub const METRICS_HEADER: &str = "iter,psnr,ssim,mask_iou,mask_f1,n_gaussians";
pub const OC_HEADER: &str = "index,m,oc";
pub const ANCHORS_HEADER: &str = "t_star,sigma2_max,t_o,t_b,t_b2o,t_o2b,mode";

/// Experiment file: a dataset reference (or inline scene), training
/// parameters, and ablation toggles. Flags override individual fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub scene: Option<SceneConfig>,
    pub train: Option<TrainConfig>,
    pub disable: Option<Vec<String>>,
}

fn parse_toggles(names: &[String]) -> Result<Toggles, CliError> {
    let mut t = Toggles::default();
    for name in names {
        match name.as_str() {
            "occ" => t.occ = true,
            "ocp" => t.ocp = true,
            "hybrid" => t.hybrid = true,
            "dynamic-threshold" => t.dynamic_threshold = true,
            "mask" => t.mask = true,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown ablation toggle '{other}' (known: occ, ocp, hybrid, dynamic-threshold, mask)"
                )))
            }
        }
    }
    Ok(t)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn metrics_line(row: &EvalRow) -> String {
    format!(
        "{},{},{},{},{},{}",
        row.iteration, row.psnr, row.ssim, row.mask_iou, row.mask_f1, row.n_gaussians
    )
}

fn write_metrics_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&metrics_line(row));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Plain-text image: header line, then one "r g b" line per pixel.
fn write_image(path: &Path, image: &[[f64; 3]]) -> Result<(), CliError> {
    let mut text = format!("SPLAT1D {}\n", image.len());
    for px in image {
        writeln!(text, "{} {} {}", px[0], px[1], px[2]).unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_scalar_map(path: &Path, map: &[f64]) -> Result<(), CliError> {
    let mut text = String::new();
    for v in map {
        writeln!(text, "{v}").unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Scene config JSON file (flags below override its fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Number of background Gaussians.
    #[arg(long)]
    bg: Option<usize>,
    /// Fraction of views that carry distractors.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    per_view: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    extent: Option<f64>,
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<SceneConfig>(&text)
                .map_err(|e| CliError::Io(format!("scene config: {e}")))?
        }
        None => SceneConfig::default(),
    };
    if let Some(v) = args.views {
        config.n_views = v;
    }
    if let Some(v) = args.width {
        config.image_width = v;
    }
    if let Some(v) = args.bg {
        config.n_background_gaussians = v;
    }
    if let Some(v) = args.fraction {
        config.distractor_view_fraction = v;
    }
    if let Some(v) = args.per_view {
        config.distractors_per_view = v;
    }
    if let Some(v) = args.seed {
        config.rng_seed = v;
    }
    if let Some(v) = args.extent {
        config.world_extent = v;
    }
    let dataset =
        generate_dataset(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_dataset(&args.out, &dataset.to_file())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset file to train on.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Experiment config JSON (dataset/train/disable), overridable by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    lambda5: Option<f64>,
    /// Ablation toggles: occ | ocp | hybrid | dynamic-threshold | mask.
    #[arg(long)]
    disable: Vec<String>,
    /// Metrics CSV path (default: <out>/metrics.csv).
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    /// Evaluation/checkpoint cadence in iterations (0 = end only).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    max_primitives: Option<usize>,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let exp: ExperimentConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Io(format!("experiment config: {e}")))?
        }
        None => ExperimentConfig::default(),
    };

    let dataset_path = args
        .dataset
        .clone()
        .or(exp.dataset.clone())
        .ok_or_else(|| CliError::Usage("--dataset (or a config with one) is required".into()))?;
    let dataset = Dataset::from_file(load_dataset(&dataset_path)?);

    let mut config = exp.train.clone().unwrap_or_default();
    if let Some(v) = args.iters {
        config.iterations = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.lambda_s {
        config.lambda_s = v;
    }
    if let Some(v) = args.lambda4 {
        config.anchors.lambda4 = v;
    }
    if let Some(v) = args.lambda5 {
        config.anchors.lambda5 = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = args.warmup {
        config.warmup_iters = Some(v);
    }
    if let Some(v) = args.n_init {
        config.n_init_primitives = v;
    }
    if let Some(v) = args.max_primitives {
        config.max_primitives = v;
    }
    let mut toggle_names = exp.disable.clone().unwrap_or_default();
    toggle_names.extend(args.disable.iter().cloned());
    config.disable = parse_toggles(&toggle_names)?;

    ensure_dir(&args.out)?;
    let metrics_path = args.metrics_csv.clone().unwrap_or_else(|| args.out.join("metrics.csv"));
    let checkpoint_path = args.out.join("checkpoint.json");

    let mut state = TrainState::new(&dataset, config)?;
    while state.iteration < state.config.iterations {
        train_step(&mut state, &dataset)?;
        let at_end = state.iteration == state.config.iterations;
        let cadence =
            state.config.eval_every > 0 && state.iteration % state.config.eval_every == 0;
        if cadence || at_end {
            let row = evaluate(&state, &dataset);
            state.metrics_history.push(row);
            // Durable partial results: rewrite CSV and checkpoint at
            // every evaluation point.
            write_metrics_csv(&metrics_path, &state.metrics_history)?;
            save_checkpoint(&checkpoint_path, &state.checkpoint())?;
        }
    }

    // Final renders of the held-out views.
    let renders_dir = args.out.join("renders");
    ensure_dir(&renders_dir)?;
    for &v in &state.test_views {
        let view = &dataset.views[v];
        let out = splat1d::render::render_view(
            &state.primitives,
            &view.camera,
            state.config.background,
            None,
        );
        write_image(&renders_dir.join(format!("view_{v}.txt")), &out.color_image)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also dump every assessment map as one-float-per-line files.
    #[arg(long)]
    dump_maps: bool,
    /// Also dump the predicted clean-mask probabilities per view.
    #[arg(long)]
    dump_masks: bool,
    /// Also dump the label anchors as CSV.
    #[arg(long)]
    anchors_csv: bool,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let dataset = Dataset::from_file(load_dataset(&args.dataset)?);
    let state = TrainState::resume(load_checkpoint(&args.checkpoint)?, &dataset)?;
    ensure_dir(&args.out)?;
    let row = evaluate(&state, &dataset);
    write_metrics_csv(&args.out.join("metrics.csv"), &[row])?;

    if args.anchors_csv {
        let mut text = String::from(ANCHORS_HEADER);
        text.push('\n');
        if let Some(a) = &state.anchors {
            writeln!(
                text,
                "{},{},{},{},{},{},{}",
                a.t_star, a.sigma2_max, a.t_o, a.t_b, a.t_b2o, a.t_o2b, a.mode
            )
            .unwrap();
        }
        fs::write(args.out.join("anchors.csv"), text)?;
    }

    if args.dump_masks {
        let masks_dir = args.out.join("masks");
        ensure_dir(&masks_dir)?;
        for v in 0..dataset.views.len() {
            let m_c = state.predict_view_mask(v);
            write_scalar_map(&masks_dir.join(format!("view_{v}_mc.txt")), &m_c)?;
            if let Some(gt) = &dataset.views[v].gt_mask {
                let gt_f: Vec<f64> = gt.iter().map(|&b| b as u8 as f64).collect();
                write_scalar_map(&masks_dir.join(format!("view_{v}_gt.txt")), &gt_f)?;
            }
        }
    }

    if args.dump_maps {
        let maps_dir = args.out.join("maps");
        ensure_dir(&maps_dir)?;
        for (v, maps) in compute_assessment_maps(&state, &dataset)? {
            for (name, map) in [
                ("residual", &maps.residual),
                ("beta", &maps.beta),
                ("hybrid", &maps.hybrid),
                ("texture", &maps.texture),
                ("ocr", &maps.ocr),
                ("corrected", &maps.corrected),
                ("oc", &maps.oc_pixels),
            ] {
                write_scalar_map(&maps_dir.join(format!("view_{v}_{name}.txt")), map)?;
            }
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    view: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    let dataset = Dataset::from_file(load_dataset(&args.dataset)?);
    let state = TrainState::resume(load_checkpoint(&args.checkpoint)?, &dataset)?;
    if args.view >= dataset.views.len() {
        return Err(CliError::Usage(format!(
            "view {} out of range (dataset has {})",
            args.view,
            dataset.views.len()
        )));
    }
    ensure_dir(&args.out)?;
    let view = &dataset.views[args.view];
    let oc_values: Vec<f64> = state.stats.iter().map(|s| s.oc).collect();
    let out = splat1d::render::render_view(
        &state.primitives,
        &view.camera,
        state.config.background,
        Some(&oc_values),
    );
    write_image(&args.out.join(format!("view_{}.txt", args.view)), &out.color_image)?;
    write_scalar_map(&args.out.join(format!("view_{}_oc.txt", args.view)), &out.oc_image)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportOcArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn export_oc(args: ExportOcArgs) -> Result<(), CliError> {
    let dataset = Dataset::from_file(load_dataset(&args.dataset)?);
    let state = TrainState::resume(load_checkpoint(&args.checkpoint)?, &dataset)?;
    ensure_dir(&args.out)?;

    let mut text = String::from(OC_HEADER);
    text.push('\n');
    for (i, s) in state.stats.iter().enumerate() {
        writeln!(text, "{},{},{}", i, s.m, s.oc).unwrap();
    }
    fs::write(args.out.join("oc.csv"), text)?;

    let oc_values: Vec<f64> = state.stats.iter().map(|s| s.oc).collect();
    for (v, view) in dataset.views.iter().enumerate() {
        let out = splat1d::render::render_view(
            &state.primitives,
            &view.camera,
            state.config.background,
            Some(&oc_values),
        );
        write_scalar_map(&args.out.join(format!("view_{v}_oc.txt")), &out.oc_image)?;
    }
    Ok(())
}
