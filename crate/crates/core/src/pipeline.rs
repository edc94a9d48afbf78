//! Training, inference, evaluation and the on-disk run layout.
//!
//! A run directory holds `config.json`, `checkpoints/final.clfw`,
//! `logs/train.csv`, `logs/latent_hist.{csv,png}`, `scores/image_scores.csv`,
//! `scores/pixels/<name>.clft`, `heatmaps/<name>.png` and `metrics.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::{list_pngs, stem, Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{
    auroc, emit_latent_histogram, score_map, Histogram, HistogramConfig, LabeledScores,
    ScoreConfig, ScoreMap,
};
use crate::features::{
    load_features, save_features, ExtractorKind, ExtractorSpec, FeatureMap, ToyExtractor,
};
use crate::flow::{FlowConfig, FlowModel, DEFAULT_CLAMP};
use crate::heads::{global_pool, masked_pool, AnomalyMask, BoxRegion, Heads};
use crate::losses::{
    autoscale_lambdas, check_tau, loss_ml, loss_pnd, loss_scf, total_loss, ContrastiveBatch,
    LossWeights, DEFAULT_TAU,
};
use crate::optim::Adam;
use crate::raster::{heatmap_overlay, save_mask, Image};
use crate::synth::{cutpaste_plus, foreground_mask, ft_saliency, ForegroundMask, SynthesisParams};
use crate::tensor::{Graph, Tensor};

const SYNTH_SALT: u64 = 0x51f7_c0de_a11e_d0c5;
const HEAD_SALT: u64 = 0x4ead;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Likelihood plus both contrastive terms.
    Full,
    /// Likelihood only; no negatives are synthesized.
    MlOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Calibrate on the first batch so each weighted auxiliary term matches
    /// `|L_ml|`, then keep the weights fixed.
    Auto,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    pub n_blocks: usize,
    pub hidden_ratio: f64,
    pub clamp: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            n_blocks: 8,
            hidden_ratio: 1.0,
            clamp: DEFAULT_CLAMP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub extractor: ExtractorSpec,
    pub flow: FlowSettings,
    /// Projection width; defaults to the feature channel count.
    pub proj_dim: Option<usize>,
    pub objective: Objective,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub lambda_mode: LambdaMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub synthesis: SynthesisParams,
    pub score: ScoreConfig,
    pub histogram: HistogramConfig,
    pub heatmaps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            extractor: ExtractorSpec::default(),
            flow: FlowSettings::default(),
            proj_dim: None,
            objective: Objective::Full,
            batch_size: 8,
            steps: 2000,
            lr: 1e-3,
            lambda_mode: LambdaMode::Auto,
            lambda1: 1.0,
            lambda2: 1.0,
            tau: DEFAULT_TAU,
            synthesis: SynthesisParams::default(),
            score: ScoreConfig::default(),
            histogram: HistogramConfig::default(),
            heatmaps: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 && self.objective == Objective::Full {
            return bad(format!(
                "batch_size must be >= 2 for the full objective, got {}",
                self.batch_size
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        check_tau(self.tau).map_err(|e| Error::Config(e.to_string()))?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.flow.n_blocks == 0
            || !positive(self.flow.hidden_ratio)
            || !positive(self.flow.clamp)
        {
            return bad("flow needs n_blocks >= 1, hidden_ratio > 0 and clamp > 0".into());
        }
        if self.extractor.channels < 2 || self.extractor.stride == 0 {
            return bad("extractor needs channels >= 2 and stride >= 1".into());
        }
        if self.score.sigma < 0.0 {
            return bad("score.sigma must be non-negative".into());
        }
        Ok(())
    }

    fn proj_dim(&self) -> usize {
        self.proj_dim.unwrap_or(self.extractor.channels)
    }

    fn synthesis_params(&self) -> SynthesisParams {
        SynthesisParams {
            feature_stride: self.extractor.stride,
            ..self.synthesis.clone()
        }
    }

    fn extractor(&self) -> Result<ToyExtractor> {
        if self.extractor.kind != ExtractorKind::Toy {
            return Err(Error::Config(
                "training and image scoring need the toy extractor; file features can only be scored".into(),
            ));
        }
        ToyExtractor::new(&self.extractor)
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub ml: f64,
    pub pnd: f64,
    pub scf: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,ml,pnd,scf,total,lambda1,lambda2\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.ml, r.pnd, r.scf, r.total, r.lambda1, r.lambda2
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Steps whose feature-distance log argument hit the floor.
    pub clamped_steps: usize,
    pub seconds: f64,
}

/// Cached per-image inputs for training.
struct Positives<'a> {
    images: Vec<&'a Image>,
    features: Vec<FeatureMap>,
    fg: Vec<ForegroundMask>,
}

struct Negative {
    features: FeatureMap,
    mask: AnomalyMask,
}

struct StepOutput {
    row: LogRow,
    flow_grads: Vec<Tensor>,
    head_grads: Vec<Tensor>,
    clamped: bool,
}

fn flow_config(cfg: &RunConfig, fm: &FeatureMap) -> Result<FlowConfig> {
    let mut fc = FlowConfig::new(
        fm.channels,
        fm.height,
        fm.width,
        cfg.flow.n_blocks,
        cfg.flow.hidden_ratio,
    )?;
    fc.clamp = cfg.flow.clamp;
    Ok(fc)
}

/// Forward both pathways on one tape and backpropagate the weighted loss.
fn train_step(
    cfg: &RunConfig,
    step: usize,
    flow: &FlowModel,
    heads: &Heads,
    calibrated: Option<LossWeights>,
    pos: &[&FeatureMap],
    neg: &[Negative],
) -> Result<StepOutput> {
    let mut g = Graph::new();
    let fvars = flow.register(&mut g, true)?;
    let mut zs = Vec::with_capacity(pos.len());
    let mut lds = Vec::with_capacity(pos.len());
    for fm in pos {
        let x = g.constant(fm.to_matrix());
        let (z, ld) = flow.forward_sample(&mut g, &fvars, x)?;
        zs.push(z);
        lds.push(ld);
    }
    let ml = loss_ml(&mut g, &zs, &lds)?;
    let ml_value = g.value(ml).item();

    let (total, pnd_value, scf_value, weights, clamped, head_vars) = match cfg.objective {
        Objective::MlOnly => (
            ml,
            0.0,
            0.0,
            LossWeights {
                lambda1: 0.0,
                lambda2: 0.0,
                tau: cfg.tau,
            },
            false,
            None,
        ),
        Objective::Full => {
            let pvars = heads.projection.register(&mut g, true);
            let qvars = heads.prediction.register(&mut g, true);
            let mut batch = ContrastiveBatch {
                s: Vec::new(),
                box_s: Vec::new(),
                neg_box_s: Vec::new(),
                p: Vec::new(),
                neg_p: Vec::new(),
            };
            for (z, n) in zs.iter().zip(neg) {
                // the negative pathway reuses the same flow registration as the positive one
                let x = g.constant(n.features.to_matrix());
                let (neg_z, _) = flow.forward_sample(&mut g, &fvars, x)?;

                let pooled = global_pool(&mut g, *z)?;
                batch
                    .s
                    .push(heads.projection.forward(&mut g, &pvars, pooled)?);
                batch
                    .p
                    .push(heads.prediction.forward(&mut g, &qvars, pooled)?);
                let boxed = masked_pool(&mut g, *z, &n.mask)?;
                batch
                    .box_s
                    .push(heads.projection.forward(&mut g, &pvars, boxed)?);
                let neg_boxed = masked_pool(&mut g, neg_z, &n.mask)?;
                batch
                    .neg_box_s
                    .push(heads.projection.forward(&mut g, &pvars, neg_boxed)?);
                let neg_pooled = global_pool(&mut g, neg_z)?;
                batch
                    .neg_p
                    .push(heads.prediction.forward(&mut g, &qvars, neg_pooled)?);
            }
            let pnd = loss_pnd(&mut g, &batch)?;
            let scf = loss_scf(&mut g, &batch, cfg.tau)?;
            let (pv, sv) = (g.value(pnd.loss).item(), g.value(scf).item());
            let weights = match (cfg.lambda_mode, calibrated) {
                (LambdaMode::Auto, Some(w)) => w,
                (LambdaMode::Auto, None) => autoscale_lambdas(ml_value, pv, sv, cfg.tau),
                (LambdaMode::Fixed, _) => LossWeights {
                    lambda1: cfg.lambda1,
                    lambda2: cfg.lambda2,
                    tau: cfg.tau,
                },
            };
            let total = total_loss(&mut g, ml, pnd.loss, scf, &weights)?;
            (total, pv, sv, weights, pnd.clamped, Some((pvars, qvars)))
        }
    };
    let total_value = g.value(total).item();
    if !total_value.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    g.backward(total)?;
    let grad = |v| g.grad(v).cloned().expect("trainable leaf has a gradient");
    let flow_grads = fvars.params.iter().map(|&v| grad(v)).collect();
    let head_grads = match head_vars {
        Some((p, q)) => p.params.iter().chain(&q.params).map(|&v| grad(v)).collect(),
        None => Vec::new(),
    };
    Ok(StepOutput {
        row: LogRow {
            step,
            ml: ml_value,
            pnd: pnd_value,
            scf: scf_value,
            total: total_value,
            lambda1: weights.lambda1,
            lambda2: weights.lambda2,
        },
        flow_grads,
        head_grads,
        clamped,
    })
}

fn synthesize_negatives(
    cfg: &RunConfig,
    extractor: &ToyExtractor,
    positives: &Positives,
    step: usize,
    batch: &[usize],
) -> Result<Vec<Negative>> {
    let params = cfg.synthesis_params();
    batch
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SYNTH_SALT);
            rng.set_stream((step * cfg.batch_size + slot) as u64);
            let res = cutpaste_plus(positives.images[i], &positives.fg[i], &mut rng, &params)?;
            Ok(Negative {
                features: extractor.extract(&res.negative)?,
                mask: res.feature_mask,
            })
        })
        .collect()
}

/// Train a flow (and heads, for the full objective) on defect-free images.
pub fn train(cfg: &RunConfig, images: &[&Image]) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    if images.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training images",
            cfg.batch_size,
            images.len()
        )));
    }
    let extractor = cfg.extractor()?;
    let features = images
        .par_iter()
        .map(|img| extractor.extract(img))
        .collect::<Result<Vec<_>>>()?;
    let shape = features[0].shape();
    for f in &features {
        f.expect_shape(shape)?;
    }
    let fg = match cfg.objective {
        Objective::Full => images
            .par_iter()
            .map(|img| foreground_mask(&ft_saliency(img)))
            .collect(),
        Objective::MlOnly => Vec::new(),
    };
    let positives = Positives {
        images: images.to_vec(),
        features,
        fg,
    };

    let mut flow = FlowModel::from_config(flow_config(cfg, &positives.features[0])?, cfg.seed);
    let mut heads = Heads::new(shape[0], cfg.proj_dim(), cfg.seed ^ HEAD_SALT);
    let mut flow_opt = Adam::new(cfg.lr);
    let mut head_opt = Adam::new(cfg.lr);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut clamped_steps = 0;
    let mut calibrated = None;

    for step in 0..cfg.steps {
        let batch = index::sample(&mut batch_rng, images.len(), cfg.batch_size).into_vec();
        let neg = match cfg.objective {
            Objective::Full => synthesize_negatives(cfg, &extractor, &positives, step, &batch)?,
            Objective::MlOnly => Vec::new(),
        };
        let pos: Vec<&FeatureMap> = batch.iter().map(|&i| &positives.features[i]).collect();
        let out = train_step(cfg, step, &flow, &heads, calibrated, &pos, &neg)?;
        if cfg.objective == Objective::Full {
            calibrated.get_or_insert(LossWeights {
                lambda1: out.row.lambda1,
                lambda2: out.row.lambda2,
                tau: cfg.tau,
            });
        }
        flow_opt.step(&mut flow.parameters_mut(), &out.flow_grads);
        if !out.head_grads.is_empty() {
            head_opt.step(&mut heads.parameters_mut(), &out.head_grads);
        }
        clamped_steps += out.clamped as usize;
        log.push(out.row);
    }
    let heads = (cfg.objective == Objective::Full).then_some(heads);
    Ok(TrainReport {
        checkpoint: Checkpoint { flow, heads },
        log,
        clamped_steps,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Score map and latent for one input.
#[derive(Clone, Debug)]
pub struct Scored {
    pub map: ScoreMap,
    pub z: Vec<f64>,
}

/// Score precomputed feature maps at image size `out_h × out_w`. Only the flow is used.
pub fn score_features(
    flow: &FlowModel,
    features: &[FeatureMap],
    out: (usize, usize),
    cfg: &ScoreConfig,
) -> Result<Vec<Scored>> {
    let fc = &flow.config;
    features
        .par_iter()
        .map(|fm| {
            fm.expect_shape([fc.channels, fc.height, fc.width])?;
            let x = Tensor::new(vec![1, fm.channels, fm.height, fm.width], fm.data.clone())?;
            let res = flow.forward(&x)?;
            let z = res.z.into_data();
            let map = score_map(&z, fm.shape(), out.0, out.1, cfg)?;
            Ok(Scored { map, z })
        })
        .collect()
}

/// Extract features with the run's extractor and score each image.
pub fn score_images(cfg: &RunConfig, flow: &FlowModel, images: &[&Image]) -> Result<Vec<Scored>> {
    let extractor = cfg.extractor()?;
    images
        .par_iter()
        .map(|img| {
            let fm = extractor.extract(img)?;
            let mut s = score_features(
                flow,
                std::slice::from_ref(&fm),
                (img.height, img.width),
                &cfg.score,
            )?;
            Ok(s.remove(0))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub image_auroc: f64,
    /// Absent when no test pixel is marked defective.
    pub pixel_auroc: Option<f64>,
    pub n_images: usize,
    pub n_defective: usize,
    pub n_pixels: usize,
    /// How pixels enter the pixel AUROC; always `global`: one ranking over
    /// every pixel of every test image.
    pub pixel_pooling: String,
}

impl Metrics {
    pub fn summary(&self) -> String {
        let mut s = format!("image AUROC {:.4}", self.image_auroc);
        if let Some(p) = self.pixel_auroc {
            let _ = write!(s, "\npixel AUROC {p:.4}");
        }
        s
    }

    /// `metric,value` rows; absent values are left empty.
    pub fn to_csv(&self) -> String {
        let pixel = self.pixel_auroc.map_or(String::new(), |p| p.to_string());
        format!(
            "metric,value\nimage_auroc,{}\npixel_auroc,{pixel}\nn_images,{}\nn_defective,{}\nn_pixels,{}\npixel_pooling,{}\n",
            self.image_auroc, self.n_images, self.n_defective, self.n_pixels, self.pixel_pooling
        )
    }
}

/// Image AUROC from image scores and, when masks are given, pixel AUROC
/// pooled over every pixel of every image.
pub fn compute_metrics(image: &LabeledScores, pixels: Option<&LabeledScores>) -> Result<Metrics> {
    let image_auroc = auroc(image)?;
    let pixel_auroc = match pixels {
        Some(p) => match auroc(p) {
            Ok(v) => Some(v),
            Err(Error::SingleClass { .. }) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(Metrics {
        image_auroc,
        pixel_auroc,
        n_images: image.labels.len(),
        n_defective: image.labels.iter().filter(|&&l| l).count(),
        n_pixels: pixels.map_or(0, |p| p.labels.len()),
        pixel_pooling: "global".into(),
    })
}

pub fn evaluate(samples: &[Sample], scored: &[Scored]) -> Result<Metrics> {
    let mut image = LabeledScores::default();
    let mut pixels = LabeledScores::default();
    for (s, sc) in samples.iter().zip(scored) {
        image.push(sc.map.image_score, s.defective);
        pixels.extend(&sc.map.pixels, &s.mask);
    }
    compute_metrics(&image, Some(&pixels))
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub train: TrainReport,
    pub metrics: Metrics,
    pub scored: Vec<Scored>,
    pub histogram: Histogram,
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn create(&self) -> Result<()> {
        for d in ["checkpoints", "logs", "scores/pixels", "heatmaps"] {
            std::fs::create_dir_all(self.root.join(d))?;
        }
        Ok(())
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/final.clfw")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("logs/train.csv")
    }

    pub fn image_scores(&self) -> PathBuf {
        self.root.join("scores/image_scores.csv")
    }

    pub fn pixel_scores(&self, name: &str) -> PathBuf {
        self.root.join("scores/pixels").join(format!("{name}.clft"))
    }

    pub fn heatmap(&self, name: &str) -> PathBuf {
        self.root.join("heatmaps").join(format!("{name}.png"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn histogram(&self) -> (PathBuf, PathBuf) {
        (
            self.root.join("logs/latent_hist.csv"),
            self.root.join("logs/latent_hist.png"),
        )
    }
}

/// Write `metrics.json` and `metrics.csv`.
pub fn write_metrics(layout: &RunLayout, metrics: &Metrics) -> Result<()> {
    std::fs::create_dir_all(&layout.root)?;
    std::fs::write(layout.metrics(), serde_json::to_string_pretty(metrics)?)?;
    std::fs::write(layout.metrics_csv(), metrics.to_csv())?;
    Ok(())
}

/// Persist a finished training run.
pub fn write_training(layout: &RunLayout, cfg: &RunConfig, report: &TrainReport) -> Result<()> {
    layout.create()?;
    std::fs::write(layout.config(), cfg.to_json())?;
    save_checkpoint(&report.checkpoint, &layout.checkpoint())?;
    std::fs::write(layout.train_log(), log_csv(&report.log))?;
    Ok(())
}

/// Persist per-image scores, pixel maps and optional heat-map overlays.
pub fn write_scores(
    layout: &RunLayout,
    cfg: &RunConfig,
    samples: &[Sample],
    scored: &[Scored],
) -> Result<()> {
    layout.create()?;
    let mut csv = String::from("name,label,score\n");
    for (s, sc) in samples.iter().zip(scored) {
        let _ = writeln!(
            csv,
            "{},{},{}",
            s.name, s.defective as u8, sc.map.image_score
        );
    }
    std::fs::write(layout.image_scores(), csv)?;
    samples
        .par_iter()
        .zip(scored)
        .try_for_each(|(s, sc)| -> Result<()> {
            let m = &sc.map;
            let fm = FeatureMap::new(1, m.height, m.width, 1, m.pixels.clone())?;
            save_features(&fm, &layout.pixel_scores(&s.name))?;
            if cfg.heatmaps {
                heatmap_overlay(&s.image, &m.pixels).save(layout.heatmap(&s.name))?;
            }
            Ok(())
        })
}

/// Latent coordinates of the defect-free test images.
fn normal_latents(samples: &[Sample], scored: &[Scored]) -> Vec<f64> {
    samples
        .iter()
        .zip(scored)
        .filter(|(s, _)| !s.defective)
        .flat_map(|(_, sc)| sc.z.iter().copied())
        .collect()
}

/// Train, score the test split and evaluate; writes the run layout when `out` is given.
pub fn run_experiment(
    cfg: &RunConfig,
    data: &Dataset,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    let images: Vec<&Image> = data.train.iter().map(|s| &s.image).collect();
    let train_report = train(cfg, &images)?;
    let flow = &train_report.checkpoint.flow;
    let test_images: Vec<&Image> = data.test.iter().map(|s| &s.image).collect();
    let scored = score_images(cfg, flow, &test_images)?;
    let metrics = evaluate(&data.test, &scored)?;
    let latents = normal_latents(&data.test, &scored);
    let histogram = match out {
        Some(dir) => {
            let layout = RunLayout::new(dir);
            write_training(&layout, cfg, &train_report)?;
            write_scores(&layout, cfg, &data.test, &scored)?;
            write_metrics(&layout, &metrics)?;
            let (csv, png) = layout.histogram();
            emit_latent_histogram(&latents, &cfg.histogram, &csv, &png)?
        }
        None => Histogram::build(&latents, &cfg.histogram)?,
    };
    Ok(ExperimentReport {
        train: train_report,
        metrics,
        scored,
        histogram,
    })
}

/// Load `config.json` and the final checkpoint of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Checkpoint)> {
    let layout = RunLayout::new(dir);
    Ok((
        RunConfig::load(&layout.config())?,
        load_checkpoint(&layout.checkpoint())?,
    ))
}

/// Score the test split of `data` with a trained run and write the scores.
pub fn infer_run(dir: &Path, data: &Dataset) -> Result<Vec<Scored>> {
    let (cfg, ckpt) = load_run(dir)?;
    if data.test.is_empty() {
        return Err(Error::Config("dataset has no test images".into()));
    }
    let images: Vec<&Image> = data.test.iter().map(|s| &s.image).collect();
    let scored = score_images(&cfg, &ckpt.flow, &images)?;
    write_scores(&RunLayout::new(dir), &cfg, &data.test, &scored)?;
    Ok(scored)
}

/// Read `name,label,score` rows.
pub fn read_image_scores(path: &Path) -> Result<(Vec<String>, LabeledScores)> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut names = Vec::new();
    let mut ls = LabeledScores::default();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || {
            Error::Config(format!(
                "{}:{}: expected name,label,score",
                path.display(),
                n + 1
            ))
        };
        if cols.len() != 3 {
            return Err(bad());
        }
        let label = match cols[1].trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        let score: f64 = cols[2].trim().parse().map_err(|_| bad())?;
        names.push(cols[0].to_string());
        ls.push(score, label);
    }
    Ok((names, ls))
}

/// Evaluate a score file. With `data`, pixel AUROC is computed from the
/// stored pixel maps next to the score file and the dataset's masks.
pub fn evaluate_scores(scores: &Path, data: Option<&Dataset>) -> Result<Metrics> {
    let (names, image) = read_image_scores(scores)?;
    let Some(data) = data else {
        return compute_metrics(&image, None);
    };
    let pixel_dir = scores.parent().unwrap_or(Path::new(".")).join("pixels");
    let mut pixels = LabeledScores::default();
    for name in &names {
        let sample = data
            .test
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::Config(format!("no test image named {name}")))?;
        let fm = load_features(&pixel_dir.join(format!("{name}.clft")))?;
        fm.expect_shape([1, sample.image.height, sample.image.width])?;
        pixels.extend(&fm.data, &sample.mask);
    }
    compute_metrics(&image, Some(&pixels))
}

/// Emit the latent histogram of a run over the defect-free test images
/// (or the training images when there are none).
pub fn plot_run(dir: &Path, data: &Dataset) -> Result<Histogram> {
    let (cfg, ckpt) = load_run(dir)?;
    let pool: Vec<&Sample> = if data.test.iter().any(|s| !s.defective) {
        data.test.iter().filter(|s| !s.defective).collect()
    } else {
        data.train.iter().collect()
    };
    let images: Vec<&Image> = pool.iter().map(|s| &s.image).collect();
    let scored = score_images(&cfg, &ckpt.flow, &images)?;
    let latents: Vec<f64> = scored.iter().flat_map(|s| s.z.iter().copied()).collect();
    let layout = RunLayout::new(dir);
    layout.create()?;
    let (csv, png) = layout.histogram();
    emit_latent_histogram(&latents, &cfg.histogram, &csv, &png)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub negative: String,
    pub mask: String,
    pub region: BoxRegion,
    pub source: (usize, usize),
    pub area_ratio: f64,
    pub aspect_ratio: f64,
    pub jitter: Option<[f32; 3]>,
    pub foreground_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub params: SynthesisParams,
    pub entries: Vec<ManifestEntry>,
}

/// Synthesize one negative per image in `input`, writing `negatives/`,
/// `masks/` and `manifest.json` under `output`.
pub fn synthesize_dir(
    input: &Path,
    output: &Path,
    seed: u64,
    params: &SynthesisParams,
) -> Result<Manifest> {
    let paths = list_pngs(input)?;
    std::fs::create_dir_all(output.join("negatives"))?;
    std::fs::create_dir_all(output.join("masks"))?;
    let entries = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let img = Image::load(p)?;
            let fg = foreground_mask(&ft_saliency(&img));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SYNTH_SALT);
            rng.set_stream(i as u64);
            let res = cutpaste_plus(&img, &fg, &mut rng, params)?;
            let name = stem(p);
            let negative = format!("negatives/{name}.png");
            let mask = format!("masks/{name}_mask.png");
            res.negative.save(&output.join(&negative))?;
            save_mask(res.mask.bits(), img.height, img.width, &output.join(&mask))?;
            Ok(ManifestEntry {
                image: p
                    .file_name()
                    .and_then(|f| f.to_str())
                    .unwrap_or_default()
                    .to_string(),
                negative,
                mask,
                region: res.region,
                source: res.source,
                area_ratio: res.area_ratio,
                aspect_ratio: res.aspect_ratio,
                jitter: res.jitter,
                foreground_fallback: fg.fallback,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed,
        params: params.clone(),
        entries,
    };
    std::fs::write(
        output.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GeneratorSpec};

    fn tiny() -> (RunConfig, Dataset) {
        let cfg = RunConfig {
            steps: 3,
            batch_size: 2,
            extractor: ExtractorSpec {
                channels: 4,
                ..Default::default()
            },
            flow: FlowSettings {
                n_blocks: 2,
                ..Default::default()
            },
            heatmaps: false,
            ..Default::default()
        };
        let data = generate(&GeneratorSpec {
            train: 4,
            test: 4,
            ..Default::default()
        })
        .unwrap();
        (cfg, data)
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        assert!(matches!(
            RunConfig::from_json(r#"{"stepz": 3}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"tau": 0.7}"#),
            Err(Error::Config(_))
        ));
        let cfg = RunConfig::from_json(r#"{"steps": 5, "objective": "ml_only"}"#).unwrap();
        assert_eq!((cfg.steps, cfg.objective), (5, Objective::MlOnly));
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn tiny_run_logs_every_step() {
        let (cfg, data) = tiny();
        let rep = run_experiment(&cfg, &data, None).unwrap();
        assert_eq!(rep.train.log.len(), 3);
        assert!(rep.train.log.iter().all(|r| r.total.is_finite()));
        assert!(rep.train.checkpoint.heads.is_some());
        assert!((0.0..=1.0).contains(&rep.metrics.image_auroc));
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "name,label,score\na,1,0.9\nb,0,0.1\n").unwrap();
        let (names, ls) = read_image_scores(&p).unwrap();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(evaluate_scores(&p, None).unwrap().image_auroc, 1.0);
        std::fs::write(&p, "name,label,score\na,yes,0.9\n").unwrap();
        assert!(read_image_scores(&p).is_err());
        assert_eq!(ls.labels, [true, false]);
    }
}
