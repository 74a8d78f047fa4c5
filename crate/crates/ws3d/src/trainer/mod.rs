//! The end-to-end optimization loop and evaluation.
//!
//! Training runs in two stages on 1-based epochs: a warmup phase where only
//! the confidence-weighted segmentation loss is optimized, then a
//! mask-guided phase where each scan additionally generates prompts from its
//! current prediction, queries the mask oracle, re-projects the masks to 3D
//! groups, and adds the contrastive and background losses. Gradients are
//! batch-averaged in dataset-index order and applied with AdamW, so a run is
//! a pure function of (dataset, config): identical seeds give bit-identical
//! checkpoints.
//!
//! Oracle failures never abort training: the view contributes no mask
//! guidance for that round and the failure is recorded as an incident.
//! Non-finite losses or parameters do abort, after dumping the diverged
//! state for inspection.

pub mod interpolate;
pub mod metrics;
pub mod optim;

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use crate::camera::{default_cameras, render, Camera, RenderedView};
use crate::error::{Error, Result};
use crate::losses::{
    background_loss, contrastive_fg_indexed, coseg_loss, total_loss, CosegNorm, LossConfig,
    LossParts, LossReport,
};
use crate::mask_oracle::{
    background_mask, ExternalOracle, GtOracle, MaskOracle, OracleNoiseConfig,
};
use crate::mrl::{gather_group_embeddings, reproject_background, reproject_mask_groups};
use crate::prompter::{filter_confident, generate_prompts, partition_subgroups, plant_outliers};
use crate::rng::{self, salt};
use crate::segnet::{
    backward, build_neighbor_graph, forward, forward_traced, init_params, save_params, NetDims,
    NeighborGraph, NetworkParams, PredictionGrads, INPUT_DIM,
};
use crate::synthgen::{sample_sparse_labels, LabeledScan, SparseLabelMask};
use crate::trainer::interpolate::knn_interpolate;
use crate::trainer::metrics::{evaluate_confusion, ClassBuckets, ConfusionMatrix, Metrics};
use crate::trainer::optim::{adamw_step, AdamW, AdamWState};

/// One scan of the training or test set, with its sparse labels.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub scan: LabeledScan,
    pub sparse: SparseLabelMask,
}

/// Samples `per_tooth` labeled points for every scan, each from its own
/// seed stream so paired runs with the same seed label the same points.
pub fn attach_sparse_labels(
    scans: Vec<(String, LabeledScan)>,
    per_tooth: usize,
    seed: u64,
) -> Result<Vec<DatasetEntry>> {
    scans
        .into_iter()
        .enumerate()
        .map(|(i, (id, scan))| {
            let sparse = sample_sparse_labels(&scan, per_tooth, rng::derive(seed, i as u64))?;
            Ok(DatasetEntry { id, scan, sparse })
        })
        .collect()
}

/// How group prompts are produced from the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Filter each argmax group to its confident members before averaging.
    #[default]
    Cpg,
    /// Plain group averaging, the ablation baseline.
    Agg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OracleKind {
    GroundTruth,
    External { command: Vec<String>, workdir: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub source: OracleKind,
    /// Noise applied by the ground-truth oracle; must stay zero for an
    /// external oracle, whose noise is its own.
    pub noise: OracleNoiseConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            source: OracleKind::GroundTruth,
            noise: OracleNoiseConfig::default(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if matches!(self.source, OracleKind::External { .. }) && !self.noise.is_noiseless() {
            return Err(Error::Config(
                "oracle noise applies to the ground-truth oracle only".into(),
            ));
        }
        if let OracleKind::External { command, .. } = &self.source {
            if command.is_empty() {
                return Err(Error::Config("external oracle command is empty".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Box<dyn MaskOracle> {
        match &self.source {
            OracleKind::GroundTruth => Box::new(GtOracle { noise: self.noise }),
            OracleKind::External { command, workdir } => Box::new(ExternalOracle {
                command: command.clone(),
                workdir: workdir.clone(),
            }),
        }
    }
}

/// Corrupts prediction groups before prompt generation: the farthest
/// non-member points join each group at the given forced confidence. The
/// stress test for confidence filtering.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedOutliersConfig {
    pub per_group: usize,
    pub confidence: f64,
}

impl Default for PlantedOutliersConfig {
    fn default() -> Self {
        PlantedOutliersConfig {
            per_group: 8,
            confidence: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Labeled points sampled per tooth class on each scan.
    pub labels_per_tooth: usize,
    pub loss: LossConfig,
    pub coseg_norm: CosegNorm,
    /// Epochs with the confidence pathway held fixed (no gradient flows
    /// through the per-point confidence). With fresh weights the mean
    /// cross entropy starts near ln(num_classes), which for more than a
    /// handful of classes puts the optimal confidence at exactly zero;
    /// released too early the confidence saturates there and the
    /// class-weighted gradients die with it. Holding it lets the
    /// classifier first pull the labeled cross entropy under 2, after
    /// which the closed-form optimum is positive and the weighting is
    /// self-stabilizing.
    pub conf_freeze_epochs: usize,
    pub hidden_dim: usize,
    pub conf_hidden: usize,
    pub embed_dim: usize,
    pub k_neighbors: usize,
    /// Cameras rendered per scan.
    pub views: usize,
    /// Merge mask groups across views instead of averaging per-view losses.
    pub union_views: bool,
    pub image_height: usize,
    pub image_width: usize,
    pub splat_radius: usize,
    pub prompt_mode: PromptMode,
    pub oracle: OracleConfig,
    /// Subsample cap per foreground group in the contrastive loss.
    pub group_cap: usize,
    /// Regenerate prompts and masks every n-th use of a scan; 1 means every
    /// batch, larger values reuse the cached re-projected groups.
    pub mask_refresh: usize,
    pub planted_outliers: Option<PlantedOutliersConfig>,
    /// Where diverged state is dumped; no dump when unset.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 5e-4,
            weight_decay: 0.05,
            seed: 0,
            labels_per_tooth: 1,
            loss: LossConfig::default(),
            coseg_norm: CosegNorm::default(),
            conf_freeze_epochs: 20,
            hidden_dim: 64,
            conf_hidden: 32,
            embed_dim: 32,
            k_neighbors: 16,
            views: 1,
            union_views: false,
            image_height: 128,
            image_width: 128,
            splat_radius: 1,
            prompt_mode: PromptMode::default(),
            oracle: OracleConfig::default(),
            group_cap: 64,
            mask_refresh: 1,
            planted_outliers: None,
            dump_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("labels_per_tooth", self.labels_per_tooth),
            ("views", self.views),
            ("group_cap", self.group_cap),
            ("mask_refresh", self.mask_refresh),
            ("splat_radius + 1", self.splat_radius + 1),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(Error::Config(format!(
                "view size {}x{} is too small to render into",
                self.image_height, self.image_width
            )));
        }
        self.loss.validate()?;
        self.oracle.validate()?;
        self.optimizer().validate()?;
        if let Some(p) = &self.planted_outliers {
            if !(0.0..=1.0).contains(&p.confidence) || !p.confidence.is_finite() {
                return Err(Error::Config(format!(
                    "planted outlier confidence must be within [0, 1], got {}",
                    p.confidence
                )));
            }
        }
        // Network shape errors surface via NetDims, with a placeholder class
        // count satisfied by any real dataset.
        self.net_dims(2).validate()
    }

    pub fn net_dims(&self, num_classes: usize) -> NetDims {
        NetDims {
            input_dim: INPUT_DIM,
            hidden_dim: self.hidden_dim,
            conf_hidden: self.conf_hidden,
            embed_dim: self.embed_dim,
            num_classes,
            k_neighbors: self.k_neighbors,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

/// Final parameters plus the full training log and any non-fatal incidents
/// (oracle failures) in occurrence order.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<LossReport>,
    pub incidents: Vec<String>,
}

struct PreparedScan {
    graph: NeighborGraph,
    views: Vec<RenderedView>,
}

/// Re-projected mask evidence for one scan: one unit per view that produced
/// prompts and masks, or a single merged unit in union mode.
struct MaskGuidance {
    units: Vec<GuidanceUnit>,
}

struct GuidanceUnit {
    fg: Vec<(u16, Vec<usize>)>,
    bg: Vec<usize>,
}

pub fn train(dataset: &[DatasetEntry], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let num_classes = validate_dataset(dataset)?;
    let dims = config.net_dims(num_classes);
    dims.validate()?;

    let mut params = init_params(&dims, config.seed);
    let opt = config.optimizer();
    let mut state = AdamWState::new(params.values.len());
    let oracle = config.oracle.build();
    let guided = config.loss.lambda2 > 0.0 || config.loss.lambda3 > 0.0;

    let prepared: Vec<PreparedScan> = dataset
        .iter()
        .map(|entry| {
            let graph = build_neighbor_graph(&entry.scan, config.k_neighbors);
            let views = default_cameras(
                &entry.scan,
                config.views,
                config.image_height,
                config.image_width,
            )?
            .iter()
            .map(|cam| render(&entry.scan, cam, config.splat_radius))
            .collect();
            Ok(PreparedScan { graph, views })
        })
        .collect::<Result<_>>()?;

    let mut log = Vec::new();
    let mut incidents = Vec::new();
    let mut guidance_cache: Vec<Option<MaskGuidance>> = (0..dataset.len()).map(|_| None).collect();
    let mut guidance_uses = vec![0usize; dataset.len()];

    for epoch in 1..=config.epochs {
        let order = epoch_order(config.seed, epoch, dataset.len());
        let mrl_now = guided && epoch > config.loss.warmup_epochs;
        let conf_frozen = epoch <= config.conf_freeze_epochs;
        for batch in order.chunks(config.batch_size) {
            let mut grad_sum = vec![0.0; params.values.len()];
            for &si in batch {
                let entry = &dataset[si];
                let prep = &prepared[si];
                let (pred, trace) = forward_traced(&entry.scan, &prep.graph, &params)?;

                let (coseg, coseg_grads) = coseg_loss(
                    &pred,
                    &entry.scan.class_labels,
                    &entry.sparse,
                    config.coseg_norm,
                )?;
                let mut combined = PredictionGrads::zeros_like(&pred);
                combined.accumulate(config.loss.lambda1, &coseg_grads);
                let mut parts = LossParts {
                    coseg,
                    ..LossParts::default()
                };
                let mut fg_degenerate = true;
                let mut bg_degenerate = true;

                if mrl_now {
                    if guidance_cache[si].is_none()
                        || guidance_uses[si] % config.mask_refresh == 0
                    {
                        guidance_cache[si] =
                            Some(mask_guidance(entry, prep, &pred, config, oracle.as_ref(), &mut incidents)?);
                    }
                    guidance_uses[si] += 1;
                    let guidance = guidance_cache[si].as_ref().expect("filled above");
                    if !guidance.units.is_empty() {
                        let w = 1.0 / guidance.units.len() as f64;
                        for (vi, unit) in guidance.units.iter().enumerate() {
                            let sub_seed = guidance_seed(config.seed, epoch, si, vi);
                            let capped =
                                gather_group_embeddings(&pred, &unit.fg, config.group_cap, sub_seed)?;
                            let (fg, fg_grads, fg_deg) =
                                contrastive_fg_indexed(&pred, &capped, config.loss.temperature)?;
                            let (bg, bg_grads, bg_deg) = background_loss(&pred, &unit.bg)?;
                            parts.fg += w * fg;
                            parts.bg += w * bg;
                            combined.accumulate(config.loss.lambda2 * w, &fg_grads);
                            combined.accumulate(config.loss.lambda3 * w, &bg_grads);
                            fg_degenerate &= fg_deg;
                            bg_degenerate &= bg_deg;
                        }
                    }
                }

                let total = total_loss(&parts, epoch, &config.loss);
                if ![parts.coseg, parts.fg, parts.bg, total.value]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(dump_divergence(config, epoch, &entry.id, &parts, &params));
                }
                if conf_frozen {
                    combined.d_confidence.fill(0.0);
                }
                for (a, b) in grad_sum
                    .iter_mut()
                    .zip(backward(&params, &prep.graph, &trace, &combined))
                {
                    *a += b;
                }
                log.push(LossReport {
                    epoch,
                    scan: entry.id.clone(),
                    coseg: parts.coseg,
                    fg: parts.fg,
                    bg: parts.bg,
                    total: total.value,
                    mrl_active: total.mrl_active,
                    fg_degenerate,
                    bg_degenerate,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            adamw_step(&mut params.values, &grad_sum, &mut state, &opt);
            if params.values.iter().any(|v| !v.is_finite()) {
                let last = log.last().expect("batch logged at least one scan");
                let parts = LossParts {
                    coseg: last.coseg,
                    fg: last.fg,
                    bg: last.bg,
                };
                return Err(dump_divergence(config, epoch, &last.scan, &parts, &params));
            }
        }
    }

    Ok(TrainOutcome {
        params,
        log,
        incidents,
    })
}

/// Deterministic scan order for one epoch.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(rng::derive(
        rng::derive(seed, salt::EPOCH_ORDER),
        epoch as u64,
    ));
    order.shuffle(&mut r);
    order
}

/// Seed stream for group subsampling, distinct per (epoch, scan, view).
fn guidance_seed(seed: u64, epoch: usize, scan: usize, view: usize) -> u64 {
    rng::derive(
        rng::derive(rng::derive(seed, epoch as u64), scan as u64),
        view as u64,
    )
}

/// One prompt-oracle-reproject round for a scan. Views without prompts, and
/// views whose oracle call failed, contribute no unit; a failed call is
/// recorded rather than propagated so training continues on the remaining
/// evidence.
fn mask_guidance(
    entry: &DatasetEntry,
    prep: &PreparedScan,
    pred: &crate::segnet::Prediction,
    config: &TrainConfig,
    oracle: &dyn MaskOracle,
    incidents: &mut Vec<String>,
) -> Result<MaskGuidance> {
    let cameras: Vec<Camera> = prep.views.iter().map(|v| v.camera.clone()).collect();
    let mut subgroups = partition_subgroups(pred);
    let mut confidence = pred.confidence.clone();
    if let Some(p) = &config.planted_outliers {
        plant_outliers(
            &mut subgroups,
            &mut confidence,
            &entry.scan,
            p.per_group,
            p.confidence,
        );
    }
    if config.prompt_mode == PromptMode::Cpg {
        subgroups = subgroups
            .iter()
            .map(|s| filter_confident(s, &confidence, config.loss.tau))
            .collect();
    }
    let prompt_set = generate_prompts(&subgroups, &entry.scan, &cameras)?;

    let mut units = Vec::new();
    for (vi, view) in prep.views.iter().enumerate() {
        let prompts = prompt_set.for_view(vi);
        if prompts.is_empty() {
            continue;
        }
        let masks = match oracle.segment_all(view, &prompts) {
            Ok(m) => m,
            Err(e) => {
                let note = format!("oracle failed on scan {} view {vi}: {e}", entry.id);
                log::warn!("{note}");
                incidents.push(note);
                continue;
            }
        };
        let fg = reproject_mask_groups(&masks, view)?;
        let bg = reproject_background(&background_mask(&masks), view, &fg);
        units.push(GuidanceUnit { fg, bg });
    }
    if config.union_views && units.len() > 1 {
        units = vec![merge_units(&units)];
    }
    Ok(MaskGuidance { units })
}

/// Merges per-view units into one: a point claimed in several views keeps
/// its first claim in view order, and the background is the union of view
/// backgrounds minus every foreground claim.
fn merge_units(units: &[GuidanceUnit]) -> GuidanceUnit {
    let mut claim: HashMap<usize, u16> = HashMap::new();
    let mut classes: Vec<u16> = Vec::new();
    for unit in units {
        for (class, indices) in &unit.fg {
            if !classes.contains(class) {
                classes.push(*class);
            }
            for &i in indices {
                claim.entry(i).or_insert(*class);
            }
        }
    }
    classes.sort_unstable();
    let mut fg: Vec<(u16, Vec<usize>)> = classes.into_iter().map(|c| (c, Vec::new())).collect();
    let mut sorted_claims: Vec<(usize, u16)> = claim.iter().map(|(&i, &c)| (i, c)).collect();
    sorted_claims.sort_unstable();
    for (i, c) in sorted_claims {
        let slot = fg.iter().position(|(class, _)| *class == c).expect("class listed");
        fg[slot].1.push(i);
    }

    let mut bg: Vec<usize> = units
        .iter()
        .flat_map(|u| u.bg.iter().copied())
        .filter(|i| !claim.contains_key(i))
        .collect();
    bg.sort_unstable();
    bg.dedup();
    GuidanceUnit { fg, bg }
}

/// All scans must agree on the class count and carry labels.
fn validate_dataset(dataset: &[DatasetEntry]) -> Result<usize> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Data("training dataset is empty".into()))?;
    let num_classes = first.scan.num_classes;
    for entry in dataset {
        entry.scan.validate()?;
        if entry.scan.num_classes != num_classes {
            return Err(Error::Data(format!(
                "scan {} has {} classes, expected {num_classes}",
                entry.id, entry.scan.num_classes
            )));
        }
        if entry.sparse.indices.is_empty() {
            return Err(Error::Supervision(format!(
                "scan {} has no sparse labels",
                entry.id
            )));
        }
    }
    Ok(num_classes)
}

/// Writes the diverged state (when a dump directory is set) and produces
/// the abort error.
fn dump_divergence(
    config: &TrainConfig,
    epoch: usize,
    scan: &str,
    parts: &LossParts,
    params: &NetworkParams,
) -> Error {
    let mut note = format!(
        "non-finite training state at epoch {epoch} on scan {scan} \
         (coseg {}, fg {}, bg {})",
        parts.coseg, parts.fg, parts.bg
    );
    if let Some(dir) = &config.dump_dir {
        let dump = || -> Result<()> {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let report = serde_json::json!({
                "epoch": epoch,
                "scan": scan,
                "coseg": parts.coseg,
                "fg": parts.fg,
                "bg": parts.bg,
            });
            let path = dir.join("divergence.json");
            std::fs::write(&path, report.to_string())
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            save_params(params, &dir.join("diverged_params.bin"))
        };
        match dump() {
            Ok(()) => note.push_str(&format!("; state dumped to {}", dir.display())),
            Err(e) => note.push_str(&format!("; state dump failed: {e}")),
        }
    }
    Error::Numeric(note)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate on this many points per scan, then upsample the logits back
    /// to the full cloud; `None` runs the network on every point.
    pub subsample: Option<usize>,
    pub interpolate_k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            subsample: None,
            interpolate_k: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanEval {
    pub id: String,
    pub miou: f64,
    pub mean_dsc: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub per_scan: Vec<ScanEval>,
}

pub fn evaluate(
    params: &NetworkParams,
    dataset: &[DatasetEntry],
    config: &EvalConfig,
) -> Result<EvalOutcome> {
    let scans: Vec<(&str, &LabeledScan)> = dataset
        .iter()
        .map(|e| (e.id.as_str(), &e.scan))
        .collect();
    evaluate_scans(params, &scans, config)
}

/// [`evaluate`] for bare scans; sparse labels play no part in evaluation.
pub fn evaluate_scans(
    params: &NetworkParams,
    scans: &[(&str, &LabeledScan)],
    config: &EvalConfig,
) -> Result<EvalOutcome> {
    if scans.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    if config.interpolate_k == 0 {
        return Err(Error::Config("interpolate_k must be at least 1".into()));
    }
    if config.subsample == Some(0) {
        return Err(Error::Config("subsample must be at least 1".into()));
    }
    let num_classes = params.dims.num_classes;
    let buckets = ClassBuckets::dental_default(num_classes - 1);
    let mut confusion = ConfusionMatrix::new(num_classes);
    let mut per_scan = Vec::with_capacity(scans.len());
    for (si, (id, scan)) in scans.iter().enumerate() {
        if scan.num_classes != num_classes {
            return Err(Error::Config(format!(
                "scan {id} has {} classes but the checkpoint expects {num_classes}",
                scan.num_classes
            )));
        }
        let predicted = predict_classes(params, scan, config, si)?;
        let mut local = ConfusionMatrix::new(num_classes);
        for (&gt, &pr) in scan.class_labels.iter().zip(&predicted) {
            local.add(gt, pr);
        }
        let local_metrics = evaluate_confusion(&local, &buckets)?;
        per_scan.push(ScanEval {
            id: id.to_string(),
            miou: local_metrics.miou,
            mean_dsc: local_metrics.mean_dsc,
            accuracy: local_metrics.accuracy,
        });
        confusion.merge(&local);
    }
    let metrics = evaluate_confusion(&confusion, &buckets)?;
    Ok(EvalOutcome {
        metrics,
        confusion,
        per_scan,
    })
}

/// Argmax classes, through the subsample-and-upsample path when configured.
fn predict_classes(
    params: &NetworkParams,
    scan: &LabeledScan,
    config: &EvalConfig,
    scan_idx: usize,
) -> Result<Vec<u16>> {
    match config.subsample {
        Some(m) if m < scan.len() => {
            let mut r = rng::seeded(rng::derive(
                rng::derive(config.seed, salt::EVAL_SUBSAMPLE),
                scan_idx as u64,
            ));
            let mut picks: Vec<usize> = rand::seq::index::sample(&mut r, scan.len(), m)
                .into_iter()
                .collect();
            picks.sort_unstable();
            let sub = subset_scan(scan, &picks);
            let graph = build_neighbor_graph(&sub, params.dims.k_neighbors);
            let pred = forward(&sub, &graph, params)?;
            let sample_positions: Vec<[f64; 3]> =
                picks.iter().map(|&i| scan.position_f64(i)).collect();
            let rows: Vec<Vec<f64>> =
                (0..sub.len()).map(|i| pred.logits_row(i).to_vec()).collect();
            let queries: Vec<[f64; 3]> = (0..scan.len()).map(|i| scan.position_f64(i)).collect();
            let logits =
                knn_interpolate(&sample_positions, &rows, &queries, config.interpolate_k);
            Ok(logits.iter().map(|row| argmax_row(row)).collect())
        }
        _ => {
            let graph = build_neighbor_graph(scan, params.dims.k_neighbors);
            Ok(forward(scan, &graph, params)?.argmax_classes())
        }
    }
}

fn argmax_row(row: &[f64]) -> u16 {
    let mut best = 0usize;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best as u16
}

fn subset_scan(scan: &LabeledScan, picks: &[usize]) -> LabeledScan {
    LabeledScan {
        positions: picks.iter().map(|&i| scan.positions[i]).collect(),
        normals: scan
            .normals
            .as_ref()
            .map(|n| picks.iter().map(|&i| n[i]).collect()),
        class_labels: picks.iter().map(|&i| scan.class_labels[i]).collect(),
        instance_ids: picks.iter().map(|&i| scan.instance_ids[i]).collect(),
        num_classes: scan.num_classes,
    }
}
