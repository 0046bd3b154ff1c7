//! Loss composition, the Adam optimizer, and the two training loops:
//! colorization pretraining and weakly supervised fine-tuning with sparse
//! label propagation.
//!
//! Both loops are deterministic for a fixed config and seed: scenes are
//! visited in order, all randomness flows through seeded generators, and
//! per-point math runs in a fixed accumulation order.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::colorspace;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::metrics;
use crate::model::{
    self, backward, forward, ForwardPass, Head, ModelGrads, ModelParams, Outputs, TensorGrad,
};
use crate::pretext::{self, LocalStats};
use crate::propagation::{self, Embeddings, PropagationConfig};
use crate::spatial::{build_index, NeighborTable};
use crate::weaklabel::WeakLabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Scenes accumulated per optimizer step.
    pub batch: usize,
    pub seed: u64,
    /// Epochs before the propagation loss enters (the schedule's flat-zero
    /// phase). Setting it at or above `max_epoch` disables propagation.
    pub warmup_epoch: usize,
    /// `None`: nonlinear schedule `exp(epoch/max_epoch - 1)` after warmup.
    /// `Some(x)`: constant weight x after warmup.
    pub lambda_constant: Option<f64>,
    pub propagation: PropagationConfig,
    /// Master switch for the propagation branch (`--no-propagation`).
    pub propagation_enabled: bool,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Neighborhood size for both local statistics and the encoder.
    pub knn_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epoch: 80,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 1,
            seed: 1,
            warmup_epoch: 30,
            lambda_constant: None,
            propagation: PropagationConfig::default(),
            propagation_enabled: true,
            hidden: 32,
            embed_dim: 16,
            knn_k: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epoch == 0 {
            return Err(Error::validation("max_epoch must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::validation("batch must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::validation("adam eps must be positive"));
        }
        if self.knn_k == 0 {
            return Err(Error::validation("knn_k must be at least 1"));
        }
        if let Some(l) = self.lambda_constant {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::validation("lambda_constant must be non-negative"));
            }
        }
        self.propagation.validate()
    }
}

/// The nonlinear propagation weight: 0 through the warmup epochs, then
/// `exp(epoch / max_epoch - 1)`, reaching 1 at the final epoch.
pub fn lambda_schedule(epoch: usize, max_epoch: usize, warmup_epoch: usize) -> Result<f64> {
    if max_epoch == 0 {
        return Err(Error::validation("max_epoch must be positive"));
    }
    if epoch < warmup_epoch {
        Ok(0.0)
    } else {
        Ok((epoch as f64 / max_epoch as f64 - 1.0).exp())
    }
}

fn effective_lambda(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if !config.propagation_enabled || epoch < config.warmup_epoch {
        return Ok(0.0);
    }
    match config.lambda_constant {
        Some(x) => Ok(x),
        None => lambda_schedule(epoch, config.max_epoch, config.warmup_epoch),
    }
}

/// Mean softmax cross entropy over labeled rows. Returns the loss and its
/// gradient w.r.t. the logits: `(softmax - onehot) / M`.
pub fn loss_seg(logits: &[f64], labels: &[usize], num_classes: usize) -> Result<(f64, Vec<f64>)> {
    let m = labels.len();
    if m == 0 {
        return Err(Error::validation("no labeled points in batch"));
    }
    if logits.len() != m * num_classes {
        return Err(Error::validation(format!(
            "logit buffer holds {} values, expected {} x {}",
            logits.len(),
            m,
            num_classes
        )));
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::validation(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        let row = &logits[i * num_classes..(i + 1) * num_classes];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in row {
            sum += (l - mx).exp();
        }
        let lse = mx + sum.ln();
        loss += lse - row[y];
        let grow = &mut grad[i * num_classes..(i + 1) * num_classes];
        for (c, g) in grow.iter_mut().enumerate() {
            let p = (row[c] - lse).exp();
            *g = (p - if c == y { 1.0 } else { 0.0 }) * inv_m;
        }
    }
    Ok((loss * inv_m, grad))
}

/// `L_total = L_seg + lambda * L_sp`.
pub fn loss_total(loss_seg_val: f64, loss_sp_val: f64, lambda: f64) -> f64 {
    loss_seg_val + lambda * loss_sp_val
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelGrads,
    v: ModelGrads,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            m: ModelGrads::zeros_like(params),
            v: ModelGrads::zeros_like(params),
            t: 0,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update_tensor(
    name: &'static str,
    layer_w: &mut [f64],
    layer_b: &mut [f64],
    grad: &TensorGrad,
    m: &mut TensorGrad,
    v: &mut TensorGrad,
    lr_t: f64,
    config: &TrainConfig,
) -> Result<()> {
    if grad.w.iter().chain(grad.b.iter()).any(|g| !g.is_finite()) {
        return Err(Error::NanGradient {
            tensor: name.to_string(),
        });
    }
    let (b1, b2, eps) = (config.beta1, config.beta2, config.eps);
    for ((p, g), (mm, vv)) in layer_w
        .iter_mut()
        .zip(&grad.w)
        .zip(m.w.iter_mut().zip(v.w.iter_mut()))
    {
        *mm = b1 * *mm + (1.0 - b1) * g;
        *vv = b2 * *vv + (1.0 - b2) * g * g;
        *p -= lr_t * *mm / (vv.sqrt() + eps);
    }
    for ((p, g), (mm, vv)) in layer_b
        .iter_mut()
        .zip(&grad.b)
        .zip(m.b.iter_mut().zip(v.b.iter_mut()))
    {
        *mm = b1 * *mm + (1.0 - b1) * g;
        *vv = b2 * *vv + (1.0 - b2) * g * g;
        *p -= lr_t * *mm / (vv.sqrt() + eps);
    }
    Ok(())
}

/// One bias-corrected Adam step. Bumps the parameter version, invalidating
/// outstanding forward caches.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    // fold the bias corrections into the step size
    let lr_t = config.learning_rate * (1.0 - config.beta2.powi(t)).sqrt()
        / (1.0 - config.beta1.powi(t));
    let gs = grads.named();
    adam_update_tensor(
        "enc1",
        &mut params.enc1.w,
        &mut params.enc1.b,
        gs[0].1,
        &mut state.m.enc1,
        &mut state.v.enc1,
        lr_t,
        config,
    )?;
    adam_update_tensor(
        "enc2",
        &mut params.enc2.w,
        &mut params.enc2.b,
        gs[1].1,
        &mut state.m.enc2,
        &mut state.v.enc2,
        lr_t,
        config,
    )?;
    adam_update_tensor(
        "enc3",
        &mut params.enc3.w,
        &mut params.enc3.b,
        gs[2].1,
        &mut state.m.enc3,
        &mut state.v.enc3,
        lr_t,
        config,
    )?;
    adam_update_tensor(
        "enc4",
        &mut params.enc4.w,
        &mut params.enc4.b,
        gs[3].1,
        &mut state.m.enc4,
        &mut state.v.enc4,
        lr_t,
        config,
    )?;
    adam_update_tensor(
        "head",
        &mut params.head.w,
        &mut params.head.b,
        gs[4].1,
        &mut state.m.head,
        &mut state.v.head,
        lr_t,
        config,
    )?;
    params.version += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean primary loss of the epoch (segmentation loss for weak training,
    /// pretext loss for pretraining).
    pub loss_seg: f64,
    pub loss_sp: f64,
    pub lambda: f64,
    pub val_miou: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Scenes skipped for lack of labeled points.
    pub skipped_scenes: usize,
    /// Probabilities clamped inside the propagation log.
    pub clamped_logs: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_seg,loss_sp,lambda,val_miou,seconds\n");
        for r in &self.records {
            let val = r
                .val_miou
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.loss_seg, r.loss_sp, r.lambda, val, r.seconds
            ));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn final_val_miou(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_miou)
    }
}

// Wall-clock that degrades to zero where no monotonic clock exists
// (wasm32 builds of the browser demo).
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Everything about one scene the pretext loop needs, computed once:
/// geometry and color stats do not depend on the parameters.
pub struct PretextScene {
    pub features: Vec<[f64; 6]>,
    pub targets: Vec<[f64; 2]>,
    pub stats: LocalStats,
    pub knn: NeighborTable,
}

pub fn prepare_pretext_scene(cloud: &PointCloud, k: usize) -> Result<PretextScene> {
    let index = build_index(cloud.positions())?;
    let knn = NeighborTable::build(&index, k)?;
    let (input, targets) = colorspace::split_pretext_channels(cloud)?;
    let stats = pretext::local_color_stats_from_table(&targets, &knn, pretext::DEFAULT_EPSILON)?;
    Ok(PretextScene {
        features: input.features,
        targets,
        stats,
        knn,
    })
}

/// Colorization pretraining. Loops epochs over scenes; the history records
/// the mean pretext loss per epoch in the loss column.
pub fn train_pretext(
    scenes: &[PointCloud],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::validation("no training scenes"));
    }
    let num_classes = scenes.iter().map(|s| s.num_classes()).max().unwrap().max(2);
    let mut params = init_params(config, num_classes, Head::Pretext)?;
    let mut state = AdamState::new(&params);
    let prepared: Vec<PretextScene> = scenes
        .iter()
        .map(|s| prepare_pretext_scene(s, config.knn_k))
        .collect::<Result<_>>()?;

    let mut history = TrainHistory::default();
    for epoch in 0..config.max_epoch {
        let watch = Stopwatch::start();
        let mut epoch_loss = 0.0;
        let mut pending = ModelGrads::zeros_like(&params);
        let mut pending_count = 0usize;
        for scene in &prepared {
            let pass = forward(&params, &scene.features, &scene.knn, Head::Pretext)?;
            let Outputs::Pretext(pred) = &pass.outputs else {
                unreachable!("pretext head yields pretext outputs")
            };
            let (loss, grad) = pretext::loss_pretext(pred, &scene.targets, &scene.stats)?;
            epoch_loss += loss;
            let grads = backward(
                &params,
                &scene.features,
                &scene.knn,
                &pass.cache,
                grad.as_flattened(),
            )?;
            pending.add_assign(&grads);
            pending_count += 1;
            if pending_count == config.batch {
                pending.scale(1.0 / pending_count as f64);
                adam_step(&mut params, &pending, &mut state, config)?;
                pending = ModelGrads::zeros_like(&params);
                pending_count = 0;
            }
        }
        if pending_count > 0 {
            pending.scale(1.0 / pending_count as f64);
            adam_step(&mut params, &pending, &mut state, config)?;
        }
        history.records.push(EpochRecord {
            epoch,
            loss_seg: epoch_loss / prepared.len() as f64,
            loss_sp: 0.0,
            lambda: 0.0,
            val_miou: None,
            seconds: watch.seconds(),
        });
    }
    Ok((params, history))
}

fn init_params(config: &TrainConfig, num_classes: usize, head: Head) -> Result<ModelParams> {
    model::init_params(num_classes, config.embed_dim, config.hidden, config.seed, head)
}

/// Cached segmentation view of one scene.
pub struct SegScene {
    pub features: Vec<[f64; 6]>,
    pub knn: NeighborTable,
    /// Full ground truth (present on synthetic scenes).
    pub gt: Vec<i32>,
    /// Annotated rows (ascending) and their classes.
    pub labeled_rows: Vec<usize>,
    pub labeled_classes: Vec<usize>,
    pub unlabeled_rows: Vec<usize>,
}

pub fn prepare_seg_scene(cloud: &PointCloud, weak: &WeakLabelSet, k: usize) -> Result<SegScene> {
    let index = build_index(cloud.positions())?;
    let knn = NeighborTable::build(&index, k)?;
    let features = colorspace::seg_features(cloud)?;
    let gt = cloud
        .labels()
        .ok_or_else(|| Error::validation("scene has no ground-truth labels"))?
        .to_vec();
    let labeled_classes = weak.labels_from(cloud)?;
    let labeled: std::collections::HashSet<usize> = weak.indices.iter().copied().collect();
    let unlabeled_rows = (0..cloud.len()).filter(|i| !labeled.contains(i)).collect();
    Ok(SegScene {
        features,
        knn,
        gt,
        labeled_rows: weak.indices.clone(),
        labeled_classes,
        unlabeled_rows,
    })
}

fn gather_rows(buf: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&buf[r * width..(r + 1) * width]);
    }
    out
}

/// Argmax class predictions for a whole cloud.
pub fn predict_labels(params: &ModelParams, cloud: &PointCloud, k: usize) -> Result<Vec<i32>> {
    let index = build_index(cloud.positions())?;
    let knn = NeighborTable::build(&index, k)?;
    let features = colorspace::seg_features(cloud)?;
    let pass = forward(params, &features, &knn, Head::Seg)?;
    let Outputs::Seg { probs, .. } = &pass.outputs else {
        unreachable!()
    };
    Ok(argmax_rows(probs, params.num_classes))
}

fn argmax_rows(probs: &[f64], width: usize) -> Vec<i32> {
    probs
        .chunks_exact(width)
        .map(|row| {
            let mut best = 0usize;
            for c in 1..width {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as i32
        })
        .collect()
}

/// Features, neighborhoods and ground truth of one validation scene.
type ValScene = (Vec<[f64; 6]>, NeighborTable, Vec<i32>);

fn validation_miou(
    params: &ModelParams,
    val: &[ValScene],
    num_classes: usize,
) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut cm = metrics::ConfusionMatrix::zeros(num_classes);
    for (features, knn, gt) in val {
        let pass = forward(params, features, knn, Head::Seg)?;
        let Outputs::Seg { probs, .. } = &pass.outputs else {
            unreachable!()
        };
        let pred = argmax_rows(probs, num_classes);
        cm.merge(&metrics::confusion(&pred, gt, num_classes)?);
    }
    Ok(Some(metrics::miou(&cm).mean))
}

/// Weakly supervised fine-tuning. Per step: segmentation loss on the
/// annotated rows; once the schedule opens, sparse propagation over the
/// current embeddings adds `lambda * L_sp` on the pseudo-labeled rows.
/// Embeddings are constants for the propagation gradient: the learning
/// signal enters through the prediction probabilities only.
pub fn train_weak(
    scenes: &[PointCloud],
    weak_labels: &[WeakLabelSet],
    val_scenes: &[PointCloud],
    init: ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::validation("no training scenes"));
    }
    if scenes.len() != weak_labels.len() {
        return Err(Error::validation(format!(
            "{} scenes but {} weak-label sets",
            scenes.len(),
            weak_labels.len()
        )));
    }
    if init.head_kind != Head::Seg {
        return Err(Error::validation("initial parameters must carry a seg head"));
    }
    let num_classes = init.num_classes;

    let mut history = TrainHistory::default();
    let mut prepared = Vec::new();
    for (scene, weak) in scenes.iter().zip(weak_labels) {
        if weak.is_empty() {
            history.skipped_scenes += 1;
            continue;
        }
        prepared.push(prepare_seg_scene(scene, weak, config.knn_k)?);
    }
    if prepared.is_empty() {
        return Err(Error::validation("no scene has labeled points"));
    }
    let val: Vec<ValScene> = val_scenes
        .iter()
        .map(|cloud| -> Result<_> {
            let index = build_index(cloud.positions())?;
            let knn = NeighborTable::build(&index, config.knn_k)?;
            let features = colorspace::seg_features(cloud)?;
            let gt = cloud
                .labels()
                .ok_or_else(|| Error::validation("validation scene has no labels"))?
                .to_vec();
            Ok((features, knn, gt))
        })
        .collect::<Result<_>>()?;

    let mut params = init;
    let mut state = AdamState::new(&params);

    for epoch in 0..config.max_epoch {
        let watch = Stopwatch::start();
        let lambda = effective_lambda(config, epoch)?;
        let propagate_now = lambda > 0.0 && epoch >= config.propagation.enabled_after_epoch;
        let mut epoch_seg = 0.0;
        let mut epoch_sp = 0.0;
        let mut pending = ModelGrads::zeros_like(&params);
        let mut pending_count = 0usize;

        for scene in &prepared {
            let pass: ForwardPass = forward(&params, &scene.features, &scene.knn, Head::Seg)?;
            let Outputs::Seg { logits, probs } = &pass.outputs else {
                unreachable!()
            };
            let n = scene.features.len();
            let logits_l = gather_rows(logits, num_classes, &scene.labeled_rows);
            let (seg_loss, seg_grad) = loss_seg(&logits_l, &scene.labeled_classes, num_classes)?;
            epoch_seg += seg_loss;

            let mut dlogits = vec![0.0; n * num_classes];
            for (li, &row) in scene.labeled_rows.iter().enumerate() {
                dlogits[row * num_classes..(row + 1) * num_classes]
                    .copy_from_slice(&seg_grad[li * num_classes..(li + 1) * num_classes]);
            }

            if propagate_now && !scene.unlabeled_rows.is_empty() {
                let emb = Embeddings::new(
                    gather_rows(&pass.z, params.embed_dim, &scene.labeled_rows),
                    gather_rows(&pass.z, params.embed_dim, &scene.unlabeled_rows),
                    params.embed_dim,
                )?;
                let pseudo = propagation::propagate_with_classes(
                    &emb,
                    &scene.labeled_classes,
                    num_classes,
                    &config.propagation,
                )?;
                let probs_u = gather_rows(probs, num_classes, &scene.unlabeled_rows);
                let sp = propagation::loss_sp(&pseudo, &probs_u, num_classes)?;
                epoch_sp += sp.loss;
                history.clamped_logs += sp.clamped;
                for (ui, &row) in scene.unlabeled_rows.iter().enumerate() {
                    let src = &sp.grad[ui * num_classes..(ui + 1) * num_classes];
                    let dst = &mut dlogits[row * num_classes..(row + 1) * num_classes];
                    for (d, g) in dst.iter_mut().zip(src) {
                        *d += lambda * g;
                    }
                }
            }

            let grads = backward(&params, &scene.features, &scene.knn, &pass.cache, &dlogits)?;
            pending.add_assign(&grads);
            pending_count += 1;
            if pending_count == config.batch {
                pending.scale(1.0 / pending_count as f64);
                adam_step(&mut params, &pending, &mut state, config)?;
                pending = ModelGrads::zeros_like(&params);
                pending_count = 0;
            }
        }
        if pending_count > 0 {
            pending.scale(1.0 / pending_count as f64);
            adam_step(&mut params, &pending, &mut state, config)?;
        }

        let val_miou = validation_miou(&params, &val, num_classes)?;
        history.records.push(EpochRecord {
            epoch,
            loss_seg: epoch_seg / prepared.len() as f64,
            loss_sp: epoch_sp / prepared.len() as f64,
            lambda,
            val_miou,
            seconds: watch.seconds(),
        });
    }
    Ok((params, history))
}

/// Run the colorization head over a gray-scaled copy of the cloud and
/// recombine predicted chroma with the true lightness.
pub fn colorize_cloud(params: &ModelParams, cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let ab = predict_ab(params, cloud, k)?;
    let mut colors = Vec::with_capacity(cloud.len());
    for (c, ab) in cloud.colors().iter().zip(&ab) {
        let lab = colorspace::rgb_to_lab(*c)?;
        colors.push(colorspace::lab_to_rgb(colorspace::LabColor {
            l: lab.l,
            a: ab[0] * colorspace::AB_SCALE,
            b: ab[1] * colorspace::AB_SCALE,
        }));
    }
    PointCloud::new(
        cloud.positions().to_vec(),
        colors,
        cloud.labels().map(|l| l.to_vec()),
        cloud.num_classes(),
    )
}

/// Predicted scaled (a, b) per point, from positions and lightness alone.
pub fn predict_ab(params: &ModelParams, cloud: &PointCloud, k: usize) -> Result<Vec<[f64; 2]>> {
    if params.head_kind != Head::Pretext {
        return Err(Error::validation(
            "colorization needs pretext-head parameters",
        ));
    }
    let index = build_index(cloud.positions())?;
    let knn = NeighborTable::build(&index, k)?;
    let (input, _) = colorspace::split_pretext_channels(cloud)?;
    let pass = forward(params, &input.features, &knn, Head::Pretext)?;
    let Outputs::Pretext(pred) = pass.outputs else {
        unreachable!()
    };
    Ok(pred.iter().map(|row| [row[0], row[1]]).collect())
}

/// Mean IoU of argmax predictions against a cloud's own ground truth.
pub fn evaluate_cloud(params: &ModelParams, cloud: &PointCloud, k: usize) -> Result<f64> {
    let gt = cloud
        .labels()
        .ok_or_else(|| Error::validation("cloud has no labels"))?;
    let pred = predict_labels(params, cloud, k)?;
    let cm = metrics::confusion(&pred, gt, cloud.num_classes())?;
    Ok(metrics::miou(&cm).mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::scene::{generate_scene, SceneSpec};
    use crate::weaklabel;

    #[test]
    fn lambda_matches_published_schedule() {
        for epoch in 0..30 {
            assert_eq!(lambda_schedule(epoch, 80, 30).unwrap(), 0.0);
        }
        let at_warmup = lambda_schedule(30, 80, 30).unwrap();
        assert!((at_warmup - (-0.625f64).exp()).abs() < 1e-12);
        assert!((lambda_schedule(80, 80, 30).unwrap() - 1.0).abs() < 1e-15);
        assert!(lambda_schedule(0, 0, 0).is_err());
    }

    #[test]
    fn lambda_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for epoch in 0..=80 {
            let l = lambda_schedule(epoch, 80, 30).unwrap();
            assert!(l >= prev);
            assert!((0.0..=1.0).contains(&l));
            prev = l;
        }
    }

    #[test]
    fn seg_loss_limits_and_closed_form() {
        // concentrated logits: margin 20 drives the loss below 1e-8
        let (loss, _) = loss_seg(&[20.0, 0.0, 0.0, 0.0], &[0], 4).unwrap();
        assert!(loss < 1e-8, "loss {loss}");
        // uniform logits: loss = ln(C)
        let (loss, _) = loss_seg(&[0.0; 4], &[2], 4).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!(loss_seg(&[], &[], 4).is_err());
    }

    #[test]
    fn seg_loss_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(0x5E6);
        let (m, c) = (6, 4);
        let mut logits: Vec<f64> = (0..m * c).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.below(c)).collect();
        let (_, grad) = loss_seg(&logits, &labels, c).unwrap();
        let h = 1e-6;
        for idx in 0..m * c {
            let base = logits[idx];
            logits[idx] = base + h;
            let up = loss_seg(&logits, &labels, c).unwrap().0;
            logits[idx] = base - h;
            let down = loss_seg(&logits, &labels, c).unwrap().0;
            logits[idx] = base;
            let fd = (up - down) / (2.0 * h);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-8);
            assert!((fd - grad[idx]).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn total_loss_is_linear_in_lambda() {
        assert_eq!(loss_total(1.0, 0.5, 0.0), 1.0);
        assert_eq!(loss_total(1.0, 0.5, 1.0), 1.5);
        for lambda in [0.1, 0.5, 0.9] {
            assert_eq!(loss_total(2.0, 3.0, lambda), 2.0 + lambda * 3.0);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = model::init_params(3, 8, 16, 1, Head::Seg).unwrap();
        let reference = params.clone();
        let grads = ModelGrads::zeros_like(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
        // zero gradient: m = v = 0, update = lr * 0 / (0 + eps) = 0
        for ((_, a), (_, b)) in params.named().iter().zip(reference.named().iter()) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
        assert_eq!(params.version, reference.version + 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // constant gradient 1: the bias-corrected first step is
        // -lr / (1 + eps') with eps' tiny, i.e. almost exactly -lr.
        let mut params = model::init_params(3, 8, 16, 2, Head::Seg).unwrap();
        let before = params.enc1.w[0];
        let mut grads = ModelGrads::zeros_like(&params);
        grads.enc1.w[0] = 1.0;
        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        let step = params.enc1.w[0] - before;
        assert!(
            (step + config.learning_rate).abs() < 1e-6,
            "first step {step}"
        );
    }

    #[test]
    fn adam_is_deterministic() {
        let make = || {
            let mut params = model::init_params(3, 8, 16, 3, Head::Seg).unwrap();
            let mut grads = ModelGrads::zeros_like(&params);
            for (i, v) in grads.enc2.w.iter_mut().enumerate() {
                *v = (i as f64 * 0.013).sin();
            }
            let mut state = AdamState::new(&params);
            let config = TrainConfig::default();
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut state, &config).unwrap();
            }
            params
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn adam_rejects_nan_gradient_with_tensor_name() {
        let mut params = model::init_params(3, 8, 16, 4, Head::Seg).unwrap();
        let mut grads = ModelGrads::zeros_like(&params);
        grads.enc3.w[5] = f64::NAN;
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
        match err {
            Error::NanGradient { tensor } => assert_eq!(tensor, "enc3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn small_scene(seed: u64, n: usize) -> PointCloud {
        generate_scene(&SceneSpec {
            num_points: n,
            num_classes: 4,
            extent: 4.0,
            color_noise: 0.05,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn pretext_single_epoch_records_history() {
        let scene = small_scene(1, 500);
        let config = TrainConfig {
            max_epoch: 1,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let (params, history) = train_pretext(&[scene], &config).unwrap();
        assert_eq!(history.records.len(), 1);
        assert!(history.records[0].loss_seg.is_finite());
        assert_eq!(params.head_kind, Head::Pretext);
    }

    #[test]
    fn weak_training_is_deterministic() {
        let scene = small_scene(2, 400);
        let weak = weaklabel::sample_one_point(&scene, 11).unwrap();
        let config = TrainConfig {
            max_epoch: 3,
            warmup_epoch: 1,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let init = model::init_params(4, 8, 16, 21, Head::Seg).unwrap();
            train_weak(
                &[scene.clone()],
                &[weak.clone()],
                &[],
                init,
                &config,
            )
            .unwrap()
        };
        let (pa, ha) = run();
        let (pb, hb) = run();
        assert_eq!(pa, pb);
        for (a, b) in ha.records.iter().zip(&hb.records) {
            assert_eq!(a.loss_seg, b.loss_seg);
            assert_eq!(a.loss_sp, b.loss_sp);
            assert_eq!(a.lambda, b.lambda);
        }
    }

    #[test]
    fn warmup_at_max_epoch_equals_disabled_propagation() {
        let scene = small_scene(3, 400);
        let weak = weaklabel::sample_fraction(&scene, 0.05, 5).unwrap();
        let base = TrainConfig {
            max_epoch: 4,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let never = TrainConfig {
            warmup_epoch: 4,
            ..base.clone()
        };
        let disabled = TrainConfig {
            warmup_epoch: 0,
            propagation_enabled: false,
            ..base
        };
        let init = model::init_params(4, 8, 16, 31, Head::Seg).unwrap();
        let (pa, ha) =
            train_weak(std::slice::from_ref(&scene), std::slice::from_ref(&weak), &[], init.clone(), &never)
                .unwrap();
        let (pb, hb) = train_weak(&[scene], &[weak], &[], init, &disabled).unwrap();
        assert_eq!(pa, pb);
        for (a, b) in ha.records.iter().zip(&hb.records) {
            assert_eq!(a.loss_seg, b.loss_seg);
            assert_eq!(a.loss_sp, b.loss_sp);
            assert_eq!(a.lambda, 0.0);
            assert_eq!(b.lambda, 0.0);
        }
    }

    #[test]
    fn propagation_contributes_nothing_before_warmup() {
        let scene = small_scene(4, 300);
        let weak = weaklabel::sample_one_point(&scene, 7).unwrap();
        let config = TrainConfig {
            max_epoch: 3,
            warmup_epoch: 2,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let init = model::init_params(4, 8, 16, 41, Head::Seg).unwrap();
        let (_, history) = train_weak(&[scene], &[weak], &[], init, &config).unwrap();
        assert_eq!(history.records[0].loss_sp, 0.0);
        assert_eq!(history.records[0].lambda, 0.0);
        assert_eq!(history.records[1].loss_sp, 0.0);
        assert!(history.records[2].lambda > 0.0);
    }

    #[test]
    fn empty_weak_sets_are_skipped_with_counter() {
        let scene = small_scene(5, 300);
        let empty = WeakLabelSet {
            indices: vec![],
            scheme: weaklabel::Scheme::OnePoint,
            seed: 0,
        };
        let weak = weaklabel::sample_one_point(&scene, 7).unwrap();
        let config = TrainConfig {
            max_epoch: 1,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let init = model::init_params(4, 8, 16, 51, Head::Seg).unwrap();
        let (_, history) = train_weak(
            &[scene.clone(), scene],
            &[empty.clone(), weak],
            &[],
            init.clone(),
            &config,
        )
        .unwrap();
        assert_eq!(history.skipped_scenes, 1);
        let err = train_weak(&[small_scene(6, 300)], &[empty], &[], init, &config).unwrap_err();
        assert!(err.to_string().contains("labeled"));
    }

    #[test]
    fn history_csv_layout() {
        let history = TrainHistory {
            records: vec![EpochRecord {
                epoch: 0,
                loss_seg: 1.5,
                loss_sp: 0.25,
                lambda: 0.5,
                val_miou: Some(0.75),
                seconds: 2.0,
            }],
            skipped_scenes: 0,
            clamped_logs: 0,
        };
        let csv = history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss_seg,loss_sp,lambda,val_miou,seconds"
        );
        assert_eq!(lines.next().unwrap(), "0,1.5,0.25,0.5,0.75,2");
    }
}
