//! Browser demo bindings: interactive scene generation, weak-label
//! sampling with sparse label propagation, and live colorization
//! pretraining, all running in wasm on the exact same code paths as the
//! native library.

use wasm_bindgen::prelude::*;

use weakseg::cloud::PointCloud;
use weakseg::colorspace;
use weakseg::model::{self, Head, ModelParams};
use weakseg::propagation::{self, Embeddings, PropagationConfig};
use weakseg::scene::{generate_scene, SceneSpec, PALETTE};
use weakseg::training::{self, AdamState, PretextScene, TrainConfig};
use weakseg::weaklabel::{self, WeakLabelSet};

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One generated scene plus everything the interactive panels derive from
/// it: cached neighborhoods, pretext targets, the current weak-label set
/// and the live colorization model.
#[wasm_bindgen]
pub struct Demo {
    cloud: PointCloud,
    scene: PretextScene,
    seg_features: Vec<[f64; 6]>,
    weak: Option<WeakLabelSet>,
    params: Option<ModelParams>,
    adam: Option<AdamState>,
    config: TrainConfig,
    epochs_done: usize,
}

#[wasm_bindgen]
impl Demo {
    /// Generate a scene. Failures (bad parameters) surface as JS errors.
    #[wasm_bindgen(constructor)]
    pub fn new(
        num_points: usize,
        num_classes: usize,
        extent: f64,
        color_noise: f64,
        seed: u64,
    ) -> Result<Demo, JsValue> {
        let spec = SceneSpec {
            num_points,
            num_classes,
            extent,
            color_noise,
            seed,
        };
        let cloud = generate_scene(&spec).map_err(err)?;
        let knn_k = 16.min(cloud.len());
        let scene = training::prepare_pretext_scene(&cloud, knn_k).map_err(err)?;
        let seg_features = colorspace::seg_features(&cloud).map_err(err)?;
        let config = TrainConfig {
            knn_k,
            hidden: 24,
            embed_dim: 12,
            ..TrainConfig::default()
        };
        Ok(Demo {
            cloud,
            scene,
            seg_features,
            weak: None,
            params: None,
            adam: None,
            config,
            epochs_done: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.cloud.num_classes()
    }

    /// Interleaved xyz positions.
    pub fn positions(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.cloud.len() * 3);
        for p in self.cloud.positions() {
            out.extend(p.iter().map(|&v| v as f32));
        }
        out
    }

    /// Interleaved rgb bytes of the noisy input colors.
    pub fn colors(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cloud.len() * 3);
        for c in self.cloud.colors() {
            out.extend(c.iter().map(|&v| (v * 255.0).round() as u8));
        }
        out
    }

    pub fn labels(&self) -> Vec<i32> {
        self.cloud.labels().unwrap_or(&[]).to_vec()
    }

    /// Interleaved rgb bytes of the class base palette (for legends and
    /// label rendering).
    pub fn palette(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for color in PALETTE.iter().take(self.cloud.num_classes()) {
            out.extend(color.iter().map(|&v| (v * 255.0).round() as u8));
        }
        out
    }

    /// Sample a weak-label set; returns the annotated point indices.
    pub fn sample_weak(
        &mut self,
        scheme: &str,
        fraction: f64,
        regions: usize,
        radius: f64,
        seed: u64,
    ) -> Result<Vec<u32>, JsValue> {
        let set = match scheme {
            "1pt" => weaklabel::sample_one_point(&self.cloud, seed).map_err(err)?,
            "fraction" => {
                weaklabel::sample_fraction(&self.cloud, fraction, seed).map_err(err)?
            }
            "spt" => {
                let index = weakseg::spatial::build_index(self.cloud.positions()).map_err(err)?;
                weaklabel::sample_superpoint(&self.cloud, &index, regions, radius, seed)
                    .map_err(err)?
            }
            other => return Err(err(format!("unknown scheme '{other}'"))),
        };
        let indices: Vec<u32> = set.indices.iter().map(|&i| i as u32).collect();
        self.weak = Some(set);
        Ok(indices)
    }

    /// Run sparse label propagation from the current weak-label set.
    /// Returns one entry per point: the chosen class for pseudo-labeled
    /// points, -2 for the annotated anchors, -1 everywhere else.
    ///
    /// `use_encoder = false` propagates over the raw scaled input features;
    /// `true` uses the live pretext encoder's embeddings, which shows how
    /// pretraining reshapes the space the prototypes live in.
    pub fn propagate(&self, k_top: usize, use_encoder: bool) -> Result<Vec<i32>, JsValue> {
        let weak = self
            .weak
            .as_ref()
            .ok_or_else(|| err("sample a weak-label set first"))?;
        let labeled_classes = weak.labels_from(&self.cloud).map_err(err)?;
        let n = self.cloud.len();
        let labeled_mask = {
            let mut mask = vec![false; n];
            for &i in &weak.indices {
                mask[i] = true;
            }
            mask
        };
        let unlabeled_rows: Vec<usize> = (0..n).filter(|&i| !labeled_mask[i]).collect();

        let (flat, dim): (Vec<f64>, usize) = if use_encoder {
            let params = self
                .params
                .as_ref()
                .ok_or_else(|| err("train the colorization model first"))?;
            let pass = model::forward(params, &self.scene.features, &self.scene.knn, Head::Pretext)
                .map_err(err)?;
            (pass.z, params.embed_dim)
        } else {
            (self.seg_features.as_flattened().to_vec(), 6)
        };
        let gather = |rows: &[usize]| -> Vec<f64> {
            let mut out = Vec::with_capacity(rows.len() * dim);
            for &r in rows {
                out.extend_from_slice(&flat[r * dim..(r + 1) * dim]);
            }
            out
        };
        let emb = Embeddings::new(gather(&weak.indices), gather(&unlabeled_rows), dim)
            .map_err(err)?;
        let config = PropagationConfig {
            k_top,
            ..PropagationConfig::default()
        };
        let pseudo = propagation::propagate_with_classes(
            &emb,
            &labeled_classes,
            self.cloud.num_classes(),
            &config,
        )
        .map_err(err)?;

        let mut out = vec![-1i32; n];
        for &i in &weak.indices {
            out[i] = -2;
        }
        for entry in &pseudo.entries {
            out[unlabeled_rows[entry.row]] = entry.chosen_class as i32;
        }
        Ok(out)
    }

    /// Fraction of pseudo-labeled points whose chosen class matches the
    /// ground truth.
    pub fn propagation_accuracy(&self, chosen: &[i32]) -> f64 {
        let gt = match self.cloud.labels() {
            Some(l) => l,
            None => return 0.0,
        };
        let mut total = 0usize;
        let mut correct = 0usize;
        for (i, &c) in chosen.iter().enumerate() {
            if c >= 0 {
                total += 1;
                if c == gt[i] {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// (Re)initialize the colorization model.
    pub fn pretext_reset(&mut self, seed: u64) -> Result<(), JsValue> {
        let params = model::init_params(
            self.cloud.num_classes().max(2),
            self.config.embed_dim,
            self.config.hidden,
            seed,
            Head::Pretext,
        )
        .map_err(err)?;
        self.adam = Some(AdamState::new(&params));
        self.params = Some(params);
        self.epochs_done = 0;
        Ok(())
    }

    /// Run a few colorization training epochs; returns the latest loss.
    pub fn pretext_train(&mut self, epochs: usize) -> Result<f64, JsValue> {
        if self.params.is_none() {
            self.pretext_reset(7)?;
        }
        let params = self.params.as_mut().unwrap();
        let adam = self.adam.as_mut().unwrap();
        let mut last = 0.0;
        for _ in 0..epochs {
            let pass = model::forward(params, &self.scene.features, &self.scene.knn, Head::Pretext)
                .map_err(err)?;
            let model::Outputs::Pretext(pred) = &pass.outputs else {
                unreachable!()
            };
            let (loss, grad) =
                weakseg::pretext::loss_pretext(pred, &self.scene.targets, &self.scene.stats)
                    .map_err(err)?;
            let grads = model::backward(
                params,
                &self.scene.features,
                &self.scene.knn,
                &pass.cache,
                grad.as_flattened(),
            )
            .map_err(err)?;
            training::adam_step(params, &grads, adam, &self.config).map_err(err)?;
            last = loss;
            self.epochs_done += 1;
        }
        Ok(last)
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Colors predicted by the colorization head (true lightness, predicted
    /// chroma), interleaved rgb bytes.
    pub fn colorized(&self) -> Result<Vec<u8>, JsValue> {
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| err("train the colorization model first"))?;
        let pass = model::forward(params, &self.scene.features, &self.scene.knn, Head::Pretext)
            .map_err(err)?;
        let model::Outputs::Pretext(pred) = &pass.outputs else {
            unreachable!()
        };
        let mut out = Vec::with_capacity(self.cloud.len() * 3);
        for (row, feats) in pred.iter().zip(&self.scene.features) {
            let rgb = colorspace::lab_to_rgb(colorspace::LabColor {
                l: feats[3] * 100.0,
                a: row[0] * colorspace::AB_SCALE,
                b: row[1] * colorspace::AB_SCALE,
            });
            out.extend(rgb.iter().map(|&v| (v * 255.0).round() as u8));
        }
        Ok(out)
    }

    /// Gray rendition of the scene (the colorization input), rgb bytes.
    pub fn gray_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cloud.len() * 3);
        for feats in &self.scene.features {
            let v = (feats[3].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend([v, v, v]);
        }
        out
    }
}
