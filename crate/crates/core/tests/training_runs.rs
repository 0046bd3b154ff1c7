//! Training-loop behavior on small synthetic data: losses must actually
//! fall, the colorization head must learn real chroma structure, and a
//! separable toy must be solvable from one labeled point per class.

use weakseg::colorspace;
use weakseg::model::{self, Head};
use weakseg::scene::{generate_scene, SceneSpec};
use weakseg::training::{self, TrainConfig};
use weakseg::weaklabel;
use weakseg::PointCloud;

fn pretext_config(seed: u64, max_epoch: usize) -> TrainConfig {
    TrainConfig {
        max_epoch,
        seed,
        knn_k: 8,
        hidden: 16,
        embed_dim: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn pretext_loss_decreases_on_every_seed() {
    for seed in [1u64, 2, 3] {
        let scene = generate_scene(&SceneSpec {
            num_points: 600,
            num_classes: 4,
            extent: 4.0,
            color_noise: 0.03,
            seed: 100 + seed,
        })
        .unwrap();
        let (_, history) = training::train_pretext(&[scene], &pretext_config(seed, 30)).unwrap();
        let first = history.records.first().unwrap().loss_seg;
        let last = history.records.last().unwrap().loss_seg;
        assert!(
            last < first,
            "seed {seed}: pretext loss went {first} -> {last}"
        );
    }
}

#[test]
fn colorization_error_halves_with_training() {
    // Mean per-class |ab| error of the colorization head must drop by at
    // least half between a one-epoch and a trained model. Two balanced
    // classes keep the property itself in focus; the scene is dense enough
    // that neighborhoods stay within one object.
    let scene = generate_scene(&SceneSpec {
        num_points: 1500,
        num_classes: 2,
        extent: 2.5,
        color_noise: 0.0,
        seed: 77,
    })
    .unwrap();

    let per_class_ab_error = |params: &model::ModelParams| -> f64 {
        let pred = training::predict_ab(params, &scene, 8).unwrap();
        let (_, truth) = colorspace::split_pretext_channels(&scene).unwrap();
        let labels = scene.labels().unwrap();
        let c = scene.num_classes();
        let mut err = vec![0.0; c];
        let mut count = vec![0usize; c];
        for i in 0..scene.len() {
            let class = labels[i] as usize;
            err[class] +=
                (pred[i][0] - truth[i][0]).abs() + (pred[i][1] - truth[i][1]).abs();
            count[class] += 1;
        }
        let mut total = 0.0;
        for k in 0..c {
            total += err[k] / count[k] as f64;
        }
        total / c as f64
    };

    let (early, _) = training::train_pretext(&[scene.clone()], &pretext_config(9, 1)).unwrap();
    let (trained, _) = training::train_pretext(&[scene.clone()], &pretext_config(9, 150)).unwrap();
    let e_early = per_class_ab_error(&early);
    let e_trained = per_class_ab_error(&trained);
    assert!(
        e_trained <= 0.5 * e_early,
        "ab error {e_early} -> {e_trained}, less than 50% improvement"
    );
}

/// Two spatially separated clusters with distinct colors.
fn separable_toy(seed: u64) -> PointCloud {
    let mut rng = weakseg::rng::SplitMix64::new(seed);
    let n_half = 500;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_half {
        let class = (i >= n_half) as usize;
        let cx = if class == 0 { 0.0 } else { 5.0 };
        positions.push([
            cx + rng.next_f64(),
            rng.next_f64(),
            0.2 * rng.next_f64(),
        ]);
        let base = if class == 0 {
            [0.85, 0.2, 0.15]
        } else {
            [0.2, 0.4, 0.85]
        };
        let mut col = [0.0; 3];
        for ch in 0..3 {
            col[ch] = (base[ch] + 0.03 * rng.normal()).clamp(0.0, 1.0);
        }
        colors.push(col);
        labels.push(class as i32);
    }
    PointCloud::new(positions, colors, Some(labels), 2).unwrap()
}

#[test]
fn one_point_labels_solve_a_separable_toy() {
    for seed in [1u64, 2, 3] {
        let scene = separable_toy(1000 + seed);
        let weak = weaklabel::sample_one_point(&scene, seed).unwrap();
        assert_eq!(weak.len(), 2);
        let config = TrainConfig {
            max_epoch: 60,
            warmup_epoch: 60, // plain supervision; propagation not needed here
            seed,
            knn_k: 8,
            hidden: 16,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let init = model::init_params(2, 8, 16, 9000 + seed, Head::Seg).unwrap();
        let (params, _) =
            training::train_weak(&[scene.clone()], &[weak], &[], init, &config).unwrap();
        let miou = training::evaluate_cloud(&params, &scene, 8).unwrap();
        assert!(miou > 0.9, "seed {seed}: training mIoU {miou}");
    }
}
