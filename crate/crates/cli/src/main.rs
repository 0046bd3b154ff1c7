//! Batch front end for the weakly supervised segmentation pipeline.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
//! All file outputs are written atomically (temp file + rename). Every
//! stochastic command honors a `SEED` environment override.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use weakseg::error::Error as CoreError;
use weakseg::metrics::{self, MetricReport};
use weakseg::model::{self, Head};
use weakseg::ply::{load_ply, save_ply};
use weakseg::propagation::{
    dense_reference_propagate, propagate_with_classes, Embeddings, DENSE_REFERENCE_MAX_POINTS,
};
use weakseg::rng::SplitMix64;
use weakseg::scene::{generate_scene, SceneSpec};
use weakseg::spatial::{build_index, NeighborTable};
use weakseg::training::{self};
use weakseg::weaklabel;
use weakseg::{fsutil, PointCloud};

use config::{parse_config, seed_override, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or input data: exit 1.
    Usage(String),
    /// Failure while doing the work: exit 2.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(_)
            | CoreError::NonFiniteCoordinate { .. }
            | CoreError::MissingProperty { .. }
            | CoreError::MalformedHeader { .. }
            | CoreError::MalformedRecord { .. }
            | CoreError::TensorShape { .. }
            | CoreError::DenseSizeLimit { .. } => CliError::Usage(e.to_string()),
            CoreError::NanGradient { .. } | CoreError::StaleCache | CoreError::Io { .. } => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "weakseg",
    about = "Weakly supervised point-cloud segmentation: colorization pretraining, weak-label training, sparse label propagation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled scenes as ASCII PLY files.
    GenScenes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised colorization pretraining over a scene directory.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Directory of .ply scenes (val_*.ply files are skipped).
        #[arg(long)]
        scenes: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a weak annotation set from a fully labeled scene.
    WeakLabel {
        /// 1pt, fraction or spt.
        #[arg(long)]
        scheme: String,
        /// Fraction of points for the fraction scheme, in (0, 1].
        #[arg(long)]
        fraction: Option<f64>,
        /// Region count for the spt scheme (default: a 0.1% point budget).
        #[arg(long)]
        regions: Option<usize>,
        /// Region radius in meters for the spt scheme.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weakly supervised training with optional propagation.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory with train_*.ply (and optional val_*.ply) scenes.
        #[arg(long)]
        scenes: PathBuf,
        /// Directory with one <scene-stem>.txt weak-label file per scene.
        #[arg(long)]
        labels: PathBuf,
        /// Initial checkpoint; a pretext checkpoint transfers its encoder.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Disable the sparse-propagation loss entirely.
        #[arg(long)]
        no_propagation: bool,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: PathBuf,
    },
    /// Propagate pseudo labels for one scene from a trained checkpoint.
    Propagate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted labels against ground truth (two labeled PLYs).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recolor a scene with the colorization head (predicted chroma).
    Colorize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time sparse propagation against the dense graph reference.
    BenchPropagation {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        c: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print on stdout and exit 0; usage errors exit 1
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenScenes { config, out } => gen_scenes(&config, &out),
        Command::Pretrain {
            config,
            scenes,
            out,
        } => pretrain(&config, &scenes, &out),
        Command::WeakLabel {
            scheme,
            fraction,
            regions,
            radius,
            scene,
            seed,
            out,
        } => weak_label(&scheme, fraction, regions, radius, &scene, seed, &out),
        Command::Train {
            config,
            scenes,
            labels,
            init,
            no_propagation,
            out,
            history,
        } => train(
            &config,
            &scenes,
            &labels,
            init.as_deref(),
            no_propagation,
            &out,
            &history,
        ),
        Command::Propagate {
            ckpt,
            scene,
            labels,
            out,
        } => propagate_cmd(&ckpt, &scene, &labels, &out),
        Command::Eval { pred, gt, out } => eval_cmd(&pred, &gt, &out),
        Command::Colorize { ckpt, scene, out } => colorize_cmd(&ckpt, &scene, &out),
        Command::BenchPropagation { n, c, d } => bench_propagation(n, c, d),
    }
}

fn apply_seed_override(config: &mut RunConfig) -> Result<(), CliError> {
    if let Some(seed) = seed_override()? {
        config.scene.seed = seed;
        config.training.seed = seed;
    }
    Ok(())
}

fn gen_scenes(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let mut config = parse_config(config_path)?;
    apply_seed_override(&mut config)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let groups: [(&str, usize, u64); 3] = [
        ("train", config.dataset.train_scenes, 0),
        ("val", config.dataset.val_scenes, 1000),
        ("pretrain", config.dataset.pretrain_scenes, 2000),
    ];
    let mut written = 0usize;
    for (prefix, count, seed_offset) in groups {
        for i in 0..count {
            let spec = SceneSpec {
                seed: config.scene.seed + seed_offset + i as u64,
                ..config.scene.clone()
            };
            let cloud = generate_scene(&spec)?;
            let path = out.join(format!("{prefix}_{i:03}.ply"));
            save_ply(&cloud, &path, true)?;
            written += 1;
        }
    }
    println!(
        "wrote {written} scenes ({} train, {} val, {} pretrain) to {}",
        config.dataset.train_scenes,
        config.dataset.val_scenes,
        config.dataset.pretrain_scenes,
        out.display()
    );
    Ok(())
}

fn list_scenes(dir: &Path, include: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ply"))
        .filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(&include)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<PointCloud>, CliError> {
    paths
        .iter()
        .map(|p| load_ply(p).map_err(CliError::from))
        .collect()
}

fn pretrain(config_path: &Path, scenes_dir: &Path, out: &Path) -> Result<(), CliError> {
    let mut config = parse_config(config_path)?;
    apply_seed_override(&mut config)?;
    let paths = list_scenes(scenes_dir, |stem| !stem.starts_with("val_"))?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no non-validation .ply scenes in {}",
            scenes_dir.display()
        )));
    }
    let scenes = load_scenes(&paths)?;
    let started = Instant::now();
    let (params, history) = training::train_pretext(&scenes, &config.training)?;
    model::save_checkpoint(&params, out)?;
    let final_loss = history.records.last().map(|r| r.loss_seg).unwrap_or(0.0);
    println!(
        "pretrained on {} scenes for {} epochs: final pretext loss {:.4} ({:.0}s); checkpoint {}",
        scenes.len(),
        config.training.max_epoch,
        final_loss,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn weak_label(
    scheme: &str,
    fraction: Option<f64>,
    regions: Option<usize>,
    radius: f64,
    scene_path: &Path,
    mut seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if let Some(s) = seed_override()? {
        seed = s;
    }
    let cloud = load_ply(scene_path)?;
    let set = match scheme {
        "1pt" => weaklabel::sample_one_point(&cloud, seed)?,
        "fraction" => {
            let x = fraction.ok_or_else(|| {
                CliError::Usage("--fraction is required for the fraction scheme".into())
            })?;
            weaklabel::sample_fraction(&cloud, x, seed)?
        }
        "spt" => {
            let index = build_index(cloud.positions())?;
            let regions = regions.unwrap_or_else(|| {
                weaklabel::superpoint_regions_for_budget(&cloud, &index, radius, 0.001, seed)
            });
            weaklabel::sample_superpoint(&cloud, &index, regions, radius, seed)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown scheme '{other}' (expected 1pt, fraction or spt)"
            )))
        }
    };
    weaklabel::save_weak_labels(&set, out)?;
    println!(
        "annotated {} of {} points ({}) -> {}",
        set.len(),
        cloud.len(),
        set.scheme,
        out.display()
    );
    Ok(())
}

fn train(
    config_path: &Path,
    scenes_dir: &Path,
    labels_dir: &Path,
    init: Option<&Path>,
    no_propagation: bool,
    out: &Path,
    history_path: &Path,
) -> Result<(), CliError> {
    let mut config = parse_config(config_path)?;
    apply_seed_override(&mut config)?;
    if no_propagation {
        config.training.propagation_enabled = false;
    }
    let train_paths = list_scenes(scenes_dir, |stem| stem.starts_with("train_"))?;
    if train_paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no train_*.ply scenes in {}",
            scenes_dir.display()
        )));
    }
    let scenes = load_scenes(&train_paths)?;
    let val_paths = list_scenes(scenes_dir, |stem| stem.starts_with("val_"))?;
    let val_scenes = load_scenes(&val_paths)?;

    let mut weak_sets = Vec::new();
    for path in &train_paths {
        let stem = path.file_stem().unwrap().to_string_lossy();
        let label_path = labels_dir.join(format!("{stem}.txt"));
        if !label_path.exists() {
            return Err(CliError::Usage(format!(
                "missing weak-label file {}",
                label_path.display()
            )));
        }
        weak_sets.push(weaklabel::load_weak_labels(&label_path)?);
    }

    let num_classes = scenes.iter().map(|s| s.num_classes()).max().unwrap();
    let init_params = match init {
        Some(path) => {
            let loaded = model::load_checkpoint(path)?;
            match loaded.head_kind {
                Head::Pretext => {
                    model::transfer_encoder(&loaded, num_classes, config.training.seed)?
                }
                Head::Seg => loaded,
            }
        }
        None => model::init_params(
            num_classes,
            config.training.embed_dim,
            config.training.hidden,
            config.training.seed,
            Head::Seg,
        )?,
    };

    let started = Instant::now();
    let (params, history) = training::train_weak(
        &scenes,
        &weak_sets,
        &val_scenes,
        init_params,
        &config.training,
    )?;
    model::save_checkpoint(&params, out)?;
    history.save_csv(history_path)?;
    let last = history.records.last();
    println!(
        "trained {} epochs on {} scenes ({:.0}s): loss_seg {:.4}, val mIoU {}; checkpoint {}",
        config.training.max_epoch,
        scenes.len(),
        started.elapsed().as_secs_f64(),
        last.map(|r| r.loss_seg).unwrap_or(f64::NAN),
        last.and_then(|r| r.val_miou)
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        out.display()
    );
    Ok(())
}

fn propagate_cmd(
    ckpt: &Path,
    scene_path: &Path,
    labels_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let params = model::load_checkpoint(ckpt)?;
    if params.head_kind != Head::Seg {
        return Err(CliError::Usage(
            "propagate needs a segmentation checkpoint".into(),
        ));
    }
    let cloud = load_ply(scene_path)?;
    let weak = weaklabel::load_weak_labels(labels_path)?;
    if weak.indices.iter().any(|&i| i >= cloud.len()) {
        return Err(CliError::Usage(
            "weak-label index beyond the end of the scene".into(),
        ));
    }
    let labeled_classes = weak.labels_from(&cloud)?;

    let index = build_index(cloud.positions())?;
    let knn = NeighborTable::build(&index, 16)?;
    let features = weakseg::colorspace::seg_features(&cloud)?;
    let pass = model::forward(&params, &features, &knn, Head::Seg)?;
    let d = params.embed_dim;

    let labeled_set: std::collections::HashSet<usize> = weak.indices.iter().copied().collect();
    let unlabeled_rows: Vec<usize> = (0..cloud.len())
        .filter(|i| !labeled_set.contains(i))
        .collect();
    let gather = |rows: &[usize]| -> Vec<f64> {
        let mut buf = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            buf.extend_from_slice(&pass.z[r * d..(r + 1) * d]);
        }
        buf
    };
    let emb = Embeddings::new(gather(&weak.indices), gather(&unlabeled_rows), d)?;
    let pseudo = propagate_with_classes(
        &emb,
        &labeled_classes,
        params.num_classes,
        &Default::default(),
    )?;

    // one line per pseudo label: point index, chosen class, soft row
    let mut text = String::new();
    for entry in &pseudo.entries {
        let point = unlabeled_rows[entry.row];
        text.push_str(&format!("{point} {}", entry.chosen_class));
        for p in &entry.soft {
            text.push_str(&format!(" {p}"));
        }
        text.push('\n');
    }
    fsutil::write_atomic(out, text.as_bytes())?;
    println!(
        "propagated {} pseudo labels over {} unlabeled points -> {}",
        pseudo.len(),
        unlabeled_rows.len(),
        out.display()
    );
    Ok(())
}

fn eval_cmd(pred_path: &Path, gt_path: &Path, out: &Path) -> Result<(), CliError> {
    let pred = load_ply(pred_path)?;
    let gt = load_ply(gt_path)?;
    let pred_labels = pred
        .labels()
        .ok_or_else(|| CliError::Usage(format!("{} has no labels", pred_path.display())))?;
    let gt_labels = gt
        .labels()
        .ok_or_else(|| CliError::Usage(format!("{} has no labels", gt_path.display())))?;
    let num_classes = pred.num_classes().max(gt.num_classes());
    let cm = metrics::confusion(pred_labels, gt_labels, num_classes)?;
    let report = MetricReport::from_confusion(&cm);
    let json = report.to_json();
    fsutil::write_atomic(out, json.as_bytes())?;
    println!("{json}");
    Ok(())
}

fn colorize_cmd(ckpt: &Path, scene_path: &Path, out: &Path) -> Result<(), CliError> {
    let params = model::load_checkpoint(ckpt)?;
    let cloud = load_ply(scene_path)?;
    let recolored = training::colorize_cloud(&params, &cloud, 16)?;
    save_ply(&recolored, out, true)?;
    println!("colorized {} points -> {}", cloud.len(), out.display());
    Ok(())
}

fn bench_propagation(n: usize, c: usize, d: usize) -> Result<(), CliError> {
    if n == 0 || c == 0 || d == 0 {
        return Err(CliError::Usage("n, c and d must be positive".into()));
    }
    let mut rng = SplitMix64::new(0xBE7C);
    let m = 4 * c;
    let labels: Vec<usize> = (0..m).map(|i| i % c).collect();
    let make = |rng: &mut SplitMix64, rows: usize| -> Vec<f64> {
        (0..rows * d).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    };
    let labeled = make(&mut rng, m);

    let time_sparse = |n: usize, rng: &mut SplitMix64| -> Result<f64, CliError> {
        let emb = Embeddings::new(labeled.clone(), make(rng, n), d)?;
        let config = Default::default();
        propagate_with_classes(&emb, &labels, c, &config)?; // warm
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t = Instant::now();
            propagate_with_classes(&emb, &labels, c, &config)?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    println!("sparse propagation (O(N*C*d)), C={c} d={d}:");
    let t1 = time_sparse(n, &mut rng)?;
    let t2 = time_sparse(2 * n, &mut rng)?;
    println!("  N = {n:>8}: {:10.3} ms", t1 * 1e3);
    println!(
        "  N = {:>8}: {:10.3} ms   (x{:.2})",
        2 * n,
        t2 * 1e3,
        t2 / t1
    );

    println!("dense graph reference (O((N+M)^2*d)), capped at N = {DENSE_REFERENCE_MAX_POINTS}:");
    if n > DENSE_REFERENCE_MAX_POINTS {
        let emb = Embeddings::new(labeled.clone(), make(&mut rng, n), d)?;
        match dense_reference_propagate(&emb, &labels, c, &Default::default()) {
            Err(e) => println!("  N = {n:>8}: refused ({e})"),
            Ok(_) => unreachable!("dense path must refuse n above the cap"),
        }
    }
    let dense_sizes = [DENSE_REFERENCE_MAX_POINTS / 2, DENSE_REFERENCE_MAX_POINTS];
    let mut previous: Option<f64> = None;
    for &size in &dense_sizes {
        let dn = size.min(n.max(2));
        let emb = Embeddings::new(labeled.clone(), make(&mut rng, dn), d)?;
        let t = Instant::now();
        dense_reference_propagate(&emb, &labels, c, &Default::default())?;
        let secs = t.elapsed().as_secs_f64();
        match previous {
            None => println!("  N = {dn:>8}: {:10.1} ms", secs * 1e3),
            Some(prev) => println!(
                "  N = {dn:>8}: {:10.1} ms   (x{:.2})",
                secs * 1e3,
                secs / prev
            ),
        }
        previous = Some(secs);
    }
    Ok(())
}
