//! Weak annotation regimes: reduce a fully labeled cloud to a small set of
//! annotated points. The three schemes mirror common annotation budgets:
//! one point per class, a random fraction of points, and super-point
//! regions (a ball of points around a random seed, every interior point
//! keeping its own ground truth).
//!
//! Selection never alters labels: annotated points always carry their true
//! class. All sampling is seeded and reproducible.

use std::fmt;
use std::path::Path;

use crate::cloud::{PointCloud, UNLABELED};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::rng::SplitMix64;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    OnePoint,
    Fraction(f64),
    Superpoint { regions: usize, radius: f64 },
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::OnePoint => write!(f, "1pt"),
            Scheme::Fraction(x) => write!(f, "fraction:{x:?}"),
            Scheme::Superpoint { regions, radius } => {
                write!(f, "spt:regions={regions}:radius={radius:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelSet {
    /// Strictly increasing point indices.
    pub indices: Vec<usize>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl WeakLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Ground-truth classes of the annotated points.
    pub fn labels_from(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let labels = cloud
            .labels()
            .ok_or_else(|| Error::validation("cloud has no labels"))?;
        self.indices
            .iter()
            .map(|&i| {
                let l = labels[i];
                if l == UNLABELED {
                    Err(Error::validation(format!(
                        "annotated point {i} has no ground truth"
                    )))
                } else {
                    Ok(l as usize)
                }
            })
            .collect()
    }
}

fn require_labels(cloud: &PointCloud) -> Result<&[i32]> {
    cloud
        .labels()
        .ok_or_else(|| Error::validation("cloud has no labels"))
}

/// One uniformly random annotated point for every class present.
pub fn sample_one_point(cloud: &PointCloud, seed: u64) -> Result<WeakLabelSet> {
    let labels = require_labels(cloud)?;
    let mut rng = SplitMix64::new(seed);
    let mut indices = Vec::new();
    for class in 0..cloud.num_classes() as i32 {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if !members.is_empty() {
            indices.push(members[rng.below(members.len())]);
        }
    }
    indices.sort_unstable();
    Ok(WeakLabelSet {
        indices,
        scheme: Scheme::OnePoint,
        seed,
    })
}

/// `ceil(fraction * N)` points sampled uniformly without replacement.
pub fn sample_fraction(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<WeakLabelSet> {
    require_labels(cloud)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let n = cloud.len();
    if fraction * (n as f64) < 1.0 {
        return Err(Error::validation(format!(
            "fraction {fraction} selects less than one of {n} points"
        )));
    }
    let m = (fraction * n as f64).ceil() as usize;
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut indices = order[..m].to_vec();
    indices.sort_unstable();
    Ok(WeakLabelSet {
        indices,
        scheme: Scheme::Fraction(fraction),
        seed,
    })
}

/// Super-point annotation: `num_regions` distinct seed points sampled
/// uniformly; every point within `radius` of a seed is annotated with its
/// own ground truth. The labeled set is the union of the regions.
pub fn sample_superpoint(
    cloud: &PointCloud,
    index: &SpatialIndex,
    num_regions: usize,
    radius: f64,
    seed: u64,
) -> Result<WeakLabelSet> {
    require_labels(cloud)?;
    if cloud.is_empty() {
        return Err(Error::validation("cloud is empty"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::validation("radius must be positive"));
    }
    if num_regions == 0 || num_regions > cloud.len() {
        return Err(Error::validation(format!(
            "num_regions {num_regions} outside [1, {}]",
            cloud.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    rng.shuffle(&mut order);
    let mut member = vec![false; cloud.len()];
    for &s in &order[..num_regions] {
        for i in index.within_radius(&cloud.positions()[s], radius) {
            member[i] = true;
        }
    }
    let indices: Vec<usize> = member
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    Ok(WeakLabelSet {
        indices,
        scheme: Scheme::Superpoint {
            regions: num_regions,
            radius,
        },
        seed,
    })
}

/// Pick a region count so the expected annotated total is about
/// `target_fraction` of the cloud (the super-point budget default). The
/// per-region yield is estimated from a few probe balls.
pub fn superpoint_regions_for_budget(
    cloud: &PointCloud,
    index: &SpatialIndex,
    radius: f64,
    target_fraction: f64,
    seed: u64,
) -> usize {
    let mut rng = SplitMix64::new(seed ^ 0x5054); // probe stream, separate from sampling
    let probes = 16.min(cloud.len());
    let mut total = 0usize;
    for _ in 0..probes {
        let s = rng.below(cloud.len());
        total += index.within_radius(&cloud.positions()[s], radius).len();
    }
    let mean = (total as f64 / probes as f64).max(1.0);
    let want = (target_fraction * cloud.len() as f64 / mean).round() as usize;
    want.clamp(1, cloud.len())
}

/// Serialize as text: a header line with scheme and seed, then one point
/// index per line.
pub fn save_weak_labels(set: &WeakLabelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut text = format!("# scheme={} seed={}\n", set.scheme, set.seed);
    for &i in &set.indices {
        text.push_str(&format!("{i}\n"));
    }
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn load_weak_labels(path: impl AsRef<Path>) -> Result<WeakLabelSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::validation("empty weak-label file"))?;
    let parse_header = || -> Option<(Scheme, u64)> {
        let rest = header.strip_prefix("# scheme=")?;
        let (scheme_str, seed_str) = rest.rsplit_once(" seed=")?;
        let seed: u64 = seed_str.trim().parse().ok()?;
        let scheme = if scheme_str == "1pt" {
            Scheme::OnePoint
        } else if let Some(x) = scheme_str.strip_prefix("fraction:") {
            Scheme::Fraction(x.parse().ok()?)
        } else {
            let spt = scheme_str.strip_prefix("spt:regions=")?;
            let (regions, radius) = spt.split_once(":radius=")?;
            Scheme::Superpoint {
                regions: regions.parse().ok()?,
                radius: radius.parse().ok()?,
            }
        };
        Some((scheme, seed))
    };
    let (scheme, seed) = parse_header()
        .ok_or_else(|| Error::validation(format!("bad weak-label header '{header}'")))?;
    let mut indices = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let i: usize = line.parse().map_err(|_| Error::MalformedRecord {
            line: ln + 2,
            reason: format!("bad index '{line}'"),
        })?;
        indices.push(i);
    }
    let sorted = indices.windows(2).all(|w| w[0] < w[1]);
    if !sorted {
        return Err(Error::validation(
            "weak-label indices must be strictly increasing",
        ));
    }
    Ok(WeakLabelSet {
        indices,
        scheme,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneSpec};
    use crate::spatial::build_index;

    fn toy_cloud(labels: Vec<i32>, num_classes: usize) -> PointCloud {
        let n = labels.len();
        let positions = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let colors = vec![[0.5; 3]; n];
        PointCloud::new(positions, colors, Some(labels), num_classes).unwrap()
    }

    #[test]
    fn one_point_per_present_class() {
        let cloud = toy_cloud(vec![0, 0, 1, 1, 2, 2, 3, 3], 4);
        let set = sample_one_point(&cloud, 7).unwrap();
        assert_eq!(set.len(), 4);
        let classes = set.labels_from(&cloud).unwrap();
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn absent_class_is_skipped() {
        let cloud = toy_cloud(vec![0, 0, 1, 3, 3], 4);
        let set = sample_one_point(&cloud, 7).unwrap();
        assert_eq!(set.len(), 3);
        let classes = set.labels_from(&cloud).unwrap();
        assert!(!classes.contains(&2));
    }

    #[test]
    fn one_point_deterministic() {
        let cloud = toy_cloud(vec![0, 0, 0, 1, 1, 1], 2);
        assert_eq!(sample_one_point(&cloud, 5).unwrap(), sample_one_point(&cloud, 5).unwrap());
    }

    #[test]
    fn unlabeled_cloud_is_rejected() {
        let positions = vec![[0.0; 3]; 3];
        let colors = vec![[0.5; 3]; 3];
        let cloud = PointCloud::new(positions, colors, None, 2).unwrap();
        assert!(sample_one_point(&cloud, 1).is_err());
        assert!(sample_fraction(&cloud, 0.5, 1).is_err());
    }

    #[test]
    fn fraction_one_selects_everything() {
        let cloud = toy_cloud(vec![0; 10], 2);
        let set = sample_fraction(&cloud, 1.0, 3).unwrap();
        assert_eq!(set.indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fraction_ceiling_count() {
        let cloud = toy_cloud(vec![0; 50_000], 2);
        let set = sample_fraction(&cloud, 0.01, 3).unwrap();
        assert_eq!(set.len(), 500);
    }

    #[test]
    fn fraction_bounds_are_enforced() {
        let cloud = toy_cloud(vec![0; 10], 2);
        assert!(sample_fraction(&cloud, 0.0, 1).is_err());
        assert!(sample_fraction(&cloud, 1.5, 1).is_err());
        assert!(sample_fraction(&cloud, 0.01, 1).is_err()); // 0.1 points
    }

    #[test]
    fn fraction_selection_is_uniform_over_seeds() {
        let cloud = toy_cloud(vec![0; 100], 2);
        let mut hits = vec![0usize; 100];
        let seeds = 1000;
        for seed in 0..seeds {
            for &i in &sample_fraction(&cloud, 0.1, seed).unwrap().indices {
                hits[i] += 1;
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let freq = h as f64 / seeds as f64;
            assert!((freq - 0.1).abs() <= 0.03, "index {i}: frequency {freq}");
        }
    }

    #[test]
    fn superpoint_tiny_radius_gives_singletons() {
        let cloud = toy_cloud(vec![0, 1, 0, 1, 0, 1], 2); // unit spacing
        let index = build_index(cloud.positions()).unwrap();
        let set = sample_superpoint(&cloud, &index, 3, 0.25, 9).unwrap();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn superpoint_covering_radius_labels_all() {
        let cloud = toy_cloud(vec![0, 1, 0, 1], 2);
        let index = build_index(cloud.positions()).unwrap();
        let set = sample_superpoint(&cloud, &index, 1, 100.0, 9).unwrap();
        assert_eq!(set.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn superpoint_rejects_degenerate_inputs() {
        let cloud = toy_cloud(vec![0, 1], 2);
        let index = build_index(cloud.positions()).unwrap();
        assert!(sample_superpoint(&cloud, &index, 1, 0.0, 1).is_err());
        assert!(sample_superpoint(&cloud, &index, 0, 0.5, 1).is_err());
        assert!(sample_superpoint(&cloud, &index, 3, 0.5, 1).is_err());
        let empty = PointCloud::new(vec![], vec![], Some(vec![]), 2).unwrap();
        assert!(sample_superpoint(&empty, &index, 1, 0.5, 1).is_err());
    }

    #[test]
    fn superpoint_respects_cluster_geometry() {
        // Two clusters 10 m apart; radius 1 m regions seeded in one cluster
        // never reach the other.
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            positions.push([i as f64 * 0.05, 0.0, 0.0]); // cluster A near origin
            labels.push(0);
        }
        for i in 0..20 {
            positions.push([10.0 + i as f64 * 0.05, 0.0, 0.0]); // cluster B
            labels.push(1);
        }
        let cloud =
            PointCloud::new(positions, vec![[0.5; 3]; 40], Some(labels), 2).unwrap();
        let index = build_index(cloud.positions()).unwrap();
        // Try seeds until one lands a single region in cluster A, then check
        // no cluster-B point is annotated.
        let mut checked = false;
        for seed in 0..20 {
            let set = sample_superpoint(&cloud, &index, 1, 1.0, seed).unwrap();
            if set.indices.iter().all(|&i| i < 20) && !set.is_empty() {
                assert!(set.indices.iter().all(|&i| i < 20));
                checked = true;
                break;
            }
        }
        assert!(checked, "no seed placed the region in cluster A");
    }

    #[test]
    fn annotated_points_keep_true_labels() {
        let spec = SceneSpec {
            num_points: 3000,
            ..SceneSpec::default()
        };
        let cloud = generate_scene(&spec).unwrap();
        let gt = cloud.labels().unwrap();
        let set = sample_fraction(&cloud, 0.05, 11).unwrap();
        let classes = set.labels_from(&cloud).unwrap();
        for (&i, &c) in set.indices.iter().zip(&classes) {
            assert_eq!(gt[i] as usize, c);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join(format!("weakseg-wl-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for scheme in [
            Scheme::OnePoint,
            Scheme::Fraction(0.01),
            Scheme::Superpoint {
                regions: 12,
                radius: 0.5,
            },
        ] {
            let set = WeakLabelSet {
                indices: vec![3, 17, 256],
                scheme,
                seed: 99,
            };
            let path = dir.join("labels.txt");
            save_weak_labels(&set, &path).unwrap();
            let loaded = load_weak_labels(&path).unwrap();
            assert_eq!(loaded, set);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
