//! Ground truth and losses for the self-supervised colorization task.
//!
//! The network predicts, per point, the scaled chromatic channels (a, b)
//! plus the mean and standard deviation of each channel over the point's
//! K-nearest neighborhood. All losses are L1 with subgradient 0 at kinks;
//! sums run in point order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::spatial::{NeighborTable, SpatialIndex};

/// Variance regularizer inside the sigma square root, in scaled ab units.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Column layout of a pretext prediction row.
pub const COL_A: usize = 0;
pub const COL_B: usize = 1;
pub const COL_MU_A: usize = 2;
pub const COL_SIGMA_A: usize = 3;
pub const COL_MU_B: usize = 4;
pub const COL_SIGMA_B: usize = 5;

/// Per-point neighborhood color statistics (scaled ab units).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub mu_a: Vec<f64>,
    pub sigma_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub epsilon: f64,
}

impl LocalStats {
    pub fn len(&self) -> usize {
        self.mu_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_a.is_empty()
    }
}

/// Neighborhood mean and population standard deviation of the a/b targets.
/// The query point belongs to its own neighborhood; the divisor is exactly
/// K; sigma = sqrt(variance + epsilon).
pub fn local_color_stats(
    ab_targets: &[[f64; 2]],
    index: &SpatialIndex,
    k: usize,
    epsilon: f64,
) -> Result<LocalStats> {
    let table = NeighborTable::build(index, k)?;
    local_color_stats_from_table(ab_targets, &table, epsilon)
}

/// Same computation over a prebuilt neighbor table (training caches these).
pub fn local_color_stats_from_table(
    ab_targets: &[[f64; 2]],
    table: &NeighborTable,
    epsilon: f64,
) -> Result<LocalStats> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::validation("epsilon must be a positive real"));
    }
    if table.n != ab_targets.len() {
        return Err(Error::validation(format!(
            "neighbor table covers {} points but {} targets given",
            table.n,
            ab_targets.len()
        )));
    }
    let n = ab_targets.len();
    let k = table.k as f64;
    let mut stats = LocalStats {
        mu_a: Vec::with_capacity(n),
        sigma_a: Vec::with_capacity(n),
        mu_b: Vec::with_capacity(n),
        sigma_b: Vec::with_capacity(n),
        epsilon,
    };
    for i in 0..n {
        let mut sum = [0.0f64; 2];
        for &j in table.row(i) {
            sum[0] += ab_targets[j as usize][0];
            sum[1] += ab_targets[j as usize][1];
        }
        let mu = [sum[0] / k, sum[1] / k];
        let mut sq = [0.0f64; 2];
        for &j in table.row(i) {
            let da = ab_targets[j as usize][0] - mu[0];
            let db = ab_targets[j as usize][1] - mu[1];
            sq[0] += da * da;
            sq[1] += db * db;
        }
        stats.mu_a.push(mu[0]);
        stats.mu_b.push(mu[1]);
        stats.sigma_a.push((sq[0] / k + epsilon).sqrt());
        stats.sigma_b.push((sq[1] / k + epsilon).sqrt());
    }
    Ok(stats)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_len(pred: usize, other: usize, what: &str) -> Result<()> {
    if pred == 0 {
        return Err(Error::validation("empty prediction"));
    }
    if pred != other {
        return Err(Error::validation(format!(
            "prediction rows {pred} do not match {what} rows {other}"
        )));
    }
    Ok(())
}

/// Mean L1 error of the predicted a/b channels:
/// `(1/2N) * sum(|a - a_hat| + |b - b_hat|)`.
/// The gradient lives in columns 0..2: `sign(a_hat - a) / (2N)`.
pub fn loss_ab(pred: &[[f64; 6]], targets: &[[f64; 2]]) -> Result<(f64, Vec<[f64; 6]>)> {
    check_len(pred.len(), targets.len(), "target")?;
    let n = pred.len();
    let scale = 1.0 / (2.0 * n as f64);
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 6]; n];
    for i in 0..n {
        let ra = pred[i][COL_A] - targets[i][0];
        let rb = pred[i][COL_B] - targets[i][1];
        loss += ra.abs() + rb.abs();
        grad[i][COL_A] = sign(ra) * scale;
        grad[i][COL_B] = sign(rb) * scale;
    }
    Ok((loss * scale, grad))
}

/// Local perceptual regularizer: mean L1 error of the four predicted
/// neighborhood statistics, `(1/4N) * sum` over channels. Gradient lives in
/// columns 2..6.
pub fn loss_local(pred: &[[f64; 6]], stats: &LocalStats) -> Result<(f64, Vec<[f64; 6]>)> {
    check_len(pred.len(), stats.len(), "stats")?;
    let n = pred.len();
    let scale = 1.0 / (4.0 * n as f64);
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 6]; n];
    for i in 0..n {
        let residuals = [
            (COL_MU_A, pred[i][COL_MU_A] - stats.mu_a[i]),
            (COL_SIGMA_A, pred[i][COL_SIGMA_A] - stats.sigma_a[i]),
            (COL_MU_B, pred[i][COL_MU_B] - stats.mu_b[i]),
            (COL_SIGMA_B, pred[i][COL_SIGMA_B] - stats.sigma_b[i]),
        ];
        for (col, r) in residuals {
            loss += r.abs();
            grad[i][col] = sign(r) * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Total pretext loss: `loss_ab + loss_local`, gradients added.
pub fn loss_pretext(
    pred: &[[f64; 6]],
    targets: &[[f64; 2]],
    stats: &LocalStats,
) -> Result<(f64, Vec<[f64; 6]>)> {
    let (ab, mut grad) = loss_ab(pred, targets)?;
    let (local, grad_local) = loss_local(pred, stats)?;
    for (g, gl) in grad.iter_mut().zip(&grad_local) {
        for c in 0..6 {
            g[c] += gl[c];
        }
    }
    Ok((ab + local, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::spatial::build_index;

    fn line_positions(n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn uniform_color_gives_flat_stats() {
        let positions = line_positions(10);
        let index = build_index(&positions).unwrap();
        let ab = vec![[0.25, -0.5]; 10];
        let stats = local_color_stats(&ab, &index, 4, DEFAULT_EPSILON).unwrap();
        for i in 0..10 {
            assert_eq!(stats.mu_a[i], 0.25);
            assert_eq!(stats.mu_b[i], -0.5);
            assert_eq!(stats.sigma_a[i], DEFAULT_EPSILON.sqrt());
            assert_eq!(stats.sigma_b[i], DEFAULT_EPSILON.sqrt());
        }
    }

    #[test]
    fn k1_neighborhood_is_the_point_itself() {
        let positions = line_positions(5);
        let index = build_index(&positions).unwrap();
        let ab: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 0.1, -(i as f64) * 0.2]).collect();
        let stats = local_color_stats(&ab, &index, 1, DEFAULT_EPSILON).unwrap();
        for i in 0..5 {
            assert_eq!(stats.mu_a[i], ab[i][0]);
            assert_eq!(stats.mu_b[i], ab[i][1]);
            assert_eq!(stats.sigma_a[i], DEFAULT_EPSILON.sqrt());
        }
    }

    #[test]
    fn four_point_line_hand_enumeration() {
        // Points at x = 0, 1, 2, 3 with a-values 0, 0.2, 0.4, 0.6 and K = 2.
        // Neighborhoods (self plus nearest, ties to lower index):
        //   0: {0, 1}  1: {1, 0}  2: {2, 1}  3: {3, 2}
        let positions = line_positions(4);
        let index = build_index(&positions).unwrap();
        let ab: Vec<[f64; 2]> = [0.0, 0.2, 0.4, 0.6].iter().map(|&a| [a, 0.0]).collect();
        let eps = 1e-8;
        let stats = local_color_stats(&ab, &index, 2, eps).unwrap();
        let expect_mu = [0.1, 0.1, 0.3, 0.5];
        for i in 0..4 {
            assert!((stats.mu_a[i] - expect_mu[i]).abs() < 1e-15);
            // deviations are +-0.1 in every neighborhood
            let var = 0.1f64 * 0.1;
            assert!((stats.sigma_a[i] - (var + eps).sqrt()).abs() < 1e-15);
            assert_eq!(stats.mu_b[i], 0.0);
        }
    }

    #[test]
    fn rejects_k_exceeding_n() {
        let positions = line_positions(3);
        let index = build_index(&positions).unwrap();
        let ab = vec![[0.0, 0.0]; 3];
        assert!(local_color_stats(&ab, &index, 4, 1e-8).is_err());
    }

    #[test]
    fn sigma_lower_bound_holds() {
        let mut rng = SplitMix64::new(50);
        let positions: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect();
        let ab: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.next_f64() - 0.5, rng.next_f64() - 0.5])
            .collect();
        let index = build_index(&positions).unwrap();
        let stats = local_color_stats(&ab, &index, 16, DEFAULT_EPSILON).unwrap();
        let bound = DEFAULT_EPSILON.sqrt();
        for i in 0..200 {
            assert!(stats.sigma_a[i] >= bound);
            assert!(stats.sigma_b[i] >= bound);
        }
    }

    #[test]
    fn stats_are_permutation_equivariant() {
        let mut rng = SplitMix64::new(60);
        let n = 120;
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.next_f64() * 3.0, rng.next_f64() * 3.0, rng.next_f64()])
            .collect();
        let ab: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.next_f64() - 0.5, rng.next_f64() - 0.5])
            .collect();
        let index = build_index(&positions).unwrap();
        let stats = local_color_stats(&ab, &index, 8, 1e-8).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let positions_p: Vec<[f64; 3]> = perm.iter().map(|&i| positions[i]).collect();
        let ab_p: Vec<[f64; 2]> = perm.iter().map(|&i| ab[i]).collect();
        let index_p = build_index(&positions_p).unwrap();
        let stats_p = local_color_stats(&ab_p, &index_p, 8, 1e-8).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert!((stats_p.mu_a[new_row] - stats.mu_a[old_row]).abs() < 1e-12);
            assert!((stats_p.sigma_a[new_row] - stats.sigma_a[old_row]).abs() < 1e-12);
            assert!((stats_p.mu_b[new_row] - stats.mu_b[old_row]).abs() < 1e-12);
            assert!((stats_p.sigma_b[new_row] - stats.sigma_b[old_row]).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_ab_zero_at_perfect_prediction() {
        let targets = vec![[0.1, -0.2], [0.3, 0.4]];
        let pred: Vec<[f64; 6]> = targets.iter().map(|t| [t[0], t[1], 0.0, 0.0, 0.0, 0.0]).collect();
        let (loss, grad) = loss_ab(&pred, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
    }

    #[test]
    fn loss_ab_single_point_hand_value() {
        // N = 1, target (0.5, 0), prediction (0, 0):
        // loss = (1/2)(0.5 + 0) = 0.25
        let (loss, _) = loss_ab(&[[0.0; 6]], &[[0.5, 0.0]]).unwrap();
        assert_eq!(loss, 0.25);
    }

    #[test]
    fn loss_local_zero_at_perfect_prediction() {
        let stats = LocalStats {
            mu_a: vec![0.1, -0.2],
            sigma_a: vec![0.3, 0.4],
            mu_b: vec![-0.1, 0.2],
            sigma_b: vec![0.5, 0.6],
            epsilon: 1e-8,
        };
        let pred: Vec<[f64; 6]> = (0..2)
            .map(|i| {
                [
                    0.0,
                    0.0,
                    stats.mu_a[i],
                    stats.sigma_a[i],
                    stats.mu_b[i],
                    stats.sigma_b[i],
                ]
            })
            .collect();
        let (loss, grad) = loss_local(&pred, &stats).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.iter().all(|&v| v == 0.0)));
        // and the combined loss vanishes with perfect ab as well
        let targets = vec![[0.0, 0.0]; 2];
        let (total, _) = loss_pretext(&pred, &targets, &stats).unwrap();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn losses_are_non_negative() {
        let mut rng = SplitMix64::new(0x9E9);
        for _ in 0..50 {
            let n = 1 + rng.below(8);
            let targets: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.next_f64() - 0.5, rng.next_f64() - 0.5]).collect();
            let stats = LocalStats {
                mu_a: (0..n).map(|_| rng.next_f64() - 0.5).collect(),
                sigma_a: (0..n).map(|_| rng.next_f64()).collect(),
                mu_b: (0..n).map(|_| rng.next_f64() - 0.5).collect(),
                sigma_b: (0..n).map(|_| rng.next_f64()).collect(),
                epsilon: 1e-8,
            };
            let pred: Vec<[f64; 6]> = (0..n)
                .map(|_| {
                    let mut row = [0.0; 6];
                    for v in row.iter_mut() {
                        *v = rng.next_f64() * 2.0 - 1.0;
                    }
                    row
                })
                .collect();
            assert!(loss_ab(&pred, &targets).unwrap().0 >= 0.0);
            assert!(loss_local(&pred, &stats).unwrap().0 >= 0.0);
            assert!(loss_pretext(&pred, &targets, &stats).unwrap().0 >= 0.0);
        }
    }

    #[test]
    fn loss_local_single_point_hand_value() {
        // all four residuals 0.1 -> (1/4) * 4 * 0.1 = 0.1
        let stats = LocalStats {
            mu_a: vec![0.2],
            sigma_a: vec![0.2],
            mu_b: vec![0.2],
            sigma_b: vec![0.2],
            epsilon: 1e-8,
        };
        let pred = [[0.0, 0.0, 0.3, 0.3, 0.3, 0.3]];
        let (loss, _) = loss_local(&pred, &stats).unwrap();
        assert!((loss - 0.1).abs() < 1e-15);
    }

    /// Central finite differences over prediction entries, skipping
    /// coordinates near an L1 kink.
    fn check_grad_fd(
        pred: &[[f64; 6]],
        eval: &dyn Fn(&[[f64; 6]]) -> f64,
        grad: &[[f64; 6]],
        cols: std::ops::Range<usize>,
    ) {
        let h = 1e-6;
        let mut work = pred.to_vec();
        for i in 0..pred.len() {
            for c in cols.clone() {
                work[i][c] = pred[i][c] + h;
                let up = eval(&work);
                work[i][c] = pred[i][c] - h;
                let down = eval(&work);
                work[i][c] = pred[i][c];
                let fd = (up - down) / (2.0 * h);
                let an = grad[i][c];
                // L1 kink: the two-sided difference straddles the corner.
                if (up - down).abs() < 1e-12 && an != 0.0 {
                    continue;
                }
                let denom = an.abs().max(fd.abs()).max(1e-10);
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "point {i} col {c}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn loss_ab_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(70);
        let n = 12;
        let targets: Vec<[f64; 2]> = (0..n).map(|_| [rng.next_f64() - 0.5, rng.next_f64() - 0.5]).collect();
        let pred: Vec<[f64; 6]> = (0..n)
            .map(|_| {
                let mut row = [0.0; 6];
                for v in row.iter_mut() {
                    *v = rng.next_f64() - 0.5;
                }
                row
            })
            .collect();
        let (_, grad) = loss_ab(&pred, &targets).unwrap();
        check_grad_fd(&pred, &|p| loss_ab(p, &targets).unwrap().0, &grad, 0..2);
    }

    #[test]
    fn loss_local_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(80);
        let n = 12;
        let stats = LocalStats {
            mu_a: (0..n).map(|_| rng.next_f64() - 0.5).collect(),
            sigma_a: (0..n).map(|_| rng.next_f64()).collect(),
            mu_b: (0..n).map(|_| rng.next_f64() - 0.5).collect(),
            sigma_b: (0..n).map(|_| rng.next_f64()).collect(),
            epsilon: 1e-8,
        };
        let pred: Vec<[f64; 6]> = (0..n)
            .map(|_| {
                let mut row = [0.0; 6];
                for v in row.iter_mut() {
                    *v = rng.next_f64() - 0.5;
                }
                row
            })
            .collect();
        let (_, grad) = loss_local(&pred, &stats).unwrap();
        check_grad_fd(&pred, &|p| loss_local(p, &stats).unwrap().0, &grad, 2..6);
    }

    #[test]
    fn pretext_loss_is_exact_sum_of_parts() {
        let mut rng = SplitMix64::new(90);
        let n = 20;
        let targets: Vec<[f64; 2]> = (0..n).map(|_| [rng.next_f64(), rng.next_f64()]).collect();
        let stats = LocalStats {
            mu_a: (0..n).map(|_| rng.next_f64()).collect(),
            sigma_a: (0..n).map(|_| rng.next_f64()).collect(),
            mu_b: (0..n).map(|_| rng.next_f64()).collect(),
            sigma_b: (0..n).map(|_| rng.next_f64()).collect(),
            epsilon: 1e-8,
        };
        let pred: Vec<[f64; 6]> = (0..n)
            .map(|_| {
                let mut row = [0.0; 6];
                for v in row.iter_mut() {
                    *v = rng.next_f64() - 0.5;
                }
                row
            })
            .collect();
        let (ab, gab) = loss_ab(&pred, &targets).unwrap();
        let (local, glocal) = loss_local(&pred, &stats).unwrap();
        let (total, gtotal) = loss_pretext(&pred, &targets, &stats).unwrap();
        assert_eq!(total, ab + local);
        for i in 0..n {
            for c in 0..6 {
                assert_eq!(gtotal[i][c], gab[i][c] + glocal[i][c]);
            }
        }
    }
}
