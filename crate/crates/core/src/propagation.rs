//! Sparse label propagation: class prototypes from labeled embeddings,
//! Gaussian similarity to every unlabeled embedding, a row-wise softmax
//! class assignment, class-balanced top-K selection, and soft pseudo
//! labels for the selected points.
//!
//! The whole pass costs O(N·C·d) time and O(N·C) auxiliary memory for N
//! unlabeled points, C classes and embedding width d; nothing quadratic in
//! the point count is ever allocated. A fully connected graph-diffusion
//! variant exists only as a small-scale reference for runtime comparison
//! ([`dense_reference_propagate`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embeddings partitioned into labeled and unlabeled rows (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub labeled: Vec<f64>,
    pub unlabeled: Vec<f64>,
    pub dim: usize,
}

impl Embeddings {
    pub fn new(labeled: Vec<f64>, unlabeled: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dim must be positive"));
        }
        if !labeled.len().is_multiple_of(dim) || !unlabeled.len().is_multiple_of(dim) {
            return Err(Error::validation(
                "embedding buffer length is not a multiple of dim",
            ));
        }
        Ok(Embeddings {
            labeled,
            unlabeled,
            dim,
        })
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.len() / self.dim
    }

    pub fn num_unlabeled(&self) -> usize {
        self.unlabeled.len() / self.dim
    }

    pub fn labeled_row(&self, i: usize) -> &[f64] {
        &self.labeled[i * self.dim..(i + 1) * self.dim]
    }

    pub fn unlabeled_row(&self, i: usize) -> &[f64] {
        &self.unlabeled[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-class mean embeddings over the labeled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// Row-major C x d; rows of absent classes are zero and must be ignored.
    pub rho: Vec<f64>,
    pub present: Vec<bool>,
    pub dim: usize,
}

impl Prototypes {
    pub fn class_row(&self, c: usize) -> &[f64] {
        &self.rho[c * self.dim..(c + 1) * self.dim]
    }

    /// Present class ids, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        self.present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(c, _)| c)
            .collect()
    }
}

/// Dense N x C_present matrix with its column-to-class mapping. Used for
/// both the similarity matrix W and the assignment matrix S.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatrix {
    pub values: Vec<f64>,
    pub num_rows: usize,
    /// Class id of each column, ascending.
    pub classes: Vec<usize>,
}

impl ClassMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes.len()..(i + 1) * self.classes.len()]
    }
}

/// Boolean mask with the same shape as a [`ClassMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopkMask {
    pub bits: Vec<bool>,
    pub num_rows: usize,
    pub classes: Vec<usize>,
}

impl TopkMask {
    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.classes.len()..(i + 1) * self.classes.len()]
    }
}

/// Soft pseudo label for one unlabeled point.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    /// Row into the unlabeled partition.
    pub row: usize,
    pub chosen_class: usize,
    /// Full-length soft distribution (length C, zero at absent classes);
    /// sums to one.
    pub soft: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Length N over unlabeled rows; true where a pseudo label exists.
    pub point_mask: Vec<bool>,
    /// One entry per masked row, in ascending row order.
    pub entries: Vec<PseudoLabel>,
    pub num_classes: usize,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    /// Similarity bandwidth. `None` selects it adaptively per call: the
    /// mean squared distance to the nearest prototype over a deterministic
    /// sample of up to 1024 unlabeled points.
    pub sigma: Option<f64>,
    /// Pseudo labels granted per class and call.
    pub k_top: usize,
    /// First training epoch at which propagation runs.
    pub enabled_after_epoch: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            sigma: None,
            k_top: 32,
            enabled_after_epoch: 30,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("sigma must be a positive real"));
            }
        }
        if self.k_top == 0 {
            return Err(Error::validation("k_top must be at least 1"));
        }
        Ok(())
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Per-class mean of the labeled embeddings. Classes without labeled
/// points are flagged absent and get no prototype.
pub fn compute_prototypes(
    z_labeled: &[f64],
    labels: &[usize],
    num_classes: usize,
    dim: usize,
) -> Result<Prototypes> {
    if labels.is_empty() {
        return Err(Error::validation("no labeled points"));
    }
    if z_labeled.len() != labels.len() * dim {
        return Err(Error::validation(format!(
            "embedding buffer holds {} values, expected {} x {}",
            z_labeled.len(),
            labels.len(),
            dim
        )));
    }
    let mut rho = vec![0.0; num_classes * dim];
    let mut counts = vec![0usize; num_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::validation(format!(
                "label {c} outside [0, {num_classes})"
            )));
        }
        counts[c] += 1;
        let row = &z_labeled[i * dim..(i + 1) * dim];
        for (acc, v) in rho[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut present = vec![false; num_classes];
    for c in 0..num_classes {
        if counts[c] > 0 {
            present[c] = true;
            let inv = 1.0 / counts[c] as f64;
            for v in rho[c * dim..(c + 1) * dim].iter_mut() {
                *v *= inv;
            }
        }
    }
    Ok(Prototypes { rho, present, dim })
}

/// Gaussian similarity between every unlabeled embedding and every present
/// prototype: `W[i][c] = exp(-||z_i - rho_c||^2 / sigma)`.
pub fn similarity_matrix(
    z_unlabeled: &[f64],
    dim: usize,
    prototypes: &Prototypes,
    sigma: f64,
) -> Result<ClassMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation("sigma must be a positive real"));
    }
    if prototypes.dim != dim {
        return Err(Error::validation("prototype dim mismatch"));
    }
    let classes = prototypes.present_classes();
    if classes.is_empty() {
        return Err(Error::validation("no present class"));
    }
    let n = z_unlabeled.len() / dim;
    let inv_sigma = 1.0 / sigma;
    let mut values = Vec::with_capacity(n * classes.len());
    for i in 0..n {
        let z = &z_unlabeled[i * dim..(i + 1) * dim];
        for &c in &classes {
            values.push((-dist2(z, prototypes.class_row(c)) * inv_sigma).exp());
        }
    }
    Ok(ClassMatrix {
        values,
        num_rows: n,
        classes,
    })
}

/// Row-wise softmax over classes: `S[i][c] = exp(W[i][c]) / sum_c exp(W[i][c])`.
pub fn class_assignment(w: &ClassMatrix) -> ClassMatrix {
    let cp = w.classes.len();
    let mut values = Vec::with_capacity(w.values.len());
    for i in 0..w.num_rows {
        let row = w.row(i);
        let mut denom = 0.0;
        for &v in row {
            denom += v.exp();
        }
        for &v in row {
            values.push(v.exp() / denom);
        }
    }
    debug_assert_eq!(values.len(), w.num_rows * cp);
    ClassMatrix {
        values,
        num_rows: w.num_rows,
        classes: w.classes.clone(),
    }
}

/// Per class, mark the `min(k_top, N)` rows with the largest assignment
/// probability; ties go to the lower row index.
pub fn topk_mask(s: &ClassMatrix, k_top: usize) -> TopkMask {
    let n = s.num_rows;
    let cp = s.classes.len();
    let k = k_top.min(n);
    let mut bits = vec![false; n * cp];
    let mut order: Vec<u32> = Vec::with_capacity(n);
    for col in 0..cp {
        order.clear();
        order.extend(0..n as u32);
        let better = |&a: &u32, &b: &u32| {
            let va = s.values[a as usize * cp + col];
            let vb = s.values[b as usize * cp + col];
            vb.total_cmp(&va).then(a.cmp(&b))
        };
        if k < n {
            order.select_nth_unstable_by(k - 1, better);
        }
        for &row in &order[..k] {
            bits[row as usize * cp + col] = true;
        }
    }
    TopkMask {
        bits,
        num_rows: n,
        classes: s.classes.clone(),
    }
}

/// Collapse the per-class mask to a per-point mask plus, for every masked
/// point, the most probable among its selected classes (ties to the lower
/// class id).
pub fn point_mask(mask: &TopkMask, s: &ClassMatrix) -> (Vec<bool>, Vec<Option<usize>>) {
    let cp = mask.classes.len();
    let mut point = vec![false; mask.num_rows];
    let mut chosen = vec![None; mask.num_rows];
    for i in 0..mask.num_rows {
        let mrow = mask.row(i);
        let srow = s.row(i);
        let mut best: Option<(f64, usize)> = None;
        for col in 0..cp {
            if mrow[col] {
                let v = srow[col];
                // strict > keeps the earlier (lower-id) class on ties
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, mask.classes[col]));
                }
            }
        }
        if let Some((_, class)) = best {
            point[i] = true;
            chosen[i] = Some(class);
        }
    }
    (point, chosen)
}

/// Attach the full assignment row as the soft label of every masked point.
pub fn sparse_pseudo_labels(
    point_mask: &[bool],
    chosen: &[Option<usize>],
    s: &ClassMatrix,
    num_classes: usize,
) -> PseudoLabelSet {
    let cp = s.classes.len();
    let mut entries = Vec::new();
    for (i, &masked) in point_mask.iter().enumerate() {
        if !masked {
            continue;
        }
        let mut soft = vec![0.0; num_classes];
        let srow = s.row(i);
        for col in 0..cp {
            soft[s.classes[col]] = srow[col];
        }
        entries.push(PseudoLabel {
            row: i,
            chosen_class: chosen[i].expect("masked row has a chosen class"),
            soft,
        });
    }
    PseudoLabelSet {
        point_mask: point_mask.to_vec(),
        entries,
        num_classes,
    }
}

/// Result of the propagation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SpLoss {
    pub loss: f64,
    /// Gradient w.r.t. the pre-softmax logits of the unlabeled rows,
    /// row-major N x C; zero outside the mask.
    pub grad: Vec<f64>,
    /// Number of probabilities clamped at the log floor.
    pub clamped: usize,
}

/// Soft-target cross entropy over the masked points:
/// `-(1/|mask|) * sum_i sum_c yp[i][c] * log(yu[i][c])`.
///
/// Through the softmax the logit gradient of a masked row is
/// `(yu - yp) / |mask|`; the prototypes and the assignment matrix are
/// constants here, so only the prediction receives gradient. Probabilities
/// below 1e-12 are clamped inside the log (the gradient identity is
/// unaffected) and counted.
pub fn loss_sp(pseudo: &PseudoLabelSet, probs_unlabeled: &[f64], num_classes: usize) -> Result<SpLoss> {
    let n = pseudo.point_mask.len();
    if probs_unlabeled.len() != n * num_classes {
        return Err(Error::validation(format!(
            "probability buffer holds {} values, expected {} x {}",
            probs_unlabeled.len(),
            n,
            num_classes
        )));
    }
    if num_classes != pseudo.num_classes {
        return Err(Error::validation("class count mismatch"));
    }
    let mut grad = vec![0.0; n * num_classes];
    let m = pseudo.entries.len();
    if m == 0 {
        return Ok(SpLoss {
            loss: 0.0,
            grad,
            clamped: 0,
        });
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut clamped = 0usize;
    for entry in &pseudo.entries {
        let row = &probs_unlabeled[entry.row * num_classes..(entry.row + 1) * num_classes];
        let grow = &mut grad[entry.row * num_classes..(entry.row + 1) * num_classes];
        for c in 0..num_classes {
            let yp = entry.soft[c];
            if yp > 0.0 {
                let mut yu = row[c];
                if yu < 1e-12 {
                    yu = 1e-12;
                    clamped += 1;
                }
                loss -= yp * yu.ln();
            }
            grow[c] = (row[c] - yp) * inv_m;
        }
    }
    Ok(SpLoss {
        loss: loss * inv_m,
        grad,
        clamped,
    })
}

/// Adaptive bandwidth: mean squared distance to the nearest prototype over
/// an evenly strided sample of at most 1024 unlabeled rows.
pub fn adaptive_sigma(emb: &Embeddings, prototypes: &Prototypes) -> f64 {
    let n = emb.num_unlabeled();
    if n == 0 {
        return 1.0;
    }
    let classes = prototypes.present_classes();
    let count = n.min(1024);
    let mut total = 0.0;
    for t in 0..count {
        let i = t * n / count;
        let z = emb.unlabeled_row(i);
        let mut best = f64::INFINITY;
        for &c in &classes {
            best = best.min(dist2(z, prototypes.class_row(c)));
        }
        total += best;
    }
    let sigma = total / count as f64;
    if sigma > 0.0 {
        sigma
    } else {
        1e-12
    }
}

/// The full propagation pass:
/// prototypes -> similarity -> assignment -> top-K mask -> point mask ->
/// soft pseudo labels. O(N·C·d) time, O(N·C) auxiliary memory.
pub fn propagate(
    emb: &Embeddings,
    labels: &[usize],
    config: &PropagationConfig,
) -> Result<PseudoLabelSet> {
    config.validate()?;
    let num_classes = labels.iter().map(|&c| c + 1).max().unwrap_or(0);
    propagate_with_classes(emb, labels, num_classes, config)
}

/// As [`propagate`] but with an explicit class count (classes above the
/// largest labeled id stay absent).
pub fn propagate_with_classes(
    emb: &Embeddings,
    labels: &[usize],
    num_classes: usize,
    config: &PropagationConfig,
) -> Result<PseudoLabelSet> {
    config.validate()?;
    let prototypes = compute_prototypes(&emb.labeled, labels, num_classes, emb.dim)?;
    let sigma = config.sigma.unwrap_or_else(|| adaptive_sigma(emb, &prototypes));
    let w = similarity_matrix(&emb.unlabeled, emb.dim, &prototypes, sigma)?;
    let s = class_assignment(&w);
    let mask = topk_mask(&s, config.k_top);
    let (pmask, chosen) = point_mask(&mask, &s);
    Ok(sparse_pseudo_labels(&pmask, &chosen, &s, num_classes))
}

/// Cap on the dense reference path; beyond this the quadratic cost is the
/// point, not something to demonstrate by exhausting memory.
pub const DENSE_REFERENCE_MAX_POINTS: usize = 20_000;

/// Fully connected graph diffusion, the O((N+M)^2·d) baseline the sparse
/// path replaces. One sweep: every node averages the class scores of all
/// nodes, weighted by Gaussian affinity computed on the fly (O(N+M)
/// memory, quadratic time). Labeled rows stay clamped to their one-hot.
/// Refuses clouds above [`DENSE_REFERENCE_MAX_POINTS`] unlabeled points.
///
/// This exists for runtime comparison only; it is not the production path
/// and its scores are not expected to match [`propagate`].
pub fn dense_reference_propagate(
    emb: &Embeddings,
    labels: &[usize],
    num_classes: usize,
    config: &PropagationConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = emb.num_unlabeled();
    let m = emb.num_labeled();
    if n > DENSE_REFERENCE_MAX_POINTS {
        return Err(Error::DenseSizeLimit {
            n,
            max: DENSE_REFERENCE_MAX_POINTS,
        });
    }
    if labels.len() != m || m == 0 {
        return Err(Error::validation("no labeled points"));
    }
    let prototypes = compute_prototypes(&emb.labeled, labels, num_classes, emb.dim)?;
    let sigma = config.sigma.unwrap_or_else(|| adaptive_sigma(emb, &prototypes));
    let inv_sigma = 1.0 / sigma;
    let total = m + n;
    let row_of = |i: usize| -> &[f64] {
        if i < m {
            emb.labeled_row(i)
        } else {
            emb.unlabeled_row(i - m)
        }
    };
    // Initial scores: one-hot for labeled nodes, uniform for unlabeled.
    let mut scores = vec![1.0 / num_classes as f64; total * num_classes];
    for (i, &c) in labels.iter().enumerate() {
        let row = &mut scores[i * num_classes..(i + 1) * num_classes];
        row.fill(0.0);
        row[c] = 1.0;
    }
    let mut next = vec![0.0; total * num_classes];
    for i in 0..total {
        let zi = row_of(i);
        let acc = &mut next[i * num_classes..(i + 1) * num_classes];
        let mut weight_sum = 0.0;
        for j in 0..total {
            let w = (-dist2(zi, row_of(j)) * inv_sigma).exp();
            weight_sum += w;
            let srow = &scores[j * num_classes..(j + 1) * num_classes];
            for c in 0..num_classes {
                acc[c] += w * srow[c];
            }
        }
        let inv = 1.0 / weight_sum;
        for c in acc.iter_mut() {
            *c *= inv;
        }
    }
    // clamp labeled rows, return unlabeled scores
    for (i, &c) in labels.iter().enumerate() {
        let row = &mut next[i * num_classes..(i + 1) * num_classes];
        row.fill(0.0);
        row[c] = 1.0;
    }
    Ok(next[m * num_classes..].to_vec())
}
