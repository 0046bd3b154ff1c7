//! A small trainable point encoder with two heads.
//!
//! Per point: gather the K nearest neighbors, run each neighbor vector
//! through a shared two-layer MLP, max-pool over the neighborhood, refine
//! with a two-layer point MLP into the embedding Z, and map Z through a
//! linear head — six outputs for the colorization task, C class logits
//! (plus softmax probabilities) for segmentation.
//!
//! The neighbor vector is (delta-position, distance, delta-position,
//! neighbor channels): positions enter relative to the centroid only, so
//! point outputs are invariant to rigid translation of the scene.
//!
//! Gradients are exact reverse-mode derivatives of this computation graph,
//! written out by hand. Weights are stored column-major (fan-in outer,
//! fan-out inner) so forward, input-gradient and weight-gradient loops all
//! run over contiguous memory. Accumulation order is fixed, making every
//! pass bit-reproducible.

use crate::error::{Error, Result};
use crate::fsutil;
use crate::rng::SplitMix64;
use crate::spatial::NeighborTable;
use std::path::Path;

/// Raw per-point feature width (x, y, z plus three color channels).
pub const RAW_FEATURE_DIM: usize = 6;
/// Per-neighbor input width: delta(3) + distance(1) + relativized features(6).
pub const NEIGHBOR_INPUT_DIM: usize = RAW_FEATURE_DIM + 4;
/// Output width of the colorization head.
pub const PRETEXT_OUT_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Pretext,
    Seg,
}

/// Dense layer, weights column-major: `w[i * fan_out + o]` connects input
/// i to output o.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Linear {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * scale)
            .collect();
        Linear {
            w,
            b: vec![0.0; fan_out],
            fan_in,
            fan_out,
        }
    }

    #[inline]
    fn col(&self, i: usize) -> &[f64] {
        &self.w[i * self.fan_out..(i + 1) * self.fan_out]
    }

    /// out = b + W x (out must have length fan_out).
    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate() {
            axpy(out, xi, self.col(i));
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi.mul_add(a, *yi);
    }
}

// Unrolled dot product; the lane count keeps the FMA dependency chains
// short enough to saturate the vector units.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] = a[i + l].mul_add(b[i + l], acc[l]);
        }
    }
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    for i in chunks * 8..n {
        s = a[i].mul_add(b[i], s);
    }
    s
}

#[inline]
fn relu_inplace(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Neighbor MLP.
    pub enc1: Linear,
    pub enc2: Linear,
    /// Point MLP after pooling; `enc4` emits the embedding.
    pub enc3: Linear,
    pub enc4: Linear,
    pub head: Linear,
    pub head_kind: Head,
    pub hidden: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    /// Bumped on every optimizer step; guards against stale caches.
    pub version: u64,
}

pub const TENSOR_NAMES: [&str; 5] = ["enc1", "enc2", "enc3", "enc4", "head"];

impl ModelParams {
    pub fn named(&self) -> [(&'static str, &Linear); 5] {
        [
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("enc3", &self.enc3),
            ("enc4", &self.enc4),
            ("head", &self.head),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Linear); 5] {
        [
            ("enc1", &mut self.enc1),
            ("enc2", &mut self.enc2),
            ("enc3", &mut self.enc3),
            ("enc4", &mut self.enc4),
            ("head", &mut self.head),
        ]
    }

    pub fn head_out_dim(&self) -> usize {
        self.head.fan_out
    }
}

/// Fresh parameters. Weights are uniform in `+-1/sqrt(fan_in)` (standard
/// deviation `1/sqrt(3 fan_in)`), biases zero. Deterministic in the seed.
pub fn init_params(
    num_classes: usize,
    embed_dim: usize,
    hidden: usize,
    seed: u64,
    head_kind: Head,
) -> Result<ModelParams> {
    if num_classes < 2 {
        return Err(Error::validation("num_classes must be at least 2"));
    }
    if embed_dim < 2 {
        return Err(Error::validation("embed_dim must be at least 2"));
    }
    if hidden < 4 {
        return Err(Error::validation("hidden width must be at least 4"));
    }
    let mut rng = SplitMix64::new(seed);
    let head_out = match head_kind {
        Head::Pretext => PRETEXT_OUT_DIM,
        Head::Seg => num_classes,
    };
    Ok(ModelParams {
        enc1: Linear::init(NEIGHBOR_INPUT_DIM, hidden, &mut rng),
        enc2: Linear::init(hidden, hidden, &mut rng),
        enc3: Linear::init(hidden, hidden, &mut rng),
        enc4: Linear::init(hidden, embed_dim, &mut rng),
        head: Linear::init(embed_dim, head_out, &mut rng),
        head_kind,
        hidden,
        embed_dim,
        num_classes,
        version: 0,
    })
}

/// Copy an encoder into a freshly headed segmentation model. The pretext
/// head is discarded; the segmentation head is initialized from `seed`.
pub fn transfer_encoder(
    pretrained: &ModelParams,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    if num_classes < 2 {
        return Err(Error::validation("num_classes must be at least 2"));
    }
    let mut rng = SplitMix64::new(seed);
    Ok(ModelParams {
        enc1: pretrained.enc1.clone(),
        enc2: pretrained.enc2.clone(),
        enc3: pretrained.enc3.clone(),
        enc4: pretrained.enc4.clone(),
        head: Linear::init(pretrained.embed_dim, num_classes, &mut rng),
        head_kind: Head::Seg,
        hidden: pretrained.hidden,
        embed_dim: pretrained.embed_dim,
        num_classes,
        version: 0,
    })
}

/// Network outputs for one head.
#[derive(Debug, Clone, PartialEq)]
pub enum Outputs {
    /// Row-major N x 6 colorization predictions.
    Pretext(Vec<[f64; 6]>),
    /// Row-major N x C.
    Seg { logits: Vec<f64>, probs: Vec<f64> },
}

/// Intermediate activations retained for the backward pass. The neighbor
/// MLP activations are recomputed per pooling winner rather than stored,
/// keeping the cache linear in N.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    head: Head,
    n: usize,
    /// Post-pooling vector per point (already rectified by the pooling of
    /// rectified values).
    pooled: Vec<f64>,
    /// Winning neighbor slot per (point, channel).
    winners: Vec<u16>,
    /// Post-relu point MLP hidden activation.
    h3: Vec<f64>,
    /// Embeddings (input to the head).
    z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// Row-major N x d embeddings.
    pub z: Vec<f64>,
    pub outputs: Outputs,
    pub cache: ForwardCache,
}

impl PartialEq for ForwardCache {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.head == other.head
            && self.n == other.n
            && self.pooled == other.pooled
            && self.winners == other.winners
            && self.h3 == other.h3
            && self.z == other.z
    }
}

#[inline]
fn neighbor_input(features: &[[f64; 6]], center: usize, neighbor: usize, out: &mut [f64; 10]) {
    let fi = &features[center];
    let fj = &features[neighbor];
    let dx = fj[0] - fi[0];
    let dy = fj[1] - fi[1];
    let dz = fj[2] - fi[2];
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    *out = [dx, dy, dz, dist, dx, dy, dz, fj[3], fj[4], fj[5]];
}

/// Run the network over every point. `features` are raw per-point rows
/// (x, y, z, then color channels appropriate to the head); `knn` supplies
/// the neighborhoods.
pub fn forward(
    params: &ModelParams,
    features: &[[f64; 6]],
    knn: &NeighborTable,
    head: Head,
) -> Result<ForwardPass> {
    if head != params.head_kind {
        return Err(Error::validation(
            "requested head does not match the parameters",
        ));
    }
    if knn.n != features.len() {
        return Err(Error::validation(format!(
            "neighbor table covers {} points but {} feature rows given",
            knn.n,
            features.len()
        )));
    }
    if knn.k > u16::MAX as usize {
        return Err(Error::validation("neighborhood too large for the encoder"));
    }
    let n = features.len();
    let h = params.hidden;
    let d = params.embed_dim;
    let out_dim = params.head_out_dim();

    let mut pooled = vec![0.0; n * h];
    let mut winners = vec![0u16; n * h];
    let mut h3_all = vec![0.0; n * h];
    let mut z_all = vec![0.0; n * d];
    let mut out_all = vec![0.0; n * out_dim];

    let mut u = [0.0f64; NEIGHBOR_INPUT_DIM];
    let mut h1 = vec![0.0; h];
    let mut h2 = vec![0.0; h];

    for i in 0..n {
        let pool = &mut pooled[i * h..(i + 1) * h];
        let win = &mut winners[i * h..(i + 1) * h];
        pool.fill(f64::NEG_INFINITY);
        for (slot, &j) in knn.row(i).iter().enumerate() {
            neighbor_input(features, i, j as usize, &mut u);
            params.enc1.forward(&u, &mut h1);
            relu_inplace(&mut h1);
            params.enc2.forward(&h1, &mut h2);
            for c in 0..h {
                let v = h2[c].max(0.0);
                if v > pool[c] {
                    pool[c] = v;
                    win[c] = slot as u16;
                }
            }
        }
        let h3 = &mut h3_all[i * h..(i + 1) * h];
        params.enc3.forward(pool, h3);
        relu_inplace(h3);
        let z = &mut z_all[i * d..(i + 1) * d];
        params.enc4.forward(h3, z);
        params.head.forward(z, &mut out_all[i * out_dim..(i + 1) * out_dim]);
    }

    let outputs = match head {
        Head::Pretext => {
            let rows = out_all
                .chunks_exact(PRETEXT_OUT_DIM)
                .map(|r| [r[0], r[1], r[2], r[3], r[4], r[5]])
                .collect();
            Outputs::Pretext(rows)
        }
        Head::Seg => {
            let mut probs = vec![0.0; n * out_dim];
            for i in 0..n {
                let logits = &out_all[i * out_dim..(i + 1) * out_dim];
                let prow = &mut probs[i * out_dim..(i + 1) * out_dim];
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (p, &l) in prow.iter_mut().zip(logits) {
                    *p = (l - mx).exp();
                    sum += *p;
                }
                let inv = 1.0 / sum;
                for p in prow.iter_mut() {
                    *p *= inv;
                }
            }
            Outputs::Seg {
                logits: out_all,
                probs,
            }
        }
    };

    Ok(ForwardPass {
        z: z_all.clone(),
        outputs,
        cache: ForwardCache {
            version: params.version,
            head,
            n,
            pooled,
            winners,
            h3: h3_all,
            z: z_all,
        },
    })
}

/// Per-tensor parameter gradients, same shapes as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl TensorGrad {
    fn zeros(layer: &Linear) -> TensorGrad {
        TensorGrad {
            w: vec![0.0; layer.w.len()],
            b: vec![0.0; layer.b.len()],
        }
    }

    #[inline]
    fn col_mut(&mut self, i: usize, fan_out: usize) -> &mut [f64] {
        &mut self.w[i * fan_out..(i + 1) * fan_out]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub enc1: TensorGrad,
    pub enc2: TensorGrad,
    pub enc3: TensorGrad,
    pub enc4: TensorGrad,
    pub head: TensorGrad,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> ModelGrads {
        ModelGrads {
            enc1: TensorGrad::zeros(&params.enc1),
            enc2: TensorGrad::zeros(&params.enc2),
            enc3: TensorGrad::zeros(&params.enc3),
            enc4: TensorGrad::zeros(&params.enc4),
            head: TensorGrad::zeros(&params.head),
        }
    }

    pub fn named(&self) -> [(&'static str, &TensorGrad); 5] {
        [
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("enc3", &self.enc3),
            ("enc4", &self.enc4),
            ("head", &self.head),
        ]
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (mine, theirs) in [
            (&mut self.enc1, &other.enc1),
            (&mut self.enc2, &other.enc2),
            (&mut self.enc3, &other.enc3),
            (&mut self.enc4, &other.enc4),
            (&mut self.head, &other.head),
        ] {
            for (a, b) in mine.w.iter_mut().zip(&theirs.w) {
                *a += b;
            }
            for (a, b) in mine.b.iter_mut().zip(&theirs.b) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc3,
            &mut self.enc4,
            &mut self.head,
        ] {
            for v in t.w.iter_mut() {
                *v *= s;
            }
            for v in t.b.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Exact reverse-mode gradients. `grad_outputs` is row-major N x out_dim,
/// taken w.r.t. the raw head outputs (the pre-softmax logits for the
/// segmentation head; the loss functions already differentiate through
/// their own softmax). The cache must come from a forward pass over the
/// same parameters, features and neighborhoods.
pub fn backward(
    params: &ModelParams,
    features: &[[f64; 6]],
    knn: &NeighborTable,
    cache: &ForwardCache,
    grad_outputs: &[f64],
) -> Result<ModelGrads> {
    if cache.version != params.version {
        return Err(Error::StaleCache);
    }
    if cache.head != params.head_kind {
        return Err(Error::validation("cache head does not match parameters"));
    }
    if cache.n != features.len() || knn.n != features.len() {
        return Err(Error::validation("cache/feature size mismatch"));
    }
    let out_dim = params.head_out_dim();
    if grad_outputs.len() != cache.n * out_dim {
        return Err(Error::validation(format!(
            "gradient buffer holds {} values, expected {} x {}",
            grad_outputs.len(),
            cache.n,
            out_dim
        )));
    }
    let n = cache.n;
    let h = params.hidden;
    let d = params.embed_dim;

    let mut grads = ModelGrads::zeros_like(params);
    let mut dz = vec![0.0; d];
    let mut dh3 = vec![0.0; h];
    let mut dpool = vec![0.0; h];
    let mut g2 = vec![0.0; h];
    let mut g1 = vec![0.0; h];
    let mut h1 = vec![0.0; h];
    let mut u = [0.0f64; NEIGHBOR_INPUT_DIM];

    for i in 0..n {
        let dout = &grad_outputs[i * out_dim..(i + 1) * out_dim];
        if dout.iter().all(|&g| g == 0.0) {
            continue;
        }
        let z = &cache.z[i * d..(i + 1) * d];
        // head
        for t in 0..d {
            dz[t] = dot(params.head.col(t), dout);
            axpy(grads.head.col_mut(t, out_dim), z[t], dout);
        }
        axpy(&mut grads.head.b, 1.0, dout);
        // enc4 (linear)
        let h3 = &cache.h3[i * h..(i + 1) * h];
        for t in 0..h {
            dh3[t] = dot(params.enc4.col(t), &dz);
            axpy(grads.enc4.col_mut(t, d), h3[t], &dz);
        }
        axpy(&mut grads.enc4.b, 1.0, &dz);
        // relu at h3
        for t in 0..h {
            if h3[t] <= 0.0 {
                dh3[t] = 0.0;
            }
        }
        // enc3
        let pooled = &cache.pooled[i * h..(i + 1) * h];
        for t in 0..h {
            dpool[t] = dot(params.enc3.col(t), &dh3);
            axpy(grads.enc3.col_mut(t, h), pooled[t], &dh3);
        }
        axpy(&mut grads.enc3.b, 1.0, &dh3);
        // max-pool of rectified neighbor activations: gradient flows to the
        // winning slot of each channel, and only where the pooled value is
        // strictly positive (otherwise every candidate was rectified flat).
        for t in 0..h {
            if pooled[t] <= 0.0 {
                dpool[t] = 0.0;
            }
        }
        let winners = &cache.winners[i * h..(i + 1) * h];
        let row = knn.row(i);
        for (slot, &j) in row.iter().enumerate() {
            let slot16 = slot as u16;
            let mut any = false;
            for c in 0..h {
                if winners[c] == slot16 && dpool[c] != 0.0 {
                    g2[c] = dpool[c];
                    any = true;
                } else {
                    g2[c] = 0.0;
                }
            }
            if !any {
                continue;
            }
            // recompute the neighbor's first activation
            neighbor_input(features, i, j as usize, &mut u);
            params.enc1.forward(&u, &mut h1);
            relu_inplace(&mut h1);
            // enc2
            for t in 0..h {
                g1[t] = dot(params.enc2.col(t), &g2);
                axpy(grads.enc2.col_mut(t, h), h1[t], &g2);
            }
            axpy(&mut grads.enc2.b, 1.0, &g2);
            // relu at h1
            for t in 0..h {
                if h1[t] <= 0.0 {
                    g1[t] = 0.0;
                }
            }
            // enc1
            for (s, &us) in u.iter().enumerate() {
                axpy(grads.enc1.col_mut(s, h), us, &g1);
            }
            axpy(&mut grads.enc1.b, 1.0, &g1);
        }
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

/// Save parameters as a versioned text container: a short header followed
/// by named tensors with explicit shapes and row-major values. Weight rows
/// are output-major (`rows = fan_out`, `cols = fan_in`); biases are
/// `1 x fan_out`. Values use shortest round-trip formatting, so load is
/// bit-exact.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    text.push_str("weakseg-checkpoint v1\n");
    text.push_str(match params.head_kind {
        Head::Pretext => "head pretext\n",
        Head::Seg => "head seg\n",
    });
    text.push_str(&format!("num_classes {}\n", params.num_classes));
    text.push_str(&format!("embed_dim {}\n", params.embed_dim));
    text.push_str(&format!("hidden {}\n", params.hidden));
    for (name, layer) in params.named() {
        text.push_str(&format!(
            "tensor {name}.weight {} {}\n",
            layer.fan_out, layer.fan_in
        ));
        for o in 0..layer.fan_out {
            for i in 0..layer.fan_in {
                if i > 0 {
                    text.push(' ');
                }
                text.push_str(&format!("{:?}", layer.w[i * layer.fan_out + o]));
            }
            text.push('\n');
        }
        text.push_str(&format!("tensor {name}.bias 1 {}\n", layer.fan_out));
        for (i, v) in layer.b.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            text.push_str(&format!("{v:?}"));
        }
        text.push('\n');
    }
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or("");
    if magic != "weakseg-checkpoint v1" {
        return Err(Error::validation(format!(
            "not a weakseg checkpoint (first line '{magic}')"
        )));
    }
    let mut head_kind = None;
    let mut num_classes = None;
    let mut embed_dim = None;
    let mut hidden = None;
    let mut line = lines.next();
    while let Some(l) = line {
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("head") => {
                head_kind = Some(match parts.next() {
                    Some("pretext") => Head::Pretext,
                    Some("seg") => Head::Seg,
                    other => {
                        return Err(Error::validation(format!("unknown head {other:?}")));
                    }
                });
            }
            Some("num_classes") => num_classes = parts.next().and_then(|v| v.parse().ok()),
            Some("embed_dim") => embed_dim = parts.next().and_then(|v| v.parse().ok()),
            Some("hidden") => hidden = parts.next().and_then(|v| v.parse().ok()),
            Some("tensor") => break,
            other => {
                return Err(Error::validation(format!(
                    "unexpected checkpoint line '{other:?}'"
                )))
            }
        }
        line = lines.next();
    }
    let head_kind = head_kind.ok_or_else(|| Error::validation("checkpoint missing head"))?;
    let num_classes: usize =
        num_classes.ok_or_else(|| Error::validation("checkpoint missing num_classes"))?;
    let embed_dim: usize =
        embed_dim.ok_or_else(|| Error::validation("checkpoint missing embed_dim"))?;
    let hidden: usize = hidden.ok_or_else(|| Error::validation("checkpoint missing hidden"))?;

    let head_out = match head_kind {
        Head::Pretext => PRETEXT_OUT_DIM,
        Head::Seg => num_classes,
    };
    let expected_shapes: [(String, usize, usize); 10] = [
        ("enc1.weight".into(), hidden, NEIGHBOR_INPUT_DIM),
        ("enc1.bias".into(), 1, hidden),
        ("enc2.weight".into(), hidden, hidden),
        ("enc2.bias".into(), 1, hidden),
        ("enc3.weight".into(), hidden, hidden),
        ("enc3.bias".into(), 1, hidden),
        ("enc4.weight".into(), embed_dim, hidden),
        ("enc4.bias".into(), 1, embed_dim),
        ("head.weight".into(), head_out, embed_dim),
        ("head.bias".into(), 1, head_out),
    ];

    let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(10);
    let mut current = line;
    for (name, rows, cols) in &expected_shapes {
        let decl = current.ok_or_else(|| {
            Error::validation(format!("checkpoint ended before tensor {name}"))
        })?;
        let mut parts = decl.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(Error::validation(format!(
                "expected tensor declaration, found '{decl}'"
            )));
        }
        let got_name = parts.next().unwrap_or("");
        if got_name != name {
            return Err(Error::validation(format!(
                "expected tensor {name}, found {got_name}"
            )));
        }
        let got_rows: usize = parts.next().and_then(|v| v.parse().ok()).unwrap_or(0);
        let got_cols: usize = parts.next().and_then(|v| v.parse().ok()).unwrap_or(0);
        if got_rows != *rows || got_cols != *cols {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected_rows: *rows,
                expected_cols: *cols,
                found_rows: got_rows,
                found_cols: got_cols,
            });
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..*rows {
            let row = lines.next().ok_or_else(|| {
                Error::validation(format!("tensor {name}: unexpected end of file"))
            })?;
            for field in row.split_whitespace() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::validation(format!("tensor {name}: bad value '{field}'"))
                })?;
                values.push(v);
            }
        }
        if values.len() != rows * cols {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected_rows: *rows,
                expected_cols: *cols,
                found_rows: values.len() / (*cols).max(1),
                found_cols: *cols,
            });
        }
        tensors.push(values);
        current = lines.next();
    }

    // transpose row-major (out, in) into column-major storage
    let build = |values: &[f64], bias: &[f64], fan_in: usize, fan_out: usize| -> Linear {
        let mut w = vec![0.0; fan_in * fan_out];
        for o in 0..fan_out {
            for i in 0..fan_in {
                w[i * fan_out + o] = values[o * fan_in + i];
            }
        }
        Linear {
            w,
            b: bias.to_vec(),
            fan_in,
            fan_out,
        }
    };
    Ok(ModelParams {
        enc1: build(&tensors[0], &tensors[1], NEIGHBOR_INPUT_DIM, hidden),
        enc2: build(&tensors[2], &tensors[3], hidden, hidden),
        enc3: build(&tensors[4], &tensors[5], hidden, hidden),
        enc4: build(&tensors[6], &tensors[7], hidden, embed_dim),
        head: build(&tensors[8], &tensors[9], embed_dim, head_out),
        head_kind,
        hidden,
        embed_dim,
        num_classes,
        version: 0,
    })
}
