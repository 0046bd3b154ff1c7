//! Exact k-nearest-neighbor search over point positions.
//!
//! The index is a kd-tree with leaf buckets. Queries return exactly what an
//! exhaustive scan would: indices ordered by non-decreasing squared
//! Euclidean distance, ties broken by lower point index. Squared distances
//! are computed with the canonical expression `dx*dx + dy*dy + dz*dz` so
//! that any independent scan using the same expression produces bit-equal
//! keys.

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Inner {
        axis: u8,
        split: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable spatial index; safe for concurrent queries once built.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    /// Point indices, permuted so each node owns a contiguous slice.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
    /// Default neighborhood size (the K of local statistics and encoder
    /// feature gathering).
    pub k_default: usize,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Lexicographic (distance, index) ordering; distances are finite here.
#[inline]
fn closer(d_a: f64, i_a: usize, d_b: f64, i_b: usize) -> bool {
    match d_a.partial_cmp(&d_b).expect("finite distances") {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => i_a < i_b,
    }
}

/// Build an index over the given positions.
pub fn build_index(positions: &[[f64; 3]]) -> Result<SpatialIndex> {
    if positions.is_empty() {
        return Err(Error::validation("cannot index an empty point set"));
    }
    for (index, p) in positions.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteCoordinate { index });
        }
    }
    let mut order: Vec<u32> = (0..positions.len() as u32).collect();
    let mut nodes = Vec::new();
    let root = build_node(positions, &mut order, 0, positions.len(), &mut nodes);
    Ok(SpatialIndex {
        points: positions.to_vec(),
        order,
        nodes,
        root,
        k_default: 16,
    })
}

fn build_node(
    points: &[[f64; 3]],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }
    // Split the widest axis at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        let p = &points[i as usize];
        for ax in 0..3 {
            lo[ax] = lo[ax].min(p[ax]);
            hi[ax] = hi[ax].max(p[ax]);
        }
    }
    let mut axis = 0;
    for ax in 1..3 {
        if hi[ax] - lo[ax] > hi[axis] - lo[axis] {
            axis = ax;
        }
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let split = points[order[mid] as usize][axis];
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    nodes.push(Node::Inner {
        axis: axis as u8,
        split,
        left,
        right,
    });
    (nodes.len() - 1) as u32
}

/// Bounded candidate set ordered worst-first: a binary max-heap on the
/// (distance, index) key.
struct KnnHeap {
    entries: Vec<(f64, usize)>,
    capacity: usize,
}

impl KnnHeap {
    fn new(capacity: usize) -> Self {
        KnnHeap {
            entries: Vec::with_capacity(capacity),
            capacity,
        }
    }

    fn full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Current worst key, if full.
    fn worst(&self) -> Option<(f64, usize)> {
        if self.full() {
            Some(self.entries[0])
        } else {
            None
        }
    }

    fn offer(&mut self, d: f64, i: usize) {
        if !self.full() {
            self.entries.push((d, i));
            // sift up
            let mut c = self.entries.len() - 1;
            while c > 0 {
                let parent = (c - 1) / 2;
                let (pd, pi) = self.entries[parent];
                let (cd, ci) = self.entries[c];
                if closer(pd, pi, cd, ci) {
                    self.entries.swap(parent, c);
                    c = parent;
                } else {
                    break;
                }
            }
        } else {
            let (wd, wi) = self.entries[0];
            if !closer(d, i, wd, wi) {
                return;
            }
            self.entries[0] = (d, i);
            // sift down
            let mut p = 0;
            loop {
                let (l, r) = (2 * p + 1, 2 * p + 2);
                let mut largest = p;
                for c in [l, r] {
                    if c < self.entries.len() {
                        let (cd, ci) = self.entries[c];
                        let (ld, li) = self.entries[largest];
                        if closer(ld, li, cd, ci) {
                            largest = c;
                        }
                    }
                }
                if largest == p {
                    break;
                }
                self.entries.swap(p, largest);
                p = largest;
            }
        }
    }

    fn into_sorted(mut self) -> Vec<usize> {
        self.entries
            .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.entries.into_iter().map(|(_, i)| i).collect()
    }
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// The `min(k, N)` nearest indices to `query`, ordered by
    /// non-decreasing distance, equal distances resolved to the lower index.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if !query.iter().all(|c| c.is_finite()) {
            return Err(Error::validation("query point has a non-finite coordinate"));
        }
        let mut heap = KnnHeap::new(k.min(self.points.len()));
        self.search(self.root, query, &mut heap);
        Ok(heap.into_sorted())
    }

    /// Neighborhood of a cloud member. The point itself participates (it is
    /// at distance zero, hence always first).
    pub fn neighbors_of(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.knn(&self.points[i], k)
    }

    /// All indices within Euclidean `radius` of `center`, ascending.
    pub fn within_radius(&self, center: &[f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.search_radius(self.root, center, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn search(&self, node: u32, query: &[f64; 3], heap: &mut KnnHeap) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start as usize..*end as usize] {
                    let d = dist2(query, &self.points[i as usize]);
                    heap.offer(d, i as usize);
                }
            }
            Node::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let diff = query[*axis as usize] - split;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, heap);
                // The far side may still hold an equal-distance point with a
                // lower index, so prune on strict inequality only.
                let visit_far = match heap.worst() {
                    None => true,
                    Some((wd, _)) => diff * diff <= wd,
                };
                if visit_far {
                    self.search(far, query, heap);
                }
            }
        }
    }

    fn search_radius(&self, node: u32, center: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start as usize..*end as usize] {
                    if dist2(center, &self.points[i as usize]) <= r2 {
                        out.push(i as usize);
                    }
                }
            }
            Node::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let diff = center[*axis as usize] - split;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search_radius(near, center, r2, out);
                if diff * diff <= r2 {
                    self.search_radius(far, center, r2, out);
                }
            }
        }
    }
}

/// Precomputed per-point neighborhoods, cached once per scene and reused by
/// local statistics and the encoder.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub k: usize,
    /// Row-major `n x k` neighbor indices; row i lists the k nearest points
    /// to point i (including itself), nearest first.
    pub indices: Vec<u32>,
    pub n: usize,
}

impl NeighborTable {
    pub fn build(index: &SpatialIndex, k: usize) -> Result<NeighborTable> {
        let n = index.len();
        if k > n {
            return Err(Error::validation(format!(
                "neighborhood size k = {k} exceeds point count {n}"
            )));
        }
        let mut indices = Vec::with_capacity(n * k);
        for i in 0..n {
            let nn = index.neighbors_of(i, k)?;
            indices.extend(nn.into_iter().map(|j| j as u32));
        }
        Ok(NeighborTable { k, indices, n })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}
