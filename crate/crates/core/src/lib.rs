//! Weakly supervised point-cloud semantic segmentation at desk scale.
//!
//! The crate implements a three-stage pipeline:
//!
//! 1. **Colorization pretraining** — a self-supervised pretext task: given
//!    point positions and lightness, predict the chromatic a/b channels and
//!    their local neighborhood statistics ([`pretext`]).
//! 2. **Weakly supervised fine-tuning** — the pretrained encoder transfers
//!    into a segmentation network trained from a handful of labeled points
//!    ([`model`], [`training`], [`weaklabel`]).
//! 3. **Sparse label propagation** — class prototypes built from labeled
//!    embeddings assign soft pseudo labels to the most similar unlabeled
//!    points, in O(N·C·d) time ([`propagation`]).
//!
//! Supporting pieces: a point-cloud data model with ASCII PLY I/O
//! ([`cloud`], [`ply`]), an exact KNN index ([`spatial`]), sRGB/CIELAB
//! conversion ([`colorspace`]), a synthetic labeled-scene generator
//! ([`scene`]), and segmentation metrics ([`metrics`]).

pub mod cloud;
pub mod colorspace;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod pretext;
pub mod propagation;
pub mod ply;
pub mod rng;
pub mod scene;
pub mod spatial;
pub mod training;
pub mod weaklabel;

pub use cloud::{PointCloud, UNLABELED};
pub use error::{Error, Result};
