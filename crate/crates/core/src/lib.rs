//! Deep metric learning with densely-anchored sampling.
//!
//! Small feed-forward encoders are trained with pair-based losses while
//! extra embeddings are produced around every anchor in embedding space: a
//! class's most discriminative channels are randomly rescaled, and intra-class
//! differences remembered in a FIFO bank are added as shifts. Produced
//! embeddings join the real ones before pair/triplet sampling.
//!
//! Modules, bottom-up:
//! * [`math`], [`rng`]: vector primitives and a portable seeded generator.
//! * [`dataset`]: synthetic Gaussian clusters and CSV ingestion.
//! * [`encoder`]: MLP with exact backprop through the final normalization,
//!   SGD/Adam, JSON checkpoints.
//! * [`sampling`]: P×M batches, random/semi-hard/soft-hard/distance-weighted
//!   triplets, pairs.
//! * [`losses`]: contrastive, triplet, margin and multi-similarity losses.
//! * [`das`]: frequency recorder, channel masks, transformation bank and
//!   embedding production.
//! * [`metrics`]: Recall@k, k-means, NMI, pairwise F1.
//! * [`config`], [`train`], [`experiment`]: runs, logs, ablations, sweeps.

// Validation is written as `!(x > 0.0)` on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod das;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod train;

pub use config::RunConfig;
pub use error::{DasError, Result};
pub use rng::SeededRng;
pub use train::{train, Trainer};
