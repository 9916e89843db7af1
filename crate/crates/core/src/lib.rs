//! resprop — robust propagation on sparse graphs.
//!
//! The crate builds a full desk-scale pipeline around one idea: label
//! residuals propagated through a degree-normalized adjacency converge to a
//! unique fixed point whenever the contraction factor
//! `kappa = max_i c_i * ||A~||_2` stays below one, and that condition can be
//! *enforced* by spectral clipping of the operator plus a ceiling on the
//! per-node confidences. Around that core sit the supporting stages:
//!
//! - [`graph`] — sparse undirected graphs, homophily measurement, structural
//!   perturbation, and a synthetic block-model generator.
//! - [`operator`] — CSR propagation operators and symmetric normalization.
//! - [`spectral`] — power-iteration norm estimates, clipping, confidence
//!   ceilings, and the distortion identities that certify them.
//! - [`nn`] — dense layers with handwritten gradients, a contrastive loss,
//!   hybrid negative sampling, AdamW, and a finite-difference auditor.
//! - [`synthesis`] — edge-to-node aggregation and multi-scale embeddings.
//! - [`residual`] — confidence-weighted residual correction and the dense
//!   fixed-point oracle that certifies it.
//! - [`attention`] — heterophily-adaptive multi-head attention with a learned
//!   structural bias, plus temporal modulation.
//! - [`adversarial`] — edge-flip generator, degree-normalized discriminator,
//!   soft perturbed adjacency, and Wasserstein-with-gradient-penalty losses.
//! - [`diffusion`] — clipped robust diffusion, stream fusion, ensembling.
//! - [`metrics`] — classification/AUC, robustness deltas, embedding
//!   stability, causal lower bounds, and complexity accounting.
//! - [`pipeline`] — the end-to-end training loop, experiment configuration,
//!   and the robustness / causal / sensitivity suites behind the CLI.
//!
//! Everything is deterministic per seed and single-threaded by default; the
//! `--threads` flag enables row-parallel kernels with deterministic output.

// index-based loops are the clearest shape for the dense kernels here
#![allow(clippy::needless_range_loop)]

pub mod adversarial;
pub mod attention;
pub mod dense;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod operator;
pub mod pipeline;
pub mod residual;
pub mod rng;
pub mod spectral;
pub mod synthesis;

pub use dense::Mat;
pub use error::{Error, Result};
pub use graph::SparseGraph;
pub use operator::{Provenance, PropagationOperator};
