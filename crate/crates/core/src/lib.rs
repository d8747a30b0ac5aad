//! Multi-resolution graph contrastive learning.
//!
//! The pipeline builds dyadic diffusion-wavelet views of a graph
//! ([`wavelet`]), trains a multi-view GCN encoder against a local–global
//! noise-contrastive objective ([`model`]) on a small reverse-mode engine
//! ([`autodiff`]), and evaluates the pooled node embeddings by single-linkage
//! clustering and a logistic-regression probe ([`eval`]). Synthetic
//! structural-role benchmarks come from [`synth`].

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod seed;
pub mod sparse;
pub mod synth;
pub mod wavelet;

pub use config::{EncoderMode, LossScaling, ModelConfig, Readout, ThresholdMode};
pub use error::{Error, Result};
pub use graph::{column_normalize, homophily, load_graph, Graph, HomophilyScore};
pub use sparse::SparseMatrix;
