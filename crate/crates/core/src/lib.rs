//! Embedding-depth landscape search.
//!
//! LLM item embeddings are read as pseudo-time series along the coordinate index.
//! For each prefix depth the items' coordinate sequences are differentiated with GLLA,
//! correlated, filtered into a TMFG network, and partitioned with Walktrap. Every depth
//! is scored by NMI against the known item dimensions and by TEFI, and a weighted
//! composite of the two picks the depth to use.

pub mod cli;
pub mod fitmetrics;
pub mod glla;
pub mod ingest;
pub mod landscape;
pub mod netfilter;
pub mod pipeline;
pub mod simgen;
pub mod svg;
pub mod walktrap;

pub use fitmetrics::{nmi, tefi, von_neumann_entropy, EntropyReport, NmiScore};
pub use glla::{
    build_derivative_design, glla_derivatives, glla_weights, time_delay_embed, DerivativeDesign,
    GllaConfig, TimeDelayMatrix,
};
pub use ingest::{load_embeddings, load_item_pool, EmbeddingClient, EmbeddingMatrix, ItemPool};
pub use landscape::{
    composite_optimize, sweep, vector_field, Arrow, CompositeWeights, LandscapeTrace, SweepConfig,
};
pub use netfilter::{correlation_matrix, tmfg, CorrMatrix, Network};
pub use pipeline::{dynega_at_depth, ega_cross_sectional, DepthResult, DepthStatus};
pub use simgen::{generate_synthetic_pool, monte_carlo, MonteCarloConfig, SyntheticSpec};
pub use walktrap::{walktrap, Partition};
