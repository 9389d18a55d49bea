//! Street-scene perception from relational scene graphs.
//!
//! The pipeline parses subject-predicate-object triplets into scene graphs
//! ([`graph`]), embeds labels ([`text`]), pretrains a masked graph
//! autoencoder whose encoder yields 128-wide scene embeddings ([`mgae`]),
//! fits one Bradley-Terry pairwise head per perceptual dimension
//! ([`ranker`]), and reports metrics, motif lift and cross-city transfer
//! ([`analysis`], [`pipeline`]).

pub mod autodiff;
pub mod graph;
pub mod text;
pub mod mgae;
pub mod rng;
pub mod ranker;
pub mod analysis;
pub mod report;
pub mod synth;
pub mod pipeline;
