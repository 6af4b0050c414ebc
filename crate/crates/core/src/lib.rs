//! Learned fixed-size embeddings for short 2-D trajectories.
//!
//! A compact Transformer encoder is trained with a triplet loss whose
//! positives and negatives come from an input-space similarity (cosine of
//! displacement damped by ADE, or DFT magnitude spectra). Trained embeddings
//! are stored in a bank that supports exact and IVF search, and retrieval
//! quality is scored with minADE/minFDE/avgADE/avgFDE. Non-learned baselines
//! (pairwise ADE matrix, endpoint k-d tree, multi-waypoint k-d trees) plug
//! into the same evaluation.

pub mod baselines;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod retrieval;
pub mod rng;
pub mod similarity;
pub mod sweep;
pub mod synth;
pub mod training;
pub mod trjfile;

pub use error::{Error, Result};
pub use geometry::{NormalizedTrajectory, Point, Trajectory};
