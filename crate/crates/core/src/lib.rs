//! Ranking video segments by how likely they are to be turned into GIFs.
//!
//! The pipeline aligns GIF frames to their source video with perceptual
//! hashes, splits videos into shots, trains a pairwise ranking network with
//! robust losses, and evaluates rankings with nMSD and average precision.

pub mod align;
pub mod cli;
pub mod eval;
pub mod io;
pub mod loss;
pub mod phash;
pub mod ranknet;
pub mod rng;
pub mod shotseg;
pub mod synth;
pub mod trainer;
pub mod types;
