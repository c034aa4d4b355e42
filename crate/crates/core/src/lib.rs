//! Neuron selectivity indexing for convolutional networks.
//!
//! The engine consumes activation records exported by an inference-side
//! extractor (see [`manifest`]) and computes, per neuron:
//!
//! * a ranking of the images that most strongly activate it ([`ranking`]),
//! * its Neuron Feature, the activation-weighted average of the top crops ([`nf`]),
//! * a color selectivity index from a weighted PCA of the feature's colors ([`colorsel`]),
//! * a class selectivity index from the labels of its top images ([`classsel`]).
//!
//! Receptive-field arithmetic and crop placement live in [`geometry`];
//! tables and figures are emitted by [`report`]. [`analysis`] wires the
//! pieces together into per-layer passes.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod classsel;
pub mod colorsel;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod raster;
pub mod manifest;
pub mod nf;
pub mod ranking;
pub mod report;

pub use error::{Error, Result};
