//! Automatic colorization of grayscale images with a learned epitome.
//!
//! A reference color image is summarized into an epitome: a small toroidal
//! map of per-pixel Gaussians over YIQ values, paired with a table of
//! Gaussians over per-patch gradient-orientation descriptors. Every image
//! patch is explained by a hidden mapping into the epitome, and the model
//! is fit with EM. A grayscale target is then colorized by picking the most
//! probable mapping of each of its patches (luminance and descriptor only)
//! and averaging the epitome chroma those mappings point at.
//!
//! The heavy loops (per-patch likelihoods, posterior rows, sufficient
//! statistics) run on rayon when the `parallel` feature is enabled. All
//! reductions are merged in a fixed order, so serial and parallel runs are
//! bit-identical.

pub mod colorize;
pub mod dsift;
pub mod epitome;
mod error;
pub mod format;
pub mod imagekit;
pub mod par;
pub mod patches;
pub mod selftest;

pub use colorize::{best_mapping, colorize, transfer_chroma, ChromaAccumulator, ColorizeConfig};
pub use dsift::{descriptor_image, patch_descriptor, PatchDescriptor};
pub use epitome::{
    train, DescriptorEpitome, DualEpitome, Epitome, MappingPrior, PosteriorTable, TrainConfig,
    TrainReport,
};
pub use error::{Error, Result};
pub use imagekit::{ColorSpace, RasterImage};
pub use par::Execution;
pub use patches::{extract_patch, sample_grid, PatchGrid};
