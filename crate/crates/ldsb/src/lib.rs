//! Desk-scale study of low-dimensional simplicity bias (LD-SB) in
//! 1-hidden-layer ReLU networks.
//!
//! A trained network exhibits LD-SB when a rank-k projector `P` with
//! `k ≪ d` essentially determines its output: mixing two inputs as
//! `Px₁ + P⊥x₂` leaves the prediction at `f(x₁)`, even though the
//! complement subspace alone still supports an accurate classifier.
//! This crate provides everything needed to reproduce that phenomenon on
//! synthetic data and to check it against closed-form theory:
//!
//! - [`datasets`]: conditionally independent feature datasets with one
//!   linearly separable coordinate, the point-mass dataset used by the
//!   kernel analysis, and a two-block "collage" generator.
//! - [`model`] / [`training`]: the 1-hidden-layer ReLU network under rich
//!   and lazy initialization, with SGD + momentum and a warmup/cosine
//!   schedule.
//! - [`analysis`]: effective rank, bias-subspace discovery (SVD of the
//!   first layer, or direct projector optimization), and the randomized
//!   accuracy / logit-change mixing metrics.
//! - [`orthop`]: sequential training on the orthogonal complement,
//!   diversity metrics, logit-averaging ensembles and Gaussian-noise
//!   robustness sweeps.
//! - [`ntk`]: closed-form max-margin duals of the infinite-width kernel
//!   on the point-mass dataset, plus the two-neuron optimum of the rich
//!   regime, both as finite numerical checks.
//!
//! The `ldsb` CLI (separate crate) wires these into reproducible,
//! file-based experiments. A narrative guide lives in `book/`; its code
//! snippets compile and run as doctests of this crate.

pub mod analysis;
pub mod datasets;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ntk;
pub mod orthop;
pub mod presets;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Datasets, "../../../book/src/datasets.md");
    chapter!(ModelAndTraining, "../../../book/src/model-and-training.md");
    chapter!(SubspaceAnalysis, "../../../book/src/subspace-analysis.md");
    chapter!(KernelAnalysis, "../../../book/src/kernel-analysis.md");
    chapter!(DiverseEnsembles, "../../../book/src/diverse-ensembles.md");
    chapter!(Cli, "../../../book/src/cli.md");
}
