//! Named experiment presets shared by the CLI and the acceptance suite.

use crate::datasets::{CollagePattern, IfmSpec};
use crate::error::{Error, Result};
use crate::model::Regime;
use crate::training::{presets as train_presets, TrainConfig};

/// The stock IFM dataset: d=20 with a margin-1.5 linear coordinate, ten
/// non-linear coordinates and nine noise coordinates.
pub fn ifm_basic(seed: u64) -> IfmSpec {
    IfmSpec {
        d: 20,
        gamma: 1.5,
        n_train: 2048,
        n_val: 512,
        n_test: 512,
        num_nonlinear: 10,
        num_noise: 9,
        seed,
    }
}

/// Two-block collage dataset with an xor complex block. Sized so the first
/// model generalizes imperfectly (a handful of test mistakes on the
/// faint-cue rows), which keeps the mistake-diversity ratio well-defined;
/// the large test split stabilizes those small-count statistics.
pub fn collage_xor(seed: u64) -> (IfmSpec, CollagePattern) {
    (
        IfmSpec {
            d: 21,
            gamma: 1.0,
            n_train: 576,
            n_val: 256,
            n_test: 16384,
            num_nonlinear: 8,
            num_noise: 12,
            seed,
        },
        CollagePattern::Xor,
    )
}

/// Training schedule paired with [`collage_xor`]: a shortened desk run, so
/// the first model's convergence is realistic rather than exhaustive.
pub fn collage_train_steps() -> usize {
    1_500
}

/// Sphere-block variant of the collage dataset.
pub fn collage_sphere(seed: u64) -> (IfmSpec, CollagePattern) {
    let (spec, _) = collage_xor(seed);
    (spec, CollagePattern::Sphere)
}

/// Named dataset preset lookup for the CLI.
pub fn dataset_preset(name: &str, seed: u64) -> Result<(IfmSpec, Option<CollagePattern>)> {
    match name {
        "ifm-basic" => Ok((ifm_basic(seed), None)),
        "collage-xor" => {
            let (spec, pat) = collage_xor(seed);
            Ok((spec, Some(pat)))
        }
        "collage-sphere" => {
            let (spec, pat) = collage_sphere(seed);
            Ok((spec, Some(pat)))
        }
        other => Err(Error::InvalidInput(format!(
            "unknown dataset preset `{other}` (try ifm-basic, collage-xor, collage-sphere)"
        ))),
    }
}

/// Named training preset lookup: `rich`/`lazy` run the full 20 000 steps,
/// `rich-desk`/`lazy-desk` the 4 000-step variants.
pub fn train_preset(name: &str, seed: u64) -> Result<TrainConfig> {
    match name {
        "rich" => Ok(train_presets::full(Regime::Rich, seed)),
        "lazy" => Ok(train_presets::full(Regime::Lazy, seed)),
        "rich-desk" => Ok(train_presets::desk(Regime::Rich, seed)),
        "lazy-desk" => Ok(train_presets::desk(Regime::Lazy, seed)),
        other => Err(Error::InvalidInput(format!(
            "unknown training preset `{other}` (try rich, lazy, rich-desk, lazy-desk)"
        ))),
    }
}

/// Default hidden width; matches the experiments this crate reproduces.
pub const HIDDEN_WIDTH: usize = 100;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(ifm_basic(0).validate().is_ok());
        assert!(collage_xor(0).0.validate().is_ok());
        assert!(dataset_preset("ifm-basic", 1).is_ok());
        assert!(dataset_preset("nope", 1).is_err());
        assert_eq!(train_preset("rich-desk", 2).unwrap().steps, 4_000);
        assert_eq!(train_preset("lazy", 2).unwrap().steps, 20_000);
        assert!(train_preset("fast", 2).is_err());
    }
}
