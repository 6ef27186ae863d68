//! Source-free adaptation of a pretrained checkpoint to a target domain.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::WindowedDataset;
use crate::nn::{load_checkpoint, Architecture, FreezeMask, ModelParams};
use crate::scalar::Scalar;
use crate::train::{check_arch, evaluate, fit, History, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// Only fc1 and fc2 train; conv, BN weights and BN statistics stay fixed.
    Partial,
    /// Every group trains and BN statistics update.
    Full,
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::Partial => "partial",
            AdaptMode::Full => "full",
        })
    }
}

impl FromStr for AdaptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "partial" => Ok(AdaptMode::Partial),
            "full" => Ok(AdaptMode::Full),
            other => Err(Error::InvalidConfig(format!(
                "unknown adaptation mode {other:?} (expected partial or full)"
            ))),
        }
    }
}

pub fn make_freeze_mask(mode: AdaptMode, _arch: &Architecture) -> FreezeMask {
    match mode {
        AdaptMode::Partial => FreezeMask::head_only(),
        AdaptMode::Full => FreezeMask::all_trainable(),
    }
}

/// Fine-tunes an in-memory pretrained model under an explicit mask with a
/// fresh optimizer state.
pub fn adapt_with_mask<T: Scalar>(
    pretrained: ModelParams<T>,
    target_train: &WindowedDataset,
    target_eval: &WindowedDataset,
    mask: &FreezeMask,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, History)> {
    check_arch(&pretrained.arch, target_train)?;
    check_arch(&pretrained.arch, target_eval)?;
    fit(pretrained, target_train, target_eval, cfg, mask)
}

pub fn adapt_model<T: Scalar>(
    pretrained: ModelParams<T>,
    target_train: &WindowedDataset,
    target_eval: &WindowedDataset,
    mode: AdaptMode,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, History)> {
    let mask = make_freeze_mask(mode, &pretrained.arch);
    adapt_with_mask(pretrained, target_train, target_eval, &mask, cfg)
}

/// Loads the checkpoint at `pretrained` and adapts it to the target data.
/// Nothing besides the checkpoint and the given target datasets is read.
pub fn adapt<T: Scalar>(
    pretrained: &Path,
    target_train: &WindowedDataset,
    target_eval: &WindowedDataset,
    mode: AdaptMode,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, History)> {
    let model = load_checkpoint(pretrained)?;
    adapt_model(model, target_train, target_eval, mode, cfg)
}

/// Accuracy of the untouched pretrained model on target data.
pub fn zero_shot_eval<T: Scalar>(pretrained: &Path, target_eval: &WindowedDataset) -> Result<f64> {
    let model: ModelParams<T> = load_checkpoint(pretrained)?;
    Ok(evaluate(&model, target_eval)?.accuracy)
}
