//! Run configuration: one JSON file drives every subcommand.
//!
//! The schema is strict: unknown keys anywhere are rejected before any
//! compute starts, and the resulting error names the offending path.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;

use fctsbn_core::dims::{Dims, ObsKind};
use fctsbn_core::error::{Error, Result};
use fctsbn_core::nvil::TrainConfig;
use fctsbn_core::schedule::{Encoding, StyleSchedule, TransitionSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Present iff training should run the semi-supervised objective.
    #[serde(default)]
    pub semi: Option<SemiSection>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub visible: usize,
    pub hidden: usize,
    pub styles: usize,
    #[serde(default = "one")]
    pub factors: usize,
    #[serde(default = "one")]
    pub order: usize,
    /// Hidden-layer sizes stacked above `hidden`, bottom to top.
    #[serde(default)]
    pub upper_layers: Vec<usize>,
    pub obs: ObsKind,
    #[serde(default)]
    pub factored: bool,
}

impl ModelConfig {
    pub fn dims(&self) -> Result<Dims> {
        let mut dims = Dims::new(self.visible, self.hidden, self.styles, self.factors, self.order);
        dims.layers.extend(self.upper_layers.iter().copied());
        dims.validate()?;
        Ok(dims)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `<id>.csv` sequences with optional `<id>.y.csv` side
    /// info and a `labels.csv` window table.
    #[serde(default)]
    pub train_dir: Option<PathBuf>,
    /// Extra unlabeled sequences for the semi-supervised objective.
    #[serde(default)]
    pub unlabeled_dir: Option<PathBuf>,
    /// Standardize real data per dimension before training; the statistics
    /// ride along in the checkpoint.
    #[serde(default = "yes")]
    pub normalize: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSection {
    /// Classification weight; defaults to twice the labeled frame count.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Classifier window length in frames; defaults to order + 1.
    #[serde(default)]
    pub window: Option<usize>,
    /// Labeled/unlabeled batch mixing probability override.
    #[serde(default)]
    pub labeled_ratio: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub frames: usize,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// One style held for the whole clip.
    Constant { style: usize },
    /// Logistic hand-off from one style to another.
    Transition {
        from: usize,
        to: usize,
        center_frame: f64,
        #[serde(default = "default_width")]
        width_frames: f64,
    },
    /// A fixed convex mixture held for the whole clip.
    Blend { weights: Vec<f64> },
}

impl ScheduleConfig {
    pub fn build(&self, styles: usize, frames: usize) -> Result<StyleSchedule> {
        match self {
            ScheduleConfig::Constant { style } => StyleSchedule::constant(*style, styles, frames),
            ScheduleConfig::Transition { from, to, center_frame, width_frames } => {
                let spec = TransitionSpec {
                    from: *from,
                    to: *to,
                    center_frame: *center_frame,
                    width_frames: *width_frames,
                };
                StyleSchedule::transition(&spec, styles, frames)
            }
            ScheduleConfig::Blend { weights } => {
                if weights.len() != styles {
                    return Err(Error::config(format!(
                        "blend weights have {} entries for {styles} styles",
                        weights.len()
                    )));
                }
                let rows = Array2::from_shape_fn((frames, styles), |(_, s)| weights[s]);
                StyleSchedule::from_rows(rows, Encoding::Blend)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Monte Carlo samples per predicted frame.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_width() -> f64 {
    TransitionSpec::DEFAULT_WIDTH
}

fn default_samples() -> usize {
    5
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"model": {"visible": 3, "hidden": 4, "styles": 2, "obs": "real"}}"#,
        )
        .unwrap();
        let dims = cfg.model.dims().unwrap();
        assert_eq!((dims.visible, dims.hidden(), dims.order), (3, 4, 1));
        assert!(cfg.train.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let err = serde_json::from_str::<RunConfig>(
            r#"{"model": {"visible": 3, "hidden": 4, "styles": 2, "obs": "real", "hidden_units": 9}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("hidden_units"), "{err}");
    }

    #[test]
    fn blend_schedule_rejects_wrong_arity() {
        let cfg = ScheduleConfig::Blend { weights: vec![0.5, 0.5] };
        assert!(cfg.build(3, 10).is_err());
        assert!(cfg.build(2, 10).is_ok());
    }
}
