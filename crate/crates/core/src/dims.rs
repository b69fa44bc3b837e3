//! Model dimensions and observation families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation family of the visible sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsKind {
    /// Diagonal Gaussian with conditioned mean and log-variance.
    Real,
    /// Independent Bernoulli bits with conditioned logits.
    Binary,
    /// Count vector scored against a conditioned softmax simplex.
    Count,
}

impl std::str::FromStr for ObsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(ObsKind::Real),
            "binary" => Ok(ObsKind::Binary),
            "count" => Ok(ObsKind::Count),
            other => Err(Error::config(format!(
                "unknown observation kind {other:?}; expected real, binary, or count"
            ))),
        }
    }
}

impl std::fmt::Display for ObsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ObsKind::Real => "real",
            ObsKind::Binary => "binary",
            ObsKind::Count => "count",
        };
        f.write_str(s)
    }
}

/// Sizes of a model instance.
///
/// `layers` lists the hidden layer widths from the layer adjacent to the
/// observations upward; a single-layer model has `layers.len() == 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Visible dimension M.
    pub visible: usize,
    /// Number of styles S.
    pub styles: usize,
    /// Rank F of the factored weight parameterization.
    pub factors: usize,
    /// Lag order n: how many previous frames feed each conditional.
    pub order: usize,
    /// Hidden widths, bottom layer first.
    pub layers: Vec<usize>,
}

impl Dims {
    pub fn new(
        visible: usize,
        hidden: usize,
        styles: usize,
        factors: usize,
        order: usize,
    ) -> Self {
        Dims { visible, styles, factors, order, layers: vec![hidden] }
    }

    /// Width of the bottom hidden layer (J).
    pub fn hidden(&self) -> usize {
        self.layers[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible == 0 {
            return Err(Error::config("visible dimension must be at least 1"));
        }
        if self.styles == 0 {
            return Err(Error::config("style count must be at least 1"));
        }
        if self.factors == 0 {
            return Err(Error::config("factor rank must be at least 1"));
        }
        if self.order == 0 {
            return Err(Error::config("lag order must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("at least one hidden layer is required"));
        }
        if self.layers.iter().any(|&j| j == 0) {
            return Err(Error::config("hidden layer widths must be at least 1"));
        }
        Ok(())
    }
}
