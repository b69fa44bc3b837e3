//! Per-frame style schedules.
//!
//! A schedule is a `T x S` matrix whose row `t` is the style vector fed to
//! every conditional weight at frame `t`. Three encodings are recognized:
//! hard one-hot rows, convex mixtures (nonnegative rows summing to one,
//! used for smooth transitions between styles), and free real-valued rows
//! for callers that drive the conditioning directly.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Exactly one entry 1, the rest 0.
    OneHot,
    /// Nonnegative entries summing to 1 within 1e-9.
    Blend,
    /// Any finite entries.
    Free,
}

/// A smooth hand-off between two styles.
///
/// The weight of `to` follows a logistic ramp in the frame index, centered
/// at `center_frame`; `width_frames` is the span over which that weight
/// passes from 10% to 90%. A width of zero (or less) degenerates to a hard
/// switch at the center frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: usize,
    pub to: usize,
    pub center_frame: f64,
    pub width_frames: f64,
}

impl TransitionSpec {
    /// Default ramp width in frames (10% to 90% span).
    pub const DEFAULT_WIDTH: f64 = 60.0;

    /// Weight of the `to` style at frame `t`.
    pub fn to_weight(&self, t: usize) -> f64 {
        let t = t as f64;
        if self.width_frames <= 0.0 {
            return if t >= self.center_frame { 1.0 } else { 0.0 };
        }
        // sigmoid(ln 9) = 0.9, so the 10%..90% span is width_frames wide.
        let scale = self.width_frames / (2.0 * 9f64.ln());
        sigmoid((t - self.center_frame) / scale)
    }
}

#[derive(Debug, Clone)]
pub struct StyleSchedule {
    rows: Array2<f64>,
    encoding: Encoding,
}

impl StyleSchedule {
    /// Wrap an explicit `T x S` matrix, validating it against `encoding`.
    pub fn from_rows(rows: Array2<f64>, encoding: Encoding) -> Result<Self> {
        validate_rows(rows.view(), encoding)?;
        Ok(StyleSchedule { rows, encoding })
    }

    /// One style held for `frames` frames.
    pub fn constant(style: usize, styles: usize, frames: usize) -> Result<Self> {
        if style >= styles {
            return Err(Error::config(format!(
                "style index {style} out of range for {styles} styles"
            )));
        }
        let mut rows = Array2::zeros((frames, styles));
        rows.column_mut(style).fill(1.0);
        Ok(StyleSchedule { rows, encoding: Encoding::OneHot })
    }

    /// Logistic hand-off between two styles over `frames` frames.
    pub fn transition(spec: &TransitionSpec, styles: usize, frames: usize) -> Result<Self> {
        if spec.from >= styles || spec.to >= styles {
            return Err(Error::config(format!(
                "transition styles ({}, {}) out of range for {styles} styles",
                spec.from, spec.to
            )));
        }
        if spec.from == spec.to {
            return Err(Error::config("transition requires two distinct styles"));
        }
        let mut rows = Array2::zeros((frames, styles));
        for t in 0..frames {
            let w = spec.to_weight(t);
            rows[(t, spec.to)] = w;
            rows[(t, spec.from)] = 1.0 - w;
        }
        StyleSchedule::from_rows(rows, Encoding::Blend)
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.rows.row(t)
    }

    pub fn frames(&self) -> usize {
        self.rows.nrows()
    }

    pub fn styles(&self) -> usize {
        self.rows.ncols()
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }
}

fn validate_rows(rows: ArrayView2<f64>, encoding: Encoding) -> Result<()> {
    for (t, row) in rows.rows().into_iter().enumerate() {
        for (s, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "schedule row {t}, style {s}: non-finite weight {v}"
                )));
            }
        }
        match encoding {
            Encoding::OneHot => {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::config(format!(
                        "schedule row {t} is not one-hot: {:?}",
                        row.to_vec()
                    )));
                }
            }
            Encoding::Blend => {
                if row.iter().any(|&v| v < 0.0) {
                    return Err(Error::config(format!(
                        "schedule row {t} has a negative mixture weight"
                    )));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "schedule row {t} sums to {sum}, expected 1"
                    )));
                }
            }
            Encoding::Free => {}
        }
    }
    Ok(())
}
