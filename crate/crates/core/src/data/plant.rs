//! Synthetic ground-truth models and the datasets they generate.
//!
//! The planted generator keeps its structure deliberately legible: style
//! enters only through the emission bias columns, which are spread
//! `style_separation` apart, hidden dynamics are style-agnostic with unit
//! emission noise, and there is no visible feedback. Recovery tests can
//! then reason about exact per-style means.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::dims::{Dims, ObsKind};
use crate::error::Result;
use crate::model;
use crate::params::GenerativeParams;
use crate::schedule::StyleSchedule;

use super::{LabelWindow, SequenceDataset, SequenceRecord};

#[derive(Debug, Clone)]
pub struct PlantConfig {
    pub num_sequences: usize,
    pub frames_per_seq: usize,
    /// Distance between the extreme styles' emission biases.
    pub style_separation: f64,
    /// Stride and length of the label windows attached to each sequence.
    pub label_window: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            num_sequences: 200,
            frames_per_seq: 50,
            style_separation: 6.0,
            label_window: 2,
        }
    }
}

/// Draw a ground-truth model with separated style biases and generate a
/// labeled dataset from it by ancestral sampling. Styles rotate
/// round-robin across sequences; each sequence keeps one style for its
/// whole length.
pub fn plant_model(
    dims: &Dims,
    obs: ObsKind,
    cfg: &PlantConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(GenerativeParams, SequenceDataset)> {
    let mut params = GenerativeParams::init(dims, obs, false, rng)?;
    let (j, m, s, n) = (dims.hidden(), dims.visible, dims.styles, dims.order);

    let dynamics = Normal::new(0.0, 1.0 / ((j * n) as f64).sqrt()).expect("positive std");
    let readout = Normal::new(0.0, 0.1).expect("positive std");
    if let crate::cond_weight::CondWeight::Dense { slices, .. } = &mut params.w1 {
        for slice in slices.iter_mut() {
            slice.mapv_inplace(|_| dynamics.sample(rng));
        }
    }
    if let crate::cond_weight::CondWeight::Dense { slices, .. } = &mut params.head.w2 {
        for slice in slices.iter_mut() {
            slice.mapv_inplace(|_| readout.sample(rng));
        }
    }
    params.w3 = crate::cond_weight::CondWeight::zeros_dense(j, m * n, s);
    params.head.w4 = crate::cond_weight::CondWeight::zeros_dense(m, m * n, s);
    params.b.fill(0.0);
    // Style bias columns evenly spaced over [-sep/2, +sep/2]; style 0 gets
    // the positive extreme.
    for st in 0..s {
        let frac = if s > 1 { st as f64 / (s - 1) as f64 } else { 0.5 };
        let bias = cfg.style_separation * (0.5 - frac);
        params.head.c.column_mut(st).fill(bias);
    }
    if let Some(vh) = &mut params.var_head {
        vh.w2 = crate::cond_weight::CondWeight::zeros_dense(m, j, s);
        vh.w4 = crate::cond_weight::CondWeight::zeros_dense(m, m * n, s);
        vh.c.fill(0.0);
    }

    let mut records = Vec::with_capacity(cfg.num_sequences);
    let seed_frames = Array2::zeros((0, m));
    for i in 0..cfg.num_sequences {
        let style = i % s;
        let schedule = StyleSchedule::constant(style, s, cfg.frames_per_seq)?;
        let (v, _) = model::generate(&params, seed_frames.view(), &schedule, rng)?;
        let mut labels = Vec::new();
        let w = cfg.label_window.max(1);
        let mut start = 0;
        while start + w <= cfg.frames_per_seq {
            labels.push(LabelWindow { start, style });
            start += w;
        }
        records.push(SequenceRecord {
            id: format!("seq{i:04}"),
            v,
            y: Some(schedule.rows().to_owned()),
            labels,
        });
    }
    Ok((params, SequenceDataset { obs, records }))
}
