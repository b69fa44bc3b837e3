//! RMSprop ascent over named tensors.
//!
//! Each tensor keeps a running mean of its squared gradient; the update
//! divides the gradient by the square root of that accumulator. Updates
//! ascend (the objective is a lower bound to be maximized). A tensor whose
//! gradient contains a non-finite entry is skipped for that step and
//! counted, leaving its parameters and accumulator untouched.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::params::{GradientSet, TensorMap};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { learning_rate: 3e-3, decay: 0.9, epsilon: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    cfg: RmsPropConfig,
    acc: BTreeMap<String, Array2<f64>>,
    /// Tensors skipped because their gradient was non-finite.
    pub skipped_nonfinite: u64,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig) -> Self {
        RmsProp { cfg, acc: BTreeMap::new(), skipped_nonfinite: 0 }
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.cfg
    }

    /// Apply one ascent step to every parameter tensor that has a
    /// gradient in `grads` and passes `mask`.
    pub fn step_masked(
        &mut self,
        params: &mut dyn TensorMap,
        grads: &GradientSet,
        mask: &dyn Fn(&str) -> bool,
    ) {
        let cfg = self.cfg.clone();
        let acc = &mut self.acc;
        let skipped = &mut self.skipped_nonfinite;
        params.visit_mut(&mut |name, t| {
            let Some(g) = grads.get(name) else { return };
            if !mask(name) {
                return;
            }
            if g.iter().any(|v| !v.is_finite()) {
                *skipped += 1;
                return;
            }
            let a = acc
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(t.dim()));
            azip(a, g, t, &cfg);
        });
    }

    pub fn step(&mut self, params: &mut dyn TensorMap, grads: &GradientSet) {
        self.step_masked(params, grads, &|_| true);
    }
}

fn azip(acc: &mut Array2<f64>, g: &Array2<f64>, t: &mut Array2<f64>, cfg: &RmsPropConfig) {
    for ((a, &gv), p) in acc.iter_mut().zip(g.iter()).zip(t.iter_mut()) {
        *a = cfg.decay * *a + (1.0 - cfg.decay) * gv * gv;
        *p += cfg.learning_rate * gv / (*a + cfg.epsilon).sqrt();
    }
}
