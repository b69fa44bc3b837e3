//! Learned control variate for the bound's learning signal.
//!
//! Two baselines act together: a one-hidden-layer tanh network reading the
//! per-frame context (the lagged visible window plus the style vector,
//! everything the recognition network conditions on except the current
//! frame's hidden draw), and a free scalar. Subtracting their sum from the
//! learning signal changes no gradient expectation, because neither
//! depends on the sampled hidden states.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::{GradientSet, TensorMap};

/// Default hidden width of the baseline network.
pub const DEFAULT_HIDDEN: usize = 100;

#[derive(Debug, Clone)]
pub struct BaselineParams {
    /// Input weights, `hidden x input`.
    pub w1: Array2<f64>,
    /// Hidden bias, `hidden x 1`.
    pub b1: Array2<f64>,
    /// Output weights, `1 x hidden`.
    pub w2: Array2<f64>,
    /// Output bias, `1 x 1`.
    pub b2: Array2<f64>,
    /// Context-independent scalar baseline, `1 x 1`.
    pub c0: Array2<f64>,
}

impl BaselineParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::config("baseline needs positive input and hidden sizes"));
        }
        let dist = Normal::new(0.0, 0.01).expect("positive std");
        Ok(BaselineParams {
            w1: Array2::from_shape_fn((hidden, input_dim), |_| dist.sample(rng)),
            b1: Array2::zeros((hidden, 1)),
            w2: Array2::from_shape_fn((1, hidden), |_| dist.sample(rng)),
            b2: Array2::zeros((1, 1)),
            c0: Array2::zeros((1, 1)),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    /// Baseline value and the hidden activations needed for its gradient.
    pub fn eval_cached(&self, x: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "baseline input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = self.w1.dot(&x);
        pre += &self.b1.column(0);
        let act = pre.mapv(f64::tanh);
        let value = self.w2.row(0).dot(&act) + self.b2[(0, 0)] + self.c0[(0, 0)];
        Ok((value, act))
    }

    pub fn eval(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.eval_cached(x)?.0)
    }

    /// Accumulate `weight * d(value)/d(params)` for one evaluation whose
    /// hidden activations were cached by [`BaselineParams::eval_cached`].
    pub fn accumulate_gradients(
        &self,
        gs: &mut GradientSet,
        x: ArrayView1<f64>,
        act: ArrayView1<f64>,
        weight: f64,
    ) {
        let one = ndarray::array![1.0];
        gs.add_outer("baseline/w2", one.view(), act, weight);
        gs.add_outer("baseline/b2", one.view(), one.view(), weight);
        gs.add_outer("baseline/c0", one.view(), one.view(), weight);
        // Backprop through tanh: d(value)/d(pre_k) = w2_k (1 - act_k^2).
        let ghid = Array1::from_shape_fn(act.len(), |k| {
            self.w2[(0, k)] * (1.0 - act[k] * act[k])
        });
        gs.add_outer("baseline/w1", ghid.view(), x, weight);
        gs.add_outer("baseline/b1", ghid.view(), one.view(), weight);
    }
}

impl TensorMap for BaselineParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("baseline/w1", &self.w1);
        f("baseline/b1", &self.b1);
        f("baseline/w2", &self.w2);
        f("baseline/b2", &self.b2);
        f("baseline/c0", &self.c0);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("baseline/w1", &mut self.w1);
        f("baseline/b1", &mut self.b1);
        f("baseline/w2", &mut self.w2);
        f("baseline/b2", &mut self.b2);
        f("baseline/c0", &mut self.c0);
    }
}
