//! Small numeric helpers used throughout the crate.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Logistic function. Saturates to exactly 0 or 1 in f64 for |x| beyond
/// roughly 37, which is acceptable everywhere it is used: probabilities are
/// consumed either for sampling or through the stable log-mass below.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softplus: `log(1 + exp(x)) = max(x, 0) + log1p(exp(-|x|))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-mass of independent Bernoulli bits `h` under logits `a`:
/// `sum_j h_j * a_j - softplus(a_j)`. Bits must be exactly 0 or 1.
pub fn bernoulli_log_mass(logits: ArrayView1<f64>, bits: ArrayView1<f64>) -> f64 {
    debug_assert_eq!(logits.len(), bits.len());
    logits
        .iter()
        .zip(bits.iter())
        .map(|(&a, &h)| h * a - softplus(a))
        .sum()
}

/// Log of `sum_i exp(x_i)` with the max factored out.
pub fn logsumexp(xs: ArrayView1<f64>) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Softmax of `xs`, computed via the shifted exponentials.
pub fn softmax(xs: ArrayView1<f64>) -> Array1<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = xs.mapv(|x| (x - m).exp());
    let z = out.sum();
    out.mapv_inplace(|v| v / z);
    out
}

/// Check every entry is exactly 0.0 or 1.0.
pub fn check_binary(xs: ArrayView1<f64>, what: &str) -> Result<()> {
    for (i, &x) in xs.iter().enumerate() {
        if x != 0.0 && x != 1.0 {
            return Err(Error::numeric(format!(
                "{what}[{i}] = {x} is not a binary value"
            )));
        }
    }
    Ok(())
}

/// Check every entry is finite.
pub fn check_finite(xs: ArrayView1<f64>, what: &str) -> Result<()> {
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::numeric(format!("{what}[{i}] = {x} is not finite")));
        }
    }
    Ok(())
}

/// Fixed-order lag window over vectors of a common dimension.
///
/// Holds the concatenation `[x_{t-1}; x_{t-2}; ...; x_{t-n}]`, newest
/// first, zero-filled where the history is shorter than `n`. Pushing a new
/// frame shifts the window by one slot.
#[derive(Debug, Clone)]
pub struct LagBuffer {
    dim: usize,
    order: usize,
    buf: Array1<f64>,
}

impl LagBuffer {
    pub fn new(dim: usize, order: usize) -> Self {
        LagBuffer { dim, order, buf: Array1::zeros(dim * order) }
    }

    /// Concatenated window, length `dim * order`.
    pub fn window(&self) -> ArrayView1<'_, f64> {
        self.buf.view()
    }

    /// Most recently pushed frame (the newest slot of the window).
    pub fn latest(&self) -> ArrayView1<'_, f64> {
        self.buf.slice(ndarray::s![..self.dim])
    }

    /// Shift the window one step and place `x` in the newest slot.
    pub fn push(&mut self, x: ArrayView1<f64>) {
        debug_assert_eq!(x.len(), self.dim);
        if self.order == 0 {
            return;
        }
        for k in (1..self.order).rev() {
            let (src, dst) = ((k - 1) * self.dim, k * self.dim);
            for i in 0..self.dim {
                self.buf[dst + i] = self.buf[src + i];
            }
        }
        for i in 0..self.dim {
            self.buf[i] = x[i];
        }
    }
}

/// Concatenate up to `order` frames newest-first into a `dim * order`
/// vector, zero-padding missing history. `frames` is ordered oldest to
/// newest, as stored in a sequence; the last `order` entries are used.
pub fn lag_window_from_frames(
    frames: &[ArrayView1<f64>],
    dim: usize,
    order: usize,
) -> Array1<f64> {
    let mut out = Array1::zeros(dim * order);
    for k in 0..order {
        if k < frames.len() {
            let f = &frames[frames.len() - 1 - k];
            debug_assert_eq!(f.len(), dim);
            out.slice_mut(ndarray::s![k * dim..(k + 1) * dim]).assign(f);
        }
    }
    out
}
