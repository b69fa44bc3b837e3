//! Recognition network: a factorized approximation to the posterior over
//! hidden states.
//!
//! The approximation factorizes over time. At each frame the hidden bits
//! are independent Bernoullis whose logits read the current visible frame,
//! the lagged visible window, the previously sampled hidden window, and the
//! style vector:
//!
//! `z_t = U1(y) h_window + U2(y) v_t + U3(y) v_window + D y`
//!
//! Sampling sweeps forward once, feeding each sampled frame back into the
//! next frame's hidden window, so drawing a path and scoring it share the
//! same logits by construction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{style_bias_apply, RecognitionParams};
use crate::util::{bernoulli_log_mass, check_binary, sigmoid, softplus, LagBuffer};

/// Posterior logits for one frame given explicit lag windows.
///
/// `h_lags` and `v_lags` are newest-first concatenations of the previous
/// `n` hidden and visible frames, zero-padded where history is short.
pub fn posterior_logits(
    params: &RecognitionParams,
    h_lags: ArrayView1<f64>,
    v_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let mut z = params.u1.apply(y, h_lags)?;
    z += &params.u2.apply(y, v_t)?;
    z += &params.u3.apply(y, v_lags)?;
    z += &style_bias_apply(&params.d, y);
    Ok(z)
}

fn check_time_shapes(v: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if v.nrows() != y.nrows() {
        return Err(Error::shape(format!(
            "visible sequence has {} frames but style schedule has {}",
            v.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

/// Draw one hidden path for a sequence and return it with its sampling
/// log-probability. Hidden frames are the rows of the returned matrix.
pub fn sample_posterior(
    params: &RecognitionParams,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, f64)> {
    check_time_shapes(v, y)?;
    let t_len = v.nrows();
    let j = params.dims.hidden();
    let n = params.dims.order;
    let mut h = Array2::zeros((t_len, j));
    let mut h_lb = LagBuffer::new(j, n);
    let mut v_lb = LagBuffer::new(v.ncols(), n);
    let mut total_log_q = 0.0;
    for t in 0..t_len {
        let z = posterior_logits(params, h_lb.window(), v.row(t), v_lb.window(), y.row(t))?;
        for (jj, &zj) in z.iter().enumerate() {
            let p = sigmoid(zj);
            let bit = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            h[(t, jj)] = bit;
            total_log_q += bit * zj - softplus(zj);
        }
        h_lb.push(h.row(t));
        v_lb.push(v.row(t));
    }
    Ok((h, total_log_q))
}

/// Log-probability of a given hidden path under the recognition network.
///
/// Uses the stable Bernoulli log-mass `h z - softplus(z)` throughout, so
/// extreme logits score finite values.
pub fn log_q(
    params: &RecognitionParams,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<f64> {
    check_time_shapes(v, y)?;
    if h.nrows() != v.nrows() {
        return Err(Error::shape(format!(
            "hidden sequence has {} frames but visible sequence has {}",
            h.nrows(),
            v.nrows()
        )));
    }
    let j = params.dims.hidden();
    let n = params.dims.order;
    let mut h_lb = LagBuffer::new(j, n);
    let mut v_lb = LagBuffer::new(v.ncols(), n);
    let mut total = 0.0;
    for t in 0..v.nrows() {
        check_binary(h.row(t), "hidden state")?;
        let z = posterior_logits(params, h_lb.window(), v.row(t), v_lb.window(), y.row(t))?;
        total += bernoulli_log_mass(z.view(), h.row(t));
        h_lb.push(h.row(t));
        v_lb.push(v.row(t));
    }
    Ok(total)
}
