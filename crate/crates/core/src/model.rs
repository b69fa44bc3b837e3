//! Generative model: hidden-state prior, emissions, joint density,
//! ancestral sampling, and one-step prediction.
//!
//! The hidden chain is first-order in blocks of `n` lagged frames: the
//! logits of the binary hidden state at frame `t` read the previous `n`
//! hidden frames, the previous `n` visible frames, and the style vector,
//!
//! `z_t = W1(y) h_window + W3(y) v_window + B y`.
//!
//! The emission at `t` reads the current hidden state, the same visible
//! window, and the style vector. Three families are supported: diagonal
//! Gaussian (mean and log-variance each get their own head), independent
//! Bernoulli bits, and counts scored against a softmax simplex. Count
//! densities omit the multinomial coefficient of the observed vector; it
//! depends only on the data and cancels from every comparison and
//! gradient this crate performs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::dims::ObsKind;
use crate::error::{Error, Result};
use crate::params::{style_bias_apply, GenerativeParams, RecognitionParams};
use crate::recognition;
use crate::schedule::StyleSchedule;
use crate::util::{
    bernoulli_log_mass, check_binary, check_finite, lag_window_from_frames, logsumexp, sigmoid,
    softmax, softplus, LagBuffer,
};

/// Clamp bound for the Gaussian log-variance preactivation.
pub const LOG_VAR_CLAMP: f64 = 10.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Hidden-state prior logits for one frame given explicit lag windows
/// (newest first, zero-padded where history is short).
pub fn hidden_prior_logits(
    params: &GenerativeParams,
    h_lags: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let mut z = params.w1.apply(y, h_lags)?;
    z += &params.w3.apply(y, v_lags)?;
    z += &style_bias_apply(&params.b, y);
    Ok(z)
}

/// Emission distribution for one frame.
#[derive(Debug, Clone)]
pub enum Emission {
    Real { mean: Array1<f64>, log_var: Array1<f64> },
    Binary { logits: Array1<f64> },
    Count { log_weights: Array1<f64> },
}

impl Emission {
    /// Log-density (or log-mass) of an observed frame.
    pub fn log_density(&self, v: ArrayView1<f64>) -> Result<f64> {
        match self {
            Emission::Real { mean, log_var } => {
                check_finite(v, "real observation")?;
                let mut total = 0.0;
                for ((&x, &mu), &s) in v.iter().zip(mean.iter()).zip(log_var.iter()) {
                    let d = x - mu;
                    total += -0.5 * (LN_2PI + s + d * d * (-s).exp());
                }
                Ok(total)
            }
            Emission::Binary { logits } => {
                check_binary(v, "binary observation")?;
                Ok(bernoulli_log_mass(logits.view(), v))
            }
            Emission::Count { log_weights } => {
                let total: f64 = v.sum();
                for (i, &c) in v.iter().enumerate() {
                    if c < 0.0 || c.fract() != 0.0 {
                        return Err(Error::numeric(format!(
                            "count observation[{i}] = {c} is not a nonnegative integer"
                        )));
                    }
                }
                let lse = logsumexp(log_weights.view());
                let dot: f64 = v
                    .iter()
                    .zip(log_weights.iter())
                    .map(|(&c, &lw)| c * lw)
                    .sum();
                Ok(dot - total * lse)
            }
        }
    }

    /// Expected frame: the mean, the Bernoulli probabilities, or the
    /// softmax simplex.
    pub fn mean(&self) -> Array1<f64> {
        match self {
            Emission::Real { mean, .. } => mean.clone(),
            Emission::Binary { logits } => logits.mapv(sigmoid),
            Emission::Count { log_weights } => softmax(log_weights.view()),
        }
    }

    /// Draw one frame. Count emissions draw a single category, encoded as
    /// a one-hot count vector; for such draws the omitted multinomial
    /// coefficient is exactly one.
    pub fn sample(&self, rng: &mut impl Rng) -> Array1<f64> {
        match self {
            Emission::Real { mean, log_var } => {
                let normal = rand_distr::StandardNormal;
                Array1::from_shape_fn(mean.len(), |m| {
                    let z: f64 = rand_distr::Distribution::sample(&normal, rng);
                    mean[m] + (0.5 * log_var[m]).exp() * z
                })
            }
            Emission::Binary { logits } => Array1::from_shape_fn(logits.len(), |m| {
                if rng.random::<f64>() < sigmoid(logits[m]) {
                    1.0
                } else {
                    0.0
                }
            }),
            Emission::Count { log_weights } => {
                let probs = softmax(log_weights.view());
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (m, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = m;
                        break;
                    }
                }
                let mut v = Array1::zeros(probs.len());
                v[pick] = 1.0;
                v
            }
        }
    }
}

/// Emission preactivation through one head: `W2(y) h + W4(y) v_window + C y`.
fn head_preact(
    head: &crate::params::EmissionHead,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let mut pre = head.w2.apply(y, h_t)?;
    pre += &head.w4.apply(y, v_lags)?;
    pre += &style_bias_apply(&head.c, y);
    Ok(pre)
}

/// Raw emission preactivations: the primary head output and, for real
/// observations, the unclamped log-variance head output. The raw value is
/// what gradient code needs to decide where the clamp is active.
pub fn emission_preacts(
    params: &GenerativeParams,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<(Array1<f64>, Option<Array1<f64>>)> {
    let pre = head_preact(&params.head, h_t, v_lags, y)?;
    let pre_var = match params.obs {
        ObsKind::Real => {
            let vh = params
                .var_head
                .as_ref()
                .ok_or_else(|| Error::config("real observation model lacks a variance head"))?;
            Some(head_preact(vh, h_t, v_lags, y)?)
        }
        _ => None,
    };
    Ok((pre, pre_var))
}

/// Distribution from raw preactivations; clamps the log-variance.
pub fn emission_from_preacts(
    obs: ObsKind,
    preacts: &(Array1<f64>, Option<Array1<f64>>),
) -> Emission {
    match obs {
        ObsKind::Real => {
            let raw = preacts.1.as_ref().expect("real emission carries a log-variance row");
            Emission::Real {
                mean: preacts.0.clone(),
                log_var: raw.mapv(|x| x.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)),
            }
        }
        ObsKind::Binary => Emission::Binary { logits: preacts.0.clone() },
        ObsKind::Count => Emission::Count { log_weights: preacts.0.clone() },
    }
}

/// Emission distribution for one frame given the current hidden state and
/// explicit lag windows. `h_t` may be a relaxed (non-binary) state, as in
/// plug-in prediction.
pub fn emission(
    params: &GenerativeParams,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Emission> {
    let preacts = emission_preacts(params, h_t, v_lags, y)?;
    Ok(emission_from_preacts(params.obs, &preacts))
}

/// Gaussian emission parameters `(mean, clamped log-variance)`.
pub fn emission_gaussian(
    params: &GenerativeParams,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    match emission(params, h_t, v_lags, y)? {
        Emission::Real { mean, log_var } => Ok((mean, log_var)),
        _ => Err(Error::config("emission_gaussian called on a non-real model")),
    }
}

/// Bernoulli emission probabilities.
pub fn emission_binary(
    params: &GenerativeParams,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    match emission(params, h_t, v_lags, y)? {
        Emission::Binary { logits } => Ok(logits.mapv(sigmoid)),
        _ => Err(Error::config("emission_binary called on a non-binary model")),
    }
}

/// Softmax simplex over count categories.
pub fn emission_count(
    params: &GenerativeParams,
    h_t: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    match emission(params, h_t, v_lags, y)? {
        Emission::Count { log_weights } => Ok(softmax(log_weights.view())),
        _ => Err(Error::config("emission_count called on a non-count model")),
    }
}

fn check_seq_shapes(
    params: &GenerativeParams,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<()> {
    let (j, m, s) = (params.dims.hidden(), params.dims.visible, params.dims.styles);
    if v.ncols() != m {
        return Err(Error::shape(format!(
            "visible frames have {} dims, expected {m}",
            v.ncols()
        )));
    }
    if h.ncols() != j {
        return Err(Error::shape(format!(
            "hidden frames have {} dims, expected {j}",
            h.ncols()
        )));
    }
    if y.ncols() != s {
        return Err(Error::shape(format!(
            "style rows have {} dims, expected {s}",
            y.ncols()
        )));
    }
    if v.nrows() != h.nrows() || v.nrows() != y.nrows() {
        return Err(Error::shape(format!(
            "sequence lengths disagree: v={}, h={}, y={}",
            v.nrows(),
            h.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

/// Log-density of a full `(V, H)` trajectory under the generative model.
/// Rows are frames; lag windows before frame 0 are zero.
pub fn log_joint(
    params: &GenerativeParams,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<f64> {
    check_seq_shapes(params, v, h, y)?;
    let n = params.dims.order;
    let mut h_lb = LagBuffer::new(params.dims.hidden(), n);
    let mut v_lb = LagBuffer::new(params.dims.visible, n);
    let mut total = 0.0;
    for t in 0..v.nrows() {
        check_binary(h.row(t), "hidden state")?;
        let z = hidden_prior_logits(params, h_lb.window(), v_lb.window(), y.row(t))?;
        total += bernoulli_log_mass(z.view(), h.row(t));
        let em = emission(params, h.row(t), v_lb.window(), y.row(t))?;
        total += em.log_density(v.row(t))?;
        h_lb.push(h.row(t));
        v_lb.push(v.row(t));
    }
    Ok(total)
}

/// Ancestral sampling: hidden bits first, then the observation, frame by
/// frame. `seed_frames` prime the visible lag window (the last `n` rows
/// are used); hidden lags start at zero. Returns `(V, H)` with one row
/// per scheduled frame.
pub fn generate(
    params: &GenerativeParams,
    seed_frames: ArrayView2<f64>,
    schedule: &StyleSchedule,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (j, m, s) = (params.dims.hidden(), params.dims.visible, params.dims.styles);
    if schedule.styles() != s {
        return Err(Error::shape(format!(
            "schedule has {} styles, expected {s}",
            schedule.styles()
        )));
    }
    if seed_frames.nrows() > 0 && seed_frames.ncols() != m {
        return Err(Error::shape(format!(
            "seed frames have {} dims, expected {m}",
            seed_frames.ncols()
        )));
    }
    let n = params.dims.order;
    let t_len = schedule.frames();
    let mut v = Array2::zeros((t_len, m));
    let mut h = Array2::zeros((t_len, j));
    let mut h_lb = LagBuffer::new(j, n);
    let mut v_lb = LagBuffer::new(m, n);
    for row in seed_frames.rows() {
        v_lb.push(row);
    }
    for t in 0..t_len {
        let y = schedule.row(t);
        let z = hidden_prior_logits(params, h_lb.window(), v_lb.window(), y)?;
        for (jj, &zj) in z.iter().enumerate() {
            h[(t, jj)] = if rng.random::<f64>() < sigmoid(zj) { 1.0 } else { 0.0 };
        }
        let em = emission(params, h.row(t), v_lb.window(), y)?;
        let frame = em.sample(rng);
        v.row_mut(t).assign(&frame);
        h_lb.push(h.row(t));
        v_lb.push(v.row(t));
    }
    Ok((v, h))
}

/// One-step-ahead expected frame.
///
/// Draws `num_samples` hidden histories from the recognition network over
/// the observed prefix, plugs the mean hidden state `sigmoid(z_t)` into
/// the emission, and averages the resulting expected frames. For real
/// observations this is the predicted mean; for binary, probabilities;
/// for counts, the simplex.
pub fn predict_next(
    params: &GenerativeParams,
    rec: &RecognitionParams,
    v_hist: ArrayView2<f64>,
    y_hist: ArrayView2<f64>,
    y_next: ArrayView1<f64>,
    num_samples: usize,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    if v_hist.nrows() == 0 {
        return Err(Error::config("prediction requires at least one observed frame"));
    }
    if num_samples == 0 {
        return Err(Error::config("prediction requires at least one sample"));
    }
    let n = params.dims.order;
    let m = params.dims.visible;
    let v_frames: Vec<_> = v_hist.rows().into_iter().collect();
    let v_window = lag_window_from_frames(&v_frames, m, n);
    let mut acc = Array1::zeros(m);
    for _ in 0..num_samples {
        let (h, _) = recognition::sample_posterior(rec, v_hist, y_hist, rng)?;
        let h_frames: Vec<_> = h.rows().into_iter().collect();
        let h_window = lag_window_from_frames(&h_frames, params.dims.hidden(), n);
        let z = hidden_prior_logits(params, h_window.view(), v_window.view(), y_next)?;
        let h_mean = z.mapv(sigmoid);
        let em = emission(params, h_mean.view(), v_window.view(), y_next)?;
        acc += &em.mean();
    }
    Ok(acc / num_samples as f64)
}

/// Per-step contribution to the joint density: hidden log-mass plus
/// observation log-density, with all conditioning passed explicitly.
pub fn step_log_joint(
    params: &GenerativeParams,
    v_t: ArrayView1<f64>,
    h_t: ArrayView1<f64>,
    h_lags: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    check_binary(h_t, "hidden state")?;
    let z = hidden_prior_logits(params, h_lags, v_lags, y)?;
    let mut total = bernoulli_log_mass(z.view(), h_t);
    let em = emission(params, h_t, v_lags, y)?;
    total += em.log_density(v_t)?;
    Ok(total)
}

/// Per-step recognition log-mass with explicit conditioning, the
/// counterpart of [`step_log_joint`] in bound estimates.
pub fn step_log_q(
    rec: &RecognitionParams,
    v_t: ArrayView1<f64>,
    h_t: ArrayView1<f64>,
    h_lags: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    check_binary(h_t, "hidden state")?;
    let z = recognition::posterior_logits(rec, h_lags, v_t, v_lags, y)?;
    Ok(h_t
        .iter()
        .zip(z.iter())
        .map(|(&h, &zj)| h * zj - softplus(zj))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::Dims;
    use crate::params::TensorMap;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(obs: ObsKind) -> GenerativeParams {
        let dims = Dims::new(1, 1, 1, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GenerativeParams::init(&dims, obs, false, &mut rng).unwrap();
        p.visit_mut(&mut |_, t| t.fill(0.0));
        p
    }

    fn random_params(obs: ObsKind, factored: bool, seed: u64) -> GenerativeParams {
        let dims = Dims::new(4, 3, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GenerativeParams::init(&dims, obs, factored, &mut rng).unwrap();
        p.visit_mut(&mut |_, t| t.mapv_inplace(|v| v * 300.0));
        p
    }

    #[test]
    fn zero_model_scores_the_standard_normal_baseline() {
        // One frame, one hidden bit, all parameters zero: the hidden mass
        // is ln(1/2) and the emission is a standard normal at zero.
        let p = zero_params(ObsKind::Real);
        let v = array![[0.0]];
        let h = array![[0.0]];
        let y = array![[1.0]];
        let lj = log_joint(&p, v.view(), h.view(), y.view()).unwrap();
        let expected = 0.5f64.ln() - 0.5 * LN_2PI;
        assert_abs_diff_eq!(lj, expected, epsilon = 1e-12);
    }

    #[test]
    fn log_joint_decomposes_into_explicit_steps() {
        let p = random_params(ObsKind::Real, true, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = array![
            [0.5, -0.2, 0.1, 0.9],
            [0.0, 0.3, -0.7, 0.2],
            [1.0, 1.0, 0.0, -0.1]
        ];
        let h = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let y = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let _ = &mut rng;

        let whole = log_joint(&p, v.view(), h.view(), y.view()).unwrap();

        let (j, m, n) = (3, 4, 2);
        let mut sum = 0.0;
        for t in 0..3 {
            let h_frames: Vec<_> = (0..t).map(|k| h.row(k)).collect();
            let v_frames: Vec<_> = (0..t).map(|k| v.row(k)).collect();
            let hw = lag_window_from_frames(&h_frames, j, n);
            let vw = lag_window_from_frames(&v_frames, m, n);
            sum += step_log_joint(&p, v.row(t), h.row(t), hw.view(), vw.view(), y.row(t))
                .unwrap();
        }
        assert_abs_diff_eq!(whole, sum, epsilon = 1e-12);
    }

    #[test]
    fn zeroed_feedback_paths_ignore_visible_history() {
        let mut p = random_params(ObsKind::Real, false, 22);
        p.zero_visible_paths();
        let y = array![1.0, 0.0];
        let h_lags = array![1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let v_a = Array1::from_elem(8, 2.5);
        let v_b = Array1::from_elem(8, -4.0);
        let za = hidden_prior_logits(&p, h_lags.view(), v_a.view(), y.view()).unwrap();
        let zb = hidden_prior_logits(&p, h_lags.view(), v_b.view(), y.view()).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn count_emission_is_a_simplex_and_matches_manual_mass() {
        let p = random_params(ObsKind::Count, true, 23);
        let h = array![1.0, 0.0, 1.0];
        let vw = Array1::from_elem(8, 0.3);
        let y = array![0.5, 0.5];
        let simplex = emission_count(&p, h.view(), vw.view(), y.view()).unwrap();
        assert_abs_diff_eq!(simplex.sum(), 1.0, epsilon = 1e-12);

        let em = emission(&p, h.view(), vw.view(), y.view()).unwrap();
        let v = array![2.0, 0.0, 1.0, 0.0];
        let ld = em.log_density(v.view()).unwrap();
        let manual: f64 = 2.0 * simplex[0].ln() + simplex[2].ln();
        assert_abs_diff_eq!(ld, manual, epsilon = 1e-10);

        let bad = array![1.5, 0.0, 0.0, 0.0];
        assert!(em.log_density(bad.view()).is_err());
    }

    #[test]
    fn binary_emission_probabilities_are_strictly_inside_unit_interval() {
        let p = random_params(ObsKind::Binary, false, 24);
        let h = array![0.0, 1.0, 1.0];
        let vw = Array1::from_elem(8, -0.2);
        let y = array![1.0, 0.0];
        let probs = emission_binary(&p, h.view(), vw.view(), y.view()).unwrap();
        for &q in probs.iter() {
            assert!(q > 0.0 && q < 1.0, "probability {q} escaped (0,1)");
        }
    }

    #[test]
    fn gaussian_log_variance_is_clamped() {
        let mut p = random_params(ObsKind::Real, false, 25);
        if let Some(vh) = &mut p.var_head {
            vh.c.fill(500.0);
        }
        let h = array![0.0, 0.0, 0.0];
        let vw = Array1::zeros(8);
        let y = array![1.0, 0.0];
        let (_, lv) = emission_gaussian(&p, h.view(), vw.view(), y.view()).unwrap();
        assert!(lv.iter().all(|&s| s <= LOG_VAR_CLAMP));
    }

    #[test]
    fn generation_is_deterministic_per_seed_and_respects_shapes() {
        let p = random_params(ObsKind::Real, true, 26);
        let sched = StyleSchedule::constant(0, 2, 7).unwrap();
        let seeds = Array2::zeros((0, 4));
        let (v1, h1) =
            generate(&p, seeds.view(), &sched, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (v2, h2) =
            generate(&p, seeds.view(), &sched, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (v3, _) =
            generate(&p, seeds.view(), &sched, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(h1, h2);
        assert_ne!(v1, v3);
        assert_eq!(v1.dim(), (7, 4));
        assert_eq!(h1.dim(), (7, 3));
        for &bit in h1.iter() {
            assert!(bit == 0.0 || bit == 1.0);
        }
    }

    #[test]
    fn predict_next_requires_history() {
        let p = random_params(ObsKind::Real, false, 27);
        let dims = p.dims.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = RecognitionParams::init(&dims, false, &mut rng).unwrap();
        let empty = Array2::zeros((0, 4));
        let y_hist = Array2::zeros((0, 2));
        let y = array![1.0, 0.0];
        let err = predict_next(&p, &rec, empty.view(), y_hist.view(), y.view(), 3, &mut rng);
        assert!(err.is_err());
    }
}
