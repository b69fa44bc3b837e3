//! Stacked models: additional binary hidden layers above the base layer.
//!
//! Layer wiring at frame `t`: layer `l` logits read the layer's own lag
//! window, the lag window of the layer below (the visibles for the bottom
//! layer), the current state of the layer above when one exists, and the
//! style row. Only the bottom layer connects to the observations.
//! Recognition mirrors the pattern bottom-up, conditioning on the current
//! state of the layer below instead of the layer above.
//!
//! With no upper layers every function here reduces exactly to its
//! single-layer counterpart; the sampling paths delegate outright so the
//! draw sequence is identical.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::enumerate::{for_each_hidden_path, MAX_BITS};
use crate::error::{Error, Result};
use crate::model;
use crate::nvil::{
    self, accum_gen_step, accum_rec_step, stack_forward, BaselineParams, HiddenSource,
    MinibatchOutcome, NvilOptions, SignalStats, SubSeq,
};
use crate::params::{DeepParams, DeepRecognition, GradientSet};
use crate::schedule::StyleSchedule;
use crate::util::{bernoulli_log_mass, logsumexp, sigmoid, LagBuffer};

fn check_layer_count(expected: usize, given: usize) -> Result<()> {
    if expected != given {
        return Err(Error::shape(format!(
            "{given} hidden paths for a {expected}-layer model"
        )));
    }
    Ok(())
}

/// Joint log-density `log p(V, H_1..H_L | Y)` for a layer stack.
pub fn deep_log_joint(
    params: &DeepParams,
    v: ArrayView2<f64>,
    h_layers: &[ArrayView2<f64>],
    y: ArrayView2<f64>,
) -> Result<f64> {
    check_layer_count(params.base.dims.num_layers(), h_layers.len())?;
    let pass = stack_forward(
        Some(params.view()),
        None,
        v,
        y,
        None,
        HiddenSource::Given(h_layers),
    )?;
    Ok(pass.raw.iter().sum())
}

/// Recognition log-probability of a full layer stack.
pub fn deep_log_q(
    rec: &DeepRecognition,
    v: ArrayView2<f64>,
    h_layers: &[ArrayView2<f64>],
    y: ArrayView2<f64>,
) -> Result<f64> {
    check_layer_count(rec.base.dims.num_layers(), h_layers.len())?;
    let pass = stack_forward(None, Some(rec.view()), v, y, None, HiddenSource::Given(h_layers))?;
    let mut total = 0.0;
    for (l, h) in pass.h.iter().enumerate() {
        for t in 0..v.nrows() {
            total += bernoulli_log_mass(pass.rec_z[l].row(t), h.row(t));
        }
    }
    Ok(total)
}

/// Sample a full hidden stack from the recognition network and return it
/// with its log-probability.
pub fn deep_sample_posterior(
    rec: &DeepRecognition,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
    rng: ChaCha8Rng,
) -> Result<(Vec<Array2<f64>>, f64)> {
    let pass = stack_forward(None, Some(rec.view()), v, y, None, HiddenSource::Sample(rng))?;
    let log_q = -pass.raw.iter().sum::<f64>();
    Ok((pass.h, log_q))
}

/// Ancestral sampling of a layer stack. Per frame the layers are drawn
/// top-down, then the emission. `seed_frames` primes the visible lag
/// window only, as in the single-layer generator.
pub fn deep_generate(
    params: &DeepParams,
    seed_frames: ArrayView2<f64>,
    schedule: &StyleSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    if params.upper.is_empty() {
        let (v, h) = model::generate(&params.base, seed_frames, schedule, rng)?;
        return Ok((v, vec![h]));
    }
    let dims = &params.base.dims;
    let (m, n) = (dims.visible, dims.order);
    let layers = &dims.layers;
    let l_count = layers.len();
    if seed_frames.ncols() != m {
        return Err(Error::shape(format!(
            "seed frames have {} dims, expected {m}",
            seed_frames.ncols()
        )));
    }
    let t_len = schedule.frames();
    let view = params.view();

    let mut v_buf = LagBuffer::new(m, n);
    for t in 0..seed_frames.nrows() {
        v_buf.push(seed_frames.row(t));
    }
    let mut h_bufs: Vec<LagBuffer> = layers.iter().map(|&j| LagBuffer::new(j, n)).collect();

    let mut v_out = Array2::zeros((t_len, m));
    let mut h_out: Vec<Array2<f64>> =
        layers.iter().map(|&j| Array2::zeros((t_len, j))).collect();

    for t in 0..t_len {
        let y_t = schedule.row(t);
        let v_win = v_buf.window();
        let wins: Vec<_> = h_bufs.iter().map(|b| b.window()).collect();
        for l in (0..l_count).rev() {
            let below_win = if l == 0 { v_win.view() } else { wins[l - 1].view() };
            let h_above = if l + 1 < l_count { Some(h_out[l + 1].row(t)) } else { None };
            let z = view.layer_logits(l, wins[l].view(), below_win, h_above, y_t)?;
            for (j, &zj) in z.iter().enumerate() {
                use rand::Rng;
                h_out[l][(t, j)] = if rng.random::<f64>() < sigmoid(zj) { 1.0 } else { 0.0 };
            }
        }
        let dist = model::emission(&params.base, h_out[0].row(t), v_win.view(), y_t)?;
        let frame = dist.sample(rng);
        v_out.row_mut(t).assign(&frame);

        for (l, buf) in h_bufs.iter_mut().enumerate() {
            buf.push(h_out[l].row(t));
        }
        v_buf.push(v_out.row(t));
    }
    Ok((v_out, h_out))
}

/// Teacher-forced gradient of [`deep_log_joint`] for every generative
/// tensor in the stack.
pub fn deep_model_gradients(
    params: &DeepParams,
    v: ArrayView2<f64>,
    h_layers: &[ArrayView2<f64>],
    y: ArrayView2<f64>,
) -> Result<GradientSet> {
    check_layer_count(params.base.dims.num_layers(), h_layers.len())?;
    let view = params.view();
    let pass = stack_forward(Some(view), None, v, y, None, HiddenSource::Given(h_layers))?;
    let mut gs = GradientSet::new();
    for t in 0..v.nrows() {
        accum_gen_step(view, &mut gs, &pass, v, y, t, 1.0)?;
    }
    Ok(gs)
}

/// Teacher-forced gradient of `sum_t weights[t] * log q(h_t | ...)` for
/// every recognition tensor in the stack.
pub fn deep_recognition_gradients(
    rec: &DeepRecognition,
    v: ArrayView2<f64>,
    h_layers: &[ArrayView2<f64>],
    y: ArrayView2<f64>,
    weights: &[f64],
) -> Result<GradientSet> {
    check_layer_count(rec.base.dims.num_layers(), h_layers.len())?;
    if weights.len() != v.nrows() {
        return Err(Error::shape(format!(
            "{} weights for {} frames",
            weights.len(),
            v.nrows()
        )));
    }
    let view = rec.view();
    let pass = stack_forward(None, Some(view), v, y, None, HiddenSource::Given(h_layers))?;
    let mut gs = GradientSet::new();
    for t in 0..v.nrows() {
        accum_rec_step(view, &mut gs, &pass, v, y, t, weights[t])?;
    }
    Ok(gs)
}

/// One variational gradient estimate for a layer stack; the single-layer
/// case goes through the identical code path as the shallow trainer.
pub fn deep_elbo_and_grads(
    params: &DeepParams,
    rec: &DeepRecognition,
    bl: Option<&BaselineParams>,
    stats: &mut SignalStats,
    batch: &[SubSeq],
    seeds: &[u64],
    opts: &NvilOptions,
) -> Result<MinibatchOutcome> {
    nvil::minibatch_views(params.view(), rec.view(), bl, stats, batch, seeds, opts)
}

/// Exact log of the marginal `sum over all layer stacks of p(V, H | Y)`,
/// enumerable only for tiny instances.
pub fn deep_log_marginal(
    params: &DeepParams,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<f64> {
    let layers = &params.base.dims.layers;
    let j_total: usize = layers.iter().sum();
    let t = v.nrows();
    let mut terms = Vec::new();
    let mut failure = None;
    for_each_hidden_path(j_total, t, |grid| {
        if failure.is_some() {
            return;
        }
        let mut offset = 0;
        let mut split = Vec::with_capacity(layers.len());
        for &j in layers {
            split.push(grid.slice(ndarray::s![.., offset..offset + j]));
            offset += j;
        }
        match deep_log_joint(params, v, &split, y) {
            Ok(lp) => terms.push(lp),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(logsumexp(ndarray::ArrayView1::from(&terms[..])))
}

/// Exact evidence bound `sum_H q(H) (log p - log q)` by enumerating every
/// hidden stack. Deterministic, so usable as a hard Jensen-gap check.
pub fn deep_exact_bound(
    params: &DeepParams,
    rec: &DeepRecognition,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<f64> {
    let layers = &params.base.dims.layers;
    let j_total: usize = layers.iter().sum();
    let t = v.nrows();
    if (j_total * t) as u32 > MAX_BITS {
        return Err(Error::config(format!(
            "exact bound over {} bits exceeds the {MAX_BITS}-bit limit",
            j_total * t
        )));
    }
    let mut bound = 0.0;
    let mut failure = None;
    for_each_hidden_path(j_total, t, |grid| {
        if failure.is_some() {
            return;
        }
        let mut offset = 0;
        let mut split = Vec::with_capacity(layers.len());
        for &j in layers {
            split.push(grid.slice(ndarray::s![.., offset..offset + j]));
            offset += j;
        }
        let result = deep_log_joint(params, v, &split, y)
            .and_then(|lp| deep_log_q(rec, v, &split, y).map(|lq| (lp, lq)));
        match result {
            Ok((lp, lq)) => bound += lq.exp() * (lp - lq),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::{Dims, ObsKind};
    use crate::params::TensorMap;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;

    fn two_layer_dims() -> Dims {
        let mut dims = Dims::new(2, 2, 2, 2, 2);
        dims.layers.push(2);
        dims
    }

    fn setup(
        obs: ObsKind,
        factored: bool,
        seed: u64,
    ) -> (DeepParams, DeepRecognition, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
        let dims = two_layer_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = DeepParams::init(&dims, obs, factored, &mut rng).unwrap();
        let mut rec = DeepRecognition::init(&dims, factored, &mut rng).unwrap();
        params.visit_mut(&mut |_, t| t.mapv_inplace(|x| x * 300.0));
        rec.visit_mut(&mut |_, t| t.mapv_inplace(|x| x * 300.0));
        let v = match obs {
            ObsKind::Real => array![[0.4, -0.2], [1.0, 0.3], [-0.5, 0.8]],
            ObsKind::Binary => array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            ObsKind::Count => array![[2.0, 1.0], [0.0, 2.0], [1.0, 0.0]],
        };
        let h = vec![
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            array![[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]],
        ];
        let y = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        (params, rec, v, h, y)
    }

    #[test]
    fn single_layer_stack_matches_the_flat_model_exactly() {
        let dims = Dims::new(2, 3, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = DeepParams::init(&dims, ObsKind::Real, false, &mut rng).unwrap();
        let v = array![[0.4, -0.2], [1.0, 0.3]];
        let h = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let deep = deep_log_joint(&params, v.view(), &[h.view()], y.view()).unwrap();
        let flat = model::log_joint(&params.base, v.view(), h.view(), y.view()).unwrap();
        assert_eq!(deep, flat);
    }

    #[test]
    fn single_layer_generate_delegates_byte_for_byte() {
        let dims = Dims::new(2, 3, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = DeepParams::init(&dims, ObsKind::Real, true, &mut rng).unwrap();
        let schedule = StyleSchedule::constant(0, 2, 6).unwrap();
        let seeds = Array2::zeros((0, 2));

        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let (v_deep, h_deep) =
            deep_generate(&params, seeds.view(), &schedule, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let (v_flat, h_flat) =
            model::generate(&params.base, seeds.view(), &schedule, &mut rng_b).unwrap();
        assert_eq!(v_deep, v_flat);
        assert_eq!(h_deep.len(), 1);
        assert_eq!(h_deep[0], h_flat);
    }

    #[test]
    fn zeroed_top_down_weights_split_the_log_joint_additively() {
        let (mut params, _, v, h, y) = setup(ObsKind::Real, false, 11);
        params.upper[0].w5 = crate::cond_weight::CondWeight::zeros_dense(
            params.base.dims.hidden(),
            params.base.dims.layers[1],
            params.base.dims.styles,
        );
        let joint = deep_log_joint(&params, v.view(), &[h[0].view(), h[1].view()], y.view())
            .unwrap();

        let bottom = model::log_joint(&params.base, v.view(), h[0].view(), y.view()).unwrap();

        // Upper-layer dynamics mass, recomputed by hand from its wiring.
        let up = &params.upper[0];
        let n = params.base.dims.order;
        let mut own = LagBuffer::new(2, n);
        let mut below = LagBuffer::new(2, n);
        let mut top = 0.0;
        for t in 0..v.nrows() {
            let mut z = up.w7.apply(y.row(t), own.window()).unwrap();
            z += &up.w6.apply(y.row(t), below.window()).unwrap();
            z += &crate::params::style_bias_apply(&up.a, y.row(t));
            top += bernoulli_log_mass(z.view(), h[1].row(t));
            own.push(h[1].row(t));
            below.push(h[0].row(t));
        }
        assert_abs_diff_eq!(joint, bottom + top, epsilon = 1e-10);
    }

    #[test]
    fn upper_layer_gradients_ignore_the_observations() {
        let (params, _, v, h, y) = setup(ObsKind::Real, false, 17);
        let paths = [h[0].view(), h[1].view()];
        let g1 = deep_model_gradients(&params, v.view(), &paths, y.view()).unwrap();
        let mut v2 = v.clone();
        v2[(1, 0)] += 2.5;
        let g2 = deep_model_gradients(&params, v2.view(), &paths, y.view()).unwrap();
        for name in ["layer2/w6/s0", "layer2/w7/s0", "layer2/a"] {
            assert_eq!(g1.get(name).unwrap(), g2.get(name).unwrap(), "{name}");
        }
        assert_ne!(g1.get("model/c").unwrap(), g2.get("model/c").unwrap());
    }

    #[test]
    fn deep_model_gradients_match_finite_differences() {
        for (obs, factored) in [(ObsKind::Real, true), (ObsKind::Count, false)] {
            let (mut params, _, v, h, y) = setup(obs, factored, 23);
            let paths = [h[0].view(), h[1].view()];
            let gs = deep_model_gradients(&params, v.view(), &paths, y.view()).unwrap();
            let eps = 1e-5;
            for (name, shape) in params.tensor_names() {
                let g = gs.get(&name).unwrap_or_else(|| panic!("no gradient for {name}"));
                for &(i, k) in &[(0, 0), (shape.0 - 1, shape.1 - 1)] {
                    params.perturb(&name, (i, k), eps);
                    let up = deep_log_joint(&params, v.view(), &paths, y.view()).unwrap();
                    params.perturb(&name, (i, k), -2.0 * eps);
                    let dn = deep_log_joint(&params, v.view(), &paths, y.view()).unwrap();
                    params.perturb(&name, (i, k), eps);
                    let num = (up - dn) / (2.0 * eps);
                    let ana = g[(i, k)];
                    assert!(
                        (num - ana).abs() < 1e-7 + 1e-4 * num.abs().max(ana.abs()),
                        "{obs:?} factored={factored} {name}[{i},{k}]: {ana} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn deep_recognition_gradients_match_finite_differences() {
        let (_, mut rec, v, h, y) = setup(ObsKind::Real, true, 29);
        let paths = [h[0].view(), h[1].view()];
        let weights = vec![1.0; v.nrows()];
        let gs =
            deep_recognition_gradients(&rec, v.view(), &paths, y.view(), &weights).unwrap();
        let eps = 1e-5;
        for (name, shape) in rec.tensor_names() {
            let g = gs.get(&name).unwrap_or_else(|| panic!("no gradient for {name}"));
            for &(i, k) in &[(0, 0), (shape.0 - 1, shape.1 - 1)] {
                rec.perturb(&name, (i, k), eps);
                let up = deep_log_q(&rec, v.view(), &paths, y.view()).unwrap();
                rec.perturb(&name, (i, k), -2.0 * eps);
                let dn = deep_log_q(&rec, v.view(), &paths, y.view()).unwrap();
                rec.perturb(&name, (i, k), eps);
                let num = (up - dn) / (2.0 * eps);
                let ana = g[(i, k)];
                assert!(
                    (num - ana).abs() < 1e-7 + 1e-4 * num.abs().max(ana.abs()),
                    "{name}[{i},{k}]: {ana} vs {num}"
                );
            }
        }
    }

    #[test]
    fn exact_bound_never_exceeds_the_enumerated_marginal() {
        let mut dims = Dims::new(2, 2, 2, 2, 1);
        dims.layers.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut params = DeepParams::init(&dims, ObsKind::Binary, false, &mut rng).unwrap();
        let mut rec = DeepRecognition::init(&dims, false, &mut rng).unwrap();
        params.visit_mut(&mut |_, t| t.mapv_inplace(|x| x * 400.0));
        rec.visit_mut(&mut |_, t| t.mapv_inplace(|x| x * 400.0));
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![[1.0, 0.0], [1.0, 0.0]];
        let log_z = deep_log_marginal(&params, v.view(), y.view()).unwrap();
        let bound = deep_exact_bound(&params, &rec, v.view(), y.view()).unwrap();
        assert!(
            bound <= log_z + 1e-10,
            "bound {bound} exceeds marginal {log_z}"
        );
        // The gap is strictly positive for a recognition network that does
        // not match the posterior.
        assert!(log_z - bound > 1e-6);
    }

    #[test]
    fn posterior_sampling_rescores_its_own_stack() {
        let (_, rec, v, _, y) = setup(ObsKind::Real, true, 41);
        let rng = ChaCha8Rng::seed_from_u64(4);
        let (h, lq) = deep_sample_posterior(&rec, v.view(), y.view(), rng).unwrap();
        let paths: Vec<_> = h.iter().map(|a| a.view()).collect();
        let rescored = deep_log_q(&rec, v.view(), &paths, y.view()).unwrap();
        assert_abs_diff_eq!(lq, rescored, epsilon = 1e-12);
        for layer in &h {
            assert!(layer.iter().all(|&b| b == 0.0 || b == 1.0));
        }
    }

    #[test]
    fn deep_minibatch_runs_and_is_deterministic() {
        let (params, rec, v, _, y) = setup(ObsKind::Real, true, 43);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = &params.base.dims;
        let bl = BaselineParams::init(dims.visible * dims.order + dims.styles, 8, &mut rng)
            .unwrap();
        let batch = [SubSeq { v: v.view(), y: y.view() }];
        let opts = NvilOptions::default();
        let mut st1 = SignalStats::new(0.9);
        let out1 =
            deep_elbo_and_grads(&params, &rec, Some(&bl), &mut st1, &batch, &[21], &opts)
                .unwrap();
        let mut st2 = SignalStats::new(0.9);
        let out2 =
            deep_elbo_and_grads(&params, &rec, Some(&bl), &mut st2, &batch, &[21], &opts)
                .unwrap();
        assert_eq!(out1.elbo_per_step, out2.elbo_per_step);
        assert!(out1.grads.get("layer2/u4/a").is_some() || out1.grads.get("layer2/u4/s0").is_some());
        for name in out1.grads.names() {
            let g = out1.grads.get(name).unwrap();
            assert!(g.iter().all(|x| x.is_finite()), "{name} has non-finite entries");
            assert_eq!(g, out2.grads.get(name).unwrap());
        }
    }

    #[test]
    fn generation_draws_layers_top_down() {
        // With the top-down weights huge and positive, layer 1 bits follow
        // layer 2 bits within the same frame, which only happens when the
        // upper layer is drawn first.
        let dims = two_layer_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut params = DeepParams::init(&dims, ObsKind::Real, false, &mut rng).unwrap();
        params.visit_mut(&mut |name, t| {
            if name.starts_with("layer2/w5") {
                t.fill(50.0);
            } else if name == "layer2/a" {
                t.fill(0.0);
            } else {
                t.mapv_inplace(|x| x * 0.0);
            }
        });
        // Upper bias 0 makes layer-2 bits fair coins; w5 = 50 drives every
        // layer-1 logit to +100 or 0 depending on the layer-2 draw.
        let schedule = StyleSchedule::constant(0, 2, 200).unwrap();
        let seeds = Array2::zeros((0, 2));
        let (_, h) = deep_generate(&params, seeds.view(), &schedule, &mut rng).unwrap();
        let mut coupled = 0;
        let mut total = 0;
        for t in 0..200 {
            let top_on = h[1].row(t).sum() > 0.0;
            for j in 0..2 {
                total += 1;
                if top_on && h[0][(t, j)] == 1.0 {
                    coupled += 1;
                }
            }
            if !top_on {
                // Logit 0 when the top layer is silent: fair coin below.
                continue;
            }
        }
        let top_frames: f64 = (0..200).filter(|&t| h[1].row(t).sum() > 0.0).count() as f64;
        assert!(top_frames > 50.0, "top layer should fire often");
        let rate = coupled as f64 / (2.0 * top_frames);
        assert!(rate > 0.999, "layer 1 must saturate when layer 2 fired first (rate {rate}, total {total})");
    }
}
