//! Variational training with score-function gradients and learned
//! baselines.
//!
//! The estimator samples hidden paths from the recognition network, scores
//! each frame's contribution to the bound,
//! `l_t = log p(v_t, h_t | windows) - log q(h_t | windows)`,
//! and uses `l_t` three ways: summed as the bound estimate, centered and
//! normalized as the weight on the recognition network's score gradients,
//! and as the regression target for the baselines. Generative gradients
//! are plain maximum-likelihood terms on the sampled paths and carry no
//! signal weighting.
//!
//! Signal post-processing per minibatch: subtract the baseline value,
//! update running mean/variance trackers from the batch, then center by
//! the running mean and divide by `max(1, sqrt(running var))`.
//!
//! Everything here works on layer stacks through [`GenView`] and
//! [`RecView`]; a single-layer model is the same code with no upper
//! layers, which is what keeps the deep and shallow paths numerically
//! identical where they overlap.

pub mod baseline;
pub mod rmsprop;
pub mod trainer;

pub use baseline::BaselineParams;
pub use rmsprop::{RmsProp, RmsPropConfig};
pub use trainer::{one_step_mae, train, MetricsRecord, TrainConfig, TrainOutcome, TrainState};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cond_weight::CondWeight;
use crate::dims::ObsKind;
use crate::error::{Error, Result};
use crate::madds;
use crate::model::{self, LOG_VAR_CLAMP};
use crate::params::{
    GenView, GenerativeParams, GradientSet, RecView, RecognitionParams,
};
use crate::recognition;
use crate::util::{bernoulli_log_mass, sigmoid, softmax, softplus, LagBuffer};

/// One minibatch element: a contiguous stretch of a sequence with its
/// aligned style rows.
#[derive(Clone, Copy)]
pub struct SubSeq<'a> {
    pub v: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

/// Running mean/variance of the centered learning signal.
#[derive(Debug, Clone)]
pub struct SignalStats {
    pub mean: f64,
    pub var: f64,
    /// Retention rate of the running averages.
    pub rate: f64,
}

impl SignalStats {
    pub fn new(rate: f64) -> Self {
        SignalStats { mean: 0.0, var: 1.0, rate }
    }

    pub fn update(&mut self, batch_mean: f64, batch_var: f64) {
        self.mean = self.rate * self.mean + (1.0 - self.rate) * batch_mean;
        self.var = self.rate * self.var + (1.0 - self.rate) * batch_var;
    }

    /// Center by the running mean and scale by `max(1, sqrt(var))`.
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.var.sqrt().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct NvilOptions {
    /// Subtract the learned baselines from the signal.
    pub use_baseline: bool,
    /// Center and scale signals by the running statistics.
    pub normalize_signals: bool,
}

impl Default for NvilOptions {
    fn default() -> Self {
        NvilOptions { use_baseline: true, normalize_signals: true }
    }
}

/// Per-frame bound contribution with all conditioning passed explicitly.
pub fn elbo_term(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    v_t: ArrayView1<f64>,
    h_t: ArrayView1<f64>,
    h_lags: ArrayView1<f64>,
    v_lags: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    let lp = model::step_log_joint(gen, v_t, h_t, h_lags, v_lags, y)?;
    let lq = model::step_log_q(rec, v_t, h_t, h_lags, v_lags, y)?;
    Ok(lp - lq)
}

/// Gradients of `xi^T W(y) eta` with respect to the three factors of a
/// factored conditional weight.
pub fn factored_weight_gradients(
    w: &CondWeight,
    xi: ArrayView1<f64>,
    eta: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (wa, wb, wc) = w
        .factors()
        .ok_or_else(|| Error::config("factored_weight_gradients on a dense weight"))?;
    if xi.len() != w.out_dim() || eta.len() != w.in_dim() || y.len() != w.styles() {
        return Err(Error::shape(format!(
            "factored gradient shapes: xi={}, eta={}, y={} vs weight {}x{} over {} styles",
            xi.len(),
            eta.len(),
            y.len(),
            w.out_dim(),
            w.in_dim(),
            w.styles()
        )));
    }
    let f = wa.ncols();
    let nnz = y.iter().filter(|&&v| v != 0.0).count();
    let gate = wb.dot(&y);
    let mixed_in = wc.dot(&eta);
    let back = wa.t().dot(&xi);
    madds::add((f * (nnz + eta.len() + xi.len())) as u64);

    // dWa = xi (gate .* (Wc eta))^T
    let gated_in = &gate * &mixed_in;
    let mut da = Array2::zeros(wa.dim());
    for (i, &xv) in xi.iter().enumerate() {
        for (k, &gv) in gated_in.iter().enumerate() {
            da[(i, k)] = xv * gv;
        }
    }
    // dWb = ((Wa^T xi) .* (Wc eta)) y^T
    let mixed_back = &back * &mixed_in;
    let mut db = Array2::zeros(wb.dim());
    for (k, &mv) in mixed_back.iter().enumerate() {
        for (s, &ys) in y.iter().enumerate() {
            if ys != 0.0 {
                db[(k, s)] = mv * ys;
            }
        }
    }
    // dWc = diag(gate) (Wa^T xi) eta^T
    let gated_back = &gate * &back;
    let mut dc = Array2::zeros(wc.dim());
    for (k, &gv) in gated_back.iter().enumerate() {
        for (m, &ev) in eta.iter().enumerate() {
            dc[(k, m)] = gv * ev;
        }
    }
    madds::add((3 * f + f * (xi.len() + nnz + eta.len())) as u64);
    Ok((da, db, dc))
}

/// Accumulate `scale * d(xi^T W(y) eta)/dW` for either parameterization.
fn accum_cond(
    gs: &mut GradientSet,
    name: &str,
    w: &CondWeight,
    xi: ArrayView1<f64>,
    eta: ArrayView1<f64>,
    y: ArrayView1<f64>,
    scale: f64,
) -> Result<()> {
    match w {
        CondWeight::Dense { .. } => {
            let mut active = 0u64;
            for (s, &ys) in y.iter().enumerate() {
                if ys != 0.0 {
                    gs.add_outer(&format!("{name}/s{s}"), xi, eta, scale * ys);
                    active += 1;
                }
            }
            madds::add(active * (xi.len() * eta.len()) as u64);
        }
        CondWeight::Factored { .. } => {
            let (da, db, dc) = factored_weight_gradients(w, xi, eta, y)?;
            gs.add_scaled(&format!("{name}/a"), da.view(), scale);
            gs.add_scaled(&format!("{name}/b"), db.view(), scale);
            gs.add_scaled(&format!("{name}/c"), dc.view(), scale);
        }
    }
    Ok(())
}

// Layer wiring accessors. Layer index `l` is zero-based; display names use
// the one-based convention where the bottom layer is `model`/`recognition`
// and upper layers are `layer2`, `layer3`, ...
impl<'a> GenView<'a> {
    fn own_lag(&self, l: usize) -> &'a CondWeight {
        if l == 0 {
            &self.base.w1
        } else {
            &self.upper[l - 1].w7
        }
    }

    fn below_lag(&self, l: usize) -> &'a CondWeight {
        if l == 0 {
            &self.base.w3
        } else {
            &self.upper[l - 1].w6
        }
    }

    fn bias(&self, l: usize) -> &'a Array2<f64> {
        if l == 0 {
            &self.base.b
        } else {
            &self.upper[l - 1].a
        }
    }

    /// Weight carrying layer `l + 1`'s current state into layer `l`'s
    /// logits, when a layer above exists.
    fn from_above(&self, l: usize) -> Option<&'a CondWeight> {
        self.upper.get(l).map(|u| &u.w5)
    }

    fn own_name(&self, l: usize) -> String {
        if l == 0 {
            "model/w1".into()
        } else {
            format!("layer{}/w7", l + 1)
        }
    }

    fn below_name(&self, l: usize) -> String {
        if l == 0 {
            "model/w3".into()
        } else {
            format!("layer{}/w6", l + 1)
        }
    }

    fn bias_name(&self, l: usize) -> String {
        if l == 0 {
            "model/b".into()
        } else {
            format!("layer{}/a", l + 1)
        }
    }

    fn above_name(&self, l: usize) -> String {
        format!("layer{}/w5", l + 2)
    }

    /// Hidden logits of layer `l` at one frame.
    pub(crate) fn layer_logits(
        &self,
        l: usize,
        own_win: ArrayView1<f64>,
        below_win: ArrayView1<f64>,
        h_above: Option<ArrayView1<f64>>,
        y: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let mut z = self.own_lag(l).apply(y, own_win)?;
        z += &self.below_lag(l).apply(y, below_win)?;
        z += &crate::params::style_bias_apply(self.bias(l), y);
        if let Some(h_up) = h_above {
            let w5 = self.from_above(l).expect("layer above exists when h_above given");
            z += &w5.apply(y, h_up)?;
        }
        Ok(z)
    }
}

impl<'a> RecView<'a> {
    fn own_lag(&self, l: usize) -> &'a CondWeight {
        if l == 0 {
            &self.base.u1
        } else {
            &self.upper[l - 1].u4
        }
    }

    fn below_now(&self, l: usize) -> &'a CondWeight {
        if l == 0 {
            &self.base.u2
        } else {
            &self.upper[l - 1].u5
        }
    }

    fn below_lag(&self, l: usize) -> &'a CondWeight {
        if l == 0 {
            &self.base.u3
        } else {
            &self.upper[l - 1].u6
        }
    }

    fn bias(&self, l: usize) -> &'a Array2<f64> {
        if l == 0 {
            &self.base.d
        } else {
            &self.upper[l - 1].e
        }
    }

    fn own_name(&self, l: usize) -> String {
        if l == 0 {
            "recognition/u1".into()
        } else {
            format!("layer{}/u4", l + 1)
        }
    }

    fn now_name(&self, l: usize) -> String {
        if l == 0 {
            "recognition/u2".into()
        } else {
            format!("layer{}/u5", l + 1)
        }
    }

    fn below_name(&self, l: usize) -> String {
        if l == 0 {
            "recognition/u3".into()
        } else {
            format!("layer{}/u6", l + 1)
        }
    }

    fn bias_name(&self, l: usize) -> String {
        if l == 0 {
            "recognition/d".into()
        } else {
            format!("layer{}/e", l + 1)
        }
    }

    pub(crate) fn layer_logits(
        &self,
        l: usize,
        own_win: ArrayView1<f64>,
        below_now: ArrayView1<f64>,
        below_win: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let mut z = self.own_lag(l).apply(y, own_win)?;
        z += &self.below_now(l).apply(y, below_now)?;
        z += &self.below_lag(l).apply(y, below_win)?;
        z += &crate::params::style_bias_apply(self.bias(l), y);
        Ok(z)
    }
}

/// Per-element forward cache: sampled (or given) hidden paths, logits,
/// emission preactivations, lag-window snapshots, and signals.
pub(crate) struct ElementPass {
    pub h: Vec<Array2<f64>>,
    pub gen_z: Vec<Array2<f64>>,
    pub rec_z: Vec<Array2<f64>>,
    pub win_h: Vec<Array2<f64>>,
    pub win_v: Array2<f64>,
    pub em_pre: Array2<f64>,
    pub em_pre_var: Option<Array2<f64>>,
    /// Per-frame `l_t`; only the generative part when no recognition view
    /// was supplied.
    pub raw: Vec<f64>,
    pub base_val: Vec<f64>,
    pub base_act: Vec<Array1<f64>>,
    pub base_input: Vec<Array1<f64>>,
}

pub(crate) enum HiddenSource<'a> {
    Sample(ChaCha8Rng),
    Given(&'a [ArrayView2<'a, f64>]),
}

/// One forward sweep over a (sub)sequence: recognition bottom-up sampling
/// (or teacher forcing), generative logits top-down, emission scoring.
/// Either view may be absent; `raw` then carries only the present side.
pub(crate) fn stack_forward(
    gen: Option<GenView>,
    rec: Option<RecView>,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
    baseline: Option<&BaselineParams>,
    source: HiddenSource,
) -> Result<ElementPass> {
    let dims = match (&gen, &rec) {
        (Some(g), _) => &g.base.dims,
        (None, Some(r)) => &r.base.dims,
        (None, None) => return Err(Error::config("stack_forward needs at least one view")),
    };
    let (m, n, s) = (dims.visible, dims.order, dims.styles);
    let layers = &dims.layers;
    let l_count = layers.len();
    if let Some(g) = &gen {
        if g.upper.len() + 1 != l_count {
            return Err(Error::shape(format!(
                "generative stack has {} layers but dims lists {}",
                g.upper.len() + 1,
                l_count
            )));
        }
    }
    if let Some(r) = &rec {
        if r.upper.len() + 1 != l_count {
            return Err(Error::shape(format!(
                "recognition stack has {} layers but dims lists {}",
                r.upper.len() + 1,
                l_count
            )));
        }
    }
    if v.ncols() != m {
        return Err(Error::shape(format!(
            "visible frames have {} dims, expected {m}",
            v.ncols()
        )));
    }
    if y.ncols() != s || y.nrows() != v.nrows() {
        return Err(Error::shape(format!(
            "style schedule is {}x{}, expected {}x{s}",
            y.nrows(),
            y.ncols(),
            v.nrows()
        )));
    }
    let t_len = v.nrows();
    let mut source = source;
    if let HiddenSource::Given(paths) = &source {
        if paths.len() != l_count {
            return Err(Error::shape(format!(
                "{} hidden paths given for {} layers",
                paths.len(),
                l_count
            )));
        }
        for (l, p) in paths.iter().enumerate() {
            if p.dim() != (t_len, layers[l]) {
                return Err(Error::shape(format!(
                    "hidden path for layer {} is {:?}, expected ({t_len}, {})",
                    l + 1,
                    p.dim(),
                    layers[l]
                )));
            }
        }
    }

    let mut h: Vec<Array2<f64>> = layers.iter().map(|&j| Array2::zeros((t_len, j))).collect();
    let mut gen_z: Vec<Array2<f64>> =
        layers.iter().map(|&j| Array2::zeros((t_len, j))).collect();
    let mut rec_z: Vec<Array2<f64>> =
        layers.iter().map(|&j| Array2::zeros((t_len, j))).collect();
    let mut win_h: Vec<Array2<f64>> =
        layers.iter().map(|&j| Array2::zeros((t_len, j * n))).collect();
    let mut win_v = Array2::zeros((t_len, m * n));
    let mut em_pre = Array2::zeros((t_len, m));
    let mut em_pre_var = match gen.as_ref().map(|g| g.base.obs) {
        Some(ObsKind::Real) => Some(Array2::zeros((t_len, m))),
        _ => None,
    };
    let mut raw = Vec::with_capacity(t_len);
    let mut base_val = Vec::new();
    let mut base_act = Vec::new();
    let mut base_input = Vec::new();

    let mut h_bufs: Vec<LagBuffer> = layers.iter().map(|&j| LagBuffer::new(j, n)).collect();
    let mut v_buf = LagBuffer::new(m, n);

    for t in 0..t_len {
        let y_t = y.row(t);
        for (l, buf) in h_bufs.iter().enumerate() {
            win_h[l].row_mut(t).assign(&buf.window());
        }
        win_v.row_mut(t).assign(&v_buf.window());

        let mut log_q_t = 0.0;
        // Recognition sweep, bottom-up: each layer conditions on the
        // just-resolved state of the layer below.
        for l in 0..l_count {
            match &mut source {
                HiddenSource::Given(paths) => {
                    h[l].row_mut(t).assign(&paths[l].row(t));
                    for &bit in h[l].row(t).iter() {
                        if bit != 0.0 && bit != 1.0 {
                            return Err(Error::numeric(format!(
                                "hidden state {bit} is not binary"
                            )));
                        }
                    }
                    if let Some(rv) = &rec {
                        let below_now =
                            if l == 0 { v.row(t) } else { h[l - 1].row(t) };
                        let below_win = if l == 0 {
                            win_v.row(t)
                        } else {
                            win_h[l - 1].row(t)
                        };
                        let z = rv.layer_logits(
                            l,
                            win_h[l].row(t),
                            below_now,
                            below_win,
                            y_t,
                        )?;
                        log_q_t += bernoulli_log_mass(z.view(), h[l].row(t));
                        rec_z[l].row_mut(t).assign(&z);
                    }
                }
                HiddenSource::Sample(rng) => {
                    let rv = rec
                        .as_ref()
                        .ok_or_else(|| Error::config("sampling requires a recognition view"))?;
                    let below_now = if l == 0 { v.row(t) } else { h[l - 1].row(t) };
                    let below_win =
                        if l == 0 { win_v.row(t) } else { win_h[l - 1].row(t) };
                    let z =
                        rv.layer_logits(l, win_h[l].row(t), below_now, below_win, y_t)?;
                    for (jj, &zj) in z.iter().enumerate() {
                        let bit = if rng.random::<f64>() < sigmoid(zj) { 1.0 } else { 0.0 };
                        h[l][(t, jj)] = bit;
                        log_q_t += bit * zj - softplus(zj);
                    }
                    rec_z[l].row_mut(t).assign(&z);
                }
            }
        }

        // Generative scoring: every layer's logits read the now-known
        // state of the layer above.
        let mut log_p_t = 0.0;
        if let Some(g) = &gen {
            for l in 0..l_count {
                let below_win = if l == 0 { win_v.row(t) } else { win_h[l - 1].row(t) };
                let h_above = if l + 1 < l_count { Some(h[l + 1].row(t)) } else { None };
                let z = g.layer_logits(l, win_h[l].row(t), below_win, h_above, y_t)?;
                log_p_t += bernoulli_log_mass(z.view(), h[l].row(t));
                gen_z[l].row_mut(t).assign(&z);
            }
            let em = model::emission_preacts(g.base, h[0].row(t), win_v.row(t), y_t)?;
            em_pre.row_mut(t).assign(&em.0);
            if let (Some(store), Some(pre_var)) = (&mut em_pre_var, &em.1) {
                store.row_mut(t).assign(pre_var);
            }
            let dist = model::emission_from_preacts(g.base.obs, &em);
            log_p_t += dist.log_density(v.row(t))?;
        }
        raw.push(log_p_t - log_q_t);

        if let Some(bl) = baseline {
            let mut x = Array1::zeros(m * n + s);
            x.slice_mut(ndarray::s![..m * n]).assign(&win_v.row(t));
            x.slice_mut(ndarray::s![m * n..]).assign(&y_t);
            let (val, act) = bl.eval_cached(x.view())?;
            base_val.push(val);
            base_act.push(act);
            base_input.push(x);
        }

        for (l, buf) in h_bufs.iter_mut().enumerate() {
            buf.push(h[l].row(t));
        }
        v_buf.push(v.row(t));
    }

    Ok(ElementPass {
        h,
        gen_z,
        rec_z,
        win_h,
        win_v,
        em_pre,
        em_pre_var,
        raw,
        base_val,
        base_act,
        base_input,
    })
}

/// Observation-gradient preactivation residuals for one frame:
/// `d log p(v) / d pre` for the primary head, and for the log-variance
/// head when present (zero where the clamp is active).
fn emission_residuals(
    obs: ObsKind,
    v_t: ArrayView1<f64>,
    pre: ArrayView1<f64>,
    pre_var: Option<ArrayView1<f64>>,
) -> (Array1<f64>, Option<Array1<f64>>) {
    match obs {
        ObsKind::Real => {
            let pv = pre_var.expect("real emission caches a log-variance row");
            let mut xi_mean = Array1::zeros(v_t.len());
            let mut xi_var = Array1::zeros(v_t.len());
            for i in 0..v_t.len() {
                let s = pv[i].clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP);
                let inv_var = (-s).exp();
                let d = v_t[i] - pre[i];
                xi_mean[i] = d * inv_var;
                xi_var[i] = if pv[i].abs() <= LOG_VAR_CLAMP {
                    0.5 * (d * d * inv_var - 1.0)
                } else {
                    0.0
                };
            }
            (xi_mean, Some(xi_var))
        }
        ObsKind::Binary => {
            let xi = Array1::from_shape_fn(v_t.len(), |i| v_t[i] - sigmoid(pre[i]));
            (xi, None)
        }
        ObsKind::Count => {
            let s = softmax(pre);
            let total: f64 = v_t.sum();
            let xi = Array1::from_shape_fn(v_t.len(), |i| v_t[i] - total * s[i]);
            (xi, None)
        }
    }
}

/// Accumulate one frame's generative gradients (all layers plus the
/// emission) from a forward cache. `scale` multiplies everything.
pub(crate) fn accum_gen_step(
    gen: GenView,
    gs: &mut GradientSet,
    pass: &ElementPass,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
    t: usize,
    scale: f64,
) -> Result<()> {
    let l_count = pass.h.len();
    let y_t = y.row(t);
    for l in 0..l_count {
        let z = pass.gen_z[l].row(t);
        let xi = Array1::from_shape_fn(z.len(), |j| pass.h[l][(t, j)] - sigmoid(z[j]));
        let own_win = pass.win_h[l].row(t);
        let below_win = if l == 0 { pass.win_v.row(t) } else { pass.win_h[l - 1].row(t) };
        accum_cond(gs, &gen.own_name(l), gen.own_lag(l), xi.view(), own_win, y_t, scale)?;
        accum_cond(gs, &gen.below_name(l), gen.below_lag(l), xi.view(), below_win, y_t, scale)?;
        gs.add_outer(&gen.bias_name(l), xi.view(), y_t, scale);
        if l + 1 < l_count {
            let w5 = gen.from_above(l).expect("upper layer exists");
            accum_cond(gs, &gen.above_name(l), w5, xi.view(), pass.h[l + 1].row(t), y_t, scale)?;
        }
    }

    let (xi_mean, xi_var) = emission_residuals(
        gen.base.obs,
        v.row(t),
        pass.em_pre.row(t),
        pass.em_pre_var.as_ref().map(|p| p.row(t)),
    );
    let h0 = pass.h[0].row(t);
    let v_win = pass.win_v.row(t);
    accum_cond(gs, "model/w2", &gen.base.head.w2, xi_mean.view(), h0, y_t, scale)?;
    accum_cond(gs, "model/w4", &gen.base.head.w4, xi_mean.view(), v_win, y_t, scale)?;
    gs.add_outer("model/c", xi_mean.view(), y_t, scale);
    if let Some(xv) = xi_var {
        let vh = gen
            .base
            .var_head
            .as_ref()
            .ok_or_else(|| Error::config("real observation model lacks a variance head"))?;
        accum_cond(gs, "model/w2_prime", &vh.w2, xv.view(), h0, y_t, scale)?;
        accum_cond(gs, "model/w4_prime", &vh.w4, xv.view(), v_win, y_t, scale)?;
        gs.add_outer("model/c_prime", xv.view(), y_t, scale);
    }
    Ok(())
}

/// Accumulate one frame's recognition score gradients weighted by
/// `weight` (the centered, normalized learning signal).
pub(crate) fn accum_rec_step(
    rec: RecView,
    gs: &mut GradientSet,
    pass: &ElementPass,
    v: ArrayView2<f64>,
    y: ArrayView2<f64>,
    t: usize,
    weight: f64,
) -> Result<()> {
    let y_t = y.row(t);
    for l in 0..pass.h.len() {
        let z = pass.rec_z[l].row(t);
        let xi = Array1::from_shape_fn(z.len(), |j| pass.h[l][(t, j)] - sigmoid(z[j]));
        let own_win = pass.win_h[l].row(t);
        let below_now = if l == 0 { v.row(t) } else { pass.h[l - 1].row(t) };
        let below_win = if l == 0 { pass.win_v.row(t) } else { pass.win_h[l - 1].row(t) };
        accum_cond(gs, &rec.own_name(l), rec.own_lag(l), xi.view(), own_win, y_t, weight)?;
        accum_cond(gs, &rec.now_name(l), rec.below_now(l), xi.view(), below_now, y_t, weight)?;
        accum_cond(gs, &rec.below_name(l), rec.below_lag(l), xi.view(), below_win, y_t, weight)?;
        gs.add_outer(&rec.bias_name(l), xi.view(), y_t, weight);
    }
    Ok(())
}

/// Gradient of `log p(V, H | Y)` with respect to the generative
/// parameters, teacher-forced on a given hidden path.
pub fn model_gradients(
    gen: &GenerativeParams,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<GradientSet> {
    let paths = [h];
    let pass =
        stack_forward(Some(gen.as_view()), None, v, y, None, HiddenSource::Given(&paths))?;
    let mut gs = GradientSet::new();
    for t in 0..v.nrows() {
        accum_gen_step(gen.as_view(), &mut gs, &pass, v, y, t, 1.0)?;
    }
    Ok(gs)
}

/// Gradient of `sum_t weights[t] * log q(h_t | ...)` with respect to the
/// recognition parameters, teacher-forced on a given hidden path. Pass
/// all-ones weights for the plain path log-probability gradient.
pub fn recognition_gradients(
    rec: &RecognitionParams,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
    y: ArrayView2<f64>,
    weights: &[f64],
) -> Result<GradientSet> {
    if weights.len() != v.nrows() {
        return Err(Error::shape(format!(
            "{} weights for {} frames",
            weights.len(),
            v.nrows()
        )));
    }
    let dims = &rec.dims;
    let (j, m, n) = (dims.hidden(), dims.visible, dims.order);
    if h.ncols() != j || v.ncols() != m {
        return Err(Error::shape(format!(
            "teacher-forced shapes: h has {} cols (expected {j}), v has {} (expected {m})",
            h.ncols(),
            v.ncols()
        )));
    }
    let mut gs = GradientSet::new();
    let mut h_buf = LagBuffer::new(j, n);
    let mut v_buf = LagBuffer::new(m, n);
    for t in 0..v.nrows() {
        let z = recognition::posterior_logits(rec, h_buf.window(), v.row(t), v_buf.window(), y.row(t))?;
        let xi = Array1::from_shape_fn(j, |jj| h[(t, jj)] - sigmoid(z[jj]));
        let w = weights[t];
        accum_cond(&mut gs, "recognition/u1", &rec.u1, xi.view(), h_buf.window(), y.row(t), w)?;
        accum_cond(&mut gs, "recognition/u2", &rec.u2, xi.view(), v.row(t), y.row(t), w)?;
        accum_cond(&mut gs, "recognition/u3", &rec.u3, xi.view(), v_buf.window(), y.row(t), w)?;
        gs.add_outer("recognition/d", xi.view(), y.row(t), w);
        h_buf.push(h.row(t));
        v_buf.push(v.row(t));
    }
    Ok(gs)
}

/// Outcome of one minibatch gradient estimate.
#[derive(Debug)]
pub struct MinibatchOutcome {
    /// Gradients averaged over the batch elements, keyed by tensor name.
    pub grads: GradientSet,
    /// Mean per-frame bound estimate.
    pub elbo_per_step: f64,
    pub steps: usize,
    /// Mean and population variance of the centered signals in this batch.
    pub batch_signal_mean: f64,
    pub batch_signal_var: f64,
    /// Per-element sum of the raw per-step signals (the bound estimate).
    pub element_raw: Vec<f64>,
    /// Per-element per-step weights as applied to the score terms, after
    /// baseline subtraction and normalization.
    pub step_weights: Vec<Vec<f64>>,
    /// Divisor applied during normalization, `max(1, sqrt(running var))`;
    /// 1 when normalization is off.
    pub signal_scale: f64,
}

/// One NVIL gradient estimate over stacked views. Each batch element gets
/// its own counter-based generator stream (`seeds[i]`), so results do not
/// depend on thread scheduling.
pub fn minibatch_views(
    gen: GenView,
    rec: RecView,
    bl: Option<&BaselineParams>,
    stats: &mut SignalStats,
    batch: &[SubSeq],
    seeds: &[u64],
    opts: &NvilOptions,
) -> Result<MinibatchOutcome> {
    if batch.is_empty() {
        return Err(Error::config("minibatch is empty"));
    }
    if seeds.len() != batch.len() {
        return Err(Error::config(format!(
            "{} seeds for {} batch elements",
            seeds.len(),
            batch.len()
        )));
    }
    let baseline = if opts.use_baseline { bl } else { None };

    let passes: Vec<ElementPass> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(el, &seed)| {
            let rng = ChaCha8Rng::seed_from_u64(seed);
            stack_forward(Some(gen), Some(rec), el.v, el.y, baseline, HiddenSource::Sample(rng))
        })
        .collect::<Result<Vec<_>>>()?;

    // Center by the baselines, then fold this batch into the running
    // statistics before normalizing.
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(passes.len());
    let mut all = Vec::new();
    for pass in &passes {
        let row: Vec<f64> = pass
            .raw
            .iter()
            .enumerate()
            .map(|(t, &l)| l - pass.base_val.get(t).copied().unwrap_or(0.0))
            .collect();
        all.extend_from_slice(&row);
        centered.push(row);
    }
    let count = all.len() as f64;
    let batch_mean = all.iter().sum::<f64>() / count;
    let batch_var = all.iter().map(|x| (x - batch_mean).powi(2)).sum::<f64>() / count;
    stats.update(batch_mean, batch_var);

    let weights: Vec<Vec<f64>> = centered
        .iter()
        .map(|row| {
            row.iter()
                .map(|&x| if opts.normalize_signals { stats.normalize(x) } else { x })
                .collect()
        })
        .collect();

    let partials: Vec<GradientSet> = passes
        .par_iter()
        .zip(batch.par_iter())
        .zip(weights.par_iter())
        .map(|((pass, el), w_row)| -> Result<GradientSet> {
            let mut gs = GradientSet::new();
            for t in 0..el.v.nrows() {
                accum_gen_step(gen, &mut gs, pass, el.v, el.y, t, 1.0)?;
                accum_rec_step(rec, &mut gs, pass, el.v, el.y, t, w_row[t])?;
                if baseline.is_some() {
                    let blp = baseline.unwrap();
                    blp.accumulate_gradients(
                        &mut gs,
                        pass.base_input[t].view(),
                        pass.base_act[t].view(),
                        w_row[t],
                    );
                }
            }
            Ok(gs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = GradientSet::new();
    for part in &partials {
        grads.merge(part);
    }
    grads.scale(1.0 / batch.len() as f64);

    let element_raw: Vec<f64> = passes.iter().map(|p| p.raw.iter().sum::<f64>()).collect();
    let total_raw: f64 = element_raw.iter().sum();
    let steps: usize = passes.iter().map(|p| p.raw.len()).sum();
    let signal_scale =
        if opts.normalize_signals { stats.var.sqrt().max(1.0) } else { 1.0 };
    Ok(MinibatchOutcome {
        grads,
        elbo_per_step: total_raw / steps as f64,
        steps,
        batch_signal_mean: batch_mean,
        batch_signal_var: batch_var,
        element_raw,
        step_weights: weights,
        signal_scale,
    })
}

/// One NVIL gradient estimate for a single-layer model.
pub fn nvil_minibatch(
    gen: &GenerativeParams,
    rec: &RecognitionParams,
    bl: Option<&BaselineParams>,
    stats: &mut SignalStats,
    batch: &[SubSeq],
    seeds: &[u64],
    opts: &NvilOptions,
) -> Result<MinibatchOutcome> {
    minibatch_views(gen.as_view(), rec.as_view(), bl, stats, batch, seeds, opts)
}
