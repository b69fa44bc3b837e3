//! Parameter containers, initialization, and the named-tensor registry.
//!
//! Every learnable tensor in the system is an `Array2<f64>` reachable
//! through [`TensorMap`], keyed by a stable slash-separated name
//! (`model/w1/a`, `recognition/d`, `layer2/w6/c`, ...). The registry is
//! what makes checkpointing, RMSprop state, gradient bookkeeping, and
//! finite-difference probing uniform: they all operate on `(name, tensor)`
//! pairs and never need to know the model structure.
//!
//! Naming scheme:
//! - bottom generative layer: `model/{w1,w3}/<part>`, `model/b`
//! - emission head: `model/{w2,w4}/<part>`, `model/c`, plus `_prime`
//!   variants for the Gaussian log-variance head
//! - upper generative layer l (2-based): `layer{l}/{w5,w6,w7}/<part>`,
//!   `layer{l}/a`
//! - bottom recognition layer: `recognition/{u1,u2,u3}/<part>`,
//!   `recognition/d`
//! - upper recognition layer l: `layer{l}/{u4,u5,u6}/<part>`, `layer{l}/e`
//!
//! `<part>` is `s0..s{S-1}` for dense conditional weights and `a`/`b`/`c`
//! for factored ones.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cond_weight::CondWeight;
use crate::dims::{Dims, ObsKind};
use crate::error::{Error, Result};
use crate::madds;

/// Standard deviation for dense weight initialization.
pub const DENSE_INIT_STD: f64 = 1e-3;
/// Standard deviation for factored weight initialization.
pub const FACTORED_INIT_STD: f64 = 1e-2;

/// Apply a per-style bias matrix (`rows x S`) to a style vector, skipping
/// inactive styles. Records the multiply-adds performed.
pub fn style_bias_apply(b: &Array2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(b.nrows());
    let mut active = 0u64;
    for (s, &ys) in y.iter().enumerate() {
        if ys != 0.0 {
            out.scaled_add(ys, &b.column(s));
            active += 1;
        }
    }
    madds::add(active * b.nrows() as u64);
    out
}

fn randn(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn init_cond(
    rng: &mut impl Rng,
    out: usize,
    input: usize,
    styles: usize,
    factors: Option<usize>,
) -> CondWeight {
    match factors {
        None => CondWeight::Dense {
            slices: (0..styles).map(|_| randn(rng, out, input, DENSE_INIT_STD)).collect(),
        },
        Some(f) => CondWeight::Factored {
            wa: randn(rng, out, f, FACTORED_INIT_STD),
            wb: randn(rng, f, styles, FACTORED_INIT_STD),
            wc: randn(rng, f, input, FACTORED_INIT_STD),
        },
    }
}

/// Uniform access to every named tensor of a parameter container.
pub trait TensorMap {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>));

    fn tensor_names(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.dim())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Add `delta` to one entry; returns false if no tensor has that name.
    fn perturb(&mut self, name: &str, index: (usize, usize), delta: f64) -> bool {
        let mut found = false;
        self.visit_mut(&mut |n, t| {
            if n == name {
                t[index] += delta;
                found = true;
            }
        });
        found
    }

    /// Copy tensors out of `tensors` by name; errors on any name or shape
    /// that does not line up with this container.
    fn load_tensors(&mut self, tensors: &BTreeMap<String, Array2<f64>>) -> Result<()> {
        let mut missing = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        let mut shape_err: Option<Error> = None;
        self.visit_mut(&mut |name, t| {
            if let Some(src) = tensors.get(name) {
                if src.dim() != t.dim() {
                    if shape_err.is_none() {
                        shape_err = Some(Error::shape(format!(
                            "tensor {name} has shape {:?}, expected {:?}",
                            src.dim(),
                            t.dim()
                        )));
                    }
                } else {
                    t.assign(src);
                    used.insert(name.to_string());
                }
            } else {
                missing.push(name.to_string());
            }
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        if !missing.is_empty() {
            return Err(Error::format(
                "<tensors>",
                format!("missing tensors: {}", missing.join(", ")),
            ));
        }
        Ok(())
    }

    fn to_tensor_map(&self) -> BTreeMap<String, Array2<f64>> {
        let mut out = BTreeMap::new();
        self.visit(&mut |name, t| {
            out.insert(name.to_string(), t.clone());
        });
        out
    }
}

fn visit_cond(
    prefix: &str,
    w: &CondWeight,
    f: &mut dyn FnMut(&str, &Array2<f64>),
) {
    w.visit(|suffix, t| f(&format!("{prefix}/{suffix}"), t));
}

fn visit_cond_mut(
    prefix: &str,
    w: &mut CondWeight,
    f: &mut dyn FnMut(&str, &mut Array2<f64>),
) {
    w.visit_mut(|suffix, t| f(&format!("{prefix}/{suffix}"), t));
}

/// One emission head: mean map for real data, logits for binary data, or
/// unnormalized log-weights for count data.
#[derive(Debug, Clone)]
pub struct EmissionHead {
    /// Hidden-to-visible map, one dense slice per style (never factored:
    /// it carries the per-style output structure directly).
    pub w2: CondWeight,
    /// Visible-lag feedback into the emission.
    pub w4: CondWeight,
    /// Per-style emission bias, `M x S`.
    pub c: Array2<f64>,
}

impl EmissionHead {
    fn init(rng: &mut impl Rng, dims: &Dims, factors: Option<usize>) -> Self {
        let (j, m, s, n) = (dims.hidden(), dims.visible, dims.styles, dims.order);
        EmissionHead {
            w2: init_cond(rng, m, j, s, None),
            w4: init_cond(rng, m, m * n, s, factors),
            c: Array2::zeros((m, s)),
        }
    }
}

/// Generative parameters for a single hidden layer plus the emission.
///
/// `dims.layers` may list more than one layer; this struct only owns the
/// bottom layer and the emission, while [`DeepParams`] adds the rest.
#[derive(Debug, Clone)]
pub struct GenerativeParams {
    pub dims: Dims,
    pub obs: ObsKind,
    /// Hidden-lag transition, `J x J*n`.
    pub w1: CondWeight,
    /// Visible-lag input to the hidden logits, `J x M*n`.
    pub w3: CondWeight,
    /// Per-style hidden bias, `J x S`.
    pub b: Array2<f64>,
    /// Mean / logit head.
    pub head: EmissionHead,
    /// Log-variance head, present only for real observations.
    pub var_head: Option<EmissionHead>,
}

impl GenerativeParams {
    pub fn init(dims: &Dims, obs: ObsKind, factored: bool, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let factors = factored.then_some(dims.factors);
        let (j, m, s, n) = (dims.hidden(), dims.visible, dims.styles, dims.order);
        Ok(GenerativeParams {
            dims: dims.clone(),
            obs,
            w1: init_cond(rng, j, j * n, s, factors),
            w3: init_cond(rng, j, m * n, s, factors),
            b: Array2::zeros((j, s)),
            head: EmissionHead::init(rng, dims, factors),
            var_head: (obs == ObsKind::Real).then(|| EmissionHead::init(rng, dims, factors)),
        })
    }

    pub fn is_factored(&self) -> bool {
        self.w1.is_factored()
    }

    /// Zero the visible-feedback paths (`w3`, `w4`, primed `w4`), leaving a
    /// model whose hidden chain alone carries the dynamics.
    pub fn zero_visible_paths(&mut self) {
        for w in [&mut self.w3, &mut self.head.w4] {
            w.visit_mut(|_, t| t.fill(0.0));
        }
        if let Some(vh) = &mut self.var_head {
            vh.w4.visit_mut(|_, t| t.fill(0.0));
        }
    }
}

impl TensorMap for GenerativeParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        visit_cond("model/w1", &self.w1, f);
        visit_cond("model/w3", &self.w3, f);
        f("model/b", &self.b);
        visit_cond("model/w2", &self.head.w2, f);
        visit_cond("model/w4", &self.head.w4, f);
        f("model/c", &self.head.c);
        if let Some(vh) = &self.var_head {
            visit_cond("model/w2_prime", &vh.w2, f);
            visit_cond("model/w4_prime", &vh.w4, f);
            f("model/c_prime", &vh.c);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        visit_cond_mut("model/w1", &mut self.w1, f);
        visit_cond_mut("model/w3", &mut self.w3, f);
        f("model/b", &mut self.b);
        visit_cond_mut("model/w2", &mut self.head.w2, f);
        visit_cond_mut("model/w4", &mut self.head.w4, f);
        f("model/c", &mut self.head.c);
        if let Some(vh) = &mut self.var_head {
            visit_cond_mut("model/w2_prime", &mut vh.w2, f);
            visit_cond_mut("model/w4_prime", &mut vh.w4, f);
            f("model/c_prime", &mut vh.c);
        }
    }
}

/// Recognition parameters for the bottom hidden layer.
#[derive(Debug, Clone)]
pub struct RecognitionParams {
    pub dims: Dims,
    /// Hidden-lag input, `J x J*n`.
    pub u1: CondWeight,
    /// Current-frame visible input, `J x M`.
    pub u2: CondWeight,
    /// Visible-lag input, `J x M*n`.
    pub u3: CondWeight,
    /// Per-style bias, `J x S`.
    pub d: Array2<f64>,
}

impl RecognitionParams {
    pub fn init(dims: &Dims, factored: bool, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let factors = factored.then_some(dims.factors);
        let (j, m, s, n) = (dims.hidden(), dims.visible, dims.styles, dims.order);
        Ok(RecognitionParams {
            dims: dims.clone(),
            u1: init_cond(rng, j, j * n, s, factors),
            u2: init_cond(rng, j, m, s, factors),
            u3: init_cond(rng, j, m * n, s, factors),
            d: Array2::zeros((j, s)),
        })
    }
}

impl TensorMap for RecognitionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        visit_cond("recognition/u1", &self.u1, f);
        visit_cond("recognition/u2", &self.u2, f);
        visit_cond("recognition/u3", &self.u3, f);
        f("recognition/d", &self.d);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        visit_cond_mut("recognition/u1", &mut self.u1, f);
        visit_cond_mut("recognition/u2", &mut self.u2, f);
        visit_cond_mut("recognition/u3", &mut self.u3, f);
        f("recognition/d", &mut self.d);
    }
}

/// Generative wiring of one hidden layer above the bottom one.
///
/// Layer widths: `own` is this layer, `below` is the layer underneath it.
#[derive(Debug, Clone)]
pub struct UpperGenLayer {
    /// Current own state into the layer below's logits, `below x own`.
    pub w5: CondWeight,
    /// Below-layer lags into own logits, `own x below*n`.
    pub w6: CondWeight,
    /// Own lags into own logits, `own x own*n`.
    pub w7: CondWeight,
    /// Per-style bias, `own x S`.
    pub a: Array2<f64>,
}

impl UpperGenLayer {
    fn init(
        rng: &mut impl Rng,
        own: usize,
        below: usize,
        dims: &Dims,
        factors: Option<usize>,
    ) -> Self {
        let (s, n) = (dims.styles, dims.order);
        UpperGenLayer {
            w5: init_cond(rng, below, own, s, factors),
            w6: init_cond(rng, own, below * n, s, factors),
            w7: init_cond(rng, own, own * n, s, factors),
            a: Array2::zeros((own, s)),
        }
    }
}

/// Recognition wiring of one hidden layer above the bottom one.
#[derive(Debug, Clone)]
pub struct UpperRecLayer {
    /// Own lags, `own x own*n`.
    pub u4: CondWeight,
    /// Current below-layer state, `own x below`.
    pub u5: CondWeight,
    /// Below-layer lags, `own x below*n`.
    pub u6: CondWeight,
    /// Per-style bias, `own x S`.
    pub e: Array2<f64>,
}

impl UpperRecLayer {
    fn init(
        rng: &mut impl Rng,
        own: usize,
        below: usize,
        dims: &Dims,
        factors: Option<usize>,
    ) -> Self {
        let (s, n) = (dims.styles, dims.order);
        UpperRecLayer {
            u4: init_cond(rng, own, own * n, s, factors),
            u5: init_cond(rng, own, below, s, factors),
            u6: init_cond(rng, own, below * n, s, factors),
            e: Array2::zeros((own, s)),
        }
    }
}

/// Full generative parameter stack. `upper[i]` is layer `i + 2` counting
/// the bottom layer as 1; its widths follow `base.dims.layers`.
#[derive(Debug, Clone)]
pub struct DeepParams {
    pub base: GenerativeParams,
    pub upper: Vec<UpperGenLayer>,
}

impl DeepParams {
    pub fn init(dims: &Dims, obs: ObsKind, factored: bool, rng: &mut impl Rng) -> Result<Self> {
        let base = GenerativeParams::init(dims, obs, factored, rng)?;
        let factors = factored.then_some(dims.factors);
        let upper = (1..dims.layers.len())
            .map(|l| UpperGenLayer::init(rng, dims.layers[l], dims.layers[l - 1], dims, factors))
            .collect();
        Ok(DeepParams { base, upper })
    }

    pub fn dims(&self) -> &Dims {
        &self.base.dims
    }

    pub fn view(&self) -> GenView<'_> {
        GenView { base: &self.base, upper: &self.upper }
    }
}

impl TensorMap for DeepParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.base.visit(f);
        for (i, layer) in self.upper.iter().enumerate() {
            let l = i + 2;
            visit_cond(&format!("layer{l}/w5"), &layer.w5, f);
            visit_cond(&format!("layer{l}/w6"), &layer.w6, f);
            visit_cond(&format!("layer{l}/w7"), &layer.w7, f);
            f(&format!("layer{l}/a"), &layer.a);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.base.visit_mut(f);
        for (i, layer) in self.upper.iter_mut().enumerate() {
            let l = i + 2;
            visit_cond_mut(&format!("layer{l}/w5"), &mut layer.w5, f);
            visit_cond_mut(&format!("layer{l}/w6"), &mut layer.w6, f);
            visit_cond_mut(&format!("layer{l}/w7"), &mut layer.w7, f);
            f(&format!("layer{l}/a"), &mut layer.a);
        }
    }
}

/// Full recognition parameter stack, mirroring [`DeepParams`].
#[derive(Debug, Clone)]
pub struct DeepRecognition {
    pub base: RecognitionParams,
    pub upper: Vec<UpperRecLayer>,
}

impl DeepRecognition {
    pub fn init(dims: &Dims, factored: bool, rng: &mut impl Rng) -> Result<Self> {
        let base = RecognitionParams::init(dims, factored, rng)?;
        let factors = factored.then_some(dims.factors);
        let upper = (1..dims.layers.len())
            .map(|l| UpperRecLayer::init(rng, dims.layers[l], dims.layers[l - 1], dims, factors))
            .collect();
        Ok(DeepRecognition { base, upper })
    }

    pub fn view(&self) -> RecView<'_> {
        RecView { base: &self.base, upper: &self.upper }
    }
}

impl TensorMap for DeepRecognition {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.base.visit(f);
        for (i, layer) in self.upper.iter().enumerate() {
            let l = i + 2;
            visit_cond(&format!("layer{l}/u4"), &layer.u4, f);
            visit_cond(&format!("layer{l}/u5"), &layer.u5, f);
            visit_cond(&format!("layer{l}/u6"), &layer.u6, f);
            f(&format!("layer{l}/e"), &layer.e);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.base.visit_mut(f);
        for (i, layer) in self.upper.iter_mut().enumerate() {
            let l = i + 2;
            visit_cond_mut(&format!("layer{l}/u4"), &mut layer.u4, f);
            visit_cond_mut(&format!("layer{l}/u5"), &mut layer.u5, f);
            visit_cond_mut(&format!("layer{l}/u6"), &mut layer.u6, f);
            f(&format!("layer{l}/e"), &mut layer.e);
        }
    }
}

/// Borrowed view of a generative stack; a single-layer model is the same
/// view with no upper layers.
#[derive(Clone, Copy)]
pub struct GenView<'a> {
    pub base: &'a GenerativeParams,
    pub upper: &'a [UpperGenLayer],
}

impl<'a> GenView<'a> {
    pub fn num_layers(&self) -> usize {
        self.upper.len() + 1
    }

    pub fn layer_width(&self, layer: usize) -> usize {
        self.base.dims.layers[layer]
    }
}

impl GenerativeParams {
    pub fn as_view(&self) -> GenView<'_> {
        GenView { base: self, upper: &[] }
    }
}

/// Borrowed view of a recognition stack.
#[derive(Clone, Copy)]
pub struct RecView<'a> {
    pub base: &'a RecognitionParams,
    pub upper: &'a [UpperRecLayer],
}

impl RecognitionParams {
    pub fn as_view(&self) -> RecView<'_> {
        RecView { base: self, upper: &[] }
    }
}

/// Named gradient accumulator, keyed identically to [`TensorMap`] names.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    map: BTreeMap<String, Array2<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    fn entry(&mut self, name: &str, shape: (usize, usize)) -> &mut Array2<f64> {
        self.map.entry(name.to_string()).or_insert_with(|| Array2::zeros(shape))
    }

    /// Accumulate `scale * x y^T`, skipping zero entries of `y`. Records
    /// `len(x) * nnz(y)` multiply-adds.
    pub fn add_outer(
        &mut self,
        name: &str,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
        scale: f64,
    ) {
        let m = self.entry(name, (x.len(), y.len()));
        let mut active = 0u64;
        for (s, &ys) in y.iter().enumerate() {
            if ys != 0.0 {
                let w = scale * ys;
                for (i, &xi) in x.iter().enumerate() {
                    m[(i, s)] += w * xi;
                }
                active += 1;
            }
        }
        madds::add(active * x.len() as u64);
    }

    /// Accumulate `scale * arr`.
    pub fn add_scaled(&mut self, name: &str, arr: ArrayView2<f64>, scale: f64) {
        let m = self.entry(name, arr.dim());
        m.scaled_add(scale, &arr);
        madds::add(arr.len() as u64);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.map.values_mut() {
            m.mapv_inplace(|v| v * s);
        }
    }

    /// Add every tensor of `other` into this set.
    pub fn merge(&mut self, other: &GradientSet) {
        for (name, arr) in other.map.iter() {
            let m = self.entry(name, arr.dim());
            *m += arr;
        }
    }

    /// Euclidean norm over all tensors whose name starts with `prefix`.
    pub fn l2_norm_of(&self, prefix: &str) -> f64 {
        let mut sq = 0.0;
        for (name, arr) in self.map.iter() {
            if name.starts_with(prefix) {
                sq += arr.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sq.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims2() -> Dims {
        Dims { visible: 3, styles: 2, factors: 2, order: 2, layers: vec![4, 3] }
    }

    #[test]
    fn tensor_names_are_unique_and_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = dims2();
        let gen = DeepParams::init(&d, ObsKind::Real, true, &mut rng).unwrap();
        let rec = DeepRecognition::init(&d, true, &mut rng).unwrap();
        let mut names: Vec<String> = Vec::new();
        gen.visit(&mut |n, _| names.push(n.to_string()));
        rec.visit(&mut |n, _| names.push(n.to_string()));
        let unique: std::collections::BTreeSet<_> = names.iter().cloned().collect();
        assert_eq!(unique.len(), names.len(), "duplicate tensor names");
        assert!(names.iter().any(|n| n == "model/w1/a"));
        assert!(names.iter().any(|n| n == "model/w2/s1"));
        assert!(names.iter().any(|n| n == "model/c_prime"));
        assert!(names.iter().any(|n| n == "layer2/w5/a"));
        assert!(names.iter().any(|n| n == "layer2/u5/a"));
        assert!(names.iter().any(|n| n == "recognition/d"));
    }

    #[test]
    fn init_scales_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Dims::new(6, 8, 2, 3, 1);
        let gen = GenerativeParams::init(&d, ObsKind::Real, false, &mut rng).unwrap();
        assert!(gen.b.iter().all(|&v| v == 0.0));
        assert!(gen.head.c.iter().all(|&v| v == 0.0));
        let mut max_abs: f64 = 0.0;
        gen.w1.visit(|_, t| {
            for &v in t.iter() {
                max_abs = max_abs.max(v.abs());
            }
        });
        assert!(max_abs > 0.0 && max_abs < 0.01, "dense init scale off: {max_abs}");
    }

    #[test]
    fn load_tensors_round_trips_and_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = dims2();
        let gen = DeepParams::init(&d, ObsKind::Count, true, &mut rng).unwrap();
        let saved = gen.to_tensor_map();

        let mut fresh = DeepParams::init(&d, ObsKind::Count, true, &mut rng).unwrap();
        fresh.load_tensors(&saved).unwrap();
        let reloaded = fresh.to_tensor_map();
        assert_eq!(saved.len(), reloaded.len());
        for (name, arr) in &saved {
            assert_eq!(arr, &reloaded[name], "{name} did not round-trip");
        }

        let mut bad = saved.clone();
        bad.insert("model/w1/a".into(), Array2::zeros((1, 1)));
        assert!(fresh.load_tensors(&bad).is_err());

        let mut short = saved.clone();
        short.remove("model/b");
        assert!(fresh.load_tensors(&short).is_err());
    }

    #[test]
    fn gradient_set_outer_skips_inactive_styles() {
        let mut gs = GradientSet::new();
        let x = ndarray::array![1.0, 2.0];
        let y = ndarray::array![0.0, 3.0];
        gs.add_outer("g", x.view(), y.view(), 0.5);
        let g = gs.get("g").unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 1)], 3.0);
        assert_eq!(g[(0, 1)], 1.5);
    }

    #[test]
    fn zero_visible_paths_only_touches_feedback_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Dims::new(3, 4, 2, 2, 2);
        let mut gen = GenerativeParams::init(&d, ObsKind::Real, false, &mut rng).unwrap();
        gen.zero_visible_paths();
        gen.w3.visit(|_, t| assert!(t.iter().all(|&v| v == 0.0)));
        gen.head.w4.visit(|_, t| assert!(t.iter().all(|&v| v == 0.0)));
        let mut any_nonzero = false;
        gen.w1.visit(|_, t| any_nonzero |= t.iter().any(|&v| v != 0.0));
        assert!(any_nonzero);
    }
}
