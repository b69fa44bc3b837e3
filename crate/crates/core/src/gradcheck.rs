//! Central finite-difference verification of every hand-derived gradient:
//! generative, recognition (with non-uniform step weights), and the
//! classifier's cross-entropy term, swept over observation families,
//! weight layouts, lag orders, and stack depths.
//!
//! A probe passes when `|analytic - numeric| <= atol + rtol * scale` with
//! `scale = max(|analytic|, |numeric|)`. The reported relative error is
//! `|analytic - numeric| / (atol / rtol + scale)`, so the pass condition
//! is exactly `rel <= rtol`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::deep::{deep_log_joint, deep_model_gradients, deep_recognition_gradients};
use crate::dims::{Dims, ObsKind};
use crate::error::Result;
use crate::nvil::{stack_forward, HiddenSource};
use crate::params::{DeepParams, DeepRecognition, GradientSet, TensorMap};
use crate::semi::ClassifierParams;
use crate::util::bernoulli_log_mass;

#[derive(Debug, Clone)]
pub struct CheckSettings {
    /// Central-difference step.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Random probes per tensor, on top of the two corner entries.
    pub probes: usize,
    /// Test fixture: add a constant to this tensor's analytic gradient so
    /// the report must flag exactly it.
    pub corrupt: Option<String>,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { step: 1e-5, rtol: 1e-4, atol: 1e-7, probes: 5, corrupt: None }
    }
}

/// One tensor's worst probe in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorReport {
    pub config: String,
    pub tensor: String,
    pub max_rel_err: f64,
    pub probes: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub tensors: Vec<TensorReport>,
    pub pass: bool,
}

impl CheckReport {
    pub fn failing(&self) -> Vec<&TensorReport> {
        self.tensors.iter().filter(|t| !t.pass).collect()
    }
}

fn probe_indices(
    shape: (usize, usize),
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut ix = vec![(0, 0), (shape.0 - 1, shape.1 - 1)];
    for _ in 0..probes {
        ix.push((rng.random_range(0..shape.0), rng.random_range(0..shape.1)));
    }
    ix
}

fn corrupt_if_requested(gs: &mut GradientSet, settings: &CheckSettings) {
    if let Some(name) = &settings.corrupt {
        if gs.get(name).is_some() {
            let bad = gs.get(name).unwrap().mapv(|_| 1.0);
            gs.add_scaled(name, bad.view(), 0.5);
        }
    }
}

/// Check one parameter container against a scalar objective.
fn check_tensors<P: TensorMap>(
    label: &str,
    params: &mut P,
    analytic: &GradientSet,
    objective: &mut dyn FnMut(&P) -> Result<f64>,
    settings: &CheckSettings,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<TensorReport>,
) -> Result<()> {
    for (name, shape) in params.tensor_names() {
        let g = analytic
            .get(&name)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .clone();
        let ix = probe_indices(shape, settings.probes, rng);
        let mut max_rel: f64 = 0.0;
        for &(i, k) in &ix {
            params.perturb(&name, (i, k), settings.step);
            let up = objective(params)?;
            params.perturb(&name, (i, k), -2.0 * settings.step);
            let dn = objective(params)?;
            params.perturb(&name, (i, k), settings.step);
            let num = (up - dn) / (2.0 * settings.step);
            let ana = g[(i, k)];
            let scale = ana.abs().max(num.abs());
            let rel = (ana - num).abs() / (settings.atol / settings.rtol + scale);
            max_rel = max_rel.max(rel);
        }
        out.push(TensorReport {
            config: label.to_string(),
            tensor: name,
            max_rel_err: max_rel,
            probes: ix.len(),
            pass: max_rel <= settings.rtol,
        });
    }
    Ok(())
}

/// Sum of per-step recognition log-masses scaled by per-step weights, the
/// objective whose gradient the weighted accumulation claims to be.
fn weighted_log_q(
    rec: &DeepRecognition,
    v: ArrayView2<f64>,
    h_layers: &[ArrayView2<f64>],
    y: ArrayView2<f64>,
    weights: &[f64],
) -> Result<f64> {
    let pass = stack_forward(None, Some(rec.view()), v, y, None, HiddenSource::Given(h_layers))?;
    let mut total = 0.0;
    for (l, h) in pass.h.iter().enumerate() {
        for t in 0..v.nrows() {
            total += weights[t] * bernoulli_log_mass(pass.rec_z[l].row(t), h.row(t));
        }
    }
    Ok(total)
}

/// Run the finite-difference suite on one model configuration.
pub fn check_config(
    obs: ObsKind,
    factored: bool,
    order: usize,
    layers: &[usize],
    seed: u64,
    settings: &CheckSettings,
) -> Result<Vec<TensorReport>> {
    let label = format!(
        "{obs}-{}-n{order}-L{}",
        if factored { "factored" } else { "dense" },
        layers.len()
    );
    let mut dims = Dims::new(3, layers[0], 2, 2, order);
    dims.layers = layers.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut params = DeepParams::init(&dims, obs, factored, &mut rng)?;
    let mut rec = DeepRecognition::init(&dims, factored, &mut rng)?;
    let t_len = order + 3;
    let v = Array2::from_shape_fn((t_len, dims.visible), |_| match obs {
        ObsKind::Real => rng.random::<f64>() * 2.0 - 1.0,
        ObsKind::Binary => f64::from(rng.random::<f64>() < 0.5),
        ObsKind::Count => rng.random_range(0..4) as f64,
    });
    // Alternate one-hot and blended style rows so both the per-style slice
    // path and the mixture path get exercised.
    let y = Array2::from_shape_fn((t_len, dims.styles), |(t, s)| {
        if t % 2 == 0 {
            f64::from(s == (t / 2) % dims.styles)
        } else if s == 0 {
            0.3
        } else if s == 1 {
            0.7
        } else {
            0.0
        }
    });
    let h: Vec<Array2<f64>> = dims
        .layers
        .iter()
        .map(|&j| Array2::from_shape_fn((t_len, j), |_| f64::from(rng.random::<f64>() < 0.5)))
        .collect();
    let paths: Vec<ArrayView2<f64>> = h.iter().map(|m| m.view()).collect();
    let weights: Vec<f64> = (0..t_len).map(|t| 0.25 + 0.15 * t as f64).collect();

    let mut out = Vec::new();

    let mut gs = deep_model_gradients(&params, v.view(), &paths, y.view())?;
    corrupt_if_requested(&mut gs, settings);
    check_tensors(
        &label,
        &mut params,
        &gs,
        &mut |p| deep_log_joint(p, v.view(), &paths, y.view()),
        settings,
        &mut rng,
        &mut out,
    )?;

    let mut gs = deep_recognition_gradients(&rec, v.view(), &paths, y.view(), &weights)?;
    corrupt_if_requested(&mut gs, settings);
    check_tensors(
        &label,
        &mut rec,
        &gs,
        &mut |r| weighted_log_q(r, v.view(), &paths, y.view(), &weights),
        settings,
        &mut rng,
        &mut out,
    )?;

    let window = order + 1;
    let mut classifier = ClassifierParams::init(dims.styles, window * dims.visible);
    classifier.w.mapv_inplace(|_| rng.random::<f64>() * 0.6 - 0.3);
    classifier.b.mapv_inplace(|_| rng.random::<f64>() * 0.2 - 0.1);
    let pairs: Vec<(Array1<f64>, usize)> = (0..2)
        .map(|k| {
            let x = crate::semi::window_input(v.view(), k, window).unwrap();
            (x, k % dims.styles)
        })
        .collect();
    let mut gs = GradientSet::new();
    let ones = Array1::ones(1);
    for (x, s) in &pairs {
        let pi = classifier.classify(x.view())?;
        let mut delta = -pi;
        delta[*s] += 1.0;
        gs.add_outer("classifier/w", delta.view(), x.view(), 1.0);
        gs.add_outer("classifier/b", delta.view(), ones.view(), 1.0);
    }
    corrupt_if_requested(&mut gs, settings);
    check_tensors(
        &label,
        &mut classifier,
        &gs,
        &mut |c| {
            let mut total = 0.0;
            for (x, s) in &pairs {
                total += c.log_prob(x.view(), *s)?;
            }
            Ok(total)
        },
        settings,
        &mut rng,
        &mut out,
    )?;

    Ok(out)
}

/// The full sweep: every observation family crossed with dense/factored
/// layouts, lag orders 1 and 3, and one- and two-layer stacks.
pub fn standard_suite(seed: u64, settings: &CheckSettings) -> Result<CheckReport> {
    let mut tensors = Vec::new();
    let mut combo = 0u64;
    for obs in [ObsKind::Real, ObsKind::Binary, ObsKind::Count] {
        for factored in [false, true] {
            for order in [1usize, 3] {
                for layers in [vec![3], vec![3, 2]] {
                    combo += 1;
                    tensors.extend(check_config(
                        obs,
                        factored,
                        order,
                        &layers,
                        seed.wrapping_add(combo * 7919),
                        settings,
                    )?);
                }
            }
        }
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(CheckReport { tensors, pass })
}
