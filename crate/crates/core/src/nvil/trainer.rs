//! Epoch loop: minibatch assembly, optimizer steps, held-out one-step
//! prediction, per-epoch metrics, and divergence handling.
//!
//! A minibatch is `batch_size` contiguous subsequences of length
//! `subseq_len` drawn uniformly (sequence, then start offset) from the
//! training split. One epoch runs enough minibatches to cover the
//! training frames once in expectation. All randomness flows from the
//! config seed through one counter-based generator, and per-element
//! sampling seeds are drawn up front, so a fixed seed reproduces training
//! bit-for-bit regardless of worker threads.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::dims::{Dims, ObsKind};
use crate::error::{Error, Result};
use crate::model;
use crate::params::{DeepParams, DeepRecognition};
use crate::util::{sigmoid, LagBuffer};

use super::baseline::BaselineParams;
use super::rmsprop::{RmsProp, RmsPropConfig};
use super::{minibatch_views, NvilOptions, SignalStats, SubSeq};

fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    20
}
fn default_subseq_len() -> usize {
    50
}
fn default_signal_rate() -> f64 {
    0.9
}
fn default_holdout_fraction() -> f64 {
    0.1
}
fn default_predict_samples() -> usize {
    5
}
fn default_true() -> bool {
    true
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_subseq_len")]
    pub subseq_len: usize,
    #[serde(default)]
    pub optimizer: RmsPropConfig,
    #[serde(default = "default_signal_rate")]
    pub signal_rate: f64,
    #[serde(default = "default_true")]
    pub use_baseline: bool,
    #[serde(default = "default_true")]
    pub normalize_signals: bool,
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
    #[serde(default = "default_predict_samples")]
    pub predict_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Tensor-name prefixes excluded from optimizer updates.
    #[serde(default)]
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// One epoch's metrics line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean per-frame bound estimate over the epoch's minibatches.
    pub elbo: f64,
    /// Held-out one-step mean absolute error per dimension per frame.
    pub pred_error: f64,
    pub signal_mean: f64,
    pub signal_var: f64,
    /// L2 norms of the epoch's last gradient estimate, by component.
    pub grad_norms: BTreeMap<String, f64>,
}

/// Mutable training state: every parameter set plus the signal trackers.
#[derive(Debug)]
pub struct TrainState {
    pub params: DeepParams,
    pub rec: DeepRecognition,
    pub baseline: BaselineParams,
    pub stats: SignalStats,
}

impl TrainState {
    pub fn init(dims: &Dims, obs: ObsKind, factored: bool, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = DeepParams::init(dims, obs, factored, &mut rng)?;
        let rec = DeepRecognition::init(dims, factored, &mut rng)?;
        let baseline = BaselineParams::init(
            dims.visible * dims.order + dims.styles,
            super::baseline::DEFAULT_HIDDEN,
            &mut rng,
        )?;
        Ok(TrainState { params, rec, baseline, stats: SignalStats::new(cfg.signal_rate) })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRecord>,
    /// Diagnostic text when training stopped on repeated non-finite
    /// bound estimates; `None` for a clean run.
    pub abort: Option<String>,
}

struct Split<'a> {
    train: Vec<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
    holdout: Vec<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
}

fn split_dataset<'a>(
    dataset: &'a SequenceDataset,
    dims: &Dims,
    holdout_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Split<'a>> {
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let mut pairs = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        if r.v.ncols() != dims.visible {
            return Err(Error::shape(format!(
                "sequence '{}' has {} dims, model expects {}",
                r.id,
                r.v.ncols(),
                dims.visible
            )));
        }
        let y = r.y.as_ref().ok_or_else(|| {
            Error::config(format!("sequence '{}' lacks side information", r.id))
        })?;
        if y.ncols() != dims.styles {
            return Err(Error::shape(format!(
                "sequence '{}' side info has {} dims, model expects {}",
                r.id,
                y.ncols(),
                dims.styles
            )));
        }
        pairs.push((r.v.view(), y.view()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        let k = rng.random_range(0..=i);
        order.swap(i, k);
    }
    let n_hold = ((pairs.len() as f64) * holdout_fraction).round() as usize;
    let n_hold = n_hold.min(pairs.len().saturating_sub(1));
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (rank, &idx) in order.iter().enumerate() {
        if rank < pairs.len() - n_hold {
            train.push(pairs[idx]);
        } else {
            holdout.push(pairs[idx]);
        }
    }
    Ok(Split { train, holdout })
}

/// Causal one-step-ahead prediction error: for each frame, hidden
/// histories are sampled from the recognition network on the frames
/// before it, upper layers are completed top-down from the generative
/// model, and the emission mean under the relaxed bottom-layer state is
/// scored against the actual frame. Mean absolute error per dimension
/// per frame, averaged over `samples` independent history draws.
pub fn one_step_mae(
    params: &DeepParams,
    rec: &DeepRecognition,
    seqs: &[(ArrayView2<f64>, ArrayView2<f64>)],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::config("prediction needs at least one sample"));
    }
    let dims = &params.base.dims;
    let (m, n) = (dims.visible, dims.order);
    let layers = &dims.layers;
    let l_count = layers.len();
    let gen_view = params.view();
    let rec_view = rec.view();

    let mut total_err = 0.0;
    let mut total_cells = 0usize;
    for (si, (v, y)) in seqs.iter().enumerate() {
        let t_len = v.nrows();
        let mut pred_sum = Array2::<f64>::zeros((t_len, m));
        for k in 0..samples {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (si as u64).wrapping_mul(0x9e3779b97f4a7c15));
            rng.set_stream(k as u64 + 1);
            let mut h_bufs: Vec<LagBuffer> =
                layers.iter().map(|&j| LagBuffer::new(j, n)).collect();
            let mut v_buf = LagBuffer::new(m, n);
            for t in 0..t_len {
                let y_t = y.row(t);
                let v_win = v_buf.window();
                let wins: Vec<Array1<f64>> =
                    h_bufs.iter().map(|b| b.window().to_owned()).collect();

                // Predict v_t from information before t: complete the
                // upper layers for this frame top-down, then take the
                // relaxed mean of the bottom layer.
                let mut upper_now: Vec<Array1<f64>> = vec![Array1::zeros(0); l_count];
                for l in (1..l_count).rev() {
                    let h_above = if l + 1 < l_count { Some(upper_now[l + 1].view()) } else { None };
                    let z = gen_view.layer_logits(
                        l,
                        wins[l].view(),
                        wins[l - 1].view(),
                        h_above,
                        y_t,
                    )?;
                    upper_now[l] = z.mapv(|zj| if rng.random::<f64>() < sigmoid(zj) {
                        1.0
                    } else {
                        0.0
                    });
                }
                let h_above = if l_count > 1 { Some(upper_now[1].view()) } else { None };
                let z1 = gen_view.layer_logits(0, wins[0].view(), v_win.view(), h_above, y_t)?;
                let h_mean = z1.mapv(sigmoid);
                let dist = model::emission(&params.base, h_mean.view(), v_win.view(), y_t)?;
                let mut row = pred_sum.row_mut(t);
                row += &dist.mean();

                // Advance the hidden history with a recognition draw that
                // may look at the frame just observed.
                for l in 0..l_count {
                    let below_now = if l == 0 { v.row(t) } else { h_bufs[l - 1].latest() };
                    let below_win = if l == 0 { v_win.view() } else { wins[l - 1].view() };
                    let zq = rec_view.layer_logits(
                        l,
                        wins[l].view(),
                        below_now,
                        below_win,
                        y_t,
                    )?;
                    let bits = zq.mapv(|zj| if rng.random::<f64>() < sigmoid(zj) {
                        1.0
                    } else {
                        0.0
                    });
                    h_bufs[l].push(bits.view());
                }
                v_buf.push(v.row(t));
            }
        }
        pred_sum /= samples as f64;
        for t in 0..t_len {
            for d in 0..m {
                total_err += (pred_sum[(t, d)] - v[(t, d)]).abs();
            }
        }
        total_cells += t_len * m;
    }
    Ok(total_err / total_cells as f64)
}

fn component_norms(gs: &crate::params::GradientSet) -> BTreeMap<String, f64> {
    let mut prefixes: Vec<String> = Vec::new();
    for name in gs.names() {
        let head = name.split('/').next().unwrap_or(name).to_string();
        if !prefixes.contains(&head) {
            prefixes.push(head);
        }
    }
    prefixes.into_iter().map(|p| {
        let norm = gs.l2_norm_of(&p);
        (p, norm)
    }).collect()
}

/// Run the full epoch loop on an already-normalized dataset.
pub fn train(
    dims: &Dims,
    obs: ObsKind,
    factored: bool,
    cfg: &TrainConfig,
    dataset: &SequenceDataset,
) -> Result<TrainOutcome> {
    if dataset.obs != obs {
        return Err(Error::config(format!(
            "dataset is {} but the model is {obs}",
            dataset.obs
        )));
    }
    let mut state = TrainState::init(dims, obs, factored, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xA11CE);
    let split = split_dataset(dataset, dims, cfg.holdout_fraction, &mut rng)?;
    let eval_set = if split.holdout.is_empty() { &split.train } else { &split.holdout };

    let mut opt = RmsProp::new(cfg.optimizer.clone());
    let opts = NvilOptions {
        use_baseline: cfg.use_baseline,
        normalize_signals: cfg.normalize_signals,
    };
    let frozen = cfg.freeze.clone();
    let mask = move |name: &str| !frozen.iter().any(|p| name.starts_with(p.as_str()));

    let train_frames: usize = split.train.iter().map(|(v, _)| v.nrows()).sum();
    let batches_per_epoch =
        (train_frames + cfg.batch_size * cfg.subseq_len - 1) / (cfg.batch_size * cfg.subseq_len);
    let batches_per_epoch = batches_per_epoch.max(1);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut nan_streak = 0usize;
    let mut abort = None;

    'epochs: for epoch in 0..cfg.epochs {
        let mut epoch_raw = 0.0;
        let mut epoch_steps = 0usize;
        let mut last_norms = BTreeMap::new();
        let mut last_mean = 0.0;
        let mut last_var = 0.0;
        for _ in 0..batches_per_epoch {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            let mut seeds = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (v, y) = split.train[rng.random_range(0..split.train.len())];
                let t_len = v.nrows();
                let take = cfg.subseq_len.min(t_len);
                let start = if t_len > take { rng.random_range(0..=t_len - take) } else { 0 };
                batch.push(SubSeq {
                    v: v.slice_move(ndarray::s![start..start + take, ..]),
                    y: y.slice_move(ndarray::s![start..start + take, ..]),
                });
                seeds.push(rng.random::<u64>());
            }
            let out = minibatch_views(
                state.params.view(),
                state.rec.view(),
                Some(&state.baseline),
                &mut state.stats,
                &batch,
                &seeds,
                &opts,
            )?;
            epoch_raw += out.elbo_per_step * out.steps as f64;
            epoch_steps += out.steps;
            last_mean = out.batch_signal_mean;
            last_var = out.batch_signal_var;

            if !out.elbo_per_step.is_finite() {
                nan_streak += 1;
                if nan_streak >= 2 {
                    abort = Some(format!(
                        "non-finite bound twice in a row at epoch {epoch}; \
                         signal mean {last_mean:.3e}, signal var {last_var:.3e}, \
                         skipped non-finite tensors so far: {}",
                        opt.skipped_nonfinite
                    ));
                    break 'epochs;
                }
                continue;
            }
            nan_streak = 0;

            last_norms = component_norms(&out.grads);
            opt.step_masked(&mut state.params, &out.grads, &mask);
            opt.step_masked(&mut state.rec, &out.grads, &mask);
            opt.step_masked(&mut state.baseline, &out.grads, &mask);
        }

        let pred_error = one_step_mae(
            &state.params,
            &state.rec,
            eval_set,
            cfg.predict_samples,
            cfg.seed ^ 0xE7A1,
        )?;
        metrics.push(MetricsRecord {
            epoch,
            elbo: epoch_raw / epoch_steps.max(1) as f64,
            pred_error,
            signal_mean: last_mean,
            signal_var: last_var,
            grad_norms: last_norms,
        });
    }

    Ok(TrainOutcome { state, metrics, abort })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{plant_model, PlantConfig};
    use crate::params::TensorMap;

    fn tiny_dataset(seed: u64) -> (Dims, SequenceDataset) {
        let dims = Dims::new(3, 4, 2, 2, 1);
        let cfg = PlantConfig {
            num_sequences: 6,
            frames_per_seq: 20,
            style_separation: 4.0,
            label_window: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, ds) = plant_model(&dims, ObsKind::Real, &cfg, &mut rng).unwrap();
        (dims, ds)
    }

    fn fast_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 3,
            subseq_len: 10,
            predict_samples: 2,
            holdout_fraction: 0.2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization_untouched() {
        let (dims, ds) = tiny_dataset(1);
        let cfg = fast_config(0);
        let out = train(&dims, ObsKind::Real, true, &cfg, &ds).unwrap();
        let fresh = TrainState::init(&dims, ObsKind::Real, true, &cfg).unwrap();
        assert_eq!(out.state.params.to_tensor_map(), fresh.params.to_tensor_map());
        assert!(out.metrics.is_empty());
        assert!(out.abort.is_none());
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let (dims, ds) = tiny_dataset(2);
        let cfg = fast_config(2);
        let a = train(&dims, ObsKind::Real, true, &cfg, &ds).unwrap();
        let b = train(&dims, ObsKind::Real, true, &cfg, &ds).unwrap();
        assert_eq!(a.state.params.to_tensor_map(), b.state.params.to_tensor_map());
        assert_eq!(a.state.rec.to_tensor_map(), b.state.rec.to_tensor_map());
        let (ma, mb) = (&a.metrics, &b.metrics);
        assert_eq!(ma.len(), mb.len());
        for (x, y) in ma.iter().zip(mb) {
            assert_eq!(x.elbo, y.elbo);
            assert_eq!(x.pred_error, y.pred_error);
        }
    }

    #[test]
    fn frozen_prefixes_do_not_move() {
        let (dims, ds) = tiny_dataset(3);
        let mut cfg = fast_config(2);
        cfg.freeze = vec!["model/".into()];
        let out = train(&dims, ObsKind::Real, true, &cfg, &ds).unwrap();
        let fresh = TrainState::init(&dims, ObsKind::Real, true, &cfg).unwrap();
        for (name, t) in out.state.params.to_tensor_map() {
            assert_eq!(t, fresh.params.to_tensor_map()[&name], "{name} moved");
        }
        // Recognition side trains as usual.
        assert_ne!(out.state.rec.to_tensor_map(), fresh.rec.to_tensor_map());
    }

    #[test]
    fn metrics_have_the_expected_shape_and_finite_values() {
        let (dims, ds) = tiny_dataset(4);
        let out = train(&dims, ObsKind::Real, false, &fast_config(3), &ds).unwrap();
        assert_eq!(out.metrics.len(), 3);
        for (i, rec) in out.metrics.iter().enumerate() {
            assert_eq!(rec.epoch, i);
            assert!(rec.elbo.is_finite());
            assert!(rec.pred_error.is_finite() && rec.pred_error >= 0.0);
            assert!(rec.grad_norms.contains_key("model"));
            assert!(rec.grad_norms.contains_key("recognition"));
            assert!(rec.grad_norms.contains_key("baseline"));
            let line = serde_json::to_string(rec).unwrap();
            for key in ["epoch", "elbo", "pred_error", "signal_mean", "signal_var", "grad_norms"] {
                assert!(line.contains(key), "{line}");
            }
        }
    }

    #[test]
    fn missing_side_information_is_a_config_error() {
        let (dims, mut ds) = tiny_dataset(5);
        for r in &mut ds.records {
            r.y = None;
        }
        let err = train(&dims, ObsKind::Real, true, &fast_config(1), &ds).unwrap_err();
        assert!(err.to_string().contains("side information"), "{err}");
    }

    #[test]
    fn training_improves_the_bound_on_a_planted_problem() {
        let (dims, ds) = tiny_dataset(6);
        let mut cfg = fast_config(8);
        cfg.batch_size = 6;
        cfg.subseq_len = 20;
        let out = train(&dims, ObsKind::Real, true, &cfg, &ds).unwrap();
        assert!(out.abort.is_none());
        let first = out.metrics.first().unwrap().elbo;
        let last = out.metrics.last().unwrap().elbo;
        assert!(last > first, "bound did not improve: {first} -> {last}");
    }
}
