//! Joint generative-classifier training from partially labeled data.
//!
//! A one-layer softmax classifier maps a window of `w` consecutive frames
//! to style probabilities. Labeled sequences contribute the conditional
//! bound plus `alpha` times the classifier's log-likelihood on their label
//! windows; unlabeled sequences get a style sampled from the classifier
//! per window, after which the standard estimator applies with the
//! sampled schedule treated as given. The classifier receives
//! score-function gradients on unlabeled data, weighted by the same
//! centered signals as the recognition network plus its own
//! `-log q(y)` term, so the objective's entropy pressure is kept.
//!
//! Training alternates labeled and unlabeled minibatches with a Bernoulli
//! coin whose probability defaults to the labeled share of the sequence
//! pool. Batches draw whole sequences, which keeps label windows aligned
//! with frame indices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelWindow, SequenceDataset};
use crate::dims::{Dims, ObsKind};
use crate::error::{Error, Result};
use crate::nvil::{
    minibatch_views, BaselineParams, MinibatchOutcome, NvilOptions, RmsProp, RmsPropConfig,
    SignalStats, SubSeq, TrainConfig,
};
use crate::params::{DeepParams, DeepRecognition, GenView, RecView, TensorMap};
use crate::util::{logsumexp, softmax};

/// One-layer softmax classifier from a flattened window of frames
/// (time order, oldest first) to style probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `S x (window * M)` weights.
    pub w: Array2<f64>,
    /// `S x 1` bias column.
    pub b: Array2<f64>,
}

impl ClassifierParams {
    /// Zero initialization: every window classifies uniformly.
    pub fn init(styles: usize, input_dim: usize) -> Self {
        ClassifierParams { w: Array2::zeros((styles, input_dim)), b: Array2::zeros((styles, 1)) }
    }

    pub fn styles(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn logits(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "classifier input has {} entries, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.w.dot(&x) + &self.b.column(0))
    }

    /// Class probabilities; always a valid categorical distribution.
    pub fn classify(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(softmax(self.logits(x)?.view()))
    }

    pub fn log_prob(&self, x: ArrayView1<f64>, style: usize) -> Result<f64> {
        let z = self.logits(x)?;
        if style >= z.len() {
            return Err(Error::config(format!("style {style} out of range")));
        }
        Ok(z[style] - logsumexp(z.view()))
    }
}

impl TensorMap for ClassifierParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("classifier/w", &self.w);
        f("classifier/b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("classifier/w", &mut self.w);
        f("classifier/b", &mut self.b);
    }
}

/// Flatten frames `start .. start + len` of `v` in time order.
pub fn window_input(v: ArrayView2<f64>, start: usize, len: usize) -> Result<Array1<f64>> {
    if start + len > v.nrows() {
        return Err(Error::shape(format!(
            "window [{start}, {}) overruns a sequence of {} frames",
            start + len,
            v.nrows()
        )));
    }
    let m = v.ncols();
    let mut out = Array1::zeros(len * m);
    for k in 0..len {
        for d in 0..m {
            out[k * m + d] = v[(start + k, d)];
        }
    }
    Ok(out)
}

/// Expand window labels into a per-frame one-hot schedule. Each label
/// holds from its start frame until the next label (the first also covers
/// any frames before it).
pub fn expand_labels(
    t_len: usize,
    styles: usize,
    labels: &[LabelWindow],
) -> Result<Array2<f64>> {
    if labels.is_empty() {
        return Err(Error::config("sequence has no label windows"));
    }
    let mut y = Array2::zeros((t_len, styles));
    for (k, lab) in labels.iter().enumerate() {
        if lab.style >= styles {
            return Err(Error::config(format!(
                "label style {} out of range for {} styles",
                lab.style, styles
            )));
        }
        if lab.start >= t_len {
            return Err(Error::config(format!(
                "label window starts at frame {} of a {}-frame sequence",
                lab.start, t_len
            )));
        }
        let from = if k == 0 { 0 } else { labels[k].start };
        let to = labels.get(k + 1).map_or(t_len, |next| next.start);
        for t in from..to {
            y[(t, lab.style)] = 1.0;
        }
    }
    Ok(y)
}

/// A labeled sequence prepared for training: expanded schedule plus the
/// classifier's (window, style) pairs that fit inside the sequence.
#[derive(Debug, Clone)]
pub struct LabeledSeq<'a> {
    pub v: ArrayView2<'a, f64>,
    pub y: Array2<f64>,
    pub pairs: Vec<(Array1<f64>, usize)>,
}

pub fn prepare_labeled<'a>(
    v: ArrayView2<'a, f64>,
    labels: &[LabelWindow],
    styles: usize,
    window: usize,
) -> Result<LabeledSeq<'a>> {
    let y = expand_labels(v.nrows(), styles, labels)?;
    let mut pairs = Vec::new();
    for lab in labels {
        if lab.start + window <= v.nrows() {
            pairs.push((window_input(v, lab.start, window)?, lab.style));
        }
    }
    if pairs.is_empty() {
        return Err(Error::config(format!(
            "no label window fits a classifier window of {window} frames"
        )));
    }
    Ok(LabeledSeq { v, y, pairs })
}

/// Bound plus weighted classification log-likelihood on labeled data.
/// Returns the scalar objective (mean per element) and the engine outcome
/// with classifier gradients folded in. `alpha = None` uses twice the
/// element's frame count.
pub fn labeled_objective(
    gen: GenView,
    rec: RecView,
    bl: Option<&BaselineParams>,
    classifier: &ClassifierParams,
    stats: &mut SignalStats,
    batch: &[&LabeledSeq],
    seeds: &[u64],
    alpha: Option<f64>,
    opts: &NvilOptions,
) -> Result<(f64, MinibatchOutcome)> {
    let subs: Vec<SubSeq> =
        batch.iter().map(|el| SubSeq { v: el.v, y: el.y.view() }).collect();
    let mut out = minibatch_views(gen, rec, bl, stats, &subs, seeds, opts)?;

    let b_len = batch.len() as f64;
    let ones = Array1::ones(1);
    let mut objective = 0.0;
    for (i, el) in batch.iter().enumerate() {
        let a = alpha.unwrap_or(2.0 * el.v.nrows() as f64);
        let k = el.pairs.len() as f64;
        let mut ll = 0.0;
        for (x, style) in &el.pairs {
            let pi = classifier.classify(x.view())?;
            ll += (pi[*style]).ln();
            let mut delta = -pi;
            delta[*style] += 1.0;
            let scale = a / (k * b_len);
            out.grads.add_outer("classifier/w", delta.view(), x.view(), scale);
            out.grads.add_outer("classifier/b", delta.view(), ones.view(), scale);
        }
        objective += (out.element_raw[i] + a * ll / k) / b_len;
    }
    Ok((objective, out))
}

struct WindowDraw {
    /// Frames whose signal this draw owns (the last window absorbs any
    /// tail shorter than the window length).
    span: (usize, usize),
    x: Array1<f64>,
    pi: Array1<f64>,
    style: usize,
    log_q: f64,
}

/// Bound on unlabeled data: styles are sampled from the classifier per
/// window, the schedule is then treated as given, and the classifier gets
/// score-function gradients. Returns the scalar objective (mean per
/// element, including the `-log q(y)` terms) and the combined gradients.
pub fn unlabeled_objective(
    gen: GenView,
    rec: RecView,
    bl: Option<&BaselineParams>,
    classifier: &ClassifierParams,
    stats: &mut SignalStats,
    batch: &[ArrayView2<f64>],
    seeds: &[u64],
    opts: &NvilOptions,
) -> Result<(f64, MinibatchOutcome)> {
    if seeds.len() != batch.len() {
        return Err(Error::config(format!(
            "{} seeds for {} batch elements",
            seeds.len(),
            batch.len()
        )));
    }
    let styles = classifier.styles();
    let mut schedules: Vec<Array2<f64>> = Vec::with_capacity(batch.len());
    let mut draws: Vec<Vec<WindowDraw>> = Vec::with_capacity(batch.len());
    for (i, v) in batch.iter().enumerate() {
        let m = v.ncols();
        if classifier.input_dim() % m != 0 {
            return Err(Error::shape(format!(
                "classifier input {} is not a whole number of {m}-dim frames",
                classifier.input_dim()
            )));
        }
        let w = classifier.input_dim() / m;
        let t_len = v.nrows();
        if t_len < w {
            return Err(Error::config(format!(
                "unlabeled sequence of {t_len} frames is shorter than the \
                 classifier window {w}"
            )));
        }
        // Style draws use their own stream so the hidden-path sampling
        // inside the engine sees the same seed either way.
        let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
        rng.set_stream(0xF00D);
        let n_win = t_len / w;
        let mut y = Array2::zeros((t_len, styles));
        let mut el_draws = Vec::with_capacity(n_win);
        for b in 0..n_win {
            let start = b * w;
            let end = if b + 1 == n_win { t_len } else { start + w };
            let x = window_input(*v, start, w)?;
            let pi = classifier.classify(x.view())?;
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut style = styles - 1;
            for (s, &p) in pi.iter().enumerate() {
                cum += p;
                if u < cum {
                    style = s;
                    break;
                }
            }
            for t in start..end {
                y[(t, style)] = 1.0;
            }
            let log_q = pi[style].ln();
            el_draws.push(WindowDraw { span: (start, end), x, pi, style, log_q });
        }
        schedules.push(y);
        draws.push(el_draws);
    }

    let subs: Vec<SubSeq> = batch
        .iter()
        .zip(&schedules)
        .map(|(v, y)| SubSeq { v: *v, y: y.view() })
        .collect();
    let mut out = minibatch_views(gen, rec, bl, stats, &subs, seeds, opts)?;

    let b_len = batch.len() as f64;
    let ones = Array1::ones(1);
    let mut objective = 0.0;
    for (i, el_draws) in draws.iter().enumerate() {
        let mut log_q_total = 0.0;
        for d in el_draws {
            let h_signal: f64 =
                (d.span.0..d.span.1).map(|t| out.step_weights[i][t]).sum();
            let weight = h_signal - d.log_q / out.signal_scale;
            let mut delta = -d.pi.clone();
            delta[d.style] += 1.0;
            out.grads.add_outer("classifier/w", delta.view(), d.x.view(), weight / b_len);
            out.grads.add_outer("classifier/b", delta.view(), ones.view(), weight / b_len);
            log_q_total += d.log_q;
        }
        objective += (out.element_raw[i] - log_q_total) / b_len;
    }
    Ok((objective, out))
}

/// Plain supervised fit of the classifier alone on (window, style) pairs:
/// full-batch cross-entropy ascent with the same optimizer as training.
pub fn fit_classifier(
    classifier: &mut ClassifierParams,
    pairs: &[(Array1<f64>, usize)],
    steps: usize,
    opt_cfg: &RmsPropConfig,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::config("no training pairs for the classifier"));
    }
    let mut opt = RmsProp::new(opt_cfg.clone());
    let ones = Array1::ones(1);
    for _ in 0..steps {
        let mut gs = crate::params::GradientSet::new();
        let scale = 1.0 / pairs.len() as f64;
        for (x, style) in pairs {
            let pi = classifier.classify(x.view())?;
            let mut delta = -pi;
            delta[*style] += 1.0;
            gs.add_outer("classifier/w", delta.view(), x.view(), scale);
            gs.add_outer("classifier/b", delta.view(), ones.view(), scale);
        }
        opt.step(classifier, &gs);
    }
    Ok(())
}

fn default_alpha() -> Option<f64> {
    None
}

/// Knobs for partially labeled training on top of the base trainer
/// configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiConfig {
    #[serde(default)]
    pub train: TrainConfig,
    /// Classification-loss weight; `None` means twice the frame count of
    /// each element. Must be positive when set.
    #[serde(default = "default_alpha")]
    pub alpha: Option<f64>,
    /// Classifier window length in frames; `None` means `order + 1`.
    #[serde(default)]
    pub window: Option<usize>,
    /// Probability of drawing a labeled batch; `None` means the labeled
    /// share of the sequence pool.
    #[serde(default)]
    pub labeled_ratio: Option<f64>,
}

impl Default for SemiConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Everything the partially labeled trainer updates.
#[derive(Debug)]
pub struct SemiState {
    pub params: DeepParams,
    pub rec: DeepRecognition,
    pub baseline: BaselineParams,
    pub classifier: ClassifierParams,
    pub stats: SignalStats,
}

impl SemiState {
    pub fn init(
        dims: &Dims,
        obs: ObsKind,
        factored: bool,
        window: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = DeepParams::init(dims, obs, factored, &mut rng)?;
        let rec = DeepRecognition::init(dims, factored, &mut rng)?;
        let baseline = BaselineParams::init(
            dims.visible * dims.order + dims.styles,
            crate::nvil::baseline::DEFAULT_HIDDEN,
            &mut rng,
        )?;
        let classifier = ClassifierParams::init(dims.styles, window * dims.visible);
        Ok(SemiState {
            params,
            rec,
            baseline,
            classifier,
            stats: SignalStats::new(cfg.signal_rate),
        })
    }
}

/// One epoch's entry in the accuracy log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub epoch: usize,
    /// Fraction of held-out label windows classified correctly.
    pub accuracy: f64,
    /// Mean per-batch objective over the epoch.
    pub objective: f64,
}

#[derive(Debug)]
pub struct SemiOutcome {
    pub state: SemiState,
    pub log: Vec<AccuracyRecord>,
    pub labeled_batches: usize,
    pub unlabeled_batches: usize,
    pub abort: Option<String>,
}

/// Alternating training on labeled and unlabeled sequence pools.
pub fn semi_train(
    dims: &Dims,
    obs: ObsKind,
    factored: bool,
    cfg: &SemiConfig,
    labeled: &SequenceDataset,
    unlabeled: &SequenceDataset,
) -> Result<SemiOutcome> {
    if labeled.is_empty() {
        return Err(Error::config("at least one labeled sequence is required"));
    }
    if labeled.obs != obs || (!unlabeled.is_empty() && unlabeled.obs != obs) {
        return Err(Error::config("dataset observation kind does not match the model"));
    }
    if let Some(a) = cfg.alpha {
        if a <= 0.0 {
            return Err(Error::config(format!(
                "classification weight must be positive, got {a}"
            )));
        }
    }
    let window = cfg.window.unwrap_or(dims.order + 1);
    if window == 0 {
        return Err(Error::config("classifier window must be at least one frame"));
    }

    let prepared: Vec<LabeledSeq> = labeled
        .records
        .iter()
        .map(|r| {
            prepare_labeled(r.v.view(), &r.labels, dims.styles, window).map_err(|e| {
                Error::config(format!("sequence '{}': {e}", r.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &unlabeled.records {
        if r.v.nrows() < window {
            return Err(Error::config(format!(
                "unlabeled sequence '{}' is shorter than the classifier window",
                r.id
            )));
        }
    }

    let mut state = SemiState::init(dims, obs, factored, window, &cfg.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(0x5EED);

    // Held-out labeled sequences provide the accuracy metric.
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for i in (1..order.len()).rev() {
        let k = rng.random_range(0..=i);
        order.swap(i, k);
    }
    let n_hold = ((prepared.len() as f64) * cfg.train.holdout_fraction).round() as usize;
    let n_hold = n_hold.min(prepared.len().saturating_sub(1));
    let (train_idx, hold_idx) = order.split_at(prepared.len() - n_hold);
    let eval_idx: Vec<usize> =
        if hold_idx.is_empty() { train_idx.to_vec() } else { hold_idx.to_vec() };

    let n_l = train_idx.len();
    let n_u = unlabeled.len();
    let p_labeled = cfg.labeled_ratio.unwrap_or(n_l as f64 / (n_l + n_u) as f64);

    let mut opt = RmsProp::new(cfg.train.optimizer.clone());
    let opts = NvilOptions {
        use_baseline: cfg.train.use_baseline,
        normalize_signals: cfg.train.normalize_signals,
    };
    let frozen = cfg.train.freeze.clone();
    let mask = move |name: &str| !frozen.iter().any(|p| name.starts_with(p.as_str()));

    let batches_per_epoch = ((n_l + n_u + cfg.train.batch_size - 1) / cfg.train.batch_size).max(1);
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let mut labeled_batches = 0usize;
    let mut unlabeled_batches = 0usize;
    let mut nan_streak = 0usize;
    let mut abort = None;

    'epochs: for epoch in 0..cfg.train.epochs {
        let mut epoch_obj = 0.0;
        let mut epoch_batches = 0usize;
        for _ in 0..batches_per_epoch {
            let take_labeled = n_u == 0 || rng.random::<f64>() < p_labeled;
            let mut seeds = Vec::with_capacity(cfg.train.batch_size);
            let objective = if take_labeled {
                labeled_batches += 1;
                let mut batch = Vec::with_capacity(cfg.train.batch_size);
                for _ in 0..cfg.train.batch_size {
                    batch.push(&prepared[train_idx[rng.random_range(0..n_l)]]);
                    seeds.push(rng.random::<u64>());
                }
                let (obj, out) = labeled_objective(
                    state.params.view(),
                    state.rec.view(),
                    Some(&state.baseline),
                    &state.classifier,
                    &mut state.stats,
                    &batch,
                    &seeds,
                    cfg.alpha,
                    &opts,
                )?;
                if obj.is_finite() {
                    step_all(&mut opt, &mut state, &out.grads, &mask);
                }
                obj
            } else {
                unlabeled_batches += 1;
                let mut batch = Vec::with_capacity(cfg.train.batch_size);
                for _ in 0..cfg.train.batch_size {
                    batch.push(unlabeled.records[rng.random_range(0..n_u)].v.view());
                    seeds.push(rng.random::<u64>());
                }
                let (obj, out) = unlabeled_objective(
                    state.params.view(),
                    state.rec.view(),
                    Some(&state.baseline),
                    &state.classifier,
                    &mut state.stats,
                    &batch,
                    &seeds,
                    &opts,
                )?;
                if obj.is_finite() {
                    step_all(&mut opt, &mut state, &out.grads, &mask);
                }
                obj
            };
            if !objective.is_finite() {
                nan_streak += 1;
                if nan_streak >= 2 {
                    abort = Some(format!(
                        "non-finite objective twice in a row at epoch {epoch}; \
                         skipped non-finite tensors so far: {}",
                        opt.skipped_nonfinite
                    ));
                    break 'epochs;
                }
                continue;
            }
            nan_streak = 0;
            epoch_obj += objective;
            epoch_batches += 1;
        }

        let mut correct = 0usize;
        let mut total = 0usize;
        for &i in &eval_idx {
            for (x, style) in &prepared[i].pairs {
                let pi = state.classifier.classify(x.view())?;
                let pred = pi
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(s, _)| s)
                    .unwrap();
                correct += usize::from(pred == *style);
                total += 1;
            }
        }
        log.push(AccuracyRecord {
            epoch,
            accuracy: correct as f64 / total.max(1) as f64,
            objective: epoch_obj / epoch_batches.max(1) as f64,
        });
    }

    Ok(SemiOutcome { state, log, labeled_batches, unlabeled_batches, abort })
}

fn step_all(
    opt: &mut RmsProp,
    state: &mut SemiState,
    grads: &crate::params::GradientSet,
    mask: &dyn Fn(&str) -> bool,
) {
    opt.step_masked(&mut state.params, grads, mask);
    opt.step_masked(&mut state.rec, grads, mask);
    opt.step_masked(&mut state.baseline, grads, mask);
    opt.step_masked(&mut state.classifier, grads, mask);
}
