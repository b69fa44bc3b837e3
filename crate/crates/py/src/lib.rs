//! Python bindings. One `Model` class wraps the full parameter stack
//! (generative, recognition, baselines, optional classifier, optional
//! normalization statistics) and drives training, generation, prediction,
//! and classification in-process. Matrices cross the boundary as plain
//! lists of row lists, so the module has no Python-side dependencies.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fctsbn_core::data::{
    load_checkpoint, normalize, plant_model, save_checkpoint, Checkpoint, LabelWindow, NormStats,
    PlantConfig, SequenceDataset, SequenceRecord,
};
use fctsbn_core::deep::{deep_exact_bound, deep_generate, deep_log_marginal};
use fctsbn_core::dims::{Dims, ObsKind};
use fctsbn_core::error::Error;
use fctsbn_core::gradcheck::{standard_suite, CheckSettings};
use fctsbn_core::nvil::{
    minibatch_views, one_step_mae, train, BaselineParams, NvilOptions, SignalStats, SubSeq,
    TrainConfig, TrainState,
};
use fctsbn_core::params::{DeepParams, DeepRecognition, TensorMap};
use fctsbn_core::schedule::{Encoding, StyleSchedule, TransitionSpec};
use fctsbn_core::semi::{semi_train, window_input, ClassifierParams, SemiConfig};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape(_) => PyValueError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
    }
}

fn parse_obs(name: &str) -> PyResult<ObsKind> {
    match name {
        "real" => Ok(ObsKind::Real),
        "binary" => Ok(ObsKind::Binary),
        "count" => Ok(ObsKind::Count),
        other => Err(PyValueError::new_err(format!(
            "obs must be 'real', 'binary', or 'count', got '{other}'"
        ))),
    }
}

fn to_array2(what: &str, rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn matrix(m: ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.unbind().into()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.unbind().into()
        }
    })
}

fn records_to_py<T: serde::Serialize>(py: Python<'_>, records: &[T]) -> PyResult<Py<PyAny>> {
    let value = serde_json::to_value(records)
        .map_err(|e| PyRuntimeError::new_err(format!("serializing log: {e}")))?;
    json_to_py(py, &value)
}

/// A conditional temporal sigmoid belief network: generative and
/// recognition stacks plus their training companions.
#[pyclass]
struct Model {
    dims: Dims,
    obs: ObsKind,
    factored: bool,
    params: DeepParams,
    rec: DeepRecognition,
    baseline: BaselineParams,
    classifier: Option<ClassifierParams>,
    norm: Option<NormStats>,
}

impl Model {
    fn from_state(
        dims: Dims,
        obs: ObsKind,
        factored: bool,
        params: DeepParams,
        rec: DeepRecognition,
        baseline: BaselineParams,
    ) -> Self {
        Model { dims, obs, factored, params, rec, baseline, classifier: None, norm: None }
    }

    fn normalized(&self, v: &Array2<f64>) -> Array2<f64> {
        match &self.norm {
            Some(stats) => stats.apply(v.view()),
            None => v.clone(),
        }
    }

    fn dataset(&self, sequences: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>) -> PyResult<SequenceDataset> {
        let mut records = Vec::with_capacity(sequences.len());
        for (i, (v, y)) in sequences.iter().enumerate() {
            records.push(SequenceRecord {
                id: format!("seq{i:03}"),
                v: to_array2("observations", v)?,
                y: Some(to_array2("styles", y)?),
                labels: Vec::new(),
            });
        }
        Ok(SequenceDataset { obs: self.obs, records })
    }
}

#[pymethods]
impl Model {
    /// Freshly initialized model.
    ///
    /// Args:
    ///     visible: observation dimension per frame.
    ///     hidden: bottom hidden-layer width.
    ///     styles: number of style labels.
    ///     factors: factor count for the factored parameterization.
    ///     order: autoregressive window length in frames.
    ///     obs: "real", "binary", or "count".
    ///     factored: use the three-way factored weights.
    ///     upper_layers: optional hidden widths stacked above `hidden`.
    ///     seed: initialization seed.
    #[new]
    #[pyo3(signature = (visible, hidden, styles, factors=1, order=1, obs="real",
                        factored=false, upper_layers=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        visible: usize,
        hidden: usize,
        styles: usize,
        factors: usize,
        order: usize,
        obs: &str,
        factored: bool,
        upper_layers: Option<Vec<usize>>,
        seed: u64,
    ) -> PyResult<Self> {
        let obs = parse_obs(obs)?;
        let mut dims = Dims::new(visible, hidden, styles, factors, order);
        dims.layers.extend(upper_layers.unwrap_or_default());
        dims.validate().map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DeepParams::init(&dims, obs, factored, &mut rng).map_err(err)?;
        let rec = DeepRecognition::init(&dims, factored, &mut rng).map_err(err)?;
        let baseline = BaselineParams::init(
            dims.visible * dims.order + dims.styles,
            fctsbn_core::nvil::baseline::DEFAULT_HIDDEN,
            &mut rng,
        )
        .map_err(err)?;
        Ok(Model::from_state(dims, obs, factored, params, rec, baseline))
    }

    #[getter]
    fn visible(&self) -> usize {
        self.dims.visible
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.dims.hidden()
    }

    #[getter]
    fn styles(&self) -> usize {
        self.dims.styles
    }

    #[getter]
    fn order(&self) -> usize {
        self.dims.order
    }

    #[getter]
    fn obs(&self) -> String {
        self.obs.to_string()
    }

    #[getter]
    fn factored(&self) -> bool {
        self.factored
    }

    fn param_count(&self) -> usize {
        self.params.param_count() + self.rec.param_count()
    }

    fn tensor_names(&self) -> Vec<(String, (usize, usize))> {
        let mut names = self.params.tensor_names();
        names.extend(self.rec.tensor_names());
        names.extend(self.baseline.tensor_names());
        if let Some(c) = &self.classifier {
            names.extend(c.tensor_names());
        }
        names
    }

    fn get_tensor(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let mut found = None;
        let mut grab = |n: &str, t: &Array2<f64>| {
            if n == name {
                found = Some(matrix(t.view()));
            }
        };
        self.params.visit(&mut grab);
        self.rec.visit(&mut grab);
        self.baseline.visit(&mut grab);
        if let Some(c) = &self.classifier {
            c.visit(&mut grab);
        }
        found.ok_or_else(|| PyValueError::new_err(format!("no tensor named '{name}'")))
    }

    /// Persist everything (including normalization statistics and the
    /// classifier when present) into one checkpoint file.
    fn save(&self, path: &str) -> PyResult<()> {
        let mut parts: Vec<&dyn TensorMap> = vec![&self.params, &self.rec, &self.baseline];
        if let Some(c) = &self.classifier {
            parts.push(c);
        }
        let mut ckpt = Checkpoint::from_parts(self.dims.clone(), self.obs, self.factored, &parts);
        if let Some(stats) = &self.norm {
            ckpt.insert_norm_stats(stats);
        }
        save_checkpoint(Path::new(path), &ckpt).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = load_checkpoint(Path::new(path)).map_err(err)?;
        let params = ckpt.build_deep().map_err(err)?;
        let rec = ckpt
            .build_deep_recognition()
            .map_err(err)?
            .ok_or_else(|| PyValueError::new_err("checkpoint has no recognition tensors"))?;
        let baseline = match ckpt.build_baseline().map_err(err)? {
            Some(b) => b,
            None => BaselineParams::init(
                ckpt.dims.visible * ckpt.dims.order + ckpt.dims.styles,
                fctsbn_core::nvil::baseline::DEFAULT_HIDDEN,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .map_err(err)?,
        };
        let mut model = Model::from_state(
            ckpt.dims.clone(),
            ckpt.obs,
            ckpt.factored,
            params,
            rec,
            baseline,
        );
        model.classifier = ckpt.build_classifier().map_err(err)?;
        model.norm = ckpt.norm_stats();
        Ok(model)
    }

    /// Sample observations under a style schedule. Exactly one of `style`,
    /// `transition` (from, to, center_frame, width_frames), or `blend`
    /// (one weight per style) selects the schedule. Returns (v, y) as row
    /// lists; v is denormalized when the model carries statistics.
    #[pyo3(signature = (frames, style=None, transition=None, blend=None, seed=0))]
    fn generate(
        &self,
        frames: usize,
        style: Option<usize>,
        transition: Option<(usize, usize, f64, f64)>,
        blend: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let picked = usize::from(style.is_some())
            + usize::from(transition.is_some())
            + usize::from(blend.is_some());
        if picked != 1 {
            return Err(PyValueError::new_err(
                "pass exactly one of style=, transition=, or blend=",
            ));
        }
        let styles = self.dims.styles;
        let schedule = if let Some(s) = style {
            StyleSchedule::constant(s, styles, frames).map_err(err)?
        } else if let Some((from, to, center_frame, width_frames)) = transition {
            let spec = TransitionSpec { from, to, center_frame, width_frames };
            StyleSchedule::transition(&spec, styles, frames).map_err(err)?
        } else {
            let weights = blend.expect("one schedule picked");
            if weights.len() != styles {
                return Err(PyValueError::new_err(format!(
                    "blend needs {styles} weights, got {}",
                    weights.len()
                )));
            }
            let rows = Array2::from_shape_fn((frames, styles), |(_, s)| weights[s]);
            StyleSchedule::from_rows(rows, Encoding::Blend).map_err(err)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seed_frames = Array2::zeros((self.dims.order, self.dims.visible));
        let (v, _) =
            deep_generate(&self.params, seed_frames.view(), &schedule, &mut rng).map_err(err)?;
        let v = match &self.norm {
            Some(stats) => stats.invert(v.view()),
            None => v,
        };
        Ok((matrix(v.view()), matrix(schedule.rows())))
    }

    /// Monte Carlo evidence lower bound for one sequence: mean and
    /// standard error over `samples` posterior draws.
    #[pyo3(signature = (v, y, samples=100, seed=0))]
    fn bound(
        &self,
        v: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        samples: usize,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        if samples == 0 {
            return Err(PyValueError::new_err("samples must be positive"));
        }
        let v = self.normalized(&to_array2("observations", &v)?);
        let y = to_array2("styles", &y)?;
        let batch: Vec<SubSeq> =
            (0..samples).map(|_| SubSeq { v: v.view(), y: y.view() }).collect();
        let seeds: Vec<u64> = (0..samples as u64).map(|k| seed.wrapping_add(k)).collect();
        let mut stats = SignalStats::new(0.9);
        let opts = NvilOptions { use_baseline: false, normalize_signals: false };
        let out = minibatch_views(
            self.params.view(),
            self.rec.view(),
            None,
            &mut stats,
            &batch,
            &seeds,
            &opts,
        )
        .map_err(err)?;
        let n = out.element_raw.len() as f64;
        let mean = out.element_raw.iter().sum::<f64>() / n;
        let var = out.element_raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (n - 1.0).max(1.0);
        Ok((mean, (var / n).sqrt()))
    }

    /// Exact bound by enumerating every hidden path; small models only.
    fn exact_bound(&self, v: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
        let v = self.normalized(&to_array2("observations", &v)?);
        let y = to_array2("styles", &y)?;
        deep_exact_bound(&self.params, &self.rec, v.view(), y.view()).map_err(err)
    }

    /// Exact log marginal likelihood by enumeration; small models only.
    fn log_marginal(&self, v: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
        let v = self.normalized(&to_array2("observations", &v)?);
        let y = to_array2("styles", &y)?;
        deep_log_marginal(&self.params, v.view(), y.view()).map_err(err)
    }

    /// One-step-ahead mean absolute error per dimension per frame over
    /// (observations, styles) sequence pairs.
    #[pyo3(signature = (sequences, samples=5, seed=0))]
    fn predict_mae(
        &self,
        sequences: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
        samples: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let mut owned = Vec::with_capacity(sequences.len());
        for (v, y) in &sequences {
            let v = self.normalized(&to_array2("observations", v)?);
            owned.push((v, to_array2("styles", y)?));
        }
        let pairs: Vec<(ArrayView2<f64>, ArrayView2<f64>)> =
            owned.iter().map(|(v, y)| (v.view(), y.view())).collect();
        one_step_mae(&self.params, &self.rec, &pairs, samples, seed).map_err(err)
    }

    /// Style posterior for one classifier window of frames.
    fn classify(&self, window: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let classifier = self
            .classifier
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no classifier; run fit_semi first"))?;
        let v = self.normalized(&to_array2("window", &window)?);
        let frames = classifier.w.ncols() / self.dims.visible;
        if v.nrows() != frames {
            return Err(PyValueError::new_err(format!(
                "classifier expects {frames} frames, got {}",
                v.nrows()
            )));
        }
        let x = window_input(v.view(), 0, frames).map_err(err)?;
        Ok(classifier.classify(x.view()).map_err(err)?.to_vec())
    }

    /// Variational training on fully labeled sequences. `config_json`
    /// overrides hyperparameters (same schema as the CLI's "train"
    /// section). Returns the per-epoch metrics records.
    #[pyo3(signature = (sequences, config_json=None, normalize_data=true))]
    fn fit(
        &mut self,
        py: Python<'_>,
        sequences: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
        config_json: Option<&str>,
        normalize_data: bool,
    ) -> PyResult<Py<PyAny>> {
        let cfg: TrainConfig = match config_json {
            Some(text) => serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
            None => TrainConfig::default(),
        };
        let raw = self.dataset(sequences)?;
        let (ds, stats) = if self.obs == ObsKind::Real && normalize_data {
            let (ds, stats) = normalize(&raw).map_err(err)?;
            (ds, Some(stats))
        } else {
            (raw, None)
        };
        let out = train(&self.dims, self.obs, self.factored, &cfg, &ds).map_err(err)?;
        let TrainState { params, rec, baseline, .. } = out.state;
        self.params = params;
        self.rec = rec;
        self.baseline = baseline;
        self.norm = stats;
        if let Some(msg) = out.abort {
            return Err(PyRuntimeError::new_err(msg));
        }
        records_to_py(py, &out.metrics)
    }

    /// Semi-supervised training. `labeled` pairs observations with
    /// (start_frame, style) windows; `unlabeled` is bare observations.
    /// Returns the per-epoch accuracy records and installs the trained
    /// classifier on the model.
    #[pyo3(signature = (labeled, unlabeled, config_json=None, normalize_data=true))]
    fn fit_semi(
        &mut self,
        py: Python<'_>,
        labeled: Vec<(Vec<Vec<f64>>, Vec<(usize, usize)>)>,
        unlabeled: Vec<Vec<Vec<f64>>>,
        config_json: Option<&str>,
        normalize_data: bool,
    ) -> PyResult<Py<PyAny>> {
        let cfg: SemiConfig = match config_json {
            Some(text) => serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
            None => SemiConfig::default(),
        };
        let mut records = Vec::with_capacity(labeled.len());
        for (i, (v, windows)) in labeled.iter().enumerate() {
            records.push(SequenceRecord {
                id: format!("lab{i:03}"),
                v: to_array2("observations", v)?,
                y: None,
                labels: windows
                    .iter()
                    .map(|&(start, style)| LabelWindow { start, style })
                    .collect(),
            });
        }
        let mut labeled_ds = SequenceDataset { obs: self.obs, records };
        let mut unlabeled_records = Vec::with_capacity(unlabeled.len());
        for (i, v) in unlabeled.iter().enumerate() {
            unlabeled_records.push(SequenceRecord {
                id: format!("unl{i:03}"),
                v: to_array2("observations", v)?,
                y: None,
                labels: Vec::new(),
            });
        }
        let mut unlabeled_ds = SequenceDataset { obs: self.obs, records: unlabeled_records };

        let stats = if self.obs == ObsKind::Real && normalize_data {
            let (ds, stats) = normalize(&labeled_ds).map_err(err)?;
            labeled_ds = ds;
            for r in &mut unlabeled_ds.records {
                r.v = stats.apply(r.v.view());
            }
            Some(stats)
        } else {
            None
        };
        let out = semi_train(&self.dims, self.obs, self.factored, &cfg, &labeled_ds, &unlabeled_ds)
            .map_err(err)?;
        self.params = out.state.params;
        self.rec = out.state.rec;
        self.baseline = out.state.baseline;
        self.classifier = Some(out.state.classifier);
        self.norm = stats;
        if let Some(msg) = out.abort {
            return Err(PyRuntimeError::new_err(msg));
        }
        records_to_py(py, &out.log)
    }
}

/// Synthetic two-regime data from a planted model. Returns
/// (model_with_true_generative_parameters, sequences) where each sequence
/// is (observations, styles, [(start_frame, style), ...]).
#[pyfunction]
#[pyo3(signature = (visible, hidden, styles, factors=1, order=1, obs="real",
                    sequences=20, frames=50, separation=3.0, label_window=2, seed=0))]
#[allow(clippy::too_many_arguments)]
fn plant(
    visible: usize,
    hidden: usize,
    styles: usize,
    factors: usize,
    order: usize,
    obs: &str,
    sequences: usize,
    frames: usize,
    separation: f64,
    label_window: usize,
    seed: u64,
) -> PyResult<(Model, Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<(usize, usize)>)>)> {
    let obs = parse_obs(obs)?;
    let dims = Dims::new(visible, hidden, styles, factors, order);
    dims.validate().map_err(err)?;
    let cfg = PlantConfig {
        num_sequences: sequences,
        frames_per_seq: frames,
        style_separation: separation,
        label_window,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, ds) = plant_model(&dims, obs, &cfg, &mut rng).map_err(err)?;
    let rec = DeepRecognition::init(&dims, false, &mut rng).map_err(err)?;
    let baseline = BaselineParams::init(
        dims.visible * dims.order + dims.styles,
        fctsbn_core::nvil::baseline::DEFAULT_HIDDEN,
        &mut rng,
    )
    .map_err(err)?;
    let model = Model::from_state(
        dims,
        obs,
        false,
        DeepParams { base: truth, upper: Vec::new() },
        rec,
        baseline,
    );
    let data = ds
        .records
        .into_iter()
        .map(|r| {
            let y = r.y.map(|y| matrix(y.view())).unwrap_or_default();
            let labels = r.labels.iter().map(|l| (l.start, l.style)).collect();
            (matrix(r.v.view()), y, labels)
        })
        .collect();
    Ok((model, data))
}

/// Finite-difference audit over the standard configuration grid. Returns
/// {"pass": bool, "tensors": int, "max_rel_err": float, "failing": [str]}.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
    let report = standard_suite(seed, &CheckSettings::default()).map_err(err)?;
    let max_rel =
        report.tensors.iter().map(|t| t.max_rel_err).fold(0.0f64, f64::max);
    let failing: Vec<String> = report
        .failing()
        .iter()
        .map(|t| format!("{}/{}", t.config, t.tensor))
        .collect();
    let dict = PyDict::new(py);
    dict.set_item("pass", report.pass)?;
    dict.set_item("tensors", report.tensors.len())?;
    dict.set_item("max_rel_err", max_rel)?;
    dict.set_item("failing", failing)?;
    Ok(dict.unbind().into())
}

#[pymodule]
fn fctsbn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(plant, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
