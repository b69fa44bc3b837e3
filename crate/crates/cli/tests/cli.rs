//! End-to-end tests against the compiled binary: exit codes, artifact
//! layout, report fields, and the documented determinism guarantees.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

use fctsbn_core::data::{
    plant_model, save_checkpoint, save_dataset, Checkpoint, PlantConfig, SequenceDataset,
};
use fctsbn_core::dims::{Dims, ObsKind};
use fctsbn_core::nvil::{TrainConfig, TrainState};
use fctsbn_core::params::{DeepParams, TensorMap};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fctsbn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is newline-delimited JSON"))
        .collect()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// Small planted two-style dataset plus its true generative parameters.
fn plant(dir: &Path, seed: u64) -> (Dims, DeepParams, SequenceDataset) {
    let dims = Dims::new(3, 4, 2, 2, 1);
    let cfg = PlantConfig {
        num_sequences: 6,
        frames_per_seq: 30,
        style_separation: 3.0,
        label_window: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, ds) = plant_model(&dims, ObsKind::Real, &cfg, &mut rng).unwrap();
    save_dataset(dir, &ds).unwrap();
    (dims.clone(), DeepParams { base: truth, upper: Vec::new() }, ds)
}

fn save_truth_checkpoint(path: &Path, dims: &Dims, params: &DeepParams) {
    let ckpt = Checkpoint::from_parts(dims.clone(), ObsKind::Real, false, &[params]);
    save_checkpoint(path, &ckpt).unwrap();
}

fn model_section() -> Value {
    json!({"visible": 3, "hidden": 4, "styles": 2, "factors": 2, "order": 1, "obs": "real"})
}

#[test]
fn train_without_dataset_path_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &json!({"model": model_section()}));
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.train_dir"), "stderr: {err}");
}

#[test]
fn train_on_missing_directory_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "data": {"train_dir": tmp.path().join("nope")},
        }),
    );
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let tmp = TempDir::new().unwrap();
    let mut model = model_section();
    model["window_size"] = json!(9);
    let cfg = write_config(tmp.path(), &json!({"model": model}));
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_size"));
}

#[test]
fn train_zero_epochs_checkpoint_equals_initialization() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    let (dims, _, _) = plant(&data_dir, 1);
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "data": {"train_dir": data_dir, "normalize": false},
            "train": {"seed": 7, "epochs": 5, "batch_size": 2, "subseq_len": 10},
        }),
    );
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = fctsbn_core::data::load_checkpoint(&out_dir.join("model.ckpt")).unwrap();
    let mut tcfg = TrainConfig::default();
    tcfg.seed = 7;
    tcfg.batch_size = 2;
    tcfg.subseq_len = 10;
    let fresh = TrainState::init(&dims, ObsKind::Real, false, &tcfg).unwrap();
    for (name, tensor) in fresh.params.to_tensor_map() {
        assert_eq!(ckpt.tensors.get(&name), Some(&tensor), "tensor {name} drifted");
    }
    for (name, tensor) in fresh.rec.to_tensor_map() {
        assert_eq!(ckpt.tensors.get(&name), Some(&tensor), "tensor {name} drifted");
    }
    assert_eq!(fs::read_to_string(out_dir.join("metrics.ndjson")).unwrap(), "");
}

#[test]
fn deterministic_training_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    plant(&data_dir, 2);
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "data": {"train_dir": data_dir},
            "train": {"seed": 3, "epochs": 2, "batch_size": 3, "subseq_len": 15,
                      "predict_samples": 2},
        }),
    );
    let run_once = |dir: &Path| {
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--deterministic",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_once(&a);
    run_once(&b);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(
        fs::read(a.join("metrics.ndjson")).unwrap(),
        fs::read(b.join("metrics.ndjson")).unwrap()
    );
}

#[test]
fn semi_supervised_training_writes_classifier_and_accuracy_log() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    plant(&data_dir, 3);
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "data": {"train_dir": data_dir},
            "train": {"seed": 5, "epochs": 3, "batch_size": 3, "holdout_fraction": 0.34,
                      "predict_samples": 2},
            "semi": {},
        }),
    );
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(out_dir.join("accuracy.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let ckpt = fctsbn_core::data::load_checkpoint(&out_dir.join("model.ckpt")).unwrap();
    assert!(ckpt.build_classifier().unwrap().is_some());
    assert!(ckpt.norm_stats().is_some());

    // The classifier rides along for the classify command.
    let out = run(&[
        "classify",
        "--checkpoint",
        out_dir.join("model.ckpt").to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &stdout_lines(&out)[0];
    assert_eq!(report["window"], json!(2));
    assert!(report["accuracy"].as_f64().unwrap() > 0.0);
}

#[test]
fn generate_hard_switch_and_default_ramp_span() {
    let tmp = TempDir::new().unwrap();
    let (dims, truth, _) = plant(&tmp.path().join("data"), 4);
    let ckpt_path = tmp.path().join("truth.ckpt");
    save_truth_checkpoint(&ckpt_path, &dims, &truth);

    // Width zero degenerates to a hard switch at the center frame.
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "generate": {"frames": 100, "schedule": {
                "kind": "transition", "from": 0, "to": 1,
                "center_frame": 50.0, "width_frames": 0.0}},
        }),
    );
    let out_dir = tmp.path().join("hard");
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let y = read_csv(&out_dir.join("generated_y.csv"));
    for (t, row) in y.rows().into_iter().enumerate() {
        let expect = if t < 50 { [1.0, 0.0] } else { [0.0, 1.0] };
        assert_eq!(row.as_slice().unwrap(), expect, "frame {t}");
    }

    // The default ramp spends 60 +- 2 frames between 10% and 90%.
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "generate": {"frames": 300, "schedule": {
                "kind": "transition", "from": 0, "to": 1, "center_frame": 150.0}},
        }),
    );
    let out_dir = tmp.path().join("ramp");
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let y = read_csv(&out_dir.join("generated_y.csv"));
    let ramp = y.column(1).iter().filter(|&&w| (0.1..=0.9).contains(&w)).count() as i64;
    assert!((ramp - 60).abs() <= 2, "ramp spans {ramp} frames");
    for row in y.rows() {
        assert!((row.sum() - 1.0).abs() <= 1e-9 && row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn generate_blend_of_opposed_biases_has_zero_mean() {
    let tmp = TempDir::new().unwrap();
    let (dims, mut truth, _) = plant(&tmp.path().join("data"), 5);
    // Strip the hidden-state head so the emission mean is exactly the
    // blended style bias.
    truth.visit_mut(&mut |name, t| {
        if name.starts_with("model/w2") {
            t.fill(0.0);
        }
    });
    let ckpt_path = tmp.path().join("truth.ckpt");
    save_truth_checkpoint(&ckpt_path, &dims, &truth);

    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "generate": {"frames": 10_000, "schedule": {
                "kind": "blend", "weights": [0.5, 0.5]}},
            "seed": 11,
        }),
    );
    let out_dir = tmp.path().join("blend");
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_csv(&out_dir.join("generated_v.csv"));
    assert_eq!(v.nrows(), 10_000);
    for d in 0..v.ncols() {
        let col = v.column(d);
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (col.len() - 1) as f64;
        let se = (var / col.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "dim {d}: mean {mean} vs 3 se {}", 3.0 * se);
    }
}

#[test]
fn generate_rejects_out_of_range_style() {
    let tmp = TempDir::new().unwrap();
    let (dims, truth, _) = plant(&tmp.path().join("data"), 6);
    let ckpt_path = tmp.path().join("truth.ckpt");
    save_truth_checkpoint(&ckpt_path, &dims, &truth);
    let cfg = write_config(
        tmp.path(),
        &json!({
            "model": model_section(),
            "generate": {"frames": 10, "schedule": {"kind": "constant", "style": 5}},
        }),
    );
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--out",
        tmp.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn predict_truth_beats_noise_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    let (dims, truth, _) = plant(&data_dir, 7);

    // Both checkpoints share a fresh recognition stack; only the
    // generative side differs.
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let rec = fctsbn_core::params::DeepRecognition::init(&dims, false, &mut rng).unwrap();
    let truth_path = tmp.path().join("truth.ckpt");
    let ckpt =
        Checkpoint::from_parts(dims.clone(), ObsKind::Real, false, &[&truth, &rec]);
    save_checkpoint(&truth_path, &ckpt).unwrap();

    let noise = DeepParams::init(&dims, ObsKind::Real, false, &mut rng).unwrap();
    let noise_path = tmp.path().join("noise.ckpt");
    let ckpt =
        Checkpoint::from_parts(dims.clone(), ObsKind::Real, false, &[&noise, &rec]);
    save_checkpoint(&noise_path, &ckpt).unwrap();

    let mae = |path: &Path| -> (f64, String) {
        let out = run(&[
            "predict",
            "--checkpoint",
            path.to_str().unwrap(),
            "--data",
            data_dir.to_str().unwrap(),
            "--seed",
            "13",
            "--samples",
            "3",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let line = String::from_utf8_lossy(&out.stdout).trim().to_string();
        let report: Value = serde_json::from_str(&line).unwrap();
        (report["mae"].as_f64().unwrap(), line)
    };
    let (truth_mae, first) = mae(&truth_path);
    let (noise_mae, _) = mae(&noise_path);
    assert!(
        truth_mae < noise_mae,
        "true parameters predict worse ({truth_mae}) than noise ({noise_mae})"
    );
    let (_, second) = mae(&truth_path);
    assert_eq!(first, second);
}

#[test]
fn predict_rejects_observation_kind_mismatch() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    let (dims, truth, _) = plant(&data_dir, 8);
    let ckpt_path = tmp.path().join("truth.ckpt");
    save_truth_checkpoint(&ckpt_path, &dims, &truth);
    let mut model = model_section();
    model["obs"] = json!("binary");
    let cfg = write_config(tmp.path(), &json!({"model": model}));
    let out = run(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("binary"));
}

#[test]
fn classify_untrained_guesses_uniformly() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    let (dims, truth, ds) = plant(&data_dir, 9);
    // No classifier tensors in this checkpoint.
    let ckpt_path = tmp.path().join("truth.ckpt");
    save_truth_checkpoint(&ckpt_path, &dims, &truth);

    let out = run(&[
        "classify",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--seed",
        "21",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &stdout_lines(&out)[0];
    let windows: usize = report["windows"].as_u64().unwrap() as usize;
    let expected: usize = ds.records.iter().map(|r| r.labels.len()).sum();
    assert_eq!(windows, expected);
    let accuracy = report["accuracy"].as_f64().unwrap();
    let se = (0.5 * 0.5 / windows as f64).sqrt();
    assert!(
        (accuracy - 0.5).abs() <= 3.0 * se,
        "untrained accuracy {accuracy} vs uniform 0.5 +- {}",
        3.0 * se
    );
}

#[test]
fn gradcheck_passes_then_flags_injected_fault() {
    let out = run(&["gradcheck", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    let summary = lines.last().unwrap();
    assert_eq!(summary["pass"], json!(true));
    assert!(summary["max_rel_err"].as_f64().unwrap() <= 1e-4);

    let out = run(&["gradcheck", "--seed", "3", "--corrupt", "model/b"]);
    assert_eq!(out.status.code(), Some(1));
    let lines = stdout_lines(&out);
    for line in &lines[..lines.len() - 1] {
        let flagged = line["pass"] == json!(false);
        let is_target = line["tensor"] == json!("model/b");
        assert_eq!(flagged, is_target, "unexpected verdict: {line}");
    }
}

#[test]
fn gradcheck_report_is_deterministic() {
    let a = run(&["gradcheck", "--seed", "9"]);
    let b = run(&["gradcheck", "--seed", "9"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn audit_enum_passes() {
    let out = run(&["audit-enum", "--instances", "4", "--samples", "4000", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 5);
    assert_eq!(lines.last().unwrap()["pass"], json!(true));
}

fn read_csv(path: &Path) -> Array2<f64> {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let (n, m) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).unwrap()
}
