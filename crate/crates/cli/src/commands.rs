//! Subcommand implementations. Each runs one library pipeline, writes its
//! artifacts under the output directory, and prints newline-delimited JSON
//! reports on stdout. The boolean result is the check verdict: `false`
//! exits 1 without an error message (the report already says why).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use fctsbn_core::data::{
    load_checkpoint, load_dataset, normalize, save_checkpoint, Checkpoint, NormStats,
    SequenceDataset,
};
use fctsbn_core::deep::deep_generate;
use fctsbn_core::dims::ObsKind;
use fctsbn_core::enumerate;
use fctsbn_core::error::{Error, Result};
use fctsbn_core::gradcheck::{standard_suite, CheckSettings};
use fctsbn_core::model;
use fctsbn_core::nvil::{one_step_mae, train, TrainConfig};
use fctsbn_core::params::{GenerativeParams, RecognitionParams};
use fctsbn_core::semi::{expand_labels, semi_train, window_input, ClassifierParams, SemiConfig};

use crate::config::RunConfig;

pub struct Context {
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    fn config(&self) -> Result<&RunConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| Error::config("this command requires --config <path>"))
    }

    /// Explicit --seed wins, then the config's seed, then the fallback.
    fn seed_or(&self, fallback: u64) -> u64 {
        self.seed
            .or_else(|| self.config.as_ref().and_then(|c| c.seed))
            .unwrap_or(fallback)
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_csv(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

fn load_normalized(
    dir: &Path,
    obs: ObsKind,
    stats: Option<&NormStats>,
) -> Result<SequenceDataset> {
    let mut ds = load_dataset(dir, obs)?;
    if ds.is_empty() {
        return Err(Error::config(format!("dataset at '{}' has no sequences", dir.display())));
    }
    if let Some(stats) = stats {
        for r in &mut ds.records {
            r.v = stats.apply(r.v.view());
        }
    }
    Ok(ds)
}

pub fn cmd_train(ctx: &Context, epochs: Option<usize>) -> Result<bool> {
    let cfg = ctx.config()?;
    let dims = cfg.model.dims()?;
    let obs = cfg.model.obs;
    let missing =
        || Error::config("config key 'data.train_dir' is required for train");
    let data_cfg = cfg.data.as_ref().ok_or_else(missing)?;
    let train_dir = data_cfg.train_dir.as_ref().ok_or_else(missing)?;

    let raw = load_dataset(train_dir, obs)?;
    if raw.is_empty() {
        return Err(Error::config(format!(
            "dataset at '{}' (config key 'data.train_dir') has no sequences",
            train_dir.display()
        )));
    }
    let (ds, stats) = if obs == ObsKind::Real && data_cfg.normalize {
        let (ds, stats) = normalize(&raw)?;
        (ds, Some(stats))
    } else {
        (raw, None)
    };

    let mut tcfg: TrainConfig = cfg.train.clone().unwrap_or_default();
    tcfg.seed = ctx.seed_or(tcfg.seed);
    if let Some(epochs) = epochs {
        tcfg.epochs = epochs;
    }

    ensure_out(&ctx.out)?;
    let ckpt_path = ctx.artifact("model.ckpt");
    let abort = if let Some(semi) = &cfg.semi {
        // Unlabeled sequences share the labeled set's scaling.
        let mut unlabeled = match &data_cfg.unlabeled_dir {
            Some(dir) => load_dataset(dir, obs)?,
            None => SequenceDataset { obs, records: Vec::new() },
        };
        if let Some(stats) = &stats {
            for r in &mut unlabeled.records {
                r.v = stats.apply(r.v.view());
            }
        }
        let scfg = SemiConfig {
            train: tcfg,
            alpha: semi.alpha,
            window: semi.window,
            labeled_ratio: semi.labeled_ratio,
        };
        let out = semi_train(&dims, obs, cfg.model.factored, &scfg, &ds, &unlabeled)?;
        let mut ckpt = Checkpoint::from_parts(
            dims,
            obs,
            cfg.model.factored,
            &[&out.state.params, &out.state.rec, &out.state.baseline, &out.state.classifier],
        );
        if let Some(stats) = &stats {
            ckpt.insert_norm_stats(stats);
        }
        save_checkpoint(&ckpt_path, &ckpt)?;
        let mut log = String::new();
        for rec in &out.log {
            log.push_str(&serde_json::to_string(rec).expect("serializable record"));
            log.push('\n');
        }
        write_text(&ctx.artifact("accuracy.ndjson"), &log)?;
        println!(
            "{}",
            json!({
                "command": "train",
                "objective": "semi_supervised",
                "epochs": out.log.len(),
                "labeled_batches": out.labeled_batches,
                "unlabeled_batches": out.unlabeled_batches,
                "final_accuracy": out.log.last().map(|r| r.accuracy),
                "checkpoint": ckpt_path.display().to_string(),
            })
        );
        out.abort
    } else {
        let out = train(&dims, obs, cfg.model.factored, &tcfg, &ds)?;
        let mut ckpt = Checkpoint::from_parts(
            dims,
            obs,
            cfg.model.factored,
            &[&out.state.params, &out.state.rec, &out.state.baseline],
        );
        if let Some(stats) = &stats {
            ckpt.insert_norm_stats(stats);
        }
        save_checkpoint(&ckpt_path, &ckpt)?;
        let mut log = String::new();
        for rec in &out.metrics {
            log.push_str(&serde_json::to_string(rec).expect("serializable record"));
            log.push('\n');
        }
        write_text(&ctx.artifact("metrics.ndjson"), &log)?;
        println!(
            "{}",
            json!({
                "command": "train",
                "objective": "nvil",
                "epochs": out.metrics.len(),
                "final_bound": out.metrics.last().map(|m| m.elbo),
                "final_loss": out.metrics.last().map(|m| -m.elbo),
                "checkpoint": ckpt_path.display().to_string(),
            })
        );
        out.abort
    };
    match abort {
        // Artifacts up to the abort are on disk; surface the diagnostic as
        // a numeric failure.
        Some(msg) => Err(Error::numeric(msg)),
        None => Ok(true),
    }
}

pub fn cmd_generate(ctx: &Context, checkpoint: &Path) -> Result<bool> {
    let cfg = ctx.config()?;
    let gen_cfg = cfg
        .generate
        .as_ref()
        .ok_or_else(|| Error::config("config key 'generate' is required for generate"))?;
    let ckpt = load_checkpoint(checkpoint)?;
    let params = ckpt.build_deep()?;
    let schedule = gen_cfg.schedule.build(ckpt.dims.styles, gen_cfg.frames)?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed_or(0));
    let seed_frames = Array2::zeros((ckpt.dims.order, ckpt.dims.visible));
    let (v, _) = deep_generate(&params, seed_frames.view(), &schedule, &mut rng)?;
    let v = match ckpt.norm_stats() {
        Some(stats) => stats.invert(v.view()),
        None => v,
    };

    ensure_out(&ctx.out)?;
    let v_path = ctx.artifact("generated_v.csv");
    let y_path = ctx.artifact("generated_y.csv");
    write_csv(&v_path, v.view())?;
    write_csv(&y_path, schedule.rows())?;
    println!(
        "{}",
        json!({
            "command": "generate",
            "frames": gen_cfg.frames,
            "observations": v_path.display().to_string(),
            "styles": y_path.display().to_string(),
        })
    );
    Ok(true)
}

/// Pair every sequence with per-frame style rows: explicit side info when
/// present, expanded label windows otherwise.
fn style_rows(ds: &SequenceDataset, styles: usize) -> Result<Vec<Array2<f64>>> {
    ds.records
        .iter()
        .map(|r| match &r.y {
            Some(y) => {
                if y.ncols() != styles {
                    return Err(Error::shape(format!(
                        "sequence '{}' side info has {} columns for {styles} styles",
                        r.id,
                        y.ncols()
                    )));
                }
                Ok(y.clone())
            }
            None => expand_labels(r.v.nrows(), styles, &r.labels).map_err(|_| {
                Error::config(format!(
                    "sequence '{}' has neither side info nor label windows",
                    r.id
                ))
            }),
        })
        .collect()
}

pub fn cmd_predict(ctx: &Context, checkpoint: &Path, data: &Path, samples: Option<usize>) -> Result<bool> {
    let ckpt = load_checkpoint(checkpoint)?;
    if let Some(cfg) = &ctx.config {
        if cfg.model.obs != ckpt.obs {
            return Err(Error::config(format!(
                "config says {} observations but the checkpoint holds {}",
                cfg.model.obs, ckpt.obs
            )));
        }
    }
    let rec = ckpt
        .build_deep_recognition()?
        .ok_or_else(|| Error::config("checkpoint has no recognition tensors"))?;
    let params = ckpt.build_deep()?;
    let stats = ckpt.norm_stats();
    let ds = load_normalized(data, ckpt.obs, stats.as_ref())?;
    let ys = style_rows(&ds, ckpt.dims.styles)?;
    let pairs: Vec<(ArrayView2<f64>, ArrayView2<f64>)> =
        ds.records.iter().zip(&ys).map(|(r, y)| (r.v.view(), y.view())).collect();

    let samples = samples
        .or_else(|| ctx.config.as_ref().and_then(|c| c.predict.as_ref()).map(|p| p.samples))
        .unwrap_or(5);
    let seed = ctx.seed_or(0);
    let mae = one_step_mae(&params, &rec, &pairs, samples, seed)?;
    let frames: usize = ds.records.iter().map(|r| r.v.nrows()).sum();
    println!(
        "{}",
        json!({
            "command": "predict",
            "sequences": ds.records.len(),
            "frames": frames,
            "samples": samples,
            "seed": seed,
            "normalized": stats.is_some(),
            "mae": mae,
        })
    );
    Ok(true)
}

pub fn cmd_classify(ctx: &Context, checkpoint: &Path, data: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(checkpoint)?;
    let classifier = match ckpt.build_classifier()? {
        Some(c) => c,
        // An untrained classifier: all-zero logits, so prediction below
        // reduces to uniform guessing.
        None => ClassifierParams::init(
            ckpt.dims.styles,
            (ckpt.dims.order + 1) * ckpt.dims.visible,
        ),
    };
    let visible = ckpt.dims.visible;
    if classifier.w.ncols() % visible != 0 {
        return Err(Error::shape(format!(
            "classifier input {} is not a multiple of the visible dimension {visible}",
            classifier.w.ncols()
        )));
    }
    let window = classifier.w.ncols() / visible;
    let stats = ckpt.norm_stats();
    let ds = load_normalized(data, ckpt.obs, stats.as_ref())?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed_or(0));
    let mut correct = 0usize;
    let mut total = 0usize;
    for r in &ds.records {
        for l in &r.labels {
            if l.start + window > r.v.nrows() {
                continue;
            }
            let x = window_input(r.v.view(), l.start, window)?;
            let probs = classifier.classify(x.view())?;
            let best = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == best)
                .map(|(s, _)| s)
                .collect();
            let pick = tied[rng.random_range(0..tied.len())];
            correct += usize::from(pick == l.style);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::config(format!(
            "dataset at '{}' has no label windows that fit a {window}-frame classifier",
            data.display()
        )));
    }
    println!(
        "{}",
        json!({
            "command": "classify",
            "windows": total,
            "correct": correct,
            "accuracy": correct as f64 / total as f64,
            "window": window,
            "styles": ckpt.dims.styles,
        })
    );
    Ok(true)
}

pub fn cmd_gradcheck(ctx: &Context, corrupt: Option<String>) -> Result<bool> {
    let settings = CheckSettings { corrupt, ..CheckSettings::default() };
    let report = standard_suite(ctx.seed_or(0), &settings)?;
    let mut worst: f64 = 0.0;
    for t in &report.tensors {
        worst = worst.max(t.max_rel_err);
        println!("{}", serde_json::to_string(t).expect("serializable report"));
    }
    println!(
        "{}",
        json!({
            "command": "gradcheck",
            "tensors": report.tensors.len(),
            "max_rel_err": worst,
            "tolerance": settings.rtol,
            "pass": report.pass,
        })
    );
    Ok(report.pass)
}

pub fn cmd_audit_enum(ctx: &Context, instances: usize, samples: usize) -> Result<bool> {
    let shapes = [(2usize, 3usize), (3, 4), (2, 6), (3, 3), (2, 5), (4, 3), (2, 4)];
    let kinds = [ObsKind::Real, ObsKind::Binary, ObsKind::Count];
    let base_seed = ctx.seed_or(0);
    let mut all_pass = true;
    for i in 0..instances {
        let (j, t) = shapes[i % shapes.len()];
        let obs = kinds[i % kinds.len()];
        let dims = fctsbn_core::dims::Dims::new(2, j, 2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
        let params = GenerativeParams::init(&dims, obs, i % 2 == 0, &mut rng)?;
        let rec = RecognitionParams::init(&dims, i % 2 == 1, &mut rng)?;
        let v = Array2::from_shape_fn((t, dims.visible), |_| match obs {
            ObsKind::Real => rng.random::<f64>() * 2.0 - 1.0,
            ObsKind::Binary => f64::from(rng.random::<f64>() < 0.5),
            ObsKind::Count => rng.random_range(0..3) as f64,
        });
        let y = Array2::from_shape_fn((t, dims.styles), |(r, s)| f64::from(s == r % 2));

        let mass = enumerate::recognition_total_mass(&rec, v.view(), y.view())?;
        let log_z = enumerate::log_marginal(&params, v.view(), y.view())?;
        let mut linear = 0.0;
        enumerate::for_each_hidden_path(j, t, |h| {
            linear += model::log_joint(&params, v.view(), h, y.view())
                .map(f64::exp)
                .unwrap_or(f64::NAN);
        })?;
        let (mc, se) = enumerate::mc_bound(&params, &rec, v.view(), y.view(), samples, &mut rng)?;

        let mass_err = (mass - 1.0).abs();
        let joint_err = (linear.ln() - log_z).abs();
        let pass = mass_err <= 1e-9 && joint_err <= 1e-9 && mc <= log_z + 3.0 * se;
        all_pass &= pass;
        println!(
            "{}",
            json!({
                "instance": i,
                "obs": obs.to_string(),
                "hidden": j,
                "frames": t,
                "recognition_mass_err": mass_err,
                "joint_sum_err": joint_err,
                "log_marginal": log_z,
                "bound_mean": mc,
                "bound_se": se,
                "samples": samples,
                "pass": pass,
            })
        );
    }
    println!(
        "{}",
        json!({"command": "audit-enum", "instances": instances, "pass": all_pass})
    );
    Ok(all_pass)
}
