#!/usr/bin/env python3
"""End-to-end smoke test for the fctsbn extension module.

Builds the cdylib if needed, imports it from a scratch directory, and
drives the main surface: planted data, bounds, prediction, generation,
training, semi-supervised classification, checkpoint round-trips, and the
gradient audit.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_module():
    candidates = [
        ROOT / "target" / "release" / "libfctsbn.so",
        ROOT / "target" / "debug" / "libfctsbn.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        subprocess.run(
            ["cargo", "build", "-p", "fctsbn-py"], cwd=ROOT, check=True
        )
        lib = candidates[1]
    stage = Path(tempfile.mkdtemp(prefix="fctsbn-py-"))
    shutil.copy2(lib, stage / "fctsbn.so")
    sys.path.insert(0, str(stage))
    import fctsbn

    return fctsbn


def ok(label):
    print(f"[ok] {label}")


def main():
    fctsbn = load_module()

    truth, data = fctsbn.plant(
        visible=3, hidden=4, styles=2, sequences=8, frames=30,
        separation=3.0, seed=1,
    )
    assert (truth.visible, truth.hidden, truth.styles) == (3, 4, 2)
    assert truth.obs == "real" and not truth.factored
    assert truth.param_count() > 0
    v0, y0, labels0 = data[0]
    assert len(v0) == 30 and len(v0[0]) == 3
    assert len(y0) == 30 and all(abs(sum(row) - 1.0) < 1e-12 for row in y0)
    assert labels0 and all(0 <= s < 2 for _, s in labels0)
    ok("planted model and dataset")

    # The sampled bound stays below the exact log marginal, and the
    # enumerated bound below both, on a tiny instance.
    tiny_v, tiny_y = [row[:] for row in v0[:3]], [row[:] for row in y0[:3]]
    log_z = truth.log_marginal(tiny_v, tiny_y)
    exact = truth.exact_bound(tiny_v, tiny_y)
    mean, se = truth.bound(tiny_v, tiny_y, samples=400, seed=3)
    assert exact <= log_z + 1e-9
    assert mean <= log_z + 3 * se
    assert abs(mean - exact) <= 4 * se + 1e-6
    ok(f"bounds: exact {exact:.4f} <= marginal {log_z:.4f}, sampled {mean:.4f}")

    pairs = [(v, y) for v, y, _ in data]
    fresh = fctsbn.Model(visible=3, hidden=4, styles=2, seed=9)
    truth_mae = truth.predict_mae(pairs, samples=3, seed=5)
    fresh_mae = fresh.predict_mae(pairs, samples=3, seed=5)
    assert truth_mae < fresh_mae
    assert truth.predict_mae(pairs, samples=3, seed=5) == truth_mae
    ok(f"prediction: truth {truth_mae:.3f} < untrained {fresh_mae:.3f}")

    v, y = truth.generate(frames=40, style=1, seed=2)
    assert len(v) == 40 and all(row == [0.0, 1.0] for row in y)
    v, y = truth.generate(frames=300, transition=(0, 1, 150.0, 60.0), seed=2)
    ramp = sum(1 for row in y if 0.1 <= row[1] <= 0.9)
    assert abs(ramp - 60) <= 2, ramp
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in y)
    v, y = truth.generate(frames=25, blend=[0.5, 0.5], seed=2)
    assert all(row == [0.5, 0.5] for row in y)
    ok("generation: constant, transition ramp, blend")

    model = fctsbn.Model(visible=3, hidden=4, styles=2, factors=2,
                         factored=True, seed=4)
    metrics = model.fit(
        pairs,
        config_json='{"epochs": 2, "batch_size": 4, "subseq_len": 15, '
                    '"predict_samples": 2, "seed": 6}',
    )
    assert len(metrics) == 2
    assert all(math.isfinite(m["elbo"]) and math.isfinite(m["pred_error"])
               for m in metrics)
    ok(f"fit: 2 epochs, final bound {metrics[-1]['elbo']:.3f}")

    labeled = [(v, labels) for v, _, labels in data[:4]]
    unlabeled = [v for v, _, _ in data[4:]]
    log = model.fit_semi(
        labeled, unlabeled,
        config_json='{"train": {"epochs": 2, "batch_size": 4, '
                    '"holdout_fraction": 0.25, "predict_samples": 2, "seed": 6}}',
    )
    assert len(log) == 2 and all(0.0 <= r["accuracy"] <= 1.0 for r in log)
    probs = model.classify([row[:] for row in data[0][0][:2]])
    assert abs(sum(probs) - 1.0) < 1e-9
    ok(f"fit_semi: accuracy log {[round(r['accuracy'], 3) for r in log]}")

    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "model.ckpt")
        model.save(path)
        back = fctsbn.Model.load(path)
        for name, _ in model.tensor_names():
            assert back.get_tensor(name) == model.get_tensor(name), name
        assert back.classify([row[:] for row in data[0][0][:2]]) == probs
    ok("checkpoint round-trip preserves every tensor")

    report = fctsbn.gradcheck(seed=0)
    assert report["pass"], report["failing"]
    assert report["max_rel_err"] <= 1e-4
    ok(f"gradcheck: {report['tensors']} tensors, "
       f"max rel err {report['max_rel_err']:.2e}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
