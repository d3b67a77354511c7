#!/usr/bin/env python3
"""End-to-end smoke test for the fima_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p fima-py --release --features extension-module
    python3 python/smoke_test.py

It generates a miniature synthetic dataset, trains a small fused model for a
few epochs, reconstructs the held-out scans with and without test-time
adaptation, evaluates the predictions, and cross-checks a couple of numeric
kernels against plain-Python references.
"""

import math
import os
import random
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

MINI_CONFIG = """\
# miniature end-to-end configuration
[net]
h = 16
w = 16
stem_channels = 3
stage_channels = 4,8
dstate = 4
conv_kernel = 2
expand = 2
coarse_dim = 8
feature_dim = 8
heads = 2
imus = 2
n_frames = 6

[train]
epochs = 2
lr = 0.001
seed = 1
aug_crop_min = 4
aug_reverse = true

[data]
scans = 10
n_min = 6
n_max = 8
h = 16
w = 16
phantom_mm = 32
imus = 2
split_train = 0.6
split_val = 0.2
"""


def load_module():
    """Import fima_py from the cargo build output."""
    candidates = [
        os.path.join(ROOT, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libfima_py.so", "fima_py.so", "libfima_py.dylib")
    ]
    built = [p for p in candidates if os.path.exists(p)]
    if not built:
        sys.exit(
            "fima_py extension not found; build it with\n"
            "  cargo build -p fima-py --release --features extension-module"
        )
    stage = tempfile.mkdtemp(prefix="fima_py_mod_")
    shutil.copy(built[0], os.path.join(stage, "fima_py.so"))
    sys.path.insert(0, stage)
    import fima_py

    return fima_py


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {name}" + (f" ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def reference_scan(x, delta, b, c_in, a, d, l, c, s):
    """Plain-Python sequential selective scan, the independent oracle."""
    out = [0.0] * (l * c)
    for ch in range(c):
        h = [0.0] * s
        for t in range(l):
            dt = delta[t * c + ch]
            xt = x[t * c + ch]
            y = 0.0
            for j in range(s):
                da = math.exp(dt * a[ch * s + j])
                h[j] = da * h[j] + dt * b[t * s + j] * xt
                y += c_in[t * s + j] * h[j]
            out[t * c + ch] = y + d[ch] * xt
    return out


def main():
    fima = load_module()
    print("module loaded:", fima.__name__)

    # --- numeric kernels against local references --------------------------
    rng = random.Random(7)
    l, c, s = 9, 3, 2
    x = [rng.gauss(0, 1) for _ in range(l * c)]
    delta = [rng.uniform(0.05, 0.5) for _ in range(l * c)]
    b = [rng.gauss(0, 1) for _ in range(l * s)]
    c_in = [rng.gauss(0, 1) for _ in range(l * s)]
    a = [rng.uniform(-1.5, -0.2) for _ in range(c * s)]
    d = [rng.gauss(0, 1) for _ in range(c)]
    got = fima.selective_scan(x, delta, b, c_in, a, d, l, c, s)
    want = reference_scan(x, delta, b, c_in, a, d, l, c, s)
    err = max(abs(u - v) for u, v in zip(got, want))
    check("selective_scan matches python reference", err < 1e-12, f"max diff {err:.2e}")

    row = [3.0, -1.0, 2.0, 10.0, -20.0, 30.0]
    rt = fima.pose_roundtrip(row)
    err = max(abs(u - v) for u, v in zip(rt["row"], row))
    check("pose round-trip", not rt["gimbal"] and err < 1e-9, f"max diff {err:.2e}")

    # --- full pipeline on a miniature dataset ------------------------------
    work = tempfile.mkdtemp(prefix="fima_py_smoke_")
    cfg_path = os.path.join(work, "mini.cfg")
    with open(cfg_path, "w") as f:
        f.write(MINI_CONFIG)

    data = os.path.join(work, "data")
    ids = fima.generate_dataset(cfg_path, data, seed=3)
    check("generate_dataset", len(ids) == 10, f"{len(ids)} scans")

    ckpt = os.path.join(work, "model.ckpt")
    summary = fima.train(cfg_path, data, ckpt, kind="fused")
    check(
        "train",
        summary["epochs_run"] == 2 and math.isfinite(summary["best_val"]),
        f"best val {summary['best_val']:.4f} at epoch {summary['best_epoch']}",
    )

    model = fima.Reconstructor.load(ckpt)
    check("load checkpoint", model.kind == "fused", repr(model))

    test_ids = sorted(p for p in ids if p.startswith("test/"))
    pred_dir = os.path.join(work, "pred")
    os.makedirs(pred_dir)
    n_rows = {}
    for rel in test_ids:
        scan_dir = os.path.join(data, rel)
        rows = model.infer(scan_dir)
        adapted_rows, trace = model.adapt_infer(scan_dir, iterations=3, lr=1e-4)
        assert len(adapted_rows) == len(rows) and len(trace) == 3
        scan_id = os.path.basename(rel)
        n_rows[scan_id] = len(rows)
        pred_path = os.path.join(pred_dir, scan_id + ".csv")
        fima.write_trajectory(pred_path, rows)
        back = fima.read_trajectory(pred_path)
        assert [list(r) for r in back] == [list(r) for r in rows], "trajectory round-trip drifted"
    check("infer + adapt_infer", len(n_rows) == len(test_ids), f"{len(n_rows)} scans")

    report = fima.evaluate(pred_dir, os.path.join(data, "test"))
    check(
        "evaluate",
        report["scans"] == len(test_ids) and not report["skipped"],
        f"mean FDR {report['mean']['fdr']:.2f}%, mean MEA {report['mean']['mea']:.3f} deg",
    )

    # Metrics helper agrees with the evaluation report for a perfect match.
    some_id = sorted(n_rows)[0]
    gt_rows = fima.read_trajectory(os.path.join(data, "test", some_id, "gt_params.csv"))
    m = fima.trajectory_metrics(gt_rows, gt_rows, 16, 16, 0.15, 0.15)
    check(
        "trajectory_metrics self-comparison is zero",
        all(m[k] == 0.0 for k in ("fdr", "adr", "md", "sd", "hd", "mea")),
        str(m),
    )

    shutil.rmtree(work)
    print("smoke test passed")


if __name__ == "__main__":
    main()
