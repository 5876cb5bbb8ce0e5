"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line (run with `pytest -s` to see them
live). The two utility criteria run full pipelines through the CLI in
subprocesses, two at a time; everything else is in-process.
"""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ntksynth import embedding as E
from ntksynth import evaluation as EV
from ntksynth import generator as G
from ntksynth import privacy as P
from ntksynth import tensor as T
from ntksynth.data import DatasetSchema, LabeledDataset, NumericColumn
from ntksynth.ntk import NtkArchitecture, NtkFeatureMap
from ntksynth.tensor import Rng
from ntksynth.toydata import write_two_class_table_with_spec

from conftest import central_diff, max_rel_err


def report(num: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] criterion {num}: {description}{suffix}")
    assert ok, f"criterion {num}: {description}{suffix}"


def run_cli_batch(arg_lists, max_parallel=2):
    """Run CLI invocations two at a time; raise on any failure."""
    pending = [[sys.executable, "-m", "ntksynth.cli", *args] for args in arg_lists]
    running: list[tuple[subprocess.Popen, list]] = []
    while pending or running:
        while pending and len(running) < max_parallel:
            cmd = pending.pop(0)
            running.append((subprocess.Popen(cmd, stdout=subprocess.PIPE,
                                             stderr=subprocess.STDOUT, text=True), cmd))
        proc, cmd = running.pop(0)
        out, _ = proc.communicate()
        if proc.returncode != 0:
            raise RuntimeError(f"{' '.join(cmd)}\nexit {proc.returncode}\n{out}")


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_sensitivity_bound():
    start = time.monotonic()
    m, bound = 100, 2.0 / 100 + 1e-12
    trials, worst = 0, 0.0
    data_rng = np.random.default_rng(0)
    schema = DatasetSchema(tuple(NumericColumn(f"f{i}", 0.0, 1.0) for i in range(6)),
                           "y", ("0", "1", "2"))
    for map_seed in range(20):
        fmap = NtkFeatureMap(NtkArchitecture("fc_1l", 6, (8,), 3), seed=map_seed)
        feats = data_rng.normal(size=(m, 6))
        labels = np.zeros((m, 3))
        labels[np.arange(m), data_rng.integers(0, 3, size=m)] = 1.0
        base = LabeledDataset(feats, labels, schema)
        emb = E.data_embedding(fmap, base).matrix
        for _ in range(50):
            row = int(data_rng.integers(0, m))
            f2, l2 = feats.copy(), labels.copy()
            f2[row] = data_rng.normal(size=6)
            l2[row] = 0.0
            l2[row, data_rng.integers(0, 3)] = 1.0
            emb2 = E.data_embedding(fmap, LabeledDataset(f2, l2, schema)).matrix
            worst = max(worst, float(np.linalg.norm(emb - emb2)))
            trials += 1
    elapsed = time.monotonic() - start
    ok = trials == 1000 and worst <= bound and elapsed < 60.0
    report(1, "embedding sensitivity <= 2/m + 1e-12 on 1000 neighbor pairs", ok,
           f"worst {worst:.6f} vs bound {bound:.6f}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_feature_gradient_and_kernel():
    arch = NtkArchitecture("fc_1l", 5, (7,), 3, "tanh")
    fmap = NtkFeatureMap(arch, seed=1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=5)

    got = fmap.raw_grad_features(x)
    theta = fmap.theta_flat.copy()
    fd = central_diff(
        lambda arrs: NtkFeatureMap.from_flat(arch, arrs[0]).sum_logits(x),
        [theta], h=1e-5)[0]
    err = max_rel_err(got, fd, floor=1e-6)

    pts = rng.normal(size=(20, 5))
    raw = fmap.raw_batch(pts).data
    K = raw @ raw.T
    sym = float(np.max(np.abs(K - K.T)))
    min_eig = float(np.linalg.eigvalsh(K).min())

    ok = err <= 1e-4 and sym == 0.0 and min_eig >= -1e-8
    report(2, "feature gradients match finite differences; kernel symmetric PSD",
           ok, f"rel err {err:.2e}, min eig {min_eig:.2e}")


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_end_to_end_generator_gradient():
    fmap = NtkFeatureMap(NtkArchitecture("fc_1l", 3, (5,), 2, "tanh"), seed=3)
    schema = DatasetSchema(tuple(NumericColumn(f"f{i}", 0.0, 1.0) for i in range(3)),
                           "y", ("a", "b"))
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(30, 3))
    labels = np.zeros((30, 2))
    labels[np.arange(30), rng.integers(0, 2, size=30)] = 1.0
    target = E.release_nonprivate(
        E.data_embedding(fmap, LabeledDataset(feats, labels, schema)))

    gen = G.GeneratorModel(schema, d_code=2, hidden=(6,), seed=5,
                           activation="tanh", use_norm=False)
    batch_rng = Rng(6)
    y = T.uniform_labels(batch_rng, 8, 2).data
    inp = np.concatenate([batch_rng.normal((8, 2)), y], axis=1)

    def loss():
        mu_gen = E.generated_embedding(fmap, gen.forward(inp), y)
        return G.mmd_loss(target, mu_gen)

    lval = loss()
    for p in gen.param_list():
        p.zero_grad()
    lval.backward()

    theta = np.concatenate([p.data.ravel() for p in gen.param_list()])
    grads = np.concatenate([p.grad.ravel() for p in gen.param_list()])
    coords = np.random.default_rng(7).choice(theta.size, size=50, replace=False)

    offsets = np.concatenate([[0], np.cumsum([p.data.size for p in gen.param_list()])])
    worst = 0.0
    for j in coords:
        pi = int(np.searchsorted(offsets, j, side="right")) - 1
        local = j - offsets[pi]
        flat = gen.param_list()[pi].data.ravel()
        orig = flat[local]
        flat[local] = orig + 1e-6
        up = loss().item()
        flat[local] = orig - 1e-6
        down = loss().item()
        flat[local] = orig
        fd = (up - down) / 2e-6
        worst = max(worst, abs(grads[j] - fd) / max(abs(fd), 1e-7))
    report(3, "loss gradient wrt generator params matches finite differences "
              "on 50 coordinates", worst <= 1e-4, f"worst rel err {worst:.2e}")


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_calibration():
    classical = P.classical_sigma(1.0, 1e-5)
    ok_closed = abs(classical - 4.84475) <= 1e-4

    ok_smaller = all(P.analytic_sigma(e, 1e-5) <= P.classical_sigma(e, 1e-5)
                     for e in (0.2, 0.5, 1.0))

    ok_selfcons = all(
        abs(P.analytic_delta(P.analytic_sigma(e, d), e) - d) <= 1e-7
        for e in (0.2, 1.0, 5.0) for d in (1e-6, 1e-5, 1e-3))

    grid = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
    sigmas = [P.analytic_sigma(e, 1e-5) for e in grid]
    ok_mono = all(a > b for a, b in zip(sigmas, sigmas[1:]))

    ok = ok_closed and ok_smaller and ok_selfcons and ok_mono
    report(4, "sigma calibration: closed form, analytic <= classical, "
              "self-consistent, monotone", ok,
           f"classical(1,1e-5)={classical:.6f}")


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_noise_statistics():
    m = 2000
    sigma = P.analytic_sigma(10.0, 1e-5)
    sens = E.sensitivity(m)
    rng = Rng(8)
    draws = np.stack([P.gaussian_mechanism(np.zeros(10), sens, sigma, rng)
                      for _ in range(100_000)])
    got = float(draws.std())
    want = 2.0 * sigma / m
    rel = abs(got - want) / want
    report(5, "per-entry release noise std within 2% of 2*sigma/m over 1e5 draws",
           rel <= 0.02, f"std {got:.3e} vs {want:.3e}, rel {rel:.4f}")


# -- 6 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def digits_container(tmp_path_factory):
    from sklearn.datasets import load_digits
    d = load_digits()
    path = tmp_path_factory.mktemp("digits") / "digits.ntki"
    from ntksynth.data import write_images
    write_images(path, d.images / 16.0, d.target.astype(np.uint8), n_classes=10)
    return path


def _pipeline_args(dataset, out_dir, preset, eps, seed, extra=()):
    return ["pipeline", "--preset", preset, "--dataset", str(dataset),
            "--out-dir", str(out_dir), "--epsilon", eps, "--seed", str(seed), *extra]


def _mean_metric(out_dirs, classifier, metric):
    vals = []
    for out in out_dirs:
        payload = json.loads((Path(out) / "report.json").read_text())
        vals.append(payload["averaged"][classifier][metric])
    return float(np.mean(vals)), vals


def test_criterion_6_desk_scale_image_utility(digits_container, tmp_path):
    start = time.monotonic()
    seeds = [0, 1, 2, 3, 4]
    runs = []
    for eps in ("none", "1"):
        for s in seeds:
            out = tmp_path / f"digits_{eps}_{s}"
            runs.append(_pipeline_args(digits_container, out, "desk_digits", eps, s))
    run_cli_batch(runs, max_parallel=2)

    nonpriv, np_vals = _mean_metric(
        [tmp_path / f"digits_none_{s}" for s in seeds], "logreg", "accuracy")
    priv, p_vals = _mean_metric(
        [tmp_path / f"digits_1_{s}" for s in seeds], "logreg", "accuracy")
    elapsed = time.monotonic() - start

    ok = nonpriv >= 0.75 and priv >= nonpriv - 0.15 and priv >= 0.30
    report(6, "8x8 digits: non-private logreg acc >= 0.75; eps=1 within 0.15 "
              "and >= 0.30", ok,
           f"non-private {nonpriv:.4f} {np.round(np_vals, 3).tolist()}, "
           f"eps=1 {priv:.4f} {np.round(p_vals, 3).tolist()}, "
           f"{elapsed / 60:.1f} min (target < 15)")


# -- 7 ------------------------------------------------------------------------

def _find_adult():
    import os
    for cand in (os.environ.get("NTKSYNTH_ADULT_CSV"), "data/adult.csv"):
        if cand and Path(cand).exists():
            return Path(cand)
    return None


def test_criterion_7_desk_scale_tabular_utility(tmp_path):
    adult = _find_adult()
    seeds = [0, 1, 2, 3, 4]
    if adult is not None:
        spec = Path("data/adult_schema.json")
        runs = [_pipeline_args(adult, tmp_path / f"adult_{s}", "adult", "1", s,
                               ["--schema-spec", str(spec)]) for s in seeds]
        run_cli_batch(runs)
        roc, vals = _mean_metric([tmp_path / f"adult_{s}" for s in seeds],
                                 "logreg", "roc_auc")
        report(7, "adult at (1,1e-5)-DP: mean ROC >= 0.60 over 5 seeds",
               roc >= 0.60, f"mean ROC {roc:.4f} {np.round(vals, 3).tolist()}")
        return

    csv_path, spec_path = tmp_path / "table.csv", tmp_path / "spec.json"
    write_two_class_table_with_spec(csv_path, spec_path, 2500, seed=0,
                                    positive_fraction=0.5)
    runs = []
    for eps in ("none", "1"):
        for s in seeds:
            runs.append(_pipeline_args(
                csv_path, tmp_path / f"tab_{eps}_{s}", "desk_tabular", eps, s,
                ["--schema-spec", str(spec_path)]))
    run_cli_batch(runs, max_parallel=2)

    nonpriv, np_vals = _mean_metric(
        [tmp_path / f"tab_none_{s}" for s in seeds], "logreg", "roc_auc")
    priv, p_vals = _mean_metric(
        [tmp_path / f"tab_1_{s}" for s in seeds], "logreg", "roc_auc")
    ok = nonpriv >= 0.85 and priv >= 0.70
    report(7, "two-class heterogeneous table: ROC >= 0.85 non-private, "
              ">= 0.70 at eps=1", ok,
           f"non-private {nonpriv:.4f} {np.round(np_vals, 3).tolist()}, "
           f"eps=1 {priv:.4f} {np.round(p_vals, 3).tolist()}")


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_privacy_firewall(tmp_path):
    csv_path, spec_path = tmp_path / "t.csv", tmp_path / "s.json"
    write_two_class_table_with_spec(csv_path, spec_path, 400, seed=1)
    out = tmp_path / "run"
    base = ["--dataset", str(csv_path), "--schema-spec", str(spec_path),
            "--out-dir", str(out), "--ntk-width", "30", "--n-iter", "40",
            "--batch", "50", "--d-code", "4", "--epsilon", "1", "--seed", "2",
            "--n-synth", "200", "--eval-seeds", "1", "--gen-hidden", "32_32",
            "--no-gen-norm", "--classifier-iters", "100"]

    run_cli_batch([["embed", *base]])
    csv_path.unlink()

    run_cli_batch([["train", *base]])
    run_cli_batch([["generate", *base]])
    run_cli_batch([["eval", *base]])
    first = {name: (out / name).read_bytes()
             for name in ("checkpoint.ntkg", "loss_trace.csv", "synthetic.csv",
                          "report.json")}

    run_cli_batch([["train", *base]])
    run_cli_batch([["generate", *base]])
    run_cli_batch([["eval", *base]])
    identical = all((out / name).read_bytes() == blob for name, blob in first.items())
    report(8, "raw data deleted after embed: later stages run and reproduce "
              "byte-identical outputs", identical)


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_pipeline_determinism(tmp_path):
    csv_path, spec_path = tmp_path / "t.csv", tmp_path / "s.json"
    write_two_class_table_with_spec(csv_path, spec_path, 400, seed=3)
    out = tmp_path / "run"
    args = ["pipeline", "--dataset", str(csv_path), "--schema-spec", str(spec_path),
            "--out-dir", str(out), "--ntk-width", "30", "--n-iter", "40",
            "--batch", "50", "--d-code", "4", "--epsilon", "1", "--seed", "4",
            "--n-synth", "200", "--eval-seeds", "1", "--gen-hidden", "32_32",
            "--no-gen-norm", "--classifier-iters", "100"]

    run_cli_batch([args])
    names = ("loss_trace.csv", "checkpoint.ntkg", "report.json", "embedding.ntke",
             "synthetic.csv", "manifest.json")
    first = {name: (out / name).read_bytes() for name in names}
    run_cli_batch([args])
    identical = all((out / name).read_bytes() == blob for name, blob in first.items())
    report(9, "rerunning the pipeline with the same config and seed is "
              "byte-identical", identical)


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_metric_oracles():
    rng = np.random.default_rng(9)
    scores = np.round(rng.normal(size=200), 1)  # coarse grid forces ties
    labels = (rng.random(200) < 0.35).astype(int)
    labels[:2] = [0, 1]

    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    pair_total = sum(1.0 if scores[i] > scores[j] else 0.5 if scores[i] == scores[j]
                     else 0.0 for i in pos for j in neg)
    roc_oracle = pair_total / (len(pos) * len(neg))
    roc_err = abs(EV.roc_auc(scores, labels) - roc_oracle)

    n_pos = len(pos)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        pred = scores >= t
        tp = float(np.sum(pred & (labels == 1)))
        fp = float(np.sum(pred & (labels == 0)))
        area += (tp / n_pos - prev_recall) * (tp / (tp + fp))
        prev_recall = tp / n_pos
    prc_err = abs(EV.prc_auc(scores, labels) - area)

    pred = rng.integers(0, 5, size=200)
    truth = rng.integers(0, 5, size=200)
    f1s = []
    for k in range(5):
        tp = int(np.sum((pred == k) & (truth == k)))
        fp = int(np.sum((pred == k) & (truth != k)))
        fn = int(np.sum((pred != k) & (truth == k)))
        f1s.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    f1_err = abs(EV.macro_f1(pred, truth, 5) - float(np.mean(f1s)))

    ok = roc_err <= 1e-12 and prc_err <= 1e-12 and f1_err <= 1e-12
    report(10, "ROC/PRC/F1 match brute-force oracles on 200-point inputs to 1e-12",
           ok, f"errs {roc_err:.1e}/{prc_err:.1e}/{f1_err:.1e}")
