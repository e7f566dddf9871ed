"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The training-based criteria (5 to 8) share session-scoped runs on the
100-clip synthetic corpus, so the whole file takes several minutes.
"""

import json
import time

import numpy as np
import pytest

from audiossl import network as N
from audiossl.checkpoint import Checkpoint, TrainProgress
from audiossl.checks import gradcheck_suite, losscheck
from audiossl.cli import main
from audiossl.frontend import AudioClip, logmel, mel_band_centers
from audiossl.losses import alignment_loss, decorrelation_loss, diversity_loss_bruteforce, diversity_loss_fast
from audiossl.probe import cross_validate, extract_embeddings, raw_logmel_table
from audiossl.synth import catalogue, render
from audiossl.tensor import Tensor

pytestmark = pytest.mark.slow


def last_epoch(run, attr):
    per_epoch = len(run.result.reports) // run.config.train.epochs
    return float(np.mean([getattr(r, attr) for r in run.result.reports[-per_epoch:]]))


def probe_accuracy(run, manifest, source="online"):
    ck = Checkpoint(run.result.state, run.result.adam, run.config, TrainProgress())
    return cross_validate(extract_embeddings(ck, manifest, source))["mean"]


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_c01_diversity_closed_form(criterion):
    rep = losscheck(max_n=64, max_d=32, trials=100, seed=0)
    ok = rep.trials >= 100 and rep.max_fast_vs_brute <= 1e-6 and rep.seconds < 10
    assert criterion(1, ok, f"max |fast-brute| {rep.max_fast_vs_brute:.2e} over {rep.trials} batches in {rep.seconds:.2f}s")


def test_c02_gradient_suite(criterion):
    tic = time.perf_counter()
    results = gradcheck_suite(0)
    seconds = time.perf_counter() - tic
    failed = [r.name for r in results if not r.passed]
    loose = [r.name for r in results if r.tolerance > 1e-4]
    worst = max(r.max_rel_error / r.tolerance for r in results)
    ok = not failed and seconds < 60 and all(r.tolerance <= 1e-3 for r in results)
    detail = f"{len(results)} checks, {len(failed)} failed, worst err/tol {worst:.2f}, 1e-3 tolerance for {loose}, {seconds:.1f}s"
    assert criterion(2, ok, detail)


def test_c03_loss_bounds_and_fixed_points(criterion):
    rng = np.random.default_rng(0)
    v = unit_rows(rng, 8, 5)
    same = np.tile(v[:1], (8, 1))
    # all 8 sign patterns of one row: every pair of columns is exactly uncorrelated
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * 3)).reshape(3, -1).T
    uncorrelated = signs * np.abs(v[0, :3]) / np.linalg.norm(v[0, :3])
    checks = {
        "align(p,p)=0": alignment_loss(v, v) == 0.0,
        "align(p,-p)=4": abs(alignment_loss(v, -v) - 4.0) <= 1e-10,
        "div(collapse)=0": abs(diversity_loss_fast(same)) <= 1e-10 and diversity_loss_bruteforce(same) == 0.0,
        "div(sum 0)=-2": abs(diversity_loss_fast(np.vstack([v, -v])) + 2.0) <= 1e-10,
        "decor(collapse)=0": abs(decorrelation_loss(same)) <= 1e-10,
        "decor(uncorrelated)=0": abs(decorrelation_loss(uncorrelated)) <= 1e-10,
    }
    for _ in range(1000):
        n, d = int(rng.integers(2, 33)), int(rng.integers(2, 17))
        p, z = unit_rows(rng, n, d), unit_rows(rng, n, d)
        checks.setdefault("bounds", True)
        checks["bounds"] &= 0.0 <= alignment_loss(p, z) <= 4.0 and -2.0 - 1e-12 <= diversity_loss_fast(p) <= 1e-12 and decorrelation_loss(p) >= 0.0
    bad = [k for k, ok in checks.items() if not ok]
    assert criterion(3, not bad, f"{len(checks)} properties, failing: {bad or 'none'}")


def test_c04_ema_law(criterion):
    tau = 0.995
    cfg = N.NetworkConfig(dtype="float64")
    state = N.init(np.random.default_rng(0), cfg, tau)
    rng = np.random.default_rng(1)
    state.target = {k: Tensor(t.data + rng.normal(size=t.shape)) for k, t in state.target.items()}
    theta = {k: state.online[k].data.copy() for k in state.target}

    def gap():
        return np.sqrt(sum(float(np.sum((state.target[k].data - theta[k]) ** 2)) for k in theta))

    g0, worst = gap(), 0.0
    for k in range(1, 101):
        N.ema_update(state)
        worst = max(worst, abs(gap() / g0 - tau**k) / tau**k)
    assert criterion(4, worst <= 1e-6, f"max relative deviation from tau^k over k<=100: {worst:.2e}")


def test_c05_collapse_ablation(desk_runs, criterion):
    a, b = desk_runs.get(), desk_runs.get(ablation=True)
    std_ratio = last_epoch(b, "mean_std") / b.result.reports[0].mean_std
    rank_a, rank_b = last_epoch(a, "effective_rank"), last_epoch(b, "effective_rank")
    seconds = a.seconds + b.seconds
    ok = std_ratio < 0.10 and rank_a >= 2 * rank_b and seconds < 15 * 60
    detail = f"B std ratio {std_ratio:.3f} (<0.10), eff. rank A {rank_a:.2f} vs B {rank_b:.2f} (ratio {rank_a / rank_b:.2f}, need >=2), {seconds:.0f}s"
    assert criterion(5, ok, detail)


def test_c06_learning_signal(desk_runs, synth_corpus, criterion):
    run = desk_runs.get()
    tic = time.perf_counter()
    acc = probe_accuracy(run, synth_corpus)
    baseline = cross_validate(raw_logmel_table(synth_corpus))["mean"]
    seconds = run.seconds + time.perf_counter() - tic
    ok = acc >= 0.50 and acc > baseline and seconds < 20 * 60
    assert criterion(6, ok, f"probe accuracy {acc:.3f} vs raw log-mel {baseline:.3f} (chance 0.25), {seconds:.0f}s")


def test_c07_online_target_parity(desk_runs, synth_corpus, criterion):
    run = desk_runs.get()
    online, target = probe_accuracy(run, synth_corpus, "online"), probe_accuracy(run, synth_corpus, "target")
    ok = abs(online - target) <= 0.05
    assert criterion(7, ok, f"online {online:.3f} target {target:.3f} (gap {abs(online - target):.3f}, max 0.05)")


def test_c08_batch_stability(desk_runs, synth_corpus, criterion):
    accs = {bs: probe_accuracy(desk_runs.get(batch_size=bs), synth_corpus) for bs in (16, 32, 64)}
    span = max(accs.values()) - min(accs.values())
    detail = ", ".join(f"bs {bs}: {acc:.3f}" for bs, acc in accs.items()) + f" (span {span:.3f}, max 0.10)"
    assert criterion(8, span <= 0.10, detail)


def test_c09_determinism(tmp_path, criterion):
    outputs = []
    for name in ("first", "second"):
        root = tmp_path / name
        assert main(["synth", "--out", str(root / "corpus"), "--seed", "3"]) == 0
        manifest = str(root / "corpus" / "manifest.csv")
        assert main(["pretrain", "--manifest", manifest, "--out", str(root / "run"), "--seed", "3", "--epochs", "2", "--batch-size", "32", "--lr", "1e-3"]) == 0
        report = root / "probe.json"
        assert main(["probe", "--checkpoint", str(root / "run" / "checkpoint.sslf"), "--manifest", manifest, "--report", str(report)]) == 0
        outputs.append(
            {
                "metrics": (root / "run" / "metrics.csv").read_bytes(),
                "checkpoint": (root / "run" / "checkpoint.sslf").read_bytes(),
                "probe": json.loads(report.read_text()),
            }
        )
    differ = [k for k in outputs[0] if outputs[0][k] != outputs[1][k]]
    assert criterion(9, not differ, f"metrics CSV, checkpoint and probe report identical across runs; differing: {differ or 'none'}")


def test_c10_frontend_shape_law(criterion):
    shape = logmel(AudioClip(np.zeros(15200), 16000)).shape
    tones = [c for c in catalogue(13) if c.kind == "tone"]
    misses = []
    for cls in tones:
        for seed in range(3):
            clip = render(cls, np.random.default_rng(seed))
            expected = int(np.argmin(np.abs(mel_band_centers() - cls.pitch)))
            peak = int(np.median(np.argmax(logmel(clip), axis=1)))
            if peak != expected:
                misses.append((cls.label, seed, peak, expected))
    ok = shape == (96, 64) and not misses
    assert criterion(10, ok, f"0.95 s -> {shape[0]}x{shape[1]}; peak band correct for {len(tones)} tone classes x 3 clips, misses: {misses or 'none'}")


def test_online_target_similarity_rises_from_epoch_one(desk_runs, synth_corpus):
    """Cosine between online and target embeddings is higher at the final checkpoint than after epoch 1."""
    from audiossl.probe import embed, eval_crops

    crops = eval_crops(desk_runs.clips, 0)

    def mean_cos(state):
        a, b = embed(state, crops, "online"), embed(state, crops, "target")
        return float(np.mean(np.sum(a * b, 1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))))

    early = desk_runs.get(epochs=1).result.state
    assert mean_cos(desk_runs.get().result.state) > mean_cos(early)

