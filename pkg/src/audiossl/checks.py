"""Self-check suites behind the ``gradcheck`` and ``losscheck`` commands."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import network as N
from . import tensor as T
from .gradcheck import GradCheckResult, check_gradients
from .losses import (
    LossWeights,
    alignment_loss,
    decorrelation_loss,
    decorrelation_loss_reference,
    diversity_loss_bruteforce,
    diversity_loss_fast,
    total_loss,
)
from .tensor import Tensor

OP_TOL = 1e-4
COMPOSED_TOL = 1e-3
STEP = 1e-3

TINY_NET = N.NetworkConfig(n_mels=8, channels=2, fc_dims=(4, 4), hidden_dim=8, out_dim=4, dtype="float64")


def _weighted(t: Tensor, seed: int = 12345) -> Tensor:
    """Fixed random linear functional of ``t`` so every output entry gets a distinct weight."""
    return T.sum(T.mul(t, Tensor(np.random.default_rng(seed).normal(size=t.shape))))


def _unit_rows(x: Tensor) -> Tensor:
    return T.l2_normalize(x)


def op_checks(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    w = seed + 1
    g = lambda shape: rng.normal(size=shape)  # noqa: E731
    cases = [
        ("matmul", lambda a, b: _weighted(T.matmul(a, b), w), [g((3, 4)), g((4, 2))], OP_TOL),
        ("linear", lambda x, k, b: _weighted(T.linear(x, k, b), w), [g((5, 3)), g((3, 4)), g(4)], OP_TOL),
        ("conv2d", lambda x, k, b: _weighted(T.conv2d(x, k, b), w), [g((2, 5, 5)), g((3, 2, 3, 3)), g(3)], OP_TOL),
        ("conv2d_batched", lambda x, k: _weighted(T.conv2d(x, k), w), [g((2, 3, 4, 5)), g((2, 3, 3, 3))], OP_TOL),
        ("maxpool2d", lambda x: _weighted(T.maxpool2d(x), w), [g((1, 6, 6))], OP_TOL),
        ("batchnorm_train", lambda x, a, b: _weighted(T.batchnorm(x, a, b), w), [g((8, 4)), g(4), g(4)], COMPOSED_TOL),
        ("batchnorm2d_train", lambda x, a, b: _weighted(T.batchnorm(x, a, b), w), [g((3, 2, 4, 4)), g(2), g(2)], COMPOSED_TOL),
        (
            "batchnorm_eval",
            lambda x, a, b: _weighted(T.batchnorm(x, a, b, np.full(4, 0.3), np.full(4, 2.0), mode="eval"), w),
            [g((8, 4)), g(4), g(4)],
            OP_TOL,
        ),
        ("relu", lambda x: _weighted(T.relu(x), w), [g((4, 5))], OP_TOL),
        ("l2_normalize", lambda x: _weighted(T.l2_normalize(x), w), [g((4, 5))], OP_TOL),
        ("l2_normalize_vector", lambda x: _weighted(T.l2_normalize(x), w), [g(6)], OP_TOL),
        ("reduce_mean_axis", lambda x: _weighted(T.reduce_mean_axis(x, 1), w), [g((3, 4, 2))], OP_TOL),
        ("reduce_max_axis", lambda x: _weighted(T.reduce_max_axis(x, 1), w), [g((3, 4, 2))], OP_TOL),
        ("reduce_sum_axis", lambda x: _weighted(T.reduce_sum_axis(x, 0), w), [g((3, 4))], OP_TOL),
        ("concat", lambda a, b: _weighted(T.concat(a, b, 1), w), [g((2, 3)), g((2, 4))], OP_TOL),
        ("reshape", lambda x: _weighted(T.reshape(x, (3, 4)), w), [g((2, 6))], OP_TOL),
        ("transpose", lambda x: _weighted(T.transpose(x, (1, 2, 0)), w), [g((2, 3, 4))], OP_TOL),
        ("add_sub_mul", lambda a, b: _weighted(T.mul(T.add(a, b), T.sub(a, T.scale(b, 0.5))), w), [g((3, 3)), g((3, 3))], OP_TOL),
        ("alignment_loss", lambda p, t: alignment_loss(_unit_rows(p), _unit_rows(t)), [g((6, 5)), g((6, 5))], OP_TOL),
        ("diversity_loss_fast", lambda p: diversity_loss_fast(_unit_rows(p)), [g((6, 5))], OP_TOL),
        ("decorrelation_loss", lambda p: decorrelation_loss(_unit_rows(p)), [g((6, 5))], OP_TOL),
    ]
    return [check_gradients(fn, inputs, STEP, tol, name=name) for name, fn, inputs, tol in cases]


def composed_check(seed: int = 0, cfg: N.NetworkConfig = TINY_NET, batch: int = 4, frames: int = 8) -> GradCheckResult:
    """Every online parameter of encoder + projector + predictor through the full loss."""
    rng = np.random.default_rng(seed)
    state = N.init(rng, cfg, tau=0.995)
    names = list(state.online)
    v1 = rng.normal(size=(batch, frames, cfg.n_mels))
    v2 = rng.normal(size=(batch, frames, cfg.n_mels))
    target = N.target_projections(state, v2).data

    def fn(*params):
        online = dict(zip(names, params))
        buffers = {k: v.copy() for k, v in state.online_buffers.items()}
        s = N.DualNetworkState(online, state.target, buffers, state.target_buffers, state.tau, cfg)
        p = N.online_predictions(s, v1)
        z = Tensor(target)
        return total_loss(alignment_loss(p, z), diversity_loss_fast(p), decorrelation_loss(p), LossWeights(1.0, 1.0))

    return check_gradients(fn, [state.online[k].data for k in names], STEP, COMPOSED_TOL, name="composed_model")


def gradcheck_suite(seed: int = 0) -> list[GradCheckResult]:
    return op_checks(seed) + [composed_check(seed)]


@dataclass
class LossCheckReport:
    trials: int
    max_fast_vs_brute: float
    max_align_vs_cosine: float
    max_decor_vs_reference: float
    seconds: float
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return max(self.max_fast_vs_brute, self.max_align_vs_cosine, self.max_decor_vs_reference) <= self.tolerance


def random_unit_batch(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def losscheck(max_n: int = 64, max_d: int = 32, trials: int = 100, seed: int = 0) -> LossCheckReport:
    """Compare each vectorized loss with its loop oracle on random unit batches."""
    rng = np.random.default_rng(seed)
    tic = time.perf_counter()
    fast_err = align_err = decor_err = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        d = int(rng.integers(2, max_d + 1))
        v = random_unit_batch(rng, n, d)
        t = random_unit_batch(rng, n, d)
        fast_err = max(fast_err, abs(diversity_loss_fast(v) - diversity_loss_bruteforce(v)))
        cosine = np.mean([2.0 - 2.0 * float(v[i] @ t[i]) for i in range(n)])
        align_err = max(align_err, abs(alignment_loss(v, t) - cosine))
        decor_err = max(decor_err, abs(decorrelation_loss(v) - decorrelation_loss_reference(v)))
    return LossCheckReport(trials, fast_err, align_err, decor_err, time.perf_counter() - tic)
