"""Central finite-difference checks against the analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, _topo_order, backward

# ops whose local derivative is piecewise constant with jumps
_KINK_OPS = ("relu", "maxpool2d", "reduce_max")


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    tolerance: float
    refined: int = 0  # coordinates re-checked at a smaller step because a kink lay within the default one

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def kink_signature(root: Tensor) -> bytes:
    """Activation pattern of every ReLU and max in the graph of ``root``.

    Two inputs with equal signatures lie on the same smooth piece of a
    piecewise-smooth function.
    """
    parts = []
    for node in _topo_order(root):
        if node.op in _KINK_OPS:
            routed = node._backward(np.ones_like(node.data))[0]
            parts.append(np.asarray(routed != 0).tobytes())
    return b"".join(parts)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-3,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    name: str = "fn",
    floor: float = 1e-8,
    min_step: float = 1e-8,
) -> GradCheckResult:
    """Compare ``backward`` on ``fn(*tensors)`` with central differences.

    ``fn`` must return a scalar tensor. ``max_entries`` bounds the number of
    coordinates perturbed per input (sampled with ``rng``); ``None`` checks
    every coordinate.

    A central difference is only a valid oracle when both perturbed points
    share the activation pattern of the base point. When ``step`` would cross
    a ReLU or max boundary the step is shrunk by factors of 10 (down to
    ``min_step``) until two successive kink-free estimates agree to a tenth
    of ``tolerance``; such coordinates are counted in ``refined``. A coordinate sitting on a boundary even at ``min_step`` is
    compared at ``min_step`` anyway.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(x, requires_grad=True) for x in arrays]
    root = fn(*leaves)
    base_sig = kink_signature(root)
    grads = backward(root)
    rng = rng if rng is not None else np.random.default_rng(0)

    def evaluate(k: int, flat: int, value: float) -> tuple[float, bytes]:
        probe = arrays[k].copy()
        probe.reshape(-1)[flat] = value
        args = [Tensor(probe if j == k else arrays[j], requires_grad=True) for j in range(len(arrays))]
        out = fn(*args)
        return float(out.item()), kink_signature(out)

    worst = 0.0
    checked = refined = 0
    for k, (x, leaf) in enumerate(zip(arrays, leaves)):
        analytic = grads.get(leaf, np.zeros_like(x)).reshape(-1)
        coords = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            coords = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        for flat in coords:
            base = x.reshape(-1)[flat]
            h, previous = step, None
            while True:
                (up, sig_up), (down, sig_down) = evaluate(k, flat, base + h), evaluate(k, flat, base - h)
                numeric = (up - down) / (2 * h)
                smooth = sig_up == base_sig and sig_down == base_sig
                if h / 10 < min_step or (smooth and h == step):
                    break
                if smooth:
                    # near a boundary: accept once two kink-free estimates agree
                    if previous is not None and abs(numeric - previous) <= 0.1 * tolerance * max(abs(numeric), floor):
                        break
                    previous = numeric
                h /= 10
            refined += h != step
            err = float(relative_error(analytic[flat], numeric, floor))
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(name, worst, checked, tolerance, refined)
