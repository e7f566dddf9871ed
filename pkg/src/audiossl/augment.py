"""Log-mel augmentations: random resize crop, mixup background noise, linear fader.

Each stage is split into a sampler (draws parameters from an rng) and a
deterministic ``apply_*`` function, so tests can force parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .frontend import FLOOR_EPS


@dataclass(frozen=True)
class AugmentConfig:
    scale: tuple[float, float] = (0.6, 1.5)
    ratio: tuple[float, float] = (0.75, 1.33)
    mix_max: float = 0.2
    fader: float = 1.0
    pad_value: float = math.log(FLOOR_EPS)


@dataclass(frozen=True)
class CropParams:
    top: int
    left: int
    height: int
    width: int


@dataclass
class ViewParams:
    crop: CropParams
    mix: float
    partner: int | None
    fade: tuple[float, float]


# -- random resize crop -----------------------------------------------------


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel bilinear interpolation weights, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(mat, (np.arange(n_out), hi), frac)
    return mat


def sample_crop(shape: tuple[int, int], rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> CropParams:
    frames, mels = shape
    s = rng.uniform(*cfg.scale)
    r = rng.uniform(*cfg.ratio)
    area = s * frames * mels
    h = max(1, int(round(math.sqrt(area * r))))
    w = max(1, int(round(math.sqrt(area / r))))
    top = int(rng.integers(min(0, frames - h), max(0, frames - h) + 1))
    left = int(rng.integers(min(0, mels - w), max(0, mels - w) + 1))
    return CropParams(top, left, h, w)


def apply_crop(x: np.ndarray, crop: CropParams, pad_value: float = AugmentConfig.pad_value) -> np.ndarray:
    """Cut ``crop`` from a virtual canvas padded with ``pad_value`` and resize back."""
    frames, mels = x.shape
    window = np.full((crop.height, crop.width), pad_value, dtype=np.float64)
    r0, r1 = max(crop.top, 0), min(crop.top + crop.height, frames)
    c0, c1 = max(crop.left, 0), min(crop.left + crop.width, mels)
    if r0 < r1 and c0 < c1:
        window[r0 - crop.top : r1 - crop.top, c0 - crop.left : c1 - crop.left] = x[r0:r1, c0:c1]
    return bilinear_matrix(crop.height, frames) @ window @ bilinear_matrix(crop.width, mels).T


def rrc(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    x = _check_2d(x)
    return apply_crop(x, sample_crop(x.shape, rng, cfg), cfg.pad_value)


# -- random background noise (mixup) ----------------------------------------


def apply_mix(x: np.ndarray, other: np.ndarray, lam: float) -> np.ndarray:
    if x.shape != other.shape:
        raise ShapeError(f"rbn_mixup: shapes {x.shape} and {other.shape} differ")
    return (1.0 - lam) * x + lam * other


def rbn_mixup(x: np.ndarray, x_other: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    return apply_mix(np.asarray(x, dtype=np.float64), np.asarray(x_other, dtype=np.float64), rng.uniform(0.0, cfg.mix_max))


# -- random linear fader ----------------------------------------------------


def apply_fade(x: np.ndarray, start: float, end: float) -> np.ndarray:
    frames = x.shape[0]
    if frames == 1:
        ramp = np.array([start])
    else:
        ramp = start + (end - start) * np.arange(frames) / (frames - 1)
    return x + ramp[:, None]


def rlf(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    x = _check_2d(x)
    a, b = rng.uniform(-cfg.fader, cfg.fader, size=2)
    return apply_fade(x, a, b)


def _check_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a frames x mels matrix, got shape {x.shape}")
    return x


# -- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentPipeline:
    """RRC -> RBN -> RLF, applied independently for each of the two views."""

    config: AugmentConfig = AugmentConfig()

    def sample(self, shape: tuple[int, int], rng: np.random.Generator, n_others: int) -> ViewParams:
        cfg = self.config
        crop = sample_crop(shape, rng, cfg)
        lam = float(rng.uniform(0.0, cfg.mix_max))
        partner = int(rng.integers(n_others)) if n_others > 0 else None
        a, b = rng.uniform(-cfg.fader, cfg.fader, size=2)
        return ViewParams(crop, lam, partner, (float(a), float(b)))

    def apply(self, x: np.ndarray, params: ViewParams, others: Sequence[np.ndarray] | None = None) -> np.ndarray:
        out = apply_crop(x, params.crop, self.config.pad_value)
        # without a partner the view mixes with itself, which is the identity
        other = out if params.partner is None else np.asarray(others[params.partner], dtype=np.float64)
        out = apply_mix(out, other, params.mix)
        return apply_fade(out, *params.fade)

    def make_views(
        self,
        x,
        rng: np.random.Generator,
        others: Sequence[np.ndarray] | None = None,
        return_params: bool = False,
    ):
        """Two independently augmented views of ``x``.

        ``others`` are the candidate mixup partners (other members of the
        mini-batch); ``rng`` is split into one child stream per branch.
        """
        x = _check_2d(x)
        n_others = 0 if others is None else len(others)
        params = [self.sample(x.shape, child, n_others) for child in rng.spawn(2)]
        views = tuple(self.apply(x, p, others) for p in params)
        return (views, params) if return_params else views


def make_views(x, rng: np.random.Generator, others=None, config: AugmentConfig = AugmentConfig()):
    return AugmentPipeline(config).make_views(x, rng, others)
