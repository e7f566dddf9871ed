"""Synthetic labelled corpus of simple sound classes at 16 kHz."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Manifest, ManifestRow
from .frontend import SAMPLE_RATE, AudioClip, mel_band_centers, write_wav

N_FOLDS = 5


@dataclass(frozen=True)
class SoundClass:
    label: str
    kind: str  # tone | chirp_up | chirp_down | noise | am
    pitch: float = 0.0  # tone frequency or am carrier, Hz


def _band_pitch(band: int) -> float:
    # centring tones on a mel band keeps the expected peak band unambiguous
    return float(np.round(mel_band_centers()[band], 1))


def catalogue(n_classes: int) -> list[SoundClass]:
    base = [
        SoundClass(f"tone_{_band_pitch(12):.0f}", "tone", _band_pitch(12)),
        SoundClass("chirp_up", "chirp_up"),
        SoundClass("chirp_down", "chirp_down"),
        SoundClass("noise", "noise"),
        SoundClass(f"am_{_band_pitch(30):.0f}", "am", _band_pitch(30)),
    ]
    extra_bands = [40, 20, 50, 8, 45, 25, 55, 16]
    k = 0
    while len(base) < n_classes:
        band = extra_bands[k % len(extra_bands)] + 2 * (k // len(extra_bands))
        kind = "tone" if k % 2 == 0 else "am"
        base.append(SoundClass(f"{kind}_{_band_pitch(band):.0f}", kind, _band_pitch(band)))
        k += 1
    return base[:n_classes]


def render(cls: SoundClass, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """One random instance of ``cls``, 1 to 3 seconds long."""
    n = int(round(rng.uniform(1.0, 3.0) * sample_rate))
    t = np.arange(n) / sample_rate
    amp = rng.uniform(0.1, 0.6)
    phase = rng.uniform(0, 2 * np.pi)
    if cls.kind == "tone":
        f = cls.pitch * rng.uniform(0.99, 1.01)
        x = np.sin(2 * np.pi * f * t + phase)
    elif cls.kind in ("chirp_up", "chirp_down"):
        lo, hi = rng.uniform(200, 500), rng.uniform(2500, 4000)
        f0, f1 = (lo, hi) if cls.kind == "chirp_up" else (hi, lo)
        dur = n / sample_rate
        x = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t) + phase)
    elif cls.kind == "noise":
        x = rng.uniform(-1.0, 1.0, n) * np.sqrt(3.0) / 2
    elif cls.kind == "am":
        f = cls.pitch * rng.uniform(0.99, 1.01)
        rate = rng.uniform(3.0, 8.0)
        env = 0.5 * (1.0 + 0.9 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
        x = env * np.sin(2 * np.pi * f * t + phase)
    else:
        raise ValueError(f"unknown sound kind {cls.kind!r}")
    background = rng.normal(0.0, 1.0, n) * 10 ** (-rng.uniform(30, 50) / 20)
    return AudioClip(np.clip(amp * x + amp * background, -1.0, 1.0), sample_rate)


def make_corpus(out_dir, classes: int = 4, n_per_class: int = 25, seed: int = 0) -> Manifest:
    """Write ``classes * n_per_class`` PCM16 WAVs plus ``manifest.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c, cls in enumerate(catalogue(classes)):
        for k in range(n_per_class):
            clip = render(cls, np.random.default_rng([seed, c, k]))
            name = f"{cls.label}_{k:03d}.wav"
            write_wav(out / name, clip)
            rows.append(ManifestRow(name, cls.label, k % N_FOLDS))
    manifest = Manifest(rows, out)
    manifest.write(out / "manifest.csv")
    return manifest
