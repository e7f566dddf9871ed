"""WAV ingestion, resampling, log-mel features and clip cropping."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

SAMPLE_RATE = 16000
N_FFT = 1024  # 64 ms at 16 kHz
HOP = 160  # 10 ms at 16 kHz
N_MELS = 64
F_MIN = 0.0
F_MAX = 8000.0
FLOOR_EPS = 1e-10
CLIP_SECONDS = 0.95

_WAVE_PCM = 1
_WAVE_FLOAT = 3
_WAVE_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Mono samples in [-1, 1] at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ContractError(f"AudioClip must be mono (1-D), got shape {samples.shape}")
        if samples.size < 1:
            raise ContractError("AudioClip needs at least one sample")
        if int(self.sample_rate) <= 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# -- WAV I/O ----------------------------------------------------------------


def _chunks(blob: bytes):
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"chunk {cid!r} is truncated ({len(body)} of {size} bytes)")
        yield cid, body
        pos += 8 + size + (size & 1)


def load_wav(path) -> AudioClip:
    """Read a mono RIFF/WAVE file holding PCM16 or IEEE float32 samples."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF":
        raise FormatError(f"{path}: RIFF magic missing")
    if blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: WAVE form type missing")
    fmt = data = None
    for cid, body in _chunks(blob):
        if cid == b"fmt " and fmt is None:
            fmt = body
        elif cid == b"data" and data is None:
            data = body
    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: fmt chunk missing or short")
    if data is None:
        raise FormatError(f"{path}: data chunk missing")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels != 1:
        raise FormatError(f"{path}: channels={channels}, only mono is supported")
    if rate == 0:
        raise FormatError(f"{path}: sample_rate=0")
    if tag == _WAVE_PCM and bits == 16:
        samples = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FLOAT and bits == 32:
        samples = np.frombuffer(data[: len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: format tag {tag} with bits_per_sample={bits} is not supported")
    if block_align != bits // 8:
        raise FormatError(f"{path}: block_align={block_align} inconsistent with bits_per_sample={bits}")
    if samples.size == 0:
        raise FormatError(f"{path}: data chunk holds no samples")
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono WAV; PCM16 rounds to the nearest code and clips to range."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if encoding == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _WAVE_PCM, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _WAVE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, int(clip.sample_rate), int(clip.sample_rate) * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- resampling and cropping ------------------------------------------------


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling to ``round(len * target / source)`` samples."""
    if target_rate <= 0:
        raise ContractError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_out = max(1, int(round(clip.samples.size * target_rate / clip.sample_rate)))
    pos = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(pos, np.arange(clip.samples.size), clip.samples)
    return AudioClip(out, int(target_rate))


def random_crop_clip(clip: AudioClip, duration: float, rng: np.random.Generator) -> AudioClip:
    """Contiguous crop of ``duration`` seconds at a uniform offset.

    Clips shorter than the crop are tiled cyclically first.
    """
    length = max(1, int(round(duration * clip.sample_rate)))
    x = clip.samples
    if x.size < length:
        x = np.resize(x, length)
    offset = int(rng.integers(0, x.size - length + 1))
    return AudioClip(x[offset : offset + length].copy(), clip.sample_rate)


# -- log-mel ----------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int = N_MELS, f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = F_MIN,
    f_max: float = F_MAX,
) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape (n_mels, n_fft // 2 + 1), unnormalized."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.flags.writeable = False
    return bank


def _hann(n: int) -> np.ndarray:
    # periodic window, as used for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, hop: int = HOP) -> int:
    return n_samples // hop + 1


def power_spectrogram(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """|STFT|^2 with a Hann window and reflect centre padding; (frames, n_fft//2+1)."""
    x = np.asarray(samples, dtype=np.float64)
    pad = n_fft // 2
    x = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad, mode="edge")
    count = n_frames(samples.size, hop)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(count)[:, None]
    frames = x[idx] * _hann(n_fft)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return spec.real**2 + spec.imag**2


def logmel(clip: AudioClip, n_mels: int = N_MELS, floor_eps: float = FLOOR_EPS) -> np.ndarray:
    """Log mel-spectrogram (frames x n_mels) of a 16 kHz clip, natural log."""
    if clip.sample_rate != SAMPLE_RATE:
        raise ContractError(f"logmel expects {SAMPLE_RATE} Hz input, got {clip.sample_rate} Hz; resample first")
    power = power_spectrogram(clip.samples)
    energy = power @ mel_filterbank(n_mels).T
    return np.log(energy + floor_eps)


def load_clip(path, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    clip = load_wav(path)
    return clip if clip.sample_rate == sample_rate else resample_linear(clip, sample_rate)
