"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SSLF"  u16 version  u32 entry_count
    entry_count x (u16 name_len, name utf-8, u8 dtype_code, u8 ndim, ndim x u32 dim)
    raw array bytes, in entry order
    u32 trailer_len, trailer (utf-8 JSON: config, counters, rng state)

Entry names are prefixed ``online/``, ``target/``, ``online_buf/``,
``target_buf/``, ``adam_m/`` and ``adam_v/``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .config import Config, from_dict
from .errors import FormatError
from .network import DualNetworkState
from .tensor import Tensor

MAGIC = b"SSLF"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_GROUPS = ("online", "target", "online_buf", "target_buf", "adam_m", "adam_v")


@dataclass
class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(p.data) for k, p in params.items()}
        return cls(zeros, {k: z.copy() for k, z in zeros.items()}, 0, beta1, beta2, eps)


@dataclass
class TrainProgress:
    epoch: int = 0
    global_step: int = 0
    rng_state: dict[str, Any] = field(default_factory=dict)


class Checkpoint(NamedTuple):
    state: DualNetworkState
    adam: AdamState
    config: Config
    progress: TrainProgress


def _entries(state: DualNetworkState, adam: AdamState) -> list[tuple[str, np.ndarray]]:
    out = []
    out += [(f"online/{k}", t.data) for k, t in state.online.items()]
    out += [(f"target/{k}", t.data) for k, t in state.target.items()]
    out += [(f"online_buf/{k}", a) for k, a in state.online_buffers.items()]
    out += [(f"target_buf/{k}", a) for k, a in state.target_buffers.items()]
    out += [(f"adam_m/{k}", a) for k, a in adam.m.items()]
    out += [(f"adam_v/{k}", a) for k, a in adam.v.items()]
    return out


def _header(entries: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    return b"".join(parts)


def _trailer(config: Config, adam: AdamState, progress: TrainProgress, tau: float) -> bytes:
    doc = {
        "config": config.to_dict(),
        "tau": tau,
        "adam": {"step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "progress": {"epoch": progress.epoch, "global_step": progress.global_step},
        "rng_state": progress.rng_state,
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return struct.pack("<I", len(blob)) + blob


def expected_size(state: DualNetworkState, adam: AdamState, config: Config, progress: TrainProgress) -> int:
    entries = _entries(state, adam)
    data = sum(arr.dtype.itemsize * arr.size for _, arr in entries)
    return len(_header(entries)) + data + len(_trailer(config, adam, progress, state.tau))


def save_checkpoint(state: DualNetworkState, adam: AdamState, config: Config, path, progress: TrainProgress | None = None) -> Path:
    progress = progress or TrainProgress()
    entries = _entries(state, adam)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_header(entries))
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        fh.write(_trailer(config, adam, progress, state.tau))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a checkpoint")
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    table = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "entry name length")
        name = r.take(name_len, "entry name").decode("utf-8", errors="replace")
        code, ndim = r.unpack("<BB", f"entry {name!r}")
        if code not in _DTYPES:
            raise FormatError(f"{path}: entry {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name!r}")
        if any(d == 0 for d in shape):
            raise FormatError(f"{path}: entry {name!r} has an empty dimension")
        table.append((name, _DTYPES[code], shape))
    arrays: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
    for name, dtype, shape in table:
        group, _, key = name.partition("/")
        if group not in arrays or not key:
            raise FormatError(f"{path}: entry {name!r} belongs to no known group")
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        raw = r.take(nbytes, f"data of {name!r}")
        arrays[group][key] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    (trailer_len,) = r.unpack("<I", "trailer length")
    try:
        doc = json.loads(r.take(trailer_len, "trailer").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt trailer ({exc})") from None
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} unexpected trailing bytes")
    _check_tables(arrays, path)
    try:
        config = from_dict(doc["config"])
        adam_doc, prog = doc["adam"], doc["progress"]
        tau = float(doc["tau"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: trailer is missing fields ({exc})") from None
    state = DualNetworkState(
        {k: Tensor(a, requires_grad=True) for k, a in arrays["online"].items()},
        {k: Tensor(a) for k, a in arrays["target"].items()},
        arrays["online_buf"],
        arrays["target_buf"],
        tau,
        config.network_config(),
    )
    adam = AdamState(arrays["adam_m"], arrays["adam_v"], int(adam_doc["step"]), adam_doc["beta1"], adam_doc["beta2"], adam_doc["eps"])
    progress = TrainProgress(int(prog["epoch"]), int(prog["global_step"]), doc.get("rng_state") or {})
    return Checkpoint(state, adam, config, progress)


def _check_tables(arrays: dict[str, dict[str, np.ndarray]], path) -> None:
    online = arrays["online"]
    if not online:
        raise FormatError(f"{path}: no online parameters")
    for group in ("target", "adam_m", "adam_v"):
        for key, arr in arrays[group].items():
            if key not in online or online[key].shape != arr.shape:
                raise FormatError(f"{path}: {group}/{key} does not match an online parameter shape")
    for group in ("adam_m", "adam_v"):
        if set(arrays[group]) != set(online):
            raise FormatError(f"{path}: {group} does not cover every online parameter")
    for group, params in (("online_buf", online), ("target_buf", arrays["target"])):
        for key, arr in arrays[group].items():
            stem = key.rsplit(".", 1)[0]
            gamma = params.get(f"{stem}.gamma")
            if gamma is None or gamma.shape != arr.shape:
                raise FormatError(f"{path}: {group}/{key} has no matching batchnorm parameter")
