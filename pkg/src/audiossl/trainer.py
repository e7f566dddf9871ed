"""Pretraining loop: views, dual-network forward, losses, Adam, EMA, diagnostics."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses as L
from . import network as N
from . import tensor as T
from .augment import AugmentPipeline
from .checkpoint import AdamState, Checkpoint, TrainProgress, load_checkpoint, save_checkpoint
from .config import Config
from .data import Manifest, load_clips
from .errors import ContractError, NonFiniteGradientError
from .frontend import AudioClip, logmel, random_crop_clip
from .tensor import Tensor

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "epoch",
    "step",
    "loss_total",
    "loss_align",
    "loss_div",
    "loss_decor",
    "eff_rank",
    "mean_pairdist",
    "offdiag_energy",
    "lr",
    "seconds",
]

# sub-stream ids for item_rng
CROP_STREAM = 0
VIEW_STREAM = 1


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> dict[str, Tensor]:
    """Bias-corrected Adam; returns new parameter tensors and advances ``state``.

    Parameters missing from ``grads`` are treated as having zero gradient.
    Nothing is modified if any gradient is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor((p.data - update).astype(p.dtype), requires_grad=True)
    return out


@dataclass
class CollapseReport:
    std: np.ndarray
    effective_rank: float
    offdiag_energy: float
    mean_pairdist: float

    @property
    def mean_std(self) -> float:
        return float(self.std.mean())


def effective_rank(cov: np.ndarray) -> float:
    """exp of the Shannon entropy of the normalized eigenvalue spectrum (1 for zero spectra)."""
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum()
    if total <= 1e-20:
        return 1.0
    p = eig[eig > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))


def collapse_metrics(preds) -> CollapseReport:
    """Diagnostics of an (n, d) batch of normalized predictions."""
    v = np.asarray(preds.data if isinstance(preds, Tensor) else preds, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise ContractError(f"collapse_metrics needs at least 2 predictions, got {n}")
    centered = v - v.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return CollapseReport(
        std=np.sqrt(np.diag(cov)),
        effective_rank=effective_rank(cov),
        offdiag_energy=float(L.decorrelation_loss(v)),
        mean_pairdist=float(-L.diversity_loss_fast(v)),
    )


def item_rng(seed: int, epoch: int, index: int, stream: int) -> np.random.Generator:
    """Independent generator for one (epoch, example, stream) triple."""
    return np.random.default_rng([seed, epoch, index, stream])


@dataclass
class StepResult:
    loss_total: float
    loss_align: float
    loss_div: float
    loss_decor: float
    report: CollapseReport


def _objective(p: Tensor, z: Tensor, weights: L.LossWeights):
    align = L.alignment_loss(p, z)
    div = L.diversity_loss_fast(p)
    decor = L.decorrelation_loss(p)
    return L.total_loss(align, div, decor, weights), (align, div, decor)


def train_step(
    state: N.DualNetworkState,
    adam: AdamState,
    batch: Sequence[np.ndarray],
    config: Config,
    rngs: Sequence[np.random.Generator],
) -> StepResult:
    """One optimizer step on a batch of log-mel inputs (one rng per item)."""
    n = len(batch)
    if n < 2:
        raise ContractError(f"train_step needs a batch of at least 2, got {n}")
    pipeline = AugmentPipeline(config.augment)
    first, second = [], []
    for i, (x, rng) in enumerate(zip(batch, rngs)):
        others = [batch[j] for j in range(n) if j != i]
        v1, v2 = pipeline.make_views(x, rng, others)
        first.append(v1)
        second.append(v2)
    dtype = state.config.dtype
    v1 = np.stack(first).astype(dtype)
    v2 = np.stack(second).astype(dtype)

    p1, z2 = N.forward_pair(state, v1, v2)
    loss, parts = _objective(p1, z2, config.loss)
    if config.train.symmetric:
        p2, z1 = N.forward_pair(state, v2, v1)
        loss2, parts2 = _objective(p2, z1, config.loss)
        loss = T.scale(T.add(loss, loss2), 0.5)
        parts = tuple(T.scale(T.add(a, b), 0.5) for a, b in zip(parts, parts2))

    grads = T.backward(loss)
    by_name = {name: grads[p] for name, p in state.online.items() if p in grads}
    state.online = adam_step(state.online, by_name, adam, config.train.learning_rate)
    N.ema_update(state)
    return StepResult(loss.item(), parts[0].item(), parts[1].item(), parts[2].item(), collapse_metrics(p1))


def init_training(config: Config) -> tuple[N.DualNetworkState, AdamState]:
    state = N.init(np.random.default_rng(config.train.seed), config.network_config(), config.train.tau)
    t = config.train
    return state, AdamState.for_params(state.online, t.adam_beta1, t.adam_beta2, t.adam_eps)


def training_input(clip: AudioClip, config: Config, seed: int, epoch: int, index: int) -> np.ndarray:
    """The log-mel of this epoch's random crop of ``clip``."""
    crop = random_crop_clip(clip, config.frontend.clip_seconds, item_rng(seed, epoch, index, CROP_STREAM))
    return logmel(crop, config.network.n_mels, config.frontend.floor_eps)


@dataclass
class TrainResult:
    state: N.DualNetworkState
    adam: AdamState
    history: list[dict] = field(default_factory=list)
    reports: list[CollapseReport] = field(default_factory=list)
    checkpoint: Path | None = None
    metrics: Path | None = None


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


def batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Split ``order`` into batches; a trailing singleton joins the previous batch."""
    out = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def fit(
    clips: Sequence[AudioClip],
    config: Config,
    out_dir=None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Pretrain on in-memory 16 kHz clips; writes metrics and checkpoints under ``out_dir``."""
    if len(clips) < 2:
        raise ContractError(f"pretraining needs at least 2 clips, got {len(clips)}")
    seed = config.train.seed
    if resume is None:
        state, adam = init_training(config)
        shuffle = np.random.default_rng(seed)
        start_epoch, step = 0, 0
    else:
        state, adam = resume.state, resume.adam
        shuffle = np.random.default_rng()
        shuffle.bit_generator.state = resume.progress.rng_state
        start_epoch, step = resume.progress.epoch, resume.progress.global_step
        state.tau = config.train.tau

    out = Path(out_dir) if out_dir is not None else None
    metrics_path = ckpt_path = None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        ckpt_path = out / "checkpoint.sslf"
        fresh = resume is None or not metrics_path.exists()
        fh = metrics_path.open("w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_HEADER)

    result = TrainResult(state, adam, checkpoint=ckpt_path, metrics=metrics_path)
    try:
        for epoch in range(start_epoch + 1, config.train.epochs + 1):
            order = shuffle.permutation(len(clips))
            for idx in batches(order, config.train.batch_size):
                tic = time.perf_counter()
                batch = [training_input(clips[i], config, seed, epoch, int(i)) for i in idx]
                rngs = [item_rng(seed, epoch, int(i), VIEW_STREAM) for i in idx]
                res = train_step(state, adam, batch, config, rngs)
                step += 1
                for value in (res.loss_total, res.loss_align, res.loss_div, res.loss_decor):
                    if not math.isfinite(value):
                        raise FloatingPointError(f"non-finite loss at epoch {epoch} step {step}")
                row = {
                    "epoch": epoch,
                    "step": step,
                    "loss_total": res.loss_total,
                    "loss_align": res.loss_align,
                    "loss_div": res.loss_div,
                    "loss_decor": res.loss_decor,
                    "eff_rank": res.report.effective_rank,
                    "mean_pairdist": res.report.mean_pairdist,
                    "offdiag_energy": res.report.offdiag_energy,
                    "lr": config.train.learning_rate,
                    "seconds": time.perf_counter() - tic if config.train.record_time else "",
                }
                result.history.append(row)
                result.reports.append(res.report)
                if writer is not None:
                    writer.writerow([_fmt(row[k]) if row[k] != "" else "" for k in METRICS_HEADER])
                    fh.flush()
            log.info("epoch %d: loss %.5f align %.5f eff_rank %.2f", epoch, res.loss_total, res.loss_align, res.report.effective_rank)
            if ckpt_path is not None and (epoch % config.train.checkpoint_every == 0 or epoch == config.train.epochs):
                progress = TrainProgress(epoch, step, shuffle.bit_generator.state)
                save_checkpoint(state, adam, config, ckpt_path, progress)
    finally:
        if fh is not None:
            fh.close()
    return result


def train(manifest: Manifest, config: Config, out_dir=None, resume=None) -> TrainResult:
    """Pretrain on the clips of ``manifest`` (labels are ignored).

    ``resume`` is a checkpoint path; training continues after its last
    completed epoch up to ``config.train.epochs``.
    """
    clips, _ = load_clips(manifest)
    if not clips:
        raise ContractError("no readable audio in manifest")
    ckpt = load_checkpoint(resume) if resume is not None else None
    if ckpt is not None:
        # architecture and seed come from the checkpoint; schedule from the caller
        config = replace(config, network=ckpt.config.network, train=replace(config.train, seed=ckpt.config.train.seed))
    return fit(clips, config, out_dir, ckpt)


def corpus_report(state: N.DualNetworkState, clips: Sequence[AudioClip], config: Config, chunk: int = 32) -> CollapseReport:
    """Collapse diagnostics of eval-mode online predictions over fixed crops of every clip."""
    seed = config.train.seed
    inputs = [training_input(c, config, seed, 0, i) for i, c in enumerate(clips)]
    preds = []
    with T.no_grad():
        for start in range(0, len(inputs), chunk):
            x = np.stack(inputs[start : start + chunk]).astype(state.config.dtype)
            preds.append(N.online_predictions(state, x, "eval").data)
    return collapse_metrics(np.concatenate(preds))
