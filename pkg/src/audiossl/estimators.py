"""scikit-learn style wrappers around the frontend and the pretraining loop."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import Config, _validate
from .errors import ContractError
from .frontend import CLIP_SECONDS, FLOOR_EPS, N_MELS, SAMPLE_RATE, AudioClip, load_clip, logmel, random_crop_clip
from .losses import LossWeights
from .network import NetworkConfig
from .probe import LinearProbe, embed, eval_crops
from .trainer import CROP_STREAM, corpus_report, fit, item_rng

__all__ = ["LinearProbe", "LogMelTransformer", "SelfSupervisedPretrainer", "as_clips"]


def as_clips(X) -> list[AudioClip]:
    """Accept clips, WAV paths, or 1-D sample arrays already at 16 kHz."""
    if isinstance(X, (AudioClip, str, Path)) or (isinstance(X, np.ndarray) and X.ndim == 1):
        raise ContractError("expected a sequence of clips, not a single clip")
    out = []
    for item in X:
        if isinstance(item, AudioClip):
            out.append(item)
        elif isinstance(item, (str, Path)):
            out.append(load_clip(item))
        else:
            out.append(AudioClip(np.asarray(item, dtype=np.float64), SAMPLE_RATE))
    if not out:
        raise ContractError("no clips given")
    return out


class LogMelTransformer(TransformerMixin, BaseEstimator):
    """Clips to an (n, frames, n_mels) stack of log-mel spectrograms.

    With ``clip_seconds`` set every clip is first randomly cropped (or tiled)
    to that length using ``seed``; otherwise all clips must yield the same
    number of frames. ``flatten`` returns (n, frames * n_mels) instead.
    """

    def __init__(self, clip_seconds: float | None = CLIP_SECONDS, n_mels: int = N_MELS, floor_eps: float = FLOOR_EPS, seed: int = 0, flatten: bool = False):
        self.clip_seconds = clip_seconds
        self.n_mels = n_mels
        self.floor_eps = floor_eps
        self.seed = seed
        self.flatten = flatten

    def fit(self, X, y=None):
        self.n_clips_seen_ = len(as_clips(X))
        return self

    def transform(self, X):
        clips = as_clips(X)
        if self.clip_seconds is not None:
            clips = [random_crop_clip(c, self.clip_seconds, item_rng(self.seed, 0, i, CROP_STREAM)) for i, c in enumerate(clips)]
        mels = [logmel(c, self.n_mels, self.floor_eps) for c in clips]
        if len({m.shape for m in mels}) != 1:
            raise ContractError("clips have different lengths; set clip_seconds to crop them")
        out = np.stack(mels)
        return out.reshape(len(out), -1) if self.flatten else out


class SelfSupervisedPretrainer(TransformerMixin, BaseEstimator):
    """Pretrain the dual network on unlabelled clips; ``transform`` gives frozen embeddings.

    ``y`` is ignored by ``fit``. Embeddings come from eval-mode crops whose
    length is the mean clip duration of the data passed to ``transform``.
    """

    def __init__(
        self,
        learning_rate: float = 1e-4,
        batch_size: int = 64,
        epochs: int = 20,
        tau: float = 0.995,
        lambda_diversity: float = 1.0,
        lambda_decorrelation: float = 1.0,
        use_predictor: bool = True,
        seed: int = 0,
        source: str = "online",
        level: str = "embedding",
        network: NetworkConfig | None = None,
    ):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau = tau
        self.lambda_diversity = lambda_diversity
        self.lambda_decorrelation = lambda_decorrelation
        self.use_predictor = use_predictor
        self.seed = seed
        self.source = source
        self.level = level
        self.network = network

    def _config(self) -> Config:
        base = Config()
        net = self.network or base.network
        cfg = replace(
            base,
            train=replace(base.train, learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs, tau=self.tau, seed=self.seed),
            loss=LossWeights(self.lambda_diversity, self.lambda_decorrelation),
            network=replace(net, use_predictor=self.use_predictor),
        )
        if net.dtype == "float64":
            cfg = replace(cfg, train=replace(cfg.train, precision="double"))
        return _validate(cfg)

    def fit(self, X, y=None):
        clips = as_clips(X)
        self.config_ = self._config()
        result = fit(clips, self.config_)
        self.state_ = result.state
        self.history_ = result.history
        self.collapse_report_ = corpus_report(result.state, clips, self.config_)
        return self

    def transform(self, X):
        check_is_fitted(self, "state_")
        return embed(self.state_, eval_crops(as_clips(X), self.seed, n_mels=self.state_.config.n_mels), self.source, self.level)
