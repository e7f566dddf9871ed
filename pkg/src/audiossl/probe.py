"""Linear evaluation on frozen embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import network as N
from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint
from .config import ProbeConfig
from .data import Manifest, load_clips
from .errors import ContractError, FormatError
from .frontend import N_MELS, AudioClip, logmel, random_crop_clip
from .trainer import CROP_STREAM, item_rng


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent.

    Features are standardized with statistics of the training data only.

    Parameters
    ----------
    learning_rate : float
        Fixed gradient-descent step size.
    iterations : int
        Number of full-batch steps.
    standardize : bool
        Center and scale each feature using the training mean and std.
    """

    def __init__(self, learning_rate: float = 0.1, iterations: int = 300, standardize: bool = True):
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.standardize = standardize

    def _scale(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ContractError("linear probe needs at least 2 classes in the training data")
        n, d = X.shape
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 1e-12, std, 1.0)
        else:
            self.mean_, self.scale_ = np.zeros(d), np.ones(d)
        Xs = self._scale(X)
        onehot = np.eye(len(self.classes_))[codes]
        W = np.zeros((d, len(self.classes_)))
        b = np.zeros(len(self.classes_))
        history = []
        for _ in range(self.iterations):
            logits = Xs @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            prob = np.exp(logits)
            prob /= prob.sum(axis=1, keepdims=True)
            history.append(float(-np.log(np.maximum(prob[np.arange(n), codes], 1e-300)).mean()))
            err = (prob - onehot) / n
            W -= self.learning_rate * (Xs.T @ err)
            b -= self.learning_rate * err.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        self.loss_history_ = history
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return self._scale(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        logits = self.decision_function(X)
        logits -= logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        return prob / prob.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def evaluate(classifier, X, y) -> dict:
    """Top-1 accuracy and per-class accuracy on a non-empty test set."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ContractError("cannot evaluate on an empty fold")
    pred = np.asarray(classifier.predict(X))
    per_class = {str(c): float(np.mean(pred[y == c] == c)) for c in np.unique(y)}
    return {"accuracy": float(np.mean(pred == y)), "per_class": per_class, "n": int(len(y))}


@dataclass
class EmbeddingTable:
    ids: list[str]
    labels: np.ndarray
    folds: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.folds = np.asarray(self.folds, dtype=int)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or len({len(self.ids), len(self.labels), len(self.folds), len(self.embeddings)}) != 1:
            raise ContractError("embedding table columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.ids)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label", "fold"] + [f"e{k}" for k in range(self.embeddings.shape[1])])
            for i, lab, fold, row in zip(self.ids, self.labels, self.folds, self.embeddings):
                w.writerow([i, lab, int(fold)] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "EmbeddingTable":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[:3] != ["id", "label", "fold"]:
                raise FormatError(f"{path}: header must start with id,label,fold")
            ids, labels, folds, rows = [], [], [], []
            for rec in reader:
                if len(rec) != len(header):
                    raise FormatError(f"{path}: row {len(ids) + 2} has {len(rec)} fields, expected {len(header)}")
                ids.append(rec[0])
                labels.append(rec[1])
                folds.append(int(rec[2]))
                rows.append([float(v) for v in rec[3:]])
        return cls(ids, labels, folds, np.array(rows).reshape(len(ids), len(header) - 3))


def eval_crops(clips: Sequence[AudioClip], seed: int = 0, seconds: float | None = None, n_mels: int = N_MELS) -> list[np.ndarray]:
    """Log-mels of one random crop per clip, crop length = mean clip duration by default."""
    if seconds is None:
        seconds = float(np.mean([c.duration for c in clips]))
    return [logmel(random_crop_clip(c, seconds, item_rng(seed, 0, i, CROP_STREAM)), n_mels) for i, c in enumerate(clips)]


def embed(state: N.DualNetworkState, inputs: Sequence[np.ndarray], source: str = "online", level: str = "embedding", chunk: int = 16) -> np.ndarray:
    """Eval-mode encoder (or projector) outputs for equally shaped log-mels."""
    if source not in ("online", "target"):
        raise ContractError(f"source must be 'online' or 'target', got {source!r}")
    params = state.online if source == "online" else state.target
    buffers = state.online_buffers if source == "online" else state.target_buffers
    cfg = state.config
    out = []
    with T.no_grad():
        for start in range(0, len(inputs), chunk):
            x = np.stack(inputs[start : start + chunk]).astype(cfg.dtype)
            h = N.encode(params, buffers, x, "eval", cfg)
            if level == "projection":
                h = N.project(params, buffers, h, "eval", cfg)
            out.append(h.data.astype(np.float64))
    return np.concatenate(out)


def extract_embeddings(checkpoint, manifest: Manifest, source: str = "online", level: str = "embedding", seed: int = 0) -> EmbeddingTable:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    clips, rows = load_clips(manifest)
    if not clips:
        raise ContractError("no readable audio in manifest")
    feats = embed(ckpt.state, eval_crops(clips, seed, n_mels=ckpt.state.config.n_mels), source, level)
    return EmbeddingTable([r.path for r in rows], [r.label for r in rows], [r.fold for r in rows], feats)


def raw_logmel_table(manifest: Manifest, seed: int = 0) -> EmbeddingTable:
    """Baseline features: the flattened log-mel of the same evaluation crops."""
    clips, rows = load_clips(manifest)
    feats = np.stack([m.reshape(-1) for m in eval_crops(clips, seed)])
    return EmbeddingTable([r.path for r in rows], [r.label for r in rows], [r.fold for r in rows], feats)


def train_linear(table: EmbeddingTable, train_folds: Sequence[int], config: ProbeConfig = ProbeConfig()) -> LinearProbe:
    mask = np.isin(table.folds, list(train_folds))
    if len(np.unique(table.labels[mask])) < 2:
        raise ContractError("training folds contain fewer than 2 classes")
    probe = LinearProbe(config.learning_rate, config.iterations)
    return probe.fit(table.embeddings[mask], table.labels[mask])


def cross_validate(table: EmbeddingTable, config: ProbeConfig = ProbeConfig()) -> dict:
    """Leave-one-fold-out accuracy over every fold present in the table."""
    folds = sorted(set(int(f) for f in table.folds))
    if len(folds) < 2:
        raise ContractError("cross-validation needs at least 2 folds")
    per_fold = {}
    for f in folds:
        clf = train_linear(table, [g for g in folds if g != f], config)
        test = table.folds == f
        per_fold[str(f)] = evaluate(clf, table.embeddings[test], table.labels[test])
    accs = [r["accuracy"] for r in per_fold.values()]
    return {"folds": per_fold, "mean": float(np.mean(accs)), "std": float(np.std(accs))}
