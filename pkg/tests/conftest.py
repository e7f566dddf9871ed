import time
from dataclasses import dataclass, replace

import numpy as np
import pytest

from audiossl.config import Config
from audiossl.data import load_clips
from audiossl.frontend import SAMPLE_RATE, AudioClip
from audiossl.losses import LossWeights
from audiossl.network import NetworkConfig
from audiossl.synth import make_corpus
from audiossl.trainer import fit

# desk-scale pretraining recipe for the synthetic-corpus experiments
DESK_LR = 1e-3
DESK_BATCH = 16
DESK_EPOCHS = 20


def tiny_config(**train) -> Config:
    """A network and crop small enough that a full fit takes well under a second."""
    cfg = Config()
    return replace(
        cfg,
        network=NetworkConfig(n_mels=8, channels=2, fc_dims=(4, 4), hidden_dim=8, out_dim=4),
        frontend=replace(cfg.frontend, clip_seconds=0.05),
        train=replace(cfg.train, **{"batch_size": 4, "epochs": 2, "precision": "double", "learning_rate": 1e-3, **train}),
    )


def desk_config(batch_size=DESK_BATCH, epochs=DESK_EPOCHS, ablation=False) -> Config:
    cfg = Config()
    cfg = replace(cfg, train=replace(cfg.train, learning_rate=DESK_LR, batch_size=batch_size, epochs=epochs))
    if ablation:
        cfg = replace(
            cfg,
            loss=LossWeights(0.0, 0.0),
            network=replace(cfg.network, use_predictor=False),
            train=replace(cfg.train, tau=0.0),
        )
    return cfg


def noise_clips(n=8, seconds=0.2, seed=0):
    rng = np.random.default_rng(seed)
    return [AudioClip(rng.uniform(-0.5, 0.5, int(seconds * SAMPLE_RATE)), SAMPLE_RATE) for _ in range(n)]


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus_small"), classes=4, n_per_class=5, seed=0)


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """The 4-class, 100-clip synthetic corpus used by the desk experiments."""
    return make_corpus(tmp_path_factory.mktemp("corpus"), classes=4, n_per_class=25, seed=0)


@dataclass
class Run:
    result: object
    config: Config
    seconds: float


class RunCache:
    def __init__(self, manifest):
        self.manifest = manifest
        self.clips, _ = load_clips(manifest)
        self._runs = {}

    def get(self, batch_size=DESK_BATCH, epochs=DESK_EPOCHS, ablation=False) -> Run:
        key = (batch_size, epochs, ablation)
        if key not in self._runs:
            cfg = desk_config(batch_size, epochs, ablation)
            tic = time.perf_counter()
            res = fit(self.clips, cfg)
            self._runs[key] = Run(res, cfg, time.perf_counter() - tic)
        return self._runs[key]


@pytest.fixture(scope="session")
def desk_runs(synth_corpus):
    return RunCache(synth_corpus)


# -- acceptance summary ------------------------------------------------------------

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
