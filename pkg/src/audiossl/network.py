"""Encoder, projector and predictor, and the online/target parameter pair.

Parameters live in flat ``{name: Tensor}`` dicts; batchnorm running
statistics live in a parallel ``{name: ndarray}`` buffer dict. Names are
prefixed ``enc.``, ``proj.`` and ``pred.``.

Encoder layout for a (N, F, M) batch of log-mels::

    batchnorm(input) -> [conv3x3 -> bn -> relu -> maxpool2x2] x 2
    -> per-frame local features (channels * M/4)
    -> [linear -> bn -> relu] x 2 (global features)
    -> concat(local, global) per frame -> concat(mean_t, max_t)
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

Params = dict[str, Tensor]
Buffers = dict[str, np.ndarray]


@dataclass(frozen=True)
class NetworkConfig:
    n_mels: int = 64
    channels: int = 64
    fc_dims: tuple[int, int] = (512, 512)
    hidden_dim: int = 4096
    out_dim: int = 256
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    use_predictor: bool = True
    dtype: str = "float32"

    @property
    def local_dim(self) -> int:
        return self.channels * (self.n_mels // 4)

    @property
    def embedding_dim(self) -> int:
        return 2 * (self.local_dim + self.fc_dims[-1])


def param_shapes(cfg: NetworkConfig, predictor: bool = True) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape table; the checkpoint manifest follows this order."""
    c = cfg.channels
    shapes: dict[str, tuple[int, ...]] = {
        "enc.bn0.gamma": (1,),
        "enc.bn0.beta": (1,),
        "enc.conv1.weight": (c, 1, 3, 3),
        "enc.conv1.bias": (c,),
        "enc.bn1.gamma": (c,),
        "enc.bn1.beta": (c,),
        "enc.conv2.weight": (c, c, 3, 3),
        "enc.conv2.bias": (c,),
        "enc.bn2.gamma": (c,),
        "enc.bn2.beta": (c,),
    }
    width = cfg.local_dim
    for k, out in enumerate(cfg.fc_dims, start=1):
        shapes[f"enc.fc{k}.weight"] = (width, out)
        shapes[f"enc.fc{k}.bias"] = (out,)
        shapes[f"enc.fcbn{k}.gamma"] = (out,)
        shapes[f"enc.fcbn{k}.beta"] = (out,)
        width = out
    heads = [("proj", cfg.embedding_dim)] + ([("pred", cfg.out_dim)] if predictor and cfg.use_predictor else [])
    for head, fan_in in heads:
        shapes[f"{head}.fc1.weight"] = (fan_in, cfg.hidden_dim)
        shapes[f"{head}.fc1.bias"] = (cfg.hidden_dim,)
        shapes[f"{head}.bn.gamma"] = (cfg.hidden_dim,)
        shapes[f"{head}.bn.beta"] = (cfg.hidden_dim,)
        shapes[f"{head}.fc2.weight"] = (cfg.hidden_dim, cfg.out_dim)
        shapes[f"{head}.fc2.bias"] = (cfg.out_dim,)
    return shapes


def buffer_shapes(cfg: NetworkConfig, predictor: bool = True) -> dict[str, tuple[int, ...]]:
    out = {}
    for name, shape in param_shapes(cfg, predictor).items():
        if name.endswith(".gamma"):
            stem = name[: -len(".gamma")]
            out[f"{stem}.running_mean"] = shape
            out[f"{stem}.running_var"] = shape
    return out


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


def init_params(cfg: NetworkConfig, rng: np.random.Generator, predictor: bool = True) -> tuple[Params, Buffers]:
    """Kaiming-uniform weights (variance 2 / fan_in), zero biases, unit/zero batchnorm affine."""
    dtype = np.dtype(cfg.dtype)
    params: Params = {}
    for name, shape in param_shapes(cfg, predictor).items():
        if name.endswith(".weight"):
            bound = np.sqrt(6.0 / _fan_in(shape))
            value = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True)
    buffers = {
        name: (np.zeros(shape) if name.endswith("mean") else np.ones(shape)).astype(dtype)
        for name, shape in buffer_shapes(cfg, predictor).items()
    }
    return params, buffers


def _bn(x: Tensor, params: Params, buffers: Buffers, stem: str, mode: str, cfg: NetworkConfig) -> Tensor:
    return T.batchnorm(
        x,
        params[f"{stem}.gamma"],
        params[f"{stem}.beta"],
        buffers.get(f"{stem}.running_mean"),
        buffers.get(f"{stem}.running_var"),
        mode=mode,
        momentum=cfg.bn_momentum,
        eps=cfg.bn_eps,
    )


def encode(params: Params, buffers: Buffers, views, mode: str = "train", cfg: NetworkConfig = NetworkConfig()) -> Tensor:
    """Embed a (N, F, M) batch of log-mels; a single (F, M) view gives a vector."""
    x = views if isinstance(views, Tensor) else Tensor(np.asarray(views, dtype=cfg.dtype))
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[2] != cfg.n_mels:
        raise ContractError(f"encoder expects (N, frames, {cfg.n_mels}) input, got {x.shape}")
    n, frames, mels = x.shape
    if frames < 4:
        raise ContractError(f"encoder needs at least 4 frames, got {frames}")
    h = T.reshape(x, (n, 1, frames, mels))
    h = _bn(h, params, buffers, "enc.bn0", mode, cfg)
    for k in (1, 2):
        h = T.conv2d(h, params[f"enc.conv{k}.weight"], params[f"enc.conv{k}.bias"])
        h = T.relu(_bn(h, params, buffers, f"enc.bn{k}", mode, cfg))
        h = T.maxpool2d(h)
    _, c, t, m = h.shape
    local = T.reshape(T.transpose(h, (0, 2, 1, 3)), (n * t, c * m))
    g = local
    for k in range(1, len(cfg.fc_dims) + 1):
        g = T.linear(g, params[f"enc.fc{k}.weight"], params[f"enc.fc{k}.bias"])
        g = T.relu(_bn(g, params, buffers, f"enc.fcbn{k}", mode, cfg))
    frame_feats = T.reshape(T.concat(local, g, axis=1), (n, t, c * m + cfg.fc_dims[-1]))
    emb = T.concat(T.reduce_mean_axis(frame_feats, 1), T.reduce_max_axis(frame_feats, 1), axis=1)
    return T.reshape(emb, (emb.shape[1],)) if single else emb


def head(params: Params, buffers: Buffers, prefix: str, x: Tensor, mode: str = "train", cfg: NetworkConfig = NetworkConfig()) -> Tensor:
    """linear -> batchnorm -> relu -> linear. No output normalization."""
    w1 = params[f"{prefix}.fc1.weight"]
    if x.ndim != 2 or x.shape[1] != w1.shape[0]:
        raise ContractError(f"{prefix} head expects (n, {w1.shape[0]}) input, got {x.shape}")
    h = T.linear(x, w1, params[f"{prefix}.fc1.bias"])
    h = T.relu(_bn(h, params, buffers, f"{prefix}.bn", mode, cfg))
    return T.linear(h, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])


def project(params: Params, buffers: Buffers, emb: Tensor, mode: str = "train", cfg: NetworkConfig = NetworkConfig()) -> Tensor:
    return head(params, buffers, "proj", emb, mode, cfg)


def predict(params: Params, buffers: Buffers, z: Tensor, mode: str = "train", cfg: NetworkConfig = NetworkConfig()) -> Tensor:
    return head(params, buffers, "pred", z, mode, cfg)


@dataclass
class DualNetworkState:
    """Online parameters (encoder, projector, predictor) and their EMA target."""

    online: Params
    target: Params
    online_buffers: Buffers
    target_buffers: Buffers
    tau: float = 0.995
    config: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        for name, p in self.target.items():
            if name.startswith("pred."):
                raise ContractError("target network carries no predictor")
            if name not in self.online or self.online[name].shape != p.shape:
                raise ContractError(f"target parameter {name!r} has no congruent online parameter")

    def copy(self) -> "DualNetworkState":
        return DualNetworkState(
            {k: Tensor(v.data, requires_grad=True) for k, v in self.online.items()},
            {k: Tensor(v.data) for k, v in self.target.items()},
            copy.deepcopy(self.online_buffers),
            copy.deepcopy(self.target_buffers),
            self.tau,
            self.config,
        )


def _target_view(params: Params) -> Params:
    return {k: Tensor(v.data) for k, v in params.items() if not k.startswith("pred.")}


def init(rng: np.random.Generator, cfg: NetworkConfig = NetworkConfig(), tau: float = 0.995) -> DualNetworkState:
    """Fresh online network; the target starts as an exact copy without the predictor."""
    online, buffers = init_params(cfg, rng)
    target_buffers = {k: v.copy() for k, v in buffers.items() if not k.startswith("pred.")}
    return DualNetworkState(online, _target_view(online), buffers, target_buffers, tau, cfg)


def ema_update(state: DualNetworkState) -> DualNetworkState:
    """Move every target parameter to ``tau * target + (1 - tau) * online``.

    Target batchnorm running statistics are copied from the online network.
    Updates ``state`` in place and returns it.
    """
    tau = state.tau
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"tau must lie in [0, 1], got {tau}")
    for name, xi in state.target.items():
        theta = state.online[name].data
        state.target[name] = Tensor((tau * xi.data + (1.0 - tau) * theta).astype(xi.dtype))
    for name in state.target_buffers:
        state.target_buffers[name] = state.online_buffers[name].copy()
    return state


def online_predictions(state: DualNetworkState, views, mode: str = "train") -> Tensor:
    cfg = state.config
    emb = encode(state.online, state.online_buffers, views, mode, cfg)
    z = project(state.online, state.online_buffers, emb, mode, cfg)
    if cfg.use_predictor:
        z = predict(state.online, state.online_buffers, z, mode, cfg)
    return T.l2_normalize(z)


def target_projections(state: DualNetworkState, views, mode: str = "train") -> Tensor:
    cfg = state.config
    with T.no_grad():
        emb = encode(state.target, state.target_buffers, views, mode, cfg)
        z = project(state.target, state.target_buffers, emb, mode, cfg)
        return T.l2_normalize(z).detach()


def forward_pair(state: DualNetworkState, views, views_other, mode: str = "train") -> tuple[Tensor, Tensor]:
    """Normalized online predictions of ``views`` and target projections of ``views_other``.

    The target branch is computed without a graph, so no gradient can reach it.
    """
    return online_predictions(state, views, mode), target_projections(state, views_other, mode)
