"""
Minimal dense network engine.

A ``Network`` is an ordered list of dense / relu / dropout-site layers plus one
(W, b) pair per dense layer. Arrays are row-major: a batch of ``n`` inputs is an
``(n, in_dim)`` array and ``h @ W + b`` maps it through a dense layer. A single
input vector ``(in_dim,)`` is accepted everywhere and treated as one row.

Dropout is inverted: surviving activations are scaled by ``1 / (1 - rate)`` at
drop time, so rate 0 is the identity and the no-dropout pass needs no correction.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import (
    ConfigError,
    PersistenceError,
    RateDomainError,
    ShapeError,
    TrainingDivergenceError,
)
from .utils import derive_seed, dump_json, load_json, make_rng

logger = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "relu", "dropout")
MODEL_FORMAT = "rate-in-network"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    site_id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ConfigError(f"{self.kind} layer must keep its width ({self.in_dim}->{self.out_dim})")
        if (self.kind == "dropout") != (self.site_id is not None):
            raise ConfigError("site_id is required on dropout layers and only there")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def validate_architecture(layers: Sequence[LayerSpec]) -> tuple[LayerSpec, ...]:
    layers = tuple(layers)
    if not layers:
        raise ConfigError("architecture is empty")
    if not any(layer.kind == "dense" for layer in layers):
        raise ConfigError("architecture needs at least one dense layer")
    for k, (a, b) in enumerate(zip(layers, layers[1:])):
        if a.out_dim != b.in_dim:
            raise ConfigError(f"layers {k} and {k + 1} are not dimension-compatible ({a.out_dim} != {b.in_dim})")
    sites = [layer.site_id for layer in layers if layer.kind == "dropout"]
    if len(sites) != len(set(sites)):
        raise ConfigError(f"duplicate dropout site ids: {sites}")
    return layers


def regression_architecture(hidden: Sequence[int] = (50, 50), in_dim: int = 1, out_dim: int = 1) -> list[LayerSpec]:
    """Dense stack with a ReLU and a dropout site after every hidden layer."""
    return _mlp(in_dim, hidden, out_dim)


def classifier_architecture(in_dim: int, classes: int, hidden: Sequence[int] = (16,)) -> list[LayerSpec]:
    return _mlp(in_dim, hidden, classes)


def _mlp(in_dim: int, hidden: Sequence[int], out_dim: int) -> list[LayerSpec]:
    layers: list[LayerSpec] = []
    width = in_dim
    for k, size in enumerate(hidden, start=1):
        layers.append(LayerSpec("dense", width, size))
        layers.append(LayerSpec("relu", size, size))
        layers.append(LayerSpec("dropout", size, size, site_id=f"h{k}"))
        width = size
    layers.append(LayerSpec("dense", width, out_dim))
    return layers


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[LayerSpec, ...]
    weights: tuple[tuple[np.ndarray, np.ndarray], ...]
    rng_seed: int

    def __post_init__(self) -> None:
        dense = [layer for layer in self.layers if layer.kind == "dense"]
        if len(dense) != len(self.weights):
            raise ShapeError(f"{len(dense)} dense layers but {len(self.weights)} weight pairs")
        for layer, (w, b) in zip(dense, self.weights):
            if w.shape != (layer.in_dim, layer.out_dim) or b.shape != (layer.out_dim,):
                raise ShapeError(
                    f"weights {w.shape}/{b.shape} do not match dense layer {layer.in_dim}->{layer.out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def site_ids(self) -> tuple[str, ...]:
        return tuple(layer.site_id for layer in self.layers if layer.kind == "dropout")

    def site_width(self, site_id: str) -> int:
        for layer in self.layers:
            if layer.site_id == site_id:
                return layer.out_dim
        raise ConfigError(f"unknown dropout site {site_id!r}")


@dataclass(frozen=True, eq=False)
class ActivationTrace:
    """Signals at one dropout site for one forward call."""

    site_id: str
    pre: np.ndarray
    post: np.ndarray
    mask: np.ndarray
    rate: float


def init_network(layers: Sequence[LayerSpec], seed: int) -> Network:
    """Seeded He-uniform weights (bound sqrt(6 / fan_in)); biases U(+-1/sqrt(fan_in))."""
    layers = validate_architecture(layers)
    rng = make_rng(seed)
    weights = []
    for layer in layers:
        if layer.kind != "dense":
            continue
        bound = np.sqrt(6.0 / layer.in_dim)
        w = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
        b = rng.uniform(-1.0, 1.0, size=layer.out_dim) / np.sqrt(layer.in_dim)
        weights.append((w, b))
    return Network(layers=layers, weights=tuple(weights), rng_seed=int(seed))


def _as_batch(net: Network, x: Any) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {np.shape(x)} does not fit network input width {net.in_dim}")
    return arr, single


def check_rates(net: Network, rates: Mapping[str, float] | None) -> dict[str, float]:
    """Complete, validated site -> rate map (``None`` means no dropout anywhere)."""
    if rates is None:
        return {site: 0.0 for site in net.site_ids}
    unknown = set(rates) - set(net.site_ids)
    if unknown:
        raise ConfigError(f"unknown dropout sites {sorted(unknown)}; network has {list(net.site_ids)}")
    missing = [site for site in net.site_ids if site not in rates]
    if missing:
        raise ConfigError(f"no rate given for dropout sites {missing}")
    checked = {}
    for site in net.site_ids:
        rate = float(rates[site])
        if not 0.0 <= rate < 1.0:
            raise RateDomainError(f"dropout rate for {site!r} must be in [0, 1), got {rate}")
        checked[site] = rate
    return checked


def forward(
    net: Network,
    x: Any,
    rates: Mapping[str, float] | None = None,
    mask_seed: int = 0,
    stop_at: str | None = None,
) -> tuple[np.ndarray, list[ActivationTrace]]:
    """
    Forward pass with dropout applied at every site per ``rates``.

    The mask at site k is drawn from ``derive_seed(mask_seed, k)``, so the same
    (weights, x, rates, mask_seed) always reproduces the same output and traces.
    With ``stop_at`` the pass ends right after that site and the returned output
    is the site's post-dropout activation.
    """
    h, single = _as_batch(net, x)
    rates = check_rates(net, rates)
    if stop_at is not None and stop_at not in rates:
        raise ConfigError(f"unknown dropout site {stop_at!r}")

    traces: list[ActivationTrace] = []
    dense_idx = 0
    site_idx = 0
    for layer in net.layers:
        if layer.kind == "dense":
            w, b = net.weights[dense_idx]
            h = h @ w + b
            dense_idx += 1
        elif layer.kind == "relu":
            h = np.maximum(h, 0.0)
        else:
            rate = rates[layer.site_id]
            if rate == 0.0:
                mask = np.ones(h.shape, dtype=bool)
                post = h
            else:
                rng = make_rng(derive_seed(mask_seed, site_idx))
                mask = rng.random(h.shape) >= rate
                post = h * mask / (1.0 - rate)
            traces.append(
                ActivationTrace(
                    site_id=layer.site_id,
                    pre=h[0] if single else h,
                    post=post[0] if single else post,
                    mask=mask[0] if single else mask,
                    rate=rate,
                )
            )
            h = post
            site_idx += 1
            if layer.site_id == stop_at:
                break
    return (h[0] if single else h), traces


def predict(net: Network, x: Any) -> np.ndarray:
    """Deterministic no-dropout output."""
    out, _ = forward(net, x)
    return out


# ---------------------------------------------------------------- training


def _forward_cache(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    inputs = []
    h = x
    dense_idx = 0
    for layer in net.layers:
        inputs.append(h)
        if layer.kind == "dense":
            w, b = net.weights[dense_idx]
            h = h @ w + b
            dense_idx += 1
        elif layer.kind == "relu":
            h = np.maximum(h, 0.0)
    return h, inputs


def _loss_head(out: np.ndarray, targets: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    if loss == "mse":
        diff = out - targets
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    if loss == "xent":
        n = out.shape[0]
        labels = targets.astype(np.int64)
        logp = log_softmax(out, axis=1)
        value = float(-np.mean(logp[np.arange(n), labels]))
        grad = softmax(out, axis=1)
        grad[np.arange(n), labels] -= 1.0
        return value, grad / n
    raise ConfigError(f"unknown loss {loss!r}")


def loss_and_gradients(
    net: Network, x: Any, targets: Any, loss: str = "mse"
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """
    Training loss and its analytic gradient for every (W, b) pair.

    Dropout sites are transparent during training; rates are only applied at
    inference. ``loss`` is ``"mse"`` (targets shaped like the output) or
    ``"xent"`` (integer class labels, softmax cross-entropy on the logits).
    """
    xb, _ = _as_batch(net, x)
    targets = np.asarray(targets, dtype=np.float64)
    if loss == "mse":
        targets = targets.reshape(xb.shape[0], net.out_dim)
    out, inputs = _forward_cache(net, xb)
    value, grad = _loss_head(out, targets, loss)

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    dense_idx = len(net.weights)
    for layer, h_in in zip(reversed(net.layers), reversed(inputs)):
        if layer.kind == "dense":
            dense_idx -= 1
            w, _ = net.weights[dense_idx]
            grads.append((h_in.T @ grad, grad.sum(axis=0)))
            grad = grad @ w.T
        elif layer.kind == "relu":
            grad = grad * (h_in > 0.0)
    grads.reverse()
    return value, grads


class Adam:
    """Adam update over a list of (W, b) pairs."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g**2
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def _fit(net: Network, x: np.ndarray, targets: np.ndarray, loss: str, epochs: int, lr: float) -> tuple[Network, np.ndarray]:
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    history = np.empty(epochs)
    optimizer = Adam(lr)
    params = [p for pair in net.weights for p in pair]
    for epoch in range(epochs):
        value, grads = loss_and_gradients(net, x, targets, loss)
        if not np.isfinite(value):
            raise TrainingDivergenceError(epoch, value)
        history[epoch] = value
        params = optimizer.step(params, [g for pair in grads for g in pair])
        net = dataclasses.replace(net, weights=tuple(zip(params[0::2], params[1::2])))
    if epochs:
        logger.debug("trained %d epochs, final loss %.6g", epochs, history[-1])
    return net, history


def train_regression(
    x: Any,
    y: Any,
    layers: Sequence[LayerSpec],
    epochs: int = 1000,
    lr: float = 0.01,
    seed: int = 123,
    return_history: bool = False,
):
    """Full-batch Adam on MSE. Returns the trained network (and loss per epoch)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)
    if len(x) == 0:
        raise ConfigError("training data is empty")
    net = init_network(layers, seed)
    if net.out_dim != 1:
        raise ConfigError(f"regression architecture must end in out_dim 1, got {net.out_dim}")
    net, history = _fit(net, x, y, "mse", epochs, lr)
    return (net, history) if return_history else net


def train_classifier(
    x: Any,
    labels: Any,
    layers: Sequence[LayerSpec],
    epochs: int = 500,
    lr: float = 0.01,
    seed: int = 123,
    return_history: bool = False,
):
    """Full-batch Adam on softmax cross-entropy; outputs are logits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    if len(x) == 0 or len(labels) != len(x):
        raise ConfigError("classification data is empty or labels do not match inputs")
    net = init_network(layers, seed)
    if labels.min() < 0 or labels.max() >= net.out_dim or not np.all(labels == np.round(labels)):
        raise ConfigError(f"labels must be integers in [0, {net.out_dim - 1}]")
    net, history = _fit(net, x, labels.astype(np.int64), "xent", epochs, lr)
    return (net, history) if return_history else net


# ---------------------------------------------------------------- persistence


def network_to_dict(net: Network, provenance: Mapping[str, Any] | None = None) -> dict[str, Any]:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "seed": net.rng_seed,
        "layers": [layer.to_dict() for layer in net.layers],
        "weights": [{"W": w.tolist(), "b": b.tolist()} for w, b in net.weights],
    }
    if provenance:
        payload["provenance"] = dict(provenance)
    return payload


def network_from_dict(payload: Mapping[str, Any]) -> Network:
    if payload.get("format") != MODEL_FORMAT:
        raise PersistenceError(f"not a model file (format={payload.get('format')!r})")
    if payload.get("version") != MODEL_VERSION:
        raise PersistenceError(f"unsupported model format version {payload.get('version')!r}")
    try:
        layers = validate_architecture(LayerSpec(**spec) for spec in payload["layers"])
        weights = tuple(
            (np.array(pair["W"], dtype=np.float64).reshape(layer.in_dim, layer.out_dim), np.array(pair["b"], dtype=np.float64))
            for pair, layer in zip(payload["weights"], [lay for lay in layers if lay.kind == "dense"])
        )
        return Network(layers=layers, weights=weights, rng_seed=int(payload["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"malformed model file: {exc}") from exc


def save_network(net: Network, path: str | Path, provenance: Mapping[str, Any] | None = None) -> Path:
    return dump_json(path, network_to_dict(net, provenance))


def load_network(path: str | Path) -> Network:
    return network_from_dict(load_json(path))
