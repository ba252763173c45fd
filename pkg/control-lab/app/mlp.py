"""Bias-free ReLU MLP with momentum SGD and spectral normalization."""

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from shared.logging_config import get_logger
from app.errors import ConvergenceError, DimensionError
from app.linalg import power_iteration
from app.schemas import TrainingHyper

logger = get_logger(__name__)

# Warm-started power iteration budget per layer before falling back to an SVD
SN_MAX_ITER = 1000


@dataclass
class MlpNetwork:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    momentum_buffers: List[np.ndarray]
    zeta: float = 1.0
    # Last right singular vector per layer, reused as power-iteration start
    sn_vectors: List[Optional[np.ndarray]] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            momentum_buffers=[b.copy() for b in self.momentum_buffers],
            zeta=self.zeta,
            sn_vectors=[None if v is None else v.copy() for v in self.sn_vectors],
        )


def init_network(layer_sizes: Sequence[int], seed: int, zeta: float = 1.0) -> MlpNetwork:
    """
    Scaled-uniform He initialization, W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)).

    Args:
        layer_sizes: [input dim, hidden dims..., output dim]
        seed: Seed of the weight generator
        zeta: Lipschitz budget the network is normalized to

    Returns:
        MlpNetwork with zeroed momentum buffers
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("a network needs at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if zeta <= 0:
        raise ValueError("zeta must be positive")

    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
    return MlpNetwork(
        layer_sizes=sizes,
        weights=weights,
        momentum_buffers=[np.zeros_like(w) for w in weights],
        zeta=float(zeta),
        sn_vectors=[None] * len(weights),
    )


def _as_batch(net: MlpNetwork, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise DimensionError(f"expected inputs of width {net.layer_sizes[0]}, got shape {np.shape(inputs)}")
    return x


def _forward_trace(net: MlpNetwork, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Activations h_0..h_{L-1} and pre-activations z_1..z_L for a row batch."""
    activations = [x]
    pre_activations = []
    h = x
    last = net.depth - 1
    for index, w in enumerate(net.weights):
        z = h @ w.T
        pre_activations.append(z)
        if index < last:
            h = np.maximum(z, 0.0)
            activations.append(h)
    return activations, pre_activations


def forward_batch(net: MlpNetwork, inputs) -> np.ndarray:
    """Row-stacked evaluation; returns an (n, output_dim) array"""
    _, pre = _forward_trace(net, _as_batch(net, inputs))
    return pre[-1]


def forward(net: MlpNetwork, x) -> np.ndarray:
    """W^L a(W^{L-1} a(... a(W^1 x)...)) for a single input vector"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward expects a single input vector")
    return forward_batch(net, x)[0]


def loss_and_gradients(net: MlpNetwork, batch_inputs, batch_targets) -> Tuple[float, List[np.ndarray]]:
    """
    Mean squared error over the batch and its exact gradient per weight matrix.

    loss = (1/n) sum_i ||y_i - f(x_i)||^2; the ReLU subgradient at 0 is 0.
    """
    x = _as_batch(net, batch_inputs)
    y = np.asarray(batch_targets, dtype=np.float64)
    if y.ndim == 1 and y.size == x.shape[0] * net.layer_sizes[-1]:
        y = y.reshape(x.shape[0], net.layer_sizes[-1])
    if y.shape != (x.shape[0], net.layer_sizes[-1]):
        raise DimensionError(f"targets shape {y.shape} does not match batch of {x.shape[0]} x {net.layer_sizes[-1]}")
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    activations, pre = _forward_trace(net, x)
    diff = pre[-1] - y
    loss = float(np.sum(diff * diff) / n)

    grads: List[np.ndarray] = [None] * net.depth
    delta = (2.0 / n) * diff
    for index in range(net.depth - 1, -1, -1):
        grads[index] = delta.T @ activations[index]
        if index > 0:
            delta = (delta @ net.weights[index]) * (pre[index - 1] > 0.0)
    return loss, grads


def sgd_momentum_step(net: MlpNetwork, grads: Sequence[np.ndarray], hyper: TrainingHyper) -> None:
    """buffer <- momentum * buffer + grad; weight <- weight - lr * buffer (in place)"""
    if len(grads) != net.depth:
        raise DimensionError(f"expected {net.depth} gradients, got {len(grads)}")
    for w, g in zip(net.weights, grads):
        if g.shape != w.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match weight {w.shape}")
    for w, buf, g in zip(net.weights, net.momentum_buffers, grads):
        buf *= hyper.momentum
        buf += g
        w -= hyper.learning_rate * buf


def layer_spectral_norms(net: MlpNetwork, tol: float = 1e-13, max_iter: int = SN_MAX_ITER) -> List[float]:
    """
    sigma(W^l) for every layer, warm-started from the cached singular vectors.

    A layer whose power iteration stalls (clustered top singular values) is
    measured with a full SVD instead and its cached vector is dropped.
    """
    if len(net.sn_vectors) != net.depth:
        net.sn_vectors = [None] * net.depth
    sigmas = []
    for index, w in enumerate(net.weights):
        if not np.any(w):
            sigmas.append(0.0)
            continue
        try:
            sigma, v = power_iteration(w, tol=tol, max_iter=max_iter, v0=net.sn_vectors[index])
        except ConvergenceError as e:
            sigma, v = float(np.linalg.norm(w, 2)), None
            logger.debug("spectral_norm_svd_fallback", layer=index, iterations=e.iterations, sigma=sigma)
        net.sn_vectors[index] = v
        sigmas.append(sigma)
    return sigmas


def spectral_product(net: MlpNetwork, tol: float = 1e-13, max_iter: int = SN_MAX_ITER) -> float:
    """Upper bound prod_l sigma(W^l) on the network's Lipschitz constant"""
    return float(np.prod(layer_spectral_norms(net, tol=tol, max_iter=max_iter)))


def normalize_lipschitz(
    net: MlpNetwork, strict: bool = False, tol: float = 1e-13, max_iter: int = SN_MAX_ITER
) -> List[float]:
    """
    Rescale layers so that prod_l sigma(W^l) <= zeta.

    Each layer with sigma(W^l) > zeta^(1/L) becomes W^l / sigma(W^l) * zeta^(1/L);
    smaller layers are left alone unless strict is set. All-zero layers are skipped.

    Returns:
        The per-layer spectral norms measured before rescaling
    """
    target = net.zeta ** (1.0 / net.depth)
    sigmas = layer_spectral_norms(net, tol=tol, max_iter=max_iter)
    for w, sigma in zip(net.weights, sigmas):
        if sigma == 0.0:
            continue
        if strict or sigma > target:
            w *= target / sigma
    return sigmas


def empirical_lipschitz(net: MlpNetwork, domain_lo, domain_hi, n_pairs: int, seed: int) -> float:
    """
    Lower bound on the Lipschitz constant: max ||f(x) - f(x')|| / ||x - x'|| over
    uniformly sampled pairs in the box [domain_lo, domain_hi].
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    lo = np.asarray(domain_lo, dtype=np.float64)
    hi = np.asarray(domain_hi, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    x2 = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    dx = np.linalg.norm(x1 - x2, axis=1)
    df = np.linalg.norm(forward_batch(net, x1) - forward_batch(net, x2), axis=1)
    mask = dx > 0.0
    if not np.any(mask):
        return 0.0
    return float(np.max(df[mask] / dx[mask]))


class RunningScaler:
    """Welford running mean/variance used to standardize network inputs."""

    def __init__(self, dim: int, floor: float = 1e-6):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)
        self.floor = floor

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.maximum(np.sqrt(self._m2 / (self.count - 1)), self.floor)

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def train_offline(
    inputs: np.ndarray,
    targets: np.ndarray,
    layer_sizes: Sequence[int],
    hyper: TrainingHyper,
    epochs: int,
    seed: int,
    zeta: float = 1.0,
    sn_enabled: bool = True,
    sn_tol: float = 1e-13,
) -> Tuple[MlpNetwork, float]:
    """
    Epoch-based minibatch training on a fixed dataset.

    Spectral normalization (when enabled) runs before every update, as it does
    online, and once more after the last update.

    Returns:
        (trained network, wall time in seconds)
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    targets = np.asarray(targets, dtype=np.float64).reshape(len(inputs), -1)

    start = time.perf_counter()
    net = init_network(layer_sizes, seed=seed, zeta=zeta)
    rng = np.random.default_rng(seed + 1)
    n = len(inputs)
    last_loss = float("nan")
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            order = rng.permutation(n)
            for begin in range(0, n, hyper.batch_size):
                idx = order[begin : begin + hyper.batch_size]
                if sn_enabled:
                    normalize_lipschitz(net, tol=sn_tol)
                last_loss, grads = loss_and_gradients(net, inputs[idx], targets[idx])
                if not all(np.all(np.isfinite(g)) for g in grads):
                    continue
                sgd_momentum_step(net, grads, hyper)
        if sn_enabled:
            normalize_lipschitz(net, tol=sn_tol)
    wall = time.perf_counter() - start
    logger.info(
        "offline_training_completed",
        samples=n,
        epochs=epochs,
        sn_enabled=sn_enabled,
        final_batch_loss=last_loss,
        wall_time_s=round(wall, 4),
    )
    return net, wall
