"""Dimension reduction: tensor pooling, PCA, and a trainable projector.

The projector is a small affine stack (rectifier activations) trained as
a per-frame classifier with Adam on softmax cross-entropy; its
penultimate layer is the embedding used as the reduced feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import logsumexp

DEFAULT_PCA_DIM = 64
DEFAULT_EMBED_DIM = 20
DEFAULT_HIDDEN_DIM = 256


class PoolKind(str, Enum):
    GAP = "gap"  # global average pooling
    GMP = "gmp"  # global max pooling


@dataclass(frozen=True)
class FeatureTensor:
    """A C x H x W stack of spatial filter responses."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"tensor must be 3-D (C, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def global_pool(tensor: FeatureTensor, kind: PoolKind | str) -> np.ndarray:
    """Collapse each channel's spatial map to its mean (GAP) or max (GMP)."""
    if PoolKind(kind) is PoolKind.GAP:
        return tensor.data.mean(axis=(1, 2))
    return tensor.data.max(axis=(1, 2))


@dataclass(frozen=True)
class PcaProjector:
    """Fitted linear map: center on `mean`, project onto `axes` columns.

    Columns of axes are orthonormal principal directions in descending
    eigenvalue order, each oriented so its largest-magnitude entry is
    positive.
    """

    mean: np.ndarray
    axes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=np.float64))

    @property
    def input_dim(self) -> int:
        return self.axes.shape[0]

    @property
    def output_dim(self) -> int:
        return self.axes.shape[1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "mean": self.mean.tolist(),
            "axes": self.axes.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaProjector":
        return cls(np.asarray(d["mean"]), np.asarray(d["axes"]))


def pca_fit(frames: np.ndarray, k: int) -> PcaProjector:
    """Top-k principal axes of the sample covariance.

    Requires at least two frames and k <= min(M - 1, D).
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (M, D) matrix with M >= 2, got shape {x.shape}")
    m, d = x.shape
    if not 1 <= k <= min(m - 1, d):
        raise ValueError(f"k must be in [1, min(M-1, D)] = [1, {min(m - 1, d)}], got {k}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    axes = evecs[:, order]
    # deterministic orientation: largest-magnitude entry of each axis positive
    for j in range(k):
        i = int(np.argmax(np.abs(axes[:, j])))
        if axes[i, j] < 0:
            axes[:, j] = -axes[:, j]
    return PcaProjector(mean, axes)


def pca_project(projector: PcaProjector, x: np.ndarray) -> np.ndarray:
    """Project a (D,) vector or (M, D) batch onto the principal axes."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != projector.input_dim:
        raise ValueError(
            f"dimension mismatch: expected {projector.input_dim}, got {x.shape[-1]}"
        )
    return (x - projector.mean) @ projector.axes


def pca_reconstruct(projector: PcaProjector, z: np.ndarray) -> np.ndarray:
    """Map projected coordinates back into the original space."""
    return np.asarray(z) @ projector.axes.T + projector.mean


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters and the training schedule."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
        }


class Adam:
    """Adam state over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], cfg: AdamConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update params in place from one batch of gradients."""
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


@dataclass
class ProjectorNet:
    """Affine stack with rectifier activations after every hidden layer.

    sizes = [D, h1, ..., e, n_classes]; the penultimate layer (size e) is
    the embedding, the final layer is the classification head used only
    during training.
    """

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    adam_config: AdamConfig = field(default_factory=AdamConfig)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def embed_dim(self) -> int:
        return self.sizes[-2]

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "adam_config": self.adam_config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectorNet":
        return cls(
            sizes=tuple(int(s) for s in d["sizes"]),
            weights=[np.asarray(w, dtype=np.float64) for w in d["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
            adam_config=AdamConfig(**d.get("adam_config", {})),
        )


def default_architecture(input_dim: int, n_classes: int,
                         hidden: int = DEFAULT_HIDDEN_DIM,
                         embed: int = DEFAULT_EMBED_DIM) -> list[int]:
    return [input_dim, hidden, embed, n_classes]


def projector_init(arch: list[int], cfg: AdamConfig | None = None, seed: int = 0) -> ProjectorNet:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(arch) < 3:
        raise ValueError(f"arch needs at least [D, e, n_classes], got {arch}")
    if any(s < 1 for s in arch):
        raise ValueError(f"layer sizes must be positive, got {arch}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ProjectorNet(tuple(arch), weights, biases, cfg or AdamConfig())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(net: ProjectorNet, x: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs of every layer (logits last)."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def cross_entropy_loss_and_grads(
    net: ProjectorNet, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean softmax cross-entropy over the batch and its parameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    acts = _forward(net, x)
    logits = acts[-1]
    batch = x.shape[0]
    log_norm = logsumexp(logits, axis=1)
    loss = float(np.mean(log_norm - logits[np.arange(batch), y]))

    delta = softmax(logits)
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads_w: list[np.ndarray] = [None] * len(net.weights)
    grads_b: list[np.ndarray] = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return loss, grads_w, grads_b


def projector_train(
    frames: np.ndarray,
    labels: np.ndarray,
    arch: list[int] | None = None,
    cfg: AdamConfig | None = None,
    seed: int = 0,
) -> tuple[ProjectorNet, list[float]]:
    """Train the projector as a per-frame classifier.

    Frames are shuffled each epoch (seeded) and consumed in mini-batches;
    returns the net and the per-epoch mean training loss.
    """
    x = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"frames must be a non-empty (M, D) matrix, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must be one class id per frame")
    cfg = cfg or AdamConfig()
    if arch is None:
        arch = default_architecture(x.shape[1], int(y.max()) + 1)
    if arch[0] != x.shape[1]:
        raise ValueError(f"arch input size {arch[0]} does not match frame dim {x.shape[1]}")
    if y.min() < 0 or y.max() >= arch[-1]:
        raise ValueError(f"labels must lie in [0, {arch[-1]}), got range [{y.min()}, {y.max()}]")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))  # shuffle stream
    net = projector_init(arch, cfg, seed=seed)
    params = net.weights + net.biases
    adam = Adam(params, cfg)

    m = x.shape[0]
    losses: list[float] = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads_w, grads_b = cross_entropy_loss_and_grads(net, x[idx], y[idx])
            total += loss * idx.size
            adam.step(params, grads_w + grads_b)
        losses.append(total / m)
    return net, losses


def projector_embed(net: ProjectorNet, x: np.ndarray) -> np.ndarray:
    """Forward pass up to the post-activation embedding layer (no head)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"dimension mismatch: expected {net.input_dim}, got {x.shape[-1]}")
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h
