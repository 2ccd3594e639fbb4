"""Per-state emission densities: diagonal Gaussians and Gaussian mixtures.

All densities are evaluated in natural-log space. Fitted variances are
floored at VAR_FLOOR and mixture weights at WEIGHT_FLOOR in every code
path, so no emission can degenerate into a spike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-3
WEIGHT_FLOOR = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianEmission:
    """Multivariate Gaussian with diagonal covariance.

    Attributes:
        mean: Mean vector, shape (d,).
        var: Per-dimension variances, shape (d,); every entry >= VAR_FLOOR.
    """

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        if mean.ndim != 1 or var.shape != mean.shape:
            raise ValueError(
                f"mean and var must be 1-D with equal shapes, got {mean.shape} and {var.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("mean/var contain non-finite values")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", np.maximum(var, VAR_FLOOR))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log pdf at x; x may be a (d,) vector or a (T, d) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}, got {x.shape[-1]}")
        diff = x - self.mean
        return -0.5 * np.sum(_LOG_2PI + np.log(self.var) + diff * diff / self.var, axis=-1)

    def draw(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) * np.sqrt(self.var)

    def to_dict(self) -> dict:
        return {"type": "gaussian", "mean": self.mean.tolist(), "var": self.var.tolist()}


@dataclass(frozen=True)
class GmmEmission:
    """Mixture of diagonal Gaussians sharing one feature dimension.

    Attributes:
        weights: Mixing proportions, shape (K,); sum to 1, each >= WEIGHT_FLOOR.
        components: K GaussianEmission instances with equal dim.
    """

    weights: np.ndarray
    components: tuple[GaussianEmission, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        components = tuple(self.components)
        if weights.ndim != 1 or weights.shape[0] != len(components):
            raise ValueError("weights must be 1-D with one entry per component")
        if len(components) < 1:
            raise ValueError("mixture needs at least one component")
        if abs(weights.sum() - 1.0) > 1e-6 or np.any(weights < 0):
            raise ValueError(f"weights must be a probability vector, got sum {weights.sum()}")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")
        weights = np.maximum(weights, WEIGHT_FLOOR)
        weights = weights / weights.sum()
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log pdf at x via log-sum-exp over components."""
        per_comp = np.stack([c.log_density(x) for c in self.components], axis=0)
        log_w = np.log(self.weights).reshape((-1,) + (1,) * (per_comp.ndim - 1))
        return logsumexp(per_comp + log_w, axis=0)

    def draw(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        ks = rng.choice(self.n_components, size=n, p=self.weights)
        means = np.stack([c.mean for c in self.components])[ks]
        stds = np.sqrt(np.stack([c.var for c in self.components]))[ks]
        return means + rng.standard_normal((n, self.dim)) * stds

    def to_dict(self) -> dict:
        return {
            "type": "gmm",
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }


Emission = GaussianEmission | GmmEmission


def emission_from_dict(d: dict) -> Emission:
    """Rebuild an emission from its JSON dict form."""
    kind = d.get("type")
    if kind == "gaussian":
        return GaussianEmission(np.asarray(d["mean"]), np.asarray(d["var"]))
    if kind == "gmm":
        comps = tuple(emission_from_dict(c) for c in d["components"])
        return GmmEmission(np.asarray(d["weights"]), comps)
    raise ValueError(f"unknown emission type: {kind!r}")


def gaussian_logpdf(g: GaussianEmission, x: np.ndarray) -> float:
    """Diagonal-Gaussian log density at a single point."""
    return float(g.log_density(np.asarray(x, dtype=np.float64)))


def gmm_logpdf(m: GmmEmission, x: np.ndarray) -> float:
    """Mixture log density at a single point, computed with log-sum-exp."""
    return float(m.log_density(np.asarray(x, dtype=np.float64)))


def fit_gaussian_mle(points: np.ndarray) -> GaussianEmission:
    """Maximum-likelihood diagonal Gaussian: column means, biased column variances.

    Variances are floored at VAR_FLOOR, so a single point yields a valid emission.
    """
    points = _as_points(points)
    mean = points.mean(axis=0)
    var = points.var(axis=0)  # biased (ddof=0)
    return GaussianEmission(mean, var)


def fit_gmm(points: np.ndarray, n_mixtures: int, em_iters: int = 100, seed: int = 0) -> GmmEmission:
    """Fit a K-component mixture: k-means++ seeding, one hard assignment, then EM.

    Args:
        points: (M, d) data matrix with M >= n_mixtures.
        n_mixtures: Number of components K.
        em_iters: Maximum EM iterations; 0 returns the hard-assignment mixture.
        seed: Drives k-means++ center selection.

    Returns:
        The fitted mixture. With em_iters > 0, EM runs until the total
        log-likelihood changes by less than 1e-6 (relative) or the
        iteration budget is exhausted.
    """
    points = _as_points(points)
    m = points.shape[0]
    if n_mixtures < 1:
        raise ValueError(f"n_mixtures must be >= 1, got {n_mixtures}")
    if m < n_mixtures:
        raise ValueError(f"need at least {n_mixtures} points to fit {n_mixtures} mixtures, got {m}")

    rng = np.random.default_rng(seed)
    center_idx = _kmeanspp_centers(points, n_mixtures, rng)
    assign = _nearest_center(points, points[center_idx])

    comps = []
    counts = np.zeros(n_mixtures)
    for k in range(n_mixtures):
        cluster = points[assign == k]
        if cluster.shape[0] == 0:
            # a center can end up with no nearest points; keep its seed point
            cluster = points[center_idx[k]][None, :]
        comps.append(fit_gaussian_mle(cluster))
        counts[k] = cluster.shape[0]
    mix = GmmEmission(counts / counts.sum(), tuple(comps))

    if em_iters <= 0:
        return mix
    mix, _ = gmm_em(points, mix, em_iters)
    return mix


def gmm_em(
    points: np.ndarray, init: GmmEmission, max_iters: int, rel_tol: float = 1e-6
) -> tuple[GmmEmission, list[float]]:
    """Standard EM refinement of a mixture, warm-started from `init`.

    Returns the refined mixture and the per-iteration total log-likelihood
    trace (evaluated before each M-step). The trace is non-decreasing up
    to the flooring applied each step.
    """
    points = _as_points(points)
    m, d = points.shape
    k = init.n_components
    weights = init.weights.copy()
    means = np.stack([c.mean for c in init.components])
    variances = np.stack([c.var for c in init.components])

    trace: list[float] = []
    sq = points * points
    for _ in range(max_iters):
        # E-step in log space
        diff = points[:, None, :] - means[None, :, :]  # (M, K, d)
        log_comp = -0.5 * np.sum(_LOG_2PI + np.log(variances) + diff * diff / variances, axis=2)
        log_joint = log_comp + np.log(weights)
        log_norm = logsumexp(log_joint, axis=1)
        trace.append(float(log_norm.sum()))
        resp = np.exp(log_joint - log_norm[:, None])  # (M, K)

        # M-step with floors; components with no mass keep their parameters
        nk = resp.sum(axis=0)
        weights = np.maximum(nk / m, WEIGHT_FLOOR)
        weights /= weights.sum()
        live = nk > 1e-10
        nk_safe = np.where(live, nk, 1.0)
        new_means = (resp.T @ points) / nk_safe[:, None]
        new_vars = (resp.T @ sq) / nk_safe[:, None] - new_means * new_means
        means = np.where(live[:, None], new_means, means)
        variances = np.maximum(np.where(live[:, None], new_vars, variances), VAR_FLOOR)

        if len(trace) >= 2:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) / (abs(cur) + 1.0) < rel_tol:
                break

    comps = tuple(GaussianEmission(means[j], variances[j]) for j in range(k))
    return GmmEmission(weights, comps), trace


def refit_emission(previous: Emission, points: np.ndarray, em_iters: int = 10) -> Emission:
    """Refit an emission from hard-assigned frames during model training.

    Gaussians are refit by MLE. Mixtures are refined by EM warm-started
    from the previous parameters, which keeps the training objective from
    regressing when assignments barely change.
    """
    if isinstance(previous, GaussianEmission):
        return fit_gaussian_mle(points)
    mix, _ = gmm_em(points, previous, em_iters)
    return mix


def _as_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError(f"points must be a non-empty (M, d) matrix, got shape {points.shape}")
    return points


def _nearest_center(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _kmeanspp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ center indices: each center drawn with probability
    proportional to squared distance from the nearest chosen center."""
    m = points.shape[0]
    idx = np.empty(k, dtype=int)
    idx[0] = rng.integers(m)
    d2 = np.sum((points - points[idx[0]]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx[j] = rng.integers(m)  # all remaining points coincide with a center
        else:
            idx[j] = rng.choice(m, p=d2 / total)
        d2 = np.minimum(d2, np.sum((points - points[idx[j]]) ** 2, axis=1))
    return idx
