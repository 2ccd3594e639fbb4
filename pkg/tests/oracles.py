"""Independent reference implementations used to verify the library.

Everything here is deliberately written via different routes than the
package code: scipy.stats densities instead of hand-rolled formulas,
exhaustive path enumeration instead of dynamic programming, plain
(non-log) mixture sums, and SVD instead of covariance eigendecomposition.
"""

import itertools

import numpy as np
from scipy.stats import multivariate_normal

from signhmm.emissions import GaussianEmission, GmmEmission
from signhmm.hmm import HmmModel, Topology, TopologyKind, build_topology


def oracle_gaussian_logpdf(mean, var, x):
    return float(multivariate_normal(mean=mean, cov=np.diag(np.atleast_1d(var))).logpdf(x))


def oracle_gmm_logpdf(weights, means, variances, x):
    """Plain-arithmetic mixture density, then one log at the end."""
    total = 0.0
    for w, m, v in zip(weights, means, variances):
        total += w * multivariate_normal(mean=m, cov=np.diag(np.atleast_1d(v))).pdf(x)
    return float(np.log(total))


def oracle_emission_logpdf(emission, x):
    if isinstance(emission, GaussianEmission):
        return oracle_gaussian_logpdf(emission.mean, emission.var, x)
    return oracle_gmm_logpdf(
        emission.weights,
        [c.mean for c in emission.components],
        [c.var for c in emission.components],
        x,
    )


def oracle_path_log_joint(model, frames, path):
    """Log joint of one specific state path, from first principles."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
        log_a = np.log(model.A)
    total = log_pi[path[0]] + oracle_emission_logpdf(model.emissions[path[0]], frames[0])
    for t in range(1, len(frames)):
        total += log_a[path[t - 1], path[t]]
        total += oracle_emission_logpdf(model.emissions[path[t]], frames[t])
    return float(total)


def brute_force_scores(model, frames):
    """Enumerate every state path.

    Returns (log sum over paths, best log joint, best path). The best
    path is the lexicographically first one attaining the maximum.
    """
    n = model.n_states
    t_len = len(frames)
    log_joints = []
    best = -np.inf
    best_path = None
    for path in itertools.product(range(n), repeat=t_len):
        lj = oracle_path_log_joint(model, frames, path)
        log_joints.append(lj)
        if lj > best:
            best = lj
            best_path = path
    arr = np.asarray(log_joints)
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        total = -np.inf
    else:
        mx = finite.max()
        total = float(mx + np.log(np.sum(np.exp(arr - mx))))
    return total, float(best), best_path


def random_model(rng, n_states, dim, kind=TopologyKind.ERGODIC, emission="gaussian", n_mixtures=2):
    """A random valid model for oracle comparisons."""
    topology = build_topology(kind, n_states)
    mask = topology.mask
    a = rng.random((n_states, n_states)) * mask
    a = a / a.sum(axis=1, keepdims=True)
    if topology.kind is TopologyKind.LEFT_TO_RIGHT:
        pi = np.zeros(n_states)
        pi[0] = 1.0
    else:
        pi = rng.random(n_states)
        pi = pi / pi.sum()

    emissions = []
    for _ in range(n_states):
        if emission == "gaussian":
            emissions.append(
                GaussianEmission(rng.normal(0, 3, size=dim), rng.uniform(0.2, 2.0, size=dim))
            )
        else:
            comps = tuple(
                GaussianEmission(rng.normal(0, 3, size=dim), rng.uniform(0.2, 2.0, size=dim))
                for _ in range(n_mixtures)
            )
            w = rng.random(n_mixtures) + 0.1
            emissions.append(GmmEmission(w / w.sum(), comps))
    return HmmModel(topology, pi, a, tuple(emissions), dim)


def oracle_pca_axes(frames, k):
    """Principal axes via SVD of the centered data (not eigendecomposition)."""
    centered = frames - frames.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[:k].T


def relu_kink_margin(net, x):
    """Smallest |pre-activation| across all hidden layers and samples.

    Central differences are only meaningful away from the rectifier kink:
    a pre-activation inside the step window flips its gate and the
    numerical derivative stops approximating either one-sided slope.
    """
    h = np.atleast_2d(x)
    margin = np.inf
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return margin


def gradcheck_max_rel_error(loss_and_grads, net, x, y, eps=1e-5, denom_floor=1e-5):
    """Max relative error between analytic grads and central differences.

    The denominator floor keeps finite-difference cancellation noise
    (~1e-11 on unit-scale losses) from dominating near-zero gradients.
    """
    _, grads_w, grads_b = loss_and_grads(net, x, y)
    worst = 0.0
    for arr, grad in zip(net.weights + net.biases, grads_w + grads_b):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, *_ = loss_and_grads(net, x, y)
            flat[i] = orig - eps
            down, *_ = loss_and_grads(net, x, y)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric), abs(gflat[i]), denom_floor)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
