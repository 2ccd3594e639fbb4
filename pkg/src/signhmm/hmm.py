"""Hidden Markov Models with pluggable Gaussian/GMM emissions.

Provides topology construction (ergodic and left-to-right), forward
log-likelihood, Viterbi decoding, segmental hard-EM training, and model
sampling. All probability arithmetic runs in natural-log space with
log-sum-exp to stay stable at higher feature dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .emissions import (
    Emission,
    GaussianEmission,
    GmmEmission,
    emission_from_dict,
    fit_gaussian_mle,
    fit_gmm,
    refit_emission,
)
from .sequences import FeatureSequence, Modality, as_frames

ROW_SUM_TOL = 1e-9


class TopologyKind(str, Enum):
    ERGODIC = "ergodic"
    LEFT_TO_RIGHT = "left-to-right"

    @classmethod
    def parse(cls, kind: "TopologyKind | str") -> "TopologyKind":
        """Coerce a kind name, accepting the common "ltr" shorthand."""
        if kind == "ltr":
            return cls.LEFT_TO_RIGHT
        return cls(kind)


class EmissionKind(str, Enum):
    GAUSSIAN = "gaussian"
    GMM = "gmm"


class ScoreKind(str, Enum):
    """How a model scores a sequence at classification time."""

    FORWARD = "forward"
    VITERBI = "viterbi"


@dataclass(frozen=True)
class Topology:
    """Transition structure: which state-to-state moves are allowed.

    Ergodic masks are all-true; left-to-right masks allow only self-loops
    and moves to the immediate successor (the last state self-loops).
    """

    kind: TopologyKind
    n_states: int
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        n = self.n_states
        if mask.shape != (n, n):
            raise ValueError(f"mask shape {mask.shape} does not match n_states {n}")
        if not mask.any(axis=1).all():
            raise ValueError("every state needs at least one allowed outgoing transition")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "kind", TopologyKind(self.kind))


def build_topology(kind: TopologyKind | str, n_states: int) -> Topology:
    """Construct an ergodic or left-to-right topology with n_states states."""
    kind = TopologyKind.parse(kind)
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")
    if kind is TopologyKind.ERGODIC:
        mask = np.ones((n_states, n_states), dtype=bool)
    else:
        mask = np.zeros((n_states, n_states), dtype=bool)
        idx = np.arange(n_states)
        mask[idx, idx] = True
        mask[idx[:-1], idx[:-1] + 1] = True
    return Topology(kind, n_states, mask)


@dataclass(frozen=True)
class HmmModel:
    """An HMM: initial distribution, masked transitions, per-state emissions.

    Instances are immutable; training returns new models. Use validate()
    to check the stochasticity/mask invariants (construction itself does
    not, so tests can build deliberately degenerate models).
    """

    topology: Topology
    pi: np.ndarray
    A: np.ndarray
    emissions: tuple[Emission, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=np.float64))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=np.float64))
        object.__setattr__(self, "emissions", tuple(self.emissions))

    @property
    def n_states(self) -> int:
        return self.topology.n_states

    def validate(self) -> None:
        n = self.n_states
        if self.pi.shape != (n,):
            raise ValueError(f"pi shape {self.pi.shape} does not match n_states {n}")
        if self.A.shape != (n, n):
            raise ValueError(f"A shape {self.A.shape} does not match n_states {n}")
        if abs(self.pi.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"pi must sum to 1, got {self.pi.sum()}")
        row_sums = self.A.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
            raise ValueError(f"A rows must sum to 1, got {row_sums}")
        if np.any(self.A[~self.topology.mask] != 0.0):
            raise ValueError("A has nonzero entries where the topology mask forbids them")
        if self.topology.kind is TopologyKind.LEFT_TO_RIGHT:
            expected = np.zeros(n)
            expected[0] = 1.0
            if not np.array_equal(self.pi, expected):
                raise ValueError("left-to-right models must start in state 0")
        if len(self.emissions) != n:
            raise ValueError(f"expected {n} emissions, got {len(self.emissions)}")
        dims = {e.dim for e in self.emissions}
        if dims != {self.feature_dim}:
            raise ValueError(f"emission dims {sorted(dims)} do not match feature_dim {self.feature_dim}")

    def to_dict(self) -> dict:
        return {
            "kind": self.topology.kind.value,
            "n_states": self.n_states,
            "feature_dim": self.feature_dim,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "emissions": [e.to_dict() for e in self.emissions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        topology = build_topology(d["kind"], int(d["n_states"]))
        model = cls(
            topology=topology,
            pi=np.asarray(d["pi"], dtype=np.float64),
            A=np.asarray(d["A"], dtype=np.float64),
            emissions=tuple(emission_from_dict(e) for e in d["emissions"]),
            feature_dim=int(d["feature_dim"]),
        )
        model.validate()
        return model


@dataclass
class TrainReport:
    """Outcome of one hard-EM run."""

    iterations: int
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    empty_states: tuple[int, ...] = ()


class ViterbiResult(NamedTuple):
    path: np.ndarray
    log_joint: float
    degenerate: bool


def _log_params(model: HmmModel) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(model.pi), np.log(model.A)


def _log_emission_matrix(model: HmmModel, frames: np.ndarray) -> np.ndarray:
    """Per-frame, per-state emission log densities, shape (T, N)."""
    return np.stack([e.log_density(frames) for e in model.emissions], axis=1)


def _check_dim(model: HmmModel, frames: np.ndarray) -> None:
    if frames.shape[1] != model.feature_dim:
        raise ValueError(
            f"sequence dim {frames.shape[1]} does not match model feature_dim {model.feature_dim}"
        )


def log_forward(model: HmmModel, seq: FeatureSequence | np.ndarray) -> float:
    """Log of the full sequence likelihood, summed over all state paths."""
    frames = as_frames(seq)
    _check_dim(model, frames)
    log_pi, log_a = _log_params(model)
    log_b = _log_emission_matrix(model, frames)
    alpha = log_pi + log_b[0]
    for t in range(1, frames.shape[0]):
        alpha = logsumexp(alpha[:, None] + log_a, axis=0) + log_b[t]
    return float(logsumexp(alpha))


def viterbi_decode(model: HmmModel, seq: FeatureSequence | np.ndarray) -> ViterbiResult:
    """Most likely state path and its log joint probability.

    Ties break toward the lower state index. If every path has zero
    probability the result carries log_joint=-inf, an arbitrary
    mask-respecting path, and degenerate=True.
    """
    frames = as_frames(seq)
    _check_dim(model, frames)
    n = model.n_states
    t_len = frames.shape[0]
    log_pi, log_a = _log_params(model)
    log_b = _log_emission_matrix(model, frames)

    delta = log_pi + log_b[0]
    back = np.zeros((t_len, n), dtype=int)
    for t in range(1, t_len):
        scores = delta[:, None] + log_a  # predecessor i -> row, successor j -> column
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(n)] + log_b[t]

    last = int(np.argmax(delta))
    best = float(delta[last])
    if best == -np.inf:
        return ViterbiResult(_fallback_path(model.topology, t_len), -np.inf, True)

    path = np.zeros(t_len, dtype=int)
    path[-1] = last
    for t in range(t_len - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return ViterbiResult(path, best, False)


def _fallback_path(topology: Topology, length: int) -> np.ndarray:
    path = np.zeros(length, dtype=int)
    for t in range(1, length):
        path[t] = int(np.argmax(topology.mask[path[t - 1]]))  # first allowed successor
    return path


def score_sequence(model: HmmModel, seq: FeatureSequence | np.ndarray, kind: ScoreKind) -> float:
    """Sequence likelihood score used for classification (forward or Viterbi)."""
    if ScoreKind(kind) is ScoreKind.FORWARD:
        return log_forward(model, seq)
    return viterbi_decode(model, seq).log_joint


def init_model(
    sequences: Sequence[FeatureSequence | np.ndarray],
    topology: Topology,
    emission_kind: EmissionKind | str = EmissionKind.GAUSSIAN,
    n_mixtures: int = 3,
    seed: int = 0,
) -> HmmModel:
    """Initialize a model by uniform temporal segmentation.

    Frame t of a length-T sequence is assigned to state floor(t*N/T); each
    state's emission is fit from its pooled frames (MLE for Gaussians,
    seeded k-means++ then EM for mixtures). Left-to-right A starts from
    the segment-implied transition counts with add-one smoothing on
    mask-allowed entries; ergodic A starts uniform over the mask, because
    segment-implied counts encode a monotone temporal order that an
    ergodic model does not have and their near-absorbing rows starve
    states during the first decode. States left without frames fall back
    to a fit over all frames, so initialization never produces an
    unusable state.
    """
    emission_kind = EmissionKind(emission_kind)
    seq_list = [as_frames(s) for s in sequences]
    if not seq_list:
        raise ValueError("need at least one training sequence")
    dims = {s.shape[1] for s in seq_list}
    if len(dims) != 1:
        raise ValueError(f"sequences disagree on feature dim: {sorted(dims)}")
    dim = dims.pop()
    n = topology.n_states

    counts = np.zeros((n, n))
    per_state: list[list[np.ndarray]] = [[] for _ in range(n)]
    for frames in seq_list:
        t_len = frames.shape[0]
        labels = (np.arange(t_len) * n) // t_len
        for k in range(n):
            chunk = frames[labels == k]
            if chunk.shape[0]:
                per_state[k].append(chunk)
        np.add.at(counts, (labels[:-1], labels[1:]), 1.0)

    if topology.kind is TopologyKind.ERGODIC:
        a = np.full((n, n), 1.0 / n)
    else:
        a = _smoothed_transitions(counts, topology.mask)
    pi = _initial_distribution(topology)

    all_frames = np.concatenate(seq_list, axis=0)
    emissions = []
    for k in range(n):
        pooled = np.concatenate(per_state[k], axis=0) if per_state[k] else all_frames
        emissions.append(_fit_initial_emission(pooled, emission_kind, n_mixtures, seed, k))

    model = HmmModel(topology, pi, a, tuple(emissions), dim)
    model.validate()
    return model


def _initial_distribution(topology: Topology) -> np.ndarray:
    pi = np.zeros(topology.n_states)
    if topology.kind is TopologyKind.LEFT_TO_RIGHT:
        pi[0] = 1.0
    else:
        pi[:] = 1.0 / topology.n_states
    return pi


def _smoothed_transitions(counts: np.ndarray, mask: np.ndarray) -> np.ndarray:
    a = np.where(mask, counts + 1.0, 0.0)
    return a / a.sum(axis=1, keepdims=True)


def _fit_initial_emission(
    pooled: np.ndarray, kind: EmissionKind, n_mixtures: int, seed: int, state: int
) -> Emission:
    state_seed = int(np.random.SeedSequence([seed, state]).generate_state(1)[0])
    if kind is EmissionKind.GAUSSIAN:
        return fit_gaussian_mle(pooled)
    if pooled.shape[0] >= n_mixtures:
        return fit_gmm(pooled, n_mixtures, em_iters=25, seed=state_seed)
    # too few frames for k-means++: replicate the MLE Gaussian with tiny
    # deterministic mean jitter so EM refits can separate the components
    base = fit_gaussian_mle(pooled)
    rng = np.random.default_rng(state_seed)
    comps = tuple(
        GaussianEmission(base.mean + 0.01 * np.sqrt(base.var) * rng.standard_normal(base.dim), base.var)
        for _ in range(n_mixtures)
    )
    return GmmEmission(np.full(n_mixtures, 1.0 / n_mixtures), comps)


def viterbi_train(
    model: HmmModel,
    sequences: Sequence[FeatureSequence | np.ndarray],
    max_iters: int = 100,
    rel_tol: float = 1e-4,
    em_iters: int = 10,
) -> tuple[HmmModel, TrainReport]:
    """Segmental hard-EM: decode every sequence, refit from the hard paths.

    Each iteration Viterbi-decodes the training set, then refits pi from
    path starts (ergodic only), A from path transition counts with
    add-one smoothing on allowed entries, and each state's emission from
    its assigned frames (MLE for Gaussians, warm-started EM for
    mixtures). Stops when the relative change of the total path log joint
    drops below rel_tol, or after max_iters decodes. States that receive
    no frames keep their previous emission and are flagged in the report.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if rel_tol <= 0:
        raise ValueError(f"rel_tol must be > 0, got {rel_tol}")
    seq_list = [as_frames(s) for s in sequences]
    if not seq_list:
        raise ValueError("need at least one training sequence")
    dims = {s.shape[1] for s in seq_list}
    if dims != {model.feature_dim}:
        raise ValueError(f"sequence dims {sorted(dims)} do not match model feature_dim {model.feature_dim}")

    n = model.n_states
    mask = model.topology.mask
    ltr = model.topology.kind is TopologyKind.LEFT_TO_RIGHT

    current = model
    trace: list[float] = []
    converged = False
    empty_states: set[int] = set()

    for _ in range(max_iters):
        paths = []
        total = 0.0
        for frames in seq_list:
            result = viterbi_decode(current, frames)
            paths.append(result.path)
            total += result.log_joint
        trace.append(total)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) / (abs(trace[-1]) + 1.0) < rel_tol:
            converged = True
            break

        start_counts = np.zeros(n)
        counts = np.zeros((n, n))
        per_state: list[list[np.ndarray]] = [[] for _ in range(n)]
        for frames, path in zip(seq_list, paths):
            start_counts[path[0]] += 1.0
            np.add.at(counts, (path[:-1], path[1:]), 1.0)
            for k in np.unique(path):
                per_state[k].append(frames[path == k])

        pi = current.pi if ltr else start_counts / start_counts.sum()
        a = _smoothed_transitions(counts, mask)
        emissions = []
        for k in range(n):
            if per_state[k]:
                pooled = np.concatenate(per_state[k], axis=0)
                emissions.append(refit_emission(current.emissions[k], pooled, em_iters))
            else:
                empty_states.add(k)
                emissions.append(current.emissions[k])
        current = HmmModel(current.topology, pi, a, tuple(emissions), current.feature_dim)

    report = TrainReport(
        iterations=len(trace),
        objective_trace=trace,
        converged=converged,
        empty_states=tuple(sorted(empty_states)),
    )
    return current, report


def sample(
    model: HmmModel,
    length: int,
    seed: int,
    modality: Modality | str = Modality.RGB,
) -> FeatureSequence:
    """Draw one sequence from the model; deterministic for a fixed seed."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    n = model.n_states
    states = np.zeros(length, dtype=int)
    states[0] = rng.choice(n, p=model.pi)
    for t in range(1, length):
        states[t] = rng.choice(n, p=model.A[states[t - 1]])
    frames = np.stack([model.emissions[s].draw(rng, 1)[0] for s in states], axis=0)
    return FeatureSequence(Modality(modality), frames)
