"""Per-class model banks, multi-modal fusion, and evaluation.

One HMM is trained per class per feature space; a sample is classified
by the model with the highest likelihood score. Modalities combine
either by Max-Merge (global max over every class/modality score) or by
Concat (one bank over per-frame concatenated features).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .hmm import (
    EmissionKind,
    HmmModel,
    ScoreKind,
    TopologyKind,
    build_topology,
    init_model,
    score_sequence,
    viterbi_train,
)
from .sequences import FeatureSequence, Modality

DEFAULT_N_STATES = 10
DEFAULT_N_MIXTURES = 3

JOINT_ORDER = (
    "left_hand",
    "left_wrist",
    "left_elbow",
    "right_hand",
    "right_wrist",
    "right_elbow",
)


class FusionKind(str, Enum):
    MAX_MERGE = "max-merge"
    CONCAT = "concat"


class UnclassifiableError(RuntimeError):
    """Every candidate model scored the sample at -inf."""


@dataclass(frozen=True)
class SkeletonFrame:
    """Six upper-body joints plus the torso reference points, all 3-D."""

    left_hand: np.ndarray
    left_wrist: np.ndarray
    left_elbow: np.ndarray
    right_hand: np.ndarray
    right_wrist: np.ndarray
    right_elbow: np.ndarray
    shoulder_center: np.ndarray
    hip_center: np.ndarray

    def __post_init__(self):
        for name in JOINT_ORDER + ("shoulder_center", "hip_center"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.shape != (3,):
                raise ValueError(f"{name} must be a 3-D point, got shape {p.shape}")
            object.__setattr__(self, name, p)


def normalize_skeleton(frame: SkeletonFrame) -> np.ndarray:
    """Torso-relative joint coordinates, concatenated to an 18-vector.

    Each joint is shifted by the shoulder center and scaled by the
    shoulder-to-hip distance, which makes the output invariant to uniform
    scaling and translation of the input points.
    """
    torso = float(np.linalg.norm(frame.shoulder_center - frame.hip_center))
    if torso <= 1e-9:
        raise ValueError("shoulder and hip centers coincide; cannot normalize")
    parts = [(getattr(frame, name) - frame.shoulder_center) / torso for name in JOINT_ORDER]
    return np.concatenate(parts)


def skeleton_sequence(frames: Sequence[SkeletonFrame]) -> FeatureSequence:
    """Normalize a sequence of skeleton frames into a Skeletal FeatureSequence."""
    return FeatureSequence(Modality.SKELETAL, np.stack([normalize_skeleton(f) for f in frames]))


def concat_features(seqs: Sequence[FeatureSequence]) -> FeatureSequence:
    """Early fusion: per-frame concatenation in the given order.

    All sequences must be frame-aligned (equal length); mismatches are an
    error, never resampled.
    """
    if not seqs:
        raise ValueError("need at least one sequence to concatenate")
    lengths = {s.length for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"sequences are not frame-aligned: lengths {sorted(lengths)}")
    return FeatureSequence(Modality.CONCAT, np.hstack([s.frames for s in seqs]))


@dataclass(frozen=True)
class FeatureSpace:
    """Descriptor of the space a bank was trained on."""

    modality: Modality
    dim: int
    sources: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "sources", tuple(self.sources))


@dataclass
class ModelBank:
    """One trained HMM per class label over a single feature space."""

    labels: tuple[str, ...]
    models: dict[str, HmmModel]
    space: FeatureSpace
    score_kind: ScoreKind = ScoreKind.VITERBI

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.score_kind = ScoreKind(self.score_kind)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("bank labels must be unique")
        if set(self.labels) != set(self.models):
            raise ValueError("bank labels and models disagree")
        dims = {m.feature_dim for m in self.models.values()}
        kinds = {m.topology.kind for m in self.models.values()}
        if len(dims) > 1 or len(kinds) > 1:
            raise ValueError("bank models must share feature_dim and topology kind")
        if dims and dims != {self.space.dim}:
            raise ValueError(f"model dims {sorted(dims)} do not match space dim {self.space.dim}")

    def scores(self, seq: FeatureSequence | np.ndarray, length_normalize: bool = False) -> np.ndarray:
        """Per-class log-likelihood scores, aligned with self.labels."""
        values = np.array(
            [score_sequence(self.models[label], seq, self.score_kind) for label in self.labels]
        )
        if length_normalize:
            frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq)
            values = values / frames.shape[0]
        return values

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "modality": self.space.modality.value,
            "feature_dim": self.space.dim,
            "sources": list(self.space.sources),
            "score_kind": self.score_kind.value,
            "models": {label: self.models[label].to_dict() for label in self.labels},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBank":
        return cls(
            labels=tuple(d["labels"]),
            models={label: HmmModel.from_dict(m) for label, m in d["models"].items()},
            space=FeatureSpace(d["modality"], int(d["feature_dim"]), tuple(d.get("sources", ()))),
            score_kind=ScoreKind(d.get("score_kind", "viterbi")),
        )


def class_seed(base_seed: int, label: str) -> int:
    """Per-class training seed, stable across processes and class order."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:8], "big")
    return int(np.random.SeedSequence([base_seed, entropy]).generate_state(1)[0])


def train_bank(
    samples: Iterable[tuple[FeatureSequence | np.ndarray, str]],
    topology_kind: TopologyKind | str = TopologyKind.ERGODIC,
    n_states: int = DEFAULT_N_STATES,
    emission_kind: EmissionKind | str = EmissionKind.GAUSSIAN,
    n_mixtures: int = DEFAULT_N_MIXTURES,
    seed: int = 0,
    score_kind: ScoreKind | str = ScoreKind.VITERBI,
    labels: Sequence[str] | None = None,
    modality: Modality | str | None = None,
    sources: Sequence[str] = (),
    max_iters: int = 100,
    rel_tol: float = 1e-4,
) -> ModelBank:
    """Train one model per class, each from its own sequences only.

    Classes train independently with seeds derived from the base seed and
    the label, so training order (or parallelism) cannot change the
    result. Pass `labels` to pin the label universe; classes without any
    training sequence are then reported as an error.
    """
    grouped: dict[str, list] = {}
    inferred_modality = None
    for seq, label in samples:
        if isinstance(seq, FeatureSequence) and inferred_modality is None:
            inferred_modality = seq.modality
        grouped.setdefault(label, []).append(seq)

    if labels is None:
        label_order = tuple(sorted(grouped))
    else:
        label_order = tuple(labels)
        missing = [label for label in label_order if not grouped.get(label)]
        if missing:
            raise ValueError(f"classes with zero training sequences: {missing}")
        extra = set(grouped) - set(label_order)
        if extra:
            raise ValueError(f"samples carry labels outside the declared set: {sorted(extra)}")
    if not label_order:
        raise ValueError("no training samples")

    if modality is None:
        modality = inferred_modality
    if modality is None:
        raise ValueError("modality must be given when training from bare arrays")

    topology = build_topology(topology_kind, n_states)
    models: dict[str, HmmModel] = {}
    for label in label_order:
        label_seed = class_seed(seed, label)
        model = init_model(grouped[label], topology, emission_kind, n_mixtures, seed=label_seed)
        models[label], _ = viterbi_train(model, grouped[label], max_iters=max_iters, rel_tol=rel_tol)

    dim = models[label_order[0]].feature_dim
    space = FeatureSpace(Modality(modality), dim, tuple(sources))
    return ModelBank(label_order, models, space, ScoreKind(score_kind))


@dataclass
class ClassificationResult:
    """Outcome of classifying one sample."""

    label: str
    labels: tuple[str, ...]
    scores: np.ndarray
    winning_modality: str | None = None


def _concat_input(bank: ModelBank, sample: Mapping[str, FeatureSequence], key: str) -> FeatureSequence:
    if key in sample:
        return sample[key]
    if bank.space.sources:
        try:
            return concat_features([sample[m] for m in bank.space.sources])
        except KeyError as exc:
            raise ValueError(f"sample is missing modality {exc} needed for concat fusion") from exc
    raise ValueError(f"sample has no {key!r} sequence and the bank records no source modalities")


def classify(
    banks: Mapping[str, ModelBank],
    sample: Mapping[str, FeatureSequence],
    fusion: FusionKind | str = FusionKind.MAX_MERGE,
    length_normalize: bool = False,
) -> ClassificationResult:
    """Classify one multi-modal sample.

    Max-Merge scores every (class, modality) pair and returns the class
    of the global maximum together with the modality that produced it.
    Concat expects a single bank over the concatenated space (the
    concatenated sequence is built from the bank's recorded sources when
    the sample does not already carry one). Ties break toward the first
    label in bank label order, then toward the lexicographically first
    modality.
    """
    fusion = FusionKind(fusion)
    if not banks:
        raise ValueError("no banks given")

    if fusion is FusionKind.CONCAT:
        if len(banks) != 1:
            raise ValueError(f"concat fusion needs exactly one bank, got {len(banks)}")
        key, bank = next(iter(banks.items()))
        scores = bank.scores(_concat_input(bank, sample, key), length_normalize)
        if np.all(np.isneginf(scores)):
            raise UnclassifiableError("every class scored -inf")
        best = int(np.argmax(scores))
        return ClassificationResult(bank.labels[best], bank.labels, scores, None)

    label_sets = {bank.labels for bank in banks.values()}
    if len(label_sets) != 1:
        raise ValueError("max-merge requires all banks to share the same label set")
    labels = label_sets.pop()

    fused = np.full(len(labels), -np.inf)
    best_label = None
    best_modality = None
    best_score = -np.inf
    for name in sorted(banks):
        bank = banks[name]
        if name not in sample:
            raise ValueError(f"sample is missing modality {name!r}")
        scores = bank.scores(sample[name], length_normalize)
        fused = np.maximum(fused, scores)
        for ci, label in enumerate(labels):
            if scores[ci] > best_score:
                best_score = float(scores[ci])
                best_label = label
                best_modality = name
    if best_label is None or best_score == -np.inf:
        raise UnclassifiableError("every class/modality pair scored -inf")
    return ClassificationResult(best_label, labels, fused, best_modality)


@dataclass
class EvaluationReport:
    """Accuracy, confusion counts, and per-class accuracy over a test set."""

    labels: tuple[str, ...]
    accuracy: float
    confusion: np.ndarray
    per_class: dict[str, float | None]
    score_kind: ScoreKind
    fusion: FusionKind
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "labels": list(self.labels),
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
            "score_kind": self.score_kind.value,
            "fusion": self.fusion.value,
        }


def evaluate(
    banks: Mapping[str, ModelBank],
    samples: Sequence[tuple[Mapping[str, FeatureSequence], str]],
    fusion: FusionKind | str = FusionKind.MAX_MERGE,
    config: dict | None = None,
    length_normalize: bool = False,
) -> EvaluationReport:
    """Classify every test sample and tabulate accuracy and confusion."""
    fusion = FusionKind(fusion)
    if not samples:
        raise ValueError("test set is empty")
    labels = next(iter(banks.values())).labels
    index = {label: i for i, label in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=int)
    for sample, truth in samples:
        if truth not in index:
            raise ValueError(f"test label {truth!r} is not covered by the bank")
        result = classify(banks, sample, fusion, length_normalize)
        confusion[index[truth], index[result.label]] += 1

    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total
    per_class: dict[str, float | None] = {}
    for label, i in index.items():
        row = int(confusion[i].sum())
        per_class[label] = float(confusion[i, i]) / row if row else None
    score_kind = next(iter(banks.values())).score_kind
    return EvaluationReport(labels, accuracy, confusion, per_class, score_kind, fusion, config or {})


def _cell_seed(base_seed: int, config: dict) -> int:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).digest()
    return int(np.random.SeedSequence([base_seed, int.from_bytes(digest[:8], "big")]).generate_state(1)[0])


def _train_cell_banks(train, config, seed, score_kind, max_iters, rel_tol):
    mods = config["modalities"]
    common = dict(
        topology_kind=config["topology"],
        n_states=config["states"],
        emission_kind=config["emission"],
        n_mixtures=config["mixtures"],
        seed=seed,
        score_kind=score_kind,
        max_iters=max_iters,
        rel_tol=rel_tol,
    )
    if config["fusion"] == FusionKind.CONCAT.value:
        pairs = [
            (concat_features([sample[m] for m in mods]), label) for sample, label in train
        ]
        bank = train_bank(pairs, modality=Modality.CONCAT, sources=mods, **common)
        return {Modality.CONCAT.value: bank}, FusionKind.CONCAT
    banks = {}
    for m in mods:
        pairs = [(sample[m], label) for sample, label in train]
        banks[m] = train_bank(pairs, **common)
    return banks, FusionKind.MAX_MERGE


def sweep(
    train: Sequence[tuple[Mapping[str, FeatureSequence], str]],
    test: Sequence[tuple[Mapping[str, FeatureSequence], str]],
    grid: Mapping,
    base_seed: int = 0,
    score_kind: ScoreKind | str = ScoreKind.VITERBI,
    max_iters: int = 100,
    rel_tol: float = 1e-4,
) -> list[dict]:
    """Train and evaluate every grid cell; failures are recorded, not fatal.

    Grid keys (all optional): "states", "mixtures", "topologies",
    "modalities" (lists of modality-name lists), "fusion". A mixture
    count of 1 trains plain Gaussian HMMs. Single-modality cells ignore
    the fusion axis. Returns rows sorted by accuracy, best first.
    """
    if not train or not test:
        raise ValueError("sweep needs non-empty train and test sets")
    available = sorted(train[0][0])
    states = [int(s) for s in grid.get("states", [DEFAULT_N_STATES])]
    mixtures = [int(k) for k in grid.get("mixtures", [1])]
    topologies = [TopologyKind.parse(t).value for t in grid.get("topologies", ["ergodic"])]
    modality_combos = [list(c) for c in grid.get("modalities", [[m] for m in available])]
    fusions = [FusionKind(f).value for f in grid.get("fusion", ["max-merge"])]

    rows: list[dict] = []
    seen: set[str] = set()
    for mods in modality_combos:
        cell_fusions = ["single"] if len(mods) == 1 else fusions
        for fusion_name in cell_fusions:
            for topology in topologies:
                for n_states in states:
                    for n_mixtures in mixtures:
                        config = {
                            "modalities": list(mods),
                            "fusion": fusion_name,
                            "topology": topology,
                            "states": n_states,
                            "mixtures": n_mixtures,
                            "emission": "gaussian" if n_mixtures == 1 else "gmm",
                        }
                        key = json.dumps(config, sort_keys=True)
                        if key in seen:
                            continue
                        seen.add(key)
                        run_fusion = (
                            FusionKind.CONCAT.value
                            if fusion_name == FusionKind.CONCAT.value
                            else FusionKind.MAX_MERGE.value
                        )
                        cell = dict(config)
                        cell["fusion"] = run_fusion
                        try:
                            seed = _cell_seed(base_seed, config)
                            banks, eval_fusion = _train_cell_banks(
                                train, cell, seed, score_kind, max_iters, rel_tol
                            )
                            report = evaluate(banks, test, eval_fusion, config=config)
                            rows.append(
                                {"config": config, "status": "ok", "accuracy": report.accuracy}
                            )
                        except Exception as exc:  # cell failures must not kill the sweep
                            rows.append(
                                {"config": config, "status": "failed", "error": str(exc)}
                            )

    def order(row: dict):
        ok = row["status"] == "ok"
        return (0 if ok else 1, -(row.get("accuracy") or 0.0), json.dumps(row["config"], sort_keys=True))

    rows.sort(key=order)
    return rows
