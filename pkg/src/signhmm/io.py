"""Feature-sequence files, dataset manifests, and synthetic benchmarks.

The .fseq format is deliberately tiny and bit-exact: a 16-byte header
(magic "FSEQ", version, frame count, dimension as little-endian u32)
followed by row-major little-endian float32 frames.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hmm import HmmModel, build_topology, sample
from .emissions import GaussianEmission
from .sequences import FeatureSequence, Modality

MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIII")

SPLITS = ("train", "val", "test")


class FseqFormatError(ValueError):
    """Malformed .fseq content; `kind` identifies the failure class."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def write_fseq(path, seq: FeatureSequence | np.ndarray) -> None:
    """Write frames as float32; write-then-read round-trips bit-exactly."""
    frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValueError(f"frames must be a non-empty (T, d) matrix, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames contain non-finite values")
    payload = np.ascontiguousarray(frames, dtype="<f4")
    header = _HEADER.pack(MAGIC, FSEQ_VERSION, frames.shape[0], frames.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_fseq(path, modality: Modality | str = Modality.RGB) -> FeatureSequence:
    """Read an .fseq file, rejecting each malformed class with its own kind."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FseqFormatError("magic", f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise FseqFormatError("truncated", f"{path}: header cut short at {len(blob)} bytes")
    _, version, n_frames, dim = _HEADER.unpack_from(blob)
    if version != FSEQ_VERSION:
        raise FseqFormatError("version", f"{path}: unsupported version {version}")
    if n_frames == 0 or dim == 0:
        raise FseqFormatError("header", f"{path}: empty geometry {n_frames}x{dim}")
    expected = _HEADER.size + 4 * n_frames * dim
    if len(blob) < expected:
        raise FseqFormatError(
            "truncated", f"{path}: payload is {len(blob)} bytes, expected {expected}"
        )
    if len(blob) > expected:
        raise FseqFormatError(
            "trailing", f"{path}: {len(blob) - expected} trailing bytes after payload"
        )
    frames = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n_frames, dim)
    if not np.all(np.isfinite(frames)):
        raise FseqFormatError("non-finite", f"{path}: payload contains non-finite floats")
    return FeatureSequence(Modality(modality), frames.copy())


@dataclass
class Sample:
    """One labeled multi-modal recording."""

    id: str
    label: str
    split: str
    sequences: dict[str, FeatureSequence]


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted({s.label for s in self.samples}))

    def modalities(self) -> tuple[str, ...]:
        names: set[str] = set()
        for s in self.samples:
            names.update(s.sequences)
        return tuple(sorted(names))

    def pairs(self, split: str, modalities=None) -> list[tuple[dict[str, FeatureSequence], str]]:
        """(modality-map, label) pairs for the classifier layer."""
        out = []
        for s in self.split(split):
            seqs = s.sequences
            if modalities is not None:
                seqs = {m: s.sequences[m] for m in modalities}
            out.append((seqs, s.label))
        return out


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a JSON-lines manifest and every referenced file.

    Errors name the offending manifest line: duplicate ids, unknown
    splits/modalities, missing or malformed files, and per-modality
    dimension mismatches are all rejected.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    dims: dict[str, tuple[int, str]] = {}

    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{manifest_path}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: invalid JSON ({exc})") from exc
            try:
                sid, label, split = row["id"], row["label"], row["split"]
                modalities = row["modalities"]
            except KeyError as exc:
                raise ValueError(f"{where}: missing manifest field {exc}") from exc
            if split not in SPLITS:
                raise ValueError(f"{where}: unknown split {split!r}")
            if sid in seen_ids:
                raise ValueError(f"{where}: duplicate sample id {sid!r}")
            seen_ids.add(sid)

            sequences: dict[str, FeatureSequence] = {}
            for name, rel in modalities.items():
                try:
                    modality = Modality(name)
                except ValueError as exc:
                    raise ValueError(f"{where}: unknown modality {name!r}") from exc
                path = root / rel
                try:
                    seq = read_fseq(path, modality)
                except FileNotFoundError as exc:
                    raise ValueError(f"{where}: missing file {path}") from exc
                except FseqFormatError as exc:
                    raise ValueError(f"{where}: {exc}") from exc
                known = dims.get(name)
                if known is not None and known[0] != seq.dim:
                    raise ValueError(
                        f"{where}: modality {name!r} has dim {seq.dim}, "
                        f"but {known[1]} established dim {known[0]}"
                    )
                dims.setdefault(name, (seq.dim, where))
                sequences[name] = seq
            samples.append(Sample(sid, label, split, sequences))
    return Dataset(samples)


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic multi-class, multi-modal benchmark.

    Class generators are ergodic Gaussian HMMs. With the default "random"
    transition style, class c's state means sit around c*delta (so class
    feature averages are spaced ~delta apart). With the "cyclic" style,
    every class shares one set of state means (spread ~delta) and differs
    only in its cyclic state-visit order, so class identity lives in the
    transition structure - the regime where topology choice matters.
    """

    n_classes: int
    modalities: dict[str, int]
    n_states: int = 4
    delta: float = 5.0
    train_per_class: int = 10
    val_per_class: int = 0
    test_per_class: int = 5
    t_min: int = 10
    t_max: int = 20
    seed: int = 0
    transition_style: str = "random"
    self_loop: float = 0.3

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.t_min < 1 or self.t_max < self.t_min:
            raise ValueError(f"bad length range [{self.t_min}, {self.t_max}]")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.transition_style not in ("random", "cyclic"):
            raise ValueError(f"unknown transition_style {self.transition_style!r}")
        if not self.modalities:
            raise ValueError("at least one modality is required")
        for name in self.modalities:
            Modality(name)  # reject names outside the enum

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "modalities": dict(self.modalities),
            "n_states": self.n_states,
            "delta": self.delta,
            "train_per_class": self.train_per_class,
            "val_per_class": self.val_per_class,
            "test_per_class": self.test_per_class,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "seed": self.seed,
            "transition_style": self.transition_style,
            "self_loop": self.self_loop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def class_label(index: int) -> str:
    return f"sign{index:02d}"


def _derived_rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _cyclic_orders(spec: SynthSpec, mod_index: int) -> list[list[int]]:
    """Distinct cyclic visit orders (starting at state 0), one per class."""
    rng = _derived_rng(spec.seed, 3, mod_index)
    orders: list[list[int]] = []
    seen: set[tuple[int, ...]] = set()
    attempts = 0
    while len(orders) < spec.n_classes:
        rest = rng.permutation(np.arange(1, spec.n_states)).tolist()
        order = [0] + [int(v) for v in rest]
        edges = tuple(sorted(zip(order, order[1:] + order[:1])))
        attempts += 1
        # duplicates allowed once the distinct cycles run out (or N <= 2)
        if edges in seen and attempts < 100 * spec.n_classes:
            continue
        seen.add(edges)
        orders.append(order)
    return orders


def synth_generators(spec: SynthSpec) -> dict[str, dict[str, HmmModel]]:
    """Per-class, per-modality generator models implied by the spec."""
    topo = build_topology("ergodic", spec.n_states)
    names = sorted(spec.modalities)
    gens: dict[str, dict[str, HmmModel]] = {}
    for ci in range(spec.n_classes):
        label = class_label(ci)
        gens[label] = {}
        for mj, name in enumerate(names):
            dim = spec.modalities[name]
            rng = _derived_rng(spec.seed, 0, ci, mj)
            if spec.transition_style == "cyclic":
                shared = _derived_rng(spec.seed, 2, mj)
                means = shared.normal(0.0, spec.delta, size=(spec.n_states, dim))
                order = _cyclic_orders(spec, mj)[ci]
                a = np.zeros((spec.n_states, spec.n_states))
                for i, state in enumerate(order):
                    succ = order[(i + 1) % spec.n_states]
                    if succ == state:
                        a[state, state] = 1.0
                    else:
                        a[state, state] = spec.self_loop
                        a[state, succ] = 1.0 - spec.self_loop
            else:
                base = float(ci) * spec.delta
                means = base + rng.normal(0.0, 1.0, size=(spec.n_states, dim))
                a = rng.uniform(0.1, 1.0, size=(spec.n_states, spec.n_states))
                a[np.diag_indices(spec.n_states)] += 2.0
                a = a / a.sum(axis=1, keepdims=True)
            emissions = tuple(
                GaussianEmission(means[k], np.ones(dim)) for k in range(spec.n_states)
            )
            pi = np.full(spec.n_states, 1.0 / spec.n_states)
            model = HmmModel(topo, pi, a, emissions, dim)
            model.validate()
            gens[label][name] = model
    return gens


def synth_generate(spec: SynthSpec, out_dir) -> Path:
    """Sample a dataset tree (manifest + .fseq files); byte-identical per seed."""
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    gens = synth_generators(spec)
    names = sorted(spec.modalities)

    counts = {
        "train": spec.train_per_class,
        "val": spec.val_per_class,
        "test": spec.test_per_class,
    }
    rows: list[dict] = []
    for split_idx, split in enumerate(SPLITS):
        for ci in range(spec.n_classes):
            label = class_label(ci)
            for si in range(counts[split]):
                rng = _derived_rng(spec.seed, 4, split_idx, ci, si)
                t_len = int(rng.integers(spec.t_min, spec.t_max + 1))
                sid = f"{split}-{label}-{si:04d}"
                paths: dict[str, str] = {}
                for mj, name in enumerate(names):
                    draw_seed = int(
                        _derived_rng(spec.seed, 5, split_idx, ci, si, mj).integers(2**63)
                    )
                    seq = sample(gens[label][name], t_len, seed=draw_seed, modality=name)
                    rel = f"data/{sid}_{name}.fseq"
                    write_fseq(out_dir / rel, seq)
                    paths[name] = rel
                rows.append({"id": sid, "label": label, "split": split, "modalities": paths})
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, rows)
    return manifest
