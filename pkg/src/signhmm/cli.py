"""Command-line pipeline: synth, pool, pca, projector, hmm, classify,
evaluate, and sweep subcommands.

Dataset-level commands read/write JSON-lines manifests; reduction
commands write a transformed dataset tree so later stages stay uniform.
All artifacts are byte-identical across runs for fixed inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .classifier import (
    DEFAULT_N_MIXTURES,
    DEFAULT_N_STATES,
    FusionKind,
    ModelBank,
    classify,
    concat_features,
    evaluate,
    sweep,
    train_bank,
)
from .hmm import ScoreKind
from .reduction import (
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_PCA_DIM,
    AdamConfig,
    FeatureTensor,
    PcaProjector,
    ProjectorNet,
    global_pool,
    pca_fit,
    pca_project,
    projector_embed,
    projector_train,
)
from .sequences import Modality

TOPOLOGY_CHOICES = ("ergodic", "ltr", "left-to-right")


def _topology(name: str) -> str:
    return "left-to-right" if name == "ltr" else name


def positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _split_frames(dataset: dio.Dataset, split: str, modality: str):
    seqs = []
    labels = []
    for s in dataset.split(split):
        if modality not in s.sequences:
            raise ValueError(f"sample {s.id!r} has no {modality!r} modality")
        seqs.append(s.sequences[modality].frames)
        labels.append(s.label)
    if not seqs:
        raise ValueError(f"split {split!r} has no samples")
    return seqs, labels


def _transform_dataset(dataset, modality, out_dir, transform) -> Path:
    """Write a new dataset tree with one modality's features transformed."""
    out_dir = Path(out_dir)
    (out_dir / "data").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in dataset.samples:
        paths = {}
        for name in sorted(s.sequences):
            rel = f"data/{s.id}_{name}.fseq"
            frames = s.sequences[name].frames
            if name == modality:
                frames = np.asarray(transform(frames), dtype=np.float32)
            dio.write_fseq(out_dir / rel, frames)
            paths[name] = rel
        rows.append({"id": s.id, "label": s.label, "split": s.split, "modalities": paths})
    manifest = out_dir / "manifest.jsonl"
    dio.write_manifest(manifest, rows)
    return manifest


def cmd_synth(args) -> int:
    spec = dio.SynthSpec.from_dict(_load_json(args.spec))
    manifest = dio.synth_generate(spec, args.out)
    print(f"wrote {manifest}")
    return 0


def cmd_pool(args) -> int:
    shape_path = args.shape or str(Path(args.infile).with_suffix(".shape.json"))
    shape = _load_json(shape_path)
    c, h, w = int(shape["channels"]), int(shape["height"]), int(shape["width"])
    seq = dio.read_fseq(args.infile)
    if seq.dim != c * h * w:
        raise ValueError(
            f"flattened dim {seq.dim} does not match shape {c}x{h}x{w} = {c * h * w}"
        )
    pooled = np.stack(
        [global_pool(FeatureTensor(frame.reshape(c, h, w)), args.kind) for frame in seq.frames]
    )
    dio.write_fseq(args.out, pooled.astype(np.float32))
    print(f"wrote {args.out}")
    return 0


def cmd_pca_fit(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    seqs, _ = _split_frames(dataset, args.split, args.modality)
    projector = pca_fit(np.concatenate(seqs, axis=0), args.dim)
    _write_json(args.out, projector.to_dict())
    print(f"wrote {args.out}")
    return 0


def cmd_pca_project(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    projector = PcaProjector.from_dict(_load_json(args.projector))
    manifest = _transform_dataset(
        dataset, args.modality, args.out, lambda frames: pca_project(projector, frames)
    )
    print(f"wrote {manifest}")
    return 0


def cmd_projector_train(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    seqs, seq_labels = _split_frames(dataset, args.split, args.modality)
    label_order = sorted(set(seq_labels))
    index = {label: i for i, label in enumerate(label_order)}
    # frame labels are the sample's label propagated to each of its frames
    frames = np.concatenate(seqs, axis=0)
    labels = np.concatenate(
        [np.full(len(seq), index[label]) for seq, label in zip(seqs, seq_labels)]
    )
    cfg = AdamConfig(
        learning_rate=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        epsilon=args.epsilon,
        batch_size=args.batch,
        epochs=args.epochs,
    )
    arch = [frames.shape[1], args.hidden, args.embed_dim, len(label_order)]
    net, losses = projector_train(frames, labels, arch, cfg, seed=args.seed)
    _write_json(args.out, net.to_dict())
    print(f"wrote {args.out} (per-epoch loss: {', '.join(f'{v:.6f}' for v in losses)})")
    return 0


def cmd_projector_embed(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    net = ProjectorNet.from_dict(_load_json(args.net))
    manifest = _transform_dataset(
        dataset, args.modality, args.out, lambda frames: projector_embed(net, frames)
    )
    print(f"wrote {manifest}")
    return 0


def cmd_hmm_train(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    split_samples = dataset.split(args.split)
    if not split_samples:
        raise ValueError(f"split {args.split!r} has no samples")
    mods = args.modality
    pairs = []
    for s in split_samples:
        missing = [m for m in mods if m not in s.sequences]
        if missing:
            raise ValueError(f"sample {s.id!r} is missing modalities {missing}")
        if len(mods) == 1:
            pairs.append((s.sequences[mods[0]], s.label))
        else:
            pairs.append((concat_features([s.sequences[m] for m in mods]), s.label))
    bank = train_bank(
        pairs,
        topology_kind=_topology(args.topology),
        n_states=args.states,
        emission_kind=args.emission,
        n_mixtures=args.mixtures,
        seed=args.seed,
        score_kind=args.score,
        sources=mods if len(mods) > 1 else (),
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
    )
    _write_json(args.out, bank.to_dict())
    print(f"wrote {args.out} ({len(bank.labels)} classes, dim {bank.space.dim})")
    return 0


def _load_banks(paths) -> dict[str, ModelBank]:
    banks: dict[str, ModelBank] = {}
    for path in paths:
        bank = ModelBank.from_dict(_load_json(path))
        key = bank.space.modality.value
        if key in banks:
            raise ValueError(f"two banks share the modality {key!r}")
        banks[key] = bank
    return banks


def cmd_classify(args) -> int:
    banks = _load_banks(args.bank)
    sample = {}
    for item in args.input:
        name, _, path = item.partition("=")
        if not path:
            raise ValueError(f"--input expects name=path.fseq, got {item!r}")
        sample[name] = dio.read_fseq(path, Modality(name))
    result = classify(banks, sample, args.fusion, args.length_normalize)
    payload = {
        "label": result.label,
        "winning_modality": result.winning_modality,
        "scores": {label: float(v) for label, v in zip(result.labels, result.scores)},
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    banks = _load_banks(args.bank)
    samples = dataset.pairs(args.split)
    config = {
        "split": args.split,
        "banks": {
            key: {
                "modality": bank.space.modality.value,
                "dim": bank.space.dim,
                "sources": list(bank.space.sources),
            }
            for key, bank in banks.items()
        },
    }
    report = evaluate(banks, samples, args.fusion, config=config,
                      length_normalize=args.length_normalize)
    _write_json(args.report, report.to_dict())
    print(f"accuracy {report.accuracy:.4f} over {int(report.confusion.sum())} samples "
          f"-> {args.report}")
    return 0


def cmd_sweep(args) -> int:
    dataset = dio.load_dataset(args.manifest)
    grid = _load_json(args.grid)
    rows = sweep(
        dataset.pairs(args.train_split),
        dataset.pairs(args.eval_split),
        grid,
        base_seed=args.seed,
        score_kind=args.score,
    )
    _write_json(args.report, rows)
    ok = [r for r in rows if r["status"] == "ok"]
    failed = len(rows) - len(ok)
    best = f", best {ok[0]['accuracy']:.4f}" if ok else ""
    print(f"{len(rows)} cells ({failed} failed{best}) -> {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signhmm",
        description="Isolated sign/gesture classification with HMM banks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pool", help="globally pool a flattened-tensor sequence")
    p.add_argument("--kind", choices=["gap", "gmp"], required=True)
    p.add_argument("--in", dest="infile", required=True, help=".fseq of flattened CxHxW frames")
    p.add_argument("--shape", help="sidecar shape JSON (default: <in>.shape.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("pca", help="fit or apply a PCA projector")
    pca_sub = p.add_subparsers(dest="pca_command", required=True)
    pf = pca_sub.add_parser("fit")
    pf.add_argument("--manifest", required=True)
    pf.add_argument("--modality", required=True)
    pf.add_argument("--dim", type=positive_int, default=DEFAULT_PCA_DIM)
    pf.add_argument("--split", default="train")
    pf.add_argument("--out", required=True)
    pf.set_defaults(func=cmd_pca_fit)
    pp = pca_sub.add_parser("project")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--modality", required=True)
    pp.add_argument("--projector", required=True)
    pp.add_argument("--out", required=True, help="output dataset directory")
    pp.set_defaults(func=cmd_pca_project)

    p = sub.add_parser("projector", help="train or apply the nonlinear projector")
    proj_sub = p.add_subparsers(dest="projector_command", required=True)
    pt = proj_sub.add_parser("train")
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--modality", required=True)
    pt.add_argument("--embed-dim", type=positive_int, default=DEFAULT_EMBED_DIM)
    pt.add_argument("--hidden", type=positive_int, default=DEFAULT_HIDDEN_DIM)
    pt.add_argument("--lr", type=float, default=0.001)
    pt.add_argument("--beta1", type=float, default=0.9)
    pt.add_argument("--beta2", type=float, default=0.999)
    pt.add_argument("--epsilon", type=float, default=1e-8)
    pt.add_argument("--batch", type=positive_int, default=32)
    pt.add_argument("--epochs", type=positive_int, default=3)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--split", default="train")
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=cmd_projector_train)
    pe = proj_sub.add_parser("embed")
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--modality", required=True)
    pe.add_argument("--net", required=True)
    pe.add_argument("--out", required=True, help="output dataset directory")
    pe.set_defaults(func=cmd_projector_embed)

    p = sub.add_parser("hmm", help="train per-class HMM banks")
    hmm_sub = p.add_subparsers(dest="hmm_command", required=True)
    ht = hmm_sub.add_parser("train")
    ht.add_argument("--manifest", required=True)
    ht.add_argument("--modality", nargs="+", required=True,
                    help="one modality, or several to train on their concatenation")
    ht.add_argument("--states", type=positive_int, default=DEFAULT_N_STATES)
    ht.add_argument("--topology", choices=TOPOLOGY_CHOICES, default="ergodic")
    ht.add_argument("--emission", choices=["gaussian", "gmm"], default="gaussian")
    ht.add_argument("--mixtures", type=positive_int, default=DEFAULT_N_MIXTURES)
    ht.add_argument("--score", choices=["viterbi", "forward"], default="viterbi")
    ht.add_argument("--seed", type=int, default=0)
    ht.add_argument("--split", default="train")
    ht.add_argument("--max-iters", type=positive_int, default=100)
    ht.add_argument("--rel-tol", type=float, default=1e-4)
    ht.add_argument("--out", required=True)
    ht.set_defaults(func=cmd_hmm_train)

    p = sub.add_parser("classify", help="classify one multi-modal sample")
    p.add_argument("--bank", action="append", required=True, help="bank JSON (repeatable)")
    p.add_argument("--input", action="append", required=True,
                   help="modality=path.fseq (repeatable)")
    p.add_argument("--fusion", choices=["max-merge", "concat"], default="max-merge")
    p.add_argument("--length-normalize", action="store_true",
                   help="diagnostic: divide scores by sequence length")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="evaluate banks over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank", action="append", required=True)
    p.add_argument("--fusion", choices=["max-merge", "concat"], default="max-merge")
    p.add_argument("--split", default="test")
    p.add_argument("--length-normalize", action="store_true")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate a hyperparameter grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help="grid JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score", choices=["viterbi", "forward"], default="viterbi")
    p.add_argument("--train-split", default="train")
    p.add_argument("--eval-split", default="test")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
