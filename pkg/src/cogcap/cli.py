"""Command-line surface binding generation, training, evaluation, and reports.

Subcommands: gen-data, train-align, train-prior, eval, attribute, report,
sweep. Exit codes: 0 success, 1 usage error, 2 runtime failure. All paths are
explicit flags; nothing writes into the working directory implicitly. The
dataset directory carries the full run configuration, so downstream commands
need only --data/--ckpt. COGCAP_THREADS caps worker parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from cogcap import serialization as ser
from cogcap.attribution import average_saliency, gradcam
from cogcap.config import ConfigError, RunConfig, config_to_json, load_run_config
from cogcap.contrastive import (
    ContrastiveAligner,
    load_aligner,
    save_aligner,
    train_alignment,
)
from cogcap.evaluation import evaluate_pipeline, report_to_json, walk_leaves
from cogcap.prior import EmbeddingPrior, load_prior, save_prior
from cogcap.synth import (
    MODALITIES,
    Preprocessed,
    SynthDataset,
    generate_dataset,
    preprocess,
)

DATASET_KIND = "dataset"


class CliError(RuntimeError):
    pass


def _thread_cap(requested: int) -> int:
    cap = os.environ.get("COGCAP_THREADS")
    if cap is not None:
        try:
            cap_value = int(cap)
        except ValueError as err:
            raise CliError(f"COGCAP_THREADS must be an integer, got {cap!r}") from err
        if cap_value < 1:
            raise CliError(f"COGCAP_THREADS must be >= 1, got {cap_value}")
        return max(1, min(requested, cap_value))
    return max(1, requested)


# ---------------------------------------------------------------- dataset io

def save_dataset(directory: str | Path, cfg: RunConfig, ds: SynthDataset) -> None:
    tensors = {
        "train_signals": ds.train_signals,
        "train_meta": ds.train_meta,
        "test_signals": ds.test_signals,
        "test_meta": ds.test_meta,
    }
    for m in MODALITIES:
        tensors[f"target.{m}"] = ds.modality_targets[m]
    ser.save_checkpoint(directory, DATASET_KIND, cfg.to_dict(), tensors)


def load_dataset(directory: str | Path) -> tuple[RunConfig, SynthDataset, Preprocessed]:
    config, tensors, _, _ = ser.load_checkpoint(directory, expected_kind=DATASET_KIND)
    cfg = RunConfig.from_dict(config)
    ds = SynthDataset(
        config=cfg.generation,
        seed=cfg.seed,
        train_signals=tensors["train_signals"],
        train_meta=tensors["train_meta"],
        test_signals=tensors["test_signals"],
        test_meta=tensors["test_meta"],
        modality_targets={m: tensors[f"target.{m}"] for m in MODALITIES},
    )
    return cfg, ds, preprocess(ds, cfg.preprocess)


def _load_aligners(ckpt: Path, pp: Preprocessed) -> dict[str, ContrastiveAligner]:
    aligners = {}
    for m in MODALITIES:
        aligner, tensors, _ = load_aligner(ckpt / "align" / m)
        stored = tensors.get("whitener")
        if stored is None or not np.allclose(stored, pp.whitener):
            raise ser.CheckpointError(
                f"align/{m} was trained on a different dataset (whitener mismatch)")
        aligners[m] = aligner
    return aligners


def _load_priors(ckpt: Path) -> dict[str, EmbeddingPrior]:
    return {m: load_prior(ckpt / "prior" / m) for m in MODALITIES}


# ---------------------------------------------------------------- subcommands

def _cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    ds = generate_dataset(cfg.generation, cfg.seed)
    preprocess(ds, cfg.preprocess)  # fail fast on an unusable geometry
    save_dataset(args.out, cfg, ds)
    print(f"wrote dataset ({ds.train_signals.shape[0]} train / "
          f"{ds.test_signals.shape[0]} test trials) to {args.out}")
    return 0


def _cmd_train_align(args) -> int:
    cfg, ds, pp = load_dataset(args.data)
    align_cfg = cfg.align
    n_threads = _thread_cap(args.threads)
    out = Path(args.out)
    (out / "align").mkdir(parents=True, exist_ok=True)
    fitted, logs = train_alignment(
        pp, ds.modality_targets, align_cfg, seed=cfg.seed,
        n_threads=n_threads, log_path=out / "align" / "log.jsonl",
    )
    for m, aligner in fitted.items():
        save_aligner(out / "align" / m, aligner,
                     extra_tensors={"whitener": pp.whitener})
    last = {m: [r for r in logs if r["modality"] == m][-1] for m in fitted}
    for m in MODALITIES:
        print(f"align/{m}: top1={last[m]['test_top1']:.4f} "
              f"top5={last[m]['test_top5']:.4f} loss={last[m]['loss']:.4f}")
    return 0


def _cmd_train_prior(args) -> int:
    cfg, ds, pp = load_dataset(args.data)
    ckpt = Path(args.ckpt)
    aligners = _load_aligners(ckpt, pp)
    for m in MODALITIES:
        aligner = aligners[m]
        cond = aligner.transform(pp.x_train)
        target = aligner.embed_targets(ds.modality_targets[m][pp.train_image_indices])
        prior = EmbeddingPrior(
            modality=m, embed_dim=cfg.align.embed_dim,
            n_blocks=cfg.prior.n_blocks, hidden_mult=cfg.prior.hidden_mult,
            t_steps=cfg.prior.t_steps, beta_min=cfg.prior.beta_min,
            beta_max=cfg.prior.beta_max, lr=cfg.prior.lr,
            weight_decay=cfg.prior.weight_decay, batch_size=cfg.prior.batch_size,
            epochs=cfg.prior.epochs, cond_drop=cfg.prior.cond_drop,
            n_steps=cfg.eval.n_steps, guidance_scale=cfg.eval.guidance_scale,
            seed=cfg.seed,
        )
        prior.fit(cond, target)
        save_prior(ckpt / "prior" / m, prior)
        print(f"prior/{m}: final loss={prior.losses_[-1]:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg, ds, pp = load_dataset(args.data)
    ckpt = Path(args.ckpt)
    aligners = _load_aligners(ckpt, pp)
    priors = _load_priors(ckpt)
    eval_cfg = cfg.eval
    if args.steps is not None:
        eval_cfg = dataclasses.replace(eval_cfg, n_steps=args.steps)
    if args.guidance is not None:
        eval_cfg = dataclasses.replace(eval_cfg, guidance_scale=args.guidance)
    seed = cfg.seed if args.seed is None else args.seed
    report = evaluate_pipeline(ds, pp, aligners, priors, eval_cfg, seed,
                               oracle=args.oracle)
    Path(args.out).write_text(report_to_json(report) + "\n", encoding="utf-8")
    text, _ = render_report(report)
    print(text)
    return 0


def _cmd_attribute(args) -> int:
    cfg, ds, pp = load_dataset(args.data)
    aligners = _load_aligners(Path(args.ckpt), pp)
    wanted = MODALITIES if args.modality == "all" else (args.modality,)
    maps = {}
    for m in wanted:
        aligner = aligners[m]
        targets = aligner.embed_targets(ds.modality_targets[m][pp.test_image_indices])
        maps[m] = gradcam(aligner.encoder_config_, aligner.params_,
                          pp.x_test_avg, targets, m)
    out = {m: sal.to_dict() for m, sal in maps.items()}
    if len(maps) > 1:
        pooled = [dataclasses.replace(sal, modality="all") for sal in maps.values()]
        out["average"] = average_saliency(pooled).to_dict()
    Path(args.out).write_text(ser.canonical_json(out) + "\n", encoding="utf-8")
    for name, sal in out.items():
        top = int(np.argmax(sal["channel_saliency"]))
        print(f"{name}: strongest channel {top}"
              + (" (all-zero map)" if sal["all_zero"] else ""))
    return 0


def _cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except OSError as err:
        raise CliError(f"cannot read report {args.report}: {err}") from err
    except json.JSONDecodeError as err:
        raise CliError(f"report {args.report} is not valid JSON: {err}") from err
    text, _ = render_report(report)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_sweep(args) -> int:
    cfg, ds, pp = load_dataset(args.data)
    try:
        batch_sizes = [int(v) for v in args.batch_sizes.split(",") if v]
        lrs = [float(v) for v in args.lrs.split(",") if v]
    except ValueError as err:
        raise CliError(f"bad sweep grid: {err}") from err
    if not batch_sizes or not lrs:
        raise CliError("sweep needs at least one batch size and one learning rate")
    epochs = args.epochs if args.epochs is not None else cfg.align.epochs
    grid = []
    for bs in batch_sizes:
        for lr in lrs:
            align_cfg = dataclasses.replace(cfg.align, batch_size=bs, lr=lr,
                                            epochs=epochs)
            fitted, logs = train_alignment(pp, ds.modality_targets, align_cfg,
                                           seed=cfg.seed, modalities=("image",))
            last = logs[-1]
            grid.append({"batch_size": bs, "lr": lr,
                         "top1": last["test_top1"], "top5": last["test_top5"]})
            print(f"batch={bs} lr={lr}: top1={last['test_top1']:.4f}")
    payload = {
        "modality": "image",
        "epochs": epochs,
        "seed": cfg.seed,
        "batch_sizes": batch_sizes,
        "lrs": lrs,
        "grid": grid,
    }
    Path(args.out).write_text(ser.canonical_json(payload) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- rendering

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def render_report(report: dict) -> tuple[str, list[str]]:
    """Render an evaluation report as text tables.

    Returns (text, rendered_paths); every leaf of the report appears exactly
    once, and rendered_paths records the order for verification.
    """
    leaves = dict(walk_leaves(report))
    taken: list[str] = []

    def take(path: str) -> str:
        if path not in leaves:
            raise CliError(f"report is missing field {path}")
        taken.append(path)
        return _fmt(leaves.pop(path))

    lines = [
        "evaluation report",
        f"  config hash : {take('config_hash')}",
        f"  n-way       : {take('n_way')}",
        f"  oracle mode : {take('oracle')}",
        f"  seeds       : dataset={take('seeds.dataset')} eval={take('seeds.eval')}",
    ]
    for group in ("aligners", "priors"):
        pairs = " ".join(
            f"{p.split('.')[-1]}={take(p)}"
            for p in sorted(k for k in leaves if k.startswith(f"seeds.{group}."))
        )
        lines.append(f"  {group:<12}: {pairs}")

    def table(title: str, section: str, columns: list[str]) -> None:
        rows = list(report.get(section, {}))
        lines.append("")
        lines.append(title)
        width = max([len(r) for r in rows] + [8])
        header = "  " + "modality".ljust(width)
        for col in columns:
            header += f" | {col:^21}"
        lines.append(header)
        lines.append("  " + "-" * (len(header) - 2))
        for row in rows:
            line = "  " + row.ljust(width)
            for col in columns:
                base = f"{section}.{row}.{col}"
                if base in leaves:
                    cell = f"{take(base)} {take(base + '_ci')}"
                else:
                    cell = "-"
                line += f" | {cell:^21}"
            lines.append(line)

    table("retrieval accuracy (top-1 / top-5 with bootstrap CIs)",
          "retrieval", ["top1", "top5"])
    table("generation metrics (mean with bootstrap CIs)", "generation",
          ["mean_cosine", "pixcorr", "ssim", "two_way", "correlation_distance"])

    if leaves:  # future-proofing: anything unanticipated still gets printed once
        lines.append("")
        lines.append("other fields")
        for path in sorted(leaves):
            lines.append(f"  {path} = {take(path)}")
    return "\n".join(lines), taken


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cogcap",
                     description="EEG-to-embedding decoding pipeline on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="run config JSON (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the config's master seed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-align", help="train the three modality experts")
    p.add_argument("--data", "--dataset", dest="data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--threads", type=int, default=len(MODALITIES),
                   help="modality trainings to run in parallel")
    p.set_defaults(func=_cmd_train_align)

    p = sub.add_parser("train-prior", help="train the embedding diffusion priors")
    p.add_argument("--data", "--dataset", dest="data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint directory with align/")
    p.set_defaults(func=_cmd_train_prior)

    p = sub.add_parser("eval", help="run retrieval and generation evaluation")
    p.add_argument("--data", "--dataset", dest="data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--steps", type=int, help="override sampler step count")
    p.add_argument("--guidance", type=float, help="override guidance scale")
    p.add_argument("--seed", type=int, help="override the evaluation seed")
    p.add_argument("--oracle", action="store_true",
                   help="use ground-truth embeddings as queries (upper bound)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attribute", help="Grad-CAM channel/time saliency")
    p.add_argument("--data", "--dataset", dest="data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="saliency JSON path")
    p.add_argument("--modality", choices=list(MODALITIES) + ["all"], default="all")
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("report", help="render an evaluation report as text")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--out", help="also write the text here")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("sweep", help="batch-size x learning-rate grid")
    p.add_argument("--data", "--dataset", dest="data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="sweep result JSON path")
    p.add_argument("--batch-sizes", default="32,64,128",
                   help="comma-separated batch sizes")
    p.add_argument("--lrs", default="0.0001,0.0003,0.001",
                   help="comma-separated learning rates")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.set_defaults(func=_cmd_sweep)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except Exception as err:  # runtime failure contract: message on stderr, exit 2
        print(f"cogcap: error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
