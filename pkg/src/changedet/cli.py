"""Command-line entry points: gen-data, train, eval, ablate."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .metrics import compute_metrics
from .synth import generate_dataset
from .training import evaluate, train


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="config file (key = value lines)")
    parser.add_argument("--data", type=str, help="dataset root directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--channels", type=int)
    parser.add_argument("--base-width", type=int)
    parser.add_argument("--decoder-layers", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--run-name", type=str)
    for flag in ("cosine", "subtract", "ffn", "self-attention", "fcm",
                 "deep-ce", "deep-dice", "augment"):
        field = flag.replace("-", "_")
        parser.add_argument(f"--{flag}", dest=field, action="store_true", default=None)
        parser.add_argument(f"--no-{flag}", dest=field, action="store_false", default=None)


def _build_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    mapping = {
        "data": "data_dir", "seed": "seed", "epochs": "epochs",
        "batch_size": "batch_size", "channels": "channels",
        "base_width": "base_width", "decoder_layers": "decoder_layers",
        "dropout": "dropout", "alpha": "alpha", "lr": "lr",
        "run_name": "run_name", "cosine": "cosine", "subtract": "subtract",
        "ffn": "ffn", "self_attention": "self_attention", "fcm": "fcm",
        "deep_ce": "deep_ce", "deep_dice": "deep_dice", "augment": "augment",
    }
    for arg_name, field in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field] = value
    return config.replace(**overrides)


def cmd_gen_data(args: argparse.Namespace) -> int:
    manifests = generate_dataset(
        args.out, args.seed,
        {"train": args.train_sources, "val": args.val_sources, "test": args.test_sources},
        source_size=args.source_size, patch=args.patch, difficulty=args.difficulty)
    for split, manifest in sorted(manifests.items()):
        print(f"{split}: {len(manifest.records)} patches of {manifest.patch_size}px")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    result = train(config, run_dir=args.run_dir, verbose=True)
    print(f"best val IoU {result.best_val_iou:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config_path = args.config or str(Path(args.checkpoint).parent / "config.txt")
    config = load_config(config_path)
    if args.data:
        config = config.replace(data_dir=args.data)
    csv_path = args.metrics_csv or str(Path(args.checkpoint).parent
                                       / f"metrics_{args.split}.csv")
    metrics, counts = evaluate(args.checkpoint, config, args.split,
                               dump_dir=args.dump_maps, metrics_csv=csv_path)
    print(f"{args.split}: precision {metrics.precision:.4f}  recall {metrics.recall:.4f}  "
          f"iou {metrics.iou:.4f}  f1 {metrics.f1:.4f}"
          + ("  [degenerate]" if metrics.degenerate else ""))
    print(f"metrics csv: {csv_path}")
    return 0


ABLATION_SUITES = {
    "table2": [("no_deep", {"deep_ce": False, "deep_dice": False}),
               ("deep_ce", {"deep_ce": True, "deep_dice": False}),
               ("deep_dice", {"deep_ce": False, "deep_dice": True}),
               ("deep_both", {"deep_ce": True, "deep_dice": True})],
    "table3": [("dot_add", {"cosine": False, "subtract": False}),
               ("cosine_add", {"cosine": True, "subtract": False}),
               ("dot_subtract", {"cosine": False, "subtract": True}),
               ("cosine_subtract", {"cosine": True, "subtract": True})],
    "table4": [("full", {}),
               ("no_ffn", {"ffn": False}),
               ("with_self_attention", {"self_attention": True,
                                        "allow_self_attention": True})],
    "table5": [("with_constraint_head", {"fcm": True}),
               ("no_constraint_head", {"fcm": False})],
    "layers": [(f"layers_{n}", {"decoder_layers": n}) for n in (3, 6, 9, 12)],
    "dropout": [(f"dropout_{p:g}", {"dropout": p}) for p in (0.0, 0.1, 0.2, 0.3, 0.5)],
}


def run_ablation_suite(suite: str, base: RunConfig, seeds: list[int],
                       out_csv: str | Path, runs_dir: str | Path,
                       verbose: bool = False) -> list[dict]:
    """Train and test every variant of a suite over the given seeds."""
    rows = []
    for label, overrides in ABLATION_SUITES[suite]:
        for seed in seeds:
            config = base.replace(seed=seed, run_name=f"{suite}-{label}-s{seed}",
                                  **overrides)
            run_dir = Path(runs_dir) / config.run_name
            result = train(config, run_dir=run_dir, verbose=verbose)
            metrics, counts = evaluate(result.checkpoint_path, config, "test")
            rows.append({"suite": suite, "variant": label, "seed": seed,
                         "precision": metrics.precision, "recall": metrics.recall,
                         "iou": metrics.iou, "f1": metrics.f1})
            if verbose:
                print(f"[{suite}] {label} seed {seed}: test iou {metrics.iou:.4f}")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["suite", "variant", "seed",
                                                "precision", "recall", "iou", "f1"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "precision": f"{row['precision']:.6f}",
                             "recall": f"{row['recall']:.6f}",
                             "iou": f"{row['iou']:.6f}", "f1": f"{row['f1']:.6f}"})
    return rows


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out_csv = args.out or f"ablation_{args.suite}.csv"
    runs_dir = args.runs_dir or str(Path(config.data_dir or ".") / "runs")
    rows = run_ablation_suite(args.suite, config, seeds, out_csv, runs_dir, verbose=True)
    by_variant: dict[str, list[float]] = {}
    for row in rows:
        by_variant.setdefault(row["variant"], []).append(row["iou"])
    print(f"\n{args.suite} mean test IoU over seeds {seeds}:")
    for variant, ious in by_variant.items():
        print(f"  {variant:24s} {sum(ious) / len(ious):.4f}")
    print(f"details: {out_csv}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="changedet",
                                     description="bi-temporal change detection at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--train-sources", type=int, default=128)
    gen.add_argument("--val-sources", type=int, default=16)
    gen.add_argument("--test-sources", type=int, default=16)
    gen.add_argument("--source-size", type=int, default=128)
    gen.add_argument("--patch", type=int, default=64)
    gen.add_argument("--difficulty", default="default")
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train a model")
    _add_config_overrides(tr)
    tr.add_argument("--run-dir", type=str)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", type=str)
    ev.add_argument("--data", type=str)
    ev.add_argument("--split", default="test")
    ev.add_argument("--dump-maps", type=str)
    ev.add_argument("--metrics-csv", type=str)
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="run an ablation grid")
    _add_config_overrides(ab)
    ab.add_argument("--suite", required=True, choices=sorted(ABLATION_SUITES))
    ab.add_argument("--seeds", default="0,1,2")
    ab.add_argument("--out", type=str)
    ab.add_argument("--runs-dir", type=str)
    ab.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
