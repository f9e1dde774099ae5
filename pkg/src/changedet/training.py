"""Training and evaluation loops, checkpointing, and map export.

A run is a pure function of (config, dataset bytes): parameter init, dropout,
shuffling, and augmentation all derive from the config seed, the epoch log is
buffered and written once, and evaluation never augments.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import augment
from .config import RunConfig, save_config
from .losses import total_loss
from .metrics import ConfusionCounts, Metrics, compute_metrics, confusion, write_metrics_csv
from .model import ChangeDetector, ModelOutput
from .nn import Module
from .optim import AdamW, ParamGroup, poly_lr
from .pnm import float_to_bytes, RasterImage, write_mask, write_pnm
from .synth import SamplePair, load_manifest, load_patch
from .tensor import ConfigError, Tensor

DATA_DIR_ENV = "CHANGEDET_DATA_DIR"


class CheckpointError(ValueError):
    """Checkpoint does not match the model it is being loaded into."""


# -- checkpoint format ------------------------------------------------------------
#
# text manifest, then a flat little-endian float64 blob:
#   params <count>
#   <name> <d0>x<d1>... <offset-in-float64-units>
#   ...
#   end
#   <blob>


def save_checkpoint(model: Module, path: str | Path) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, p in model.named_parameters():
        shape = "x".join(str(d) for d in p.data.shape)
        entries.append(f"{name} {shape} {offset}")
        blobs.append(p.data.astype("<f8").tobytes())
        offset += p.data.size
    header = f"params {len(entries)}\n" + "\n".join(entries) + "\nend\n"
    Path(path).write_bytes(header.encode("ascii") + b"".join(blobs))


def load_checkpoint(model: Module, path: str | Path) -> None:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    count = int(raw[:newline].decode("ascii").split()[1])
    pos = newline + 1
    stored: dict[str, tuple[tuple[int, ...], int]] = {}
    for _ in range(count):
        newline = raw.index(b"\n", pos)
        name, shape_text, offset = raw[pos:newline].decode("ascii").split()
        stored[name] = (tuple(int(d) for d in shape_text.split("x")), int(offset))
        pos = newline + 1
    newline = raw.index(b"\n", pos)
    if raw[pos:newline] != b"end":
        raise CheckpointError(f"malformed checkpoint manifest in {path}")
    blob = np.frombuffer(raw[newline + 1:], dtype="<f8")

    mismatches = []
    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in stored:
            mismatches.append(f"missing from checkpoint: {name} {p.data.shape}")
        elif stored[name][0] != p.data.shape:
            mismatches.append(f"shape mismatch for {name}: checkpoint "
                              f"{stored[name][0]}, model {p.data.shape}")
    for name in stored:
        if name not in params:
            mismatches.append(f"unknown in model: {name}")
    if mismatches:
        raise CheckpointError("checkpoint incompatible with model:\n  "
                              + "\n  ".join(mismatches))
    for name, p in params.items():
        shape, offset = stored[name]
        p.data = blob[offset:offset + p.data.size].reshape(shape).astype(np.float64)


# -- data access --------------------------------------------------------------------


class PatchDataset:
    """All patches of one split, loaded eagerly into memory."""

    def __init__(self, data_dir: str | Path, split: str):
        data_dir = Path(data_dir)
        manifest = load_manifest(data_dir / f"{split}.manifest")
        self.split = split
        self.samples = [load_patch(data_dir, r) for r in manifest.records]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> SamplePair:
        return self.samples[idx]


def resolve_data_dir(configured: str) -> Path:
    root = configured or os.environ.get(DATA_DIR_ENV, "")
    if not root:
        raise ConfigError(f"no dataset root: set data_dir or ${DATA_DIR_ENV}")
    return Path(root)


# -- model construction ---------------------------------------------------------------


def build_model(config: RunConfig) -> ChangeDetector:
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    return ChangeDetector(config, rng=np.random.default_rng(seeds[0]))


def make_optimizer(model: ChangeDetector, config: RunConfig) -> AdamW:
    backbone, heads = model.head_and_backbone_params()
    groups = [ParamGroup(backbone, lr_scale=config.backbone_lr_mult),
              ParamGroup(heads, lr_scale=1.0)]
    return AdamW(groups, weight_decay=config.weight_decay)


# -- evaluation -------------------------------------------------------------------------


def predict_mask(output: ModelOutput) -> np.ndarray:
    return (output.final.data.argmax(axis=0) == 1).astype(np.uint8)


def export_attention_maps(output: ModelOutput, dump_dir: Path, stem: str,
                          crop_size: int) -> list[Path]:
    """Write the query-averaged attention of every scale as a P5 graymap."""
    paths = []
    for attn, (h, w) in zip(output.attention, output.grids):
        grid = attn.data.mean(axis=0).reshape(h, w)
        span = grid.max() - grid.min()
        normalized = (grid - grid.min()) / span if span > 0 else np.zeros_like(grid)
        stride = crop_size // h
        path = dump_dir / f"{stem}_attn_s{stride:02d}.pgm"
        write_pnm(RasterImage(float_to_bytes(normalized)), path)
        paths.append(path)
    return paths


def evaluate_model(model: ChangeDetector, dataset: PatchDataset,
                   dump_dir: str | Path | None = None) -> ConfusionCounts:
    """Aggregate confusion counts over a split, one sample at a time, no augmentation."""
    model.eval()
    dump_path = None
    if dump_dir is not None:
        dump_path = Path(dump_dir)
        dump_path.mkdir(parents=True, exist_ok=True)
    counts = ConfusionCounts()
    for i in range(len(dataset)):
        sample = dataset[i]
        output = model(Tensor(sample.before), Tensor(sample.after))
        pred = predict_mask(output)
        counts = counts.add(confusion(pred, sample.gt))
        if dump_path is not None:
            stem = f"sample{i:04d}"
            write_mask(pred * 1, dump_path / f"{stem}_pred.pgm")
            export_attention_maps(output, dump_path, stem, sample.gt.shape[0])
    return counts


def evaluate(checkpoint_path: str | Path, config: RunConfig, split: str,
             dump_dir: str | Path | None = None,
             metrics_csv: str | Path | None = None) -> tuple[Metrics, ConfusionCounts]:
    config.validate()
    model = build_model(config)
    load_checkpoint(model, checkpoint_path)
    dataset = PatchDataset(resolve_data_dir(config.data_dir), split)
    counts = evaluate_model(model, dataset, dump_dir)
    if metrics_csv is not None:
        write_metrics_csv(metrics_csv, config.dataset, split, counts)
    return compute_metrics(counts), counts


# -- training ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_path: Path
    log_path: Path
    best_val_iou: float
    best_epoch: int


def train(config: RunConfig, run_dir: str | Path | None = None,
          verbose: bool = False) -> TrainResult:
    config.validate()
    if config.self_attention and not config.allow_self_attention:
        raise ConfigError(
            "self_attention=true adds within-set attention parameters without "
            "an accuracy gain and is rejected in the default profile; set "
            "allow_self_attention=true to run it as an ablation")
    if config.self_attention:
        warnings.warn("running with self-attention: extra parameters, no expected gain",
                      stacklevel=2)

    data_dir = resolve_data_dir(config.data_dir)
    train_set = PatchDataset(data_dir, "train")
    val_set = PatchDataset(data_dir, "val")

    run_path = Path(run_dir) if run_dir is not None else data_dir / "runs" / config.run_name
    run_path.mkdir(parents=True, exist_ok=True)
    save_config(config, run_path / "config.txt")
    checkpoint_path = run_path / "best.ckpt"
    log_path = run_path / "log.csv"

    model = build_model(config)
    optimizer = make_optimizer(model, config)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[1])

    steps_per_epoch = -(-len(train_set) // config.batch_size)
    max_iter = config.epochs * steps_per_epoch
    iteration = 0
    best_iou, best_epoch = -1.0, -1
    log_rows = ["epoch,train_loss,val_iou,val_f1,lr"]

    for epoch in range(config.epochs):
        model.train()
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for step in range(steps_per_epoch):
            chunk = order[step * config.batch_size:(step + 1) * config.batch_size]
            optimizer.zero_grad()
            batch_terms = []
            for idx in chunk:
                sample = train_set[int(idx)]
                if config.augment:
                    sample = augment(sample, (config.seed, 7, epoch, int(idx)),
                                     config.shared_photometric_aug)
                dropout_rng = np.random.default_rng((config.seed, 11, epoch, int(idx)))
                output = model(Tensor(sample.before), Tensor(sample.after),
                               rng=dropout_rng)
                loss, _ = total_loss(output.aux, output.final, sample.gt,
                                     alpha=config.alpha, deep_ce=config.deep_ce,
                                     deep_dice=config.deep_dice)
                batch_terms.append(loss)
            batch_loss = batch_terms[0]
            for term in batch_terms[1:]:
                batch_loss = batch_loss + term
            batch_loss = batch_loss * (1.0 / len(batch_terms))
            if not np.isfinite(batch_loss.data):
                raise RuntimeError(f"training diverged: loss not finite at "
                                   f"epoch {epoch} step {step}")
            batch_loss.backward()
            lr = poly_lr(iteration, max_iter, config.lr, config.poly_power)
            optimizer.step(lr)
            iteration += 1
            epoch_loss += batch_loss.item() * len(chunk)
        epoch_loss /= len(train_set)

        val_metrics = compute_metrics(evaluate_model(model, val_set))
        if val_metrics.iou > best_iou:
            best_iou, best_epoch = val_metrics.iou, epoch
            save_checkpoint(model, checkpoint_path)
        log_rows.append(f"{epoch},{epoch_loss:.8f},{val_metrics.iou:.6f},"
                        f"{val_metrics.f1:.6f},{lr:.10f}")
        if verbose:
            print(f"epoch {epoch:3d}  loss {epoch_loss:.4f}  "
                  f"val iou {val_metrics.iou:.4f}  lr {lr:.6f}")

    log_path.write_text("\n".join(log_rows) + "\n")
    return TrainResult(run_path, checkpoint_path, log_path, best_iou, best_epoch)
