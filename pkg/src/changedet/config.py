"""Run configuration: every model, data, and training switch in one place.

Configs round-trip losslessly through a line-oriented ``key = value`` text
format (``#`` starts a comment). Booleans serialize as ``true``/``false``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .tensor import ConfigError


@dataclass
class RunConfig:
    # model
    num_classes: int = 2
    channels: int = 64          # unified pyramid width
    base_width: int = 16        # narrowest encoder stage
    norm_groups: int = 8
    decoder_layers: int = 3     # total query-decoder layers, a multiple of 3
    dropout: float = 0.2        # applied to attention maps at train time
    # ablation switches
    cosine: bool = True         # cosine-similarity logits in the bi-temporal attention
    subtract: bool = True       # subtract the aggregated value from the query
    ffn: bool = True
    self_attention: bool = False
    allow_self_attention: bool = False  # explicit opt-in for the ablation arm
    fcm: bool = True            # high-resolution constraint head
    deep_ce: bool = True        # per-scale cross-entropy supervision
    deep_dice: bool = True      # per-scale dice supervision
    # loss
    alpha: float = 0.4
    # optimization
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-3
    backbone_lr_mult: float = 0.1
    poly_power: float = 0.9
    # data
    crop_size: int = 64
    data_dir: str = ""
    dataset: str = "synthetic"
    shared_photometric_aug: bool = False
    augment: bool = True
    # bookkeeping
    seed: int = 0
    run_name: str = "run"

    def validate(self) -> None:
        if self.num_classes != 2:
            raise ConfigError(f"only binary change detection is supported, got K={self.num_classes}")
        if self.decoder_layers % 3 != 0 or self.decoder_layers < 3:
            raise ConfigError(f"decoder_layers must be a positive multiple of 3, got {self.decoder_layers}")
        if self.crop_size % 32 != 0:
            raise ConfigError(f"crop_size must be divisible by 32, got {self.crop_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.base_width % self.norm_groups != 0:
            raise ConfigError(f"base_width {self.base_width} not divisible by "
                              f"norm_groups {self.norm_groups}")

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        if raw not in ("true", "false"):
            raise ConfigError(f"{name}: expected true/false, got {raw!r}")
        return raw == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def save_config(config: RunConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}"
             for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path: str | Path) -> RunConfig:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)
