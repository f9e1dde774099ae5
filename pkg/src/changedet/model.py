"""The assembled change detector: backbone, multi-scale decoder, heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MultiScaleDecoder, relation_logits
from .config import RunConfig
from .encoder import SiameseBackbone
from .head import ConstrainedHead, PlainHead
from .nn import Module
from .tensor import Tensor


@dataclass
class ModelOutput:
    final: Tensor                  # (K, H, W) logits at input resolution
    aux: list[Tensor]              # coarse-to-fine per-scale logits (strides 32/16/8)
    attention: list[Tensor]        # per-scale bi-temporal attention maps
    grids: list[tuple[int, int]]   # token grid sizes per scale


class ChangeDetector(Module):
    """End-to-end detector over a bi-temporal image pair."""

    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        super().__init__()
        config.validate()
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.backbone = SiameseBackbone(config.base_width, config.channels,
                                        config.norm_groups, rng)
        self.decoder = MultiScaleDecoder(
            config.num_classes, config.channels, rng,
            cosine=config.cosine, subtract=config.subtract,
            use_ffn=config.ffn, use_self_attention=config.self_attention,
            dropout_p=config.dropout,
            layers_per_scale=config.decoder_layers // 3)
        if config.fcm:
            self.head = ConstrainedHead(config.channels, rng)
        else:
            self.head = PlainHead(config.num_classes, rng)
        self.config = config

    def forward(self, before: Tensor, after: Tensor,
                rng: np.random.Generator | None = None) -> ModelOutput:
        pyr_b, pyr_a = self.backbone.forward_pair(before, after)
        pix_list, y_list, attn_list, grids = self.decoder(pyr_b, pyr_a, rng=rng)
        aux = [relation_logits(pix, rel, grid)
               for pix, rel, grid in zip(pix_list, y_list, grids)]
        if self.config.fcm:
            final = self.head(pix_list[-1], pyr_b.levels[0], pyr_a.levels[0])
        else:
            final = self.head(aux[-1])
        return ModelOutput(final=final, aux=aux, attention=attn_list, grids=grids)

    def head_and_backbone_params(self):
        """Split named parameters into (backbone, head) groups for the optimizer."""
        backbone, heads = [], []
        for name, p in self.named_parameters():
            (backbone if name.startswith("backbone.") else heads).append((name, p))
        return backbone, heads
