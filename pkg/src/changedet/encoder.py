"""Weight-sharing Siamese encoder and the light top-down pyramid decoder.

The encoder is a small trainable convnet with the stride schedule [4, 8, 16, 32]:
a two-conv stem down to stride 4, then three stages of two 3x3 conv+GN+ReLU
blocks, the first of each at stride 2. Stage widths grow as
[base, 2*base, 4*base, 8*base]. Both temporal branches run through the same
module instances, so weight sharing holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvNormAct, Conv2d, GroupNorm, Module
from .tensor import ConfigError, ShapeError, Tensor, bilinear_resize

STRIDES = (4, 8, 16, 32)


@dataclass
class FeaturePyramid:
    """Raw encoder stages X1..X4 at strides 4/8/16/32."""

    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ShapeError(f"feature pyramid needs 4 levels, got {len(self.levels)}")


@dataclass
class DecodedPyramid:
    """Decoder outputs P1..P4, all with the unified channel count."""

    levels: list[Tensor]

    def __post_init__(self):
        widths = {lvl.shape[0] for lvl in self.levels}
        if len(self.levels) != 4 or len(widths) != 1:
            raise ShapeError("decoded pyramid needs 4 levels with one channel count")


class Encoder(Module):
    def __init__(self, base: int, groups: int, rng: np.random.Generator):
        super().__init__()
        widths = [base, 2 * base, 4 * base, 8 * base]
        self.stem_a = ConvNormAct(3, base, rng, stride=2, groups=groups)
        self.stem_b = ConvNormAct(base, base, rng, stride=2, groups=groups)
        stages = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            stages.append(ConvNormAct(cin, cout, rng, stride=2, groups=groups))
            stages.append(ConvNormAct(cout, cout, rng, stride=1, groups=groups))
        self.stages = stages
        self.widths = widths

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"expected a (3, H, W) image, got {image.shape}")
        _, h, w = image.shape
        if h % 32 or w % 32:
            raise ConfigError(f"image size {h}x{w} must be divisible by 32")
        x = self.stem_b(self.stem_a(image))
        levels = [x]
        for i in range(0, len(self.stages), 2):
            x = self.stages[i + 1](self.stages[i](x))
            levels.append(x)
        return FeaturePyramid(levels)


class PyramidDecoder(Module):
    """Lateral 1x1 projections to a unified width, then top-down fusion.

    P4 = smooth(proj(X4)); P_i = smooth(proj(X_i) + upx2(P_{i+1})), where
    smooth is a 3x3 conv followed by group norm (applied at every level,
    including stride 4).
    """

    def __init__(self, stage_widths: list[int], channels: int, groups: int,
                 rng: np.random.Generator):
        super().__init__()
        self.laterals = [Conv2d(w, channels, 1, 1, rng) for w in stage_widths]
        self.smooth_convs = [Conv2d(channels, channels, 3, 1, rng) for _ in stage_widths]
        self.smooth_norms = [GroupNorm(channels, groups) for _ in stage_widths]
        self.channels = channels

    def forward(self, pyramid: FeaturePyramid) -> DecodedPyramid:
        projected = [lat(x) for lat, x in zip(self.laterals, pyramid.levels)]
        # top-down pathway over the merged (pre-smooth) maps, one smoothing
        # conv + norm per level on the way out
        merged = [None] * 4
        merged[3] = projected[3]
        for i in (2, 1, 0):
            merged[i] = projected[i] + bilinear_resize(merged[i + 1], 2)
        decoded = [norm(conv(m)) for conv, norm, m in
                   zip(self.smooth_convs, self.smooth_norms, merged)]
        return DecodedPyramid(decoded)


class SiameseBackbone(Module):
    """Encoder + pyramid decoder applied to both temporal images."""

    def __init__(self, base: int, channels: int, groups: int, rng: np.random.Generator):
        super().__init__()
        self.encoder = Encoder(base, groups, rng)
        self.decoder = PyramidDecoder(self.encoder.widths, channels, groups, rng)

    def forward(self, image: Tensor) -> DecodedPyramid:
        return self.decoder(self.encoder(image))

    def forward_pair(self, before: Tensor, after: Tensor) -> tuple[DecodedPyramid, DecodedPyramid]:
        if before.shape != after.shape:
            raise ShapeError(f"temporal images differ in shape: {before.shape} vs {after.shape}")
        return self.forward(before), self.forward(after)
