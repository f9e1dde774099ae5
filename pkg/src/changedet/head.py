"""Prediction heads turning query embeddings into full-resolution change maps.

The constrained head projects the concatenated stride-4 features of both
temporal branches down to the embedding width, takes per-class inner products
with MLP-transformed query embeddings, and upsamples the result by 4. The
plain head (its ablation replacement) instead puts a 1x1 convolution on the
finest-scale relational map and upsamples by 8.
"""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, bilinear_resize, concat_rows, matmul, relu, reshape


class SegmentMlp(Module):
    """Three linear layers with ReLU between, all widths equal to the input."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(channels, channels, rng)
        self.fc2 = Linear(channels, channels, rng)
        self.fc3 = Linear(channels, channels, rng)

    def forward(self, pix: Tensor) -> Tensor:
        return self.fc3(relu(self.fc2(relu(self.fc1(pix)))))


class ConstrainedHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.segment_mlp = SegmentMlp(channels, rng)
        self.project = Conv2d(2 * channels, channels, 1, 1, rng)

    def constrain_project(self, hi_before: Tensor, hi_after: Tensor) -> Tensor:
        """Concatenate the stride-4 maps channel-wise and project back to C."""
        if hi_before.shape != hi_after.shape:
            raise ShapeError(f"stride-4 maps differ: {hi_before.shape} vs {hi_after.shape}")
        return self.project(concat_rows([hi_before, hi_after]))

    @staticmethod
    def fuse_predict(segment: Tensor, constrain: Tensor) -> Tensor:
        """Per-class inner products against every pixel, then x4 upsampling."""
        c, h, w = constrain.shape
        if segment.shape[1] != c:
            raise ShapeError(f"embedding width {segment.shape} does not match "
                             f"feature width {constrain.shape}")
        scores = reshape(matmul(segment, reshape(constrain, (c, h * w))),
                         (segment.shape[0], h, w))
        return bilinear_resize(scores, 4)

    def forward(self, pix: Tensor, hi_before: Tensor, hi_after: Tensor) -> Tensor:
        return self.fuse_predict(self.segment_mlp(pix),
                                 self.constrain_project(hi_before, hi_after))


class PlainHead(Module):
    """1x1 convolution over the finest relational map, upsampled x8."""

    def __init__(self, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(num_classes, num_classes, 1, 1, rng)

    def forward(self, finest_scores: Tensor) -> Tensor:
        return bilinear_resize(bilinear_resize(self.conv(finest_scores), 4), 2)
