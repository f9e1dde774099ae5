"""Training-time augmentation for bi-temporal samples.

Geometric components (scale jitter with a crop or zero-pad back to the
original size, horizontal flip) act identically on both frames and the mask;
the mask moves by nearest neighbor so labels stay binary. Photometric
components (per-channel color jitter, additive noise, Gaussian blur) touch
the images only and are sampled independently per frame unless the shared
mode is requested. Everything is a pure function of (sample, params), and
params are a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .synth import SamplePair, gaussian_blur

SCALE_RANGE = (0.5, 2.0)
GAIN_RANGE = (0.8, 1.2)
BIAS_RANGE = (-0.1, 0.1)
NOISE_MAX = 0.05
BLUR_MAX = 1.0


@dataclass
class FramePhotometric:
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    biases: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.0
    noise_seed: int = 0
    blur_sigma: float = 0.0

    def is_identity(self) -> bool:
        return (self.gains == (1.0, 1.0, 1.0) and self.biases == (0.0, 0.0, 0.0)
                and self.noise_sigma == 0.0 and self.blur_sigma == 0.0)


@dataclass
class AugmentParams:
    flip: bool = False
    scale: float = 1.0
    anchor: tuple[float, float] = (0.5, 0.5)   # relative crop/pad placement
    photometric: list[FramePhotometric] = field(
        default_factory=lambda: [FramePhotometric(), FramePhotometric()])


def sample_params(rng: np.random.Generator, shared_photometric: bool = False) -> AugmentParams:
    def frame() -> FramePhotometric:
        return FramePhotometric(
            gains=tuple(rng.uniform(*GAIN_RANGE, 3)),
            biases=tuple(rng.uniform(*BIAS_RANGE, 3)),
            noise_sigma=float(rng.uniform(0.0, NOISE_MAX)),
            noise_seed=int(rng.integers(2 ** 31)),
            blur_sigma=float(rng.uniform(0.0, BLUR_MAX)),
        )

    flip = bool(rng.random() < 0.5)
    scale = float(rng.uniform(*SCALE_RANGE))
    anchor = (float(rng.random()), float(rng.random()))
    first = frame()
    second = first if shared_photometric else frame()
    return AugmentParams(flip=flip, scale=scale, anchor=anchor,
                         photometric=[first, second])


def _resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Arbitrary-factor bilinear resize of a (..., h, w) array (half-pixel centers)."""
    h, w = image.shape[-2:]

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        i0 = np.floor(src).astype(int)
        t = src - i0
        return np.clip(i0, 0, n_in - 1), np.clip(i0 + 1, 0, n_in - 1), t

    y0, y1, ty = axis_coords(h, out_h)
    x0, x1, tx = axis_coords(w, out_w)
    rows = (image[..., y0, :] * (1 - ty)[:, None] + image[..., y1, :] * ty[:, None])
    return rows[..., :, x0] * (1 - tx) + rows[..., :, x1] * tx


def _resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    iy = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    ix = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return mask[np.ix_(iy, ix)]


def _fit_back(image: np.ndarray, mask: np.ndarray, h: int, w: int,
              anchor: tuple[float, float]):
    """Crop (if larger) or zero-pad (if smaller) back to (h, w)."""
    nh, nw = mask.shape
    if (nh, nw) == (h, w):
        return image, mask
    if nh >= h and nw >= w:
        oy = int(anchor[0] * (nh - h))
        ox = int(anchor[1] * (nw - w))
        return image[:, oy:oy + h, ox:ox + w], mask[oy:oy + h, ox:ox + w]
    out_img = np.zeros(image.shape[:-2] + (h, w))
    out_mask = np.zeros((h, w), dtype=mask.dtype)
    oy = int(anchor[0] * (h - nh))
    ox = int(anchor[1] * (w - nw))
    out_img[:, oy:oy + nh, ox:ox + nw] = image
    out_mask[oy:oy + nh, ox:ox + nw] = mask
    return out_img, out_mask


def _apply_photometric(image: np.ndarray, p: FramePhotometric) -> np.ndarray:
    if p.is_identity():
        return image
    out = image * np.asarray(p.gains)[:, None, None] + np.asarray(p.biases)[:, None, None]
    out = gaussian_blur(out, p.blur_sigma)
    if p.noise_sigma > 0:
        out = out + np.random.default_rng(p.noise_seed).normal(
            0.0, p.noise_sigma, image.shape)
    return np.clip(out, 0.0, 1.0)


def apply_augment(sample: SamplePair, params: AugmentParams) -> SamplePair:
    h, w = sample.gt.shape
    before, after, gt = sample.before, sample.after, sample.gt

    if params.scale != 1.0:
        nh = max(32, int(round(h * params.scale)))
        nw = max(32, int(round(w * params.scale)))
        before = _resize_bilinear(before, nh, nw)
        after = _resize_bilinear(after, nh, nw)
        big_gt = _resize_nearest(gt, nh, nw)
        before, gt = _fit_back(before, big_gt, h, w, params.anchor)
        after, _ = _fit_back(after, big_gt, h, w, params.anchor)

    if params.flip:
        before = before[..., ::-1]
        after = after[..., ::-1]
        gt = gt[..., ::-1]

    before = _apply_photometric(np.ascontiguousarray(before), params.photometric[0])
    after = _apply_photometric(np.ascontiguousarray(after), params.photometric[1])
    return SamplePair(before, after, np.ascontiguousarray(gt), seed=sample.seed)


def augment(sample: SamplePair, seed: int, shared_photometric: bool = False) -> SamplePair:
    rng = np.random.default_rng(seed)
    return apply_augment(sample, sample_params(rng, shared_photometric))
