"""Synthetic bi-temporal scenes, the patch tiler, and dataset files.

Each scene is a textured background shared by both frames plus a set of
mutually disjoint objects (rectangles, ellipses, thick polylines). Every
object either persists, appears, or disappears between the frames; ground
truth marks exactly the pixels whose covering object set differs, which for
disjoint objects equals the XOR of the two occupancy masks. Global
illumination shifts, additive noise, and mild blur are applied to each frame
independently and never touch the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pnm import read_mask, read_rgb_float, write_mask, write_rgb_float
from .tensor import ConfigError

PERSIST, APPEAR, DISAPPEAR = "persist", "appear", "disappear"


@dataclass
class Difficulty:
    objects_min: int = 3
    objects_max: int = 6
    size_min: int = 14
    size_max: int = 30
    p_appear: float = 0.35
    p_disappear: float = 0.35
    illum_gain: float = 0.15     # per-frame gain drawn from [1-g, 1+g]
    illum_bias: float = 0.08     # per-frame bias drawn from [-b, b]
    noise_sigma: float = 0.02    # per-frame noise stddev drawn from [0, s]
    blur_sigma: float = 0.6      # per-frame blur stddev drawn from [0, s]
    lines: bool = True


PRESETS = {
    "easy": Difficulty(size_min=18, size_max=34, illum_gain=0.08, illum_bias=0.04,
                       noise_sigma=0.01, blur_sigma=0.3, lines=False),
    "default": Difficulty(),
    "hard": Difficulty(objects_min=4, objects_max=8, size_min=10, size_max=26,
                       illum_gain=0.25, illum_bias=0.12, noise_sigma=0.04,
                       blur_sigma=1.0),
    "nochange": Difficulty(p_appear=0.0, p_disappear=0.0),
}


@dataclass
class SceneObject:
    kind: str                     # rect | ellipse | line
    params: tuple                 # geometry, kind-specific
    color: tuple[float, float, float]
    status: str                   # persist | appear | disappear


@dataclass
class SamplePair:
    before: np.ndarray            # (3, H, W) float64 in [0, 1]
    after: np.ndarray             # (3, H, W) float64 in [0, 1]
    gt: np.ndarray                # (H, W) uint8 in {0, 1}
    seed: int = -1
    objects: list[SceneObject] = field(default_factory=list)


# -- rasterization ------------------------------------------------------------


def rasterize(obj: SceneObject, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if obj.kind == "rect":
        y0, x0, y1, x1 = obj.params
        return (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)
    if obj.kind == "ellipse":
        cy, cx, ry, rx = obj.params
        return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    if obj.kind == "line":
        points, thickness = obj.params
        half = thickness / 2.0
        mask = np.zeros((h, w), dtype=bool)
        for (ay, ax), (by, bx) in zip(points[:-1], points[1:]):
            dy, dx = by - ay, bx - ax
            length2 = dy * dy + dx * dx
            if length2 == 0:
                continue
            t = np.clip(((ys - ay) * dy + (xs - ax) * dx) / length2, 0.0, 1.0)
            dist2 = (ys - (ay + t * dy)) ** 2 + (xs - (ax + t * dx)) ** 2
            mask |= dist2 <= half * half
        return mask
    raise ConfigError(f"unknown object kind {obj.kind!r}")


def _sample_object(rng: np.random.Generator, h: int, w: int, diff: Difficulty) -> SceneObject:
    p = rng.random()
    status = APPEAR if p < diff.p_appear else (
        DISAPPEAR if p < diff.p_appear + diff.p_disappear else PERSIST)
    color = tuple(rng.uniform(0.0, 1.0, 3))
    kinds = ["rect", "ellipse"] + (["line"] if diff.lines else [])
    kind = kinds[rng.integers(len(kinds))]
    if kind == "rect":
        oh = int(rng.integers(diff.size_min, diff.size_max + 1))
        ow = int(rng.integers(diff.size_min, diff.size_max + 1))
        y0 = int(rng.integers(0, max(1, h - oh)))
        x0 = int(rng.integers(0, max(1, w - ow)))
        params = (y0, x0, y0 + oh, x0 + ow)
    elif kind == "ellipse":
        ry = int(rng.integers(diff.size_min, diff.size_max + 1)) / 2.0
        rx = int(rng.integers(diff.size_min, diff.size_max + 1)) / 2.0
        cy = float(rng.uniform(ry, h - ry))
        cx = float(rng.uniform(rx, w - rx))
        params = (cy, cx, ry, rx)
    else:
        n_pts = int(rng.integers(2, 4))
        points = [(float(rng.uniform(0, h)), float(rng.uniform(0, w)))
                  for _ in range(n_pts + 1)]
        thickness = float(rng.uniform(3.0, 6.0))
        params = (points, thickness)
    return SceneObject(kind, params, color, status)


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int = 8) -> np.ndarray:
    """Bilinear interpolation of a coarse random grid, one value per pixel."""
    grid = rng.uniform(0.0, 1.0, (cells + 1, cells + 1))
    ys = np.linspace(0.0, cells, h)
    xs = np.linspace(0.0, cells, w)
    iy = np.minimum(ys.astype(int), cells - 1)
    ix = np.minimum(xs.astype(int), cells - 1)
    ty = (ys - iy)[:, None]
    tx = (xs - ix)[None, :]
    tl = grid[np.ix_(iy, ix)]
    tr = grid[np.ix_(iy, ix + 1)]
    bl = grid[np.ix_(iy + 1, ix)]
    br = grid[np.ix_(iy + 1, ix + 1)]
    return (tl * (1 - ty) * (1 - tx) + tr * (1 - ty) * tx
            + bl * ty * (1 - tx) + br * ty * tx)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the trailing two axes (reflect padding)."""
    if sigma <= 0:
        return image
    radius = max(1, int(np.ceil(2.0 * sigma)))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()

    def along(data, axis):
        padded = np.take(data, _reflect_indices(data.shape[axis], radius), axis=axis)
        out = np.zeros_like(data)
        for i, coef in enumerate(kernel):
            sl = [slice(None)] * data.ndim
            sl[axis] = slice(i, i + data.shape[axis])
            out += coef * padded[tuple(sl)]
        return out

    return along(along(image, -1), -2)


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    idx = np.arange(-radius, n + radius)
    idx = np.abs(idx)
    idx = np.where(idx >= n, 2 * (n - 1) - idx, idx)
    return idx


def generate_pair(seed: int, h: int, w: int,
                  difficulty: str | Difficulty = "default") -> SamplePair:
    """Deterministically build one bi-temporal sample from a seed."""
    if h % 32 or w % 32:
        raise ConfigError(f"scene size {h}x{w} must be divisible by 32")
    diff = PRESETS[difficulty] if isinstance(difficulty, str) else difficulty
    rng = np.random.default_rng(seed)

    background = np.empty((3, h, w))
    tone = _smooth_field(rng, h, w) * 0.5 + 0.2
    for c in range(3):
        background[c] = np.clip(tone + rng.uniform(-0.08, 0.08), 0.0, 1.0)
    background += rng.normal(0.0, 0.015, (3, h, w))
    background = np.clip(background, 0.0, 1.0)
    bg_mean = float(background.mean())

    objects: list[SceneObject] = []
    masks: list[np.ndarray] = []
    occupied = np.zeros((h, w), dtype=bool)
    n_objects = int(rng.integers(diff.objects_min, diff.objects_max + 1))
    for _ in range(n_objects):
        for _attempt in range(20):
            obj = _sample_object(rng, h, w, diff)
            if abs(float(np.mean(obj.color)) - bg_mean) < 0.18:
                continue
            mask = rasterize(obj, h, w)
            if not mask.any() or (mask & occupied).any():
                continue
            objects.append(obj)
            masks.append(mask)
            occupied |= mask
            break

    def compose(present) -> np.ndarray:
        frame = background.copy()
        for obj, mask in zip(objects, masks):
            if obj.status in present:
                frame[:, mask] = np.asarray(obj.color)[:, None]
        return frame

    before = compose((PERSIST, DISAPPEAR))
    after = compose((PERSIST, APPEAR))

    gt = np.zeros((h, w), dtype=np.uint8)
    for obj, mask in zip(objects, masks):
        if obj.status != PERSIST:
            gt[mask] = 1

    def weather(frame: np.ndarray) -> np.ndarray:
        gains = rng.uniform(1.0 - diff.illum_gain, 1.0 + diff.illum_gain, 3)
        biases = rng.uniform(-diff.illum_bias, diff.illum_bias, 3)
        out = frame * gains[:, None, None] + biases[:, None, None]
        sigma = rng.uniform(0.0, diff.blur_sigma)
        out = gaussian_blur(out, sigma)
        out += rng.normal(0.0, rng.uniform(0.0, diff.noise_sigma), frame.shape)
        return np.clip(out, 0.0, 1.0)

    return SamplePair(weather(before), weather(after), gt, seed=seed, objects=objects)


def occupancy(objects: list[SceneObject], h: int, w: int, present) -> np.ndarray:
    """Union occupancy mask of the objects whose status is in ``present``."""
    mask = np.zeros((h, w), dtype=bool)
    for obj in objects:
        if obj.status in present:
            mask |= rasterize(obj, h, w)
    return mask


# -- tiling and manifests -------------------------------------------------------


@dataclass
class ManifestRecord:
    before_path: str
    after_path: str
    gt_path: str
    origin: tuple[int, int]


@dataclass
class DatasetManifest:
    split: str
    patch_size: int
    source_size: tuple[int, int]
    records: list[ManifestRecord] = field(default_factory=list)


def patch_origins(h: int, w: int, patch: int) -> list[tuple[int, int]]:
    """Row-major non-overlapping origins exactly tiling an h-by-w source."""
    if h % patch or w % patch:
        raise ConfigError(f"source {h}x{w} not divisible by patch size {patch}")
    return [(y, x) for y in range(0, h, patch) for x in range(0, w, patch)]


def patch_count(h: int, w: int, patch: int, n_pairs: int) -> int:
    return len(patch_origins(h, w, patch)) * n_pairs


def crop_patch(pair: SamplePair, y: int, x: int, patch: int) -> SamplePair:
    return SamplePair(pair.before[:, y:y + patch, x:x + patch].copy(),
                      pair.after[:, y:y + patch, x:x + patch].copy(),
                      pair.gt[y:y + patch, x:x + patch].copy(),
                      seed=pair.seed)


def tile_patches(pairs: list[SamplePair], patch: int, out_dir: str | Path,
                 split: str) -> DatasetManifest:
    """Cut every source pair into non-overlapping patches and write them out."""
    out_dir = Path(out_dir)
    split_dir = out_dir / split
    split_dir.mkdir(parents=True, exist_ok=True)
    h, w = pairs[0].gt.shape
    manifest = DatasetManifest(split=split, patch_size=patch, source_size=(h, w))
    for i, pair in enumerate(pairs):
        if pair.gt.shape != (h, w):
            raise ConfigError(f"pair {i} has size {pair.gt.shape}, expected {(h, w)}")
        for y, x in patch_origins(h, w, patch):
            stem = f"pair{i:04d}_y{y:04d}_x{x:04d}"
            cut = crop_patch(pair, y, x, patch)
            rel = {
                "before": f"{split}/{stem}_before.ppm",
                "after": f"{split}/{stem}_after.ppm",
                "gt": f"{split}/{stem}_gt.pgm",
            }
            write_rgb_float(cut.before, out_dir / rel["before"])
            write_rgb_float(cut.after, out_dir / rel["after"])
            write_mask(cut.gt, out_dir / rel["gt"])
            manifest.records.append(ManifestRecord(rel["before"], rel["after"],
                                                   rel["gt"], (y, x)))
    save_manifest(manifest, out_dir / f"{split}.manifest")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [
        f"# split={manifest.split}",
        f"# patch={manifest.patch_size}",
        f"# source={manifest.source_size[0]}x{manifest.source_size[1]}",
    ]
    for r in manifest.records:
        lines.append(f"{r.before_path}\t{r.after_path}\t{r.gt_path}\t"
                     f"{r.origin[0]}\t{r.origin[1]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    meta = {"split": "", "patch": "0", "source": "0x0"}
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        before, after, gt, y, x = line.split("\t")
        records.append(ManifestRecord(before, after, gt, (int(y), int(x))))
    sh, sw = (int(v) for v in meta["source"].split("x"))
    return DatasetManifest(meta["split"], int(meta["patch"]), (sh, sw), records)


def load_patch(data_dir: str | Path, record: ManifestRecord) -> SamplePair:
    data_dir = Path(data_dir)
    for rel in (record.before_path, record.after_path, record.gt_path):
        if not (data_dir / rel).exists():
            raise FileNotFoundError(f"dataset file not found: {data_dir / rel}")
    return SamplePair(read_rgb_float(data_dir / record.before_path),
                      read_rgb_float(data_dir / record.after_path),
                      read_mask(data_dir / record.gt_path))


def generate_dataset(out_dir: str | Path, seed: int, sources_per_split: dict[str, int],
                     source_size: int = 128, patch: int = 64,
                     difficulty: str | Difficulty = "default") -> dict[str, DatasetManifest]:
    """Generate disjoint source pairs per split and tile them into patches.

    Split seeds are spaced far apart so no source pair can appear twice.
    """
    manifests = {}
    for split_idx, (split, count) in enumerate(sorted(sources_per_split.items())):
        base = seed + 1_000_000 * (split_idx + 1)
        pairs = [generate_pair(base + i, source_size, source_size, difficulty)
                 for i in range(count)]
        manifests[split] = tile_patches(pairs, patch, out_dir, split)
    return manifests
