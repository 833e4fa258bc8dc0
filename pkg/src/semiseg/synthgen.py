"""Deterministic synthetic segmentation scenes and labeled/unlabeled splits.

Scenes are colored shapes (disk, rectangle, triangle) on a dark background.
Generation is a pure function of (spec, index): the same spec and index
always produce bit-identical arrays, so workers can generate concurrently
and no images ever need to be stored.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

ALLOWED_FRACTIONS = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16))

# sub-pixel grid used to estimate shape coverage; 4x4 gives ~1px linear
# blending at boundaries so edge pixels are genuinely ambiguous
_SUPERSAMPLE = 4


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the synthetic scene distribution."""

    image_size: int = 64
    num_classes: int = 4
    shapes_per_image: tuple[int, int] = (2, 4)
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        lo, hi = self.shapes_per_image
        if lo < 0 or hi < lo:
            raise ValueError(f"bad shapes_per_image range {self.shapes_per_image}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass(frozen=True)
class PartitionProtocol:
    """Labeled/unlabeled split: labeled count = floor(fraction * total)."""

    labeled_fraction: Fraction
    total_images: int
    seed: int = 0

    def __post_init__(self):
        frac = Fraction(self.labeled_fraction)
        if frac not in ALLOWED_FRACTIONS:
            raise ValueError(
                f"labeled_fraction must be one of {[str(f) for f in ALLOWED_FRACTIONS]}, "
                f"got {frac}"
            )
        object.__setattr__(self, "labeled_fraction", frac)


def class_colors(num_classes: int) -> np.ndarray:
    """Fixed base color per class, shape (C, 3) in [0, 1]. Class 0 is dark gray."""
    colors = np.zeros((num_classes, 3), dtype=np.float64)
    colors[0] = 0.15
    for c in range(1, num_classes):
        hue = (c - 1) / max(1, num_classes - 1)
        colors[c] = colorsys.hsv_to_rgb(hue, 0.75, 0.9)
    return colors


def _subgrid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Sub-pixel sample coordinates, shape (size*S, size*S) each."""
    s = _SUPERSAMPLE
    coords = (np.arange(size * s) + 0.5) / s
    return np.meshgrid(coords, coords, indexing="ij")


def _shape_inside(kind: int, params: dict, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    if kind == 0:  # disk
        return (yy - params["cy"]) ** 2 + (xx - params["cx"]) ** 2 <= params["r"] ** 2
    if kind == 1:  # axis-aligned rectangle
        return (
            (np.abs(yy - params["cy"]) <= params["hh"])
            & (np.abs(xx - params["cx"]) <= params["hw"])
        )
    # triangle: inside iff on the same side of all three edges
    pts = params["pts"]
    inside = np.ones_like(yy, dtype=bool)
    for i in range(3):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross * params["orient"] >= 0
    return inside


def _sample_shape(rng: np.random.Generator, size: int) -> tuple[int, dict]:
    kind = int(rng.integers(0, 3))
    scale = size * rng.uniform(0.12, 0.30)
    cy = rng.uniform(0.15 * size, 0.85 * size)
    cx = rng.uniform(0.15 * size, 0.85 * size)
    if kind == 0:
        return kind, {"cy": cy, "cx": cx, "r": scale}
    if kind == 1:
        aspect = rng.uniform(0.5, 2.0)
        return kind, {"cy": cy, "cx": cx, "hh": scale, "hw": scale * aspect}
    angles = rng.uniform(0, 2 * np.pi, size=3)
    radii = scale * rng.uniform(0.7, 1.3, size=3)
    pts = [(cy + r * np.sin(a), cx + r * np.cos(a)) for a, r in zip(angles, radii)]
    y0, x0 = pts[0]
    y1, x1 = pts[1]
    y2, x2 = pts[2]
    orient = np.sign((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)) or 1.0
    return kind, {"pts": pts, "orient": orient}


def generate_scene(spec: SceneSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Render scene `index`: float32 image (3, H, W) in [0, 1] and int64 label map (H, W).

    Shapes are drawn in order; later shapes occlude earlier ones. The label
    map assigns a pixel to a shape iff the pixel center is inside it, while
    the image blends shape colors by sub-pixel coverage, so boundary pixels
    carry mixed colors but hard labels.
    """
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    s = _SUPERSAMPLE

    colors = class_colors(spec.num_classes)
    brightness = rng.uniform(-0.1, 0.1)

    yy, xx = _subgrid(size)
    centers = np.arange(size) + 0.5
    cyy, cxx = np.meshgrid(centers, centers, indexing="ij")
    img_hi = np.empty((size * s, size * s, 3), dtype=np.float64)
    img_hi[...] = colors[0] + brightness
    label = np.zeros((size, size), dtype=np.int64)

    lo, hi = spec.shapes_per_image
    n_shapes = int(rng.integers(lo, hi + 1))
    for k in range(n_shapes):
        if k == 0:
            # cycle the first shape's class with the scene index so every
            # foreground class is guaranteed to appear across a dataset
            cls = 1 + index % (spec.num_classes - 1)
        else:
            cls = int(rng.integers(1, spec.num_classes))
        kind, params = _sample_shape(rng, size)
        inside = _shape_inside(kind, params, yy, xx)
        img_hi[inside] = colors[cls] + brightness
        label[_shape_inside(kind, params, cyy, cxx)] = cls

    # average sub-samples -> coverage-weighted colors at shape boundaries
    img = img_hi.reshape(size, s, size, s, 3).mean(axis=(1, 3))
    img = img.transpose(2, 0, 1)
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


def split_partition(protocol: PartitionProtocol) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive labeled/unlabeled index split, deterministic under seed."""
    if protocol.total_images < 16:
        raise ValueError(f"total_images must be >= 16, got {protocol.total_images}")
    n_labeled = int(protocol.labeled_fraction * protocol.total_images)
    rng = np.random.default_rng(protocol.seed)
    perm = rng.permutation(protocol.total_images)
    labeled = np.sort(perm[:n_labeled])
    unlabeled = np.sort(perm[n_labeled:])
    return labeled, unlabeled


class SceneCache:
    """Memoizes generated scenes; generation stays pure so this is transparent."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        if index not in self._cache:
            self._cache[index] = generate_scene(self.spec, index)
        return self._cache[index]


def dump_dataset(
    spec: SceneSpec,
    indices: list[int],
    labeled_flags: list[bool],
    out_dir: str | Path,
) -> Path:
    """Write one PNG per scene plus a single-channel label raster and a manifest.

    Returns the manifest path. Lines are `index<TAB>image<TAB>label<TAB>flag`.
    """
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.txt"
    with manifest.open("w") as fh:
        for index, flag in zip(indices, labeled_flags):
            img, label = generate_scene(spec, index)
            img_u8 = np.round(img * 255).astype(np.uint8).transpose(1, 2, 0)
            img_path = out / "images" / f"scene_{index:05d}.png"
            lab_path = out / "labels" / f"scene_{index:05d}.png"
            Image.fromarray(img_u8, mode="RGB").save(img_path)
            Image.fromarray(label.astype(np.uint8), mode="L").save(lab_path)
            fh.write(
                f"{index}\t{img_path.relative_to(out)}\t{lab_path.relative_to(out)}\t"
                f"{'labeled' if flag else 'unlabeled'}\n"
            )
    return manifest
