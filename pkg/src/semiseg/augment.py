"""CutMix masks and the mixing operator shared by inputs and branch outputs.

One mask is sampled per unlabeled pair per step and must be threaded through
both the input mix and the prediction mix, so `MixMask` is immutable after
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

AREA_RATIO_RANGE = (0.25, 0.5)
ASPECT_RANGE = (0.5, 2.0)
NUM_RECTS = 3


@dataclass(frozen=True)
class MixMask:
    """Binary per-pixel mask built as the union of three axis-aligned rectangles."""

    mask: np.ndarray  # (H, W) uint8 in {0, 1}, read-only
    rects: tuple[tuple[int, int, int, int], ...]  # (x, y, w, h) each

    def __post_init__(self):
        self.mask.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _sample_rect(H: int, W: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """One rectangle with integer area ratio guaranteed inside AREA_RATIO_RANGE."""
    ratio = rng.uniform(*AREA_RATIO_RANGE)
    aspect = rng.uniform(*ASPECT_RANGE)
    area = ratio * H * W
    w = int(round(np.sqrt(area * aspect)))
    # keep an integer height range with ratio in bounds feasible
    w = min(max(w, int(np.ceil(AREA_RATIO_RANGE[0] * W))), W)
    h_lo = int(np.ceil(AREA_RATIO_RANGE[0] * H * W / w))
    h_hi = min(int(np.floor(AREA_RATIO_RANGE[1] * H * W / w)), H)
    h = int(np.clip(round(area / w), h_lo, h_hi))
    x = int(rng.integers(0, W - w + 1))
    y = int(rng.integers(0, H - h + 1))
    return (x, y, w, h)


def sample_mask(H: int, W: int, rng: np.random.Generator) -> MixMask:
    """Sample three independent rectangles and OR them into a binary mask.

    Each rectangle's area ratio is uniform in [0.25, 0.5] and its aspect
    ratio uniform in [0.5, 2.0]; rectangles may overlap (union semantics).
    """
    if H < 8 or W < 8:
        raise ValueError(f"mask size must be >= 8x8, got {H}x{W}")
    mask = np.zeros((H, W), dtype=np.uint8)
    rects = []
    for _ in range(NUM_RECTS):
        x, y, w, h = _sample_rect(H, W, rng)
        mask[y : y + h, x : x + w] = 1
        rects.append((x, y, w, h))
    return MixMask(mask=mask, rects=tuple(rects))


def mix(a, b, m):
    """Per-pixel select: (1-m)*a + m*b with m binary, so ints pass through exactly.

    `a` and `b` may be numpy arrays or torch tensors of shape (..., H, W);
    `m` is a MixMask or a binary array broadcastable against them.
    """
    mask = m.mask if isinstance(m, MixMask) else m
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: a {a.shape} vs b {b.shape}")
    mh, mw = mask.shape[-2:]
    if a.shape[-2:] != (mh, mw):
        raise ValueError(f"mask {mask.shape} does not match fields {a.shape}")
    if torch.is_tensor(a):
        if not torch.is_tensor(mask):
            # copy: MixMask arrays are read-only and from_numpy wants writable
            mask = torch.from_numpy(np.array(mask, copy=True))
        return torch.where(mask.to(torch.bool), b, a)
    return np.where(np.asarray(mask, dtype=bool), b, a)
