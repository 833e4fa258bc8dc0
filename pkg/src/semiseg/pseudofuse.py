"""Intersection/union pseudo-label fusion from the two branches' mixed predictions.

At pixels where the branches agree, both pseudo-labels take the shared class.
At disagreement pixels the intersection label is IGNORE while the union label
picks the class with the higher disagreement indicator (the class the branches
confuse more), so the union map supervises every pixel. Per-pixel confidence
weights come from the branches' max softmax probabilities.

IGNORE is encoded as class value C (one past the last class); losses skip it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


def ignore_value(num_classes: int) -> int:
    return num_classes


@dataclass(frozen=True)
class PseudoBundle:
    y_inter: np.ndarray  # (H, W) int64, IGNORE at disagreement pixels
    y_union: np.ndarray  # (H, W) int64, defined everywhere
    w_u: np.ndarray  # (H, W) float, per-pixel confidence weight in (0, 1]
    chose_c: np.ndarray  # (H, W) bool, disagreement resolved to conservative class


def _check_maps(Y_cw: np.ndarray, Y_pw: np.ndarray, num_classes: int) -> None:
    if Y_cw.shape != Y_pw.shape:
        raise ValueError(f"shape mismatch: {Y_cw.shape} vs {Y_pw.shape}")
    for name, m in (("Y_cw", Y_cw), ("Y_pw", Y_pw)):
        if m.min() < 0 or m.max() >= num_classes:
            raise ValueError(f"{name} has class values outside [0, {num_classes - 1}]")


def agreement_matrix(Y_cw: np.ndarray, Y_pw: np.ndarray, num_classes: int) -> np.ndarray:
    """M[j, k] = number of pixels where the conservative branch says j and the
    progressive branch says k."""
    _check_maps(Y_cw, Y_pw, num_classes)
    joint = Y_cw.astype(np.int64).ravel() * num_classes + Y_pw.astype(np.int64).ravel()
    counts = np.bincount(joint, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def disagreement_indicator(M: np.ndarray) -> np.ndarray:
    """Per-class indicator I_j = 2 - M_jj/row_j - M_jj/col_j, with 0/0 -> 0.

    A class the branches never confuse gets 0; a class that is entirely
    absent (zero row or column) gets the maximal value 2.
    """
    M = np.asarray(M, dtype=np.float64)
    diag = np.diag(M)
    row = M.sum(axis=1)
    col = M.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        row_share = np.where(row > 0, diag / np.where(row > 0, row, 1.0), 0.0)
        col_share = np.where(col > 0, diag / np.where(col > 0, col, 1.0), 0.0)
    return 2.0 - row_share - col_share


def fuse(
    Y_cw: np.ndarray,
    Y_pw: np.ndarray,
    conf_c: np.ndarray,
    conf_p: np.ndarray,
    num_classes: int,
) -> PseudoBundle:
    """Build intersection/union pseudo-labels and confidence weights for one
    image pair.

    Disagreement between class j (conservative) and k (progressive) resolves
    to j when I_j >= I_k, else k; the winning branch's max-softmax confidence
    becomes the pixel weight. Indicators come from this pair's full-image
    agreement matrix.
    """
    _check_maps(Y_cw, Y_pw, num_classes)
    for name, c in (("conf_c", conf_c), ("conf_p", conf_p)):
        if c.shape != Y_cw.shape:
            raise ValueError(f"{name} shape {c.shape} does not match maps {Y_cw.shape}")
        if c.min() <= 0 or c.max() > 1:
            raise ValueError(f"{name} must lie in (0, 1]")

    M = agreement_matrix(Y_cw, Y_pw, num_classes)
    I = disagreement_indicator(M)

    agree = Y_cw == Y_pw
    take_c = I[Y_cw] >= I[Y_pw]  # ties resolve to the conservative class

    y_union = np.where(agree | take_c, Y_cw, Y_pw).astype(np.int64)
    y_inter = np.where(agree, Y_cw, ignore_value(num_classes)).astype(np.int64)
    w_u = np.where(agree, 0.5 * (conf_c + conf_p), np.where(take_c, conf_c, conf_p))
    chose_c = ~agree & take_c
    return PseudoBundle(y_inter=y_inter, y_union=y_union, w_u=w_u, chose_c=chose_c)


def dump_debug(
    bundle: PseudoBundle, M: np.ndarray, out_dir: str | Path, tag: str, palette=None
) -> None:
    """Write fused label rasters, the weight map and the agreement matrix grid."""
    from PIL import Image

    from .evalkit import default_palette, render

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    C = M.shape[0]
    if palette is None:
        palette = default_palette(C + 1)  # one extra color for IGNORE
    Image.fromarray(render(bundle.y_inter, palette)).save(out / f"{tag}_inter.png")
    Image.fromarray(render(bundle.y_union, palette)).save(out / f"{tag}_union.png")
    w_img = np.round(bundle.w_u * 255).astype(np.uint8)
    Image.fromarray(w_img, mode="L").save(out / f"{tag}_weights.png")
    with (out / f"{tag}_agreement.txt").open("w") as fh:
        width = max(5, len(str(int(M.max())))) + 1
        header = " " * 6 + "".join(f"p={k:<{width - 2}}" for k in range(C))
        fh.write(header.rstrip() + "\n")
        for j in range(C):
            row = "".join(f"{int(M[j, k]):>{width}}" for k in range(C))
            fh.write(f"c={j:<4}{row}\n")
