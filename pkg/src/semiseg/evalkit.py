"""Segmentation metrics (per-class IoU, mIoU) and label-map rendering."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfusionMatrix:
    """C x C pixel counts, rows = ground truth, cols = prediction.

    Instances accumulate independently and merge associatively, so parallel
    evaluators can each own one and sum them afterwards.
    """

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        """Accumulate one prediction/ground-truth pair; gt IGNORE pixels skipped."""
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        C = self.num_classes
        gt = gt.ravel()
        pred = pred.ravel()
        keep = gt != C  # IGNORE encoded one past the last class
        gt, pred = gt[keep], pred[keep]
        if gt.size and (gt.min() < 0 or gt.max() >= C):
            raise ValueError(f"gt class values outside [0, {C - 1}]")
        if pred.size and (pred.min() < 0 or pred.max() >= C):
            raise ValueError(f"pred class values outside [0, {C - 1}]")
        self.counts += np.bincount(gt * C + pred, minlength=C * C).reshape(C, C)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices with different class counts")
        self.counts += other.counts
        return self


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    return cm.add(pred, gt)


@dataclass(frozen=True)
class IouReport:
    per_class: np.ndarray  # NaN for classes absent from both gt and pred
    present: np.ndarray  # bool per class
    miou: float  # NaN when no class is present

    @property
    def defined(self) -> bool:
        return bool(self.present.any())


def iou(cm: ConfusionMatrix, absent_as_zero: bool = False) -> IouReport:
    """Per-class IoU = tp / (tp + fp + fn) and its mean.

    Classes absent from both gt and pred are excluded from the mean by
    default (`absent_as_zero` counts them as 0 instead); an empty matrix
    yields an undefined (NaN) mIoU rather than 0.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - tp
    present = denom > 0
    per_class = np.full(cm.num_classes, np.nan)
    per_class[present] = tp[present] / denom[present]
    if absent_as_zero:
        scores = np.where(present, per_class, 0.0)
        miou = float(scores.mean()) if cm.num_classes else float("nan")
    else:
        miou = float(per_class[present].mean()) if present.any() else float("nan")
    return IouReport(per_class=per_class, present=present, miou=miou)


def default_palette(num_classes: int) -> np.ndarray:
    """Injective class -> RGB palette, shape (C, 3) uint8. Class 0 is dark gray."""
    palette = np.zeros((num_classes, 3), dtype=np.uint8)
    palette[0] = (40, 40, 40)
    for c in range(1, num_classes):
        hue = (c - 1) / max(1, num_classes - 1)
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 1.0)
        palette[c] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


def render(label_map: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Deterministic class-to-color rendering, (H, W) ints -> (H, W, 3) uint8."""
    palette = np.asarray(palette, dtype=np.uint8)
    if label_map.min() < 0 or label_map.max() >= palette.shape[0]:
        raise ValueError(
            f"palette with {palette.shape[0]} entries cannot render classes "
            f"[{int(label_map.min())}, {int(label_map.max())}]"
        )
    return palette[label_map]


def panel(image: np.ndarray, pred: np.ndarray, gt: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Side-by-side (input | prediction | ground truth), width 3x image width."""
    img_u8 = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    return np.concatenate([img_u8, render(pred, palette), render(gt, palette)], axis=1)


def save_png(array: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(array).save(path)


def write_summary(report: IouReport, path: str | Path) -> None:
    """Per-class IoU table plus mIoU as aligned plain text."""
    lines = ["class  iou", "-----  --------"]
    for c, (score, here) in enumerate(zip(report.per_class, report.present)):
        lines.append(f"{c:<5d}  {score:.4f}" if here else f"{c:<5d}  absent")
    lines.append(f"mIoU   {report.miou:.4f}" if report.defined else "mIoU   undefined")
    Path(path).write_text("\n".join(lines) + "\n")
