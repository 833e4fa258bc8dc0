"""Loss terms: pixel cross-entropy, weighted pseudo-label CE, Monte-Carlo
data-uncertainty loss, and the LogSumExp energy loss, plus their weighted
combination.

All functions take batched tensors: logits (B, C, H, W), labels (B, H, W)
with IGNORE encoded as class value C, variance and weights (B, H, W).
IGNORE pixels contribute nothing to any loss and are excluded from every
mean, so perturbing them never changes a value or a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class LossConfig:
    """Loss combination weights and Monte-Carlo settings.

    `mc_samples` is the number of noise draws per uncertainty-loss call.
    `energy_sign` +1 minimizes the pixel LogSumExp, -1 maximizes it.
    """

    gamma_int: float = 1.0
    gamma_uni: float = 1.0
    gamma_ale: float = 1.0
    gamma_e: float = 1.0
    mc_samples: int = 10
    energy_sign: int = 1
    ale_confidence_weighting: bool = False

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if self.energy_sign not in (1, -1):
            raise ValueError(f"energy_sign must be +1 or -1, got {self.energy_sign}")


@dataclass
class LossReport:
    """All loss components of one step, as differentiable scalars."""

    sup: torch.Tensor
    inter: torch.Tensor
    union: torch.Tensor
    ale_c: torch.Tensor
    ale_p: torch.Tensor
    energy_c: torch.Tensor
    energy_p: torch.Tensor
    total: torch.Tensor = field(init=False)
    config: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        for name in ("sup", "inter", "union", "ale_c", "ale_p", "energy_c", "energy_p"):
            value = getattr(self, name)
            if not torch.isfinite(value):
                raise FloatingPointError(
                    f"loss component '{name}' is not finite: {float(value)!r}"
                )
        cfg = self.config
        self.total = (
            self.sup
            + cfg.gamma_int * self.inter
            + cfg.gamma_uni * self.union
            + cfg.gamma_ale * (self.ale_c + self.ale_p)
            + cfg.gamma_e * (self.energy_c + self.energy_p)
        )

    def scalars(self) -> dict[str, float]:
        return {
            name: float(getattr(self, name).detach())
            for name in ("sup", "inter", "union", "ale_c", "ale_p",
                         "energy_c", "energy_p", "total")
        }


def _check_labels(logits: torch.Tensor, labels: torch.Tensor) -> int:
    num_classes = logits.shape[1]
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError(f"labels {tuple(labels.shape)} do not match logits "
                         f"{tuple(logits.shape)}")
    if labels.min() < 0 or labels.max() > num_classes:
        raise ValueError(f"label values must lie in [0, {num_classes}] "
                         f"(= IGNORE), got [{int(labels.min())}, {int(labels.max())}]")
    return num_classes


def ce_pixelwise(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-pixel softmax cross-entropy (B, H, W); IGNORE pixels get exactly 0."""
    num_classes = _check_labels(logits, labels)
    valid = labels < num_classes
    safe = torch.where(valid, labels, torch.zeros_like(labels))
    logp = F.log_softmax(logits, dim=1)
    ce = -logp.gather(1, safe.unsqueeze(1)).squeeze(1)
    return torch.where(valid, ce, torch.zeros_like(ce))


def valid_mask(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    return labels < num_classes


def weighted_pseudo_ce(
    logits: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor
) -> tuple[torch.Tensor, int]:
    """Confidence-weighted mean CE over valid pixels.

    Returns (loss, n_valid); an all-IGNORE label map yields (0, 0) so callers
    can tell "no valid pixels" from a genuinely zero loss.
    """
    num_classes = _check_labels(logits, labels)
    if weights.shape != labels.shape:
        raise ValueError(f"weights {tuple(weights.shape)} do not match labels "
                         f"{tuple(labels.shape)}")
    if weights.min() <= 0 or weights.max() > 1:
        raise ValueError("weights must lie in (0, 1]")
    valid = valid_mask(labels, num_classes)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return logits.sum() * 0.0, 0
    ce = ce_pixelwise(logits, labels)
    return (weights * ce)[valid].sum() / n_valid, n_valid


def aleatoric_loss(
    logits: torch.Tensor,
    variance: torch.Tensor,
    labels: torch.Tensor,
    mc_samples: int,
    rng: np.random.Generator,
    pixel_weights: torch.Tensor | None = None,
) -> torch.Tensor:
    """Monte-Carlo data-uncertainty loss.

    For each sample t, logits are distorted by Gaussian noise with per-pixel
    std sqrt(variance) shared across classes (one standard-normal draw of
    shape (T, B, C, H, W) scaled by sqrt(variance), so gradients flow into
    the variance head). With per-pixel undistorted CE l_u and
    diff_t = l_u - CE(logits + eps_t):

        term_t = (-ELU(diff_t)) * l_u + l_u + (exp(variance) - 1)

    and the loss is the mean of term_t over valid pixels, then over T.
    """
    if mc_samples < 1:
        raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")
    num_classes = _check_labels(logits, labels)
    if variance.shape != labels.shape:
        raise ValueError(f"variance {tuple(variance.shape)} does not match labels "
                         f"{tuple(labels.shape)}")
    if variance.min() <= 0:
        raise ValueError("variance must be strictly positive")

    valid = valid_mask(labels, num_classes)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return (logits.sum() + variance.sum()) * 0.0

    l_u = ce_pixelwise(logits, labels)
    std = torch.sqrt(variance).unsqueeze(1)  # (B, 1, H, W), broadcast over classes
    noise = rng.standard_normal((mc_samples, *logits.shape))
    noise = torch.from_numpy(noise).to(dtype=logits.dtype)
    penalty = torch.exp(variance) - 1.0

    if pixel_weights is None:
        pixel_weights = torch.ones_like(l_u)
    total = logits.new_zeros(())
    for t in range(mc_samples):
        distorted = logits + noise[t] * std
        diff = l_u - ce_pixelwise(distorted, labels)
        term = (-F.elu(diff)) * l_u + l_u + penalty
        total = total + (pixel_weights * term)[valid].sum() / n_valid
    return total / mc_samples


def pixel_energy(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel energy -LogSumExp over classes (B, H, W); low on-distribution."""
    return -torch.logsumexp(logits, dim=1)


def energy_loss(
    logits: torch.Tensor,
    valid: torch.Tensor | None = None,
    sign: int = 1,
) -> torch.Tensor:
    """sign * mean per-pixel LogSumExp of the logits over valid pixels."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    lse = torch.logsumexp(logits, dim=1)
    if valid is not None:
        if valid.shape != lse.shape:
            raise ValueError(f"valid mask {tuple(valid.shape)} does not match "
                             f"pixels {tuple(lse.shape)}")
        if not bool(valid.any()):
            return logits.sum() * 0.0
        lse = lse[valid]
    return sign * lse.mean()


def combine(
    sup: torch.Tensor,
    inter: torch.Tensor,
    union: torch.Tensor,
    ale_c: torch.Tensor,
    ale_p: torch.Tensor,
    energy_c: torch.Tensor,
    energy_p: torch.Tensor,
    config: LossConfig,
) -> LossReport:
    """Weighted total of all parts; raises naming the part if one is not finite."""
    return LossReport(
        sup=sup, inter=inter, union=union, ale_c=ale_c, ale_p=ale_p,
        energy_c=energy_c, energy_p=energy_p, config=config,
    )
