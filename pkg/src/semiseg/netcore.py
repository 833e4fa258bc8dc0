"""Toy encoder-decoder segmentation branch with a per-pixel variance head.

The two training branches (conservative / progressive) share this structure
and differ only in their initialization seed. Every op in the forward pass
is smooth (SiLU activations, softplus variance transform) so analytic
gradients can be verified against finite differences.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANCE_FLOOR = 1e-6


class BranchOutput(NamedTuple):
    logits: torch.Tensor  # (B, C, H, W)
    variance: torch.Tensor  # (B, H, W), always >= VARIANCE_FLOOR


class SegBranch(nn.Module):
    """3-stage strided encoder, 3-stage decoder with skip connections,
    and two 1x1 heads (class logits, raw variance) on the final feature map."""

    def __init__(self, num_classes: int, width: int = 16, in_channels: int = 3):
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        if width < 8:
            raise ValueError(f"width must be >= 8, got {width}")
        super().__init__()
        self.num_classes = num_classes
        self.width = width
        self.in_channels = in_channels
        w = width

        def block(c_in, c_out, stride=1):
            # non-affine normalization keeps trunk activations bounded, so the
            # energy loss (an unbounded linear objective in logit scale) cannot
            # feed back multiplicatively through learnable scales; only the
            # heads can drift the logits, and only linearly
            return nn.Sequential(
                nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
                nn.GroupNorm(1, c_out, affine=False),
                nn.SiLU(),
            )

        self.enc1 = block(in_channels, w, stride=2)
        self.enc2 = block(w, 2 * w, stride=2)
        self.enc3 = block(2 * w, 4 * w, stride=2)
        self.dec3 = block(4 * w + 2 * w, 2 * w)
        self.dec2 = block(2 * w + w, w)
        self.dec1 = block(w + in_channels, w)
        self.logit_head = nn.Conv2d(w, num_classes, 1)
        self.var_head = nn.Conv2d(w, 1, 1)

    def forward(self, x: torch.Tensor) -> BranchOutput:
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
        H, W = x.shape[-2:]
        if H % 8 or W % 8:
            raise ValueError(f"spatial size must be divisible by 8, got {H}x{W}")
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        up = F.interpolate
        d3 = self.dec3(torch.cat([up(e3, scale_factor=2), e2], dim=1))
        d2 = self.dec2(torch.cat([up(d3, scale_factor=2), e1], dim=1))
        d1 = self.dec1(torch.cat([up(d2, scale_factor=2), x], dim=1))
        logits = self.logit_head(d1)
        variance = F.softplus(self.var_head(d1)).squeeze(1) + VARIANCE_FLOOR
        return BranchOutput(logits=logits, variance=variance)


def init_branch(
    seed: int, num_classes: int, width: int = 16, in_channels: int = 3
) -> SegBranch:
    """Build a branch with fan-in-scaled uniform weights drawn from `seed`.

    Parameters are filled in named order from a numpy generator, so two
    calls with the same seed are bit-identical and independent of torch's
    global RNG state.
    """
    branch = SegBranch(num_classes, width=width, in_channels=in_channels)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, module in branch.named_modules():
            if not isinstance(module, nn.Conv2d):
                continue
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / np.sqrt(fan_in)
            for p in (module.weight, module.bias):
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
    return branch


def predict_hard(out: BranchOutput) -> np.ndarray:
    """Per-pixel argmax class map (B, H, W); ties break to the lowest class index."""
    logits = out.logits.detach().cpu().numpy()
    return np.argmax(logits, axis=1).astype(np.int64)
