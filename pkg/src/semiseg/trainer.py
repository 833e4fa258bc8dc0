"""Dual-branch training: one optimizer step couples the supervised CE,
the fused pseudo-label CE terms, the Monte-Carlo uncertainty losses and
the energy losses, then updates both branches from the same total.

All randomness flows through explicitly seeded numpy generators (data
order, masks, MC noise, branch init), so runs with equal seeds are
bit-identical and checkpoints resume exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import augment, checkpoint, pseudofuse
from .evalkit import ConfusionMatrix, default_palette, iou, panel, save_png, write_summary
from .losses import (
    LossConfig,
    LossReport,
    aleatoric_loss,
    ce_pixelwise,
    combine,
    energy_loss,
    weighted_pseudo_ce,
)
from .netcore import init_branch, predict_hard
from .synthgen import PartitionProtocol, SceneCache, SceneSpec, split_partition


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float) -> float:
    """base_lr * (1 - iter/max_iter)^power; base_lr at 0, exactly 0 at max_iter."""
    return base_lr * (1.0 - iteration / max_iter) ** power


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_iter: int = 500
    poly_power: float = 0.9
    batch_labeled: int = 8
    batch_unlabeled: int = 2  # number of unlabeled image pairs per step
    unsup_warmup_iters: int = 0  # supervised-only steps before pseudo-labels engage
    width: int = 16
    eval_every: int = 50
    divergence_limit: float = 1e4
    loss: LossConfig = field(default_factory=LossConfig)
    seed_branch_c: int = 11
    seed_branch_p: int = 22
    seed_data: int = 33
    seed_noise: int = 44


@dataclass
class DataBundle:
    """Scene source plus labeled/unlabeled/validation index sets."""

    spec: SceneSpec
    labeled: np.ndarray
    unlabeled: np.ndarray
    val: np.ndarray
    cache: SceneCache = None

    def __post_init__(self):
        if self.cache is None:
            self.cache = SceneCache(self.spec)
        if len(self.labeled) == 0:
            raise ValueError("labeled index set is empty")

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = zip(*(self.cache(int(i)) for i in indices))
        return (
            torch.from_numpy(np.stack(images)),
            torch.from_numpy(np.stack(labels)),
        )


def build_data(
    spec: SceneSpec,
    total_images: int,
    val_images: int = 16,
    partition: PartitionProtocol | None = None,
) -> DataBundle:
    """Index layout: train scenes are 0..total-1, validation scenes follow.

    Without a partition every train scene is labeled (supervised baseline).
    """
    if partition is None:
        labeled = np.arange(total_images)
        unlabeled = np.arange(0)
    else:
        if partition.total_images != total_images:
            raise ValueError("partition.total_images disagrees with total_images")
        labeled, unlabeled = split_partition(partition)
    val = np.arange(total_images, total_images + val_images)
    return DataBundle(spec=spec, labeled=labeled, unlabeled=unlabeled, val=val)


class Trainer:
    """Owns the two branches, their shared optimizer and all RNG streams."""

    def __init__(self, config: TrainConfig, data: DataBundle, out_dir: str | Path | None = None,
                 debug_fuse: bool = False):
        self.config = config
        self.data = data
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.debug_fuse = debug_fuse
        C = data.spec.num_classes
        self.num_classes = C
        self.branch_c = init_branch(config.seed_branch_c, C, width=config.width)
        self.branch_p = init_branch(config.seed_branch_p, C, width=config.width)
        self.optimizer = torch.optim.SGD(
            [
                {"params": list(self.branch_c.parameters())},
                {"params": list(self.branch_p.parameters())},
            ],
            lr=config.base_lr,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
        )
        self.data_rng = np.random.default_rng(config.seed_data)
        self.mask_rng = np.random.default_rng([config.seed_data, 1])
        self.noise_rng = np.random.default_rng(config.seed_noise)
        self.iteration = 0
        self.best_miou = float("-inf")
        self.history: list[dict] = []
        self.loss_log: list[dict] = []
        self._last_fuse = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------ step

    def train_step(
        self,
        labeled: tuple[torch.Tensor, torch.Tensor],
        unlabeled: tuple[torch.Tensor, torch.Tensor] | None,
    ) -> LossReport:
        """One optimizer step; `unlabeled` is a pair of image batches or None."""
        cfg = self.config
        lc = cfg.loss
        zero = torch.zeros(())
        # warm-up steps are pure supervised CE: no pseudo-labels arrive (run()
        # stops drawing them) and the energy term stays off until it ends
        in_warmup = self.iteration < cfg.unsup_warmup_iters

        x_l, y_l = labeled
        if unlabeled is not None:
            x1, x2 = unlabeled
            B, _, H, W = x1.shape
            # one mask per pair, threaded through input AND output mixing
            masks = [augment.sample_mask(H, W, self.mask_rng) for _ in range(B)]
            x_s = torch.stack([augment.mix(x1[b], x2[b], masks[b]) for b in range(B)])

            # weak path: pseudo-label targets are plain data, never in the graph
            with torch.no_grad():
                out_c1, out_c2 = self.branch_c(x1), self.branch_c(x2)
                out_p1, out_p2 = self.branch_p(x1), self.branch_p(x2)
            y_c1, y_c2 = predict_hard(out_c1), predict_hard(out_c2)
            y_p1, y_p2 = predict_hard(out_p1), predict_hard(out_p2)
            prob_c1 = F.softmax(out_c1.logits, dim=1)
            prob_c2 = F.softmax(out_c2.logits, dim=1)
            prob_p1 = F.softmax(out_p1.logits, dim=1)
            prob_p2 = F.softmax(out_p2.logits, dim=1)

            bundles = []
            for b in range(B):
                y_cw = augment.mix(y_c1[b], y_c2[b], masks[b])
                y_pw = augment.mix(y_p1[b], y_p2[b], masks[b])
                prob_cw = augment.mix(prob_c1[b], prob_c2[b], masks[b])
                prob_pw = augment.mix(prob_p1[b], prob_p2[b], masks[b])
                conf_c = prob_cw.max(dim=0).values.numpy().clip(1e-8, 1.0)
                conf_p = prob_pw.max(dim=0).values.numpy().clip(1e-8, 1.0)
                bundles.append(
                    pseudofuse.fuse(y_cw, y_pw, conf_c, conf_p, self.num_classes)
                )
            y_inter = torch.from_numpy(np.stack([bd.y_inter for bd in bundles]))
            y_union = torch.from_numpy(np.stack([bd.y_union for bd in bundles]))
            w_u = torch.from_numpy(np.stack([bd.w_u for bd in bundles])).to(x1.dtype)
            self._last_fuse = (bundles[0], pseudofuse.agreement_matrix(
                augment.mix(y_c1[0], y_c2[0], masks[0]),
                augment.mix(y_p1[0], y_p2[0], masks[0]),
                self.num_classes,
            ))

            # strong path: both branches see the mixed image, with gradients
            out_sc = self.branch_c(x_s)
            out_sp = self.branch_p(x_s)

        # supervised CE on both branches (both see the same labeled batch)
        out_lc = self.branch_c(x_l)
        out_lp = self.branch_p(x_l)
        sup = self._mean_ce(out_lc.logits, y_l) + self._mean_ce(out_lp.logits, y_l)

        if unlabeled is not None:
            ale_weights = w_u if lc.ale_confidence_weighting else None
            inter, _ = weighted_pseudo_ce(out_sc.logits, y_inter, w_u)
            union, _ = weighted_pseudo_ce(out_sp.logits, y_union, w_u)
            ale_c = aleatoric_loss(out_sc.logits, out_sc.variance, y_inter,
                                   lc.mc_samples, self.noise_rng, ale_weights)
            ale_p = aleatoric_loss(out_sp.logits, out_sp.variance, y_union,
                                   lc.mc_samples, self.noise_rng, ale_weights)
            energy_c = energy_loss(out_sc.logits, sign=lc.energy_sign)
            energy_p = energy_loss(out_sp.logits, sign=lc.energy_sign)
        else:
            inter = union = ale_c = ale_p = zero
            energy_c = energy_p = zero
        if not in_warmup:
            # energy also acts on the supervised batch, folded into the same terms
            energy_c = energy_c + energy_loss(out_lc.logits, sign=lc.energy_sign)
            energy_p = energy_p + energy_loss(out_lp.logits, sign=lc.energy_sign)

        report = combine(sup, inter, union, ale_c, ale_p, energy_c, energy_p, lc)
        total_value = float(report.total.detach())
        if total_value > cfg.divergence_limit:
            raise RuntimeError(
                f"training diverged at iteration {self.iteration}: "
                f"total loss {total_value:.3e} > {cfg.divergence_limit:.0e}"
            )

        lr = poly_lr(cfg.base_lr, self.iteration, cfg.max_iter, cfg.poly_power)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()
        report.total.backward()
        self.optimizer.step()
        self.iteration += 1

        record = {"step": self.iteration - 1, **report.scalars(), "lr": lr}
        self.loss_log.append(record)
        if self.out_dir is not None:
            with (self.out_dir / "losses.jsonl").open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return report

    @staticmethod
    def _mean_ce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        ce = ce_pixelwise(logits, labels)
        valid = labels < logits.shape[1]
        return ce[valid].mean() if bool(valid.any()) else logits.sum() * 0.0

    # ------------------------------------------------------------------- run

    def _draw_batches(self):
        cfg = self.config
        labeled_idx = self.data_rng.choice(self.data.labeled, size=cfg.batch_labeled,
                                           replace=True)
        labeled = self.data.batch(labeled_idx)
        unlabeled = None
        if (
            cfg.batch_unlabeled > 0
            and len(self.data.unlabeled) > 0
            and self.iteration >= cfg.unsup_warmup_iters
        ):
            u_idx = self.data_rng.choice(self.data.unlabeled,
                                         size=2 * cfg.batch_unlabeled, replace=True)
            x1, _ = self.data.batch(u_idx[: cfg.batch_unlabeled])
            x2, _ = self.data.batch(u_idx[cfg.batch_unlabeled :])
            unlabeled = (x1, x2)
        return labeled, unlabeled

    def run(self, stop_at: int | None = None) -> list[dict]:
        """Train to max_iter (or `stop_at`, for interruption tests), evaluating
        every eval_every steps and at the end; returns the metrics history and
        checkpoints the best/final state."""
        cfg = self.config
        until = cfg.max_iter if stop_at is None else min(stop_at, cfg.max_iter)
        while self.iteration < until:
            labeled, unlabeled = self._draw_batches()
            self.train_step(labeled, unlabeled)
            it = self.iteration
            if it % cfg.eval_every == 0 or it == cfg.max_iter:
                if not (self.history and self.history[-1]["step"] == it):
                    self._evaluate_and_checkpoint()
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "ckpt_last.bin")
            if self.iteration == cfg.max_iter:
                self.save_checkpoint(self.out_dir / "ckpt_final.bin")
                self._write_final_outputs()
        return self.history

    def _evaluate_and_checkpoint(self) -> None:
        report = self.evaluate()
        record = {
            "step": self.iteration,
            "miou": report.miou,
            "per_class_iou": [None if np.isnan(v) else v for v in report.per_class],
        }
        self.history.append(record)
        improved = report.miou > self.best_miou
        self.best_miou = max(self.best_miou, report.miou)
        if self.out_dir is not None:
            with (self.out_dir / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if improved:
                self.save_checkpoint(self.out_dir / "ckpt_best.bin")
            if self.debug_fuse and self._last_fuse is not None:
                bundle, M = self._last_fuse
                pseudofuse.dump_debug(bundle, M, self.out_dir / "fuse_debug",
                                      tag=f"step{self.iteration:06d}")

    def evaluate(self):
        """Conservative-branch IoU over the validation scenes."""
        cm = ConfusionMatrix(self.num_classes)
        with torch.no_grad():
            for idx in self.data.val:
                image, label = self.data.cache(int(idx))
                out = self.branch_c(torch.from_numpy(image).unsqueeze(0))
                cm.add(predict_hard(out)[0], label)
        return iou(cm)

    def _write_final_outputs(self) -> None:
        palette = default_palette(self.num_classes)
        with torch.no_grad():
            for idx in self.data.val[:4]:
                image, label = self.data.cache(int(idx))
                out = self.branch_c(torch.from_numpy(image).unsqueeze(0))
                pred = predict_hard(out)[0]
                save_png(panel(image, pred, label, palette),
                         self.out_dir / f"val_{int(idx):05d}.png")
        if self.history:
            write_summary(self.evaluate(), self.out_dir / "metrics_summary.txt")

    # ----------------------------------------------------------- checkpoints

    def save_checkpoint(self, path: str | Path) -> None:
        arrays: dict[str, np.ndarray] = {}
        for tag, branch in (("c", self.branch_c), ("p", self.branch_p)):
            for name, p in branch.named_parameters():
                arrays[f"params_{tag}/{name}"] = p.detach().numpy().copy()
                state = self.optimizer.state.get(p, {})
                if "momentum_buffer" in state and state["momentum_buffer"] is not None:
                    arrays[f"momentum_{tag}/{name}"] = (
                        state["momentum_buffer"].detach().numpy().copy()
                    )
        meta = {
            "iter": self.iteration,
            "best_miou": self.best_miou,
            "history": self.history,
            "config": _config_to_jsonable(self.config),
            "num_classes": self.num_classes,
            "seeds": {
                "branch_c": self.config.seed_branch_c,
                "branch_p": self.config.seed_branch_p,
                "data": self.config.seed_data,
                "noise": self.config.seed_noise,
            },
            "rng": {
                "data": self.data_rng.bit_generator.state,
                "mask": self.mask_rng.bit_generator.state,
                "noise": self.noise_rng.bit_generator.state,
            },
        }
        checkpoint.save(path, arrays, meta)

    def load_checkpoint(self, path: str | Path) -> None:
        arrays, meta = checkpoint.load(path)
        if meta["config"] != _config_to_jsonable(self.config):
            raise ValueError("checkpoint was written with a different config")
        with torch.no_grad():
            for tag, branch in (("c", self.branch_c), ("p", self.branch_p)):
                for name, p in branch.named_parameters():
                    p.copy_(torch.from_numpy(arrays[f"params_{tag}/{name}"]))
                    key = f"momentum_{tag}/{name}"
                    if key in arrays:
                        self.optimizer.state[p]["momentum_buffer"] = torch.from_numpy(
                            arrays[key]
                        ).clone()
        self.iteration = meta["iter"]
        self.best_miou = meta["best_miou"]
        self.history = list(meta["history"])
        self.data_rng.bit_generator.state = meta["rng"]["data"]
        self.mask_rng.bit_generator.state = meta["rng"]["mask"]
        self.noise_rng.bit_generator.state = meta["rng"]["noise"]


def _config_to_jsonable(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    return json.loads(json.dumps(d))
