"""Plain-text `key = value` experiment configs mirroring the config dataclasses.

The serializer emits keys in a fixed order with canonical formatting, so two
configs that differ only in loss weights differ only in those lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .losses import LossConfig
from .synthgen import PartitionProtocol, SceneSpec
from .trainer import DataBundle, TrainConfig, build_data


@dataclass
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    total_images: int = 64
    val_images: int = 16
    labeled_fraction: Fraction | None = None  # None = fully labeled
    partition_seed: int = 7


def _fmt_fraction(value: Fraction | None) -> str:
    return "none" if value is None else f"{value.numerator}/{value.denominator}"


def _parse_fraction(text: str) -> Fraction | None:
    return None if text.lower() == "none" else Fraction(text)


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_range(text: str) -> tuple[int, int]:
    lo, hi = (int(p) for p in text.split(","))
    return (lo, hi)


# key -> (path into RunConfig, parser, formatter); order here is the file order
_FIELDS: dict[str, tuple[tuple[str, ...], object, object]] = {
    "image_size": (("scene", "image_size"), int, str),
    "num_classes": (("scene", "num_classes"), int, str),
    "shapes_per_image": (("scene", "shapes_per_image"), _parse_range,
                         lambda v: f"{v[0]},{v[1]}"),
    "noise_std": (("scene", "noise_std"), float, repr),
    "scene_seed": (("scene", "seed"), int, str),
    "total_images": (("total_images",), int, str),
    "val_images": (("val_images",), int, str),
    "labeled_fraction": (("labeled_fraction",), _parse_fraction, _fmt_fraction),
    "partition_seed": (("partition_seed",), int, str),
    "base_lr": (("train", "base_lr"), float, repr),
    "momentum": (("train", "momentum"), float, repr),
    "weight_decay": (("train", "weight_decay"), float, repr),
    "max_iter": (("train", "max_iter"), int, str),
    "poly_power": (("train", "poly_power"), float, repr),
    "batch_labeled": (("train", "batch_labeled"), int, str),
    "batch_unlabeled": (("train", "batch_unlabeled"), int, str),
    "unsup_warmup_iters": (("train", "unsup_warmup_iters"), int, str),
    "width": (("train", "width"), int, str),
    "eval_every": (("train", "eval_every"), int, str),
    "divergence_limit": (("train", "divergence_limit"), float, repr),
    "gamma_int": (("train", "loss", "gamma_int"), float, repr),
    "gamma_uni": (("train", "loss", "gamma_uni"), float, repr),
    "gamma_ale": (("train", "loss", "gamma_ale"), float, repr),
    "gamma_e": (("train", "loss", "gamma_e"), float, repr),
    "mc_samples": (("train", "loss", "mc_samples"), int, str),
    "energy_sign": (("train", "loss", "energy_sign"), int, str),
    "ale_confidence_weighting": (("train", "loss", "ale_confidence_weighting"),
                                 _parse_bool, lambda v: "true" if v else "false"),
    "seed_branch_c": (("train", "seed_branch_c"), int, str),
    "seed_branch_p": (("train", "seed_branch_p"), int, str),
    "seed_data": (("train", "seed_data"), int, str),
    "seed_noise": (("train", "seed_noise"), int, str),
}


def _get(config: RunConfig, path: tuple[str, ...]):
    obj = config
    for part in path:
        obj = getattr(obj, part)
    return obj


def to_text(config: RunConfig) -> str:
    lines = [f"{key} = {fmt(_get(config, path))}"
             for key, (path, _, fmt) in _FIELDS.items()]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        path, parse, _ = _FIELDS[key]
        values[path] = parse(value.strip())

    scene_kwargs = {p[1]: v for p, v in values.items() if p[0] == "scene"}
    loss_kwargs = {p[2]: v for p, v in values.items() if p[:2] == ("train", "loss")}
    train_kwargs = {p[1]: v for p, v in values.items()
                    if p[0] == "train" and p[1] != "loss"}
    top_kwargs = {p[0]: v for p, v in values.items() if len(p) == 1}
    return RunConfig(
        scene=SceneSpec(**scene_kwargs),
        train=TrainConfig(loss=LossConfig(**loss_kwargs), **train_kwargs),
        **top_kwargs,
    )


def load(path: str | Path) -> RunConfig:
    return from_text(Path(path).read_text())


def save(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(to_text(config))


def make_partition(config: RunConfig) -> PartitionProtocol | None:
    if config.labeled_fraction is None:
        return None
    return PartitionProtocol(
        labeled_fraction=config.labeled_fraction,
        total_images=config.total_images,
        seed=config.partition_seed,
    )


def build_bundle(config: RunConfig) -> DataBundle:
    return build_data(
        config.scene,
        total_images=config.total_images,
        val_images=config.val_images,
        partition=make_partition(config),
    )


def with_loss_flags(config: RunConfig, use_ale: bool, use_energy: bool) -> RunConfig:
    """Copy of `config` with the uncertainty/energy terms switched on or off."""
    loss = replace(
        config.train.loss,
        gamma_ale=config.train.loss.gamma_ale if use_ale else 0.0,
        gamma_e=config.train.loss.gamma_e if use_energy else 0.0,
    )
    return replace(config, train=replace(config.train, loss=loss))
