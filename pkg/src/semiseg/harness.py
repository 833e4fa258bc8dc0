"""Ablation grid over loss components and labeled fractions.

Rows follow the combo order none / uncertainty / energy / both; cells at the
same repeat index share every seed so combos differ only in loss weights,
giving paired comparisons for the trend check (combined vs baseline).
"""

from __future__ import annotations

import dataclasses
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import RunConfig, with_loss_flags
from .trainer import Trainer

COMBOS = (
    ("none", False, False),
    ("ale", True, False),
    ("energy", False, True),
    ("both", True, True),
)


@dataclass
class AblationCell:
    fraction: Fraction
    use_ale: bool
    use_energy: bool
    repeat: int
    seed: int
    result: float | None = None  # best validation mIoU; None when the cell failed
    final_miou: float | None = None
    error: str | None = None

    @property
    def combo(self) -> str:
        for name, ale, energy in COMBOS:
            if (ale, energy) == (self.use_ale, self.use_energy):
                return name
        raise AssertionError

    def to_record(self) -> dict:
        d = dataclasses.asdict(self)
        d["fraction"] = f"{self.fraction.numerator}/{self.fraction.denominator}"
        d["combo"] = self.combo
        return d


def cell_config(base: RunConfig, fraction: Fraction, use_ale: bool, use_energy: bool,
                repeat: int) -> RunConfig:
    """Resolved config for one cell: repeat offsets every seed; combos at the
    same repeat share seeds and partition and differ only in loss weights."""
    offset = repeat * 1009  # prime stride keeps repeat seed sets disjoint
    cfg = replace(
        base,
        labeled_fraction=fraction,
        partition_seed=base.partition_seed + offset,
        train=replace(
            base.train,
            seed_branch_c=base.train.seed_branch_c + offset,
            seed_branch_p=base.train.seed_branch_p + offset,
            seed_data=base.train.seed_data + offset,
            seed_noise=base.train.seed_noise + offset,
        ),
    )
    return with_loss_flags(cfg, use_ale, use_energy)


def cell_dir_name(fraction: Fraction, combo: str, repeat: int) -> str:
    return f"cell_{fraction.numerator}-{fraction.denominator}_{combo}_r{repeat}"


def train_cell(run_config: RunConfig, out_dir: Path) -> dict:
    """Default cell runner: one full training run; returns mIoU results."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.save(run_config, out_dir / "config.cfg")
    trainer = Trainer(run_config.train, config_mod.build_bundle(run_config),
                      out_dir=out_dir)
    history = trainer.run()
    return {
        "best_miou": trainer.best_miou,
        "final_miou": history[-1]["miou"] if history else float("nan"),
    }


def _run_cell_job(args) -> dict:
    base, fraction, name, use_ale, use_energy, repeat, out_root = args
    cfg = cell_config(base, fraction, use_ale, use_energy, repeat)
    out_dir = Path(out_root) / cell_dir_name(fraction, name, repeat)
    try:
        result = train_cell(cfg, out_dir)
        return {"ok": True, **result}
    except Exception as exc:  # cell failures must not kill the grid
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def run_grid(
    base: RunConfig,
    fractions: list[Fraction],
    repeats: int,
    out_dir: str | Path,
    runner=None,
    workers: int = 1,
) -> list[AblationCell]:
    """Run fractions x 4 combos x repeats training cells and collect results.

    `runner(run_config, cell_dir) -> {"best_miou", "final_miou"}` can replace
    real training in tests. Failed cells are recorded and the grid continues.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    fractions = [Fraction(f) for f in fractions]

    jobs = []
    cells = []
    for fraction in fractions:
        for name, use_ale, use_energy in COMBOS:
            for repeat in range(repeats):
                cfg = cell_config(base, fraction, use_ale, use_energy, repeat)
                cells.append(AblationCell(
                    fraction=fraction, use_ale=use_ale, use_energy=use_energy,
                    repeat=repeat, seed=cfg.train.seed_data,
                ))
                jobs.append((base, fraction, name, use_ale, use_energy, repeat,
                             str(out_root)))

    if runner is not None:
        outcomes = []
        for job in jobs:
            base_cfg, fraction, name, use_ale, use_energy, repeat, root = job
            cfg = cell_config(base_cfg, fraction, use_ale, use_energy, repeat)
            cell_dir = Path(root) / cell_dir_name(fraction, name, repeat)
            try:
                outcomes.append({"ok": True, **runner(cfg, cell_dir)})
            except Exception as exc:
                outcomes.append({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_job, jobs))
    else:
        outcomes = [_run_cell_job(job) for job in jobs]

    for cell, outcome in zip(cells, outcomes):
        if outcome["ok"]:
            cell.result = outcome["best_miou"]
            cell.final_miou = outcome["final_miou"]
        else:
            cell.error = outcome["error"]

    with (out_root / "grid.jsonl").open("w") as fh:
        for cell in cells:
            fh.write(json.dumps(cell.to_record(), sort_keys=True) + "\n")
    return cells


def _combo_mean(cells: list[AblationCell], fraction: Fraction, combo: str) -> float:
    scores = [c.result for c in cells
              if c.fraction == fraction and c.combo == combo and c.result is not None]
    return float(np.mean(scores)) if scores else float("nan")


def trend_check(cells: list[AblationCell], fraction: Fraction) -> tuple[bool, str]:
    """Directional check at one fraction: mean mIoU(both) >= mean mIoU(none).

    Returns (ok, message); a violated direction yields a WARN message with the
    per-seed table rather than an error.
    """
    fraction = Fraction(fraction)
    mean_both = _combo_mean(cells, fraction, "both")
    mean_none = _combo_mean(cells, fraction, "none")
    lines = [
        f"trend at {fraction}: mean mIoU both={mean_both:.4f} "
        f"vs baseline={mean_none:.4f}"
    ]
    ok = bool(mean_both >= mean_none)
    if not ok:
        lines.append(f"WARN: combined-loss mean mIoU below baseline at {fraction}")
        lines.append("repeat  baseline(none)  combined(both)")
        per_repeat = {}
        for cell in cells:
            if cell.fraction == fraction and cell.combo in ("none", "both"):
                per_repeat.setdefault(cell.repeat, {})[cell.combo] = cell.result
        for repeat in sorted(per_repeat):
            none_v = per_repeat[repeat].get("none")
            both_v = per_repeat[repeat].get("both")
            fmt = lambda v: "failed" if v is None else f"{v:.4f}"
            lines.append(f"{repeat:>6}  {fmt(none_v):>14}  {fmt(both_v):>14}")
    return ok, "\n".join(lines)


def report(cells: list[AblationCell], out_dir: str | Path) -> str:
    """Emit the comparison table (rows none/ale/energy/both) and a line plot;
    returns the table text."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not cells:
        text = "no results\n"
        (out / "report.txt").write_text(text)
        return text

    fractions = sorted({c.fraction for c in cells}, reverse=True)
    header = ["loss combo".ljust(12)] + [str(f).rjust(8) for f in fractions]
    lines = ["  ".join(header)]
    for name, _, _ in COMBOS:
        row = [name.ljust(12)]
        for fraction in fractions:
            mean = _combo_mean(cells, fraction, name)
            row.append(("   nan" if np.isnan(mean) else f"{mean:.4f}").rjust(8))
        lines.append("  ".join(row))
    n_failed = sum(1 for c in cells if c.result is None)
    if n_failed:
        lines.append(f"failed cells: {n_failed}/{len(cells)}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [float(f) for f in fractions]
    for name, _, _ in COMBOS:
        ys = [_combo_mean(cells, f, name) for f in fractions]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xscale("log", base=2)
    ax.set_xticks(xs, [str(f) for f in fractions])
    ax.set_xlabel("labeled fraction")
    ax.set_ylabel("mean validation mIoU")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "miou_vs_fraction.png", dpi=120)
    plt.close(fig)
    return text
