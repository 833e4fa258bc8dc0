"""Command-line entry points: train, ablate, dump."""

from __future__ import annotations

import argparse
from fractions import Fraction
from pathlib import Path

from . import config as config_mod
from . import harness, synthgen
from .trainer import Trainer


def _cmd_train(args) -> int:
    run_config = config_mod.load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.save(run_config, out_dir / "config.cfg")
    trainer = Trainer(run_config.train, config_mod.build_bundle(run_config),
                      out_dir=out_dir, debug_fuse=args.debug_fuse)
    if args.resume:
        trainer.load_checkpoint(args.resume)
        print(f"resumed from {args.resume} at iteration {trainer.iteration}")
    history = trainer.run()
    final = history[-1]["miou"] if history else float("nan")
    print(f"done: {trainer.iteration} iterations, final mIoU {final:.4f}, "
          f"best mIoU {trainer.best_miou:.4f}")
    print(f"outputs in {out_dir}")
    return 0


def _cmd_ablate(args) -> int:
    base = config_mod.load(args.config)
    fractions = [Fraction(part) for part in args.fractions.split(",")]
    out_dir = Path(args.out)
    cells = harness.run_grid(base, fractions, repeats=args.repeats,
                             out_dir=out_dir, workers=args.workers)
    print(harness.report(cells, out_dir))
    for fraction in fractions:
        ok, message = harness.trend_check(cells, fraction)
        print(message)
    print(f"grid records in {out_dir / 'grid.jsonl'}")
    return 0


def _cmd_dump(args) -> int:
    run_config = config_mod.load(args.config)
    partition = config_mod.make_partition(run_config)
    count = args.count if args.count is not None else run_config.total_images
    indices = list(range(count))
    if partition is None:
        flags = [True] * count
    else:
        labeled, _ = synthgen.split_partition(partition)
        labeled_set = set(int(i) for i in labeled)
        flags = [i in labeled_set for i in indices]
    manifest = synthgen.dump_dataset(run_config.scene, indices, flags, args.out)
    print(f"wrote {count} scenes; manifest at {manifest}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="semiseg",
        description="Semi-supervised segmentation on synthetic shapes: "
                    "dual-branch pseudo-label training with uncertainty and "
                    "energy losses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True, help="key=value config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--debug-fuse", action="store_true",
                         help="dump fused pseudo-labels, weights and the "
                              "agreement matrix at every evaluation")
    p_train.set_defaults(func=_cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the loss-component ablation grid")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--fractions", default="1/4,1/8,1/16",
                          help="comma-separated labeled fractions")
    p_ablate.add_argument("--repeats", type=int, default=3)
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--workers", type=int, default=1,
                          help="run cells in this many parallel processes")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_dump = sub.add_parser("dump", help="write the synthetic dataset to disk")
    p_dump.add_argument("--config", required=True)
    p_dump.add_argument("--out", required=True)
    p_dump.add_argument("--count", type=int, default=None,
                        help="number of scenes (default: total_images)")
    p_dump.set_defaults(func=_cmd_dump)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
