"""Command-line entry points: synth-data, train, eval, generate, ablate."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .data import ATTRIBUTES, TASKS, AttributeLabel, TaskConfig, save_png, synthetic_dataset, write_dataset
from .metrics.evaluate import (evaluate, evaluate_pair, load_test_split, markdown_table,
                               run_generators)
from .training import checkpoint_load, load_config, train

# ablation rows: (row name, config changes)
ABLATION_VARIANTS = (
    ("attribute+sketch", {"model": "asgan", "lambda_l1": 0.0}),
    ("attribute+sketch+L1", {"model": "asgan"}),
    ("encoder-decoder", {"model": "baseline_ed"}),
    ("u-net", {"model": "baseline_unet"}),
)
SYNTH_TEST_OFFSET = 1_000_000


def _config(args, **extra):
    return load_config(args.config, args.override or (), seed=args.seed,
                       task=getattr(args, "task", None), **extra)


def heldout_triplets(cfg):
    """Held-out triplets: the manifest's test split or fresh synthetic faces."""
    if cfg.data.startswith("synthetic"):
        n = int(cfg.data.partition(":")[2] or 8)
        return synthetic_dataset(n, cfg.resolution, cfg.seed + SYNTH_TEST_OFFSET,
                                 cfg.num_attributes)
    return load_test_split(cfg.data, cfg.resolution)


def dataset_name(cfg) -> str:
    return "synthetic" if cfg.data.startswith("synthetic") else Path(cfg.data).name


def cmd_synth_data(args) -> int:
    triplets = synthetic_dataset(args.count, args.resolution, args.seed or 0)
    # all versions of a face land in the same split
    k = len(ATTRIBUTES)
    splits = ["train" if (i // k) % 2 == 0 else "test" for i in range(len(triplets))]
    path = write_dataset(triplets, args.out, splits)
    print(f"wrote {len(triplets)} triplets to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(
        "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items()), encoding="utf-8")
    state = train(cfg, out_dir=out)
    print(f"trained {state.iteration} iterations; checkpoint {out / 'last.asg'}")
    return 0


def cmd_eval(args) -> int:
    task = TaskConfig(args.task) if args.task else None
    report = evaluate(args.checkpoint, args.data, task, seed=args.seed or 0,
                      injective=not args.many_to_one)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "metrics.csv")
    table = report.markdown()
    (out / "metrics.md").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_generate(args) -> int:
    state = checkpoint_load(args.checkpoint)
    cfg = state.config
    task = TaskConfig(args.task) if args.task else cfg.task_config
    attribute = None
    if args.attribute is not None:
        attribute = AttributeLabel.parse(args.attribute).index
    triplets = load_test_split(args.data, cfg.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for o in run_generators(state.generators, triplets, task, seed=args.seed or 0,
                            attribute=attribute, dropout_at_test=cfg.dropout_at_test):
        grid = np.concatenate([o["input"], o["x2_hat"], o["y_hat"],
                               o["target_attr"], o["target_out"]], axis=1)
        tag = ATTRIBUTES[o["label"]]
        save_png(grid, out / f"{o['id']}_{tag}.png")
    print(f"wrote {len(triplets)} grids to {out}")
    return 0


def cmd_ablate(args) -> int:
    base = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tests = heldout_triplets(base)
    reports = []
    for name, changes in ABLATION_VARIANTS:
        cfg = base.replace(**changes)
        run_dir = out / name
        state = train(cfg, out_dir=run_dir)
        rep = evaluate_pair(state.generators, tests, cfg.task_config, seed=base.seed,
                            dropout_at_test=cfg.dropout_at_test, name=name,
                            dataset=dataset_name(cfg))
        rep.to_csv(run_dir / "metrics.csv")
        reports.append(rep)
        del state
    table = markdown_table(reports)
    (out / "table.md").write_text(table, encoding="utf-8")
    (out / "ids.json").write_text(json.dumps(reports[0].ids) + "\n", encoding="utf-8")
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asgan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True, help="output directory")
        if config:
            sp.add_argument("--config", help="key = value config file")
            sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")
            sp.add_argument("--task", choices=TASKS)

    sp = sub.add_parser("synth-data", help="write a synthetic triplet dataset")
    common(sp, config=False)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--resolution", type=int, default=64)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train a generator pair")
    common(sp)
    sp.set_defaults(func=cmd_train)

    for name, func, hlp in (("eval", cmd_eval, "score a checkpoint on a test split"),
                            ("generate", cmd_generate, "write [x1|x2_hat|y_hat|x2|y] grids")):
        sp = sub.add_parser(name, help=hlp)
        common(sp, config=False)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", required=True, help="dataset root holding manifest.jsonl")
        sp.add_argument("--task", choices=TASKS)
        sp.set_defaults(func=func)
        if name == "eval":
            sp.add_argument("--many-to-one", action="store_true",
                            help="one-sided ratio test without the one-to-one constraint")
        else:
            sp.add_argument("--attribute", choices=ATTRIBUTES)

    sp = sub.add_parser("ablate", help="train and score the four comparison variants")
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, CheckpointError) as exc:
        print(f"asgan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
