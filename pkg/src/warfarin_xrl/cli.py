"""Command-line driver: generate, train, evaluate, distill, compare.

Exit codes: 0 success, 1 domain error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as C
from .cohort import CohortConfig, generate_cohort, read_cohort_csv, write_cohort_csv
from .distill import (DistillReport, agreement, collect_dataset, equivalence_check, fit_dataset,
                      protocol_card, table_policy, tree_to_table)
from .errors import ConfigError, DomainError
from .evaluation import compare, evaluate, plot_data_csv, read_report
from .ppo import load_policy, train
from .protocols import BUILTIN_PROTOCOLS, builtin_protocol, load_table


def _load(args) -> tuple[dict, dict]:
    cfg = C.load_config(args.config, args.set)
    if getattr(args, "workers", None) is not None:
        cfg["experiment"]["workers"] = args.workers
    hashed = {s: dict(v) for s, v in cfg.items()}
    hashed["experiment"].pop("workers")  # results do not depend on the pool size
    meta = {"config_hash": C.config_hash(hashed), "seed": cfg["experiment"]["seed"]}
    return cfg, meta


def _cohort(cfg: dict, args) -> tuple[list, dict]:
    if getattr(args, "cohort", None):
        patients, meta = read_cohort_csv(args.cohort)
        return patients, {"cohort_seed": meta.get("seed", "?"), "cohort_size": len(patients),
                          "cohort_id_offset": meta.get("id_offset", "?")}
    offset = cfg["cohort"]["fresh_id_offset" if getattr(args, "fresh", False) else "test_id_offset"]
    size = cfg["cohort"]["test_size"]
    seed = cfg["experiment"]["seed"]
    patients = generate_cohort(CohortConfig(size=size, seed=seed, id_offset=offset))
    return patients, {"cohort_seed": seed, "cohort_size": size, "cohort_id_offset": offset}


def _workers(cfg: dict) -> int:
    w = cfg["experiment"]["workers"]
    return w if w > 0 else (os.cpu_count() or 1)


# ---- subcommands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg, meta = _load(args)
    size = args.size if args.size is not None else cfg["cohort"]["test_size"]
    offset = args.id_offset if args.id_offset is not None else cfg["cohort"]["test_id_offset"]
    cc = CohortConfig(size=size, seed=cfg["experiment"]["seed"], rebalance_cyp2c9=args.rebalance,
                      min_variant_prob=cfg["ppo"]["min_variant_prob"], id_offset=offset)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_cohort_csv(generate_cohort(cc), args.out, {**meta, "size": size, "id_offset": offset,
                                                     "rebalance": args.rebalance})
    print(f"wrote {size} patients to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, meta = _load(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(f"# config_hash={meta['config_hash']}\n" + C.dump_config(cfg))
    log_path = out / "training_log.csv"

    def progress(row):
        if not args.quiet:
            print(f"pass {row['pass']:4d}  patients {row['patients']:7d}  train {row['train_pttr']:.3f}  "
                  f"val {row['val_pttr']:.3f}  kl {row['kl']:.4f}  actions {row['available']}/{row['used']}",
                  flush=True)

    result = train(C.ppo_config(cfg), C.forging_config(cfg), C.env_config(cfg), C.reward_config(cfg),
                   C.action_space(cfg), seed=cfg["experiment"]["seed"], log_path=log_path,
                   checkpoint_path=out / "checkpoint.bin", resume=args.resume, metadata=meta,
                   progress=progress)
    print(f"best validation PTTR {result.best_pttr:.4f}; checkpoint in {out / 'checkpoint.bin'}")
    return 0


def _policy(cfg: dict, args):
    chosen = [x for x in (args.protocol, args.checkpoint, args.table) if x]
    if len(chosen) != 1:
        raise ConfigError("choose exactly one of --protocol, --checkpoint, --table")
    if args.protocol:
        return builtin_protocol(args.protocol)
    if args.checkpoint:
        return load_policy(args.checkpoint, C.action_space(cfg), name=args.name or "rl")
    table = load_table(args.table)
    if args.name:
        table.name = args.name
    return table_policy(table)


def cmd_evaluate(args) -> int:
    cfg, meta = _load(args)
    policy = _policy(cfg, args)
    patients, cmeta = _cohort(cfg, args)
    meta = {**meta, **cmeta, "env_seed": cfg["experiment"]["seed"]}
    report, trajs = evaluate(policy, patients, C.env_config(cfg), C.reward_config(cfg),
                             workers=_workers(cfg), metadata=meta)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    report.write(stem)
    if args.plot_data:
        header = "".join(f"# {k}={v}\n" for k, v in meta.items())
        (stem.parent / f"{stem.name}_plot.csv").write_text(header + plot_data_csv(trajs, args.plot_data))
    print(report.to_markdown())
    return 0


def cmd_distill(args) -> int:
    cfg, meta = _load(args)
    dcfg = cfg["distill"]
    teacher = load_policy(args.checkpoint, C.action_space(cfg))
    env_cfg = C.env_config(cfg)
    seed = cfg["experiment"]["seed"]
    train_patients = generate_cohort(CohortConfig(cfg["cohort"]["test_size"], seed, id_offset=cfg["cohort"]["test_id_offset"]))
    fresh = generate_cohort(CohortConfig(cfg["cohort"]["test_size"], seed, id_offset=cfg["cohort"]["fresh_id_offset"]))
    data = collect_dataset(teacher, train_patients, env_cfg, reward_cfg=C.reward_config(cfg))
    held = collect_dataset(teacher, fresh, env_cfg, reward_cfg=C.reward_config(cfg))
    tree = fit_dataset(data, dcfg["max_depth"], dcfg["min_leaf"])
    table = tree_to_table(tree, args.name)
    mismatches = equivalence_check(tree, table, dcfg["equivalence_points"], seed)
    report = DistillReport(table, len(data), agreement(table, data), len(held), agreement(table, held),
                           dcfg["equivalence_points"], mismatches)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / f"{args.name}.csv", [f"{k}={v}" for k, v in meta.items()])
    (out / "protocol_card.md").write_text(protocol_card(report, meta))
    summary = {**meta, "rows": len(table), "cutoffs": table.cutoffs,
               "actions": [r.percent_change for r in table.rows], "train_rows": report.train_rows,
               "train_agreement": report.train_agreement, "heldout_rows": report.heldout_rows,
               "heldout_agreement": report.heldout_agreement,
               "equivalence_points": report.equivalence_points, "equivalence_mismatches": mismatches}
    (out / "distill_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(protocol_card(report, meta))
    return 0 if mismatches == 0 else 1


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise ConfigError("compare needs at least two report files")
    table = compare([read_report(p) for p in args.reports], force=args.force)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".md").write_text(table.to_markdown())
    stem.with_suffix(".csv").write_text(table.to_csv())
    print(table.to_markdown())
    return 0


# ---- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warfarin-xrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (0 = all CPUs)")
        return p

    g = with_config(sub.add_parser("generate", help="write a virtual patient cohort"))
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int)
    g.add_argument("--id-offset", type=int)
    g.add_argument("--rebalance", action="store_true", help="lift CYP2C9 variants to min_variant_prob")
    g.set_defaults(func=cmd_generate)

    t = with_config(sub.add_parser("train", help="train the PPO actor-critic"))
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = with_config(sub.add_parser("evaluate", help="PTTR report for one policy"))
    e.add_argument("--protocol", choices=BUILTIN_PROTOCOLS)
    e.add_argument("--checkpoint")
    e.add_argument("--table", help="protocol table CSV")
    e.add_argument("--name", help="label for the policy in reports")
    e.add_argument("--cohort", help="cohort CSV (default: test cohort from the config)")
    e.add_argument("--fresh", action="store_true", help="use the fresh cohort instead of the test cohort")
    e.add_argument("--plot-data", type=int, default=0, metavar="N", help="also write N patients' daily series")
    e.add_argument("--out", required=True, help="output path stem")
    e.set_defaults(func=cmd_evaluate)

    d = with_config(sub.add_parser("distill", help="distil a checkpoint into a dosing table"))
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--name", default="distilled")
    d.set_defaults(func=cmd_distill)

    c = sub.add_parser("compare", help="side-by-side table of evaluation reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out", required=True)
    c.add_argument("--force", action="store_true", help="allow reports from different cohorts")
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
