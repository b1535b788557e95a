"""Command-line entry point: ``python -m rltrack <command> ...``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .config import RunConfig, load_config
from .data.otb import GT_FILE, load_otb_sequence, write_otb_sequence
from .data.synthetic import gen_synthetic_sequence, load_spec
from .evaluation import (
    BASELINE_MODES,
    PROTOCOLS,
    comparison_table,
    emit_report,
    run_baselines,
    run_interval_sweep,
    run_protocol,
    sweep_table,
)
from .pipeline import (
    evaluation_sequences,
    load_networks,
    pretrain_matcher,
    train_policy_on,
    training_sequences,
)

COMMANDS = ("pretrain-matcher", "train-policy", "gen-data", "track", "eval", "sweep", "baselines")


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rltrack", description="Template-selection tracker: training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--weights", type=Path, action="append", default=[], help="weights file (repeat for matcher and policy)")
        p.add_argument("--seq-dir", type=Path, help="OTB-layout sequence folder, or a folder of them")
        p.add_argument("--out", type=Path, required=True, help="output folder")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--mode", choices=BASELINE_MODES, default="rl")
        p.add_argument("--protocol", choices=PROTOCOLS, default="ope")
        if name == "gen-data":
            p.add_argument("--spec", type=Path, help="synthetic sequence spec file (one sequence)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return replace(cfg, tracker=replace(cfg.tracker, mode=args.mode))


def _sequences(args, cfg: RunConfig, split: str = "eval"):
    if args.seq_dir is None:
        if split == "train":
            return training_sequences(cfg.suite, args.seed)
        return evaluation_sequences(cfg.suite, args.seed)
    root = args.seq_dir
    if not root.is_dir():
        raise CliError(f"sequence folder {root} does not exist")
    if (root / GT_FILE).exists():
        return [load_otb_sequence(root)]
    dirs = sorted(d for d in root.iterdir() if (d / GT_FILE).exists())
    if not dirs:
        raise CliError(f"no OTB sequences under {root}")
    return [load_otb_sequence(d) for d in dirs]


def _networks(args, need_policy: bool):
    if not args.weights:
        raise CliError("--weights is required")
    for w in args.weights:
        if not w.is_file():
            raise CliError(f"weights file {w} not found")
    matcher, policy = load_networks(args.weights)
    if matcher is None:
        raise CliError("no matcher weights among --weights")
    if need_policy and policy is None:
        raise CliError("mode rl needs policy weights among --weights")
    return matcher, policy


def cmd_pretrain_matcher(args, cfg: RunConfig) -> None:
    lines = ["step\tloss"]
    net, log = pretrain_matcher(cfg.matcher, args.seed, callback=lambda s, l: lines.append(f"{s}\t{l:.6f}"))
    args.out.mkdir(parents=True, exist_ok=True)
    net.save(args.out / "matcher.rdtw")
    (args.out / "matcher_log.tsv").write_text("\n".join(lines) + "\n")
    print(f"matcher trained for {len(log.losses)} steps in {log.seconds:.1f}s -> {args.out / 'matcher.rdtw'}")


def cmd_train_policy(args, cfg: RunConfig) -> None:
    matcher, _ = _networks(args, need_policy=False)
    args.out.mkdir(parents=True, exist_ok=True)
    seqs = _sequences(args, cfg, split="train")
    policy, log = train_policy_on(
        matcher, seqs, cfg.train, args.seed, log_path=args.out / "train_log.tsv", checkpoint_dir=args.out / "checkpoints"
    )
    policy.save(args.out / "policy.rdtw")
    first, last = log.window_success()
    print(f"{len(log.records)} episodes in {log.seconds:.1f}s; success rate {first:.3f} -> {last:.3f}")


def cmd_gen_data(args, cfg: RunConfig) -> None:
    if args.spec is not None:
        seqs = [gen_synthetic_sequence(load_spec(args.spec), args.seed, name=args.spec.stem)]
    else:
        seqs = evaluation_sequences(cfg.suite, args.seed)
    for s in seqs:
        write_otb_sequence(s, args.out / s.name)
    print(f"wrote {len(seqs)} sequence(s) to {args.out}")


def cmd_track(args, cfg: RunConfig) -> None:
    matcher, policy = _networks(args, need_policy=args.mode == "rl")
    seqs = _sequences(args, cfg)
    run = run_protocol("ope", matcher, policy, cfg.tracker, seqs, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for rec in run.records:
        rows = [",".join(f"{v:.4f}" for v in b.corner()) for b in rec.boxes]
        (args.out / f"{rec.sequence}_boxes.txt").write_text("\n".join(rows) + "\n")
    emit_report(run, args.out)
    print(f"tracked {len(seqs)} sequence(s); AUC {run.auc:.4f}")


def cmd_eval(args, cfg: RunConfig) -> None:
    matcher, policy = _networks(args, need_policy=args.mode == "rl")
    run = run_protocol(args.protocol, matcher, policy, cfg.tracker, _sequences(args, cfg), args.seed)
    emit_report(run, args.out)
    print(f"{args.protocol.upper()} {args.mode}: AUC {run.auc:.4f}")


def cmd_sweep(args, cfg: RunConfig) -> None:
    matcher, policy = _networks(args, need_policy=args.mode == "rl")
    rows = run_interval_sweep(matcher, policy, cfg.tracker, _sequences(args, cfg), cfg.suite.intervals, args.seed, args.protocol)
    args.out.mkdir(parents=True, exist_ok=True)
    table = sweep_table(rows)
    (args.out / f"sweep_{args.protocol}_{args.mode}_seed{args.seed}.tsv").write_text(table)
    print(table, end="")


def cmd_baselines(args, cfg: RunConfig) -> None:
    matcher, policy = _networks(args, need_policy=True)
    runs = run_baselines(matcher, policy, cfg.tracker, _sequences(args, cfg), BASELINE_MODES, args.seed, args.protocol)
    for run in runs.values():
        emit_report(run, args.out)
    table = comparison_table(runs)
    (args.out / f"baselines_{args.protocol}_seed{args.seed}.tsv").write_text(table)
    print(table, end="")


HANDLERS = {
    "pretrain-matcher": cmd_pretrain_matcher,
    "train-policy": cmd_train_policy,
    "gen-data": cmd_gen_data,
    "track": cmd_track,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "baselines": cmd_baselines,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        HANDLERS[args.command](args, cfg)
    except (CliError, OSError, ValueError) as e:
        print(f"rltrack {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0
