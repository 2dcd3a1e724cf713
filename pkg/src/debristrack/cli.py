"""Command-line entry point: ``debristrack <subcommand> ...``.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 I/O or
dataset format errors. Outputs are staged in a scratch directory and moved
into place only when the command succeeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset_io, gradcheck, metrics, pipeline
from .config import ConfigError, load_config
from .dataset_io import DatasetError
from .simulator import PRESETS

log = logging.getLogger("debristrack")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _add_common(p):
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker processes (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debristrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic debris dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="debris")
    p.add_argument("--split", default="train", help="split name for a single-split run")
    p.add_argument("--num-sequences", type=int, help="sequences for a single-split run")
    p.add_argument("--recipe", action="store_true", help="generate the splits of the config recipe")
    p.add_argument("--splits", help="comma-separated subset of recipe splits")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--frames", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--backgrounds", type=Path, help="directory of raw .npy/.png sky images")
    p.add_argument("--no-masks", action="store_true")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("render", help="write ground-truth heatmap/embedding/offset tensor maps")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True, help="split directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("track", help="track every sequence of a split")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True, help="split directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--source", choices=("oracle", "tensors"), default="oracle")
    p.add_argument("--tensors-dir", type=Path)
    p.add_argument("--jitter", type=float, help="oracle endpoint jitter std (px)")
    p.add_argument("--drop-prob", type=float, help="oracle per-object drop probability")
    p.add_argument("--fp-rate", type=float, help="oracle expected false positives per frame")
    p.add_argument("--radius", type=float, help="association radius (px)")
    p.add_argument("--max-missed", type=int, help="frames a track may coast")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--gt", type=Path, required=True, help="split directory")
    p.add_argument("--pred", type=Path, required=True, help="directory of <seq_id>.csv")
    p.add_argument("--report", type=Path, required=True, help="JSON report path (a .txt table is written alongside)")
    p.add_argument("--similarity", choices=("endpoint_l1", "bbox_iou"))
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("check-gradients", help="finite-difference check of every loss gradient")
    _add_common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--inject-sign-error", choices=sorted(gradcheck.CASES), help=argparse.SUPPRESS)

    p = sub.add_parser("plot", help="static figures from a dataset or a report")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, help="sequence or split directory")
    src.add_argument("--report", type=Path, help="JSON report from evaluate")
    p.add_argument("--pred", type=Path, help="prediction directory to overlay")
    p.add_argument("--max-sequences", type=int, default=5)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _validate(args):
    if getattr(args, "threads", 1) < 1:
        raise ConfigError("--threads must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    if args.command == "simulate":
        if args.recipe == (args.num_sequences is not None):
            raise ConfigError("give exactly one of --recipe or --num-sequences")
        if args.num_sequences is not None and args.num_sequences < 0:
            raise ConfigError("--num-sequences must be >= 0")
    if args.command == "track" and args.source == "tensors" and args.tensors_dir is None:
        raise ConfigError("--source tensors requires --tensors-dir")
    if args.command == "check-gradients" and args.trials < 0:
        raise ConfigError("--trials must be >= 0")


def cmd_simulate(args, cfg) -> int:
    extra = {"rng_seed": args.seed}
    if args.image_size:
        extra["image_size"] = tuple(args.image_size)
    if args.frames:
        extra["frames"] = tuple(args.frames)
    if args.no_masks:
        extra["masks"] = False
    if args.recipe:
        plan = dict(cfg.recipe)
        if args.splits:
            wanted = [s.strip() for s in args.splits.split(",") if s.strip()]
            unknown = [s for s in wanted if s not in plan]
            if unknown:
                raise ConfigError(f"--splits: not in recipe: {unknown}")
            plan = {s: plan[s] for s in wanted}
        plan = {name: (spec.preset, spec.count) for name, spec in plan.items()}
    else:
        plan = {args.split: (args.preset, args.num_sequences)}
    sims = {name: cfg.sim_for(p, **extra) for name, (p, _) in plan.items()}

    bg_files = ()
    if args.backgrounds:
        bg_files = tuple(str(p) for p in sorted(args.backgrounds.iterdir()) if p.suffix in (".npy", ".png"))
        if not bg_files:
            raise DatasetError(f"{args.backgrounds}: no .npy or .png backgrounds")

    summary = {"seed": args.seed, "splits": {}}
    with pipeline.atomic_dir(args.out, args.overwrite) as tmp:
        for name, (preset_name, count) in plan.items():
            stats = pipeline.write_split(tmp, name, sims[name], count, args.seed, args.threads, bg_files)
            summary["splits"][name] = {"preset": preset_name, **stats}
            log.info("split %s: %d sequences, %d frames", name, stats["sequences"], stats["frames"])
        dataset_io.write_json(summary, tmp / "dataset.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_render(args, cfg) -> int:
    seqs = dataset_io.list_sequences(args.dataset)
    with pipeline.atomic_dir(args.out, args.overwrite) as tmp:
        for s in seqs:
            pipeline.render_sequence_tensors(args.dataset / s, tmp, cfg.decode)
    print(f"rendered tensors for {len(seqs)} sequences into {args.out}")
    return EXIT_OK


def cmd_track(args, cfg) -> int:
    tcfg = cfg.tracker
    if args.radius is not None:
        tcfg = replace(tcfg, association_radius=args.radius)
    if args.max_missed is not None:
        tcfg = replace(tcfg, max_missed_frames=args.max_missed)
    noise = cfg.oracle
    for flag, key in (("jitter", "endpoint_jitter_std"), ("drop_prob", "drop_prob"), ("fp_rate", "false_positive_rate")):
        if getattr(args, flag) is not None:
            noise = replace(noise, **{key: getattr(args, flag)})
    with pipeline.atomic_dir(args.out, args.overwrite) as tmp:
        dropped = pipeline.track_split(args.dataset, tmp, tcfg, args.source, noise, args.seed,
                                       args.tensors_dir, cfg.decode)
        if args.source == "oracle":
            dataset_io.write_json(
                {"total_dropped": sum(len(v) for d in dropped.values() for v in d.values()),
                 "dropped": dropped},
                tmp / "dropout_log.json",
            )
    print(f"wrote predictions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    mcfg = cfg.match
    if args.similarity:
        mcfg = replace(mcfg, similarity=args.similarity, match_threshold=None)
    if args.threshold is not None:
        mcfg = replace(mcfg, match_threshold=args.threshold)
    report = metrics.evaluate(args.gt, args.pred, mcfg)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(report.to_json())
    table = report.to_table()
    args.report.with_suffix(".txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_check_gradients(args, cfg) -> int:
    if args.trials == 0:
        print("no trials requested")
        return EXIT_OK
    results = gradcheck.check_gradients(args.trials, args.seed, flip_sign=args.inject_sign_error)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.loss:<7} trials={r.trials} failures={r.failures} worst_rel_err={r.worst_rel_err:.2e}")
    ok = all(r.passed for r in results)
    print("all gradient checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_plot(args, cfg) -> int:
    from . import plotting

    args.out.mkdir(parents=True, exist_ok=True)
    if args.report:
        written = plotting.plot_report(args.report, args.out)
    else:
        if not args.dataset.is_dir():
            raise DatasetError(f"{args.dataset}: not a directory")
        if (args.dataset / "gt.csv").exists():
            seq_dirs = [args.dataset]
        else:
            seq_dirs = [args.dataset / s for s in dataset_io.list_sequences(args.dataset)]
        if not seq_dirs:
            print(f"no sequences found under {args.dataset}; nothing to plot")
            return EXIT_OK
        written = []
        for seq in seq_dirs[:args.max_sequences]:
            pred = args.pred / f"{seq.name}.csv" if args.pred else None
            written += plotting.plot_sequence(seq, args.out, pred)
    print(f"wrote {len(written)} figures to {args.out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "render": cmd_render,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "check-gradients": cmd_check_gradients,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
