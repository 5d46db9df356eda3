"""``filmens`` command line: train, eval, diversity, ood, sweep-gain, sweep-members.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid config or
arguments, 3 training divergence (rows finished before it stay on disk).
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import load_config
from .errors import ConfigError, FilmEnsError, TrainingDivergence
from .experiment import Cell, ResultWriter, eval_checkpoint, run_cell, summarize, write_summary

log = logging.getLogger("filmens")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="filmens", description="Train and evaluate FiLM ensembles.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run config file (key = value lines)")
        sp.add_argument("--out", help="output directory (overrides the config's 'out')")
        sp.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 1,2,3")
        sp.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes for independent cells")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("train", help="train one configuration for every seed"))
    common(sub.add_parser("diversity", help="train and report member diversity (needs M >= 2)"))
    ood = common(sub.add_parser("ood", help="train and score an OOD pair with predictive entropy"))
    ood.add_argument("--members", type=_int_list, help="ensemble sizes to compare (default: 1 and model.M)")
    ev = common(sub.add_parser("eval", help="evaluate a saved checkpoint"))
    ev.add_argument("--checkpoint", required=True)
    sg = common(sub.add_parser("sweep-gain", help="one run per (gain, seed)"))
    sg.add_argument("--gains", type=_float_list, required=True)
    sm = common(sub.add_parser("sweep-members", help="one run per (ensemble size, seed)"))
    sm.add_argument("--members", type=_int_list, required=True)
    sm.add_argument("--baseline", choices=["deep-ensemble"], help="also train the explicit ensemble of the same size")
    return p


def _job(args):
    cfg, cell, ckpt_dir = args
    row, _ = run_cell(cfg, cell, ckpt_dir)
    return row


def run_cells(cfg, cells, out_dir, parallel=1, checkpoints=True):
    """Run every cell, streaming rows into ``results.csv``; returns the rows in cell order."""
    writer = ResultWriter(os.path.join(out_dir, "results.csv"))
    ckpt_dir = os.path.join(out_dir, "checkpoints") if checkpoints else None
    jobs = [(cfg, c, ckpt_dir) for c in cells]
    rows = []
    if parallel <= 1:
        for job in jobs:
            row = _job(job)
            writer.write(row)
            rows.append(row)
            log.info("%s seed=%d M=%d rho=%g acc=%.4f ece=%.4f", row.experiment, row.seed, row.M, row.rho,
                     row.accuracy, row.ece)
        return rows
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(_job, j) for j in jobs]
        try:
            for fut in futures:
                # keep cell order so the CSV is identical to a sequential run
                row = fut.result()
                writer.write(row)
                rows.append(row)
        except BaseException:
            for f in futures:
                f.cancel()
            raise
    return rows


def _resolve(args):
    cfg = load_config(args.config)
    if args.seeds:
        if len(set(args.seeds)) != len(args.seeds):
            raise ConfigError(f"--seeds must be distinct, got {args.seeds}")
        cfg.seeds = list(args.seeds)
    if args.parallel < 1:
        raise ConfigError(f"--parallel must be >= 1, got {args.parallel}")
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    return cfg, out


def cmd_train(cfg, out, parallel=1):
    return run_cells(cfg, [Cell(seed=s) for s in cfg.seeds], out, parallel)


def cmd_diversity(cfg, out, parallel=1):
    if cfg.model["M"] < 2:
        raise ConfigError(f"field 'model.M': diversity needs M >= 2, got {cfg.model['M']}")
    return run_cells(cfg, [Cell(seed=s) for s in cfg.seeds], out, parallel)


def cmd_ood(cfg, out, members=None, parallel=1):
    if cfg.dataset["kind"] != "ood_pair":
        raise ConfigError(f"field 'dataset.kind': ood needs 'ood_pair', got {cfg.dataset['kind']!r}")
    members = members or sorted({1, cfg.model["M"]})
    return run_cells(cfg, [Cell(seed=s, M=m) for m in members for s in cfg.seeds], out, parallel)


def cmd_sweep_gain(cfg, out, gains, parallel=1):
    if not gains:
        raise ConfigError("--gains must not be empty")
    bad = [g for g in gains if not g > 0]
    if bad:
        raise ConfigError(f"--gains must be positive, got {bad}")
    rows = run_cells(cfg, [Cell(seed=s, rho=g) for g in gains for s in cfg.seeds], out, parallel)
    write_summary(os.path.join(out, "gain_summary.csv"), summarize(rows, "rho"))
    return rows


def cmd_sweep_members(cfg, out, members, baseline=False, parallel=1):
    if not members:
        raise ConfigError("--members must not be empty")
    bad = [m for m in members if m < 1]
    if bad:
        raise ConfigError(f"--members must all be >= 1, got {bad}")
    cells = [Cell(seed=s, M=m) for m in members for s in cfg.seeds]
    if baseline:
        cells += [Cell(seed=s, M=m, baseline=True) for m in members for s in cfg.seeds]
    rows = run_cells(cfg, cells, out, parallel)
    write_summary(os.path.join(out, "members_summary.csv"), summarize(rows, "M"))
    return rows


def cmd_eval(cfg, out, checkpoint, seeds=None):
    row, report = eval_checkpoint(cfg, checkpoint, seed=seeds[0] if seeds else None, expected_M=cfg.model["M"])
    ResultWriter(os.path.join(out, "eval.csv")).write(row)
    print(report.to_record())
    return [row]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, out = _resolve(args)
        if args.command == "train":
            cmd_train(cfg, out, args.parallel)
        elif args.command == "diversity":
            cmd_diversity(cfg, out, args.parallel)
        elif args.command == "ood":
            cmd_ood(cfg, out, args.members, args.parallel)
        elif args.command == "eval":
            cmd_eval(cfg, out, args.checkpoint, args.seeds)
        elif args.command == "sweep-gain":
            cmd_sweep_gain(cfg, out, args.gains, args.parallel)
        elif args.command == "sweep-members":
            cmd_sweep_members(cfg, out, args.members, args.baseline == "deep-ensemble", args.parallel)
    except ConfigError as exc:
        print(f"filmens: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"filmens: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FilmEnsError, OSError) as exc:
        print(f"filmens: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
