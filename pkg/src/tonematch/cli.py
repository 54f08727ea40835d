"""Command-line entry point: ``tonematch <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .dataset import DatasetError, RANK_HEADER, build_dataset, dataset_manifest, default_jobs, load_pairs, rank_all
from .dataset import AugmentSpec, read_csv_rows, read_dataset_cfg
from .hdrio import HdrFormatError, read_hdr, read_ldr, write_png8
from .image import ImageError, luminance
from .nn.autograd import NonFiniteError
from .nn.checkpoint import CheckpointError
from .stats import REPORT_HEADER, VoteError, read_votes, report_rows, thresholds
from .tmo import SolverDivergedError, TmoError, TmoId, apply_tmo_color, describe_table, resolve_params
from .tmqi import CSV_HEADER, TmqiConstants, tmqi

log = logging.getLogger("tonematch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# validation helpers (run before any file is touched)


def _parse_ops(text: str) -> list:
    if text.strip().lower() == "all":
        return list(TmoId)
    try:
        ops = [TmoId.parse(t.strip()) for t in text.split(",") if t.strip()]
    except TmoError as exc:
        raise UsageError(str(exc)) from None
    if not ops:
        raise UsageError("--ops names no operators")
    return ops


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--param {k}: {v!r} is not a number") from None
    return out


def _need_file(path, flag):
    if not Path(path).is_file():
        raise UsageError(f"{flag} {path}: no such file")


def _need_dir(path, flag):
    if not Path(path).is_dir():
        raise UsageError(f"{flag} {path}: no such directory")


def _need_parent(path, flag):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"{flag} {path}: directory {parent} does not exist")


def _constants(args) -> TmqiConstants:
    return TmqiConstants(hdr_scaling=args.hdr_scaling)


def _check_sat(s):
    if not 0.0 <= s <= 1.0:
        raise UsageError(f"--sat must lie in [0, 1], got {s}")


# --------------------------------------------------------------------------
# commands


def cmd_apply(args) -> int:
    params = _parse_params(args.param)
    try:
        op = TmoId.parse(args.op)
        resolve_params(op, params)
    except TmoError as exc:
        raise UsageError(str(exc)) from None
    _check_sat(args.sat)
    _need_file(args.input, "--in")
    _need_parent(args.out, "--out")
    hdr = read_hdr(args.input)
    write_png8(apply_tmo_color(op, params, hdr, args.sat), args.out)
    print(f"{args.out}: {op.value} {hdr.width}x{hdr.height}")
    return EXIT_OK


def cmd_tmqi(args) -> int:
    _need_file(args.hdr, "--hdr")
    _need_file(args.ldr, "--ldr")
    _need_parent(args.report, "--report")
    hdr_lum = luminance(read_hdr(args.hdr))
    ldr_lum = luminance(read_ldr(args.ldr))
    if hdr_lum.shape != ldr_lum.shape:
        raise DatasetError(f"{args.ldr}: size {ldr_lum.shape} does not match {args.hdr} size {hdr_lum.shape}")
    rep = tmqi(hdr_lum, ldr_lum, _constants(args))
    report.write_csv(args.report, CSV_HEADER, [rep.csv_row(Path(args.hdr).stem, Path(args.ldr).name)], args.seed)
    print(f"S={rep.structural:.6f} N={rep.naturalness:.6f} Q={rep.score:.6f}")
    return EXIT_OK


def cmd_rank(args) -> int:
    ops = _parse_ops(args.ops)
    _need_dir(args.input, "--in")
    _need_parent(args.report, "--report")
    hist_path = Path(args.hist) if args.hist else report.figure_path(args.report, "_hist").with_suffix(".csv")
    fig_path = Path(args.figure) if args.figure else report.figure_path(args.report, "_hist")
    entries, diagnostics = dataset_manifest(args.input)
    for d in diagnostics:
        print(f"skipped {d}", file=sys.stderr)
    if not entries:
        raise DatasetError(f"{args.input}: no readable HDR scenes")
    records = rank_all(entries, ops, args.jobs, _constants(args))
    rows = [row for rec in records for row in rec.csv_rows()]
    report.write_csv(args.report, RANK_HEADER, rows, args.seed)
    scores = {op.value: [e.report.score for rec in records for e in rec.entries if e.tmo == op and e.ok] for op in ops}
    targets = [rec.target_entry().report.score for rec in records]
    header, hist_rows, edges, _ = report.score_histogram(scores, targets)
    report.write_csv(hist_path, header, hist_rows, args.seed)
    report.plot_score_histogram(fig_path, edges, scores, targets)
    print(f"{args.report}: {len(records)} scenes x {len(ops)} operators; histogram {hist_path}, figure {fig_path}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    ops = _parse_ops(args.ops)
    if args.scale_div < 1:
        raise UsageError(f"--scale-div must be >= 1, got {args.scale_div}")
    _need_dir(args.input, "--in")
    summary = build_dataset(args.input, args.cache, ops, args.jobs, args.scale_div, args.seed,
                            _constants(args))
    for d in summary["diagnostics"]:
        print(f"skipped {d}", file=sys.stderr)
    if summary["scenes"] == 0:
        raise DatasetError(f"{args.input}: no usable scenes")
    print(f"{args.cache}: {summary['scenes']} scenes ({summary['ranked']} ranked, {summary['reused']} cached)")
    return EXIT_OK


def cmd_train(args) -> int:
    from .gan.train import Trainer, format_config, parse_config

    _need_file(args.config, "--config")
    _need_dir(args.data, "--data")
    overrides = {"seed": args.seed} if args.seed is not None else {}
    try:
        cfg = parse_config(Path(args.config).read_text(), **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"--config {args.config}: {exc}") from None
    pairs = load_pairs(args.data)
    spec = None
    if cfg.augment:
        geo = read_dataset_cfg(args.data)
        key = cfg.scale
        if f"{key}_crop" in geo:
            spec = AugmentSpec((geo[f"{key}_resize_h"], geo[f"{key}_resize_w"]),
                               (geo[f"{key}_crop"], geo[f"{key}_crop"]), cfg.flip_prob, cfg.seed)
        else:
            spec = AugmentSpec.for_scale(key, cfg.scale_div, cfg.flip_prob, cfg.seed)
    ckpt_dir = Path(args.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (ckpt_dir / "train.cfg").write_text(f"# seed={cfg.seed}\n" + format_config(cfg))
    trainer = Trainer.resume(cfg, ckpt_dir)
    reports = trainer.fit(pairs, spec, ckpt_dir / "loss.csv", args.max_steps)
    final = trainer.save(ckpt_dir / "latest.dtmo")
    rows = read_csv_rows(ckpt_dir / "loss.csv") if (ckpt_dir / "loss.csv").exists() else []
    if rows:
        report.plot_losses(ckpt_dir / "loss.png", rows)
    print(f"{final}: {len(reports)} steps this run, {trainer.step} total")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .gan.infer import infer, load_generator, time_inference

    _check_sat(args.sat)
    _need_file(args.ckpt, "--ckpt")
    _need_file(args.input, "--in")
    _need_parent(args.out, "--out")
    G = load_generator(args.ckpt)
    hdr = read_hdr(args.input)
    if args.time:
        out, secs = time_inference(G, hdr, 10, args.sat)
        print(f"mean wall time over 10 runs: {secs:.4f} s ({hdr.width}x{hdr.height})")
    else:
        out = infer(G, hdr, args.sat)
    write_png8(out, args.out)
    print(f"{args.out}: {hdr.width}x{hdr.height}")
    return EXIT_OK


def cmd_bt(args) -> int:
    if not 0.5 < args.level < 1.0:
        raise UsageError(f"--level must lie in (0.5, 1), got {args.level}")
    _need_file(args.votes, "--votes")
    _need_parent(args.report, "--report")
    fig_path = Path(args.figure) if args.figure else report.figure_path(args.report)
    records = read_votes(args.votes)
    rows = report_rows(records, args.level)
    report.write_csv(args.report, REPORT_HEADER, rows, args.seed)
    lines = {}
    if records and len({v.n for v in records}) == 1:
        hi, lo = thresholds(records[0].n, args.level)
        lines = {"favored_line": hi / records[0].n, "disfavored_line": lo / records[0].n}
    report.plot_preferences(fig_path, [r[0] for r in rows], [float(r[5]) for r in rows], [r[6] for r in rows], **lines)
    print(f"{args.report}: {len(rows)} scenes; figure {fig_path}")
    return EXIT_OK


def cmd_describe(args) -> int:
    if not (args.ops or args.arch):
        raise UsageError("describe needs --ops and/or --arch")
    if args.ops:
        print("operator,parameter,default")
        for op, key, value in describe_table():
            print(f"{op},{key},{value:g}")
    if args.arch:
        from .gan.models import DiscriminatorConfig, GeneratorConfig, describe_architecture

        print(describe_architecture(GeneratorConfig(args.scale, args.width), DiscriminatorConfig(args.scale, args.width)))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tonematch", description="HDR tone mapping: classical operators, TMQI, learned operator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0 if name != "train" else None,
                        help="recorded in report headers" + ("; overrides the config seed" if name == "train" else ""))
        return sp

    sp = add("apply", cmd_apply, "tone-map an HDR file with one classical operator")
    sp.add_argument("--op", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sat", type=float, default=1.0)
    sp.add_argument("--param", action="append", metavar="KEY=VALUE")

    sp = add("tmqi", cmd_tmqi, "score a tone-mapped image against its HDR source")
    sp.add_argument("--hdr", required=True)
    sp.add_argument("--ldr", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--hdr-scaling", choices=("linear", "log"), default="linear",
                    help="how HDR luminance is mapped to 0-255 before TMQI statistics")

    sp = add("rank", cmd_rank, "rank operators per scene by TMQI")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--ops", default="all")
    sp.add_argument("--report", required=True)
    sp.add_argument("--hist", help="histogram CSV (default <report>_hist.csv)")
    sp.add_argument("--figure", help="figure PNG (default <report>_hist.png)")
    sp.add_argument("--jobs", type=int, default=default_jobs())
    sp.add_argument("--hdr-scaling", choices=("linear", "log"), default="linear",
                    help="how HDR luminance is mapped to 0-255 before TMQI statistics")

    sp = add("build-dataset", cmd_build_dataset, "rank scenes and cache training targets")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--ops", default="all")
    sp.add_argument("--scale-div", type=int, default=1)
    sp.add_argument("--jobs", type=int, default=default_jobs())
    sp.add_argument("--hdr-scaling", choices=("linear", "log"), default="linear",
                    help="how HDR luminance is mapped to 0-255 before TMQI statistics")

    sp = add("train", cmd_train, "train (or resume) the generator")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-dir", required=True)
    sp.add_argument("--max-steps", type=int, help="stop after this many steps in this invocation")

    sp = add("infer", cmd_infer, "tone-map an HDR file with a trained generator")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sat", type=float, default=1.0)
    sp.add_argument("--time", action="store_true", help="report mean wall time over 10 runs")

    sp = add("bt", cmd_bt, "preference probabilities and significance of pairwise votes")
    sp.add_argument("--votes", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--figure", help="figure PNG (default <report>.png)")
    sp.add_argument("--level", type=float, default=0.95)

    sp = add("describe", cmd_describe, "print operator defaults or the network architecture table")
    sp.add_argument("--ops", action="store_true")
    sp.add_argument("--arch", action="store_true")
    sp.add_argument("--scale", choices=("single", "multi"), default="single")
    sp.add_argument("--width", type=int, default=8)
    return p


_DATA_ERRORS = (HdrFormatError, ImageError, DatasetError, VoteError, CheckpointError, OSError)
_NUMERIC_ERRORS = (SolverDivergedError, NonFiniteError, ArithmeticError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if hasattr(args, "jobs") and args.jobs < 1:
        print(f"--jobs must be >= 1, got {args.jobs}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with np.errstate(all="ignore"):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
