"""Command-line entry point: ``al-seqtag {run,report,plot,validate,synth}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .corpus import (CONLL2003, SCHEMES, WORD_POS_TAG, WORD_TAG, CorpusFormatError, SynthConfigError,
                     SynthSpec, corpus_stats, iob2_violations, parse_conll, synth_corpus, write_conll)
from .engine import ExperimentError, load_records, record_paths, run_experiment
from .metrics import AggregationError
from .reporting import (curves_from_records, f1_table, read_rows_csv, record_rows, render_svg,
                        series_from_rows, timing_table, write_rows_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

COLUMN_FORMATS = {"word-tag": WORD_TAG, "word-pos-tag": WORD_POS_TAG, "conll2003": CONLL2003}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# -- run -----------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_USAGE)
    except ConfigError as exc:
        raise CliError("invalid config:\n  " + "\n  ".join(exc.problems), EXIT_USAGE)
    if args.seed is not None:
        config = dataclasses.replace(config, base_seed=args.seed)
    out = Path(args.out or config.output_dir)
    seeds = [config.base_seed + r for r in range(config.repeats)]
    for s in seeds:
        if record_paths(out, config.hash, s)[0].exists() and not args.force:
            print(f"seed {s}: skipped (record exists)")
    try:
        records, curve = run_experiment(config, out_dir=out, force=args.force)
    except (CorpusFormatError, SynthConfigError, FileNotFoundError) as exc:
        raise CliError(f"data: {exc}", EXIT_DATA)
    except ExperimentError as exc:
        cause = exc.__cause__
        if isinstance(cause, (CorpusFormatError, SynthConfigError, FileNotFoundError)):
            raise CliError(f"data: {cause}", EXIT_DATA)
        raise CliError(str(exc), EXIT_RUNTIME)

    curve_path = out / config.hash / "curve.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        write_rows_csv(record_rows(records), fh)
    print(f"{config.label}  ({len(records)} repeat(s), config {config.hash})")
    print(f1_table([curve]))
    last = curve.points[-1]
    print(f"final: {100 * last.labeled_token_fraction:.1f}% of tokens labelled, "
          f"F1 {100 * last.f1_mean:.2f} ± {100 * last.f1_std:.2f}")
    print(f"records: {out / config.hash}")
    print(f"curve: {curve_path}")
    return EXIT_OK


# -- report / plot ---------------------------------------------------------------

def _records_or_fail(path: Path):
    if not path.is_dir():
        raise CliError(f"not a directory: {path}", EXIT_USAGE)
    records = load_records(path)
    if not records:
        raise CliError(f"no complete run records under {path}", EXIT_DATA)
    return records


def cmd_report(args) -> int:
    root = Path(args.records)
    records = _records_or_fail(root)
    try:
        curves = curves_from_records(records)
    except AggregationError as exc:
        raise CliError(f"cannot aggregate: {exc}", EXIT_DATA)
    print("span F1 (mean ± std over repeats) by iteration")
    print(f1_table(curves))
    print()
    print("seconds per iteration (mean over repeats)")
    print(timing_table(curves))
    csv_path = Path(args.csv) if args.csv else root / "report.csv"
    buf = io.StringIO()
    write_rows_csv(record_rows(records), buf)
    try:
        csv_path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {csv_path}: {exc}", EXIT_RUNTIME)
    print(f"\ncsv: {csv_path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        rows = record_rows(_records_or_fail(src))
    elif src.is_file():
        try:
            rows = read_rows_csv(src)
        except (ValueError, OSError) as exc:
            raise CliError(f"cannot read {src}: {exc}", EXIT_DATA)
    else:
        raise CliError(f"no such file or directory: {src}", EXIT_USAGE)
    if not rows:
        raise CliError(f"nothing to plot in {src}", EXIT_DATA)
    try:
        svg = render_svg(series_from_rows(rows), title=args.title or "")
    except (AggregationError, ValueError, KeyError) as exc:
        raise CliError(f"cannot plot: {exc}", EXIT_DATA)
    try:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    except OSError as exc:
        raise CliError(f"cannot write {args.output}: {exc}", EXIT_RUNTIME)
    print(f"wrote {args.output}")
    return EXIT_OK


# -- validate / synth ---------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        corpus = parse_conll(args.path, COLUMN_FORMATS[args.columns], args.scheme)
    except OSError as exc:
        raise CliError(f"cannot read {args.path}: {exc}", EXIT_DATA)
    except CorpusFormatError as exc:
        raise CliError(f"{args.path}: {exc}", EXIT_DATA)
    stats = corpus_stats(corpus)
    rows = [("# OF TOKENS", stats["tokens"]), ("# OF SENTENCES", stats["sentences"])]
    rows += [(t, n) for t, n in sorted(stats["entities"].items())]
    w = max(len(r[0]) for r in rows)
    print(f"{'':{w}}  {Path(args.path).name}")
    for name, n in rows:
        print(f"{name:{w}}  {n}")
    n_bad = 0
    if args.scheme == "IOB2":
        for s in corpus.sentences:
            bad = iob2_violations(s.tags)
            if bad:
                n_bad += len(bad)
                print(f"warning: sentence {s.id}: I- tag without preceding B-/I- of the same "
                      f"type at positions {bad}", file=sys.stderr)
    if n_bad:
        print(f"{n_bad} IOB2 violation(s)", file=sys.stderr)
        if args.strict:
            return EXIT_DATA
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(size=args.size, seed=args.seed, n_types=args.types, vocab_size=args.vocab)
    try:
        corpus = synth_corpus(spec)
    except SynthConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    write_conll(corpus, args.output)
    print(f"wrote {len(corpus)} sentences to {args.output}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="al-seqtag", description="Emulated active learning for sequence tagging.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--force", action="store_true", help="recompute even if records exist")
    r.add_argument("--seed", type=int, help="override base_seed")
    r.add_argument("--out", help="output directory (default: config output_dir)")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="tables of F1 and timing from run records")
    rep.add_argument("records")
    rep.add_argument("--csv", help="CSV output path (default: <records>/report.csv)")
    rep.set_defaults(func=cmd_report)

    pl = sub.add_parser("plot", help="SVG learning curves from a records dir or report CSV")
    pl.add_argument("input")
    pl.add_argument("-o", "--output", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("validate", help="counts and scheme checks for a column file")
    v.add_argument("path")
    v.add_argument("--scheme", choices=SCHEMES, default="IOB2")
    v.add_argument("--columns", choices=sorted(COLUMN_FORMATS), default="word-tag")
    v.add_argument("--strict", action="store_true", help="exit 2 on scheme violations")
    v.set_defaults(func=cmd_validate)

    sy = sub.add_parser("synth", help="write a synthetic corpus in word-tag format")
    sy.add_argument("output")
    sy.add_argument("--size", type=int, default=2000)
    sy.add_argument("--seed", type=int, default=7)
    sy.add_argument("--types", type=int, default=5)
    sy.add_argument("--vocab", type=int, default=3000)
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
