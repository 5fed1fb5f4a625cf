"""Command-line front end.

Subcommands mirror the experiment protocol: `preprocess` raw files into a
split directory, `run` a training+unlearning experiment, `attack` a finished
experiment, `export-hist` attribute-grouped embedding histograms, and
`synth` to generate a synthetic raw dataset for demos.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import dataio, harness, synth
from .errors import ConfigError, DataError, NumericError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlearn-rec",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse, filter, split, and save a dataset")
    p.add_argument("--raw", required=True, help="raw rating file")
    p.add_argument("--format", default="generic_tsv", choices=dataio.RAW_FORMATS)
    p.add_argument("--min-interactions", type=int, default=5)
    p.add_argument("--n-neg", type=int, default=99)
    p.add_argument("--out", required=True, help="output split directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attr-file", help="raw attribute file (labels per user)")
    p.add_argument("--attr-format", default="tsv", choices=dataio.ATTR_FORMATS)

    p = sub.add_parser("run", help="run a training + unlearning experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="experiment directory (default: auto under results root)")

    p = sub.add_parser("attack", help="attack a finished experiment")
    p.add_argument("--config", required=True, help="attack config JSON")

    p = sub.add_parser("export-hist", help="export attribute-grouped embedding histograms")
    p.add_argument("--exp", required=True, help="experiment directory")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--dims", type=int, nargs="*", default=None)
    p.add_argument("--out", help="output TSV path (default: stdout)")

    p = sub.add_parser("synth", help="generate a synthetic raw dataset")
    p.add_argument("--ratings-out", required=True)
    p.add_argument("--attr-out", required=True)
    p.add_argument("--users", type=int, default=943)
    p.add_argument("--items", type=int, default=1682)
    p.add_argument("--mean-interactions", type=float, default=75.0)
    p.add_argument("--min-interactions", type=int, default=20)
    p.add_argument("--attr-shift", type=float, default=1.4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_preprocess(args) -> int:
    raw = dataio.parse_raw(args.raw, args.format)
    ds = dataio.filter_min_interactions(raw, args.min_interactions)
    split = dataio.leave_one_out_split(ds, n_neg=args.n_neg, seed=args.seed)
    labels = None
    if args.attr_file:
        labels = dataio.load_attributes(args.attr_file, ds.user_ids, fmt=args.attr_format)
    out = dataio.save_split(split, args.out, labels=labels)
    print(f"saved split: {out} ({ds.n_users} users, {ds.n_items} items, "
          f"{split.train.n_interactions} train interactions)")
    return 0


def _cmd_run(args) -> int:
    record = harness.run_experiment(args.config, out_dir=args.out)
    print(f"experiment complete: {record.path}")
    for key, val in sorted(record.rec_report.flat().items()):
        print(f"  {key}={val:.4f}")
    return 0


def _cmd_attack(args) -> int:
    reports = harness.run_attack(args.config)
    for rep in reports:
        auc = "nan" if rep.auc is None else f"{rep.auc:.4f}"
        print(f"attack {rep.kind}: acc={rep.accuracy:.4f} precision={rep.precision:.4f} "
              f"recall={rep.recall:.4f} auc={auc}")
    return 0


def _cmd_export_hist(args) -> int:
    tsv = harness.export_embedding_histograms(args.exp, n_bins=args.bins, dims=args.dims)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(tsv)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(tsv)
    return 0


def _cmd_synth(args) -> int:
    interactions, attrs = synth.generate_synthetic_interactions(
        n_users=args.users, n_items=args.items,
        mean_interactions=args.mean_interactions,
        min_interactions=args.min_interactions,
        attr_shift=args.attr_shift, seed=args.seed)
    synth.write_raw_files(interactions, attrs, args.ratings_out, args.attr_out)
    print(f"wrote {len(interactions)} interactions for {args.users} users")
    return 0


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "run": _cmd_run,
    "attack": _cmd_attack,
    "export-hist": _cmd_export_hist,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
