"""featexport command line: export FMAP features, or build seeded test weights."""

from __future__ import annotations

import argparse
import logging
import sys

from .exporter import WeightsMissingError, export, make_test_weights

log = logging.getLogger("featexport")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    ap = argparse.ArgumentParser(prog="featexport")
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export", help="write FMAP features for train images")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--level", choices=("low", "high"), required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--weights", required=True, help="local backbone weights dir")

    w = sub.add_parser("make-test-weights",
                       help="create a small seeded random backbone for tests")
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--hidden", type=int, default=384)
    w.add_argument("--layers", type=int, default=2)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        if args.command == "export":
            skipped = export(args.data, args.level, args.out, args.weights)
            if skipped:
                log.error("%d image(s) skipped", skipped)
                return 1
            return 0
        make_test_weights(args.out, seed=args.seed, hidden=args.hidden,
                          layers=args.layers)
        return 0
    except (WeightsMissingError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
