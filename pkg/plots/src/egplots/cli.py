"""plot-curves: render labeled metrics CSVs into one comparison figure."""

import argparse
import sys

from . import curves


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plot-curves",
        description="Draw per-worker mean lines with min-max bands from "
        "training metrics CSVs.",
    )
    parser.add_argument("--metric", default="val_acc", help="per-worker column family (default val_acc)")
    parser.add_argument("--out", required=True, help="output PNG path")
    parser.add_argument("pairs", nargs="+", metavar="LABEL=CSV", help="labeled input files")
    args = parser.parse_args(argv)

    labeled = []
    for pair in args.pairs:
        label, sep, path = pair.partition("=")
        if not sep or not label or not path:
            print(f"error: {pair!r} must look like LABEL=path.csv", file=sys.stderr)
            return 2
        labeled.append((label, path))

    try:
        bundles = curves.render_curves(labeled, args.out, metric=args.metric)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    workers = ", ".join(f"{b.label}: {len(b.series)} workers" for b in bundles)
    print(f"wrote {args.out} ({workers})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
