"""Command line for block-wise metric export.

    promkit-export --metric dists --sr a.png --ref b.png --out m.fmap

Exit codes: 0 success, 1 bad input, 2 I/O failure.
"""

import argparse
import sys

from .export import make_job, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promkit-export", description=__doc__)
    parser.add_argument("--metric", required=True, choices=("dists", "lpips"))
    parser.add_argument("--sr", required=True, help="test image PNG")
    parser.add_argument("--ref", required=True, help="reference image PNG")
    parser.add_argument("--weights", default=None, help="checkpoint path (default: env)")
    parser.add_argument("--out", required=True, help="output FMAP path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        export(make_job(args.metric, args.sr, args.ref, args.out), args.weights)
    except (ValueError, RuntimeError) as err:
        print(f"promkit-export: error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"promkit-export: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
