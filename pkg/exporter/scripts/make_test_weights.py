"""Generate a synthetic weights checkpoint for offline runs and tests."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from promkit_exporter.models import make_synthetic_weights, save_weights


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    save_weights(make_synthetic_weights(args.seed), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
