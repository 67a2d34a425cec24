"""Regenerate the golden evaluation fixture under tests/fixtures/eval.

Writes a four-record dataset (masks, heatmaps, manifest) plus the report
the evaluate subcommand must reproduce byte for byte. Deterministic: the
same seed always regenerates identical files.
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from promkit import save_mask, write_fmap
from promkit.core import load_manifest
from promkit.evaluation import EvalConfig, evaluate

SIZE = 16
PROMINENCES = [0.9, 0.7, 0.4, 0.55]


def build(out_dir: Path) -> None:
    rng = np.random.default_rng(101)
    out_dir.mkdir(parents=True, exist_ok=True)
    heat_dir = out_dir / "heatmaps"
    heat_dir.mkdir(exist_ok=True)
    entries = []
    for i, prominence in enumerate(PROMINENCES):
        rid = f"img{i:02d}"
        mask = np.zeros((SIZE, SIZE), dtype=bool)
        top, left = rng.integers(1, 8, size=2)
        height, width = rng.integers(3, 7, size=2)
        mask[top : top + height, left : left + width] = True
        save_mask(mask, out_dir / f"{rid}_mask.png")
        # noisy heatmap correlated with the mask; signal and noise bands
        # overlap in [0.45, 0.5) so no threshold is trivially perfect
        heat = np.clip(0.45 * mask + rng.uniform(0.0, 0.5, size=mask.shape), 0.0, 1.0)
        write_fmap(heat, heat_dir / f"{rid}.fmap")
        entries.append(
            {
                "id": rid,
                "sr_method": "fixture",
                "lr_path": f"{rid}_lr.png",
                "sr_path": f"{rid}_sr.png",
                "reference_path": f"{rid}_ref.png",
                "mask_path": f"{rid}_mask.png",
                "prominence": prominence,
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2) + "\n")
    report = evaluate(load_manifest(manifest), heat_dir, EvalConfig())
    (out_dir / "golden_report.json").write_text(report.to_json_text())
    (out_dir / "golden_report.csv").write_text(report.to_csv_text())


def main() -> int:
    root = Path(__file__).resolve().parents[1]
    build(root / "tests" / "fixtures" / "eval")
    return 0


if __name__ == "__main__":
    sys.exit(main())
