"""Command-line interface: one subcommand per workflow, reproducible outputs.

Every run that writes files also emits a run manifest sidecar recording the
subcommand, resolved configuration, SHA-256 digests of all inputs, the tool
version, and the seed (when one applies). Re-running with byte-identical
inputs and the same configuration reproduces outputs bitwise.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import bootstrap_ci, load_votes, prominence
from .core import (
    PromkitError,
    ValidationError,
    load_image,
    load_manifest,
    load_mask,
    read_fmap,
    save_image,
    save_mask,
    write_fmap,
)
from .evaluation import (
    EvalConfig,
    evaluate,
    grid_from_step,
    load_eval_inputs,
    prominent_subset_eval,
    select_threshold,
)
from .features import FeatureConfig, build_feature_stack, load_feature_dir, save_feature_dir
from .finetune import aggregate_scores, artificial_gt, load_pairs
from .morphology import StructuringElement, components, postprocess_mask
from .regressor import TrainConfig, load_params, predict, save_params, train

FMAP_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
VERSION_LINE = (
    f"promkit {__version__} "
    f"(fmap format v{FMAP_FORMAT_VERSION}, checkpoint format v{CHECKPOINT_FORMAT_VERSION})"
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _default_threads() -> int:
    raw = os.environ.get("PROMKIT_THREADS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"PROMKIT_THREADS must be an integer, got {raw!r}")


def _check_threads(args) -> None:
    if args.threads < 1:
        raise ValidationError("--threads must be >= 1")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(
    manifest_path: Path, subcommand: str, config: dict, inputs, seed: int | None
) -> None:
    doc = {
        "subcommand": subcommand,
        "version": __version__,
        "formats": {
            "fmap": FMAP_FORMAT_VERSION,
            "checkpoint": CHECKPOINT_FORMAT_VERSION,
        },
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in sorted(set(map(str, inputs)))},
    }
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _finish(
    args, out: Path, inputs, seed: int | None = None, manifest_path: Path | None = None
) -> int:
    """Emit the run manifest next to the output target."""
    config = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in vars(args).items()
        if key not in ("func", "subcommand")
    }
    if manifest_path is None:
        manifest_path = Path(str(out) + ".run.json")
    _write_run_manifest(manifest_path, args.subcommand, config, inputs, seed)
    return 0


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Subcommand handlers


def _cmd_features(args) -> int:
    _check_threads(args)
    sr = load_image(args.sr)
    ref = load_image(args.ref)
    lr = load_image(args.lr)
    stack = build_feature_stack(sr, ref, lr, args.dists, args.lpips, FeatureConfig())
    out_dir = Path(args.out) / args.id if args.id else Path(args.out)
    save_feature_dir(stack, out_dir)
    return _finish(
        args,
        out_dir,
        [args.sr, args.ref, args.lr, args.dists, args.lpips],
        manifest_path=out_dir / "run.json",
    )


def _cmd_train(args) -> int:
    _check_threads(args)
    records = load_manifest(args.manifest)
    root = Path(args.features)
    features = {rec.id: load_feature_dir(root / rec.id) for rec in records}
    cfg = TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, seed=args.seed)
    result = train(records, features, cfg)
    out = Path(args.out)
    save_params(result.params, out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    loss_csv.write_text(
        _csv_text(
            ["epoch", "mean_loss"],
            [[k + 1, value] for k, value in enumerate(result.epoch_losses)],
        )
    )
    inputs = [args.manifest]
    inputs += [rec.mask_path for rec in records]
    for rec in records:
        inputs += [root / rec.id / f"{name}.fmap" for name in ("dists", "ssm_jup", "bd_jup")]
    return _finish(args, out, inputs, seed=args.seed)


def _cmd_predict(args) -> int:
    _check_threads(args)
    if args.render and not args.sr:
        raise ValidationError("--render requires --sr for the base image")
    params = load_params(args.model)
    stack = load_feature_dir(args.features)
    heat = predict(params, stack)
    out = Path(args.out)
    write_fmap(heat, out)
    inputs = [args.model] + [
        Path(args.features) / f"{name}.fmap" for name in ("dists", "ssm_jup", "bd_jup")
    ]
    if args.render:
        sr = load_image(args.sr)
        if sr.shape[:2] != heat.shape:
            raise ValidationError(
                f"--sr dimensions {sr.shape[:2]} do not match heatmap {heat.shape}"
            )
        red = np.zeros_like(sr)
        red[:, :, 0] = 1.0
        overlay = (1.0 - heat[:, :, None]) * sr + heat[:, :, None] * red
        save_image(overlay, args.render)
        inputs.append(args.sr)
    return _finish(args, out, inputs)


def _cmd_postprocess(args) -> int:
    _check_threads(args)
    mask = load_mask(args.mask)
    save_mask(postprocess_mask(mask), args.out)
    return _finish(args, Path(args.out), [args.mask])


def _cmd_components(args) -> int:
    _check_threads(args)
    mask = load_mask(args.mask)
    strength_map = read_fmap(args.heatmap) if args.heatmap else None
    found = components(mask, strength_map=strength_map, min_area=args.min_area)
    rows = [
        {
            "bbox": {
                "top": c.bbox[0],
                "left": c.bbox[1],
                "height": c.bbox[2],
                "width": c.bbox[3],
            },
            "area": c.area,
            "strength": c.strength,
        }
        for c in found
    ]
    out = Path(args.out)
    out.write_text(_json_text(rows))
    csv_rows = [
        [i, r["bbox"]["top"], r["bbox"]["left"], r["bbox"]["height"], r["bbox"]["width"],
         r["area"], r["strength"]]
        for i, r in enumerate(rows)
    ]
    out.with_suffix(".csv").write_text(
        _csv_text(["index", "top", "left", "height", "width", "area", "strength"], csv_rows)
    )
    inputs = [args.mask] + ([args.heatmap] if args.heatmap else [])
    return _finish(args, out, inputs)


def _eval_input_files(records, heatmap_dir):
    files = [rec.mask_path for rec in records]
    files += [Path(heatmap_dir) / f"{rec.id}.fmap" for rec in records]
    return files


def _cmd_evaluate(args) -> int:
    _check_threads(args)
    records = load_manifest(args.manifest)
    cfg = EvalConfig(
        kappa=args.kappa,
        threshold_grid=grid_from_step(args.grid_step),
        prominent_cutoff=args.cutoff,
    )
    report = evaluate(records, args.heatmaps, cfg)
    out = Path(args.out)
    out.write_text(report.to_json_text())
    out.with_suffix(".csv").write_text(report.to_csv_text())
    inputs = [args.manifest] + _eval_input_files(records, args.heatmaps)
    return _finish(args, out, inputs)


def _cmd_threshold_search(args) -> int:
    _check_threads(args)
    records = load_manifest(args.manifest)
    grid = grid_from_step(args.grid_step)
    prominences, gts, heats = load_eval_inputs(records, args.heatmaps)
    selected = select_threshold(prominences, gts, heats, grid, args.cutoff)
    rows = []
    for threshold in grid:
        metrics = prominent_subset_eval(prominences, gts, heats, threshold, args.cutoff)
        rows.append(
            {
                "threshold": threshold,
                "precision": metrics.precision,
                "recall": metrics.recall,
                "product": metrics.product,
                "iou": metrics.iou,
            }
        )
    out = Path(args.out)
    out.write_text(
        _json_text(
            {
                "prominent_cutoff": args.cutoff,
                "selected_threshold": selected,
                "rows": rows,
            }
        )
    )
    out.with_suffix(".csv").write_text(
        _csv_text(
            ["threshold", "precision", "recall", "product", "iou"],
            [[r["threshold"], r["precision"], r["recall"], r["product"], r["iou"]] for r in rows],
        )
    )
    inputs = [args.manifest] + _eval_input_files(records, args.heatmaps)
    return _finish(args, out, inputs)


def _cmd_finetune_gt(args) -> int:
    _check_threads(args)
    sr = load_image(args.sr)
    fallback = load_image(args.fallback)
    mask = load_mask(args.mask)
    dilation = None if args.no_dilation else StructuringElement.disc(args.dilation)
    save_image(artificial_gt(sr, fallback, mask, dilation=dilation), args.out)
    return _finish(args, Path(args.out), [args.sr, args.fallback, args.mask])


def _cmd_finetune_score(args) -> int:
    _check_threads(args)
    pairs = load_pairs(args.pairs)
    scores = aggregate_scores([pair for _, pair in pairs])
    from .finetune import add_rem_pix, delta_iou

    per_pair = []
    for rid, pair in pairs:
        add_pix, rem_pix = add_rem_pix(pair)
        per_pair.append(
            {"id": rid, "delta_iou": delta_iou(pair), "add_pix": add_pix, "rem_pix": rem_pix}
        )
    scores["per_pair"] = per_pair
    out = Path(args.out)
    out.write_text(_json_text(scores))
    out.with_suffix(".csv").write_text(
        _csv_text(
            ["id", "delta_iou", "add_pix", "rem_pix"],
            [[r["id"], r["delta_iou"], r["add_pix"], r["rem_pix"]] for r in per_pair],
        )
    )
    base = Path(args.pairs).parent
    inputs = [args.pairs]
    entries = json.loads(Path(args.pairs).read_text())
    for entry in entries:
        for key in ("before_mask", "after_mask", "gt_mask"):
            p = Path(entry[key])
            inputs.append(p if p.is_absolute() else base / p)
    return _finish(args, out, inputs)


def _cmd_bootstrap(args) -> int:
    _check_threads(args)
    vote_sets = load_votes(args.votes)
    csv_rows = []
    images = []
    for votes in vote_sets:
        curve = bootstrap_ci(
            votes, k_max=args.kmax, resamples=args.n, seed=args.seed, level=args.level
        )
        images.append(
            {
                "id": votes.id,
                "prominence": prominence(votes),
                "bounds": [[lower, upper] for lower, upper in curve.bounds],
            }
        )
        for k, (lower, upper) in enumerate(curve.bounds, start=1):
            csv_rows.append([votes.id, k, lower, upper])
    out = Path(args.out)
    out.write_text(_csv_text(["id", "k", "lower", "upper"], csv_rows))
    out.with_suffix(".json").write_text(
        _json_text(
            {
                "k_max": args.kmax,
                "resamples": args.n,
                "level": args.level,
                "seed": args.seed,
                "images": images,
            }
        )
    )
    return _finish(args, out, [args.votes], seed=args.seed)


def _cmd_fmap_inspect(args) -> int:
    heat = read_fmap(args.path)
    print(
        _json_text(
            {
                "path": str(args.path),
                "version": FMAP_FORMAT_VERSION,
                "width": heat.shape[1],
                "height": heat.shape[0],
                "channels": 1,
                "min": float(heat.min()),
                "max": float(heat.max()),
                "mean": float(heat.mean()),
            }
        ),
        end="",
    )
    return 0


def _cmd_fmap_convert(args) -> int:
    src, dst = Path(args.src), Path(args.dst)
    if src.suffix == ".fmap" and dst.suffix == ".png":
        heat = np.clip(read_fmap(src), 0.0, 1.0)
        save_image(np.repeat(heat[:, :, None], 3, axis=2), dst)
    elif src.suffix == ".png" and dst.suffix == ".fmap":
        write_fmap(load_image(src).mean(axis=2), dst)
    else:
        raise ValidationError(
            f"unsupported conversion {src.suffix or '(none)'} -> {dst.suffix or '(none)'}: "
            "use .fmap -> .png or .png -> .fmap"
        )
    return _finish(args, dst, [src])


# --------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="promkit", description=__doc__)
    parser.add_argument("--version", action="version", version=VERSION_LINE)
    common = _Parser(add_help=False)
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker parallelism cap (default: PROMKIT_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("features", parents=[common], help="compute the 3-feature stack")
    p.add_argument("--sr", required=True, help="super-resolved PNG")
    p.add_argument("--ref", required=True, help="reference PNG")
    p.add_argument("--lr", required=True, help="low-resolution PNG")
    p.add_argument("--dists", required=True, help="DISTS feature FMAP")
    p.add_argument("--lpips", required=True, help="LPIPS feature FMAP")
    p.add_argument("--id", default=None, help="write into OUT/ID instead of OUT")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", parents=[common], help="train the prominence regressor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="directory with per-id feature dirs")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-csv", default=None, help="loss trace path (default: OUT.loss.csv)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict a prominence heatmap")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--render", default=None, help="also write a red-overlay PNG")
    p.add_argument("--sr", default=None, help="base image for --render")
    p.add_argument("--out", required=True, help="output FMAP")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("postprocess", parents=[common], help="open-dilate-close a mask")
    p.add_argument("--mask", required=True, help="input mask PNG")
    p.add_argument("--out", required=True, help="output mask PNG")
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("components", parents=[common], help="list connected components")
    p.add_argument("--mask", required=True, help="mask PNG")
    p.add_argument("--heatmap", default=None, help="FMAP for component strength")
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=_cmd_components)

    p = sub.add_parser("evaluate", parents=[common], help="score heatmaps against GT masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--heatmaps", required=True, help="directory of <id>.fmap heatmaps")
    p.add_argument("--kappa", type=float, default=0.3)
    p.add_argument("--cutoff", type=float, default=0.5)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out", required=True, help="report JSON (CSV sidecar alongside)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "threshold-search", parents=[common], help="pick the best binarization threshold"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--cutoff", type=float, default=0.5)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_threshold_search)

    p = sub.add_parser("finetune-gt", parents=[common], help="build an artificial GT image")
    p.add_argument("--sr", required=True)
    p.add_argument("--fallback", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--dilation", type=int, default=21, help="disc diameter in pixels")
    p.add_argument("--no-dilation", action="store_true")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=_cmd_finetune_gt)

    p = sub.add_parser(
        "finetune-score", parents=[common], help="score before/after detection masks"
    )
    p.add_argument("--pairs", required=True, help="JSON array of mask triples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune_score)

    p = sub.add_parser("bootstrap", parents=[common], help="vote-resampling confidence curves")
    p.add_argument("--votes", required=True)
    p.add_argument("--kmax", type=int, default=100)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True, help="curve CSV (JSON sidecar alongside)")
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("fmap", help="inspect or convert FMAP files")
    fmap_sub = p.add_subparsers(dest="fmap_action", required=True)
    q = fmap_sub.add_parser("inspect", parents=[common], help="print header and stats")
    q.add_argument("path")
    q.set_defaults(func=_cmd_fmap_inspect, subcommand="fmap inspect")
    q = fmap_sub.add_parser("convert", parents=[common], help="convert fmap<->png")
    q.add_argument("src")
    q.add_argument("dst")
    q.set_defaults(func=_cmd_fmap_convert, subcommand="fmap convert")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"promkit: error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help / --version
        return int(err.code or 0)
    if getattr(args, "threads", None) is None:
        try:
            args.threads = _default_threads()
        except PromkitError as err:
            print(f"promkit: error: {err}", file=sys.stderr)
            return 1
    try:
        return args.func(args)
    except PromkitError as err:
        print(f"promkit: error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"promkit: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
