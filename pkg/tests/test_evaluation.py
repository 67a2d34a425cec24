import json

import numpy as np
import pytest

from promkit.core import (
    ArtifactRecord,
    ContractError,
    DataError,
    ValidationError,
    save_mask,
    write_fmap,
)
from promkit.evaluation import (
    DEFAULT_GRID,
    ConfusionSums,
    EvalConfig,
    SubsetMetrics,
    combined_score,
    confusion,
    evaluate,
    f1,
    pr_auc,
    prominence_pr,
    prominent_subset_eval,
    select_threshold,
)
from promkit.morphology import binarize

from oracles import eq2_precision_recall, random_confusion_dataset

# combined-score consistency triples: (mean prominence %, confident masks,
# reported combined %); reported values carry two-decimal rounding in both
# the prominence input and the combined output
SUMMARY_TRIPLES = [
    (77.11, 11, 8.48),
    (17.03, 13, 2.21),
    (34.84, 15, 5.23),
    (43.00, 16, 6.88),
    (23.09, 20, 4.62),
    (36.62, 26, 9.52),
    (32.03, 31, 9.93),
    (38.80, 38, 14.75),
    (41.25, 38, 15.67),
]


def sums_from_tuples(tuples):
    return [
        ConfusionSums(tp=tp, fp=fp, fn=fn, tn=tn, prominence=p)
        for tp, fp, fn, tn, p in tuples
    ]


# --------------------------------------------------------------------------
# confusion


def test_confusion_perfect_prediction(rng):
    gt = rng.random((8, 8)) < 0.4
    sums = confusion(gt, gt)
    assert sums.fp == 0 and sums.fn == 0
    assert sums.tp == int(gt.sum())
    assert sums.tp + sums.tn == gt.size


def test_confusion_inverted_prediction(rng):
    gt = rng.random((8, 8)) < 0.4
    sums = confusion(~gt, gt)
    assert sums.tp == 0 and sums.tn == 0
    assert sums.fp + sums.fn == gt.size


def test_confusion_matches_counting_oracle(rng):
    for _ in range(20):
        pred = rng.random((8, 8)) < 0.5
        gt = rng.random((8, 8)) < 0.5
        sums = confusion(pred, gt)
        tp = fp = fn = tn = 0
        for y in range(8):
            for x in range(8):
                if pred[y, x] and gt[y, x]:
                    tp += 1
                elif pred[y, x]:
                    fp += 1
                elif gt[y, x]:
                    fn += 1
                else:
                    tn += 1
        assert (sums.tp, sums.fp, sums.fn, sums.tn) == (tp, fp, fn, tn)


def test_confusion_rejects_shape_mismatch():
    with pytest.raises(ContractError):
        confusion(np.zeros((4, 4), dtype=bool), np.zeros((4, 5), dtype=bool))


def test_confusion_sums_validation():
    with pytest.raises(ContractError):
        ConfusionSums(tp=-1, fp=0, fn=0, tn=0)
    with pytest.raises(ContractError):
        ConfusionSums(tp=0, fp=0, fn=0, tn=0, prominence=1.5)


# --------------------------------------------------------------------------
# prominence-weighted precision/recall


def test_prominence_pr_single_image():
    sums = [ConfusionSums(tp=10, fp=10, fn=0, tn=0, prominence=0.8)]
    prec, rec = prominence_pr(sums, kappa=0.3)
    assert prec == 10 * (0.8 - 0.3) / 20
    assert rec == 10 * (0.8 - 0.3) / 10
    assert abs(prec - 0.25) < 1e-15
    assert abs(rec - 0.5) < 1e-15


def test_prominence_pr_margin_cancels_weight():
    sums = [
        ConfusionSums(tp=7, fp=3, fn=2, tn=1, prominence=0.3),
        ConfusionSums(tp=50, fp=0, fn=9, tn=0, prominence=0.3),
    ]
    prec, rec = prominence_pr(sums, kappa=0.3)
    assert prec == 0.0
    assert rec == 0.0


def test_prominence_pr_perfect_detector_hits_bound():
    # power-of-two TP counts keep the weighted sums exactly representable
    sums = [ConfusionSums(tp=tp, fp=0, fn=0, tn=4, prominence=1.0) for tp in (4, 8, 4)]
    prec, rec = prominence_pr(sums, kappa=0.3)
    assert prec == 0.7
    assert rec == 0.7


def test_prominence_pr_zero_denominators():
    prec, rec = prominence_pr([ConfusionSums(tp=0, fp=0, fn=5, tn=5, prominence=0.9)], 0.3)
    assert prec is None
    assert rec == 0.0
    prec, rec = prominence_pr([ConfusionSums(tp=0, fp=5, fn=0, tn=5, prominence=0.9)], 0.3)
    assert prec == 0.0
    assert rec is None
    prec, rec = prominence_pr([], 0.3)
    assert prec is None and rec is None


def test_prominence_pr_matches_transcribed_oracle(rng):
    for _ in range(50):
        data = random_confusion_dataset(rng)
        prec, rec = prominence_pr(sums_from_tuples(data), kappa=0.3)
        oracle_prec, oracle_rec = eq2_precision_recall(
            [(tp, fp, fn, p) for tp, fp, fn, _, p in data], kappa=0.3
        )
        assert prec == oracle_prec
        assert rec == oracle_rec


def test_prominence_pr_shared_numerator(rng):
    for _ in range(50):
        data = random_confusion_dataset(rng)
        sums = sums_from_tuples(data)
        prec, rec = prominence_pr(sums, kappa=0.3)
        if prec is None or rec is None:
            continue
        den_prec = sum(s.tp + s.fp for s in sums)
        den_rec = sum(s.tp + s.fn for s in sums)
        assert abs(prec * den_prec - rec * den_rec) < 1e-9 * max(1, den_prec, den_rec)


def test_prominence_pr_rejects_bad_kappa():
    with pytest.raises(ContractError):
        prominence_pr([], kappa=1.0)


# --------------------------------------------------------------------------
# f1


def test_f1_equal_inputs_exact():
    assert f1(0.7, 0.7) == 0.7
    assert f1(-0.2, -0.2) == -0.2


def test_f1_direct_arithmetic():
    assert f1(0.25, 0.5) == 1 / 3


def test_f1_zero_pair_is_zero():
    assert f1(0.0, 0.0) == 0.0


def test_f1_cancelling_pair_undefined():
    assert f1(-0.1, 0.1) is None


def test_f1_propagates_undefined():
    assert f1(None, 0.5) is None
    assert f1(0.5, None) is None


def test_f1_bounds_over_random_datasets(rng):
    for _ in range(200):
        data = random_confusion_dataset(rng)
        prec, rec = prominence_pr(sums_from_tuples(data), kappa=0.3)
        value = f1(prec, rec)
        if value is not None:
            assert -0.3 <= value <= 0.7


# --------------------------------------------------------------------------
# pr_auc


def test_pr_auc_constant_precision():
    assert pr_auc([(0.0, 1.0), (1.0, 1.0)]) == 1.0


def test_pr_auc_linear_descent():
    assert pr_auc([(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]) == 0.5


def test_pr_auc_collinear_point_no_change():
    assert pr_auc([(0.0, 1.0), (1.0, 0.0)]) == pr_auc([(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)])


def test_pr_auc_sorts_by_recall():
    assert pr_auc([(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)]) == 0.5


def test_pr_auc_drops_undefined_points():
    assert pr_auc([(0.0, 1.0), (None, 0.4), (0.3, None), (1.0, 1.0)]) == 1.0


def test_pr_auc_too_few_points():
    assert pr_auc([(0.5, 0.5)]) is None
    assert pr_auc([(None, None), (0.5, 0.5)]) is None


# --------------------------------------------------------------------------
# prominent subset


def subset_case(rng, n=4, size=8):
    prominences = [float(rng.uniform(0, 1)) for _ in range(n)]
    gts = [rng.random((size, size)) < 0.4 for _ in range(n)]
    heats = [rng.random((size, size)) for _ in range(n)]
    return prominences, gts, heats


def test_subset_perfect_prediction(rng):
    gts = [rng.random((8, 8)) < 0.4 for _ in range(3)]
    gts[0][0, 0] = True  # subset image must have foreground
    heats = [gt.astype(float) for gt in gts]
    metrics = prominent_subset_eval([0.9, 0.2, 0.7], gts, heats, threshold=0.5)
    assert metrics.precision == 1.0
    assert metrics.recall == 1.0
    assert metrics.product == 1.0
    assert metrics.iou == 1.0


def test_subset_empty_prediction(rng):
    gt = rng.random((8, 8)) < 0.4
    gt[0, 0] = True
    metrics = prominent_subset_eval([0.8], [gt], [np.zeros((8, 8))], threshold=0.5)
    assert metrics.precision is None
    assert metrics.recall == 0.0
    assert metrics.product is None
    assert metrics.iou == 0.0


def test_subset_matches_set_oracle(rng):
    prominences, gts, heats = subset_case(rng)
    threshold = 0.45
    metrics = prominent_subset_eval(prominences, gts, heats, threshold)
    tp = fp = fn = 0
    for prominence, gt, heat in zip(prominences, gts, heats):
        if prominence <= 0.5:
            continue
        pred = heat >= threshold
        tp += int(np.sum(pred & gt))
        fp += int(np.sum(pred & ~gt))
        fn += int(np.sum(~pred & gt))
    if tp + fp + fn == 0:
        pytest.skip("degenerate draw")
    assert metrics.iou == tp / (tp + fp + fn)
    if tp + fp:
        assert metrics.precision == tp / (tp + fp)
    if tp + fn:
        assert metrics.recall == tp / (tp + fn)


def test_subset_cutoff_is_strict(rng):
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, 0] = True
    metrics = prominent_subset_eval([0.5], [gt], [gt.astype(float)], 0.5)
    assert metrics == SubsetMetrics.undefined()


def test_subset_skips_unknown_prominence(rng):
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, 0] = True
    metrics = prominent_subset_eval([None], [gt], [gt.astype(float)], 0.5)
    assert metrics == SubsetMetrics.undefined()


def test_subset_rejects_misaligned_inputs(rng):
    with pytest.raises(ContractError):
        prominent_subset_eval([0.9], [], [], 0.5)


# --------------------------------------------------------------------------
# threshold selection


def test_select_threshold_indicator_heatmap(rng):
    gt = np.zeros((8, 8), dtype=bool)
    gt[2:5, 2:5] = True
    # any threshold in (0, 1] binarizes the indicator back to gt; 0 maps
    # everything to true, which costs precision, so the smallest positive
    # grid point wins
    assert select_threshold([0.9], [gt], [gt.astype(float)], DEFAULT_GRID) == 0.05


def test_select_threshold_single_grid_point(rng):
    gt = np.zeros((4, 4), dtype=bool)
    gt[1, 1] = True
    assert select_threshold([0.8], [gt], [gt.astype(float)], (0.4,)) == 0.4


def test_select_threshold_matches_exhaustive_oracle(rng):
    for _ in range(10):
        prominences, gts, heats = subset_case(rng)
        prominences[0] = 0.9
        best, best_product = None, None
        for threshold in DEFAULT_GRID:
            metrics = prominent_subset_eval(prominences, gts, heats, threshold)
            if metrics.product is None:
                continue
            if best_product is None or metrics.product > best_product:
                best, best_product = threshold, metrics.product
        if best is None:
            continue
        assert select_threshold(prominences, gts, heats, DEFAULT_GRID) == best


def test_select_threshold_tie_takes_smallest(rng):
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, 0] = True
    # all-true heatmap is threshold-independent: every grid point ties
    assert select_threshold([0.9], [gt], [np.ones((4, 4))], DEFAULT_GRID) == 0.0


def test_select_threshold_no_prominent_records(rng):
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, 0] = True
    with pytest.raises(DataError):
        select_threshold([0.2], [gt], [gt.astype(float)], DEFAULT_GRID)


def test_select_threshold_empty_grid(rng):
    with pytest.raises(ContractError):
        select_threshold([0.9], [np.ones((2, 2), dtype=bool)], [np.ones((2, 2))], ())


# --------------------------------------------------------------------------
# combined score


def test_combined_score_reproduces_summary_rows():
    for mean_pct, masks, reported_pct in SUMMARY_TRIPLES:
        score_pct = combined_score(mean_pct / 100.0, masks) * 100.0
        # reported values round both factors to two decimals: allow half a
        # unit in the last place of the output plus the propagated input
        # quantization (0.005 percentage points scaled by masks / 100)
        tolerance = 0.005 + 0.005 * masks / 100.0
        assert abs(score_pct - reported_pct) <= tolerance


def test_combined_score_trivials():
    assert combined_score(0.0, 17) == 0.0
    assert combined_score(0.5, 0) == 0.0


def test_combined_score_validation():
    with pytest.raises(ContractError):
        combined_score(1.5, 3)
    with pytest.raises(ContractError):
        combined_score(0.5, -1)


# --------------------------------------------------------------------------
# evaluate


def write_eval_fixture(tmp_path, specs):
    """specs: list of (id, prominence, gt mask, heatmap). Returns records."""
    heat_dir = tmp_path / "heatmaps"
    heat_dir.mkdir(exist_ok=True)
    records = []
    for rid, prominence, gt, heat in specs:
        mask_path = tmp_path / f"{rid}-mask.png"
        save_mask(gt, mask_path)
        write_fmap(heat, heat_dir / f"{rid}.fmap")
        records.append(
            ArtifactRecord(
                id=rid,
                sr_method="synthetic",
                lr_path=tmp_path / "missing-lr.png",
                sr_path=tmp_path / "missing-sr.png",
                reference_path=tmp_path / "missing-ref.png",
                mask_path=mask_path,
                prominence=prominence,
            )
        )
    return records, heat_dir


def perfect_specs():
    """Heatmap equals prominence inside GT, zero outside; power-of-two areas."""
    specs = []
    for index in range(4):
        gt = np.zeros((8, 8), dtype=bool)
        if index % 2 == 0:
            gt[2:4, 2:4] = True  # 4 px
        else:
            gt[2:6, 2:6] = True  # 16 px
        heat = np.where(gt, 1.0, 0.0)
        specs.append((f"img-{index}", 1.0, gt, heat))
    return specs


def test_evaluate_perfect_detector(tmp_path):
    records, heat_dir = write_eval_fixture(tmp_path, perfect_specs())
    report = evaluate(records, heat_dir)
    for row in report.rows:
        if row.threshold > 0.0:
            assert row.prec_pr == 0.7
            assert row.rec_pr == 0.7
            assert row.f1 == 0.7


def test_evaluate_all_zero_heatmaps(tmp_path, rng):
    specs = []
    for index in range(3):
        gt = rng.random((8, 8)) < 0.4
        gt[0, 0] = True
        specs.append((f"img-{index}", 0.8, gt, np.zeros((8, 8))))
    records, heat_dir = write_eval_fixture(tmp_path, specs)
    report = evaluate(records, heat_dir)
    for row in report.rows:
        if row.threshold > 0.0:
            assert row.rec_pr == 0.0


def test_evaluate_matches_compositional_recomputation(tmp_path, rng):
    specs = []
    for index in range(4):
        gt = rng.random((8, 8)) < 0.4
        heat = np.round(rng.random((8, 8)), 3)
        specs.append((f"img-{index}", float(rng.uniform(0, 1)), gt, heat))
    specs.append(("img-prom", 0.9, specs[0][2], specs[0][3]))
    records, heat_dir = write_eval_fixture(tmp_path, specs)
    cfg = EvalConfig()
    report = evaluate(records, heat_dir, cfg)

    prominences = [s[1] for s in specs]
    gts = [s[2] for s in specs]
    heats = [s[3].astype(np.float32).astype(np.float64) for s in specs]
    for row in report.rows:
        sums = [
            confusion(binarize(h, row.threshold), g, prominence=p)
            for p, g, h in zip(prominences, gts, heats)
        ]
        prec, rec = prominence_pr(sums, cfg.kappa)
        assert row.prec_pr == prec
        assert row.rec_pr == rec
        assert row.f1 == f1(prec, rec)
        subset = prominent_subset_eval(
            prominences, gts, heats, row.threshold, cfg.prominent_cutoff
        )
        assert row.subset == subset
    assert report.pr_auc == pr_auc([(r.rec_pr, r.prec_pr) for r in report.rows])
    assert report.selected_threshold == select_threshold(
        prominences, gts, heats, cfg.threshold_grid, cfg.prominent_cutoff
    )


def test_evaluate_missing_heatmap_names_record(tmp_path):
    records, heat_dir = write_eval_fixture(tmp_path, perfect_specs())
    (heat_dir / "img-2.fmap").unlink()
    with pytest.raises(DataError, match="img-2"):
        evaluate(records, heat_dir)


def test_evaluate_missing_prominence_names_record(tmp_path):
    records, heat_dir = write_eval_fixture(tmp_path, perfect_specs())
    import dataclasses

    records[1] = dataclasses.replace(records[1], prominence=None)
    with pytest.raises(ValidationError, match="img-1"):
        evaluate(records, heat_dir)


def test_evaluate_rejects_out_of_range_heatmap(tmp_path):
    specs = perfect_specs()
    gt = specs[0][2]
    heat = np.where(gt, 2.0, 0.0)
    records, heat_dir = write_eval_fixture(tmp_path, [("img-bad", 1.0, gt, heat)])
    with pytest.raises(DataError, match="img-bad"):
        evaluate(records, heat_dir)


def test_evaluate_requires_records(tmp_path):
    with pytest.raises(ContractError):
        evaluate([], tmp_path)


def test_evaluate_no_prominent_records_leaves_selection_undefined(tmp_path, rng):
    gt = rng.random((8, 8)) < 0.4
    gt[0, 0] = True
    records, heat_dir = write_eval_fixture(tmp_path, [("img-0", 0.3, gt, gt.astype(float))])
    report = evaluate(records, heat_dir)
    assert report.selected_threshold is None
    assert all(row.subset == SubsetMetrics.undefined() for row in report.rows)


def test_evaluate_recall_monotone_when_prominences_above_kappa(tmp_path, rng):
    specs = []
    for index in range(3):
        gt = rng.random((8, 8)) < 0.4
        gt[0, 0] = True
        specs.append((f"img-{index}", float(rng.uniform(0.3, 1.0)), gt, rng.random((8, 8))))
    records, heat_dir = write_eval_fixture(tmp_path, specs)
    report = evaluate(records, heat_dir)
    recalls = [row.rec_pr for row in report.rows]
    assert all(r is not None for r in recalls)
    assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:]))


# --------------------------------------------------------------------------
# report serialization


def test_report_json_well_formed(tmp_path):
    records, heat_dir = write_eval_fixture(tmp_path, perfect_specs())
    report = evaluate(records, heat_dir)
    text = report.to_json_text()
    assert text == report.to_json_text()
    obj = json.loads(text)
    assert obj["kappa"] == 0.3
    assert obj["prominent_cutoff"] == 0.5
    assert len(obj["thresholds"]) == len(DEFAULT_GRID)
    assert obj["thresholds"][1]["f1"] == 0.7
    assert text.endswith("\n")


def test_report_csv_layout(tmp_path):
    records, heat_dir = write_eval_fixture(tmp_path, perfect_specs())
    report = evaluate(records, heat_dir)
    lines = report.to_csv_text().splitlines()
    assert len(lines) == len(DEFAULT_GRID) + 1
    assert lines[0].startswith("threshold,prec_pr,rec_pr,f1,")
    assert lines[2].split(",")[3] == "0.7"


def test_report_csv_empty_cells_for_undefined(tmp_path, rng):
    gt = rng.random((8, 8)) < 0.4
    gt[0, 0] = True
    records, heat_dir = write_eval_fixture(tmp_path, [("img-0", 0.9, gt, np.zeros((8, 8)))])
    report = evaluate(records, heat_dir)
    last = report.to_csv_text().splitlines()[-1]
    assert ",," in last


def test_eval_config_validation():
    with pytest.raises(ContractError):
        EvalConfig(kappa=1.0)
    with pytest.raises(ContractError):
        EvalConfig(threshold_grid=())
    with pytest.raises(ContractError):
        EvalConfig(threshold_grid=(0.5, 0.4))
    with pytest.raises(ContractError):
        EvalConfig(threshold_grid=(0.5, 1.5))
    with pytest.raises(ContractError):
        EvalConfig(prominent_cutoff=-0.1)
