import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopdet.detect import Detection, GroundTruth, iou
from coopdet.evalkit import average_precision, compare, evaluate, match, pr_csv, report_csv


def oracle_match(dets, gts, thr):
    """Exhaustive form of the greedy rule: at each rank, scan every (gt, IoU) pair."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    used = set()
    flags = []
    for i in order:
        d = dets[i]
        cands = [(iou(d.box, g.box), -j, j) for j, g in enumerate(gts)
                 if j not in used and g.cls == d.cls and iou(d.box, g.box) >= thr]
        if cands:
            used.add(max(cands)[2])
        flags.append(bool(cands))
    return flags


def oracle_ap(flags, gt_count):
    """Area under the interpolated precision step function, evaluated rank by rank."""
    if gt_count == 0:
        return 1.0 if not flags else 0.0
    n = len(flags)
    prec = [sum(flags[:i + 1]) / (i + 1) for i in range(n)]
    rec = [sum(flags[:i + 1]) / gt_count for i in range(n)]
    total = 0.0
    for i in range(n):
        if flags[i]:
            total += (1 / gt_count) * max(prec[j] for j in range(n) if rec[j] >= rec[i])
    return total


def test_hand_case_five_sixths():
    assert average_precision([True, False, True], 2) == pytest.approx(5 / 6)


def test_ap_edge_cases():
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([], 3) == 0.0
    assert average_precision([], 0) == 1.0
    assert average_precision([False], 0) == 0.0
    with pytest.raises(ValueError):
        average_precision([], -1)


def test_ap_oracle_exhaustive_small():
    for n in range(7):
        for flags in itertools.product([False, True], repeat=n):
            for gt in range(sum(flags), sum(flags) + 3):
                assert average_precision(list(flags), gt) == pytest.approx(oracle_ap(list(flags), gt), abs=1e-12)


def test_two_detections_one_gt():
    gt = [GroundTruth(0, 0, 0, 2, 2)]
    ordered, flags = match([Detection(0, 0.5, 0, 0, 2, 2), Detection(0, 0.9, 0.1, 0, 2, 2)], gt, 0.5)
    assert [d.confidence for d in ordered] == [0.9, 0.5]
    assert flags == [True, False]


def test_match_prefers_higher_iou_gt():
    gts = [GroundTruth(0, 0.5, 0, 2, 2), GroundTruth(0, 0.1, 0, 2, 2)]
    _, flags = match([Detection(0, 0.9, 0, 0, 2, 2), Detection(0, 0.8, 0.6, 0, 2, 2)], gts, 0.5)
    assert flags == [True, True]


def test_class_must_agree():
    _, flags = match([Detection(1, 0.9, 0, 0, 2, 2)], [GroundTruth(0, 0, 0, 2, 2)], 0.1)
    assert flags == [False]


grid_pos = st.sampled_from([0.0, 0.3, 0.6, 1.0, 2.0])
dets_st = st.lists(st.builds(Detection, st.integers(0, 1), st.sampled_from([0.2, 0.5, 0.7, 0.9]),
                             grid_pos, grid_pos, st.just(1.0), st.just(1.0)), max_size=6)
gts_st = st.lists(st.builds(GroundTruth, st.integers(0, 1), grid_pos, grid_pos, st.just(1.0), st.just(1.0)),
                  max_size=4)


@settings(max_examples=300, deadline=None)
@given(dets_st, gts_st, st.sampled_from([0.3, 0.5, 0.7]))
def test_match_oracle(dets, gts, thr):
    _, flags = match(dets, gts, thr)
    assert flags == oracle_match(dets, gts, thr)


@settings(max_examples=100, deadline=None)
@given(dets_st, gts_st)
def test_ap_invariant_under_monotone_confidence_map(dets, gts):
    a = evaluate([(dets, gts)], 0.5)
    warped = [Detection(d.cls, d.confidence ** 3 / 7, d.cx, d.cy, d.w, d.h) for d in dets]
    b = evaluate([(warped, gts)], 0.5)
    assert [a.ap(c) for c in (0, 1)] == [b.ap(c) for c in (0, 1)]


@settings(max_examples=100, deadline=None)
@given(dets_st, gts_st, st.integers(0, 1))
def test_duplicate_fp_never_increases_ap(dets, gts, cls):
    base = evaluate([(dets, gts)], 0.5)
    extra = Detection(cls, 0.95, 50.0, 50.0, 1.0, 1.0)  # matches nothing
    worse = evaluate([(dets + [extra], gts)], 0.5)
    assert worse.ap(cls) <= base.ap(cls) + 1e-12


def test_evaluate_pools_frames_and_counts():
    f1 = ([Detection(0, 0.9, 0, 0, 2, 2)], [GroundTruth(0, 0, 0, 2, 2)])
    f2 = ([Detection(0, 0.8, 0, 0, 2, 2)], [GroundTruth(0, 9, 9, 2, 2), GroundTruth(1, 0, 0, 1, 1)])
    r = evaluate([f1, f2], 0.7)
    v = r.classes[0]
    assert (v.tp, v.fp, v.fn, v.gt_count) == (1, 1, 1, 2)
    assert v.ap == pytest.approx(0.5)
    assert r.ap(1) == 0.0


def test_csv_outputs():
    r = evaluate([([Detection(0, 0.9, 0, 0, 2, 2)], [GroundTruth(0, 0, 0, 2, 2)])], 0.7, model="m", mode="tma")
    lines = report_csv(r).splitlines()
    assert lines[0] == "model,mode,class,iou_threshold,ap,tp,fp,fn,gt_count"
    assert lines[1].startswith("m,tma,vehicle,0.7,1.0,1,0,0,1")
    assert pr_csv(r).splitlines()[1] == "vehicle,0,0.9,1.0,1.0"
    r2 = evaluate([], 0.7, model="a", mode="nma")
    table = compare([r, r2]).splitlines()
    assert table[0] == "model,mode,vehicle_ap,pedestrian_ap"
    assert [row.split(",")[0] for row in table[1:]] == ["a", "m"]
