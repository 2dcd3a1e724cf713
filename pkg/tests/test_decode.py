import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from debristrack.decode import (
    HeatmapSpec,
    OracleNoise,
    Peak,
    decode_frame,
    embedding_similarity,
    extract_peaks,
    greedy_match,
    mask_gate,
    optimal_match,
    oracle_detect,
    oracle_detect_with_log,
    pair_endpoints,
    render_gt_embeddings,
    render_gt_heatmap,
    render_gt_offsets,
)
from debristrack.domain import annotate

from conftest import make_state, separated_frame

SPEC = HeatmapSpec()
SIZE = (128, 96)


def _peak(x, y, score=1.0):
    return Peak(float(x), float(y), score, int(x), int(y))


# ---------------------------------------------------------------- rendering

def test_single_debris_unit_peaks():
    hm = render_gt_heatmap([annotate(1, make_state(40, 30, 20, 2, 0.3))], SPEC, SIZE)
    assert hm.shape == (96, 128, 2)
    for c in range(2):
        assert np.count_nonzero(hm[..., c] == 1.0) == 1
        assert hm[..., c].max() == 1.0


def test_close_endpoints_combine_by_max():
    objs = [annotate(1, make_state(40, 30, 20, 2, 0.0)), annotate(2, make_state(41, 40, 20, 2, 0.0))]
    hm = render_gt_heatmap(objs, SPEC, SIZE)
    assert hm.max() <= 1.0
    assert hm[30, 30, 0] == 1.0 and hm[40, 31, 0] == 1.0


def test_isolated_peak_mass():
    sigma = 2.0
    hm = render_gt_heatmap([annotate(1, make_state(60, 48, 40, 2, 0.0))], HeatmapSpec(sigma=sigma), SIZE)
    # the kernel is separable, so its truncated sum is the square of a 1-D sum
    r = math.ceil(3 * sigma)
    one_d = sum(math.exp(-k * k / (2 * sigma ** 2)) for k in range(-r, r + 1))
    assert hm[..., 0].sum() == pytest.approx(one_d ** 2, rel=1e-12)
    assert abs(one_d ** 2 - 2 * math.pi * sigma ** 2) / (2 * math.pi * sigma ** 2) < 0.01


def test_embeddings_and_offsets():
    objs = [annotate(1, make_state(40, 30, 20, 2, 0.0, speed=3)), annotate(2, make_state(80, 60, 20, 2, 0.5, speed=2))]
    el, er = render_gt_embeddings(objs, SIZE, dim=4)
    assert np.all(el[30, 30] == 2.0) and np.all(er[30, 50] == 2.0)
    ol, orr = render_gt_offsets(objs, SIZE)
    assert tuple(ol[30, 30]) == pytest.approx((3, 0))
    assert tuple(orr[30, 50]) == pytest.approx((3, 0))


def test_heatmap_spec_validation():
    for kw in (dict(sigma=0), dict(nms_window=4), dict(nms_window=1), dict(peak_threshold=2)):
        with pytest.raises(ValueError):
            HeatmapSpec(**kw)


# ---------------------------------------------------------------- peaks

def test_decode_of_encode_three_debris():
    rng = np.random.default_rng(0)
    for _ in range(50):
        objs = separated_frame(rng, SIZE, k=3)
        left, right = extract_peaks(render_gt_heatmap(objs, SPEC, SIZE), SPEC)
        assert len(left) == 3 and len(right) == 3
        for o in objs:
            for peaks, pt in ((left, o.endpoints.left), (right, o.endpoints.right)):
                err = min(max(abs(p.x - pt[0]), abs(p.y - pt[1])) for p in peaks)
                assert err <= 0.5


def test_flat_heatmap_has_no_peaks():
    left, right = extract_peaks(np.zeros((20, 20, 2)), SPEC)
    assert left == [] and right == []


def test_two_gaussians_two_px_apart_merge():
    sigma = 2.0
    yy, xx = np.mgrid[0:30, 0:30]
    g = lambda cx: np.exp(-((xx - cx) ** 2 + (yy - 15) ** 2) / (2 * sigma ** 2))
    ch = g(10) + g(12)
    # direct evaluation: the sum is unimodal, its maximum midway at x = 11
    assert ch[15, 11] > ch[15, 10] and ch[15, 11] > ch[15, 12]
    hm = np.stack([ch / ch.max(), np.zeros_like(ch)], axis=-1)
    left, _ = extract_peaks(hm, HeatmapSpec(sigma=sigma, nms_window=5))
    assert len(left) == 1
    assert left[0].px == 11 and left[0].x == pytest.approx(11.0)


def test_plateau_is_not_a_peak():
    hm = np.zeros((10, 10, 2))
    hm[5, 5, 0] = hm[5, 6, 0] = 0.9
    assert extract_peaks(hm, SPEC)[0] == []


def test_peak_on_border_is_not_shifted():
    objs = [annotate(1, make_state(10.0, 0.0, 12, 2, 0.0))]  # y on the first row
    left, right = extract_peaks(render_gt_heatmap(objs, SPEC, SIZE), SPEC)
    assert left[0].y == 0.0 and right[0].y == 0.0
    assert left[0].x == pytest.approx(4.0) and right[0].x == pytest.approx(16.0)


heatmaps = arrays(float, st.tuples(st.integers(3, 12), st.integers(3, 12), st.just(2)),
                  elements=st.floats(0, 1))


@given(heatmaps, st.floats(0, 1), st.floats(0, 1), st.integers(0, 10))
def test_peak_count_bounds_and_monotone(hm, t1, t2, cap):
    lo, hi = sorted((t1, t2))
    a = extract_peaks(hm, HeatmapSpec(peak_threshold=lo, max_peaks=cap))
    b = extract_peaks(hm, HeatmapSpec(peak_threshold=hi, max_peaks=cap))
    for pa, pb in zip(a, b):
        assert len(pa) <= cap and len(pb) <= len(pa)
        assert all(p.score >= lo for p in pa)
        assert [p.score for p in pa] == sorted((p.score for p in pa), reverse=True)


@given(heatmaps)
def test_peaks_are_strict_window_maxima(hm):
    left, right = extract_peaks(hm, SPEC)
    for c, peaks in enumerate((left, right)):
        ch = hm[..., c]
        for p in peaks:
            win = ch[max(0, p.py - 1):p.py + 2, max(0, p.px - 1):p.px + 2]
            assert np.count_nonzero(win >= ch[p.py, p.px]) == 1


# ---------------------------------------------------------------- matching

def _brute_force_min(cost, gate):
    """Largest gated matching, then smallest total cost, by enumeration."""
    n, m = cost.shape
    best = (0, 0.0)
    for r in range(1, min(n, m) + 1):
        for rows in itertools.combinations(range(n), r):
            for cols in itertools.permutations(range(m), r):
                if all(cost[i, j] <= gate for i, j in zip(rows, cols)):
                    total = sum(cost[i, j] for i, j in zip(rows, cols))
                    if r > best[0] or (r == best[0] and total < best[1] - 1e-12):
                        best = (r, total)
    return best


def test_greedy_equals_brute_force_with_margins():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = 4
        perm = rng.permutation(n)
        cost = rng.uniform(0.9, 3.0, (n, n))
        cost[np.arange(n), perm] = rng.uniform(0, 0.4, n)
        pairs = greedy_match(cost, gate=1.0)
        assert sorted(pairs) == sorted(zip(range(n), perm.tolist()))
        assert sum(cost[i, j] for i, j in pairs) == pytest.approx(_brute_force_min(cost, 1.0)[1])


def test_optimal_match_equals_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n, m = rng.integers(1, 6, size=2)
        cost = rng.uniform(0, 2, (n, m))
        pairs = optimal_match(cost, gate=1.0)
        got = (len(pairs), sum(cost[i, j] for i, j in pairs))
        want = _brute_force_min(cost, 1.0)
        assert got[0] == want[0] and got[1] == pytest.approx(want[1])


def test_greedy_tie_break_and_gate():
    assert greedy_match(np.zeros((2, 2)), 1.0) == [(0, 0), (1, 1)]
    assert greedy_match(np.full((2, 2), 5.0), 1.0) == []
    assert greedy_match(np.zeros((0, 3)), 1.0) == []


def test_pair_separable_embeddings():
    rng = np.random.default_rng(3)
    objs = separated_frame(rng, SIZE, k=4)
    hm = render_gt_heatmap(objs, SPEC, SIZE)
    el, er = render_gt_embeddings(objs, SIZE)
    left, right = extract_peaks(hm, SPEC)
    dets = pair_endpoints(left, right, el, er, gate=1.0)
    assert len(dets) == 4
    for d in dets:
        o = min(objs, key=lambda o: math.dist(o.endpoints.left, d.endpoints.left))
        assert math.dist(o.endpoints.right, d.endpoints.right) <= 1.0


def test_pair_single_points():
    el = np.zeros((10, 10, 2))
    er = np.zeros((10, 10, 2))
    dets = pair_endpoints([_peak(1, 1)], [_peak(8, 3)], el, er)
    assert len(dets) == 1 and dets[0].endpoints.left == (1.0, 1.0)
    er[3, 8] = 5.0  # beyond the gate
    assert pair_endpoints([_peak(1, 1)], [_peak(8, 3)], el, er) == []


def test_pair_dim_mismatch():
    with pytest.raises(ValueError):
        embedding_similarity([_peak(1, 1)], [_peak(2, 2)], np.zeros((5, 5, 2)), np.zeros((5, 5, 3)))


def test_pair_swaps_when_geometry_disagrees():
    el = np.zeros((10, 10, 1))
    er = np.zeros((10, 10, 1))
    ol = np.zeros((10, 10, 2))
    orr = np.zeros((10, 10, 2))
    ol[2, 8] = (1, 1)
    orr[2, 1] = (2, 2)
    dets = pair_endpoints([_peak(8, 2)], [_peak(1, 2)], el, er, offset_left=ol, offset_right=orr)
    d = dets[0]
    assert d.endpoints.left == (1.0, 2.0)
    assert d.offset_left == (2.0, 2.0) and d.offset_right == (1.0, 1.0)


def test_decode_frame_optimal_method():
    rng = np.random.default_rng(4)
    objs = separated_frame(rng, SIZE, k=3)
    el, er = render_gt_embeddings(objs, SIZE)
    dets = decode_frame(render_gt_heatmap(objs, SPEC, SIZE), el, er, SPEC, method="optimal")
    assert len(dets) == 3
    with pytest.raises(ValueError):
        decode_frame(render_gt_heatmap(objs, SPEC, SIZE), el, er, SPEC, method="nope")


# ---------------------------------------------------------------- oracle

def test_oracle_zero_noise_is_exact():
    objs = [annotate(i + 1, make_state(20 * i + 10, 30, 12, 2, 0.2 * i, speed=i)) for i in range(4)]
    dets = oracle_detect(objs, OracleNoise(), np.random.default_rng(0))
    assert [d.endpoints for d in dets] == [o.endpoints for o in objs]
    assert [d.offset_left for d in dets] == [o.state.velocity for o in objs]


def test_oracle_drop_all():
    objs = [annotate(1, make_state())]
    dets, dropped = oracle_detect_with_log(objs, OracleNoise(drop_prob=1.0), np.random.default_rng(0))
    assert dets == [] and dropped == [1]


def test_oracle_drop_rate():
    objs = [annotate(i + 1, make_state()) for i in range(100)]
    rng = np.random.default_rng(5)
    kept = sum(len(oracle_detect(objs, OracleNoise(drop_prob=0.3), rng)) for _ in range(100))
    assert abs(1 - kept / 10_000 - 0.3) <= 0.01


def test_oracle_false_positives_and_jitter():
    objs = [annotate(1, make_state())]
    rng = np.random.default_rng(6)
    noise = OracleNoise(endpoint_jitter_std=0.5, false_positive_rate=2.0)
    counts = [len(oracle_detect(objs, noise, rng, size=(64, 64))) - 1 for _ in range(2000)]
    assert np.mean(counts) == pytest.approx(2.0, abs=0.1)
    with pytest.raises(ValueError):
        oracle_detect(objs, noise, rng)
    with pytest.raises(ValueError):
        OracleNoise(drop_prob=1.5)


# ---------------------------------------------------------------- mask gate

def test_mask_gate_identity_and_zero():
    f = np.random.default_rng(0).normal(size=(4, 5, 3))
    assert np.array_equal(mask_gate(f, np.ones((4, 5))), f)
    assert np.array_equal(mask_gate(f, np.zeros((4, 5, 1))), np.zeros_like(f))


def test_mask_gate_loop_oracle():
    rng = np.random.default_rng(1)
    f, m = rng.normal(size=(4, 5, 3)), rng.random((4, 5))
    out = mask_gate(f, m)
    for y in range(4):
        for x in range(5):
            for c in range(3):
                assert out[y, x, c] == f[y, x, c] * m[y, x]


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_mask_gate_bilinear(a, b):
    rng = np.random.default_rng(2)
    f1, f2, m1, m2 = rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 2)), rng.random((3, 3)), rng.random((3, 3))
    assert np.allclose(mask_gate(a * f1 + b * f2, m1), a * mask_gate(f1, m1) + b * mask_gate(f2, m1))
    assert np.allclose(mask_gate(f1, a * m1 + b * m2), a * mask_gate(f1, m1) + b * mask_gate(f1, m2))


def test_mask_gate_shape_errors():
    with pytest.raises(ValueError):
        mask_gate(np.zeros((4, 4, 2)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        mask_gate(np.zeros((4, 4, 2)), np.zeros((4, 4, 2)))
