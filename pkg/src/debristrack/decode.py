"""Endpoint heatmaps to detections, plus the ground-truth renderers and an oracle detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .domain import AnnotatedObject, Detection, EndpointPair, as_grid


@dataclass(frozen=True)
class HeatmapSpec:
    sigma: float = 2.0
    peak_threshold: float = 0.3
    nms_window: int = 3
    max_peaks: int = 100

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not 0.0 <= self.peak_threshold <= 1.0:
            raise ValueError("peak_threshold must be in [0, 1]")
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError(f"nms_window must be an odd integer >= 3, got {self.nms_window}")
        if self.max_peaks < 0:
            raise ValueError("max_peaks must be >= 0")


@dataclass(frozen=True)
class OracleNoise:
    endpoint_jitter_std: float = 0.0
    drop_prob: float = 0.0
    false_positive_rate: float = 0.0

    def __post_init__(self):
        if min(self.endpoint_jitter_std, self.drop_prob, self.false_positive_rate) < 0:
            raise ValueError("oracle noise parameters must be non-negative")
        if self.drop_prob > 1:
            raise ValueError("drop_prob must be <= 1")


@dataclass(frozen=True)
class Peak:
    x: float
    y: float
    score: float
    px: int  # integer peak pixel
    py: int


def _endpoint_pairs(ann_frame) -> list:
    return [o.endpoints if isinstance(o, AnnotatedObject) else o for o in ann_frame]


def _clip_pixel(pt, size) -> tuple:
    w, h = size
    return (int(np.clip(np.rint(pt[0]), 0, w - 1)), int(np.clip(np.rint(pt[1]), 0, h - 1)))


def render_gt_heatmap(ann_frame, spec: HeatmapSpec, size) -> np.ndarray:
    """Two-channel target: channel 0 left endpoints, channel 1 right.

    Each endpoint is snapped to its (clipped) nearest pixel and splatted as an
    unnormalized Gaussian, so the value there is exactly 1; overlapping
    kernels combine by max.
    """
    w, h = size
    hm = np.zeros((h, w, 2))
    r = int(np.ceil(3 * spec.sigma))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    kernel = np.exp(-(xx ** 2 + yy ** 2) / (2 * spec.sigma ** 2))
    for pair in _endpoint_pairs(ann_frame):
        for ch, pt in enumerate((pair.left, pair.right)):
            px, py = _clip_pixel(pt, size)
            x0, x1 = max(0, px - r), min(w, px + r + 1)
            y0, y1 = max(0, py - r), min(h, py + r + 1)
            k = kernel[y0 - py + r:y1 - py + r, x0 - px + r:x1 - px + r]
            np.maximum(hm[y0:y1, x0:x1, ch], k, out=hm[y0:y1, x0:x1, ch])
    return hm


def render_gt_embeddings(ann_frame, size, dim: int = 4, spacing: float = 2.0, radius: int = 1):
    """Embedding maps that give object ``k`` the code ``(k + 1) * spacing`` in every channel.

    Codes are painted in a ``(2 radius + 1)`` square around each endpoint
    pixel; returns ``(left_map, right_map)`` of shape ``(H, W, dim)``.
    """
    w, h = size
    maps = (np.zeros((h, w, dim)), np.zeros((h, w, dim)))
    for k, pair in enumerate(_endpoint_pairs(ann_frame)):
        code = (k + 1) * spacing
        for emb, pt in zip(maps, (pair.left, pair.right)):
            px, py = _clip_pixel(pt, size)
            emb[max(0, py - radius):py + radius + 1, max(0, px - radius):px + radius + 1, :] = code
    return maps


def render_gt_offsets(ann_frame, size, radius: int = 1):
    """Offset maps holding each object's true per-frame displacement at its endpoints."""
    w, h = size
    maps = (np.zeros((h, w, 2)), np.zeros((h, w, 2)))
    for o in ann_frame:
        vel = o.state.velocity
        for off, pt in zip(maps, (o.endpoints.left, o.endpoints.right)):
            px, py = _clip_pixel(pt, size)
            off[max(0, py - radius):py + radius + 1, max(0, px - radius):px + radius + 1, :] = vel
    return maps


def _peaks_one_channel(hm: np.ndarray, spec: HeatmapSpec) -> list:
    half = spec.nms_window // 2
    local_max = ndimage.maximum_filter(hm, size=spec.nms_window, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((hm == local_max) & (hm >= spec.peak_threshold))
    h, w = hm.shape
    peaks = []
    for y, x in zip(ys, xs):
        win = hm[max(0, y - half):y + half + 1, max(0, x - half):x + half + 1]
        if np.count_nonzero(win == hm[y, x]) != 1:
            continue  # plateau, not a strict maximum
        # 3x3 intensity centroid; an axis cut by the border keeps the integer position
        y0, y1, x0, x1 = max(0, y - 1), min(h, y + 2), max(0, x - 1), min(w, x + 2)
        wts = np.clip(hm[y0:y1, x0:x1], 0, None)
        gy, gx = np.mgrid[y0:y1, x0:x1]
        tot = wts.sum()
        cx, cy = float(x), float(y)
        if tot > 0 and x1 - x0 == 3:
            cx = float((wts * gx).sum() / tot)
        if tot > 0 and y1 - y0 == 3:
            cy = float((wts * gy).sum() / tot)
        peaks.append(Peak(cx, cy, float(hm[y, x]), int(x), int(y)))
    peaks.sort(key=lambda p: (-p.score, p.py, p.px))
    return peaks[:spec.max_peaks]


def extract_peaks(heatmap, spec: HeatmapSpec):
    """Strict local maxima of each channel; returns ``(left_peaks, right_peaks)``."""
    hm = as_grid(heatmap, channels=2)
    return _peaks_one_channel(hm[..., 0], spec), _peaks_one_channel(hm[..., 1], spec)


def _sample(grid: np.ndarray, peak: Peak) -> np.ndarray:
    return np.asarray(grid[peak.py, peak.px], dtype=float).reshape(-1)


def embedding_distance(a, b, norm: str = "l1") -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if norm == "l1":
        return float(np.abs(d).sum())
    if norm == "l2":
        return float(np.sqrt((d * d).sum()))
    raise ValueError(f"unknown norm {norm!r}")


def greedy_match(cost: np.ndarray, gate: float) -> list:
    """Ascending-cost greedy one-to-one matching; ties break on ``(row, col)``.

    Margin condition: if some set of pairs has every cost within the gate and
    strictly below all other entries of its row and column, and no other row
    or column has an entry within the gate, the result is exactly that set,
    which is then also the gated min-sum matching of maximum cardinality.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    rows, cols = np.nonzero(cost <= gate)
    order = np.lexsort((cols, rows, cost[rows, cols]))
    used_r, used_c, out = set(), set(), []
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        out.append((i, j))
    return out


def optimal_match(cost: np.ndarray, gate: float) -> list:
    """Min-sum assignment restricted to entries ``<= gate``."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    big = 1.0 + 2.0 * float(np.abs(cost[np.isfinite(cost)]).sum()) if np.isfinite(cost).any() else 1.0
    masked = np.where(cost <= gate, cost, big)
    r, c = linear_sum_assignment(masked)
    return sorted((int(i), int(j)) for i, j in zip(r, c) if cost[i, j] <= gate)


def embedding_similarity(left_peaks, right_peaks, emb_left, emb_right, norm: str = "l1") -> np.ndarray:
    el = np.asarray(emb_left, dtype=float)
    er = np.asarray(emb_right, dtype=float)
    if el.ndim == 2:
        el = el[:, :, None]
    if er.ndim == 2:
        er = er[:, :, None]
    if el.shape != er.shape:
        raise ValueError(f"embedding grids differ in shape: {el.shape} vs {er.shape}")
    s = np.zeros((len(left_peaks), len(right_peaks)))
    for i, lp in enumerate(left_peaks):
        for j, rp in enumerate(right_peaks):
            s[i, j] = embedding_distance(_sample(el, lp), _sample(er, rp), norm)
    return s


def pair_endpoints(left_peaks: Sequence[Peak], right_peaks: Sequence[Peak], emb_left, emb_right,
                   gate: float = 1.0, norm: str = "l1", method: str = "greedy",
                   offset_left=None, offset_right=None) -> list:
    """Group left and right peaks into detections by embedding distance.

    ``method="greedy"`` takes pairs in ascending distance; ``"optimal"``
    solves the min-sum assignment instead. Pairs farther apart than ``gate``
    are dropped. Offset maps, when given, are sampled at each endpoint pixel.
    Detections come back sorted by mean endpoint score, highest first.
    """
    el = np.asarray(emb_left, dtype=float)
    er = np.asarray(emb_right, dtype=float)
    s = embedding_similarity(left_peaks, right_peaks, el, er, norm)
    if method == "greedy":
        pairs = greedy_match(s, gate)
    elif method == "optimal":
        pairs = optimal_match(s, gate)
    else:
        raise ValueError(f"unknown pairing method {method!r}")
    el = el if el.ndim == 3 else el[:, :, None]
    er = er if er.ndim == 3 else er[:, :, None]
    dets = []
    for i, j in pairs:
        lp, rp = left_peaks[i], right_peaks[j]
        ol = orr = None
        if offset_left is not None and offset_right is not None:
            ol = tuple(float(v) for v in _sample(np.asarray(offset_left), lp)[:2])
            orr = tuple(float(v) for v in _sample(np.asarray(offset_right), rp)[:2])
        a, b = (lp.x, lp.y), (rp.x, rp.y)
        ea, eb = _sample(el, lp), _sample(er, rp)
        pair = EndpointPair.from_points(a, b)
        if pair.left != a:  # channel order disagrees with geometry
            ea, eb, ol, orr = eb, ea, orr, ol
        score = float(np.clip((lp.score + rp.score) / 2.0, 0.0, 1.0))
        dets.append((score, i, Detection(pair, score, ea, eb, ol, orr)))
    dets.sort(key=lambda t: (-t[0], t[1]))
    return [d for _, _, d in dets]


def decode_frame(heatmap, emb_left, emb_right, spec: HeatmapSpec, gate: float = 1.0, norm: str = "l1",
                 method: str = "greedy", offset_left=None, offset_right=None) -> list:
    left, right = extract_peaks(heatmap, spec)
    return pair_endpoints(left, right, emb_left, emb_right, gate, norm, method, offset_left, offset_right)


def oracle_detect_with_log(ann_frame, noise: OracleNoise, rng: np.random.Generator,
                           size: Optional[tuple] = None, with_offsets: bool = True,
                           fp_length_range=(10.0, 60.0)):
    """Corrupted ground truth; returns ``(detections, dropped_track_ids)``.

    Per object: one drop draw, then (if kept) two Gaussian jitter draws per
    endpoint. Spurious detections are drawn after all objects, count
    ``Poisson(false_positive_rate)``, uniform over ``size`` with zero offsets.
    """
    dets, dropped = [], []
    for o in sorted(ann_frame, key=lambda o: o.track_id):
        if rng.random() < noise.drop_prob:
            dropped.append(o.track_id)
            continue
        arr = o.endpoints.as_array()
        if noise.endpoint_jitter_std > 0:
            arr = arr + rng.normal(0.0, noise.endpoint_jitter_std, size=(2, 2))
        vel = o.state.velocity if with_offsets else None
        pair = EndpointPair.from_points(tuple(arr[0]), tuple(arr[1]))
        dets.append(Detection(pair, 1.0, offset_left=vel, offset_right=vel, width=o.state.width))
    if noise.false_positive_rate > 0:
        if size is None:
            raise ValueError("image size is required to place false positives")
        w, h = size
        for _ in range(int(rng.poisson(noise.false_positive_rate))):
            cx, cy = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
            length = rng.uniform(*fp_length_range)
            ang = rng.uniform(0, 2 * np.pi)
            d = 0.5 * length * np.array([np.cos(ang), np.sin(ang)])
            pair = EndpointPair.from_points((cx - d[0], cy - d[1]), (cx + d[0], cy + d[1]))
            zero = (0.0, 0.0) if with_offsets else None
            dets.append(Detection(pair, float(rng.uniform(0.3, 1.0)), offset_left=zero, offset_right=zero))
    return dets, dropped


def oracle_detect(ann_frame, noise: OracleNoise, rng: np.random.Generator, size=None,
                  with_offsets: bool = True) -> list:
    return oracle_detect_with_log(ann_frame, noise, rng, size, with_offsets)[0]


def mask_gate(features, mask) -> np.ndarray:
    """Broadcast a one-channel mask over every feature channel."""
    f = as_grid(features)
    m = as_grid(mask)
    if m.ndim == 3:
        if m.shape[2] != 1:
            raise ValueError("mask must have exactly one channel")
        m = m[..., 0]
    if m.shape != f.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match features {f.shape[:2]}")
    return f * m[..., None] if f.ndim == 3 else f * m
