"""Reference implementations of the training objectives with analytic gradients.

Every function returns a :class:`LossValue`; ``grads`` maps argument names to
arrays shaped like the corresponding input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    seg_weight: float = 1.0
    hm_weight: float = 10.0
    emb_weight: float = 1.0
    off_weight: float = 0.1
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    push_margin: float = 1.0
    norm: str = "l1"

    def __post_init__(self):
        if min(self.seg_weight, self.hm_weight, self.emb_weight, self.off_weight) < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.push_margin > 0:
            raise ValueError("push_margin must be > 0")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def seg_loss(pred, gt) -> LossValue:
    """Mean binary cross-entropy between a predicted mask and a 0/1 target."""
    p_raw = np.asarray(pred, dtype=float)
    m = np.asarray(gt, dtype=float)
    _same_shape(p_raw, m, "seg_loss")
    p = np.clip(p_raw, EPS, 1 - EPS)
    n = p.size
    value = -np.sum(m * np.log(p) + (1 - m) * np.log(1 - p)) / n
    grad = -(m / p - (1 - m) / (1 - p)) / n
    grad = np.where((p_raw > EPS) & (p_raw < 1 - EPS), grad, 0.0)
    return LossValue(float(value), {"pred": grad})


def heatmap_focal_loss(pred, gt, cfg: LossConfig = LossConfig()) -> LossValue:
    """Penalty-reduced pixelwise focal loss normalized by the number of ``gt == 1`` pixels."""
    p_raw = np.asarray(pred, dtype=float)
    h = np.asarray(gt, dtype=float)
    _same_shape(p_raw, h, "heatmap_focal_loss")
    a, b = cfg.focal_alpha, cfg.focal_beta
    p = np.clip(p_raw, EPS, 1 - EPS)
    pos = h == 1.0
    n_pos = max(1, int(pos.sum()))
    neg_w = (1 - h) ** b

    pos_term = (1 - p) ** a * np.log(p)
    neg_term = neg_w * p ** a * np.log(1 - p)
    value = -np.sum(np.where(pos, pos_term, neg_term)) / n_pos

    d_pos = -a * (1 - p) ** (a - 1) * np.log(p) + (1 - p) ** a / p
    d_neg = neg_w * (a * p ** (a - 1) * np.log(1 - p) - p ** a / (1 - p))
    grad = -np.where(pos, d_pos, d_neg) / n_pos
    grad = np.where((p_raw > EPS) & (p_raw < 1 - EPS), grad, 0.0)
    return LossValue(float(value), {"pred": grad})


def pull_loss(emb_left, emb_right) -> LossValue:
    """Pull each pair's two embeddings toward their mean; arrays are ``(K, D)``."""
    el = np.atleast_2d(np.asarray(emb_left, dtype=float))
    er = np.atleast_2d(np.asarray(emb_right, dtype=float))
    _same_shape(el, er, "pull_loss")
    k = el.shape[0]
    if k == 0:
        return LossValue(0.0, {"emb_left": np.zeros_like(el), "emb_right": np.zeros_like(er)})
    ec = (el + er) / 2
    value = (np.sum((el - ec) ** 2) + np.sum((er - ec) ** 2)) / k
    diff = el - er
    return LossValue(float(value), {"emb_left": diff / k, "emb_right": -diff / k})


def _pairwise(centers, norm):
    diff = centers[:, None, :] - centers[None, :, :]
    if norm == "l1":
        return diff, np.abs(diff).sum(axis=2)
    return diff, np.sqrt((diff ** 2).sum(axis=2))


def push_loss(centers, margin: float = 1.0, norm: str = "l1") -> LossValue:
    """Hinge pushing distinct pair centers at least ``margin`` apart; ``centers`` is ``(K, D)``."""
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    k = c.shape[0]
    if k < 2:
        return LossValue(0.0, {"centers": np.zeros_like(c)})
    diff, dist = _pairwise(c, norm)
    off_diag = ~np.eye(k, dtype=bool)
    slack = margin - dist
    active = (slack > 0) & off_diag
    denom = k * (k - 1)
    value = np.sum(np.where(active, slack, 0.0)) / denom
    if norm == "l1":
        ddist = np.sign(diff)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            ddist = np.where(dist[..., None] > 0, diff / dist[..., None], 0.0)
    # each ordered pair (k, j) and its mirror (j, k) contribute -d(dist)/d e_k
    grad = -2.0 * np.sum(np.where(active[..., None], ddist, 0.0), axis=1) / denom
    return LossValue(float(value), {"centers": grad})


def offset_loss(pred_offsets, endpoints_t, endpoints_prev, norm: str = "l1") -> LossValue:
    """Mean per-object offset error, summed over left and right endpoints.

    All arrays are ``(K, 2, 2)``: object, side (left, right), coordinate (x, y).
    """
    o = np.asarray(pred_offsets, dtype=float).reshape(-1, 2, 2)
    ct = np.asarray(endpoints_t, dtype=float).reshape(-1, 2, 2)
    cp = np.asarray(endpoints_prev, dtype=float).reshape(-1, 2, 2)
    _same_shape(o, ct, "offset_loss")
    _same_shape(ct, cp, "offset_loss")
    k = o.shape[0]
    if k == 0:
        return LossValue(0.0, {"pred_offsets": np.zeros_like(o)})
    err = o - (ct - cp)
    if norm == "l1":
        value = np.abs(err).sum() / k
        grad = np.sign(err) / k
    else:
        n = np.sqrt((err ** 2).sum(axis=2, keepdims=True))
        value = n.sum() / k
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = np.where(n > 0, err / n, 0.0) / k
    return LossValue(float(value), {"pred_offsets": grad})


COMPONENTS = ("seg", "hm", "same", "diff", "off")


def total_loss(components: dict, cfg: LossConfig = LossConfig()) -> LossValue:
    """Weighted sum; ``components`` maps ``seg/hm/same/diff/off`` to scalars (missing = 0)."""
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown loss components: {sorted(unknown)}")
    vals = {k: float(components.get(k, 0.0)) for k in COMPONENTS}
    if not all(np.isfinite(v) for v in vals.values()):
        raise ValueError("loss components must be finite")
    weights = {
        "seg": cfg.seg_weight,
        "hm": cfg.hm_weight,
        "same": cfg.emb_weight,
        "diff": cfg.emb_weight,
        "off": cfg.off_weight,
    }
    value = sum(weights[k] * vals[k] for k in COMPONENTS)
    return LossValue(float(value), dict(weights))
