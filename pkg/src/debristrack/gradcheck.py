"""Central finite-difference checks of the loss gradients on random instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import losses

STEP = 1e-5
TOLERANCE = 1e-4
# instances closer than this to a hinge or |.| kink are redrawn
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    loss: str
    trials: int
    failures: int
    worst_rel_err: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


# each case draws an instance and returns (function of the checked input, the input, analytic grad)

def _seg_case(rng):
    shape = (8, 8)
    gt = (rng.random(shape) < 0.3).astype(float)
    pred = rng.uniform(0.05, 0.95, shape)
    f = lambda x: losses.seg_loss(x, gt).value
    return f, pred, losses.seg_loss(pred, gt).grads["pred"]


def _focal_case(rng):
    shape = (8, 8, 2)
    gt = rng.uniform(0.0, 0.95, shape)
    peaks = rng.random(shape) < 0.05
    gt[peaks] = 1.0
    pred = rng.uniform(0.05, 0.95, shape)
    f = lambda x: losses.heatmap_focal_loss(x, gt).value
    return f, pred, losses.heatmap_focal_loss(pred, gt).grads["pred"]


def _pull_case(rng):
    k, d = rng.integers(1, 6), 4
    el, er = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    f = lambda x: losses.pull_loss(x, er).value
    return f, el, losses.pull_loss(el, er).grads["emb_left"]


def _push_case(rng):
    margin = 1.0
    while True:
        k, d = int(rng.integers(2, 7)), 2
        c = rng.uniform(0.0, 1.2, size=(k, d))
        diff = np.abs(c[:, None] - c[None])
        off = ~np.eye(k, dtype=bool)
        dist = diff.sum(axis=2)
        if diff[off].min() > KINK_MARGIN and np.abs(margin - dist[off]).min() > KINK_MARGIN:
            break
    f = lambda x: losses.push_loss(x, margin).value
    return f, c, losses.push_loss(c, margin).grads["centers"]


def _offset_case(rng):
    while True:
        k = int(rng.integers(1, 6))
        ct = rng.uniform(0, 100, (k, 2, 2))
        cp = ct - rng.normal(0, 5, (k, 2, 2))
        o = rng.normal(0, 5, (k, 2, 2))
        if np.abs(o - (ct - cp)).min() > KINK_MARGIN:
            break
    f = lambda x: losses.offset_loss(x, ct, cp).value
    return f, o, losses.offset_loss(o, ct, cp).grads["pred_offsets"]


CASES = {
    "seg": _seg_case,
    "focal": _focal_case,
    "pull": _pull_case,
    "push": _push_case,
    "offset": _offset_case,
}


def check_gradients(trials: int = 100, seed: int = 0, tolerance: float = TOLERANCE,
                    flip_sign: Optional[str] = None) -> list:
    """Run ``trials`` random instances per loss.

    ``flip_sign`` negates the analytic gradient of the named loss so the
    harness can be shown to catch a wrong gradient.
    """
    if flip_sign is not None and flip_sign not in CASES:
        raise ValueError(f"unknown loss {flip_sign!r}; choose from {sorted(CASES)}")
    results = []
    for idx, (name, case) in enumerate(CASES.items()):
        rng = np.random.default_rng([seed, idx])
        failures, worst = 0, 0.0
        for _ in range(trials):
            f, x, g = case(rng)
            if name == flip_sign:
                g = -g
            err = relative_error(g, numeric_gradient(f, x.copy()))
            worst = max(worst, err)
            failures += err >= tolerance
        results.append(CheckResult(name, trials, int(failures), worst))
    return results
