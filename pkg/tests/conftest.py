import math
import sys

import numpy as np
import pytest
from hypothesis import settings

from debristrack.domain import DebrisState, Detection, EndpointPair, annotate
from debristrack.metrics import FrameObject

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_state(x=50.0, y=50.0, length=20.0, width=2.0, angle=0.0, speed=3.0):
    return DebrisState(x, y, length, width, angle, speed)


def det(left, right, offset=None, score=1.0):
    pair = EndpointPair.from_points(left, right)
    return Detection(pair, score, offset_left=offset, offset_right=offset)


def random_state(rng, size=256):
    length = rng.uniform(5, 60)
    return DebrisState(
        rng.uniform(0, size), rng.uniform(0, size), length,
        rng.uniform(0.5, min(5, length)), rng.uniform(0, 2 * math.pi), rng.uniform(0, 10),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


__all__ = ["make_state", "det", "random_state", "separated_frame", "fo", "ten_gt_toy", "swap_toy"]


def separated_frame(rng, size=(128, 96), k=3, min_sep=3.0, border=0.0):
    """Annotated objects whose endpoints all lie inside the image and are pairwise > min_sep apart."""
    w, h = size
    objs, pts = [], []
    while len(objs) < k:
        length = rng.uniform(6, 40)
        s = DebrisState(rng.uniform(0, w - 1), rng.uniform(0, h - 1), length,
                        rng.uniform(1, 3), rng.uniform(0, 2 * math.pi), rng.uniform(0, 8))
        o = annotate(len(objs) + 1, s)
        new = [o.endpoints.left, o.endpoints.right]
        if not all(border <= x <= w - 1 - border and border <= y <= h - 1 - border for x, y in new):
            continue
        if any(math.dist(a, b) <= min_sep for a in new for b in pts):
            continue
        objs.append(o)
        pts += new
    return objs


def fo(oid, x, y, length=10.0):
    """Horizontal evaluation object starting at ``(x, y)``."""
    pair = EndpointPair.from_points((x, y), (x + length, y))
    return FrameObject(oid, pair, (x, y - 1, x + length, y + 1))


def ten_gt_toy():
    """One gt track over 10 frames: a miss in frame 5, an id change after it, one stray detection."""
    gt = [[fo(1, 0, 0)] for _ in range(10)]
    pred = [[fo(1, 0, 0)] for _ in range(4)] + [[]] + [[fo(2, 0, 0)] for _ in range(5)]
    pred[2].append(fo(3, 500, 500))
    return gt, pred


def swap_toy():
    """Two gt tracks over 4 frames; the predicted ids trade places after frame 2."""
    a, b = (0, 0), (200, 0)
    gt = [[fo(1, *a), fo(2, *b)] for _ in range(4)]
    pred = [[fo(1, *a), fo(2, *b)] for _ in range(2)] + [[fo(1, *b), fo(2, *a)] for _ in range(2)]
    return gt, pred


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
