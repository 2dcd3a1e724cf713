"""Core value types shared across the package.

Coordinate convention: origin at the top-left, x to the right, y downward,
pixel centers at integer coordinates. Grids are numpy arrays laid out as
``(H, W)`` for single-channel images or ``(H, W, C)`` for channel stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

Point = Tuple[float, float]
Box = Tuple[float, float, float, float]

# |dx| below this is treated as a vertical segment for left/right ordering
VERTICAL_EPS = 1e-9


@dataclass(frozen=True)
class DebrisState:
    """Per-frame parameters of one line source."""

    x: float
    y: float
    length: float
    width: float
    angle: float
    speed: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"length must be > 0, got {self.length}")
        if not self.width > 0:
            raise ValueError(f"width must be > 0, got {self.width}")
        if self.width > self.length:
            raise ValueError(f"width {self.width} exceeds length {self.length}")
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.angle, self.speed)):
            raise ValueError("non-finite debris state")

    @property
    def center(self) -> Point:
        return (self.x, self.y)

    @property
    def direction(self) -> Point:
        return (math.cos(self.angle), math.sin(self.angle))

    @property
    def velocity(self) -> Point:
        return (self.speed * math.cos(self.angle), self.speed * math.sin(self.angle))


def _is_left_of(a: Point, b: Point) -> bool:
    dx = b[0] - a[0]
    if abs(dx) < VERTICAL_EPS:
        return (a[1], a[0]) <= (b[1], b[0])
    return dx > 0


@dataclass(frozen=True)
class EndpointPair:
    left: Point
    right: Point

    def __post_init__(self):
        object.__setattr__(self, "left", (float(self.left[0]), float(self.left[1])))
        object.__setattr__(self, "right", (float(self.right[0]), float(self.right[1])))
        if not _is_left_of(self.left, self.right):
            raise ValueError(f"left {self.left} is not left of right {self.right}")

    @classmethod
    def from_points(cls, a: Point, b: Point) -> "EndpointPair":
        """Order two points into (left, right); vertical ties put smaller y left."""
        if _is_left_of(a, b):
            return cls(a, b)
        return cls(b, a)

    @property
    def midpoint(self) -> Point:
        return ((self.left[0] + self.right[0]) / 2.0, (self.left[1] + self.right[1]) / 2.0)

    @property
    def length(self) -> float:
        return math.hypot(self.right[0] - self.left[0], self.right[1] - self.left[1])

    def as_array(self) -> np.ndarray:
        """``(2, 2)`` array, rows are left then right."""
        return np.array([self.left, self.right], dtype=float)

    def translated(self, dx: float, dy: float) -> "EndpointPair":
        return EndpointPair.from_points(
            (self.left[0] + dx, self.left[1] + dy), (self.right[0] + dx, self.right[1] + dy)
        )


def pairwise_endpoint_l1(a, b) -> np.ndarray:
    """``(N, M)`` summed L1 gap between endpoint arrays of shape ``(N, 2, 2)`` and ``(M, 2, 2)``.

    Each entry takes the cheaper of the two end-to-end correspondences, so a
    near-vertical pair whose left/right labels flip under sub-pixel noise is
    still compared end to end.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2, 2)
    same = np.abs(a[:, None] - b[None]).sum(axis=(2, 3))
    swapped = np.abs(a[:, None] - b[None, :, ::-1]).sum(axis=(2, 3))
    return np.minimum(same, swapped)


@dataclass(frozen=True)
class Detection:
    """A decoded line source.

    ``width`` is not produced by the decoder; it only feeds the bbox-IoU
    similarity and defaults to one pixel.
    """

    endpoints: EndpointPair
    score: float = 1.0
    embedding_left: Optional[np.ndarray] = field(default=None, compare=False)
    embedding_right: Optional[np.ndarray] = field(default=None, compare=False)
    offset_left: Optional[Point] = None
    offset_right: Optional[Point] = None
    width: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.embedding_left is not None and self.embedding_right is not None:
            if np.shape(self.embedding_left) != np.shape(self.embedding_right):
                raise ValueError("left/right embedding dimensions differ")
        if (self.offset_left is None) != (self.offset_right is None):
            raise ValueError("offsets must be given for both endpoints or neither")

    @property
    def has_offsets(self) -> bool:
        return self.offset_left is not None

    def bbox(self) -> Box:
        return bbox_from_endpoints(self.endpoints, self.width)


@dataclass
class Track:
    id: int
    entries: list = field(default_factory=list)  # [(frame_index, Detection)]

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"track id must be positive, got {self.id}")
        frames = [f for f, _ in self.entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.id}: frame indices not strictly increasing")

    def append(self, frame_index: int, det: Detection) -> None:
        if self.entries and frame_index <= self.entries[-1][0]:
            raise ValueError(
                f"track {self.id}: frame {frame_index} after {self.entries[-1][0]}"
            )
        self.entries.append((frame_index, det))

    @property
    def frames(self) -> list:
        return [f for f, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class AnnotatedObject:
    track_id: int
    state: DebrisState
    endpoints: EndpointPair
    bbox: Box


@dataclass
class SequenceAnnotation:
    """Ground truth for one sequence; ``objects[t]`` holds frame ``t + 1``."""

    objects: list  # list[list[AnnotatedObject]]
    masks: Optional[list] = None

    def __post_init__(self):
        if len(self.objects) < 1:
            raise ValueError("a sequence needs at least one frame")
        if self.masks is not None and len(self.masks) != len(self.objects):
            raise ValueError("mask count does not match frame count")
        for t, frame in enumerate(self.objects, start=1):
            ids = [o.track_id for o in frame]
            if len(ids) != len(set(ids)):
                raise ValueError(f"frame {t}: duplicate track ids")

    @property
    def num_frames(self) -> int:
        return len(self.objects)

    @property
    def track_ids(self) -> list:
        return sorted({o.track_id for frame in self.objects for o in frame})

    def frame(self, index: int) -> list:
        """Objects in 1-based frame ``index``."""
        return self.objects[index - 1]


def endpoints_from_state(s: DebrisState) -> EndpointPair:
    half = s.length / 2.0
    c, sn = math.cos(s.angle), math.sin(s.angle)
    a = (s.x - half * c, s.y - half * sn)
    b = (s.x + half * c, s.y + half * sn)
    return EndpointPair.from_points(a, b)


def rectangle_corners(cx: float, cy: float, length: float, width: float, angle: float) -> np.ndarray:
    """Corners of the ``length x width`` rectangle rotated by ``angle``, shape ``(4, 2)``."""
    c, s = math.cos(angle), math.sin(angle)
    u = np.array([c, s]) * (length / 2.0)
    v = np.array([-s, c]) * (width / 2.0)
    ctr = np.array([cx, cy])
    return np.stack([ctr + u + v, ctr + u - v, ctr - u - v, ctr - u + v])


def _hull(corners: np.ndarray) -> Box:
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def bbox_from_state(s: DebrisState) -> Box:
    """Tight axis-aligned hull ``(x_min, y_min, x_max, y_max)`` of the rotated rectangle."""
    return _hull(rectangle_corners(s.x, s.y, s.length, s.width, s.angle))


def bbox_from_endpoints(pair: EndpointPair, width: float = 1.0) -> Box:
    (x0, y0), (x1, y1) = pair.left, pair.right
    length = math.hypot(x1 - x0, y1 - y0)
    angle = math.atan2(y1 - y0, x1 - x0)
    cx, cy = pair.midpoint
    return _hull(rectangle_corners(cx, cy, max(length, 0.0), width, angle))


def annotate(track_id: int, s: DebrisState) -> AnnotatedObject:
    return AnnotatedObject(track_id, s, endpoints_from_state(s), bbox_from_state(s))


def as_grid(values, channels: Optional[int] = None) -> np.ndarray:
    """Validate a grid: finite, 2-D or 3-D, optional channel count check."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim not in (2, 3):
        raise ValueError(f"grid must be (H, W) or (H, W, C), got shape {arr.shape}")
    if channels is not None:
        c = 1 if arr.ndim == 2 else arr.shape[2]
        if c != channels:
            raise ValueError(f"expected {channels} channels, got {c}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid contains non-finite values")
    return arr
