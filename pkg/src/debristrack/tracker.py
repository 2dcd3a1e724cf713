"""Offset-based cross-frame association and track lifecycle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .decode import greedy_match, optimal_match
from .domain import Detection, EndpointPair, Track, pairwise_endpoint_l1


@dataclass(frozen=True)
class TrackerConfig:
    association_radius: float = 200.0
    max_missed_frames: int = 1
    min_track_length: int = 1
    method: str = "greedy"  # or "optimal"

    def __post_init__(self):
        if not self.association_radius > 0:
            raise ValueError("association_radius must be > 0")
        if self.max_missed_frames < 0:
            raise ValueError("max_missed_frames must be >= 0")
        if self.min_track_length < 1:
            raise ValueError("min_track_length must be >= 1")
        if self.method not in ("greedy", "optimal"):
            raise ValueError(f"unknown association method {self.method!r}")


def derive_previous_endpoints(det: Detection) -> EndpointPair:
    """Where the detection's endpoints were one frame earlier: ``c - o`` per side."""
    if not det.has_offsets:
        raise ValueError("detection has no offsets")
    (xl, yl), (xr, yr) = det.endpoints.left, det.endpoints.right
    (ol_x, ol_y), (or_x, or_y) = det.offset_left, det.offset_right
    return EndpointPair.from_points((xl - ol_x, yl - ol_y), (xr - or_x, yr - or_y))


def _pair(obj: Union[Detection, EndpointPair]) -> EndpointPair:
    return obj.endpoints if isinstance(obj, Detection) else obj


def object_similarity(curr: Sequence[Detection], prev: Sequence[Union[Detection, EndpointPair]]) -> np.ndarray:
    """``S[i, j]``: L1 gap between derived-previous endpoints of ``curr[i]`` and ``prev[j]``.

    Both ends are summed, matched end to end whichever way round is closer.
    """
    s = np.zeros((len(curr), len(prev)))
    if not len(curr) or not len(prev):
        return s
    derived = np.stack([derive_previous_endpoints(d).as_array() for d in curr])
    detected = np.stack([_pair(p).as_array() for p in prev])
    return pairwise_endpoint_l1(derived, detected)


def associate(curr, prev, cfg: TrackerConfig) -> list:
    """``[(curr_idx, prev_idx or None)]`` for every current detection, in index order."""
    s = object_similarity(curr, prev)
    if cfg.method == "greedy":
        pairs = greedy_match(s, cfg.association_radius)
    else:
        pairs = optimal_match(s, cfg.association_radius)
    match = dict(pairs)
    return [(i, match.get(i)) for i in range(len(curr))]


@dataclass
class _Active:
    track: Track
    last_frame: int
    last: Detection


@dataclass
class TrackerState:
    active: list = field(default_factory=list)  # list[_Active]
    finished: list = field(default_factory=list)  # list[Track]
    next_id: int = 1
    frame: Optional[int] = None

    def all_tracks(self) -> list:
        return sorted(self.finished + [a.track for a in self.active], key=lambda t: t.id)


def _predicted_previous(a: _Active, frame_idx: int) -> EndpointPair:
    """Track position at ``frame_idx - 1``, coasting on its last offsets across gaps."""
    gap = frame_idx - 1 - a.last_frame
    if gap == 0 or not a.last.has_offsets:
        return a.last.endpoints
    (lx, ly), (rx, ry) = a.last.endpoints.left, a.last.endpoints.right
    (olx, oly), (orx, ory) = a.last.offset_left, a.last.offset_right
    return EndpointPair.from_points((lx + gap * olx, ly + gap * oly), (rx + gap * orx, ry + gap * ory))


def step(state: TrackerState, frame_idx: int, detections: Sequence[Detection], cfg: TrackerConfig):
    """Advance one frame; returns ``(state, [(det_idx, track_id)])``.

    Tracks unseen for more than ``max_missed_frames`` frames are closed
    before association. Unmatched detections open new tracks in index order.
    The passed state is updated in place and returned.
    """
    if state.frame is not None and frame_idx <= state.frame:
        raise ValueError(f"frame index {frame_idx} does not follow {state.frame}")
    state.frame = frame_idx

    alive = []
    for a in state.active:
        if frame_idx - a.last_frame - 1 > cfg.max_missed_frames:
            state.finished.append(a.track)
        else:
            alive.append(a)
    state.active = alive

    prev = [_predicted_previous(a, frame_idx) for a in alive]
    links = associate(list(detections), prev, cfg) if prev else [(i, None) for i in range(len(detections))]

    assignments = []
    for i, j in links:
        det = detections[i]
        if j is None:
            a = _Active(Track(state.next_id), frame_idx, det)
            state.next_id += 1
            state.active.append(a)
        else:
            a = alive[j]
            a.last_frame, a.last = frame_idx, det
        a.track.append(frame_idx, det)
        assignments.append((i, a.track.id))
    return state, assignments


def run_sequence(frames_detections, cfg: TrackerConfig = TrackerConfig(), first_frame: int = 1) -> list:
    """Track a whole sequence; ``frames_detections[k]`` belongs to frame ``first_frame + k``."""
    state = TrackerState()
    for k, dets in enumerate(frames_detections):
        step(state, first_frame + k, dets, cfg)
    return [t for t in state.all_tracks() if len(t) >= cfg.min_track_length]
