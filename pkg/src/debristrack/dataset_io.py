"""On-disk formats: sequence directories, ground-truth and result CSVs, tensor maps.

Byte-level layouts are documented in ``docs/FORMATS.md``. Writers are
deterministic; readers validate everything they load and raise
:class:`DatasetError` with the offending location.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .domain import (
    AnnotatedObject,
    DebrisState,
    EndpointPair,
    SequenceAnnotation,
    bbox_from_state,
    endpoints_from_state,
)

GT_COLUMNS = [
    "frame", "track_id", "x_left", "y_left", "x_right", "y_right",
    "cx", "cy", "length", "width", "angle_rad", "speed",
    "bb_x", "bb_y", "bb_w", "bb_h",
]
RESULT_COLUMNS = [
    "frame", "track_id", "x_left", "y_left", "x_right", "y_right",
    "bb_x", "bb_y", "bb_w", "bb_h", "score",
]
CONSISTENCY_TOL = 1e-6

TMAP_MAGIC = b"TMAP"
TMAP_VERSION = 1
TMAP_FLOAT32 = 1
_TMAP_HEADER = struct.Struct("<4sHHIII")


class DatasetError(Exception):
    """Malformed or missing dataset content."""


def _fmt(v: float) -> str:
    # repr is the shortest string that round-trips a float64 exactly
    return repr(float(v))


def frame_name(index: int) -> str:
    return f"{index:06d}.png"


def sequence_name(index: int) -> str:
    return f"seq_{index:06d}"


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def write_png(arr, path) -> None:
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > 255 or not np.array_equal(a, np.rint(a)):
            raise ValueError("frame values must be integers in [0, 255]")
        a = a.astype(np.uint8)
    Path(path).write_bytes(_png_bytes(a))


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DatasetError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing image") from None
    except (OSError, SyntaxError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable PNG ({exc})") from None


# --------------------------------------------------------------------------
# ground truth
# --------------------------------------------------------------------------

def gt_rows(ann: SequenceAnnotation) -> list:
    rows = []
    for t, frame in enumerate(ann.objects, start=1):
        for o in sorted(frame, key=lambda o: o.track_id):
            s, e, b = o.state, o.endpoints, o.bbox
            rows.append([
                t, o.track_id, e.left[0], e.left[1], e.right[0], e.right[1],
                s.x, s.y, s.length, s.width, s.angle, s.speed,
                b[0], b[1], b[2] - b[0], b[3] - b[1],
            ])
    return rows


def write_gt_csv(ann: SequenceAnnotation, path) -> None:
    lines = [",".join(GT_COLUMNS)]
    for row in gt_rows(ann):
        lines.append(",".join([str(row[0]), str(row[1])] + [_fmt(v) for v in row[2:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_gt_row(rec: dict, where: str) -> tuple:
    try:
        frame = int(rec["frame"])
        tid = int(rec["track_id"])
        vals = {k: float(rec[k]) for k in GT_COLUMNS[2:]}
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: unparsable row ({exc})") from None
    if not all(math.isfinite(v) for v in vals.values()):
        raise DatasetError(f"{where}: non-finite value")
    where = f"{where} (frame {frame}, track {tid})"
    try:
        state = DebrisState(vals["cx"], vals["cy"], vals["length"], vals["width"],
                            vals["angle_rad"], vals["speed"])
        pair = EndpointPair((vals["x_left"], vals["y_left"]), (vals["x_right"], vals["y_right"]))
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from None
    expect = endpoints_from_state(state)
    if np.max(np.abs(expect.as_array() - pair.as_array())) > CONSISTENCY_TOL:
        raise DatasetError(f"{where}: endpoints inconsistent with center/length/angle")
    if abs(pair.length - state.length) > CONSISTENCY_TOL:
        raise DatasetError(f"{where}: length mismatch vs endpoints")
    box = (vals["bb_x"], vals["bb_y"], vals["bb_x"] + vals["bb_w"], vals["bb_y"] + vals["bb_h"])
    hull = bbox_from_state(state)
    if np.max(np.abs(np.subtract(box, hull))) > CONSISTENCY_TOL:
        raise DatasetError(f"{where}: bbox is not the hull of the rotated rectangle")
    # x + w can differ from the written x_max in the last bit; keep the exact hull
    return frame, AnnotatedObject(tid, state, pair, hull)


def read_gt_csv(path, num_frames: int) -> list:
    """Parse ``gt.csv`` into per-frame object lists (frames ``1..num_frames``)."""
    objects = [[] for _ in range(num_frames)]
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None and reader.fieldnames != GT_COLUMNS:
            raise DatasetError(f"{path}: header must be {','.join(GT_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            frame, obj = _parse_gt_row(rec, f"{path}:{lineno}")
            if not 1 <= frame <= num_frames:
                raise DatasetError(f"{path}:{lineno}: frame {frame} does not exist (1..{num_frames})")
            key = (frame, obj.track_id)
            if key in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate row for frame {frame}, track {obj.track_id}")
            seen.add(key)
            objects[frame - 1].append(obj)
    return objects


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------

def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_sequence(frames, ann: SequenceAnnotation, seq_dir, meta: Optional[dict] = None) -> Path:
    if len(frames) != ann.num_frames:
        raise ValueError(f"{len(frames)} frames but annotation covers {ann.num_frames}")
    seq_dir = Path(seq_dir)
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames, start=1):
        write_png(frame, seq_dir / "frames" / frame_name(t))
    if ann.masks is not None:
        (seq_dir / "masks").mkdir(exist_ok=True)
        for t, mask in enumerate(ann.masks, start=1):
            write_png(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8),
                      seq_dir / "masks" / frame_name(t))
    write_gt_csv(ann, seq_dir / "gt.csv")
    write_json({"num_frames": ann.num_frames, **(meta or {})}, seq_dir / "meta.json")
    return seq_dir


def _frame_paths(directory: Path) -> list:
    paths = sorted(directory.glob("*.png"))
    for t, p in enumerate(paths, start=1):
        if p.name != frame_name(t):
            raise DatasetError(f"{directory}: missing frame {frame_name(t)} (found {p.name})")
    return paths


def read_meta(seq_dir) -> dict:
    path = Path(seq_dir) / "meta.json"
    try:
        meta = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    n = meta.get("num_frames") if isinstance(meta, dict) else None
    if not isinstance(n, int) or n < 1:
        raise DatasetError(f"{path}: num_frames must be a positive integer")
    return meta


def read_annotation(seq_dir, num_frames: Optional[int] = None) -> SequenceAnnotation:
    """Ground truth only; frame count comes from ``meta.json`` unless given."""
    seq_dir = Path(seq_dir)
    if num_frames is None:
        num_frames = int(read_meta(seq_dir)["num_frames"])
    if not (seq_dir / "gt.csv").exists():
        raise DatasetError(f"{seq_dir}: missing gt.csv")
    return SequenceAnnotation(read_gt_csv(seq_dir / "gt.csv", num_frames))


def read_sequence(seq_dir):
    """Load ``(frames, annotation)``, validating layout and every gt row."""
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise DatasetError(f"{seq_dir}: not a directory")
    paths = _frame_paths(seq_dir / "frames")
    if not paths:
        raise DatasetError(f"{seq_dir}: no frames")
    meta = read_meta(seq_dir)
    if meta["num_frames"] != len(paths):
        raise DatasetError(f"{seq_dir}: meta.json lists {meta['num_frames']} frames, found {len(paths)}")
    frames = [read_png(p) for p in paths]
    objects = read_gt_csv(seq_dir / "gt.csv", len(frames)) if (seq_dir / "gt.csv").exists() else None
    if objects is None:
        raise DatasetError(f"{seq_dir}: missing gt.csv")
    masks = None
    if (seq_dir / "masks").is_dir():
        mpaths = _frame_paths(seq_dir / "masks")
        if len(mpaths) != len(frames):
            raise DatasetError(f"{seq_dir}: {len(mpaths)} masks for {len(frames)} frames")
        masks = [read_png(p) > 0 for p in mpaths]
    return frames, SequenceAnnotation(objects, masks)


def list_sequences(split_dir) -> list:
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise DatasetError(f"{split_dir}: not a directory")
    return sorted(p.name for p in split_dir.iterdir() if p.is_dir() and (p / "gt.csv").exists())


# --------------------------------------------------------------------------
# tracking results
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    frame: int
    track_id: int
    endpoints: EndpointPair
    bbox: tuple  # (x_min, y_min, x_max, y_max)
    score: float


def track_rows(tracks) -> list:
    rows = []
    for tr in tracks:
        for frame, det in tr.entries:
            rows.append(ResultRow(frame, tr.id, det.endpoints, det.bbox(), det.score))
    rows.sort(key=lambda r: (r.frame, r.track_id))
    return rows


def write_results_csv(tracks, path) -> None:
    lines = [",".join(RESULT_COLUMNS)]
    for r in track_rows(tracks):
        (xl, yl), (xr, yr) = r.endpoints.left, r.endpoints.right
        b = r.bbox
        vals = [xl, yl, xr, yr, b[0], b[1], b[2] - b[0], b[3] - b[1], r.score]
        lines.append(",".join([str(r.frame), str(r.track_id)] + [_fmt(v) for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_results_csv(path) -> list:
    rows = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None and reader.fieldnames != RESULT_COLUMNS:
            raise DatasetError(f"{path}: header must be {','.join(RESULT_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            try:
                frame, tid = int(rec["frame"]), int(rec["track_id"])
                v = [float(rec[k]) for k in RESULT_COLUMNS[2:]]
                pair = EndpointPair((v[0], v[1]), (v[2], v[3]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{where}: bad row ({exc})") from None
            if not all(math.isfinite(x) for x in v):
                raise DatasetError(f"{where}: non-finite value")
            if frame < 1 or tid < 1:
                raise DatasetError(f"{where}: frame and track_id must be positive")
            if (frame, tid) in seen:
                raise DatasetError(f"{where}: duplicate row for frame {frame}, track {tid}")
            seen.add((frame, tid))
            rows.append(ResultRow(frame, tid, pair, (v[4], v[5], v[4] + v[6], v[5] + v[7]), v[8]))
    return rows


# --------------------------------------------------------------------------
# tensor maps
# --------------------------------------------------------------------------

def tensor_map_bytes(grid) -> bytes:
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"tensor map must be (H, W) or (H, W, C), got {arr.shape}")
    with np.errstate(over="ignore"):
        data = arr.astype("<f4")
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        y, x, c = bad[0]
        raise ValueError(f"non-finite value at ({x},{y},{c})")
    h, w, c = data.shape
    return _TMAP_HEADER.pack(TMAP_MAGIC, TMAP_VERSION, TMAP_FLOAT32, w, h, c) + data.tobytes(order="C")


def write_tensor_map(grid, path) -> None:
    Path(path).write_bytes(tensor_map_bytes(grid))


def parse_tensor_map(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < _TMAP_HEADER.size:
        raise DatasetError(f"{source}: truncated header")
    magic, version, dtype, w, h, c = _TMAP_HEADER.unpack_from(blob)
    if magic != TMAP_MAGIC:
        raise DatasetError(f"{source}: bad magic {magic!r}")
    if version != TMAP_VERSION:
        raise DatasetError(f"{source}: unsupported version {version}")
    if dtype != TMAP_FLOAT32:
        raise DatasetError(f"{source}: unsupported dtype code {dtype}")
    payload = blob[_TMAP_HEADER.size:]
    if len(payload) != w * h * c * 4:
        raise DatasetError(
            f"{source}: payload length mismatch (expected {w * h * c * 4} bytes, got {len(payload)})"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32)
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        y, x, ch = bad[0]
        raise DatasetError(f"{source}: non-finite value at ({x},{y},{ch})")
    return arr


def read_tensor_map(path) -> np.ndarray:
    """Load a tensor map as a float32 ``(H, W, C)`` array."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing tensor map") from None
    return parse_tensor_map(blob, str(path))
