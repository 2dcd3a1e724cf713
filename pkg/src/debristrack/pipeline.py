"""Dataset-level drivers used by the CLI: generation, tensor rendering, tracking."""

from __future__ import annotations

import contextlib
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset_io
from .dataset_io import DatasetError
from .decode import (
    OracleNoise,
    decode_frame,
    oracle_detect_with_log,
    render_gt_embeddings,
    render_gt_heatmap,
    render_gt_offsets,
)
from .preprocess import zscale
from .simulator import SimConfig, sequence_rng, simulate_sequence, synthetic_background
from .tracker import TrackerConfig, run_sequence

TENSOR_NAMES = ("heatmap", "emb_left", "emb_right", "offset_left", "offset_right")


@contextlib.contextmanager
def atomic_dir(out, overwrite: bool = False):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} exists and is not empty (pass --overwrite to replace it)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def load_background(path) -> np.ndarray:
    """Raw intensities from ``.npy`` or a grayscale image, ZScale-normalized."""
    path = Path(path)
    if path.suffix == ".npy":
        raw = np.load(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            raw = np.asarray(im, dtype=float)
    if raw.ndim != 2:
        raise DatasetError(f"{path}: background must be a single-channel image")
    return zscale(raw)


def generate_sequence(cfg: SimConfig, seed: int, split: str, index: int, background_files=()):
    rng = sequence_rng(seed, split, index)
    if background_files:
        bg = load_background(background_files[index % len(background_files)])
    else:
        bg = synthetic_background(cfg.image_size, rng)
    frames, ann = simulate_sequence(bg, cfg, rng)
    meta = {"split": split, "index": index, "seed": seed, "sim_config": asdict(cfg)}
    return frames, ann, meta


def _write_one(args):
    cfg, seed, split, index, root, bg_files = args
    frames, ann, meta = generate_sequence(cfg, seed, split, index, bg_files)
    dataset_io.write_sequence(frames, ann, Path(root) / split / dataset_io.sequence_name(index), meta)
    return [len(f) for f in ann.objects]


def write_split(root, split: str, cfg: SimConfig, count: int, seed: int, threads: int = 1,
                background_files=()) -> dict:
    """Generate ``count`` sequences into ``root/split``; returns per-frame debris count stats."""
    (Path(root) / split).mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed, split, i, str(root), tuple(background_files)) for i in range(1, count + 1)]
    if threads > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(_write_one, jobs, chunksize=max(1, count // (4 * threads))))
    else:
        counts = [_write_one(j) for j in jobs]
    per_frame = [n for seq in counts for n in seq]
    return {
        "sequences": count,
        "frames": len(per_frame),
        "debris_per_frame_min": min(per_frame) if per_frame else 0,
        "debris_per_frame_max": max(per_frame) if per_frame else 0,
        "annotated_objects": int(sum(per_frame)),
    }


# --------------------------------------------------------------------------
# tensors
# --------------------------------------------------------------------------

def tensor_path(tensors_dir, seq_id: str, frame: int, name: str) -> Path:
    return Path(tensors_dir) / seq_id / f"{frame:06d}.{name}.tmap"


def render_sequence_tensors(seq_dir, out_dir, decode_cfg) -> int:
    """Ground-truth tensor maps (``TENSOR_NAMES``) for every frame of a sequence."""
    seq_dir = Path(seq_dir)
    frames, ann = dataset_io.read_sequence(seq_dir)
    h, w = frames[0].shape
    target = Path(out_dir) / seq_dir.name
    target.mkdir(parents=True, exist_ok=True)
    for t, objs in enumerate(ann.objects, start=1):
        maps = {"heatmap": render_gt_heatmap(objs, decode_cfg.heatmap, (w, h))}
        maps["emb_left"], maps["emb_right"] = render_gt_embeddings(objs, (w, h), decode_cfg.embedding_dim)
        maps["offset_left"], maps["offset_right"] = render_gt_offsets(objs, (w, h))
        for name, grid in maps.items():
            dataset_io.write_tensor_map(grid, tensor_path(out_dir, seq_dir.name, t, name))
    return ann.num_frames


# --------------------------------------------------------------------------
# tracking
# --------------------------------------------------------------------------

def oracle_sequence_detections(ann, noise: OracleNoise, rng, size):
    per_frame, log = [], {}
    for t, objs in enumerate(ann.objects, start=1):
        dets, dropped = oracle_detect_with_log(objs, noise, rng, size)
        per_frame.append(dets)
        if dropped:
            log[t] = dropped
    return per_frame, log


def tensor_sequence_detections(tensors_dir, seq_id: str, num_frames: int, decode_cfg):
    per_frame = []
    for t in range(1, num_frames + 1):
        maps = {}
        for name in TENSOR_NAMES:
            p = tensor_path(tensors_dir, seq_id, t, name)
            if not p.exists():
                raise DatasetError(f"{seq_id}: missing {name} tensor for frame {t} ({p})")
            maps[name] = dataset_io.read_tensor_map(p)
        per_frame.append(decode_frame(
            maps["heatmap"], maps["emb_left"], maps["emb_right"], decode_cfg.heatmap,
            gate=decode_cfg.gate, norm=decode_cfg.norm, method=decode_cfg.method,
            offset_left=maps["offset_left"], offset_right=maps["offset_right"],
        ))
    return per_frame


def track_split(split_dir, out_dir, tracker_cfg: TrackerConfig, source: str = "oracle",
                noise: OracleNoise = OracleNoise(), seed: int = 0, tensors_dir=None,
                decode_cfg=None) -> dict:
    """Track every sequence of a split and write ``out_dir/<seq_id>.csv``.

    Oracle runs return the dropout log ``{seq_id: {frame: [dropped gt ids]}}``.
    """
    split_dir, out_dir = Path(split_dir), Path(out_dir)
    log = {}
    for seq_id in dataset_io.list_sequences(split_dir):
        ann = dataset_io.read_annotation(split_dir / seq_id)
        if source == "oracle":
            meta = dataset_io.read_meta(split_dir / seq_id)
            size = tuple(meta.get("sim_config", {}).get("image_size", (256, 256)))
            rng = sequence_rng(seed, f"oracle/{seq_id}", 0)
            per_frame, dropped = oracle_sequence_detections(ann, noise, rng, size)
            log[seq_id] = dropped
        elif source == "tensors":
            if tensors_dir is None:
                raise ValueError("--tensors-dir is required with --source tensors")
            per_frame = tensor_sequence_detections(tensors_dir, seq_id, ann.num_frames, decode_cfg)
        else:
            raise ValueError(f"unknown detection source {source!r}")
        tracks = run_sequence(per_frame, tracker_cfg)
        dataset_io.write_results_csv(tracks, out_dir / f"{seq_id}.csv")
    return log
