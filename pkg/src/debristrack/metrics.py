"""CLEAR-MOT (MOTA, IDS), identity (IDF1) and HOTA (DetA, AssA) scoring for line sources.

Similarities live in ``[0, 1]``. For ``endpoint_l1`` the summed L1 endpoint
distance ``d`` (ends paired whichever way round is closer) maps to
``max(0, 1 - d / (2 * threshold_px))``, so the CLEAR/identity cutoff
``d <= threshold_px`` is ``similarity >= 0.5`` and the HOTA alpha sweep reads
as localization tolerance. For ``bbox_iou`` the similarity is the box IoU and
the cutoff is the threshold itself.

Each sequence is reduced to a :class:`SequenceCounts`; aggregates sum those
counts, which makes them equal to scoring the concatenated sequences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .domain import EndpointPair, SequenceAnnotation, pairwise_endpoint_l1

logger = logging.getLogger(__name__)

MATCH_EPS = 1e-10
DEFAULT_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class MatchConfig:
    similarity: str = "endpoint_l1"
    match_threshold: Optional[float] = None
    hota_alphas: tuple = DEFAULT_ALPHAS

    def __post_init__(self):
        if self.similarity not in ("endpoint_l1", "bbox_iou"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.match_threshold is not None and not self.match_threshold > 0:
            raise ValueError("match_threshold must be > 0")
        if self.similarity == "bbox_iou" and self.threshold > 1:
            raise ValueError("IoU threshold must be <= 1")
        if not self.hota_alphas or not all(0 < a < 1 for a in self.hota_alphas):
            raise ValueError("hota_alphas must lie in (0, 1)")

    @property
    def threshold(self) -> float:
        if self.match_threshold is not None:
            return float(self.match_threshold)
        return 10.0 if self.similarity == "endpoint_l1" else 0.5

    @property
    def cutoff(self) -> float:
        """Similarity at or above which a pair counts for CLEAR and identity matching."""
        return 0.5 if self.similarity == "endpoint_l1" else self.threshold


@dataclass(frozen=True)
class FrameObject:
    id: int
    endpoints: EndpointPair
    bbox: tuple  # (x_min, y_min, x_max, y_max)


# --------------------------------------------------------------------------
# conversions
# --------------------------------------------------------------------------

def gt_frames(ann: SequenceAnnotation) -> list:
    return [[FrameObject(o.track_id, o.endpoints, o.bbox) for o in frame] for frame in ann.objects]


def track_frames(tracks, num_frames: int) -> list:
    frames = [[] for _ in range(num_frames)]
    for tr in tracks:
        for f, det in tr.entries:
            if not 1 <= f <= num_frames:
                raise ValueError(f"track {tr.id}: frame {f} outside 1..{num_frames}")
            frames[f - 1].append(FrameObject(tr.id, det.endpoints, det.bbox()))
    return frames


def result_frames(rows, num_frames: int) -> list:
    frames = [[] for _ in range(num_frames)]
    for r in rows:
        if not 1 <= r.frame <= num_frames:
            raise ValueError(f"result row for frame {r.frame} outside 1..{num_frames}")
        frames[r.frame - 1].append(FrameObject(r.track_id, r.endpoints, tuple(r.bbox)))
    return frames


# --------------------------------------------------------------------------
# similarity and per-frame matching
# --------------------------------------------------------------------------

def endpoint_distance(a: EndpointPair, b: EndpointPair) -> float:
    """Summed L1 gap over both endpoints, under the better of the two end correspondences."""
    return float(pairwise_endpoint_l1(a.as_array(), b.as_array())[0, 0])


def box_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def similarity_matrix(gt, pred, cfg: MatchConfig) -> np.ndarray:
    sim = np.zeros((len(gt), len(pred)))
    if not len(gt) or not len(pred):
        return sim
    if cfg.similarity == "endpoint_l1":
        ga = np.stack([g.endpoints.as_array() for g in gt])
        pa = np.stack([p.endpoints.as_array() for p in pred])
        d = pairwise_endpoint_l1(ga, pa)
        return np.maximum(0.0, 1.0 - d / (2.0 * cfg.threshold))
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            sim[i, j] = box_iou(g.bbox, p.bbox)
    return sim


@dataclass
class FrameMatch:
    pairs: list  # [(gt_idx, pred_idx)]
    unmatched_gt: list
    unmatched_pred: list

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


def frame_match(gt, pred, cfg: MatchConfig, prior: Optional[dict] = None,
                sim: Optional[np.ndarray] = None) -> FrameMatch:
    """One-to-one matching that maximizes total similarity over valid pairs.

    ``prior`` maps gt id to the pred id it was matched with in the previous
    frame; such pairs are kept first when still valid, and the remainder is
    solved by Hungarian assignment.
    """
    if sim is None:
        sim = similarity_matrix(gt, pred, cfg)
    valid = sim >= cfg.cutoff - MATCH_EPS
    pairs = []
    if prior:
        pred_index = {p.id: j for j, p in enumerate(pred)}
        for i, g in enumerate(gt):
            j = pred_index.get(prior.get(g.id))
            if j is not None and valid[i, j]:
                pairs.append((i, j))
    used_g = {i for i, _ in pairs}
    used_p = {j for _, j in pairs}
    rows = [i for i in range(len(gt)) if i not in used_g]
    cols = [j for j in range(len(pred)) if j not in used_p]
    if rows and cols:
        score = np.where(valid, sim, 0.0)[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(score, maximize=True)
        for a, b in zip(r, c):
            if valid[rows[a], cols[b]]:
                pairs.append((rows[a], cols[b]))
    pairs.sort()
    mg = {i for i, _ in pairs}
    mp = {j for _, j in pairs}
    return FrameMatch(
        pairs,
        [i for i in range(len(gt)) if i not in mg],
        [j for j in range(len(pred)) if j not in mp],
    )


# --------------------------------------------------------------------------
# per-sequence counts
# --------------------------------------------------------------------------

@dataclass
class SequenceCounts:
    alphas: tuple
    num_gt: int = 0
    num_pred: int = 0
    tp: int = 0
    fn: int = 0
    fp: int = 0
    idsw: int = 0
    idtp: int = 0
    hota_tp: np.ndarray = None
    hota_fn: np.ndarray = None
    hota_fp: np.ndarray = None
    hota_ass: np.ndarray = None  # sum over TPs of per-TP association IoU

    def __post_init__(self):
        n = len(self.alphas)
        for name in ("hota_tp", "hota_fn", "hota_fp", "hota_ass"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))

    def __add__(self, other: "SequenceCounts") -> "SequenceCounts":
        if tuple(self.alphas) != tuple(other.alphas):
            raise ValueError("cannot combine counts over different alpha grids")
        return SequenceCounts(
            self.alphas,
            self.num_gt + other.num_gt,
            self.num_pred + other.num_pred,
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.idsw + other.idsw,
            self.idtp + other.idtp,
            self.hota_tp + other.hota_tp,
            self.hota_fn + other.hota_fn,
            self.hota_fp + other.hota_fp,
            self.hota_ass + other.hota_ass,
        )


def clear_counts(gt_seq, pred_seq, cfg: MatchConfig) -> dict:
    """Frame-by-frame CLEAR-MOT accumulation.

    An identity switch is a matched gt whose pred id differs from the pred id
    it was last matched to, however long ago.
    """
    last_id, prev_pairs = {}, {}
    tp = fn = fp = idsw = 0
    for gt, pred in zip(gt_seq, pred_seq):
        m = frame_match(gt, pred, cfg, prior=prev_pairs)
        prev_pairs = {}
        for i, j in m.pairs:
            gid, pid = gt[i].id, pred[j].id
            if gid in last_id and last_id[gid] != pid:
                idsw += 1
            last_id[gid] = pid
            prev_pairs[gid] = pid
        tp += len(m.pairs)
        fn += m.fn
        fp += m.fp
    return dict(tp=tp, fn=fn, fp=fp, idsw=idsw)


def _id_index(seq) -> dict:
    ids = sorted({o.id for frame in seq for o in frame})
    return {k: n for n, k in enumerate(ids)}


def identity_tp(gt_seq, pred_seq, cfg: MatchConfig) -> int:
    """IDTP under the best one-to-one assignment of gt ids to pred ids."""
    gidx, pidx = _id_index(gt_seq), _id_index(pred_seq)
    if not gidx or not pidx:
        return 0
    overlap = np.zeros((len(gidx), len(pidx)))
    for gt, pred in zip(gt_seq, pred_seq):
        if not gt or not pred:
            continue
        valid = similarity_matrix(gt, pred, cfg) >= cfg.cutoff - MATCH_EPS
        for i, j in zip(*np.nonzero(valid)):
            overlap[gidx[gt[i].id], pidx[pred[j].id]] += 1
    r, c = linear_sum_assignment(overlap, maximize=True)
    return int(round(overlap[r, c].sum()))


def hota_counts(gt_seq, pred_seq, cfg: MatchConfig) -> tuple:
    """Per-alpha ``(TP, FN, FP, sum of per-TP association IoU)`` arrays."""
    alphas = np.asarray(cfg.hota_alphas, dtype=float)
    na = len(alphas)
    tp, fn, fp, ass = np.zeros(na), np.zeros(na), np.zeros(na), np.zeros(na)
    gidx, pidx = _id_index(gt_seq), _id_index(pred_seq)
    ng, npr = len(gidx), len(pidx)
    if ng == 0 or npr == 0:
        fn += sum(len(f) for f in gt_seq)
        fp += sum(len(f) for f in pred_seq)
        return tp, fn, fp, ass

    sims = [similarity_matrix(g, p, cfg) for g, p in zip(gt_seq, pred_seq)]
    potential = np.zeros((ng, npr))
    gt_count = np.zeros((ng, 1))
    pred_count = np.zeros((1, npr))
    for gt, pred, sim in zip(gt_seq, pred_seq, sims):
        gi = [gidx[o.id] for o in gt]
        pj = [pidx[o.id] for o in pred]
        gt_count[gi, 0] += 1
        pred_count[0, pj] += 1
        if not gi or not pj:
            continue
        denom = sim.sum(axis=0)[None, :] + sim.sum(axis=1)[:, None] - sim
        sim_iou = np.zeros_like(sim)
        ok = denom > np.finfo(float).eps
        sim_iou[ok] = sim[ok] / denom[ok]
        potential[np.ix_(gi, pj)] += sim_iou
    alignment = potential / (gt_count + pred_count - potential)

    matches = np.zeros((na, ng, npr))
    for gt, pred, sim in zip(gt_seq, pred_seq, sims):
        if not gt or not pred:
            fn += len(gt)
            fp += len(pred)
            continue
        gi = np.array([gidx[o.id] for o in gt])
        pj = np.array([pidx[o.id] for o in pred])
        score = alignment[np.ix_(gi, pj)] * sim
        r, c = linear_sum_assignment(score, maximize=True)
        msim = sim[r, c]
        for a, alpha in enumerate(alphas):
            ok = msim >= alpha - MATCH_EPS
            n = int(ok.sum())
            tp[a] += n
            fn[a] += len(gt) - n
            fp[a] += len(pred) - n
            matches[a, gi[r[ok]], pj[c[ok]]] += 1
    for a in range(na):
        m = matches[a]
        ass_iou = m / np.maximum(1.0, gt_count + pred_count - m)
        ass[a] = float((m * ass_iou).sum())
    return tp, fn, fp, ass


def sequence_counts(gt_seq, pred_seq, cfg: MatchConfig) -> SequenceCounts:
    if len(gt_seq) != len(pred_seq):
        raise ValueError(f"gt has {len(gt_seq)} frames, prediction has {len(pred_seq)}")
    clear = clear_counts(gt_seq, pred_seq, cfg)
    htp, hfn, hfp, hass = hota_counts(gt_seq, pred_seq, cfg)
    return SequenceCounts(
        tuple(cfg.hota_alphas),
        num_gt=sum(len(f) for f in gt_seq),
        num_pred=sum(len(f) for f in pred_seq),
        idtp=identity_tp(gt_seq, pred_seq, cfg),
        hota_tp=htp, hota_fn=hfn, hota_fp=hfp, hota_ass=hass,
        **clear,
    )


# --------------------------------------------------------------------------
# metrics from counts
# --------------------------------------------------------------------------

def mota(c: SequenceCounts) -> float:
    if c.num_gt == 0:
        logger.warning("MOTA undefined without ground truth; reporting NaN")
        return float("nan")
    return 1.0 - (c.fn + c.fp + c.idsw) / c.num_gt


def idf1_from_counts(c: SequenceCounts) -> float:
    return 2.0 * c.idtp / max(1, c.num_gt + c.num_pred)


def hota_per_alpha(c: SequenceCounts) -> tuple:
    """``(HOTA, DetA, AssA)`` arrays over the alpha grid."""
    deta = c.hota_tp / np.maximum(1.0, c.hota_tp + c.hota_fn + c.hota_fp)
    assa = c.hota_ass / np.maximum(1.0, c.hota_tp)
    return np.sqrt(deta * assa), deta, assa


def idf1(gt_seq, pred_seq, cfg: MatchConfig = MatchConfig()) -> float:
    n_gt = sum(len(f) for f in gt_seq)
    n_pred = sum(len(f) for f in pred_seq)
    return 2.0 * identity_tp(gt_seq, pred_seq, cfg) / max(1, n_gt + n_pred)


def hota(gt_seq, pred_seq, cfg: MatchConfig = MatchConfig()) -> tuple:
    """Alpha-averaged ``(HOTA, DetA, AssA)``."""
    tp, fn, fp, ass = hota_counts(gt_seq, pred_seq, cfg)
    c = SequenceCounts(tuple(cfg.hota_alphas), hota_tp=tp, hota_fn=fn, hota_fp=fp, hota_ass=ass)
    h, d, a = hota_per_alpha(c)
    return float(h.mean()), float(d.mean()), float(a.mean())


def summarize(c: SequenceCounts) -> dict:
    h, d, a = hota_per_alpha(c)
    return {
        "MOTA": mota(c),
        "IDF1": idf1_from_counts(c),
        "IDS": c.idsw,
        "HOTA": float(h.mean()),
        "DetA": float(d.mean()),
        "AssA": float(a.mean()),
        "TP": c.tp,
        "FP": c.fp,
        "FN": c.fn,
        "GT": c.num_gt,
        "PRED": c.num_pred,
        "IDTP": c.idtp,
    }


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

TABLE_COLUMNS = ("IDF1", "MOTA", "IDS", "HOTA", "DetA", "AssA")


@dataclass
class EvalReport:
    per_sequence: dict
    aggregate: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

        payload = {
            "config": self.config,
            "aggregate": clean(self.aggregate),
            "per_sequence": {k: clean(v) for k, v in sorted(self.per_sequence.items())},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        def cell(col, v):
            if col == "IDS":
                return f"{v:>8d}"
            return f"{'nan':>8}" if v is None or math.isnan(v) else f"{100 * v:8.1f}"

        width = max([len("sequence"), len("OVERALL")] + [len(k) for k in self.per_sequence])
        lines = [f"{'sequence':<{width}} " + " ".join(f"{c:>8}" for c in TABLE_COLUMNS)]
        for name, row in sorted(self.per_sequence.items()):
            lines.append(f"{name:<{width}} " + " ".join(cell(c, row[c]) for c in TABLE_COLUMNS))
        lines.append(f"{'OVERALL':<{width}} " + " ".join(cell(c, self.aggregate[c]) for c in TABLE_COLUMNS))
        return "\n".join(lines) + "\n"


def evaluate_sequences(sequences: dict, cfg: MatchConfig = MatchConfig()) -> EvalReport:
    """Score ``{seq_id: (gt_frames, pred_frames)}``; aggregate pools the counts."""
    per_seq, total = {}, SequenceCounts(tuple(cfg.hota_alphas))
    for name in sorted(sequences):
        gt_seq, pred_seq = sequences[name]
        c = sequence_counts(gt_seq, pred_seq, cfg)
        per_seq[name] = summarize(c)
        total = total + c
    cfg_dict = {"similarity": cfg.similarity, "match_threshold": cfg.threshold,
                "hota_alphas": list(cfg.hota_alphas)}
    return EvalReport(per_seq, summarize(total), cfg_dict)


def evaluate(gt_dir, pred_dir, cfg: MatchConfig = MatchConfig()) -> EvalReport:
    """Score every sequence under ``gt_dir`` against ``pred_dir/<seq_id>.csv``."""
    from . import dataset_io

    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    seq_ids = dataset_io.list_sequences(gt_dir)
    missing = [s for s in seq_ids if not (pred_dir / f"{s}.csv").exists()]
    if missing:
        raise dataset_io.DatasetError(f"no predictions for sequences: {', '.join(missing)}")
    sequences = {}
    for s in seq_ids:
        ann = dataset_io.read_annotation(gt_dir / s)
        rows = dataset_io.read_results_csv(pred_dir / f"{s}.csv")
        sequences[s] = (gt_frames(ann), result_frames(rows, ann.num_frames))
    return evaluate_sequences(sequences, cfg)
