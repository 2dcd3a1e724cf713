"""Synthetic line-source debris videos.

Each sequence samples ``K`` debris once, moves them at constant velocity with
a one-frame time step, and for every frame rasterizes the rotated rectangles
(with per-pixel brightness jitter), punches optional fracture gaps, blurs the
debris layer with a Gaussian PSF and composites it over a ZScale-normalized
background.

Random streams: sequence ``i`` of split ``name`` draws from
``PCG64(SeedSequence(seed, spawn_key=(crc32(name), i)))`` so any sequence can
be regenerated on its own, in any order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .domain import DebrisState, SequenceAnnotation, annotate
from .preprocess import zscale

Range = Tuple[float, float]


@dataclass(frozen=True)
class PsfParams:
    scale: float = 1.0
    sigma: float = 0.8

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"psf scale must be > 0, got {self.scale}")
        if not self.sigma > 0:
            raise ValueError(f"psf sigma must be > 0, got {self.sigma}")


def _check_range(name, rng, lo_bound=None, integer=False):
    if len(rng) != 2:
        raise ValueError(f"{name}: expected [min, max], got {rng!r}")
    lo, hi = rng
    if integer and (int(lo) != lo or int(hi) != hi):
        raise ValueError(f"{name}: bounds must be integers, got {rng!r}")
    if lo > hi:
        raise ValueError(f"{name}: min {lo} > max {hi}")
    if lo_bound is not None and lo < lo_bound:
        raise ValueError(f"{name}: min {lo} below {lo_bound}")


@dataclass(frozen=True)
class SimConfig:
    frames: Tuple[int, int] = (2, 5)
    debris_count_range: Tuple[int, int] = (1, 2)
    length_range: Range = (10.0, 60.0)
    width_range: Range = (2.0, 4.0)
    speed_range: Range = (2.0, 12.0)
    angle_range: Range = (0.0, 2 * math.pi)
    brightness_mean: float = 200.0
    brightness_jitter: float = 20.0
    psf: Optional[PsfParams] = field(default_factory=PsfParams)
    fracture_prob: float = 0.3
    fracture_gap_range: Range = (2.0, 6.0)
    image_size: Tuple[int, int] = (256, 256)  # (W, H)
    keep_in_frame: bool = True
    masks: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        _check_range("frames", self.frames, lo_bound=1, integer=True)
        _check_range("debris_count_range", self.debris_count_range, lo_bound=0, integer=True)
        _check_range("length_range", self.length_range)
        _check_range("width_range", self.width_range)
        _check_range("speed_range", self.speed_range, lo_bound=0)
        _check_range("angle_range", self.angle_range)
        _check_range("fracture_gap_range", self.fracture_gap_range, lo_bound=0)
        if not self.length_range[0] > 0:
            raise ValueError("length_range: lengths must be > 0")
        if not self.width_range[0] > 0:
            raise ValueError("width_range: widths must be > 0")
        if not 0.0 <= self.fracture_prob <= 1.0:
            raise ValueError(f"fracture_prob must be in [0, 1], got {self.fracture_prob}")
        if self.brightness_jitter < 0:
            raise ValueError("brightness_jitter must be >= 0")
        w, h = self.image_size
        if int(w) != w or int(h) != h or w < 1 or h < 1:
            raise ValueError(f"image_size must be positive integers, got {self.image_size}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


PRESETS = {
    "debris": dict(debris_count_range=(1, 2)),
    "dense": dict(debris_count_range=(3, 5)),
    "train": dict(debris_count_range=(1, 5)),
}


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SimConfig(**{**PRESETS[name], **overrides})


def sequence_rng(seed: int, split: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(split.encode()), index))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# motion
# --------------------------------------------------------------------------

def sample_initial_state(cfg: SimConfig, rng: np.random.Generator, frames: int = 1) -> DebrisState:
    """Draw one debris state.

    With ``cfg.keep_in_frame`` the first-frame center is drawn so the center
    stays within the pixel-center domain ``[0, W-1] x [0, H-1]`` for all
    ``frames`` frames; when the displacement is too long for that, the range
    collapses to the image and the debris may leave.
    """
    angle = rng.uniform(*cfg.angle_range)
    speed = rng.uniform(*cfg.speed_range)
    length = rng.uniform(*cfg.length_range)
    width = min(rng.uniform(*cfg.width_range), length)
    w, h = cfg.image_size
    xlo, xhi, ylo, yhi = 0.0, float(w - 1), 0.0, float(h - 1)
    if cfg.keep_in_frame and frames > 1:
        dx = speed * math.cos(angle) * (frames - 1)
        dy = speed * math.sin(angle) * (frames - 1)
        if abs(dx) <= xhi:
            xlo, xhi = max(xlo, -dx), min(xhi, xhi - dx)
        if abs(dy) <= yhi:
            ylo, yhi = max(ylo, -dy), min(yhi, yhi - dy)
    x = rng.uniform(xlo, xhi)
    y = rng.uniform(ylo, yhi)
    return DebrisState(x, y, length, width, angle, speed)


def propagate(s: DebrisState, dt: float = 1.0) -> DebrisState:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return replace(
        s,
        x=s.x + s.speed * math.cos(s.angle) * dt,
        y=s.y + s.speed * math.sin(s.angle) * dt,
    )


def generate_trajectory(s1: DebrisState, frames: int) -> list:
    if frames < 1:
        raise ValueError("frames must be >= 1")
    return [propagate(s1, t) for t in range(frames)]


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _local_coords(shape, s: DebrisState):
    """Pixel window covering the rectangle plus its along/across coordinates."""
    h, w = shape[:2]
    half = 0.5 * math.hypot(s.length, s.width) + 1.0
    x0, x1 = max(0, math.floor(s.x - half)), min(w - 1, math.ceil(s.x + half))
    y0, y1 = max(0, math.floor(s.y - half)), min(h - 1, math.ceil(s.y + half))
    if x0 > x1 or y0 > y1:
        return None
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    c, sn = math.cos(s.angle), math.sin(s.angle)
    dx, dy = xs - s.x, ys - s.y
    along = dx * c + dy * sn
    across = -dx * sn + dy * c
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), along, across


def rectangle_mask(shape, s: DebrisState) -> np.ndarray:
    """Pixels whose centers fall in the half-open rotated rectangle.

    A pixel is inside when ``-l/2 <= along < l/2`` and ``-w/2 <= across < w/2``.
    """
    mask = np.zeros(shape[:2], dtype=bool)
    local = _local_coords(shape, s)
    if local is None:
        return mask
    win, along, across = local
    half_l, half_w = s.length / 2.0, s.width / 2.0
    mask[win] = (along >= -half_l) & (along < half_l) & (across >= -half_w) & (across < half_w)
    return mask


def is_visible(s: DebrisState, image_size) -> bool:
    w, h = image_size
    return bool(rectangle_mask((h, w), s).any())


def rasterize_debris(canvas, s: DebrisState, brightness: float, rng: np.random.Generator,
                     jitter: float = 0.0) -> np.ndarray:
    out = np.array(canvas, dtype=float, copy=True)
    mask = rectangle_mask(out.shape, s)
    n = int(mask.sum())
    if n == 0:
        return out
    noise = rng.uniform(-jitter, jitter, size=n)
    if out.ndim == 3:
        out[mask] += (brightness + noise)[:, None]
    else:
        out[mask] += brightness + noise
    return out


def _psf_profile(psf: PsfParams) -> np.ndarray:
    r = max(1, math.ceil(3 * psf.sigma))
    k = np.arange(-r, r + 1)
    return np.exp(-(k ** 2) / (2 * psf.sigma ** 2))


def psf_kernel(psf: PsfParams, normalize: bool = True) -> np.ndarray:
    """Isotropic Gaussian sampled on a ``(2R+1)^2`` grid, ``R = ceil(3 sigma)``.

    Unnormalized samples are ``S / (2 pi sigma^2) exp(-r^2 / (2 sigma^2))``;
    normalized ones are rescaled to sum to exactly ``S``.
    """
    g = _psf_profile(psf)
    k = psf.scale / (2 * math.pi * psf.sigma ** 2) * np.outer(g, g)
    if normalize:
        k *= psf.scale / k.sum()
    return k


def apply_psf(canvas, psf: PsfParams) -> np.ndarray:
    """Correlate with the normalized kernel, as two 1-D passes since it is separable."""
    arr = np.asarray(canvas, dtype=float)
    g = _psf_profile(psf)
    g /= g.sum()
    out = ndimage.correlate1d(arr, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out * psf.scale


def fracture_gap_mask(shape, s: DebrisState, cfg: SimConfig, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Draw a fracture; return the pixels it removes or ``None`` when none occurs.

    The gap spans the full width, its length is drawn from
    ``cfg.fracture_gap_range`` and capped at ``l/2``, and it leaves at least
    one pixel of streak on each side where the length allows.
    """
    if rng.random() >= cfg.fracture_prob:
        return None
    gap = min(rng.uniform(*cfg.fracture_gap_range), s.length / 2.0)
    margin = min(1.0, (s.length - gap) / 2.0)
    start = rng.uniform(-s.length / 2.0 + margin, s.length / 2.0 - margin - gap)
    local = _local_coords(shape, s)
    mask = np.zeros(shape[:2], dtype=bool)
    if local is None or gap <= 0:
        return mask
    win, along, _ = local
    mask[win] = (along >= start) & (along < start + gap)
    return mask & rectangle_mask(shape, s)


def apply_fracture(canvas, s: DebrisState, cfg: SimConfig, rng: np.random.Generator,
                   background=None) -> np.ndarray:
    """Reset a random interior gap of the streak to ``background`` (zeros by default)."""
    out = np.array(canvas, dtype=float, copy=True)
    gap = fracture_gap_mask(out.shape, s, cfg, rng)
    if gap is None:
        return out
    if background is None:
        out[gap] = 0.0
    else:
        out[gap] = np.asarray(background, dtype=float)[gap]
    return out


# --------------------------------------------------------------------------
# backgrounds
# --------------------------------------------------------------------------

def synthetic_sky(image_size, rng: np.random.Generator, sky_level: float = 1000.0,
                  n_stars: int = 30, star_flux: Range = (2e3, 5e4), star_sigma: float = 1.2) -> np.ndarray:
    """Raw sky frame: Poisson-like sky noise plus Gaussian stars (counts, not 8-bit)."""
    w, h = image_size
    img = sky_level + math.sqrt(sky_level) * rng.standard_normal((h, w))
    stars = np.zeros((h, w))
    xs = rng.integers(0, w, size=n_stars)
    ys = rng.integers(0, h, size=n_stars)
    stars[ys, xs] = rng.uniform(*star_flux, size=n_stars)
    return img + apply_psf(stars, PsfParams(1.0, star_sigma))


def synthetic_background(image_size, rng: np.random.Generator, **kwargs) -> np.ndarray:
    return zscale(synthetic_sky(image_size, rng, **kwargs))


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------

def render_frame(background: np.ndarray, states, cfg: SimConfig, rng: np.random.Generator):
    """Composite one frame; returns ``(uint8 frame, support mask, visible flags)``."""
    shape = background.shape
    layer = np.zeros(shape)
    support = np.zeros(shape, dtype=bool)
    visible = []
    for s in states:
        rect = rectangle_mask(shape, s)
        if not rect.any():
            visible.append(False)
            continue
        visible.append(True)
        piece = rasterize_debris(np.zeros(shape), s, cfg.brightness_mean, rng, cfg.brightness_jitter)
        gap = fracture_gap_mask(shape, s, cfg, rng)
        if gap is not None:
            piece[gap] = 0.0
            rect &= ~gap
        layer += piece
        support |= rect
    if cfg.psf is not None:
        layer = apply_psf(layer, cfg.psf)
    frame = np.clip(np.rint(background + layer), 0, 255).astype(np.uint8)
    return frame, support, visible


def simulate_sequence(background, cfg: SimConfig, rng: Optional[np.random.Generator] = None):
    """Generate ``(frames, annotation)`` over a normalized background.

    Frames are ``uint8`` arrays of shape ``(H, W)``. Track ids run ``1..K`` in
    sampling order; a debris is annotated only in frames where its rectangle
    covers at least one pixel.
    """
    bg = np.asarray(background, dtype=float)
    w, h = cfg.image_size
    if bg.ndim != 2 or bg.shape[0] < h or bg.shape[1] < w:
        raise ValueError(f"background shape {bg.shape} smaller than image_size (W={w}, H={h})")
    bg = bg[:h, :w]
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    n_frames = int(rng.integers(cfg.frames[0], cfg.frames[1] + 1))
    k = int(rng.integers(cfg.debris_count_range[0], cfg.debris_count_range[1] + 1))
    trajectories = [generate_trajectory(sample_initial_state(cfg, rng, n_frames), n_frames) for _ in range(k)]

    frames, objects, masks = [], [], []
    for t in range(n_frames):
        states = [traj[t] for traj in trajectories]
        frame, support, visible = render_frame(bg, states, cfg, rng)
        frames.append(frame)
        objects.append([annotate(i + 1, s) for i, (s, vis) in enumerate(zip(states, visible)) if vis])
        masks.append(support)
    ann = SequenceAnnotation(objects, masks if cfg.masks else None)
    return frames, ann


def debris_contrast_fraction(frame, support, background, margin: float) -> float:
    """Share of debris pixels brighter than the background median by ``margin``."""
    support = np.asarray(support, dtype=bool)
    if not support.any():
        return 1.0
    level = float(np.median(background)) + margin
    return float(np.mean(np.asarray(frame, dtype=float)[support] > level))

