"""Synthetic radiograph-like images with analytically known severity scores.

Each image is a smooth dark background (all values below OPACITY_THRESHOLD)
with up to three hard-edged bright elliptical blobs per lung half (all blob
values above OPACITY_THRESHOLD). The per-lung score is a quantized function
of the fraction of the half covered by blobs, so the ground truth can be
recomputed from the emitted pixels alone: threshold at OPACITY_THRESHOLD,
count pixels per half, apply score_from_coverage. The brightness margins are
wide enough that 8-bit PNG round-trips preserve the mask exactly.

Background and blob brightness ranges are drawn per sample (and per half for
blobs), so mean intensity is a poor proxy for coverage; recovering the score
requires separating pixels at the threshold.
"""

from dataclasses import dataclass

import numpy as np

from .data import CxrSample
from .errors import ArgumentError
from .seeding import ROLE_SYNTH, rng_for

# Pixels strictly above this value belong to an opacity blob.
OPACITY_THRESHOLD = 0.5

_BG_LOW, _BG_HIGH = 0.05, 0.38
_BLOB_LOW, _BLOB_HIGH = 0.64, 0.90

# Coverage fraction at which a lung saturates at its maximum score of 4.
_FULL_COVERAGE = 0.76
_MAX_LUNG_SCORE = 4
_MAX_BLOBS_PER_LUNG = 3


def score_from_coverage(fraction: float) -> int:
    """Quantize a covered fraction of one lung half to a score in {0..4}.

    Bands are uniform up to _FULL_COVERAGE; anything at or beyond the last
    band boundary saturates at 4.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ArgumentError(f"coverage fraction must be in [0, 1], got {fraction}")
    return min(_MAX_LUNG_SCORE, int(5.0 * fraction / _FULL_COVERAGE))


def _wave_field(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Unnormalized smooth field: a randomly placed cosine bump plus two
    random plane waves. Callers rescale it into their own value range."""
    yy = np.linspace(0.0, 1.0, height, dtype=np.float64)[:, None]
    xx = np.linspace(0.0, 1.0, width, dtype=np.float64)[None, :]
    cx_, cy_ = rng.uniform(0.25, 0.75, size=2)
    bump = np.cos(np.pi * np.clip(xx - cx_, -0.5, 0.5)) * np.cos(np.pi * np.clip(yy - cy_, -0.5, 0.5))
    raw = rng.uniform(0.3, 1.0) * bump
    for _ in range(2):
        fx, fy = rng.uniform(0.5, 3.5, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        raw = raw + rng.uniform(0.1, 0.6) * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    return raw


def _rescale(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = float(raw.max() - raw.min())
    if span < 1e-9:
        return np.full(raw.shape, (lo + hi) / 2.0)
    return lo + (hi - lo) * (raw - raw.min()) / span


def _background(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    # exposure varies per sample: the field is mapped into a random sub-range,
    # so mean background level carries no information about coverage
    raw = _wave_field(height, width, rng)
    lo = rng.uniform(_BG_LOW, 0.18)
    hi = rng.uniform(lo + 0.10, _BG_HIGH)
    return _rescale(raw, lo, hi)


def _blob_texture(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    # blob brightness is drawn independently of blob area for the same reason
    raw = _wave_field(height, width, rng)
    lo = rng.uniform(_BLOB_LOW, 0.72)
    hi = rng.uniform(0.80, _BLOB_HIGH)
    return _rescale(raw, lo, hi)


def _half_mask(
    height: int,
    width: int,
    col_lo: int,
    col_hi: int,
    target: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Union of up to three clipped ellipses covering about `target` of the
    columns [col_lo, col_hi); may overshoot slightly, never stops short while
    blobs remain."""
    mask = np.zeros((height, width), dtype=bool)
    if target <= 0.0:
        return mask
    half_w = col_hi - col_lo
    half_area = float(height * half_w)
    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    covered = 0.0
    # low and mid targets are spread over three possibly elongated blobs;
    # high targets need one dominant round mass first, or union overlap and
    # edge clipping keep the half from ever reaching its target
    if target > 0.5:
        chunks = ((0.85, 1.05, 1.4, 0.30), (1.10, 1.55, 1.25, 0.20), (1.10, 1.60, 1.25, 0.20))
    else:
        chunks = ((0.25, 0.50, 8.0, 0.12), (0.45, 0.75, 8.0, 0.12), (0.95, 1.35, 2.0, 0.20))
    for chunk_lo, chunk_hi, stretch, inset in chunks:
        remaining = target - covered
        if remaining <= 0.0:
            break
        area = remaining * half_area * rng.uniform(chunk_lo, chunk_hi)
        area = float(np.clip(area, 9.0, 0.95 * half_area))
        aspect = float(np.exp(rng.uniform(-np.log(stretch), np.log(stretch))))
        rx = max(1.5, np.sqrt(area * aspect / np.pi))
        ry = max(1.5, np.sqrt(area / (aspect * np.pi)))
        rx = min(rx, 0.75 * half_w)
        ry = min(ry, 0.90 * height)
        cx = rng.uniform(col_lo + inset * half_w, col_hi - inset * half_w)
        cy = rng.uniform(inset * height, (1.0 - inset) * height)
        ellipse = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        ellipse[:, :col_lo] = False
        ellipse[:, col_hi:] = False
        mask |= ellipse
        covered = float(mask.sum()) / half_area
    return mask


def _draw_lung_targets(rng: np.random.Generator) -> tuple[float, float]:
    """Pick per-lung coverage targets so totals are roughly uniform in 0..8."""
    total = int(rng.integers(0, 2 * _MAX_LUNG_SCORE + 1))
    left = int(rng.integers(max(0, total - _MAX_LUNG_SCORE), min(_MAX_LUNG_SCORE, total) + 1))
    right = total - left
    band = _FULL_COVERAGE / 5.0
    targets = []
    for s in (left, right):
        if s == 0:
            targets.append(0.0)
        else:
            # the top band aims well past its floor: unions of clipped
            # ellipses fall short of large targets more often than small ones
            margin = 0.30 * band if s == _MAX_LUNG_SCORE else 0.08 * band
            lo = s * band + margin
            hi = min((s + 1) * band, _FULL_COVERAGE) - 0.08 * band
            targets.append(float(rng.uniform(lo, hi)))
    return targets[0], targets[1]


def _render(
    height: int, width: int, left_target: float, right_target: float, rng: np.random.Generator
) -> tuple[np.ndarray, int, int]:
    mid = width // 2
    img = _background(height, width, rng)
    tex_l = _blob_texture(height, width, rng)
    tex_r = _blob_texture(height, width, rng)
    mask_l = _half_mask(height, width, 0, mid, left_target, rng)
    mask_r = _half_mask(height, width, mid, width, right_target, rng)
    img = np.where(mask_l, tex_l, img)
    img = np.where(mask_r, tex_r, img)
    y_l = score_from_coverage(float(mask_l.sum()) / (height * mid))
    y_r = score_from_coverage(float(mask_r.sum()) / (height * (width - mid)))
    return img.astype(np.float32)[:, :, None], y_l, y_r


def synth_dataset(n: int, size: tuple[int, int], seed: int) -> list[CxrSample]:
    """Generate n labeled samples, deterministic per seed.

    Sample i is driven by its own RNG stream derived from (seed, i), so
    regeneration with the same arguments is byte-identical and generation is
    safe to shard.
    """
    if n <= 0:
        raise ArgumentError(f"n must be positive, got {n}")
    height, width = int(size[0]), int(size[1])
    if height < 8 or width < 8:
        raise ArgumentError(f"size must be at least 8x8, got {height}x{width}")
    samples = []
    for i in range(n):
        rng = rng_for(seed, ROLE_SYNTH, i)
        left_target, right_target = _draw_lung_targets(rng)
        image, y_l, y_r = _render(height, width, left_target, right_target, rng)
        samples.append(
            CxrSample(
                image=image,
                score_total=float(y_l + y_r),
                score_kind="synthetic",
                source_id=f"synth-{i:05d}",
                score_left=float(y_l),
                score_right=float(y_r),
            )
        )
    return samples


def directed_sample(
    size: tuple[int, int],
    left_coverage: float,
    right_coverage: float,
    seed: int,
    source_id: str = "directed",
) -> CxrSample:
    """Generate one sample aiming at explicit per-lung coverage fractions.

    Useful for probing a trained model with a known spatial layout, e.g. a
    bright blob confined to the left half.
    """
    for name, value in (("left_coverage", left_coverage), ("right_coverage", right_coverage)):
        if not 0.0 <= value <= 1.0:
            raise ArgumentError(f"{name} must be in [0, 1], got {value}")
    height, width = int(size[0]), int(size[1])
    rng = rng_for(seed, ROLE_SYNTH, 0)
    image, y_l, y_r = _render(height, width, left_coverage, right_coverage, rng)
    return CxrSample(
        image=image,
        score_total=float(y_l + y_r),
        score_kind="synthetic",
        source_id=source_id,
        score_left=float(y_l),
        score_right=float(y_r),
    )


__all__ = [
    "OPACITY_THRESHOLD",
    "directed_sample",
    "score_from_coverage",
    "synth_dataset",
]
