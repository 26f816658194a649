"""Score-aware augmentations with exact label propagation.

Pairwise operations treat an image as two lung halves split at the vertical
midline (column W//2). Every operation is a pure function of its inputs and
an explicit RNG, so augmented datasets are reproducible byte for byte.

Label rules:
  half replacement   y = a.score_left + b.score_right (per-lung scores kept)
  cutmix / mixup     y = lam * y_a + (1 - lam) * y_b (per-lung scores kept
                     only for mixup with lam in {0, 1}, dropped otherwise)
  horizontal flip    y unchanged, per-lung scores swapped

For cutmix, lam is not the drawn target but the exact retained-pixel
fraction of the emitted image: retained_pixels / (H * W) after the box has
been clipped to the image bounds.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import CxrSample
from .errors import ArgumentError, AugmentationError
from .seeding import ROLE_EXPAND, rng_for


@dataclass(frozen=True)
class CutMixParams:
    """Bounds for the retained-area fraction and the seed for offline use."""

    lambda_min: float = 0.5
    lambda_max: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lambda_min <= self.lambda_max < 1.0:
            raise ArgumentError(
                f"need 0 < lambda_min <= lambda_max < 1, got "
                f"[{self.lambda_min}, {self.lambda_max}]"
            )


def _check_pair(a: CxrSample, b: CxrSample, op: str) -> None:
    if a.image.shape != b.image.shape:
        raise AugmentationError(
            f"{op}: image dimensions differ, {a.image.shape} vs {b.image.shape} "
            f"({a.source_id!r} vs {b.source_id!r})"
        )
    if a.score_kind != b.score_kind:
        raise AugmentationError(
            f"{op}: cannot mix score kinds {a.score_kind!r} and {b.score_kind!r}"
        )


def lung_score_replace(a: CxrSample, b: CxrSample) -> tuple[CxrSample, CxrSample]:
    """Swap lung halves between two samples, adding the matching half scores.

    Returns ([left of a | right of b], [left of b | right of a]); the first
    output scores a.score_left + b.score_right, the second the complement.
    """
    _check_pair(a, b, "lung_score_replace")
    for s in (a, b):
        if not s.has_lung_scores:
            raise AugmentationError(
                f"lung_score_replace: sample {s.source_id!r} requires individual "
                f"ground truth scores for both lungs"
            )
    mid = a.image.shape[1] // 2

    def combine(left: CxrSample, right: CxrSample) -> CxrSample:
        image = np.concatenate([left.image[:, :mid], right.image[:, mid:]], axis=1)
        return CxrSample(
            image=image,
            score_total=left.score_left + right.score_right,
            score_kind=left.score_kind,
            source_id=f"{left.source_id}-l-{right.source_id}-r",
            score_left=left.score_left,
            score_right=right.score_right,
        )

    return combine(a, b), combine(b, a)


def expand_dataset(samples: list[CxrSample], seed: int) -> list[CxrSample]:
    """Originals plus both outputs of one half swap per sample.

    Samples are shuffled with the given seed and paired in a cycle (each is
    the left operand of exactly one swap with its successor), so an even
    count n yields exactly 3n samples. For odd n the last shuffled sample
    stays unpaired and the result has 3n - 2 samples.
    """
    for s in samples:
        if not s.has_lung_scores:
            raise AugmentationError(
                f"expand_dataset: sample {s.source_id!r} lacks per-lung scores"
            )
    out = list(samples)
    n = len(samples)
    if n < 2:
        return out
    order = rng_for(seed, ROLE_EXPAND).permutation(n)
    m = n if n % 2 == 0 else n - 1
    used = {s.source_id for s in samples}
    for k in range(m):
        a = samples[order[k]]
        b = samples[order[(k + 1) % m]]
        for synthetic in lung_score_replace(a, b):
            # a 2-cycle repeats the same ordered pair; keep ids unique
            sid, counter = synthetic.source_id, 2
            while sid in used:
                sid = f"{synthetic.source_id}-{counter}"
                counter += 1
            used.add(sid)
            synthetic.source_id = sid
            out.append(synthetic)
    return out


def score_cutmix(
    a: CxrSample, b: CxrSample, params: CutMixParams, draw: np.random.Generator
) -> CxrSample:
    """Paste a random box of b into a; label is the area-weighted score mix.

    The box is sized for a retained fraction drawn uniformly from
    [lambda_min, lambda_max], with aspect ratio log-uniform in [1/2, 2] and
    uniform position, then clipped to the image. The label uses the exact
    retained fraction of the final box.
    """
    _check_pair(a, b, "score_cutmix")
    h, w = a.image.shape[:2]
    lam_target = float(draw.uniform(params.lambda_min, params.lambda_max))
    replaced_area = (1.0 - lam_target) * h * w
    aspect = float(np.exp(draw.uniform(np.log(0.5), np.log(2.0))))
    box_h = int(np.clip(round(math.sqrt(replaced_area * aspect)), 1, h))
    box_w = int(np.clip(round(math.sqrt(replaced_area / aspect)), 1, w))
    cy = int(draw.integers(0, h))
    cx = int(draw.integers(0, w))
    y0 = max(0, cy - box_h // 2)
    y1 = min(h, y0 + box_h)
    x0 = max(0, cx - box_w // 2)
    x1 = min(w, x0 + box_w)
    replaced = (y1 - y0) * (x1 - x0)
    lam = (h * w - replaced) / (h * w)
    image = a.image.copy()
    image[y0:y1, x0:x1] = b.image[y0:y1, x0:x1]
    return CxrSample(
        image=image,
        score_total=lam * a.score_total + (1.0 - lam) * b.score_total,
        score_kind=a.score_kind,
        source_id=f"{a.source_id}-cm-{b.source_id}",
    )


def score_mixup(a: CxrSample, b: CxrSample, lam: float) -> CxrSample:
    """Blend two images pixelwise; label mixes with the same weight."""
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"mixup lambda must be in [0, 1], got {lam}")
    _check_pair(a, b, "score_mixup")
    keep_lungs = lam in (0.0, 1.0)
    image = lam * a.image + (1.0 - lam) * b.image
    winner = a if lam == 1.0 else b
    return CxrSample(
        image=image.astype(np.float32),
        score_total=lam * a.score_total + (1.0 - lam) * b.score_total,
        score_kind=a.score_kind,
        source_id=f"{a.source_id}-mx-{b.source_id}",
        score_left=winner.score_left if keep_lungs else None,
        score_right=winner.score_right if keep_lungs else None,
    )


def hflip(a: CxrSample) -> CxrSample:
    """Mirror about the vertical axis; per-lung scores swap sides."""
    return CxrSample(
        image=a.image[:, ::-1].copy(),
        score_total=a.score_total,
        score_kind=a.score_kind,
        source_id=f"{a.source_id}-hf",
        score_left=a.score_right,
        score_right=a.score_left,
    )


__all__ = [
    "CutMixParams",
    "expand_dataset",
    "hflip",
    "lung_score_replace",
    "score_cutmix",
    "score_mixup",
]
