"""Samples, manifests, and image preprocessing.

A dataset on disk is a manifest CSV next to its PNG images. The manifest has
the exact header ``image_path,score_total,score_left,score_right,score_kind``
and image paths are stored relative to the manifest's own directory, so a
dataset directory can be moved or compared byte-for-byte across runs.
"""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ArgumentError, ConfigurationError, IngestError

MANIFEST_HEADER = ["image_path", "score_total", "score_left", "score_right", "score_kind"]

# Valid total-score range per annotation rubric.
SCORE_RANGES: dict[str, tuple[float, float]] = {
    "GE": (0.0, 8.0),
    "LO": (0.0, 8.0),
    "synthetic": (0.0, 8.0),
    "brixia": (0.0, 18.0),
    "covid": (0.0, 6.0),
}

_LUNG_CONSISTENCY_TOL = 1e-9


@dataclass
class CxrSample:
    """One radiograph-like image with its severity annotation.

    image is float32, shape (H, W, C) with C in {1, 3}, values in [0, 1].
    score_left/score_right are per-lung scores when the rubric provides them;
    mixed (interpolated) samples carry only score_total.
    """

    image: np.ndarray
    score_total: float
    score_kind: str
    source_id: str
    score_left: float | None = None
    score_right: float | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim == 2:
            self.image = self.image[:, :, None]
        if self.image.ndim != 3 or self.image.shape[2] not in (1, 3):
            raise ArgumentError(
                f"sample {self.source_id!r}: image must be (H, W, 1) or (H, W, 3), "
                f"got shape {tuple(self.image.shape)}"
            )
        if self.score_kind not in SCORE_RANGES:
            raise ArgumentError(
                f"sample {self.source_id!r}: unknown score_kind {self.score_kind!r}, "
                f"expected one of {sorted(SCORE_RANGES)}"
            )
        self.score_total = float(self.score_total)
        if self.score_left is not None and self.score_right is not None:
            both = float(self.score_left) + float(self.score_right)
            if abs(both - self.score_total) > _LUNG_CONSISTENCY_TOL:
                raise ArgumentError(
                    f"sample {self.source_id!r}: score_left + score_right = {both} "
                    f"does not match score_total = {self.score_total}"
                )

    @property
    def has_lung_scores(self) -> bool:
        return self.score_left is not None and self.score_right is not None


def _parse_score(text: str, field: str, line: int) -> float | None:
    if text.strip() == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"line {line}: {field} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"line {line}: {field} is not finite: {text!r}")
    return value


def load_image(path: str) -> np.ndarray:
    """Decode a PNG (or other PIL-readable) image to float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float32) / 255.0
                return arr[:, :, None]
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            return arr
    except (OSError, ValueError) as exc:
        raise IngestError(f"cannot decode image {path!r}: {exc}") from None


def save_image(image: np.ndarray, path: str) -> None:
    """Write a [0, 1] float image as an 8-bit gray or RGB PNG."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def load_manifest(manifest_path: str) -> list[CxrSample]:
    """Load and validate a manifest CSV and the images it references.

    Raises IngestError naming the offending line (header is line 1) for a bad
    header, unparseable or out-of-range scores, per-lung inconsistency, an
    unknown score kind, or a missing/undecodable image.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        fh = open(manifest_path, newline="")
    except OSError as exc:
        raise IngestError(f"cannot open manifest {manifest_path!r}: {exc}") from None
    samples: list[CxrSample] = []
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("manifest is empty, expected a header line") from None
        if header != MANIFEST_HEADER:
            raise IngestError(
                f"line 1: bad header {header!r}, expected {MANIFEST_HEADER!r}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise IngestError(f"line {line}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            rel_path, total_s, left_s, right_s, kind = row
            if kind not in SCORE_RANGES:
                raise IngestError(
                    f"line {line}: unknown score_kind {kind!r}, expected one of {sorted(SCORE_RANGES)}"
                )
            total = _parse_score(total_s, "score_total", line)
            if total is None:
                raise IngestError(f"line {line}: score_total is required")
            lo, hi = SCORE_RANGES[kind]
            if not lo <= total <= hi:
                raise IngestError(
                    f"line {line}: score_total {total} outside [{lo}, {hi}] for kind {kind!r}"
                )
            left = _parse_score(left_s, "score_left", line)
            right = _parse_score(right_s, "score_right", line)
            for name, value in (("score_left", left), ("score_right", right)):
                if value is not None and not lo <= value <= hi:
                    raise IngestError(
                        f"line {line}: {name} {value} outside [{lo}, {hi}] for kind {kind!r}"
                    )
            if left is not None and right is not None:
                if abs((left + right) - total) > 1e-6:
                    raise IngestError(
                        f"line {line}: score_left + score_right = {left + right} "
                        f"does not match score_total = {total}"
                    )
                # keep the in-memory invariant exact
                total = left + right
            image_path = os.path.normpath(os.path.join(base, rel_path))
            if not os.path.isfile(image_path):
                raise IngestError(f"line {line}: image not found: {rel_path!r}")
            image = load_image(image_path)
            source_id = os.path.splitext(rel_path)[0].replace(os.sep, "/")
            try:
                samples.append(
                    CxrSample(
                        image=image,
                        score_total=total,
                        score_kind=kind,
                        source_id=source_id,
                        score_left=left,
                        score_right=right,
                    )
                )
            except ArgumentError as exc:
                raise IngestError(f"line {line}: {exc}") from None
    return samples


def save_manifest(samples: list[CxrSample], manifest_path: str) -> None:
    """Write the manifest CSV for samples whose images are already on disk.

    The image path of each row is ``<source_id>.png`` relative to the
    manifest directory.
    """
    os.makedirs(os.path.dirname(manifest_path) or ".", exist_ok=True)
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in samples:
            writer.writerow(
                [
                    s.source_id + ".png",
                    repr(float(s.score_total)),
                    "" if s.score_left is None else repr(float(s.score_left)),
                    "" if s.score_right is None else repr(float(s.score_right)),
                    s.score_kind,
                ]
            )


def save_dataset(samples: list[CxrSample], out_dir: str, manifest_name: str = "manifest.csv") -> str:
    """Write images and manifest under out_dir; returns the manifest path."""
    seen: set[str] = set()
    for s in samples:
        if s.source_id in seen:
            raise ArgumentError(f"duplicate source_id {s.source_id!r}, refusing to overwrite")
        seen.add(s.source_id)
        save_image(s.image, os.path.join(out_dir, s.source_id + ".png"))
    manifest_path = os.path.join(out_dir, manifest_name)
    save_manifest(samples, manifest_path)
    return manifest_path


@dataclass(frozen=True)
class PreprocessConfig:
    """Resize and per-channel normalisation applied before the model."""

    target_height: int = 224
    target_width: int = 224
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)

    def __post_init__(self):
        if self.target_height < 1 or self.target_width < 1:
            raise ConfigurationError(
                f"target size must be positive, got {self.target_height}x{self.target_width}"
            )
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigurationError("mean and std must each have 3 entries")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError(f"std entries must be > 0, got {self.std}")


def preprocess_batch(samples: list[CxrSample], config: PreprocessConfig) -> torch.Tensor:
    """Preprocess same-shaped samples into a (B, H, W, 3) float32 tensor.

    Grayscale images are replicated to three channels after resizing; the
    resize is bilinear and is skipped (exact identity) when the image already
    has the target size.
    """
    if not samples:
        raise ArgumentError("preprocess_batch needs at least one sample")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise ArgumentError(f"samples in one batch must share a shape, got {sorted(shapes)}")
    stack = np.stack([s.image for s in samples])
    x = torch.from_numpy(stack).permute(0, 3, 1, 2)  # B, C, H, W
    th, tw = config.target_height, config.target_width
    if x.shape[2] != th or x.shape[3] != tw:
        x = F.interpolate(x, size=(th, tw), mode="bilinear", align_corners=False)
    if x.shape[1] == 1:
        x = x.expand(-1, 3, -1, -1)
    mean = torch.tensor(config.mean, dtype=torch.float32).view(1, 3, 1, 1)
    std = torch.tensor(config.std, dtype=torch.float32).view(1, 3, 1, 1)
    x = (x - mean) / std
    return x.permute(0, 2, 3, 1).contiguous()


def preprocess(sample: CxrSample, config: PreprocessConfig) -> torch.Tensor:
    """Preprocess one sample to an (H, W, 3) float32 tensor."""
    return preprocess_batch([sample], config)[0]


def split_train_val(
    samples: list[CxrSample], val_fraction: float, seed: int
) -> tuple[list[CxrSample], list[CxrSample]]:
    """Deterministic shuffled split; the validation part gets at least one
    sample whenever 0 < val_fraction < 1 and there are two or more samples."""
    from .seeding import ROLE_VAL_SPLIT, rng_for

    if not 0.0 <= val_fraction < 1.0:
        raise ArgumentError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if val_fraction == 0.0:
        return list(samples), []
    order = rng_for(seed, ROLE_VAL_SPLIT).permutation(len(samples))
    n_val = max(1, int(round(len(samples) * val_fraction))) if len(samples) > 1 else 0
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


__all__ = [
    "CxrSample",
    "MANIFEST_HEADER",
    "PreprocessConfig",
    "SCORE_RANGES",
    "load_image",
    "load_manifest",
    "preprocess",
    "preprocess_batch",
    "save_dataset",
    "save_image",
    "save_manifest",
    "split_train_val",
]
