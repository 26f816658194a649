"""Shared fixtures: small model configs and handmade sample factories."""

import numpy as np
import pytest
import torch

from cxrscore import CxrSample, PreprocessConfig, VitConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vit32():
    """Two-block config small enough for exact-value and gradient tests."""
    return VitConfig(
        image_height=32,
        image_width=32,
        channels=3,
        patch_size=8,
        depth=2,
        embed_dim=64,
        num_heads=4,
        mlp_hidden=256,
        fc1_width=128,
    )


@pytest.fixture(scope="session")
def pre32():
    return PreprocessConfig(target_height=32, target_width=32)


@pytest.fixture(scope="session")
def pre64():
    return PreprocessConfig(target_height=64, target_width=64)


def structured_image(height, width, channels=3):
    """Deterministic non-constant pixels in [0, 1], no RNG involved."""
    i, j, c = np.meshgrid(
        np.arange(height), np.arange(width), np.arange(channels), indexing="ij"
    )
    return (((i * 7 + j * 3 + c * 11) % 17) / 16.0).astype(np.float32)


def make_sample(
    left,
    right,
    source_id,
    size=(8, 8),
    kind="synthetic",
    fill=None,
    channels=1,
):
    """Handmade sample with known per-lung scores."""
    if fill is None:
        image = structured_image(size[0], size[1], channels)
    else:
        image = np.full((size[0], size[1], channels), fill, dtype=np.float32)
    return CxrSample(
        image=image,
        score_total=float(left + right),
        score_kind=kind,
        source_id=source_id,
        score_left=float(left),
        score_right=float(right),
    )
