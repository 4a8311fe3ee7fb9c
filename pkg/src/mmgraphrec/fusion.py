"""Early fusion of text/image features and the trainable linear projection."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .data import DimensionMismatchError, FeatureMatrix

FUSION_MODES = ("text", "image", "both")


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def fuse_modalities(text: FeatureMatrix | None, image: FeatureMatrix | None, mode: str = "both") -> FeatureMatrix:
    """Average of the L2-normalized modality rows, or a normalized pass-through
    of one modality when ``mode`` is ``"text"`` or ``"image"``."""
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    if mode == "text":
        if text is None:
            raise ValueError("text features required for mode='text'")
        return FeatureMatrix(l2_normalize_rows(text.values), "fused")
    if mode == "image":
        if image is None:
            raise ValueError("image features required for mode='image'")
        return FeatureMatrix(l2_normalize_rows(image.values), "fused")
    if text is None or image is None:
        raise ValueError("both modalities required for mode='both'")
    if text.values.shape != image.values.shape:
        raise DimensionMismatchError(f"text {text.values.shape} vs image {image.values.shape}")
    return FeatureMatrix(0.5 * (l2_normalize_rows(text.values) + l2_normalize_rows(image.values)), "fused")


class Projection(nn.Module):
    """``x @ weight + bias`` with weight stored as (d_in, d_latent)."""

    def __init__(self, d_in: int, d_latent: int = 64, generator: torch.Generator | None = None,
                 dtype=torch.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        w = torch.empty(d_in, d_latent, dtype=dtype).uniform_(-bound, bound, generator=generator)
        b = torch.empty(d_latent, dtype=dtype).uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_latent(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return project(x, self)


def project(features, params: Projection) -> torch.Tensor:
    if isinstance(features, FeatureMatrix):
        features = features.values
    x = torch.as_tensor(features, dtype=params.weight.dtype)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DimensionMismatchError(f"features have shape {tuple(x.shape)}, projection expects d_in={params.d_in}")
    return x @ params.weight + params.bias
