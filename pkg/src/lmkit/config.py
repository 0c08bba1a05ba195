"""Architecture hyperparameters for the student landmark network.

The default configuration materializes the published layer table of the
MobileViT-v2-0.5 student: a stem conv, MV2 stages, three separable-attention
stages with attention dims (128a, 192a, 256a), an upsample to the 64x64
heatmap grid, and the point/edge/heatmap generator head. Knobs the layer
table leaves open (expansion factor, transformer depth, FFN ratio, kernel
sizes, norm and activation flavors) are explicit fields so the static
profiler can pin them down; see docs/profiler_reconciliation.md for how the
frozen defaults were chosen.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

_E2P_RESOURCE = "e2p_default.json"
E2P_ENV_VAR = "LMKIT_E2P_CONFIG"

# pre-scale channel ladder and attention dims from the published layer table
BASE_CHANNELS = (32, 64, 128, 256, 384, 512)
BASE_ATTN_DIMS = (128, 192, 256)


def scale_channels(base: int, alpha: float) -> int:
    """Width-scale a channel count, rounding to the nearest even integer >= 2."""
    return max(2, int(base * alpha / 2 + 0.5) * 2)


def load_e2p_default() -> dict:
    """Packaged landmark/edge assignment, overridable by the LMKIT_E2P_CONFIG
    environment variable (path to a JSON file of the same shape)."""
    override = os.environ.get(E2P_ENV_VAR)
    if override:
        with open(override) as f:
            return json.load(f)
    with resources.files("lmkit.configs").joinpath(_E2P_RESOURCE).open() as f:
        return json.load(f)


def incidence_from_groups(groups: dict[str, list[int]], num_landmarks: int) -> np.ndarray:
    a = np.zeros((num_landmarks, len(groups)), dtype=np.uint8)
    for e, indices in enumerate(groups.values()):
        a[indices, e] = 1
    return a


@dataclass(frozen=True)
class ModelConfig:
    alpha: float = 0.5
    num_landmarks: int = 51
    num_edges: int = 8
    input_size: tuple[int, int] = (256, 256)
    heatmap_size: tuple[int, int] = (64, 64)
    patch_size: tuple[int, int] = (2, 2)
    base_channels: tuple[int, ...] = BASE_CHANNELS
    base_attn_dims: tuple[int, ...] = BASE_ATTN_DIMS
    mv2_expansion: int = 2
    # depth of the separable-attention stack per transformer stage; frozen by
    # the profiler reconciliation against the published complexity table
    transformer_depths: tuple[int, int, int] = (1, 1, 5)
    ffn_ratio: float = 2.0
    activation: str = "silu"
    backbone_norm: str = "affine"
    upsample_mode: str = "bilinear"
    head_kernel: int = 1
    heatmap_kernel: int = 1
    refine_kernel: int = 1
    refine_depth: int = 3
    softargmax_mode: str = "sum"
    softargmax_eps: float = 1e-6
    softargmax_temperature: float = 1.0
    incidence: np.ndarray | None = None
    flip_permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.activation not in ("silu", "relu", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.backbone_norm != "affine":
            raise ValueError(f"unknown backbone norm {self.backbone_norm!r}")
        for hw, p in zip(self.heatmap_size, self.patch_size):
            if hw % p != 0:
                raise ValueError(f"heatmap size {self.heatmap_size} not divisible by patch {self.patch_size}")
        if self.incidence is not None:
            a = np.asarray(self.incidence)
            if a.shape != (self.num_landmarks, self.num_edges):
                raise ValueError(
                    f"incidence shape {a.shape} does not match "
                    f"(num_landmarks, num_edges) = ({self.num_landmarks}, {self.num_edges})")
            if not np.isin(a, (0, 1)).all():
                raise ValueError("incidence must be binary")
            if (a.sum(axis=1) == 0).any():
                bad = int(np.flatnonzero(a.sum(axis=1) == 0)[0])
                raise ValueError(f"landmark {bad} has no incident edge in the incidence matrix")
            object.__setattr__(self, "incidence", np.ascontiguousarray(a, dtype=np.uint8))
        if self.flip_permutation is not None:
            p = tuple(int(i) for i in self.flip_permutation)
            if sorted(p) != list(range(self.num_landmarks)):
                raise ValueError("flip permutation must permute 0..N-1")
            if any(p[p[i]] != i for i in range(len(p))):
                raise ValueError("flip permutation must be an involution")
            object.__setattr__(self, "flip_permutation", p)

    @property
    def channels(self) -> tuple[int, ...]:
        """Width-scaled channel ladder (stem plus the five stage outputs)."""
        return tuple(scale_channels(c, self.alpha) for c in self.base_channels)

    @property
    def attn_dims(self) -> tuple[int, ...]:
        return tuple(scale_channels(d, self.alpha) for d in self.base_attn_dims)

    @property
    def coord_scale(self) -> float:
        """Heatmap-cell to input-pixel scale along x (and y, kept square)."""
        return self.input_size[1] / self.heatmap_size[1]

    def with_(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


def default_config(alpha: float = 0.5, **overrides) -> ModelConfig:
    """Frozen default student config with the packaged 51x8 edge assignment."""
    doc = load_e2p_default()
    incidence = incidence_from_groups(doc["edges"], doc["num_landmarks"])
    cfg = ModelConfig(
        alpha=alpha,
        num_landmarks=doc["num_landmarks"],
        num_edges=doc["num_edges"],
        incidence=incidence,
        flip_permutation=tuple(doc["flip_permutation"]),
    )
    if overrides:
        cfg = cfg.with_(**overrides)
    return cfg


def cyclic_incidence(num_landmarks: int, num_edges: int) -> np.ndarray:
    """Minimal valid assignment (landmark i -> edge i mod E); used by the
    desk-scale demonstrator where the facial semantics are irrelevant."""
    a = np.zeros((num_landmarks, num_edges), dtype=np.uint8)
    a[np.arange(num_landmarks), np.arange(num_landmarks) % num_edges] = 1
    return a
