"""Fold-free patch extraction and reassembly.

Restricted mobile runtimes refuse permutations over more than 5 axes, so the
usual unfold/fold pair is rewritten here using only reshape, split, rank-5
permute, unsqueeze and concat. `unfold_naive` / `fold_naive` are the direct
sliding-window references the rewrite is checked against; both sides are pure
data movement, so agreement is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class PatchSpec:
    """Geometry of a non-overlapping patch grid over a [B,C,H,W] map."""

    patch_h: int
    patch_w: int
    batch: int
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if self.patch_h < 1 or self.patch_w < 1:
            raise ShapeError(f"patch size must be >= 1, got {self.patch_h}x{self.patch_w}")
        if self.height % self.patch_h != 0:
            raise ShapeError(f"height {self.height} not divisible by patch_h {self.patch_h}")
        if self.width % self.patch_w != 0:
            raise ShapeError(f"width {self.width} not divisible by patch_w {self.patch_w}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_h, self.width // self.patch_w

    @property
    def patch_area(self) -> int:
        return self.patch_h * self.patch_w

    @property
    def num_patches(self) -> int:
        nh, nw = self.grid
        return nh * nw

    @property
    def feature_shape(self) -> tuple[int, int, int, int]:
        return self.batch, self.channels, self.height, self.width

    @property
    def patches_shape(self) -> tuple[int, int, int, int]:
        return self.batch, self.channels, self.patch_area, self.num_patches

    @classmethod
    def for_feature(cls, shape, patch_h: int, patch_w: int) -> "PatchSpec":
        b, c, h, w = shape
        return cls(patch_h, patch_w, b, c, h, w)


def permute6_via_5d(x: Tensor, axis_order, split_axis: int | None = None) -> Tensor:
    """Apply a rank-6 permutation using only rank-5 permutes.

    The input is split into extent-1 slices along `split_axis`, each slice is
    squeezed to rank 5, permuted, unsqueezed at the axis' destination and the
    slices concatenated back. Bit-identical to a direct 6-axis transpose.
    """
    if x.rank != 6:
        raise ShapeError(f"permute6_via_5d: input must be rank 6, got rank {x.rank}")
    order = tuple(int(a) for a in axis_order)
    if sorted(order) != list(range(6)):
        raise ShapeError(f"permute6_via_5d: {order} is not a permutation of 0..5")
    if split_axis is None:
        split_axis = int(np.argmin(x.shape))
    dest = order.index(split_axis)
    slice_order = [a if a < split_axis else a - 1 for a in order if a != split_axis]
    pieces = []
    for sl in T.split(x, split_axis, x.shape[split_axis]):
        sl5 = T.squeeze(sl, split_axis)
        pieces.append(T.unsqueeze(T.permute(sl5, slice_order), dest))
    return T.concat(pieces, dest)


# axis layout used below: the [B,C,H,W] map reshapes to [B,C,nh,ph,nw,pw]
# (patch-grid row, in-patch row, patch-grid col, in-patch col); target patch
# layout is [B,C,ph,pw,nh,nw], i.e. the permutation (0,1,3,5,2,4).
_UNFOLD_ORDER = (0, 1, 3, 5, 2, 4)
_FOLD_ORDER = (0, 1, 4, 2, 5, 3)  # inverse of the above


def unfold_foldfree(x: Tensor, spec: PatchSpec) -> Tensor:
    """[B,C,H,W] -> [B,C,patch_area,num_patches] without any rank-6 permute.

    Column k holds the k-th patch (row-major over the patch grid), flattened
    row-major within the patch. The rank-6 intermediate is split along the
    in-patch column axis, mirroring the runtime-compatible rewrite.
    """
    _check_feature(x, spec, "unfold")
    b, c = spec.batch, spec.channels
    nh, nw = spec.grid
    x6 = T.reshape(x, (b, c, nh, spec.patch_h, nw, spec.patch_w))
    x6 = permute6_via_5d(x6, _UNFOLD_ORDER, split_axis=5)
    return T.reshape(x6, spec.patches_shape)


def fold_foldfree(patches: Tensor, spec: PatchSpec) -> Tensor:
    """Exact inverse of `unfold_foldfree` for non-overlapping patches."""
    _check_patches(patches, spec, "fold")
    b, c = spec.batch, spec.channels
    nh, nw = spec.grid
    p6 = T.reshape(patches, (b, c, spec.patch_h, spec.patch_w, nh, nw))
    p6 = permute6_via_5d(p6, _FOLD_ORDER, split_axis=3)
    return T.reshape(p6, spec.feature_shape)


def unfold_naive(x: Tensor, spec: PatchSpec) -> Tensor:
    """Reference patch gather: explicit loops over the patch grid."""
    _check_feature(x, spec, "unfold")
    nh, nw = spec.grid
    ph, pw = spec.patch_h, spec.patch_w
    out = np.empty(spec.patches_shape, dtype=x.data.dtype)
    for i in range(nh):
        for j in range(nw):
            block = x.data[:, :, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
            out[:, :, :, i * nw + j] = block.reshape(spec.batch, spec.channels, ph * pw)
    return Tensor(out, dtype=x.dtype)


def fold_naive(patches: Tensor, spec: PatchSpec) -> Tensor:
    """Reference patch scatter: explicit loops over the patch grid."""
    _check_patches(patches, spec, "fold")
    nh, nw = spec.grid
    ph, pw = spec.patch_h, spec.patch_w
    out = np.empty(spec.feature_shape, dtype=patches.data.dtype)
    for i in range(nh):
        for j in range(nw):
            col = patches.data[:, :, :, i * nw + j]
            out[:, :, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw] = col.reshape(
                spec.batch, spec.channels, ph, pw)
    return Tensor(out, dtype=patches.dtype)


def _check_feature(x: Tensor, spec: PatchSpec, op: str) -> None:
    if x.shape != spec.feature_shape:
        raise ShapeError(f"{op}: feature shape {x.shape} does not match spec {spec.feature_shape}")


def _check_patches(patches: Tensor, spec: PatchSpec, op: str) -> None:
    if patches.shape != spec.patches_shape:
        raise ShapeError(
            f"{op}: patch tensor shape {patches.shape} does not match spec {spec.patches_shape} "
            f"(patch_area {spec.patch_area}, num_patches {spec.num_patches})")
