"""Fold-free patch ops: the runtime-compatible rewrite vs the naive oracle.

Restricted mobile runtimes reject permutations over more than 5 axes, so the
unfold/fold pair around patch attention is rebuilt from reshape + split +
rank-5 permute + concat. This script shows the rewrite is bit-identical to a
plain sliding-window gather, and that no rank-6 permute ever executes.
"""

import numpy as np

from lmkit.patches import (PatchSpec, fold_foldfree, permute6_via_5d,
                           unfold_foldfree, unfold_naive)
from lmkit.tensor import Tensor, trace_ops

rng = np.random.default_rng(0)

x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
spec = PatchSpec.for_feature(x.shape, 2, 2)
print(f"feature map {x.shape}, patches {spec.patch_h}x{spec.patch_w} "
      f"-> {spec.patch_area} positions x {spec.num_patches} patches")

with trace_ops() as log:
    cols = unfold_foldfree(x, spec)
    back = fold_foldfree(cols, spec)

print("unfold == naive oracle:", np.array_equal(cols.data, unfold_naive(x, spec).data))
print("fold(unfold(x)) == x:  ", np.array_equal(back.data, x.data))

permute_ranks = [rank for op, rank, _ in log if op == "permute"]
print(f"permutes executed: {len(permute_ranks)}, max rank {max(permute_ranks)} (must be <= 5)")

# the general decomposition handles any rank-6 permutation and split axis
y = Tensor(rng.standard_normal((2, 3, 4, 2, 5, 2)).astype(np.float32))
order = (0, 1, 3, 5, 2, 4)
direct = y.data.transpose(order)
for split_axis in range(6):
    via5d = permute6_via_5d(y, order, split_axis=split_axis)
    assert np.array_equal(via5d.data, direct)
print(f"permute6_via_5d == direct transpose for order {order}, every split axis")
