"""End-to-end structural probe: route one bright pixel to one landmark.

Hand-built weights (single unit taps, everything else zero) turn the whole
network into a delta tracer: a white pixel at input (32*row, 32*col) survives
the stem, the inverted-residual stages, the patch-attention blocks and the
generator head as a symmetric bump, so every landmark decodes to exactly
(32*col + 16, 32*row + 16). A strong smoke test that every block preserves
spatial structure the way it should.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "tests"))
from fixtures import delta_tracer_store, tracer_expected, tracer_input

from lmkit.config import default_config
from lmkit.model import predict
from lmkit.tensor import Tensor

cfg = default_config()
for cell in ((1, 1), (3, 5), (6, 2)):
    store = delta_tracer_store(cfg, cell=cell)
    landmarks = predict(Tensor(tracer_input(cell)), store, cfg)
    want = tracer_expected(cell)
    got = landmarks.coords[0]
    print(f"input pixel (row {32 * cell[0]:3d}, col {32 * cell[1]:3d}) -> "
          f"decoded ({got[0]:8.4f}, {got[1]:8.4f}), expected {want}, "
          f"|error| {np.abs(got - np.array(want)).max():.2e} px")
