"""Shared test fixtures: naive oracles and constructed weight stores."""

import numpy as np

from lmkit.arch import weight_schema
from lmkit.weights import WeightStore


def conv2d_naive(x, w, bias=None, stride=(1, 1), padding=(0, 0), groups=1):
    """Direct 6-loop reference convolution, float64 accumulation."""
    sH, sW = stride
    pH, pW = padding
    c_in, H, W = x.shape
    c_out, c_per_g, kH, kW = w.shape
    xp = np.zeros((c_in, H + 2 * pH, W + 2 * pW), np.float64)
    xp[:, pH:pH + H, pW:pW + W] = x
    Ho = (H + 2 * pH - kH) // sH + 1
    Wo = (W + 2 * pW - kW) // sW + 1
    out = np.zeros((c_out, Ho, Wo), np.float64)
    cg_out = c_out // groups
    for co in range(c_out):
        g = co // cg_out
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for cg in range(c_per_g):
                    ci = g * c_per_g + cg
                    for a in range(kH):
                        for b in range(kW):
                            acc += float(xp[ci, i * sH + a, j * sW + b]) * float(w[co, cg, a, b])
                out[co, i, j] = acc
    if bias is not None:
        out += np.asarray(bias, np.float64)[:, None, None]
    return out


def zero_store(config) -> WeightStore:
    return WeightStore((n, np.zeros(s, np.float32)) for n, s in weight_schema(config).items())


def delta_tracer_store(config, cell=(3, 5)) -> WeightStore:
    """All-zero weights except single unit taps that route the input pixel at
    (32*row, 32*col) through every block down to stage-5 cell (row, col).

    The upsampled bump is symmetric about that cell, the sigmoid heads
    saturate to exactly 1.0 in f32, and the refine stack is zero, so every
    landmark decodes to (32*col + 16, 32*row + 16) in crop coordinates.
    Valid for the default geometry (five stride-2 stages, 8x8 final grid)
    with 1 <= row, col <= 6 so the bump clears the map border.
    """
    row, col = cell
    assert 1 <= row <= 6 and 1 <= col <= 6, "bump must stay clear of the heatmap border"
    arrays = {n: np.zeros(s, np.float32) for n, s in weight_schema(config).items()}

    def tap_mv2(prefix):
        arrays[f"{prefix}.expand.conv.weight"][0, 0, 0, 0] = 1
        arrays[f"{prefix}.expand.norm.gamma"][0] = 1
        arrays[f"{prefix}.dw.conv.weight"][0, 0, 1, 1] = 1
        arrays[f"{prefix}.dw.norm.gamma"][0] = 1
        arrays[f"{prefix}.proj.conv.weight"][0, 0, 0, 0] = 1
        arrays[f"{prefix}.proj.norm.gamma"][0] = 1

    arrays["stage0.0.conv.weight"][0, 0, 1, 1] = 1
    arrays["stage0.0.norm.gamma"][0] = 1
    tap_mv2("stage1.0")
    tap_mv2("stage2.0")  # stage2.1 / stage2.2 stay all-zero: residual identity
    for s in (3, 4, 5):
        tap_mv2(f"stage{s}.0")
        p = f"stage{s}.1"
        arrays[f"{p}.local_dw.conv.weight"][0, 0, 1, 1] = 1
        arrays[f"{p}.local_dw.norm.gamma"][0] = 1
        arrays[f"{p}.local_pw.conv.weight"][0, 0, 0, 0] = 1
        arrays[f"{p}.final_norm.gamma"][:] = 1
        arrays[f"{p}.proj.conv.weight"][0, 0, 0, 0] = 1
        arrays[f"{p}.proj.norm.gamma"][0] = 1
    arrays["head.point.conv.bias"][:] = 30.0
    arrays["head.edge.conv.bias"][:] = 30.0
    arrays["head.heatmap.conv.weight"][:, 0, 0, 0] = 1
    arrays["head.heatmap.norm.gamma"][:] = 1
    return WeightStore(arrays.items())


def tracer_input(cell=(3, 5)) -> np.ndarray:
    row, col = cell
    img = np.zeros((3, 256, 256), np.float32)
    img[0, 32 * row, 32 * col] = 1.0
    return img


def tracer_expected(cell=(3, 5)) -> tuple[float, float]:
    row, col = cell
    return 32.0 * col + 16.0, 32.0 * row + 16.0
