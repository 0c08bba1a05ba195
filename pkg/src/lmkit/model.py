"""Student network forward pass: backbone, generator head, soft-argmax decode.

All functions are pure: weights and config are immutable inputs, outputs are
fresh tensors, and two runs on identical inputs are bit-identical. Blocks
take a flat `params` mapping (suffix -> Tensor) so they can be exercised in
isolation; `backbone_forward` / `predict` slice a WeightStore by the
canonical `stage{i}.{block}.{layer}.{param}` names.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .patches import PatchSpec, fold_foldfree, unfold_foldfree
from .tensor import ShapeError, Tensor
from .weights import WeightStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeatmapSet:
    """Per-image point heatmaps [N,h,w] and edge heatmaps [E,h,w], both in
    [0,1] after the sigmoid heads."""

    point: Tensor
    edge: Tensor

    def __post_init__(self):
        if self.point.rank != 3 or self.edge.rank != 3:
            raise ShapeError("heatmaps must be rank 3 [channels,h,w]")
        if self.point.shape[1:] != self.edge.shape[1:]:
            raise ShapeError(
                f"point and edge grids disagree: {self.point.shape[1:]} vs {self.edge.shape[1:]}")

    @property
    def num_landmarks(self) -> int:
        return self.point.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge.shape[0]


@dataclass(frozen=True)
class LandmarkSet:
    """N (x, y) coordinates in input-pixel units."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ShapeError(f"coords must be [N,2], got {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("landmark coordinates must be finite")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    def __len__(self) -> int:
        return self.coords.shape[0]


# ---------------------------------------------------------------------------
# building blocks


def _act(name: str):
    return T.ACTIVATIONS[name]


def _affine_norm(x: Tensor, params: dict, prefix: str) -> Tensor:
    gamma = params[f"{prefix}.gamma"].data
    beta = params[f"{prefix}.beta"].data
    out = T._arr(x) * T._arr(gamma)[:, None, None] + T._arr(beta)[:, None, None]
    return Tensor(out)


def conv_norm_act(x: Tensor, params: dict, prefix: str, stride=1, padding=0,
                  groups=1, act: str | None = "silu") -> Tensor:
    y = T.conv2d(x, params[f"{prefix}.conv.weight"], params.get(f"{prefix}.conv.bias"),
                 stride=stride, padding=padding, groups=groups)
    if f"{prefix}.norm.gamma" in params:
        y = _affine_norm(y, params, f"{prefix}.norm")
    if act is not None:
        y = _act(act)(y)
    return y


def mv2_block(x: Tensor, params: dict, stride: int, act: str = "silu") -> Tensor:
    """Inverted residual: pointwise expand, depthwise (carries the stride),
    pointwise project; skip connection iff stride 1 and C_in == C_out."""
    if stride not in (1, 2):
        raise ValueError(f"mv2 stride must be 1 or 2, got {stride}")
    c_in = x.shape[0]
    y = conv_norm_act(x, params, "expand", act=act)
    hidden = y.shape[0]
    y = conv_norm_act(y, params, "dw", stride=stride, padding=1, groups=hidden, act=act)
    y = conv_norm_act(y, params, "proj", act=None)
    if stride == 1 and y.shape[0] == c_in:
        y = T.add(y, x)
    return y


def layer_norm_tokens(tokens: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer norm over the channel axis of a [B,d,P,Nt] token tensor."""
    x = T._arr(tokens).astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    y = ((x - mean) / np.sqrt(var + eps)).astype(np.float32)
    out = y * T._arr(gamma)[None, :, None, None] + T._arr(beta)[None, :, None, None]
    return Tensor(out)


def _pointwise4d(tokens: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """1x1 projection over the channel axis of [B,d,P,Nt]."""
    w = T._arr(weight)
    if w.ndim == 4:
        w = w[:, :, 0, 0]
    out = np.tensordot(w.astype(np.float64), T._arr(tokens).astype(np.float64), axes=([1], [1]))
    out = np.moveaxis(out, 0, 1)  # [B, C_out, P, Nt]
    if bias is not None:
        out = out + T._arr(bias)[None, :, None, None].astype(np.float64)
    return Tensor(out.astype(np.float32))


def separable_attention(tokens: Tensor, params: dict) -> Tensor:
    """Linear-complexity attention over the token (last) axis.

    A single-channel score projection is softmaxed over tokens; the context
    vector is the score-weighted sum of key projections, broadcast back to
    gate the (rectified) value projection, then an output projection maps
    back to d channels. Cost is linear in the token count and the map is
    equivariant under token permutations.
    """
    if tokens.rank != 4:
        raise ShapeError(f"attention tokens must be [B,d,P,Nt], got shape {tokens.shape}")
    d = tokens.shape[1]
    qkv = _pointwise4d(tokens, params["qkv.conv.weight"], params.get("qkv.conv.bias"))
    if qkv.shape[1] != 1 + 2 * d:
        raise ShapeError(f"qkv projection produced {qkv.shape[1]} channels, expected {1 + 2 * d}")
    score, key, value = T.split(qkv, 1, [1, d, d])
    weights = T.softmax(score, axis=3)
    context = np.sum(key.data.astype(np.float64) * weights.data.astype(np.float64),
                     axis=3, keepdims=True)
    gated = T.relu(value).data * context.astype(np.float32)
    return _pointwise4d(Tensor(gated), params["out.conv.weight"], params.get("out.conv.bias"))


def transformer_block(tokens: Tensor, params: dict, prefix: str, act: str = "silu") -> Tensor:
    """Pre-norm residual pair: separable attention then pointwise FFN."""
    sub = {k[len(prefix) + 1:]: v for k, v in params.items() if k.startswith(prefix + ".")}
    normed = layer_norm_tokens(tokens, sub["norm1.gamma"], sub["norm1.beta"])
    tokens = T.add(tokens, separable_attention(normed, sub))
    normed = layer_norm_tokens(tokens, sub["norm2.gamma"], sub["norm2.beta"])
    h = _pointwise4d(normed, sub["ffn1.conv.weight"], sub["ffn1.conv.bias"])
    h = _act(act)(h)
    h = _pointwise4d(h, sub["ffn2.conv.weight"], sub["ffn2.conv.bias"])
    return T.add(tokens, h)


def mobilevit_v2_block(x: Tensor, params: dict, config: ModelConfig, depth: int) -> Tensor:
    """Local depthwise conv, fold-free patch attention stack, projection back
    to the stage channel count."""
    c, H, W = x.shape
    ph, pw = config.patch_size
    if H % ph or W % pw:
        raise ShapeError(f"feature {H}x{W} not divisible by patch {ph}x{pw}")
    act = config.activation
    y = conv_norm_act(x, params, "local_dw", padding=1, groups=c, act=act)
    y = T.conv2d(y, params["local_pw.conv.weight"], params.get("local_pw.conv.bias"))
    d = y.shape[0]
    spec = PatchSpec.for_feature((1, d, H, W), ph, pw)
    tokens = unfold_foldfree(T.reshape(y, (1, d, H, W)), spec)
    k = 0
    while f"tx{k}.norm1.gamma" in params:
        tokens = transformer_block(tokens, params, f"tx{k}", act=act)
        k += 1
    if k != depth:
        raise ShapeError(f"found {k} transformer blocks in params, config expects {depth}")
    tokens = layer_norm_tokens(tokens, params["final_norm.gamma"], params["final_norm.beta"])
    y = T.reshape(fold_foldfree(tokens, spec), (d, H, W))
    return conv_norm_act(y, params, "proj", act=None)


def backbone_forward(image: Tensor, weights: WeightStore, config: ModelConfig):
    """Image [3,256,256] -> final [C5,8,8] feature plus per-stage taps."""
    H, W = config.input_size
    if image.shape != (3, H, W):
        raise ShapeError(f"backbone input must be (3, {H}, {W}), got {image.shape}")
    act = config.activation
    taps: dict[str, Tensor] = {}

    p = weights.subset("stage0.0")
    x = T.conv2d(image, _req(p, "conv.weight", "stage0.0"), stride=2, padding=1)
    x = _affine_norm(x, p, "norm")
    x = _act(act)(x)
    x = mv2_block(x, weights.subset("stage1.0"), stride=1, act=act)
    taps["stage1"] = x
    x = mv2_block(x, weights.subset("stage2.0"), stride=2, act=act)
    x = mv2_block(x, weights.subset("stage2.1"), stride=1, act=act)
    x = mv2_block(x, weights.subset("stage2.2"), stride=1, act=act)
    taps["stage2"] = x
    for stage, depth in zip((3, 4, 5), config.transformer_depths):
        x = mv2_block(x, weights.subset(f"stage{stage}.0"), stride=2, act=act)
        x = mobilevit_v2_block(x, weights.subset(f"stage{stage}.1"), config, depth)
        taps[f"stage{stage}"] = x
    return x, taps


def _req(params: dict, key: str, scope: str) -> Tensor:
    try:
        return params[key]
    except KeyError:
        raise KeyError(f"missing weight {scope}.{key}") from None


def e2p_transform(edge: Tensor, incidence: np.ndarray) -> Tensor:
    """Edge-to-point attention: point mask i is the elementwise product of
    its incident edge maps, so values stay in [0,1]."""
    a = np.asarray(incidence)
    if edge.rank != 3:
        raise ShapeError(f"edge maps must be [E,h,w], got shape {edge.shape}")
    if a.ndim != 2 or a.shape[1] != edge.shape[0]:
        raise ShapeError(f"incidence shape {a.shape} does not match {edge.shape[0]} edge maps")
    if (a.sum(axis=1) == 0).any():
        bad = int(np.flatnonzero(a.sum(axis=1) == 0)[0])
        raise ShapeError(f"incidence row {bad} has no incident edge")
    n = a.shape[0]
    ev = edge.data
    out = np.ones((n, *edge.shape[1:]), dtype=np.float32)
    for e in range(a.shape[1]):
        rows = np.flatnonzero(a[:, e])
        if rows.size:
            out[rows] *= ev[e]
    return Tensor(out)


def heatmap_generator_forward(feat: Tensor, weights, config: ModelConfig):
    """Generator head: sigmoid point/edge heads, E2P attention mask, the
    conv+instance-norm+ReLU heatmap branch masked by it, and a residual
    conv stack summed on top.

    Returns (HeatmapSet, refined heatmap [N,h,w]).
    """
    params = weights.subset("head") if isinstance(weights, WeightStore) else dict(weights)
    kh = config.head_kernel
    km = config.heatmap_kernel
    kr = config.refine_kernel
    point = T.sigmoid(T.conv2d(feat, _req(params, "point.conv.weight", "head"),
                               params.get("point.conv.bias"), padding=kh // 2))
    edge = T.sigmoid(T.conv2d(feat, _req(params, "edge.conv.weight", "head"),
                              params.get("edge.conv.bias"), padding=kh // 2))
    mask = T.mul(point, e2p_transform(edge, config.incidence))
    raw = T.conv2d(feat, _req(params, "heatmap.conv.weight", "head"),
                   params.get("heatmap.conv.bias"), padding=km // 2)
    raw = T.relu(T.instance_norm(raw, params["heatmap.norm.gamma"], params["heatmap.norm.beta"]))
    attended = T.mul(raw, mask)
    y = attended
    for r in range(config.refine_depth):
        y = T.conv2d(y, _req(params, f"refine{r}.conv.weight", "head"),
                     params.get(f"refine{r}.conv.bias"), padding=kr // 2)
    refined = T.add(attended, y)
    return HeatmapSet(point=point, edge=edge), refined


def heatmap_grid(heatmap_size: tuple[int, int], scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Input-pixel coordinates of heatmap cell centers: (x + 0.5) * scale."""
    h, w = heatmap_size
    xs = (np.arange(w, dtype=np.float64) + 0.5) * scale
    ys = (np.arange(h, dtype=np.float64) + 0.5) * scale
    return xs, ys


def soft_argmax(heatmap: Tensor, scale: float = 4.0, mode: str = "sum",
                eps: float = 1e-6, temperature: float = 1.0) -> LandmarkSet:
    """Decode each channel as the expectation of grid coordinates under the
    normalized map.

    sum mode rectifies negative cells (h must be a distribution, and decoded
    coordinates stay convex combinations of grid points) and divides by the
    exact channel sum, so delta maps decode to exact grid coordinates and
    positive rescaling cancels; a channel whose positive mass is at most eps
    falls back to the uniform distribution (grid centroid) and is logged.
    softmax mode applies a spatial softmax at the given temperature.
    """
    hv = T._arr(heatmap)
    if hv.ndim != 3:
        raise ShapeError(f"soft_argmax expects [N,h,w], got shape {hv.shape}")
    if not np.isfinite(hv).all():
        raise ValueError("soft_argmax requires a finite heatmap")
    n, h, w = hv.shape
    x64 = hv.astype(np.float64)
    if mode == "sum":
        x64 = np.maximum(x64, 0.0)
        sums = x64.sum(axis=(1, 2), keepdims=True)
        degenerate_mask = sums <= eps
        dist = np.where(degenerate_mask, 1.0 / (h * w),
                        x64 / np.where(degenerate_mask, 1.0, sums))
        degenerate = np.flatnonzero(degenerate_mask.reshape(-1))
        if degenerate.size:
            log.warning("soft_argmax: channel(s) %s have no positive mass, decoded as grid centroid",
                        degenerate.tolist())
    elif mode == "softmax":
        flat = x64.reshape(n, -1) / temperature
        flat = flat - flat.max(axis=1, keepdims=True)
        e = np.exp(flat)
        dist = (e / e.sum(axis=1, keepdims=True)).reshape(n, h, w)
    else:
        raise ValueError(f"unknown normalize mode {mode!r}")
    xs, ys = heatmap_grid((h, w), scale)
    cx = (dist.sum(axis=1) @ xs)
    cy = (dist.sum(axis=2) @ ys)
    return LandmarkSet(np.stack([cx, cy], axis=1))


def predict(image: Tensor, weights: WeightStore, config: ModelConfig,
            return_heatmaps: bool = False):
    """Full pipeline: backbone, upsample to the heatmap grid, generator head,
    soft-argmax decode to input-pixel coordinates."""
    final, _ = backbone_forward(image, weights, config)
    feat = T.upsample(final, config.heatmap_size, mode=config.upsample_mode)
    heatmaps, refined = heatmap_generator_forward(feat, weights, config)
    landmarks = soft_argmax(refined, scale=config.coord_scale, mode=config.softargmax_mode,
                            eps=config.softargmax_eps, temperature=config.softargmax_temperature)
    if return_heatmaps:
        return landmarks, heatmaps, refined
    return landmarks


def gaussian_heatmaps(landmarks: np.ndarray, heatmap_size: tuple[int, int],
                      scale: float, sigma: float = 1.5) -> Tensor:
    """Render unit-peak Gaussians (sigma in heatmap cells) at the given
    input-pixel landmark coordinates; used as synthetic teacher output."""
    h, w = heatmap_size
    pts = np.asarray(landmarks, dtype=np.float64) / scale - 0.5
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.empty((pts.shape[0], h, w), dtype=np.float32)
    for i, (cx, cy) in enumerate(pts):
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        out[i] = np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)
    return Tensor(out)
