"""Layer graph of the student network.

One walk over the ModelConfig yields every layer with its canonical weight
names, parameter shapes and MAC count. The weight container schema, the
static profiler and the forward pass all consume this table, which keeps the
three views consistent (the profiler's parameter total equals the element
count of a weight store built from the same config by construction).

Canonical weight names follow `stage{i}.{block}.{layer}.{param}`; the
generator head uses the `head.` prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ModelConfig


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | norm | layer_norm | instance_norm | upsample | elementwise | softargmax
    params: dict[str, tuple[int, ...]] = field(default_factory=dict)
    macs: int = 0
    out_size: tuple[int, int] | None = None

    @property
    def param_count(self) -> int:
        total = 0
        for shape in self.params.values():
            n = 1
            for e in shape:
                n *= e
            total += n
        return total


def _conv(name, c_in, c_out, k, h_out, w_out, groups=1, bias=False) -> LayerSpec:
    params = {"weight": (c_out, c_in // groups, k, k)}
    if bias:
        params["bias"] = (c_out,)
    macs = c_out * (c_in // groups) * k * k * h_out * w_out
    return LayerSpec(name, "conv", params, macs, (h_out, w_out))


def _norm(name, channels, kind="norm") -> LayerSpec:
    return LayerSpec(name, kind, {"gamma": (channels,), "beta": (channels,)}, 0)


def _mv2(prefix, c_in, c_out, stride, expansion, h_in, w_in) -> list[LayerSpec]:
    hidden = c_in * expansion
    h_out, w_out = h_in // stride, w_in // stride
    return [
        _conv(f"{prefix}.expand.conv", c_in, hidden, 1, h_in, w_in),
        _norm(f"{prefix}.expand.norm", hidden),
        _conv(f"{prefix}.dw.conv", hidden, hidden, 3, h_out, w_out, groups=hidden),
        _norm(f"{prefix}.dw.norm", hidden),
        _conv(f"{prefix}.proj.conv", hidden, c_out, 1, h_out, w_out),
        _norm(f"{prefix}.proj.norm", c_out),
    ]


def _vit_block(prefix, channels, dim, depth, ffn_ratio, h, w) -> list[LayerSpec]:
    tokens = h * w  # patch_area * num_patches: pointwise cost is resolution-bound
    ffn = int(dim * ffn_ratio)
    layers = [
        _conv(f"{prefix}.local_dw.conv", channels, channels, 3, h, w, groups=channels),
        _norm(f"{prefix}.local_dw.norm", channels),
        _conv(f"{prefix}.local_pw.conv", channels, dim, 1, h, w),
    ]
    for k in range(depth):
        tx = f"{prefix}.tx{k}"
        layers += [
            _norm(f"{tx}.norm1", dim, kind="layer_norm"),
            _conv(f"{tx}.qkv.conv", dim, 1 + 2 * dim, 1, h, w, bias=True),
            LayerSpec(f"{tx}.attn", "elementwise", {}, 0, (h, w)),
            _conv(f"{tx}.out.conv", dim, dim, 1, h, w, bias=True),
            _norm(f"{tx}.norm2", dim, kind="layer_norm"),
            _conv(f"{tx}.ffn1.conv", dim, ffn, 1, h, w, bias=True),
            _conv(f"{tx}.ffn2.conv", ffn, dim, 1, h, w, bias=True),
        ]
    layers += [
        _norm(f"{prefix}.final_norm", dim, kind="layer_norm"),
        _conv(f"{prefix}.proj.conv", dim, channels, 1, h, w),
        _norm(f"{prefix}.proj.norm", channels),
    ]
    return layers


def build_graph(config: ModelConfig) -> list[LayerSpec]:
    c = config.channels
    d = config.attn_dims
    depths = config.transformer_depths
    exp = config.mv2_expansion
    H, W = config.input_size
    hm_h, hm_w = config.heatmap_size
    N, E = config.num_landmarks, config.num_edges

    layers: list[LayerSpec] = []
    h, w = H // 2, W // 2
    layers += [
        _conv("stage0.0.conv", 3, c[0], 3, h, w),
        _norm("stage0.0.norm", c[0]),
    ]
    layers += _mv2("stage1.0", c[0], c[1], 1, exp, h, w)
    layers += _mv2("stage2.0", c[1], c[2], 2, exp, h, w)
    h, w = h // 2, w // 2
    layers += _mv2("stage2.1", c[2], c[2], 1, exp, h, w)
    layers += _mv2("stage2.2", c[2], c[2], 1, exp, h, w)
    for stage, (dim, depth) in enumerate(zip(d, depths), start=3):
        c_in, c_out = c[stage - 1], c[stage]
        layers += _mv2(f"stage{stage}.0", c_in, c_out, 2, exp, h, w)
        h, w = h // 2, w // 2
        layers += _vit_block(f"stage{stage}.1", c_out, dim, depth, config.ffn_ratio, h, w)

    layers.append(LayerSpec("neck.upsample", "upsample", {}, 0, (hm_h, hm_w)))

    kh, km, kr = config.head_kernel, config.heatmap_kernel, config.refine_kernel
    layers += [
        _conv("head.point.conv", c[5], N, kh, hm_h, hm_w, bias=True),
        _conv("head.edge.conv", c[5], E, kh, hm_h, hm_w, bias=True),
        LayerSpec("head.e2p", "elementwise", {}, 0, (hm_h, hm_w)),
        LayerSpec("head.mask_dot", "elementwise", {}, 0, (hm_h, hm_w)),
        _conv("head.heatmap.conv", c[5], N, km, hm_h, hm_w, bias=True),
        _norm("head.heatmap.norm", N, kind="instance_norm"),
        LayerSpec("head.attend_dot", "elementwise", {}, 0, (hm_h, hm_w)),
    ]
    for r in range(config.refine_depth):
        layers.append(_conv(f"head.refine{r}.conv", N, N, kr, hm_h, hm_w, bias=True))
    layers += [
        LayerSpec("head.residual_sum", "elementwise", {}, 0, (hm_h, hm_w)),
        LayerSpec("head.soft_argmax", "softargmax", {}, 0, (hm_h, hm_w)),
    ]
    return layers


def weight_schema(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical weight name -> shape for every parameter in the graph."""
    schema: dict[str, tuple[int, ...]] = {}
    for layer in build_graph(config):
        for pname, shape in layer.params.items():
            schema[f"{layer.name}.{pname}"] = shape
    return schema
