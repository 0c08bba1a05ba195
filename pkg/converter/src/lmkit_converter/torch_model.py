"""Torch twin of the student network.

Parameters live in a flat ParameterDict keyed by the canonical weight names
(dots sanitized to `__`), so the export map is a pure rename. The forward
pass mirrors the numpy toolkit layer for layer; the differential test pins
the two implementations to each other, which also checks the toolkit's
fold-free patch ops against torch's native unfold/fold.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from lmkit.arch import weight_schema
from lmkit.config import ModelConfig


def sanitize(name: str) -> str:
    return name.replace(".", "__")


def desanitize(key: str) -> str:
    return key.replace("__", ".")


class StudentNet(nn.Module):
    def __init__(self, config: ModelConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        schema = weight_schema(config)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
        params = {}
        for name, shape in schema.items():
            if name.endswith(".gamma"):
                t = torch.ones(shape)
            elif name.endswith((".beta", ".bias")):
                t = torch.zeros(shape)
            elif seed is not None:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
                t = torch.randn(shape, generator=gen) * (2.0 / max(fan_in, 1)) ** 0.5
            else:
                t = torch.zeros(shape)
            params[sanitize(name)] = nn.Parameter(t)
        self.params = nn.ParameterDict(params)

    def p(self, name: str) -> torch.Tensor:
        return self.params[sanitize(name)]

    def maybe(self, name: str):
        key = sanitize(name)
        return self.params[key] if key in self.params else None

    # --- building blocks -------------------------------------------------

    def _affine(self, x, prefix):
        g = self.p(f"{prefix}.gamma").view(1, -1, 1, 1)
        b = self.p(f"{prefix}.beta").view(1, -1, 1, 1)
        return x * g + b

    def _conv_norm_act(self, x, prefix, stride=1, padding=0, groups=1, act=True):
        x = F.conv2d(x, self.p(f"{prefix}.conv.weight"), self.maybe(f"{prefix}.conv.bias"),
                     stride=stride, padding=padding, groups=groups)
        x = self._affine(x, f"{prefix}.norm")
        return F.silu(x) if act else x

    def _mv2(self, x, prefix, stride):
        c_in = x.shape[1]
        y = self._conv_norm_act(x, f"{prefix}.expand")
        y = self._conv_norm_act(y, f"{prefix}.dw", stride=stride, padding=1, groups=y.shape[1])
        y = self._conv_norm_act(y, f"{prefix}.proj", act=False)
        if stride == 1 and y.shape[1] == c_in:
            y = y + x
        return y

    def _layer_norm_tokens(self, tokens, prefix):
        # over the channel axis of [B, d, P, N]
        x = tokens.permute(0, 2, 3, 1)
        x = F.layer_norm(x, (x.shape[-1],), self.p(f"{prefix}.gamma"), self.p(f"{prefix}.beta"))
        return x.permute(0, 3, 1, 2)

    def _attention(self, tokens, prefix):
        d = tokens.shape[1]
        qkv = F.conv2d(tokens, self.p(f"{prefix}.qkv.conv.weight"), self.p(f"{prefix}.qkv.conv.bias"))
        score, key, value = torch.split(qkv, [1, d, d], dim=1)
        weights = torch.softmax(score, dim=-1)
        context = (key * weights).sum(dim=-1, keepdim=True)
        gated = F.relu(value) * context
        return F.conv2d(gated, self.p(f"{prefix}.out.conv.weight"), self.p(f"{prefix}.out.conv.bias"))

    def _vit_block(self, x, prefix, depth):
        b, c, h, w = x.shape
        ph, pw = self.config.patch_size
        y = self._conv_norm_act(x, f"{prefix}.local_dw", padding=1, groups=c)
        y = F.conv2d(y, self.p(f"{prefix}.local_pw.conv.weight"))
        d = y.shape[1]
        tokens = F.unfold(y, kernel_size=(ph, pw), stride=(ph, pw))
        n_patches = tokens.shape[-1]
        tokens = tokens.reshape(b, d, ph * pw, n_patches)
        for k in range(depth):
            tx = f"{prefix}.tx{k}"
            tokens = tokens + self._attention(self._layer_norm_tokens(tokens, f"{tx}.norm1"), tx)
            normed = self._layer_norm_tokens(tokens, f"{tx}.norm2")
            hdn = F.silu(F.conv2d(normed, self.p(f"{tx}.ffn1.conv.weight"), self.p(f"{tx}.ffn1.conv.bias")))
            tokens = tokens + F.conv2d(hdn, self.p(f"{tx}.ffn2.conv.weight"), self.p(f"{tx}.ffn2.conv.bias"))
        tokens = self._layer_norm_tokens(tokens, f"{prefix}.final_norm")
        y = F.fold(tokens.reshape(b, d * ph * pw, n_patches), output_size=(h, w),
                   kernel_size=(ph, pw), stride=(ph, pw))
        return self._conv_norm_act(y, f"{prefix}.proj", act=False)

    # --- full graph -------------------------------------------------------

    def backbone(self, image):
        x = F.conv2d(image, self.p("stage0.0.conv.weight"), stride=2, padding=1)
        x = F.silu(self._affine(x, "stage0.0.norm"))
        x = self._mv2(x, "stage1.0", 1)
        x = self._mv2(x, "stage2.0", 2)
        x = self._mv2(x, "stage2.1", 1)
        x = self._mv2(x, "stage2.2", 1)
        for stage, depth in zip((3, 4, 5), self.config.transformer_depths):
            x = self._mv2(x, f"stage{stage}.0", 2)
            x = self._vit_block(x, f"stage{stage}.1", depth)
        return x

    def forward(self, image):
        cfg = self.config
        feat = F.interpolate(self.backbone(image), size=cfg.heatmap_size,
                             mode="bilinear", align_corners=False)
        kh, km, kr = cfg.head_kernel, cfg.heatmap_kernel, cfg.refine_kernel
        point = torch.sigmoid(F.conv2d(feat, self.p("head.point.conv.weight"),
                                       self.p("head.point.conv.bias"), padding=kh // 2))
        edge = torch.sigmoid(F.conv2d(feat, self.p("head.edge.conv.weight"),
                                      self.p("head.edge.conv.bias"), padding=kh // 2))
        incidence = torch.from_numpy(np.asarray(cfg.incidence, dtype=np.float32)).to(edge.device)
        masks = []
        for i in range(cfg.num_landmarks):
            rows = incidence[i].nonzero().flatten()
            masks.append(edge[:, rows].prod(dim=1))
        mask = point * torch.stack(masks, dim=1)
        raw = F.conv2d(feat, self.p("head.heatmap.conv.weight"),
                       self.p("head.heatmap.conv.bias"), padding=km // 2)
        raw = F.relu(F.instance_norm(raw, weight=self.p("head.heatmap.norm.gamma"),
                                     bias=self.p("head.heatmap.norm.beta"), eps=1e-5))
        attended = raw * mask
        y = attended
        for r in range(cfg.refine_depth):
            y = F.conv2d(y, self.p(f"head.refine{r}.conv.weight"),
                         self.p(f"head.refine{r}.conv.bias"), padding=kr // 2)
        refined = attended + y
        return {"point": point, "edge": edge, "refined": refined}

    def decode(self, refined):
        """Sum-mode soft-argmax matching the toolkit decoder."""
        cfg = self.config
        b, n, h, w = refined.shape
        x64 = refined.double().clamp_min(0.0)
        sums = x64.sum(dim=(2, 3), keepdim=True)
        uniform = torch.full_like(x64, 1.0 / (h * w))
        dist = torch.where(sums <= cfg.softargmax_eps, uniform,
                           x64 / torch.where(sums <= cfg.softargmax_eps, torch.ones_like(sums), sums))
        scale = cfg.coord_scale
        xs = (torch.arange(w, dtype=torch.float64) + 0.5) * scale
        ys = (torch.arange(h, dtype=torch.float64) + 0.5) * scale
        cx = (dist.sum(dim=2) * xs).sum(dim=-1)
        cy = (dist.sum(dim=3) * ys).sum(dim=-1)
        return torch.stack([cx, cy], dim=-1)
