"""Desk-scale heatmap distillation: AdamW, the head training tape, and a
deterministic toy run that optimizes the distillation plus regression
objective on synthetic data.

The backbone stays frozen (its features are precomputed once per sample);
only the generator head trains. The run is a demonstrator, not a recipe for
the full-scale result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, NonFiniteGradientError, Var
from .config import ModelConfig, cyclic_incidence, default_config
from .losses import LossReport
from .model import backbone_forward, gaussian_heatmaps
from .tensor import Tensor, upsample
from .weights import WeightStore, random_init_store


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class OptimizerState:
    """AdamW moments plus the two learning-rate groups of the training
    recipe (backbone 2e-4, head 1e-3). The toy run only ever updates head
    parameters, so lr_backbone is modeled but unused there."""

    lr_head: float = 1e-3
    lr_backbone: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_for(self, name: str) -> float:
        return self.lr_backbone if name.startswith("stage") else self.lr_head


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimizerState) -> dict[str, np.ndarray]:
    """One decoupled-weight-decay Adam update; returns new parameter arrays
    and advances the state. Non-finite gradients refuse the step."""
    bad = [n for n, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradients for {bad}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        lr = state.lr_for(name)
        update = lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)
        out[name] = (p - update).astype(p.dtype)
    return out


# ---------------------------------------------------------------------------
# generator-head forward on the tape


def head_forward_vars(params: dict[str, Var], feat: np.ndarray, config: ModelConfig):
    """Tape twin of `model.heatmap_generator_forward` plus soft-argmax.

    Returns (refined heatmap Var, coords Var). Parameter keys carry the
    canonical `head.` prefix.
    """
    kh, km, kr = config.head_kernel, config.heatmap_kernel, config.refine_kernel
    point = ad.sigmoid(ad.conv2d(feat, params["head.point.conv.weight"],
                                 params["head.point.conv.bias"], padding=kh // 2))
    edge = ad.sigmoid(ad.conv2d(feat, params["head.edge.conv.weight"],
                                params["head.edge.conv.bias"], padding=kh // 2))
    mask = ad.mul(point, ad.e2p(edge, config.incidence))
    raw = ad.conv2d(feat, params["head.heatmap.conv.weight"],
                    params["head.heatmap.conv.bias"], padding=km // 2)
    raw = ad.relu(ad.instance_norm(raw, params["head.heatmap.norm.gamma"],
                                   params["head.heatmap.norm.beta"]))
    attended = ad.mul(raw, mask)
    y = attended
    for r in range(config.refine_depth):
        y = ad.conv2d(y, params[f"head.refine{r}.conv.weight"],
                      params[f"head.refine{r}.conv.bias"], padding=kr // 2)
    refined = ad.add(attended, y)
    coords = ad.soft_argmax(refined, scale=config.coord_scale, eps=config.softargmax_eps)
    return refined, coords


def head_loss_builder(feat, teacher_point, gt_landmarks, config,
                      lambda_kd: float = 1.0, lambda_reg: float = 1.0):
    """Builder for GradTape.run: total = kd * lambda_kd + reg * lambda_reg."""

    def build(params):
        refined, coords = head_forward_vars(params, feat, config)
        kd = ad.kd_l2(refined, teacher_point)
        reg = ad.l2_reg(coords, gt_landmarks)
        return ad.add(ad.mul(kd, np.asarray(lambda_kd, kd.dtype)),
                      ad.mul(reg, np.asarray(lambda_reg, reg.dtype)))

    return build


# ---------------------------------------------------------------------------
# toy run


def toy_config() -> ModelConfig:
    """Shrunken student for the demonstrator: 64x64 input, 16x16 heatmaps,
    8 landmarks over 3 edges; small enough for a CPU to train in seconds."""
    return default_config().with_(
        alpha=0.25,
        input_size=(64, 64),
        heatmap_size=(16, 16),
        num_landmarks=8,
        num_edges=3,
        incidence=cyclic_incidence(8, 3),
        flip_permutation=None,
        transformer_depths=(1, 1, 1),
    )


def head_params(store: WeightStore, zero_refine: bool = True) -> dict[str, np.ndarray]:
    params = {f"head.{k}": v.data.astype(np.float32).copy()
              for k, v in store.subset("head").items()}
    if zero_refine:
        for name in params:
            if ".refine" in name:
                params[name] = np.zeros_like(params[name])
    return params


def synthesize_dataset(config: ModelConfig, num_samples: int, seed: int):
    """Noise images, in-bounds random landmarks, Gaussian teacher heatmaps."""
    rng = np.random.default_rng([seed, 0xDA7A])
    h, w = config.input_size
    margin = 4 * config.coord_scale
    images = rng.random((num_samples, 3, h, w), dtype=np.float32)
    gts = rng.uniform(margin, w - margin, size=(num_samples, config.num_landmarks, 2))
    teachers = [gaussian_heatmaps(g, config.heatmap_size, config.coord_scale, sigma=1.5).data
                for g in gts]
    return images, gts.astype(np.float32), teachers


def toy_distill_run(config: ModelConfig | None = None, steps: int = 200,
                    batch_size: int = 16, seed: int = 0, num_samples: int = 32,
                    lambda_kd: float = 1.0, lambda_reg: float = 1.0,
                    weight_decay: float = 0.0, lr_head: float = 1e-3,
                    threads: int = 1) -> list[LossReport]:
    """Train the generator head against synthetic Gaussian teachers.

    Deterministic under (config, steps, batch_size, seed): same seed, same
    trajectory bit-for-bit, including under `threads` > 1 (batch elements
    run concurrently but gradients reduce in batch order). Aborts with
    DivergenceError on a non-finite loss.
    """
    config = config or toy_config()
    store = random_init_store(config, seed=seed)
    images, gts, teachers = synthesize_dataset(config, num_samples, seed)

    feats = []
    for i in range(num_samples):
        final, _ = backbone_forward(Tensor(images[i]), store, config)
        feats.append(upsample(final, config.heatmap_size, mode=config.upsample_mode).data)

    params = head_params(store, zero_refine=True)
    state = OptimizerState(lr_head=lr_head, weight_decay=weight_decay)
    rng = np.random.default_rng([seed, 0x57E9])
    trajectory: list[LossReport] = []

    def one_sample(idx, snapshot):
        tape = GradTape()
        tracked = {n: tape.param(n, p) for n, p in snapshot.items()}
        refined, coords = head_forward_vars(tracked, feats[idx], config)
        kd = ad.kd_l2(refined, teachers[idx])
        reg = ad.l2_reg(coords, gts[idx])
        total = ad.add(ad.mul(kd, np.float32(lambda_kd)),
                       ad.mul(reg, np.float32(lambda_reg)))
        if not np.isfinite(float(total.value)):
            # forward already diverged; the step loop aborts on the values
            grads = {n: np.zeros_like(p) for n, p in snapshot.items()}
        else:
            grads = tape.gradients(total)
        return grads, float(kd.value), float(reg.value)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    for step in range(steps):
        batch = rng.integers(0, num_samples, size=batch_size)
        grads_sum = {n: np.zeros_like(p, dtype=np.float64) for n, p in params.items()}
        kd_sum = reg_sum = 0.0
        if pool is not None:
            results = list(pool.map(lambda idx: one_sample(idx, params), batch))
        else:
            results = [one_sample(idx, params) for idx in batch]
        for grads, kd_value, reg_value in results:
            for n in grads_sum:
                grads_sum[n] += grads[n]
            kd_sum += kd_value
            reg_sum += reg_value
        kd_mean, reg_mean = kd_sum / batch_size, reg_sum / batch_size
        total = lambda_kd * kd_mean + lambda_reg * reg_mean
        if not np.isfinite(total):
            raise DivergenceError(step, total)
        trajectory.append(LossReport(kd=kd_mean, reg=reg_mean,
                                     lambda_kd=lambda_kd, lambda_reg=lambda_reg))
        mean_grads = {n: (g / batch_size).astype(np.float32) for n, g in grads_sum.items()}
        params = adamw_step(params, mean_grads, state)
    if pool is not None:
        pool.shutdown()
    return trajectory
