"""Randomized self-verification suites.

Each suite runs its checks against an independent reference (naive loops,
finite differences, closed forms) and reports pass/fail counts; the CLI
`verify` subcommand is a thin wrapper. Suites are deterministic under the
given seed.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape
from .config import ModelConfig, cyclic_incidence, default_config
from .distill import head_loss_builder
from .model import heatmap_grid, soft_argmax
from .patches import PatchSpec, fold_foldfree, fold_naive, permute6_via_5d, unfold_foldfree, unfold_naive
from .tensor import Tensor, trace_ops
from .weights import ContainerError, WeightStore, load, random_init_store, save


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    failures: list[str] = field(default_factory=list)

    def check(self, ok: bool, label: str) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(label)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def summary(self) -> str:
        status = "ok" if self.ok else "FAILED"
        line = f"{self.name}: {self.passed} passed, {self.failed} failed [{status}]"
        for f in self.failures[:10]:
            line += f"\n  - {f}"
        return line


def verify_patch_ops(trials: int = 1000, seed: int = 0) -> SuiteResult:
    """Fold-free rewrite vs the naive oracles, bit-exact, plus the rank<=5
    structural guarantee on every traced permute."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("patch-ops")
    patch_choices = [1, 2, 4]
    for t in range(trials):
        ph = int(rng.choice(patch_choices))
        pw = int(rng.choice(patch_choices))
        b = int(rng.integers(1, 3))
        c = int(rng.integers(1, 5))
        h = ph * int(rng.integers(1, 9))
        w = pw * int(rng.integers(1, 9))
        x = Tensor(rng.standard_normal((b, c, h, w)).astype(np.float32))
        spec = PatchSpec.for_feature(x.shape, ph, pw)
        with trace_ops() as log:
            got = unfold_foldfree(x, spec)
            back = fold_foldfree(got, spec)
        want = unfold_naive(x, spec)
        label = f"trial {t}: shape {x.shape} patch {ph}x{pw}"
        res.check(np.array_equal(got.data, want.data), f"unfold mismatch, {label}")
        res.check(np.array_equal(back.data, x.data), f"fold round trip, {label}")
        res.check(np.array_equal(fold_naive(want, spec).data, x.data), f"naive fold, {label}")
        res.check(all(r <= 5 for op, r, _ in log if op == "permute"),
                  f"rank-6 permute traced, {label}")
        # arbitrary rank-6 permutation vs direct transpose
        shape6 = tuple(int(e) for e in rng.integers(1, 4, size=6))
        x6 = Tensor(rng.standard_normal(shape6).astype(np.float32))
        order = tuple(int(a) for a in rng.permutation(6))
        split_axis = int(rng.integers(0, 6))
        got6 = permute6_via_5d(x6, order, split_axis=split_axis)
        res.check(np.array_equal(got6.data, x6.data.transpose(order)),
                  f"permute6 order {order} split {split_axis}, {label}")
    return res


def verify_softargmax(trials: int = 100, seed: int = 0) -> SuiteResult:
    """Decode contract: delta maps, centroid, brute-force expectation, and
    positive-rescale invariance."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("softargmax")
    one_hot = np.zeros((1, 64, 64), np.float32)
    one_hot[0, 10, 20] = 1.0
    got = soft_argmax(Tensor(one_hot)).coords[0]
    res.check(np.allclose(got, [82.0, 42.0], atol=1e-5), f"one-hot decode gave {got}")
    uniform = soft_argmax(Tensor(np.ones((1, 64, 64), np.float32))).coords[0]
    res.check(np.allclose(uniform, [128.0, 128.0], atol=1e-4), f"uniform decode gave {uniform}")
    xs, ys = heatmap_grid((64, 64), 4.0)
    for t in range(trials):
        hm = rng.random((3, 64, 64)).astype(np.float32)
        got = soft_argmax(Tensor(hm)).coords
        h64 = hm.astype(np.float64)
        want = np.empty((3, 2))
        for i in range(3):
            dist = h64[i] / h64[i].sum()
            want[i] = [(dist.sum(axis=0) * xs).sum(), (dist.sum(axis=1) * ys).sum()]
        res.check(np.abs(got - want).max() < 1e-5, f"trial {t}: oracle deviation")
        c = float(rng.uniform(0.1, 10.0))
        rescaled = soft_argmax(Tensor(hm * c)).coords
        res.check(np.abs(got - rescaled).max() < 1e-5, f"trial {t}: rescale x{c:.2f} moved decode")
    return res


def miniature_head_config() -> ModelConfig:
    # 512 * (1/64) = 8: an 8-channel feature feeding 8x8 heatmaps, 3 landmarks
    # over 2 edges; small enough to finite-difference every parameter
    return default_config().with_(
        alpha=1 / 64, input_size=(32, 32), heatmap_size=(8, 8),
        num_landmarks=3, num_edges=2, incidence=cyclic_incidence(3, 2),
        flip_permutation=None, transformer_depths=(1, 1, 1))


def gradient_check(seed: int = 0, h: float = 1e-3, dtype=np.float64, margin: float = 0.05):
    """Analytic vs central finite-difference gradients on the miniature head.

    Central differences are only valid at differentiable points, so the
    instance-norm offset is shifted until every pre-ReLU value clears
    `margin` (the ReLU kink itself is covered by op-level checks). Returns
    (max relative error, per-parameter dict); relative error uses a unit
    floor so exactly-zero gradients stay well-defined.
    """
    cfg = miniature_head_config()
    rng = np.random.default_rng(seed)
    c_feat = cfg.channels[5]
    feat = rng.standard_normal((c_feat, *cfg.heatmap_size)).astype(dtype)
    gts = rng.uniform(6, 26, size=(cfg.num_landmarks, 2)).astype(dtype)
    teacher = np.exp(-rng.random((cfg.num_landmarks, *cfg.heatmap_size))).astype(dtype)

    base = random_init_store(cfg, seed=seed + 1)
    params = {f"head.{k}": v.data.astype(dtype) for k, v in base.subset("head").items()}
    # biases and norm offsets get nonzero values so their gradients are generic;
    # refine weights shrink so the refined channel sums stay well away from the
    # ill-conditioned region of the normalize step (the difference quotient's
    # own truncation error would otherwise swamp the comparison)
    for name in params:
        if name.endswith((".bias", ".beta")):
            params[name] = rng.normal(0, 0.1, size=params[name].shape).astype(dtype)
        elif ".refine" in name:
            params[name] = (params[name] * 0.3).astype(dtype)
    # push the pre-ReLU activations clear of the kink
    pre = ad.instance_norm(
        ad.conv2d(feat, params["head.heatmap.conv.weight"], params["head.heatmap.conv.bias"]),
        params["head.heatmap.norm.gamma"], params["head.heatmap.norm.beta"]).value
    lift = np.maximum(0.0, margin - pre.min(axis=(1, 2)))
    params["head.heatmap.norm.beta"] = (params["head.heatmap.norm.beta"] + lift).astype(dtype)

    builder = head_loss_builder(feat, teacher, gts, cfg)
    tape = GradTape()
    tracked = {n: tape.param(n, p) for n, p in params.items()}
    loss = tape.run(lambda _: builder(tracked))
    analytic = tape.gradients(loss)

    def forward(p):
        t = GradTape()
        tr = {n: t.param(n, v) for n, v in p.items()}
        return float(t.run(lambda _: builder(tr)).value)

    errors = {}
    worst = 0.0
    for name, p in params.items():
        g = analytic[name]
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        numf = num.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = forward(params)
            flat[k] = orig - h
            down = forward(params)
            flat[k] = orig
            numf[k] = (up - down) / (2 * h)
        denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(num)))
        err = float((np.abs(g - num) / denom).max())
        errors[name] = err
        worst = max(worst, err)
    return worst, errors


def verify_gradients(trials: int = 1, seed: int = 0, tol: float = 1e-4) -> SuiteResult:
    res = SuiteResult("gradients")
    for t in range(trials):
        worst, errors = gradient_check(seed=seed + t)
        res.check(worst < tol, f"trial {t}: max relative error {worst:.3e} >= {tol}")
        for name, err in errors.items():
            res.check(err < tol, f"trial {t}: {name} relative error {err:.3e}")
    return res


def verify_weights_io(trials: int = 1000, seed: int = 0) -> SuiteResult:
    """Randomized container round trips plus single-bit corruption detection."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("weights-io")
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "probe.lmkw")
        for t in range(trials):
            store = WeightStore()
            for k in range(int(rng.integers(0, 6))):
                rank = int(rng.integers(1, 5))
                shape = tuple(int(e) for e in rng.integers(1, 5, size=rank))
                dtype = "f16" if rng.random() < 0.5 else "f32"
                store.add(f"t{k}", Tensor(rng.standard_normal(shape), dtype=dtype))
            save(store, path)
            res.check(load(path) == store, f"trial {t}: round trip not bit-exact")
            if len(store) and rng.random() < 0.5:
                with open(path, "rb") as f:
                    blob = bytearray(f.read())
                bit = int(rng.integers(0, 8 * len(blob)))
                blob[bit // 8] ^= 1 << (bit % 8)
                with open(path, "wb") as f:
                    f.write(bytes(blob))
                try:
                    load(path)
                    res.check(False, f"trial {t}: flipped bit {bit} went undetected")
                except ContainerError:
                    # magic-byte flips hit the magic gate, everything else the CRC
                    res.check(True, "")
    return res


SUITES = {
    "patch-ops": verify_patch_ops,
    "softargmax": verify_softargmax,
    "gradients": verify_gradients,
    "weights-io": verify_weights_io,
}


def run_suites(names, trials: int | None = None, seed: int = 0) -> list[SuiteResult]:
    results = []
    for name in names:
        fn = SUITES[name]
        kwargs = {"seed": seed}
        if trials is not None and name != "gradients":
            kwargs["trials"] = trials
        results.append(fn(**kwargs))
    return results
