"""Dataset ingestion, face cropping, augmentation, and teacher-heatmap IO.

Annotations are JSON Lines: one object per line with keys `image` (path),
`bbox` ([x, y, w, h] in source pixels), `landmarks` ([[x, y], ...]) and
optionally `teacher` (path to a `.lmkw` heatmap file). Coordinates follow
the corner convention (position p lies p pixels from the image's left/top
edge), so cropping a bbox to 256x256 maps a landmark by
(p - bbox_origin) * 256 / bbox_extent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import load_image
from .model import HeatmapSet
from .tensor import Tensor
from .weights import ContainerError, load as load_store


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedSample:
    image: str
    bbox: tuple[float, float, float, float]
    landmarks: np.ndarray
    teacher: str | None = None

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise AnnotationError(f"bbox extents must be positive, got w={w}, h={h}")
        lm = np.asarray(self.landmarks, dtype=np.float32)
        if lm.ndim != 2 or lm.shape[1] != 2:
            raise AnnotationError(f"landmarks must be [N,2], got shape {lm.shape}")
        object.__setattr__(self, "landmarks", lm)
        object.__setattr__(self, "bbox", (float(x), float(y), float(w), float(h)))


def read_annotations(path) -> list[AnnotatedSample]:
    samples = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                samples.append(AnnotatedSample(
                    image=rec["image"], bbox=tuple(rec["bbox"]),
                    landmarks=rec["landmarks"], teacher=rec.get("teacher")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise AnnotationError(f"{path}:{lineno}: bad annotation record: {exc}") from exc
    return samples


def write_annotations(path, samples) -> None:
    with open(path, "w") as f:
        for s in samples:
            rec = {"image": s.image, "bbox": list(s.bbox),
                   "landmarks": np.asarray(s.landmarks, dtype=float).tolist()}
            if s.teacher is not None:
                rec["teacher"] = s.teacher
            f.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class Affine:
    """2-D affine map p' = M @ p + t, stored as a 2x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Affine":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def scale_translate(cls, sx, sy, tx, ty) -> "Affine":
        return cls(np.array([[sx, 0.0, tx], [0.0, sy, ty]]))

    @classmethod
    def rotation_about(cls, degrees: float, cx: float, cy: float) -> "Affine":
        th = math.radians(degrees)
        c, s = math.cos(th), math.sin(th)
        return cls(np.array([
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
        ]))

    @classmethod
    def scale_about(cls, factor: float, cx: float, cy: float) -> "Affine":
        return cls(np.array([
            [factor, 0.0, cx * (1 - factor)],
            [0.0, factor, cy * (1 - factor)],
        ]))

    @classmethod
    def hflip(cls, width: float) -> "Affine":
        return cls(np.array([[-1.0, 0.0, width], [0.0, 1.0, 0.0]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix[:, :2].T + self.matrix[:, 2]

    def compose(self, inner: "Affine") -> "Affine":
        """self after inner: (self . inner)(p) = self(inner(p))."""
        a, b = self.matrix, inner.matrix
        m = np.empty((2, 3))
        m[:, :2] = a[:, :2] @ b[:, :2]
        m[:, 2] = a[:, :2] @ b[:, 2] + a[:, 2]
        return Affine(m)

    def inverse(self) -> "Affine":
        inv = np.linalg.inv(self.matrix[:, :2])
        m = np.empty((2, 3))
        m[:, :2] = inv
        m[:, 2] = -inv @ self.matrix[:, 2]
        return Affine(m)


def _sample_bilinear(image: np.ndarray, affine: Affine, out_size: tuple[int, int]) -> np.ndarray:
    """Resample so output(p) = input(affine^-1(p)); zero outside the input."""
    H, W = out_size
    inv = affine.inverse().matrix
    xs, ys = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    h, w = image.shape[1:]
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx, fy = src_x - x0, src_y - y0

    def gather(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        return image[:, yc, xc] * valid[None]

    out = (gather(y0, x0) * ((1 - fy) * (1 - fx))[None]
           + gather(y0, x0 + 1) * ((1 - fy) * fx)[None]
           + gather(y0 + 1, x0) * (fy * (1 - fx))[None]
           + gather(y0 + 1, x0 + 1) * (fy * fx)[None])
    return out.astype(np.float32)


def crop_resize(image: np.ndarray, bbox, out_size: tuple[int, int] = (256, 256)):
    """Crop the bbox (zero-padded outside the image) and resize bilinearly.

    Returns (Tensor[3,H,W], forward affine source->crop); invert the affine
    to map predictions back to source coordinates.
    """
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise AnnotationError(f"degenerate bbox: w={w}, h={h}")
    img = np.asarray(image, dtype=np.float32)
    ih, iw = img.shape[1:]
    if x + w <= 0 or y + h <= 0 or x >= iw or y >= ih:
        raise AnnotationError(f"bbox ({x},{y},{w},{h}) does not intersect image {iw}x{ih}")
    H, W = out_size
    fwd = Affine.scale_translate(W / w, H / h, -x * W / w, -y * H / h)
    out = _sample_bilinear(img, fwd, (H, W))
    return Tensor(out), fwd


@dataclass(frozen=True)
class AugmentPolicy:
    rotation_deg: float = 45.0
    scale_jitter: float = 0.10
    translate_frac: float = 0.18
    blur_prob: float = 0.40
    gray_prob: float = 0.20
    occlude_prob: float = 0.40
    hflip_prob: float = 0.50
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    occlude_frac: tuple[float, float] = (0.10, 0.30)
    flip_permutation: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_prob", "gray_prob", "occlude_prob", "hflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {p}")
        if self.flip_permutation is not None:
            p = tuple(int(i) for i in self.flip_permutation)
            if any(p[p[i]] != i for i in range(len(p))):
                raise ValueError("flip permutation must be an involution")
            object.__setattr__(self, "flip_permutation", p)

    def rng_for(self, index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, index])


@dataclass(frozen=True)
class AugmentedSample:
    image: Tensor
    landmarks: np.ndarray
    affine: Affine
    flipped: bool
    applied: dict


def augment(image, landmarks: np.ndarray, policy: AugmentPolicy,
            rng: np.random.Generator) -> AugmentedSample:
    """Apply the augmentation policy to a cropped [3,S,S] sample.

    Geometric draws (rotation about the crop center, scale, translation, and
    an optional horizontal flip) compose into a single affine used for one
    resample; landmarks are mapped by the same affine, with flip re-indexing
    by the involution permutation. Photometric ops (blur, gray, occlusion)
    follow with the stated probabilities.
    """
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    size = img.shape[1]
    center = size / 2.0
    lm = np.asarray(landmarks, dtype=np.float64)

    angle = float(rng.uniform(-policy.rotation_deg, policy.rotation_deg)) if policy.rotation_deg else 0.0
    scale = float(rng.uniform(1 - policy.scale_jitter, 1 + policy.scale_jitter)) if policy.scale_jitter else 1.0
    shift = rng.uniform(-policy.translate_frac, policy.translate_frac, size=2) * size \
        if policy.translate_frac else np.zeros(2)
    do_blur = bool(rng.random() < policy.blur_prob)
    sigma = float(rng.uniform(*policy.blur_sigma))
    do_gray = bool(rng.random() < policy.gray_prob)
    do_occlude = bool(rng.random() < policy.occlude_prob)
    occ = rng.uniform(policy.occlude_frac[0], policy.occlude_frac[1], size=2) * size
    occ_at = rng.uniform(0, 1, size=2)
    do_flip = bool(rng.random() < policy.hflip_prob)
    if do_flip and policy.flip_permutation is None:
        raise ValueError("hflip enabled but the policy has no flip permutation")

    aff = Affine.rotation_about(angle, center, center)
    aff = Affine.scale_about(scale, center, center).compose(aff)
    aff = Affine.scale_translate(1, 1, shift[0], shift[1]).compose(aff)
    if do_flip:
        aff = Affine.hflip(size).compose(aff)
    out = _sample_bilinear(img, aff, img.shape[1:])
    lm = aff.apply(lm)
    if do_flip:
        lm = lm[list(policy.flip_permutation)]

    if do_blur:
        out = ndimage.gaussian_filter(out, sigma=(0, sigma, sigma)).astype(np.float32)
    if do_gray:
        luma = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]
        out = np.repeat(luma[None], 3, axis=0).astype(np.float32)
    if do_occlude:
        ow, oh = (max(1, int(v)) for v in occ)
        x0 = int(occ_at[0] * max(img.shape[2] - ow, 1))
        y0 = int(occ_at[1] * max(img.shape[1] - oh, 1))
        noise = rng.uniform(0, 1, size=(3, oh, ow)).astype(np.float32)
        out = out.copy()
        out[:, y0:y0 + oh, x0:x0 + ow] = noise

    applied = {"angle": angle, "scale": scale, "shift": shift.tolist(),
               "blur": do_blur and sigma, "gray": do_gray,
               "occlude": do_occlude, "flip": do_flip}
    return AugmentedSample(Tensor(out), lm, aff, do_flip, applied)


def split_train_val(samples, seed: int, ratio: tuple[int, int] = (10, 1)):
    """Deterministic shuffled split; val size is round(n * v / (t + v))."""
    n = len(samples)
    t, v = ratio
    if n < t + v:
        raise ValueError(f"need at least {t + v} samples to split {t}:{v}, got {n}")
    val_n = round(n * v / (t + v))
    perm = np.random.default_rng(seed).permutation(n)
    val = [samples[i] for i in perm[:val_n]]
    train = [samples[i] for i in perm[val_n:]]
    return train, val


def load_teacher_heatmaps(path, num_landmarks: int | None = None,
                          num_edges: int | None = None) -> HeatmapSet:
    """Read a `.lmkw` file holding tensors named "point" and "edge"."""
    store = load_store(path)
    for name in ("point", "edge"):
        if name not in store:
            raise ContainerError(f"{path}: teacher heatmap file is missing tensor {name!r}")
    point, edge = store.get("point"), store.get("edge")
    for name, t, expected in (("point", point, num_landmarks), ("edge", edge, num_edges)):
        if t.rank != 3:
            raise ContainerError(f"{path}: {name} must be rank 3, got shape {t.shape}")
        if expected is not None and t.shape[0] != expected:
            raise ContainerError(f"{path}: {name} has {t.shape[0]} channels, expected {expected}")
        if not np.isfinite(t.data).all():
            raise ContainerError(f"{path}: {name} contains non-finite values")
    return HeatmapSet(point=point.astype("f32"), edge=edge.astype("f32"))


def load_sample_image(sample: AnnotatedSample, root=None) -> np.ndarray:
    path = Path(sample.image)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    return load_image(path)
