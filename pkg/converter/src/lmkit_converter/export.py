"""Export trained weights into `.lmkw` and precompute teacher heatmaps."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch

from lmkit.config import ModelConfig
from lmkit.data import crop_resize, read_annotations, write_annotations
from lmkit.imageio import load_image
from lmkit.tensor import Tensor
from lmkit.weights import WeightStore, save as save_store

from .name_map import NameMap


class ExportError(ValueError):
    pass


def export_weights(checkpoint: dict, name_map: NameMap, out_path, dtype: str = "f32",
                   config: ModelConfig | None = None) -> WeightStore:
    """Write the mapped checkpoint tensors as a `.lmkw` container.

    `checkpoint` is a framework state dict (tensor-valued). Entries are
    written in map order, so re-exports are byte-identical. Unmapped source
    names are an error listing every offender.
    """
    if dtype not in ("f32", "f16"):
        raise ExportError(f"dtype must be f32 or f16, got {dtype!r}")
    missing = [e.src for e in name_map if e.src not in checkpoint]
    if missing:
        raise ExportError(f"checkpoint does not cover the map; missing {missing[:5]}"
                          + ("..." if len(missing) > 5 else ""))
    if config is not None:
        name_map.check_surjective(config)
    store = WeightStore()
    for entry in name_map:
        value = checkpoint[entry.src]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = entry.apply(np.asarray(value, dtype=np.float32))
        store.add(entry.dst, Tensor(arr, dtype=dtype))
    _atomic_save(store, out_path)
    return store


def _atomic_save(store: WeightStore, out_path) -> None:
    out_path = Path(out_path)
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    save_store(store, tmp)
    os.replace(tmp, out_path)


def export_teacher_heatmaps(teacher, annotations_path, out_dir, config: ModelConfig,
                            root=None) -> list[str]:
    """Run the teacher on every annotated crop and write per-sample `.lmkw`
    files holding "point" [N,h,w] and "edge" [E,h,w]; teacher paths are
    recorded back into the annotation file. Per-sample failures are
    reported and skipped, the run continues.

    `teacher` is any callable mapping a [1,3,256,256] float tensor to a dict
    with "point" and "edge" heatmap tensors.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = read_annotations(annotations_path)
    root = Path(root) if root is not None else Path(annotations_path).parent
    failures = []
    updated = []
    for i, sample in enumerate(samples):
        out_path = out_dir / f"teacher{i:05d}.lmkw"
        try:
            img_path = Path(sample.image)
            if not img_path.is_absolute():
                img_path = root / img_path
            crop, _ = crop_resize(load_image(img_path), sample.bbox, config.input_size)
            with torch.no_grad():
                batch = torch.from_numpy(crop.data[None].copy())
                out = teacher(batch)
            point = out["point"][0].detach().cpu().numpy().astype(np.float32)
            edge = out["edge"][0].detach().cpu().numpy().astype(np.float32)
            if point.shape[0] != config.num_landmarks or edge.shape[0] != config.num_edges:
                raise ExportError(f"teacher produced {point.shape[0]} point / "
                                  f"{edge.shape[0]} edge channels, expected "
                                  f"{config.num_landmarks}/{config.num_edges}")
            store = WeightStore([("point", Tensor(point)), ("edge", Tensor(edge))])
            _atomic_save(store, out_path)
            updated.append(type(sample)(image=sample.image, bbox=sample.bbox,
                                        landmarks=sample.landmarks,
                                        teacher=str(out_path)))
        except Exception as exc:  # keep going, report at the end
            failures.append(f"sample {i} ({sample.image}): {exc}")
            updated.append(sample)
    write_annotations(annotations_path, updated)
    return failures
