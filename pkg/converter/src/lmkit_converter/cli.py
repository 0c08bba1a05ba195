"""Converter CLI: `export-weights` and `export-heatmaps`.

Checkpoints are torch.save files; for `export-heatmaps` the checkpoint must
contain a state dict for the bundled student architecture, which then serves
as the teacher-side network (any model producing [N,64,64] point and
[E,64,64] edge maps satisfies the heatmap interface).
"""

from __future__ import annotations

import argparse
import sys

import torch

from lmkit.config import default_config

from .export import ExportError, export_teacher_heatmaps, export_weights
from .name_map import NameMap, NameMapError, default_name_map
from .torch_model import StudentNet


def _load_checkpoint(path) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(blob, dict) and "state_dict" in blob:
        return blob["state_dict"]
    return blob


def cmd_export_weights(args) -> int:
    checkpoint = _load_checkpoint(args.ckpt)
    cfg = default_config(alpha=args.alpha)
    name_map = NameMap.load(args.map) if args.map else default_name_map(cfg)
    store = export_weights(checkpoint, name_map, args.out,
                           dtype="f16" if args.f16 else "f32", config=cfg)
    print(f"wrote {args.out}: {len(store)} tensors, {store.element_count()} elements")
    return 0


def cmd_export_heatmaps(args) -> int:
    checkpoint = _load_checkpoint(args.ckpt)
    cfg = default_config(alpha=args.alpha)
    teacher = StudentNet(cfg)
    teacher.load_state_dict(checkpoint)
    teacher.eval()
    failures = export_teacher_heatmaps(teacher, args.annotations, args.out_dir, cfg)
    for f in failures:
        print(f"failed: {f}", file=sys.stderr)
    print(f"exported heatmaps for {args.annotations} into {args.out_dir} "
          f"({len(failures)} failures)")
    return 0 if not failures else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmkit-convert", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("export-weights", help="state dict -> .lmkw container")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--map", help="NameMap JSON; defaults to the bundled student map")
    p.add_argument("--out", required=True)
    p.add_argument("--f16", action="store_true", help="store tensors as f16")
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_export_weights)

    p = sub.add_parser("export-heatmaps", help="precompute per-sample teacher heatmaps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_export_heatmaps)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ExportError, NameMapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
