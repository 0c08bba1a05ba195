"""Command-line entry point.

Subcommands: infer, eval, verify, profile, distill-toy, augment-preview,
bench. Every run writes a RunManifest JSON capturing the resolved arguments,
seeds and paths, enough to reproduce the run; deterministic subcommands
reproduce their outputs bit-exactly from it.

Exit codes: 0 success, 1 verification or evaluation failure, 2 usage error,
3 I/O or format error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import time
from dataclasses import asdict, dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import default_config
from .data import (AnnotationError, AugmentPolicy, augment, crop_resize,
                   load_sample_image, read_annotations)
from .imageio import ImageFormatError, load_image, save_image
from .losses import nme, parse_norm
from .model import LandmarkSet, predict
from .profiler import profile
from .tensor import Tensor
from .verification import SUITES, run_suites
from .weights import ContainerError, load as load_weights


@dataclass
class RunManifest:
    subcommand: str
    args: dict
    seeds: dict
    inputs: list[str]
    outputs: list[str]
    version: str
    wall_time_s: float

    def write(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


def _version() -> str:
    try:
        return metadata.version("lmkit")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if out:
        base = Path(out)
        parent = base if base.is_dir() else base.parent
        return parent / "run_manifest.json" if parent != Path("") else Path("run_manifest.json")
    return Path("run_manifest.json")


def _emit_manifest(args, subcommand, seeds, inputs, outputs, started) -> None:
    manifest = RunManifest(
        subcommand=subcommand,
        args={k: v for k, v in vars(args).items() if k not in ("func", "manifest")},
        seeds=seeds,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        version=_version(),
        wall_time_s=round(time.time() - started, 3),
    )
    manifest.write(_manifest_path(args))


def format_landmarks(landmarks: LandmarkSet) -> str:
    """One line per landmark: `index x y`, 6 significant digits."""
    lines = [f"{i} {x:.6g} {y:.6g}" for i, (x, y) in enumerate(landmarks.coords)]
    return "\n".join(lines) + "\n"


def _parse_bbox(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox must be x,y,w,h")
    return tuple(float(p) for p in parts)


def cmd_infer(args) -> int:
    started = time.time()
    weights = load_weights(args.weights)
    cfg = default_config()
    image = load_image(args.image)
    crop, affine = crop_resize(image, args.bbox, cfg.input_size)
    landmarks = predict(crop, weights, cfg)
    if not args.crop_space:
        landmarks = LandmarkSet(affine.inverse().apply(landmarks.coords).astype(np.float32))
    text = format_landmarks(landmarks)
    outputs = []
    if args.out:
        Path(args.out).write_text(text)
        outputs.append(args.out)
    else:
        sys.stdout.write(text)
    _emit_manifest(args, "infer", {}, [args.weights, args.image], outputs, started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    weights = load_weights(args.weights)
    cfg = default_config()
    samples = read_annotations(args.annotations)
    if not samples:
        print("no samples in annotation file", file=sys.stderr)
        return 1
    norm = parse_norm(args.norm)
    root = Path(args.annotations).parent

    def one(sample):
        image = load_sample_image(sample, root=root)
        crop, affine = crop_resize(image, sample.bbox, cfg.input_size)
        pred = predict(crop, weights, cfg)
        source_pred = affine.inverse().apply(pred.coords).astype(np.float32)
        return nme(LandmarkSet(source_pred), LandmarkSet(sample.landmarks), norm)

    if args.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.threads) as pool:
            scores = list(pool.map(one, samples))
    else:
        scores = [one(s) for s in samples]
    mean_nme = float(np.mean(scores))
    print(f"samples: {len(scores)}")
    print(f"mean NME: {mean_nme:.4f} %")
    _emit_manifest(args, "eval", {}, [args.weights, args.annotations], [], started)
    return 0


def cmd_verify(args) -> int:
    started = time.time()
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, trials=args.trials, seed=args.seed)
    for r in results:
        print(r.summary())
    _emit_manifest(args, "verify", {"seed": args.seed}, [], [], started)
    return 0 if all(r.ok for r in results) else 1


def cmd_profile(args) -> int:
    started = time.time()
    cfg = default_config(alpha=args.alpha)
    report = profile(cfg)
    print(report.as_table())
    outputs = []
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"alpha": args.alpha, "layers": report.as_records(),
                       "total_params": report.total_params,
                       "total_macs": report.total_macs}, f, indent=2)
            f.write("\n")
        outputs.append(args.json)
    _emit_manifest(args, "profile", {}, [], outputs, started)
    return 0


def cmd_distill_toy(args) -> int:
    from .distill import toy_distill_run

    started = time.time()
    trajectory = toy_distill_run(steps=args.steps, seed=args.seed, threads=args.threads)
    records = [{"step": i, "kd": r.kd, "reg": r.reg, "total": r.total}
               for i, r in enumerate(trajectory)]
    outputs = []
    if args.out:
        with open(args.out, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        outputs.append(args.out)
    else:
        for rec in records:
            print(json.dumps(rec))
    if trajectory:
        print(f"initial total {trajectory[0].total:.4f} -> final {trajectory[-1].total:.4f}",
              file=sys.stderr)
    _emit_manifest(args, "distill-toy", {"seed": args.seed}, [], outputs, started)
    return 0


def cmd_augment_preview(args) -> int:
    started = time.time()
    samples = read_annotations(args.annotations)
    root = Path(args.annotations).parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = default_config()
    policy = AugmentPolicy(seed=args.seed, flip_permutation=cfg.flip_permutation)
    outputs = []

    def one(i, sample):
        image = load_sample_image(sample, root=root)
        crop, affine = crop_resize(image, sample.bbox, cfg.input_size)
        lm = affine.apply(sample.landmarks)
        aug = augment(crop, lm, policy, policy.rng_for(i))
        img_path = out_dir / f"sample{i:04d}.ppm"
        save_image(img_path, aug.image.data)
        lm_path = out_dir / f"sample{i:04d}.txt"
        lm_path.write_text(format_landmarks(LandmarkSet(aug.landmarks)))
        return [str(img_path), str(lm_path)]

    if args.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.threads) as pool:
            for paths in pool.map(lambda iv: one(*iv), enumerate(samples)):
                outputs += paths
    else:
        for i, sample in enumerate(samples):
            outputs += one(i, sample)
    print(f"wrote {len(samples)} previews to {out_dir}")
    _emit_manifest(args, "augment-preview", {"seed": args.seed}, [args.annotations], outputs, started)
    return 0


def cmd_bench(args) -> int:
    started = time.time()
    weights = load_weights(args.weights)
    cfg = default_config()
    rng = np.random.default_rng(0)
    image = Tensor(rng.random((3, *cfg.input_size), dtype=np.float32))
    times = []
    for _ in range(args.iterations):
        t0 = time.perf_counter()
        predict(image, weights, cfg)
        times.append((time.perf_counter() - t0) * 1e3)
    print(f"iterations: {len(times)}")
    print(f"latency ms: mean {np.mean(times):.1f}, min {np.min(times):.1f}, max {np.max(times):.1f}")
    _emit_manifest(args, "bench", {}, [args.weights], [], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmkit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("infer", help="decode landmarks for one face crop")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--bbox", required=True, type=_parse_bbox, help="x,y,w,h in source pixels")
    p.add_argument("--out")
    p.add_argument("--crop-space", action="store_true",
                   help="report 256x256 crop coordinates instead of source coordinates")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mean NME over an annotation file")
    p.add_argument("--weights", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--norm", default="bbox_diag", help="bbox_diag | interocular:i,j | const:c")
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run randomized self-verification suites")
    p.add_argument("suite", nargs="?", default="all", choices=[*SUITES, "all"])
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("profile", help="static parameter/MAC table")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--json", help="also write machine-readable records")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("distill-toy", help="desk-scale distillation run")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write per-step records as JSON lines")
    p.add_argument("--threads", type=int, default=1,
                   help="batch elements in parallel; gradients reduce in batch order")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_distill_toy)

    p = sub.add_parser("augment-preview", help="write augmented crops for inspection")
    p.add_argument("--annotations", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("bench", help="inference latency (reports only, asserts nothing)")
    p.add_argument("--weights", required=True)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except (OSError, ContainerError, ImageFormatError, AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
