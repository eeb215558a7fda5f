"""``microsplat`` command line.

Every hyperparameter of :class:`TrainConfig` is a flag (``--lambda-c``,
``--prune-interval``, ...). Values resolve as flag, then ``--config`` file,
then default. Logs go to stderr; results go to files under ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from microsplat import __version__
from microsplat.config import TrainConfig
from microsplat.scene import (
    SCENE_KINDS,
    ConfigError,
    ImageBuffer,
    generate_synthetic_scene,
    load_cameras,
    load_scene,
    save_cameras,
    save_scene,
)

log = logging.getLogger("microsplat")

IMAGE_SUFFIXES = (".png", ".ppm")


# ---------------------------------------------------------------------------
# Config resolution and manifests
# ---------------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with TrainConfig keys")
    group = parser.add_argument_group("hyperparameters")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "threads":
            continue
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        conv = {"int": int, "float": float, "bool": str}.get(kind, str)
        group.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=conv, default=argparse.SUPPRESS,
                           metavar=kind.upper(), help=f"default {f.default!r}")


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    data: dict = {}
    if getattr(args, "config", None) is not None:
        data.update(TrainConfig.from_file(args.config).to_dict())
    for key, value in vars(args).items():
        if key.startswith("cfg_"):
            data[key[4:]] = value
    threads = resolve_threads(args, data.get("threads"))
    data["threads"] = threads
    return TrainConfig.from_dict(data)


def resolve_threads(args: argparse.Namespace, from_file=None) -> int:
    if getattr(args, "threads", None) is not None:
        threads = args.threads
    elif os.environ.get("MICROSPLAT_THREADS"):
        try:
            threads = int(os.environ["MICROSPLAT_THREADS"])
        except ValueError:
            raise ConfigError("MICROSPLAT_THREADS must be an integer") from None
    elif from_file is not None:
        threads = int(from_file)
    else:
        threads = 1
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    return threads


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5, check=True)
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def write_manifest(out: Path, command: str, config: TrainConfig | None, inputs: dict,
                   argv: list[str], seed: int | None) -> None:
    """Resolved configuration and inputs, written before any computation."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": argv,
        "version": version_string(),
        "seed": seed,
        "inputs": {k: (str(v) if v is not None else None) for k, v in inputs.items()},
        "config": config.to_dict() if config is not None else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    if config is not None:
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(path: Path) -> list[ImageBuffer]:
    path = Path(path)
    if path.is_dir():
        files = _image_files(path)
        if not files:
            raise FileNotFoundError(f"no PNG/PPM images in {path}")
        return [ImageBuffer.load(p) for p in files]
    return [ImageBuffer.load(path)]


def load_training_inputs(args: argparse.Namespace, config: TrainConfig):
    """(initial scene, cameras, ground-truth images, input description)."""
    if args.synthetic is not None:
        syn = generate_synthetic_scene(args.synthetic, config.seed, args.count, args.views, args.size)
        return syn.initial, syn.cameras, syn.images, {"synthetic": args.synthetic, "count": args.count,
                                                       "views": args.views, "size": args.size}
    missing = [name for name in ("scene", "cameras", "images") if getattr(args, name) is None]
    if missing:
        raise ConfigError("need --synthetic KIND or all of --scene, --cameras, --images"
                          f" (missing {', '.join('--' + m for m in missing)})")
    scene = load_scene(args.scene)
    cameras = load_cameras(args.cameras)
    images = load_images(args.images)
    if len(images) != len(cameras):
        raise ConfigError(f"{len(cameras)} cameras but {len(images)} images")
    for cam, img in zip(cameras, images):
        if (img.height, img.width) != (cam.height, cam.width):
            raise ConfigError(f"camera {cam.id} is {cam.width}x{cam.height} but its image is "
                              f"{img.width}x{img.height}")
    return scene, cameras, images, {"scene": args.scene, "cameras": args.cameras, "images": args.images}


def _add_training_inputs(parser: argparse.ArgumentParser, synthetic: bool = True) -> None:
    parser.add_argument("--scene", type=Path, help="initial scene PLY")
    parser.add_argument("--cameras", type=Path, help="cameras JSON")
    parser.add_argument("--images", type=Path, help="directory of ground-truth images, one per camera")
    if synthetic:
        parser.add_argument("--synthetic", choices=SCENE_KINDS,
                            help="generate the inputs instead of loading them")
        parser.add_argument("--count", type=int, default=300, help="teacher Gaussians (synthetic)")
        parser.add_argument("--views", type=int, default=8, help="camera count (synthetic)")
        parser.add_argument("--size", type=int, default=64, help="image side in pixels (synthetic)")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    out = args.out
    write_manifest(out, "gen-scene", None, {}, args.argv, args.seed)
    syn = generate_synthetic_scene(args.kind, args.seed, args.count, args.views, args.size,
                                   background=args.background)
    save_scene(syn.teacher, out / "teacher.ply")
    save_scene(syn.initial, out / "initial.ply")
    save_cameras(syn.cameras, out / "cameras.json")
    (out / "images").mkdir(exist_ok=True)
    for cam, img in zip(syn.cameras, syn.images):
        img.save(out / "images" / f"view_{cam.id:03d}.png")
    log.info("wrote %s scene (%d teacher, %d initial Gaussians, %d views) to %s",
             args.kind, len(syn.teacher), len(syn.initial), len(syn.cameras), out)
    return 0


def cmd_train(args) -> int:
    from microsplat.train import train

    config = resolve_config(args)
    scene, cameras, images, inputs = load_training_inputs(args, config)
    write_manifest(args.out, "train", config, inputs, args.argv, config.seed)
    result = train(scene, cameras, images, config, checkpoint_dir=args.out / "checkpoints")
    result.report.write(args.out)
    save_scene(result.scene, args.out / "scene.ply")
    if result.encoder is not None:
        result.encoder.save(args.out / "encoder.bin")
    final = result.report.final
    log.info("final PSNR %.2f dB, SSIM %.4f, %d Gaussians (peak %d)",
             final["psnr"], final["ssim"], final["n_gs"], result.report.peak_n_gs)
    return 0


def cmd_render(args) -> int:
    from microsplat.render import render_image, set_threads

    set_threads(resolve_threads(args))
    scene = load_scene(args.scene)
    cameras = load_cameras(args.cameras)
    if args.view is not None:
        chosen = [c for c in cameras if c.id == args.view]
        if not chosen:
            raise ConfigError(f"no camera with id {args.view}")
        if args.output is None:
            raise ConfigError("--view needs -o/--output")
        render_image(scene, chosen[0]).save(args.output)
        return 0
    out = args.output or args.out
    out.mkdir(parents=True, exist_ok=True)
    for cam in cameras:
        render_image(scene, cam).save(out / f"view_{cam.id:03d}.png")
    return 0


def cmd_prune(args) -> int:
    from microsplat.adp import prune_low_opacity

    scene = load_scene(args.scene)
    result = prune_low_opacity(scene, args.threshold)
    if result.refused:
        log.warning("every Gaussian is below %.4g; scene written unchanged", args.threshold)
    save_scene(result.scene, args.output)
    log.info("kept %d of %d Gaussians", len(result.scene), len(scene))
    return 0


def cmd_gsdo_post(args) -> int:
    from microsplat.train import gsdo_post

    config = resolve_config(args)
    scene, cameras, images, inputs = load_training_inputs(args, config)
    write_manifest(args.out, "gsdo-post", config, inputs, args.argv, config.seed)
    result = gsdo_post(scene, cameras, images, config, args.iters)
    result.report.write(args.out)
    save_scene(result.scene, args.out / "scene.ply")
    if result.encoder is not None:
        result.encoder.save(args.out / "encoder.bin")
    before = result.report.checkpoints["input"]["psnr"]
    log.info("PSNR %.2f -> %.2f dB over %d Gaussians", before, result.report.final["psnr"], len(scene))
    return 0


def _pairs(a: Path, b: Path) -> list[tuple[Path, Path]]:
    if a.is_dir() != b.is_dir():
        raise ConfigError("compare two files or two directories")
    if not a.is_dir():
        return [(a, b)]
    left, right = _image_files(a), _image_files(b)
    names = {p.name for p in right}
    pairs = [(p, b / p.name) for p in left if p.name in names]
    if not pairs:
        raise ConfigError(f"no matching image names in {a} and {b}")
    return pairs


def cmd_metrics(args) -> int:
    from microsplat.metrics import psnr, ssim

    rows = []
    for pa, pb in _pairs(args.a, args.b):
        ia, ib = ImageBuffer.load(pa), ImageBuffer.load(pb)
        rows.append({"a": str(pa), "b": str(pb), "psnr": psnr(ia, ib), "ssim": ssim(ia, ib)})
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    print(f"PSNR {mean_psnr:.2f} SSIM {mean_ssim:.4f}")
    if args.json is not None:
        args.json.write_text(json.dumps({"pairs": rows, "psnr": mean_psnr, "ssim": mean_ssim}, indent=1))
    return 0


def cmd_check_grad(args) -> int:
    from microsplat.grad import check_gradients, random_problem
    from microsplat.gsdo import EncoderParams

    config = resolve_config(args)
    config = config.replace(knn_k=min(config.knn_k, args.points - 1),
                            neighborhood_size=min(config.neighborhood_size, args.points))
    if args.out is not None:
        write_manifest(args.out, "check-grad", config, {}, args.argv, config.seed)
    all_ok = True
    reports = []
    for seed in range(config.seed, config.seed + args.seeds):
        scene, cams, gts = random_problem(seed, args.points, args.size)
        encoder = EncoderParams.init(args.encoder_dim, args.encoder_dim, config.knn_k, seed=seed)
        report = check_gradients(scene, encoder, config, seed=seed, cameras=cams, ground_truths=gts)
        reports.append(report.to_dict())
        worst = max(c.max_rel_error for per in report.results.values() for c in per.values())
        print(f"seed {seed}: {'PASS' if report.passed else 'FAIL'} max relative error {worst:.2e}")
        for kind, cls, err in report.failures():
            print(f"  {kind}/{cls}: relative error {err:.2e}")
        all_ok &= report.passed
    if args.out is not None:
        (args.out / "gradcheck.json").write_text(json.dumps(reports, indent=1, sort_keys=True))
    return 0 if all_ok else 1


def cmd_ablate(args) -> int:
    from microsplat.train import run_ablation

    config = resolve_config(args)
    scene, cameras, images, inputs = load_training_inputs(args, config)
    write_manifest(args.out, "ablate", config, inputs, args.argv, config.seed)
    table = run_ablation(scene, cameras, images, config, fixed_prune_threshold=args.fixed_threshold,
                         intervals=args.intervals)
    table.write(args.out)
    for row in table.rows:
        log.info("%-34s PSNR %6.2f  SSIM %.4f  N_GS %5d", row["variant"], row["psnr"], row["ssim"],
                 row["n_gs"])
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microsplat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"microsplat {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, out_required=True):
        p.add_argument("--threads", type=int, default=None,
                       help="compositing workers (fallback: MICROSPLAT_THREADS, then 1)")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")

    p = sub.add_parser("gen-scene", help="synthetic teacher, initial scene, cameras and images")
    p.add_argument("--kind", choices=SCENE_KINDS, default="box-room")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--background", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("train", help="full three-phase pipeline")
    _add_training_inputs(p)
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a scene through its cameras to PNG")
    p.add_argument("scene", type=Path)
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--view", type=int, help="render only the camera with this id")
    p.add_argument("-o", "--output", type=Path, help="PNG path (with --view) or directory")
    common(p, out_required=False)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("prune", help="one-shot opacity prune of a PLY")
    p.add_argument("scene", type=Path)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("gsdo-post", help="graph-guided refinement of an existing scene")
    _add_training_inputs(p, synthetic=False)
    p.add_argument("--iters", type=int, default=None, help="iterations (default: phase3_iters)")
    p.set_defaults(synthetic=None)
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_gsdo_post)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images or two directories")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--json", type=Path, help="also write per-pair results here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("check-grad", help="finite-difference gradient check on random problems")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--encoder-dim", type=int, default=8)
    _add_config_flags(p)
    common(p, out_required=False)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("ablate", help="component ladder and GSDO-post comparison")
    _add_training_inputs(p)
    p.add_argument("--fixed-threshold", type=float, default=0.3,
                   help="opacity threshold of the plain prune before GSDO-post")
    p.add_argument("--intervals", type=int, nargs="*", default=[],
                   help="also run these pruning intervals")
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"microsplat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
