"""Command line entry point exposing every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 data error (missing/malformed input).
The output directory resolves as --out > $SONARSYNTH_OUT > config value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from sonarsynth import pngio
from sonarsynth.anomaly import (
    AnomalyConfig,
    anomaly_volume,
    export_anomaly_volume,
    otsu_threshold,
    segment_from_anomaly,
)
from sonarsynth.compositor import (
    CompositeOptions,
    TerrainTile,
    composite,
    tile_scan,
)
from sonarsynth.deformation import (
    DeformParams,
    apply_field,
    generate_quadrant_field,
    write_deff,
)
from sonarsynth.evalkit import aggregate_by_site, confusion, emit_report
from sonarsynth.pipeline import (
    PipelineConfig,
    generate_dataset,
    read_manifest,
    scene_for_sample,
)
from sonarsynth.render import render_scan

ENV_OUT = "SONARSYNTH_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems raise instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def _resolve_out(args_out: str | None, fallback: str | None = None) -> str | None:
    if args_out:
        return args_out
    return os.environ.get(ENV_OUT) or fallback


def _load_config(path: str, seed: int | None, out: str | None) -> PipelineConfig:
    cfg = PipelineConfig.from_json(path)
    if seed is not None:
        cfg.master_seed = seed
    resolved = _resolve_out(out, cfg.output_dir)
    if resolved:
        cfg.output_dir = resolved
    return cfg


def _cmd_generate(args) -> int:
    cfg = _load_config(args.config, args.seed, args.out)
    manifest = generate_dataset(cfg, workers=args.workers)
    n_train = sum(1 for r in manifest.records if r["split"] == "train")
    print(
        f"generated {len(manifest.records)} samples "
        f"({n_train} train / {len(manifest.records) - n_train} val) -> {manifest.path}"
    )
    if manifest.failures:
        print(f"warning: {len(manifest.failures)} samples failed", file=sys.stderr)
    return 0


def _cmd_render(args) -> int:
    cfg = _load_config(args.config, args.seed, args.out)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    scene, mesh_name, _, speckle_seed = scene_for_sample(cfg, args.index)
    image, mask, shadow = render_scan(scene, cfg.sonar, seed=speckle_seed)
    pngio.write_gray(os.path.join(out, "scan.png"), image)
    pngio.write_mask(os.path.join(out, "mask.png"), mask)
    pngio.write_mask(os.path.join(out, "shadow.png"), shadow)
    with open(os.path.join(out, "scene.json"), "w", encoding="utf-8") as fh:
        fh.write(scene.to_json())
    print(f"rendered {mesh_name} -> {out}/scan.png mask.png shadow.png scene.json")
    return 0


def _cmd_fracture(args) -> int:
    image = pngio.read_gray(args.image)
    mask = pngio.read_mask(args.mask)
    shadow = pngio.read_mask(args.shadow) if args.shadow else None
    h, w = image.shape
    r_max = args.r_max if args.r_max is not None else 0.15 * min(h, w)
    params = DeformParams(n_r=args.n_r, n_theta=args.n_theta, r_max=r_max)
    rng = np.random.default_rng(args.seed)
    field = generate_quadrant_field(mask, params, rng)
    i_f, m_f, shadow_f = apply_field(image, mask, shadow, field)
    out = _resolve_out(args.out, ".")
    os.makedirs(out, exist_ok=True)
    pngio.write_gray(os.path.join(out, "fractured.png"), i_f)
    pngio.write_mask(os.path.join(out, "fractured_mask.png"), m_f)
    if args.shadow:
        pngio.write_mask(os.path.join(out, "fractured_shadow.png"), shadow_f)
    write_deff(os.path.join(out, "field.deff"), field)
    print(f"fractured -> {out}/fractured.png fractured_mask.png field.deff")
    return 0


def _cmd_composite(args) -> int:
    i_f = pngio.read_gray(args.image)
    m_f = pngio.read_mask(args.mask)
    shadow = pngio.read_mask(args.shadow) if args.shadow else None
    terrain_img = pngio.read_gray(args.terrain)
    tile = TerrainTile(image=terrain_img, source_id=os.path.basename(args.terrain))
    opts = CompositeOptions(shadow_gain=args.shadow_gain, feather=args.feather)
    sample = composite(i_f, m_f, shadow, tile, opts)
    out = _resolve_out(args.out, ".")
    os.makedirs(out, exist_ok=True)
    pngio.write_gray(os.path.join(out, "composite.png"), sample.image)
    print(f"composited -> {out}/composite.png")
    return 0


def _cmd_anomaly(args) -> int:
    image = pngio.read_gray(args.image)
    cfg = AnomalyConfig(levels=args.levels, channels=args.channels, trim_fraction=args.trim)
    volume = anomaly_volume(image, cfg)
    tau = otsu_threshold(volume.mean(axis=2)) if args.tau is None else args.tau
    out = _resolve_out(args.out, ".")
    paths = export_anomaly_volume(volume, out, cfg, tau=tau)
    print(f"anomaly volume depth {volume.shape[2]}, tau {tau:.4f} -> {paths[-1]}")
    return 0


def _cmd_segment(args) -> int:
    image = pngio.read_gray(args.image)
    cfg = AnomalyConfig(levels=args.levels, channels=args.channels, trim_fraction=args.trim)
    volume = anomaly_volume(image, cfg)
    tau = otsu_threshold(volume.mean(axis=2)) if args.tau is None else args.tau
    mask = segment_from_anomaly(volume, tau, min_blob=args.min_blob)
    out = _resolve_out(args.out, ".")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "segment.png")
    pngio.write_mask(path, mask)
    print(f"segmented with tau {tau:.4f} ({int(mask.sum())} ship pixels) -> {path}")
    return 0


def _cmd_eval(args) -> int:
    records = read_manifest(args.manifest)
    per_image = []
    for rec in records:
        name = rec["id"] + ".png"
        pred_path = os.path.join(args.pred, name)
        gt_path = os.path.join(args.gt, name)
        if not os.path.isfile(pred_path):
            raise FileNotFoundError(f"prediction missing: {pred_path}")
        if not os.path.isfile(gt_path):
            raise FileNotFoundError(f"ground truth missing: {gt_path}")
        per_image.append((rec["site"], confusion(pngio.read_mask(pred_path), pngio.read_mask(gt_path))))
    report = aggregate_by_site(per_image)
    text = emit_report(report, fmt=args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"report -> {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_tile(args) -> int:
    raw = pngio.read_gray(args.scan)
    tiles = tile_scan(raw, tile_size=args.tile_size, stride=args.stride)
    out = _resolve_out(args.out, ".")
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.scan))[0]
    for k, tile in enumerate(tiles):
        pngio.write_gray(os.path.join(out, f"{stem}_tile{k:04d}.png"), tile)
    print(f"{len(tiles)} tiles -> {out}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="sonarsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", parents=[], help="generate a full synthetic dataset")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("render", help="render one randomized scan (image/mask/shadow)")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--index", type=int, default=0, help="sample index to render")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("fracture", help="apply a random quadrant deformation field")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--shadow", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--n-r", type=int, default=10, dest="n_r")
    p.add_argument("--n-theta", type=int, default=20, dest="n_theta")
    p.add_argument("--r-max", type=float, default=None, dest="r_max")
    p.set_defaults(func=_cmd_fracture)

    p = sub.add_parser("composite", help="paste a fractured ship onto a terrain tile")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--shadow", default=None)
    p.add_argument("--terrain", required=True)
    p.add_argument("--shadow-gain", type=float, default=0.25, dest="shadow_gain")
    p.add_argument("--feather", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_composite)

    for name, helptext, func in (
        ("anomaly", "export per-level anomaly maps and a JSON sidecar", _cmd_anomaly),
        ("segment", "segment an image by thresholding its anomaly volume", _cmd_segment),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--image", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--levels", type=int, default=3)
        p.add_argument("--channels", type=int, default=7)
        p.add_argument("--trim", type=float, default=0.1)
        p.add_argument("--tau", type=float, default=None, help="default: Otsu of the score map")
        if name == "segment":
            p.add_argument("--min-blob", type=int, default=16, dest="min_blob")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="per-site IOU/F1 report for predicted masks")
    p.add_argument("--pred", required=True, help="directory of predicted masks ({id}.png)")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks ({id}.png)")
    p.add_argument("--manifest", required=True, help="manifest.jsonl mapping id -> site")
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("tile", help="slide the evaluation window down a raw scan")
    p.add_argument("--scan", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--tile-size", type=int, default=1728, dest="tile_size")
    p.add_argument("--stride", type=int, default=100)
    p.set_defaults(func=_cmd_tile)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, RuntimeError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
