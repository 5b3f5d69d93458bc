"""End-to-end dataset generation: render, fracture, composite, export.

Every sample is a pure function of (config, index): per-sample seeds come
from a stable split hash of the master seed, so generation is reproducible
byte-for-byte for any worker count and across runs. Train/val membership is
assigned by ranking a per-id hash, which pins the exact round(N * fraction)
split sizes while staying independent of generation order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sonarsynth import pngio
from sonarsynth.compositor import (
    CompositeOptions,
    SyntheticSample,
    TerrainLibrary,
    TerrainTile,
    composite,
    load_terrain_library,
)
from sonarsynth.deformation import (
    DeformParams,
    apply_field,
    generate_quadrant_field,
    identity_field,
    write_deff,
)
from sonarsynth.render import SonarParams, render_scan
from sonarsynth.scene import (
    RandomizationRanges,
    SeabedConfig,
    TriangleMesh,
    build_scene,
    load_mesh,
    randomize_placement,
)

log = logging.getLogger(__name__)


def stable_u64(*parts) -> int:
    """Stable 64-bit hash of the given parts (sha256-based, platform independent)."""
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample seed; no shared RNG state between samples."""
    return stable_u64(master_seed, "sample", index)


@dataclass
class PipelineConfig:
    samples: int = 10
    image_size: tuple[int, int] = (1728, 1728)  # (H, W)
    split_fraction: float = 0.8
    real_terrain: bool = True  # RT toggle
    ship_fracturing: bool = True  # SF toggle
    sensor_altitude: float = 10.0
    sonar: SonarParams = field(default_factory=SonarParams)
    deform: DeformParams | None = None  # default r_max = 0.15 * min(H, W)
    ranges: RandomizationRanges = field(default_factory=RandomizationRanges)
    seabed: SeabedConfig | None = None  # default extent derived from sonar geometry
    composite_opts: CompositeOptions = field(default_factory=CompositeOptions)
    mesh_dir: str = "meshes"
    terrain_dir: str = "terrain"
    output_dir: str = "dataset"
    master_seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not (0.0 < self.split_fraction < 1.0):
            raise ValueError("split_fraction must be in (0, 1)")
        h, w = self.image_size
        # the waterfall geometry is dictated by the requested image size; a
        # two-sided scan spends half the columns on each side
        if self.sonar.two_sided and w % 2:
            raise ValueError("two-sided scans need an even image width")
        bins = w // 2 if self.sonar.two_sided else w
        if self.sonar.pings != h or self.sonar.range_bins != bins:
            self.sonar = SonarParams(
                source_level=self.sonar.source_level,
                rays_per_ping=self.sonar.rays_per_ping,
                range_bins=bins,
                max_slant_range=self.sonar.max_slant_range,
                db_window=self.sonar.db_window,
                pings=h,
                along_track_spacing=self.sonar.along_track_spacing,
                speckle=self.sonar.speckle,
                two_sided=self.sonar.two_sided,
            )
        if self.deform is None:
            self.deform = DeformParams.for_image(h, w)
        if self.seabed is None:
            ground_max = math.sqrt(
                max(self.sonar.max_slant_range**2 - self.sensor_altitude**2, 1.0)
            )
            ground_min = -ground_max if self.sonar.two_sided else 0.0
            self.seabed = SeabedConfig(
                extent_x=(0.0, self.sonar.pings * self.sonar.along_track_spacing),
                extent_y=(ground_min, ground_max),
            )

    _KNOWN_KEYS = frozenset(
        {
            "samples", "image_size", "split_fraction", "toggles", "sensor_altitude",
            "sonar", "deform", "ranges", "seabed", "composite",
            "mesh_dir", "terrain_dir", "output_dir", "master_seed",
        }
    )

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - cls._KNOWN_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key in (
            "samples", "split_fraction", "sensor_altitude",
            "mesh_dir", "terrain_dir", "output_dir", "master_seed",
        ):
            if key in d:
                kwargs[key] = d[key]
        if "image_size" in d:
            kwargs["image_size"] = tuple(int(v) for v in d["image_size"])
        toggles = d.get("toggles", {})
        if "RT" in toggles:
            kwargs["real_terrain"] = bool(toggles["RT"])
        if "SF" in toggles:
            kwargs["ship_fracturing"] = bool(toggles["SF"])
        sonar_kwargs = dict(d.get("sonar", {}))
        sonar_kwargs.pop("pings", None)  # image_size wins
        sonar_kwargs.pop("range_bins", None)
        if "image_size" in d or sonar_kwargs:
            h, w = kwargs.get("image_size", (1728, 1728))
            kwargs["sonar"] = SonarParams.from_dict({**sonar_kwargs, "pings": h, "range_bins": w})
        if "deform" in d:
            kwargs["deform"] = DeformParams.from_dict(d["deform"])
        if "ranges" in d:
            kwargs["ranges"] = RandomizationRanges.from_dict(d["ranges"])
        if "seabed" in d:
            sb = dict(d["seabed"])
            for key in ("extent_x", "extent_y"):
                if key in sb:
                    sb[key] = tuple(float(v) for v in sb[key])
            kwargs["seabed"] = SeabedConfig(**sb)
        if "composite" in d:
            kwargs["composite_opts"] = CompositeOptions.from_dict(d["composite"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self, include_output_dir: bool = True) -> dict:
        d = {
            "samples": self.samples,
            "image_size": list(self.image_size),
            "split_fraction": self.split_fraction,
            "toggles": {"RT": self.real_terrain, "SF": self.ship_fracturing},
            "sensor_altitude": self.sensor_altitude,
            "sonar": {
                "source_level": self.sonar.source_level,
                "rays_per_ping": self.sonar.rays_per_ping,
                "range_bins": self.sonar.range_bins,
                "max_slant_range": self.sonar.max_slant_range,
                "db_window": list(self.sonar.db_window),
                "pings": self.sonar.pings,
                "along_track_spacing": self.sonar.along_track_spacing,
                "speckle": self.sonar.speckle,
                "two_sided": self.sonar.two_sided,
            },
            "deform": {
                "n_r": self.deform.n_r,
                "n_theta": self.deform.n_theta,
                "r_max": self.deform.r_max,
            },
            "ranges": {
                "scale": list(self.ranges.scale),
                "yaw": list(self.ranges.yaw),
                "position_x": list(self.ranges.position_x),
                "position_y": list(self.ranges.position_y),
                "reflectance": list(self.ranges.reflectance),
                "full_rotation": self.ranges.full_rotation,
            },
            "seabed": {
                "extent_x": list(self.seabed.extent_x),
                "extent_y": list(self.seabed.extent_y),
                "reflectance": self.seabed.reflectance,
                "noise_amplitude": self.seabed.noise_amplitude,
                "noise_scale": self.seabed.noise_scale,
                "noise_seed": self.seabed.noise_seed,
            },
            "composite": {
                "shadow_gain": self.composite_opts.shadow_gain,
                "feather": self.composite_opts.feather,
                "histogram_match": self.composite_opts.histogram_match,
            },
            "mesh_dir": self.mesh_dir,
            "terrain_dir": self.terrain_dir,
            "master_seed": self.master_seed,
        }
        if include_output_dir:
            d["output_dir"] = self.output_dir
        return d


@dataclass
class Manifest:
    records: list[dict]
    failures: list[tuple[int, str]]
    path: str


class _Assets:
    """Meshes and terrain loaded once and shared across sample generation."""

    def __init__(self, config: PipelineConfig):
        mesh_files = sorted(
            f for f in os.listdir(config.mesh_dir) if f.lower().endswith(".obj")
        )
        if not mesh_files:
            raise ValueError(f"no .obj meshes found in {config.mesh_dir}")
        self.meshes: dict[str, TriangleMesh] = {}
        self.mesh_order: list[str] = []
        for f in mesh_files:
            mesh = load_mesh(os.path.join(config.mesh_dir, f))
            self.meshes[mesh.name] = mesh
            self.mesh_order.append(mesh.name)
        self.terrain: TerrainLibrary | None = None
        if config.real_terrain:
            self.terrain = load_terrain_library(config.terrain_dir, config.image_size)


def _background_tile(config: PipelineConfig, speckle_seed: int) -> TerrainTile:
    """RT-off background: a terrain-only render with the sample's speckle seed,
    so toggling RT changes nothing under the pasted ship."""
    empty = build_scene(config.seabed, [], {}, sensor_altitude=config.sensor_altitude)
    img, _, _ = render_scan(empty, config.sonar, seed=speckle_seed)
    return TerrainTile(image=img, source_id="rendered-seabed", site="simulated")


def scene_for_sample(config: PipelineConfig, index: int, assets: _Assets | None = None):
    """Seeded mesh pick + placement + scene for one sample index.

    Returns (scene, mesh_name, seed, speckle_seed); shared by the full
    generation path and the standalone render CLI so both see the same scene.
    """
    if assets is None:
        assets = _Assets(config)
    seed = sample_seed(config.master_seed, index)
    rng_place = np.random.default_rng(stable_u64(seed, "placement"))
    mesh_name = assets.mesh_order[int(rng_place.integers(0, len(assets.mesh_order)))]
    placement = randomize_placement(assets.meshes[mesh_name], config.ranges, rng_place)
    scene = build_scene(
        config.seabed, [placement], assets.meshes, sensor_altitude=config.sensor_altitude
    )
    return scene, mesh_name, seed, stable_u64(seed, "speckle")


def generate_sample(
    config: PipelineConfig,
    index: int,
    assets: _Assets | None = None,
    write: bool = True,
) -> tuple[SyntheticSample, dict]:
    """Generate (and optionally write) one sample; returns it with its record.

    Stages: randomize placement -> render scan -> quadrant field (identity
    when SF is off or the ship rendered no pixels) -> forward warp ->
    composite onto terrain (rendered seabed when RT is off).
    """
    if assets is None:
        assets = _Assets(config)
    scene, mesh_name, seed, speckle_seed = scene_for_sample(config, index, assets)
    rng_field = np.random.default_rng(stable_u64(seed, "field"))
    rng_terrain = np.random.default_rng(stable_u64(seed, "terrain"))
    image, mask, shadow = render_scan(scene, config.sonar, seed=speckle_seed)

    if config.ship_fracturing and mask.any():
        def_field = generate_quadrant_field(mask, config.deform, rng_field)
    else:
        def_field = identity_field(mask.shape, config.deform)
    i_f, m_f, shadow_f = apply_field(image, mask, shadow, def_field)

    if config.real_terrain:
        tile = assets.terrain.sample(rng_terrain)
    else:
        tile = _background_tile(config, speckle_seed)

    sample_id = f"s{index:06d}"
    provenance = {
        "mesh": mesh_name,
        "terrain": tile.source_id,
        "sample_seed": seed,
        "rt": config.real_terrain,
        "sf": config.ship_fracturing,
    }
    sample = composite(
        i_f, m_f, shadow_f, tile, config.composite_opts,
        deform_field=def_field, provenance=provenance,
    )

    record = {
        "id": sample_id,
        "image": f"images/{sample_id}.png",
        "mask": f"masks/{sample_id}.png",
        "deff": f"deff/{sample_id}.deff",
        "site": tile.site or tile.source_id,
        "provenance": provenance,
    }
    if write:
        out = config.output_dir
        pngio.write_gray(os.path.join(out, record["image"]), sample.image)
        pngio.write_mask(os.path.join(out, record["mask"]), sample.mask)
        write_deff(os.path.join(out, record["deff"]), def_field)
    return sample, record


def assign_splits(records: list[dict], config: PipelineConfig) -> None:
    """Rank ids by a stable per-id hash; the top round(N * fraction) are train."""
    ids = [r["id"] for r in records]
    keyed = sorted(ids, key=lambda i: (stable_u64(config.master_seed, "split", i), i))
    n_train = int(math.floor(len(ids) * config.split_fraction + 0.5))
    train_ids = set(keyed[:n_train])
    for r in records:
        r["split"] = "train" if r["id"] in train_ids else "val"


_WORKER: dict = {}


def _init_worker(config_json: str) -> None:
    cfg = PipelineConfig.from_dict(json.loads(config_json))
    _WORKER["config"] = cfg
    _WORKER["assets"] = _Assets(cfg)


def _run_index(index: int):
    try:
        _, record = generate_sample(_WORKER["config"], index, _WORKER["assets"])
        return index, record, None
    except Exception as exc:  # recorded; the run aborts if >1% fail
        return index, None, f"{type(exc).__name__}: {exc}"


def generate_dataset(config: PipelineConfig, workers: int = 1) -> Manifest:
    """Generate all samples, assign splits, and write manifest.jsonl.

    Sample generation is embarrassingly parallel; records are assembled in
    index order so the manifest bytes never depend on scheduling. The run
    aborts when more than 1% of samples fail.
    """
    out = config.output_dir
    for sub in ("images", "masks", "deff"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)

    results: list[tuple[int, dict | None, str | None]] = []
    if workers <= 1:
        assets = _Assets(config)
        for i in range(config.samples):
            try:
                _, record = generate_sample(config, i, assets)
                results.append((i, record, None))
            except Exception as exc:
                results.append((i, None, f"{type(exc).__name__}: {exc}"))
    else:
        cfg_json = json.dumps(config.to_dict())
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(cfg_json,)
        ) as pool:
            chunk = max(1, config.samples // (workers * 4))
            results = list(pool.map(_run_index, range(config.samples), chunksize=chunk))

    results.sort(key=lambda t: t[0])
    records = [r for _, r, err in results if err is None]
    failures = [(i, err) for i, _, err in results if err is not None]
    for i, err in failures:
        log.error("sample %d failed: %s", i, err)
    if len(failures) > max(1, config.samples // 100):
        raise RuntimeError(
            f"{len(failures)} of {config.samples} samples failed (>1%); aborting"
        )

    assign_splits(records, config)
    manifest_path = os.path.join(out, "manifest.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(include_output_dir=False), fh, indent=2, sort_keys=True)
    return Manifest(records=records, failures=failures, path=manifest_path)


def read_manifest(path: str | os.PathLike) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
