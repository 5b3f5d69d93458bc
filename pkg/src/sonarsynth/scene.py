"""Scene assembly: mesh loading, acoustic materials, randomized ship placement.

Coordinate frame: x is along-track (sensor travel), y is across-track ground
range (starboard positive), z is up. The seabed is the z=0 plane and the
sensor moves along the line y=0, z=sensor_altitude.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_DEGENERATE_AREA_EPS = 1e-12


@dataclass
class TriangleMesh:
    """Triangle soup in mesh-local coordinates (meters)."""

    vertices: np.ndarray  # (n_v, 3) float64
    triangles: np.ndarray  # (n_t, 3) int32 vertex indices
    name: str = "mesh"
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.shape[0] < 1:
            raise ValueError(f"mesh '{self.name}' has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise ValueError(f"mesh '{self.name}' has out-of-range vertex indices")

    @property
    def triangle_count(self) -> int:
        return int(self.triangles.shape[0])


@dataclass(frozen=True)
class Material:
    """Acoustic surface description; reflectance is the unitless rho in (0, 1]."""

    reflectance: float
    name: str = "default"

    def __post_init__(self):
        if not (0.0 < self.reflectance <= 1.0):
            raise ValueError(f"reflectance must be in (0, 1], got {self.reflectance}")


@dataclass(frozen=True)
class ScenePlacement:
    """One randomized ship instance dropped into the scene."""

    mesh_id: str
    position: tuple[float, float, float]
    yaw: float  # radians in [0, 2*pi)
    scale: float
    material: Material
    pitch: float = 0.0  # nonzero only when full rotation is enabled
    roll: float = 0.0

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class SeabedConfig:
    """Flat z=0 seabed with optional value-noise height perturbation.

    extent_x/extent_y bound the renderable region (ground coordinates);
    placements must keep their bounding box inside.
    """

    extent_x: tuple[float, float] = (0.0, 100.0)
    extent_y: tuple[float, float] = (0.0, 50.0)
    reflectance: float = 0.3
    noise_amplitude: float = 0.0  # meters, 0 disables the heightfield
    noise_scale: float = 4.0  # meters per noise cell
    noise_seed: int = 0

    def __post_init__(self):
        if self.extent_x[0] >= self.extent_x[1] or self.extent_y[0] >= self.extent_y[1]:
            raise ValueError("seabed extent ranges must be ordered (lo < hi)")
        if not (0.0 < self.reflectance <= 1.0):
            raise ValueError("seabed reflectance must be in (0, 1]")
        if self.noise_amplitude < 0.0:
            raise ValueError("noise amplitude must be >= 0")


@dataclass(frozen=True)
class RandomizationRanges:
    """Uniform sampling ranges for placement randomization; lo <= hi everywhere."""

    scale: tuple[float, float] = (2.0, 6.0)
    yaw: tuple[float, float] = (0.0, 2.0 * math.pi)
    position_x: tuple[float, float] = (10.0, 90.0)
    position_y: tuple[float, float] = (10.0, 40.0)
    reflectance: tuple[float, float] = (0.4, 0.9)
    full_rotation: bool = False
    pitch: tuple[float, float] = (-0.3, 0.3)
    roll: tuple[float, float] = (-0.3, 0.3)

    def __post_init__(self):
        for label in ("scale", "yaw", "position_x", "position_y", "reflectance", "pitch", "roll"):
            lo, hi = getattr(self, label)
            if lo > hi:
                raise ValueError(f"range '{label}' is inverted: [{lo}, {hi}]")
        if self.scale[0] <= 0.0:
            raise ValueError("scale range must be positive")
        if not (0.0 < self.reflectance[0] and self.reflectance[1] <= 1.0):
            raise ValueError("reflectance range must lie inside (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationRanges":
        kwargs = {}
        for label in ("scale", "yaw", "position_x", "position_y", "reflectance", "pitch", "roll"):
            if label in d:
                lo, hi = d[label]
                kwargs[label] = (float(lo), float(hi))
        if "full_rotation" in d:
            kwargs["full_rotation"] = bool(d["full_rotation"])
        return cls(**kwargs)


def load_mesh(path: str | os.PathLike, name: str | None = None) -> TriangleMesh:
    """Parse an ASCII OBJ subset (v/f records); polygon faces fan-triangulated.

    Degenerate (zero-area) faces are dropped with a logged warning count.
    Raises FileNotFoundError / ValueError with the offending line number.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face record needs >= 3 vertices")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise ValueError(f"{path}:{lineno}: bad face index '{tok}'") from exc
                    if i == 0:
                        raise ValueError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
                    # negative indices are relative to the current vertex count
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for i in idx:
                    if i < 0 or i >= len(vertices):
                        raise ValueError(
                            f"{path}:{lineno}: face index {i + 1} out of range "
                            f"(have {len(vertices)} vertices)"
                        )
                for k in range(1, len(idx) - 1):  # fan split
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # vn/vt/usemtl and friends are ignored: normals are recomputed per face
    if not vertices:
        raise ValueError(f"{path}: no vertices found")
    if not faces:
        raise ValueError(f"{path}: no faces found")

    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int32)
    areas = _triangle_areas(verts, tris)
    keep = areas > _DEGENERATE_AREA_EPS
    dropped = int((~keep).sum())
    if dropped:
        log.warning("%s: dropped %d degenerate (zero-area) faces", path, dropped)
        tris = tris[keep]
        if tris.shape[0] == 0:
            raise ValueError(f"{path}: all faces degenerate")
    mesh_name = name if name is not None else os.path.splitext(os.path.basename(path))[0]
    return TriangleMesh(vertices=verts, triangles=tris, name=mesh_name, degenerate_dropped=dropped)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _rotation_matrix(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    if pitch == 0.0 and roll == 0.0:
        return rz
    cp, sp = math.cos(pitch), math.sin(pitch)
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    cr, sr = math.cos(roll), math.sin(roll)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def transform_mesh(mesh: TriangleMesh, placement: ScenePlacement) -> np.ndarray:
    """World-space vertices for a placement: scale, rotate, translate, then
    settle so the lowest vertex rests on the seabed (z=0). Triangle count and
    winding are untouched."""
    r = _rotation_matrix(placement.yaw, placement.pitch, placement.roll)
    verts = (placement.scale * (mesh.vertices @ r.T)) + np.asarray(placement.position)
    verts[:, 2] -= verts[:, 2].min()  # wrecks rest on the seabed
    return verts


def randomize_placement(
    mesh: TriangleMesh,
    ranges: RandomizationRanges,
    rng: np.random.Generator,
) -> ScenePlacement:
    """Draw a uniform placement for `mesh` from `ranges`.

    Sampling order is fixed (scale, yaw, x, y, reflectance[, pitch, roll]) so
    a given generator state always yields the same placement.
    """

    def draw(lo: float, hi: float) -> float:
        return float(lo) if lo == hi else float(rng.uniform(lo, hi))

    scale = draw(*ranges.scale)
    yaw = draw(*ranges.yaw) % (2.0 * math.pi)
    x = draw(*ranges.position_x)
    y = draw(*ranges.position_y)
    rho = draw(*ranges.reflectance)
    pitch = roll = 0.0
    if ranges.full_rotation:
        pitch = draw(*ranges.pitch)
        roll = draw(*ranges.roll)
    return ScenePlacement(
        mesh_id=mesh.name,
        position=(x, y, 0.0),
        yaw=yaw,
        scale=scale,
        material=Material(reflectance=rho, name=f"{mesh.name}-hull"),
        pitch=pitch,
        roll=roll,
    )


class Scene:
    """Immutable renderable scene: world-space triangles plus the seabed plane.

    Construction is single-threaded; afterwards the instance only exposes
    read-only arrays, so renderer workers may share it freely.
    """

    def __init__(
        self,
        seabed: SeabedConfig,
        sensor_altitude: float,
        placements: tuple[ScenePlacement, ...],
        tri_v0: np.ndarray,
        tri_v1: np.ndarray,
        tri_v2: np.ndarray,
        tri_reflectance: np.ndarray,
        tri_placement: np.ndarray,
    ):
        self.seabed = seabed
        self.sensor_altitude = float(sensor_altitude)
        self.placements = placements
        self.tri_v0 = tri_v0
        self.tri_v1 = tri_v1
        self.tri_v2 = tri_v2
        self.tri_reflectance = tri_reflectance
        self.tri_placement = tri_placement
        # precompute Moller-Trumbore edges and per-face unit normals
        self.tri_e1 = tri_v1 - tri_v0
        self.tri_e2 = tri_v2 - tri_v0
        normals = np.cross(self.tri_e1, self.tri_e2)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        self.tri_normal = normals / np.maximum(norms, 1e-300)
        self._build_x_index()
        for arr in (
            self.tri_v0, self.tri_v1, self.tri_v2, self.tri_e1, self.tri_e2,
            self.tri_normal, self.tri_reflectance, self.tri_placement,
        ):
            arr.setflags(write=False)

    def _build_x_index(self):
        """Bucket triangles by along-track x so a ping only tests its slab."""
        n = self.triangle_count
        if n == 0:
            self._bucket_lo, self._bucket_w, self._buckets = 0.0, 1.0, []
            return
        xs = np.stack([self.tri_v0[:, 0], self.tri_v1[:, 0], self.tri_v2[:, 0]], axis=1)
        self._tri_xmin = xs.min(axis=1)
        self._tri_xmax = xs.max(axis=1)
        lo, hi = float(self._tri_xmin.min()), float(self._tri_xmax.max())
        n_buckets = int(min(512, max(1, n)))
        width = max((hi - lo) / n_buckets, 1e-9)
        buckets: list[list[int]] = [[] for _ in range(n_buckets)]
        b0 = np.clip(((self._tri_xmin - lo) / width).astype(int), 0, n_buckets - 1)
        b1 = np.clip(((self._tri_xmax - lo) / width).astype(int), 0, n_buckets - 1)
        for i in range(n):
            for b in range(b0[i], b1[i] + 1):
                buckets[b].append(i)
        self._bucket_lo = lo
        self._bucket_w = width
        self._buckets = [np.asarray(b, dtype=np.int64) for b in buckets]

    @property
    def triangle_count(self) -> int:
        return int(self.tri_v0.shape[0])

    def candidates_for_x(self, x: float) -> np.ndarray:
        """Indices of triangles whose x-slab contains the ping plane x."""
        if self.triangle_count == 0:
            return np.empty(0, dtype=np.int64)
        b = int((x - self._bucket_lo) / self._bucket_w)
        if b < 0 or b >= len(self._buckets):
            return np.empty(0, dtype=np.int64)
        cand = self._buckets[b]
        if cand.size == 0:
            return cand
        keep = (self._tri_xmin[cand] <= x) & (self._tri_xmax[cand] >= x)
        return cand[keep]

    def seabed_height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Seabed height z(x, y); zero when noise is disabled."""
        if self.seabed.noise_amplitude == 0.0:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        return value_noise(
            np.asarray(x, dtype=np.float64) / self.seabed.noise_scale,
            np.asarray(y, dtype=np.float64) / self.seabed.noise_scale,
            self.seabed.noise_seed,
        ) * self.seabed.noise_amplitude

    def to_json(self) -> str:
        """Deterministic debug dump; identical scenes serialize identically."""
        tri_bytes = b"".join(
            np.ascontiguousarray(a, dtype=np.float64).tobytes()
            for a in (self.tri_v0, self.tri_v1, self.tri_v2)
        )
        doc = {
            "sensor_altitude": self.sensor_altitude,
            "seabed": {
                "extent_x": list(self.seabed.extent_x),
                "extent_y": list(self.seabed.extent_y),
                "reflectance": self.seabed.reflectance,
                "noise_amplitude": self.seabed.noise_amplitude,
                "noise_scale": self.seabed.noise_scale,
                "noise_seed": self.seabed.noise_seed,
            },
            "placements": [
                {
                    "mesh": p.mesh_id,
                    "position": list(p.position),
                    "yaw": p.yaw,
                    "pitch": p.pitch,
                    "roll": p.roll,
                    "scale": p.scale,
                    "reflectance": p.material.reflectance,
                }
                for p in self.placements
            ],
            "triangle_count": self.triangle_count,
            "geometry_sha256": hashlib.sha256(tri_bytes).hexdigest(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def build_scene(
    seabed: SeabedConfig,
    placements: list[ScenePlacement] | tuple[ScenePlacement, ...],
    meshes: dict[str, TriangleMesh],
    sensor_altitude: float = 10.0,
) -> Scene:
    """Transform placements into world space and build the render-ready scene.

    Raises ValueError when a placement's bounding box leaves the seabed extent
    or an object reaches the sensor altitude.
    """
    v0s, v1s, v2s, rhos, pids = [], [], [], [], []
    for pi, placement in enumerate(placements):
        mesh = meshes.get(placement.mesh_id)
        if mesh is None:
            raise ValueError(f"placement {pi} references unknown mesh '{placement.mesh_id}'")
        verts = transform_mesh(mesh, placement)
        bb_lo, bb_hi = verts.min(axis=0), verts.max(axis=0)
        if (
            bb_lo[0] < seabed.extent_x[0] or bb_hi[0] > seabed.extent_x[1]
            or bb_lo[1] < seabed.extent_y[0] or bb_hi[1] > seabed.extent_y[1]
        ):
            raise ValueError(
                f"placement {pi} ('{placement.mesh_id}') bounding box "
                f"[{bb_lo[:2]}, {bb_hi[:2]}] lies outside the ensonified swath"
            )
        if bb_hi[2] >= sensor_altitude:
            raise ValueError(
                f"placement {pi} height {bb_hi[2]:.2f} m reaches sensor altitude "
                f"{sensor_altitude:.2f} m"
            )
        tris = mesh.triangles
        v0s.append(verts[tris[:, 0]])
        v1s.append(verts[tris[:, 1]])
        v2s.append(verts[tris[:, 2]])
        rhos.append(np.full(len(tris), placement.material.reflectance))
        pids.append(np.full(len(tris), pi, dtype=np.int32))
    if v0s:
        tri_v0 = np.concatenate(v0s)
        tri_v1 = np.concatenate(v1s)
        tri_v2 = np.concatenate(v2s)
        tri_rho = np.concatenate(rhos)
        tri_pid = np.concatenate(pids)
    else:
        tri_v0 = np.empty((0, 3))
        tri_v1 = np.empty((0, 3))
        tri_v2 = np.empty((0, 3))
        tri_rho = np.empty(0)
        tri_pid = np.empty(0, dtype=np.int32)
    return Scene(
        seabed=seabed,
        sensor_altitude=sensor_altitude,
        placements=tuple(placements),
        tri_v0=tri_v0,
        tri_v1=tri_v1,
        tri_v2=tri_v2,
        tri_reflectance=tri_rho,
        tri_placement=tri_pid,
    )


# --- deterministic value noise (seabed micro-relief) -----------------------

_P1 = np.int64(73856093)
_P2 = np.int64(19349663)
_P3 = np.int64(83492791)


def _lattice_hash(xi: np.ndarray, yi: np.ndarray, seed: int) -> np.ndarray:
    """Integer lattice hash in [0, 1); pure function of (xi, yi, seed)."""
    with np.errstate(over="ignore"):
        h = xi.astype(np.int64) * _P1
        h = h ^ (yi.astype(np.int64) * _P2)
        h = h ^ (np.int64(seed) * _P3)
        h ^= h >> np.int64(16)
        h *= np.int64(0x85EBCA6B)
        h ^= h >> np.int64(13)
        h *= np.int64(0xC2B2AE35)
        h ^= h >> np.int64(16)
    return (h & np.int64(0xFFFFFF)).astype(np.float64) / float(0x1000000)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Smoothstep-interpolated value noise in [-1, 1] on unit lattice cells."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    fx = x - xi
    fy = y - yi
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    h00 = _lattice_hash(xi, yi, seed)
    h10 = _lattice_hash(xi + 1, yi, seed)
    h01 = _lattice_hash(xi, yi + 1, seed)
    h11 = _lattice_hash(xi + 1, yi + 1, seed)
    top = h00 + sx * (h10 - h00)
    bot = h01 + sx * (h11 - h01)
    return 2.0 * (top + sy * (bot - top)) - 1.0
