import os

import numpy as np
import pytest

from sonarsynth import pngio
from sonarsynth.scene import TriangleMesh, value_noise

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""

_CUBE_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
    ],
    dtype=np.int32,
)


def box_mesh(dx: float, dy: float, dz: float, name: str = "box") -> TriangleMesh:
    """Axis-aligned box with one corner at the origin."""
    verts = np.array(
        [
            [0, 0, 0], [dx, 0, 0], [dx, dy, 0], [0, dy, 0],
            [0, 0, dz], [dx, 0, dz], [dx, dy, dz], [0, dy, dz],
        ],
        dtype=np.float64,
    )
    return TriangleMesh(vertices=verts, triangles=_CUBE_FACES.copy(), name=name)


def unit_cube() -> TriangleMesh:
    return box_mesh(1.0, 1.0, 1.0, name="cube")


def procedural_terrain(size: int, seed: int) -> np.ndarray:
    """Seeded multi-octave value-noise texture that reads like sonar backscatter."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = (
        value_noise(xs / 12.0, ys / 12.0, seed=seed) * 30.0
        + value_noise(xs / 3.0, ys / 3.0, seed=seed + 1000) * 12.0
        + 110.0
    )
    return np.clip(img, 0, 255).astype(np.uint8)


@pytest.fixture
def cube_obj_path(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    return str(path)


@pytest.fixture
def terrain_dir(tmp_path):
    """Three 300x300 procedural terrain tiles (three sites)."""
    d = tmp_path / "terrain"
    d.mkdir()
    for k in range(3):
        pngio.write_gray(str(d / f"site{k}.png"), procedural_terrain(300, seed=100 + k))
    return str(d)


def write_assets(root, terrain_size=120, n_terrain=3):
    """Cube mesh + terrain tiles under `root`; returns (mesh_dir, terrain_dir)."""
    mesh_dir = os.path.join(root, "meshes")
    os.makedirs(mesh_dir, exist_ok=True)
    with open(os.path.join(mesh_dir, "cube.obj"), "w") as fh:
        fh.write(CUBE_OBJ)
    terr_dir = os.path.join(root, "terrain")
    os.makedirs(terr_dir, exist_ok=True)
    for k in range(n_terrain):
        pngio.write_gray(
            os.path.join(terr_dir, f"site{k}.png"), procedural_terrain(terrain_size, seed=100 + k)
        )
    return mesh_dir, terr_dir


def small_pipeline_dict(mesh_dir, terrain_dir, out_dir, samples=4, size=64, seed=11):
    """A fast 64x64 pipeline config exercising every stage."""
    return {
        "samples": samples,
        "image_size": [size, size],
        "sonar": {
            "source_level": 120.0,
            "rays_per_ping": 4 * size,
            "max_slant_range": 50.0,
            "along_track_spacing": 51.2 / size,
        },
        "ranges": {
            "scale": [3.0, 7.0],
            "position_x": [12.0, 39.0],
            "position_y": [15.0, 38.0],
            "reflectance": [0.5, 0.9],
        },
        "mesh_dir": mesh_dir,
        "terrain_dir": terrain_dir,
        "output_dir": out_dir,
        "master_seed": seed,
    }


@pytest.fixture
def pipeline_dict(tmp_path):
    mesh_dir, terr_dir = write_assets(str(tmp_path))
    return small_pipeline_dict(mesh_dir, terr_dir, str(tmp_path / "ds"))
