import math

import numpy as np
import pytest
from scipy import ndimage

from gmmexplore.cave import Environment, MeshFormatError, generate_cave, load_ply, save_ply
from gmmexplore.occupancy import Aabb
from gmmexplore.render import MISS_EPS, MeshRaycaster, SimSensor, cast_exhaustive, render_observation
from gmmexplore.transforms import Pose
from oracles import moller_trumbore_all


@pytest.fixture(scope="module")
def cave():
    return generate_cave(0)


def random_soup(rng, n):
    c = rng.uniform(-4, 4, (n, 1, 3))
    return c + rng.normal(0, 0.6, (n, 3, 3))


def unit_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def assert_same_hits(got, ref, tol=1e-9):
    assert np.array_equal(np.isinf(got), np.isinf(ref))
    fin = np.isfinite(ref)
    assert np.allclose(got[fin], ref[fin], rtol=0, atol=tol)


# ---------------------------------------------------------------- ray casting


@pytest.mark.parametrize("seed", range(6))
def test_raycaster_matches_brute_force_random_soup(seed):
    rng = np.random.default_rng(seed)
    tri = random_soup(rng, int(rng.integers(1, 300)))
    origin = rng.uniform(-3, 3, 3)
    dirs = unit_dirs(rng, 500)
    caster = MeshRaycaster(tri, cell=float(rng.uniform(0.1, 1.0)))
    ref = moller_trumbore_all(tri, origin, dirs)
    ref[ref > 20] = np.inf
    assert_same_hits(caster.cast(origin, dirs, 20.0), ref)


def test_raycaster_matches_brute_force_cave(cave):
    rng = np.random.default_rng(7)
    caster = MeshRaycaster(cave.triangles)
    dirs = unit_dirs(rng, 400)
    for origin in cave.start_positions:
        ref = moller_trumbore_all(cave.triangles, origin, dirs)
        ref[ref > 5.0] = np.inf
        got = caster.cast(origin, dirs, 5.0)
        assert_same_hits(got, ref)
        # the in-package exhaustive scan agrees bitwise with the accelerated cast
        ex = cast_exhaustive(cave.triangles, origin, dirs)
        ex[ex > 5.0] = np.inf
        assert np.array_equal(got, ex)


def test_flat_wall_depth():
    wall = np.array([[[2, -10, -10], [2, 10, -10], [2, 0, 10]]], float)
    sensor = SimSensor("depth", width=16, height=12)
    obs = render_observation(MeshRaycaster(wall), Pose.from_xyz_yaw(0, 0, 0), sensor, noise=False)
    assert np.allclose(obs.points[:, 0], 2.0, atol=1e-12)
    assert obs.points.shape == (16 * 12, 3)


def test_empty_scene_all_free():
    sensor = SimSensor("lidar", n_az=36, el_step_deg=10)
    obs = render_observation(MeshRaycaster(np.zeros((0, 3, 3))), Pose.from_xyz_yaw(1, 1, 1), sensor)
    r = np.linalg.norm(obs.points, axis=1)
    assert np.allclose(r, 5.0 + MISS_EPS)
    assert len(r) == 36 * sensor.n_el


def test_render_noise_model():
    wall = np.array([[[3, -50, -50], [3, 50, -50], [3, 0, 50]]], float)
    sensor = SimSensor("depth")
    a = render_observation(MeshRaycaster(wall), Pose.from_xyz_yaw(0, 0, 0), sensor, seed=4)
    b = render_observation(MeshRaycaster(wall), Pose.from_xyz_yaw(0, 0, 0), sensor, seed=4)
    clean = render_observation(MeshRaycaster(wall), Pose.from_xyz_yaw(0, 0, 0), sensor, noise=False)
    assert np.array_equal(a.points, b.points)
    rel = np.linalg.norm(a.points, axis=1) / np.linalg.norm(clean.points, axis=1) - 1
    # range noise with 1% relative standard deviation
    assert abs(rel.mean()) < 4 * 0.01 / math.sqrt(len(rel))
    assert abs(rel.std() - 0.01) < 0.001


def test_render_outside_bounds_rejected(cave):
    with pytest.raises(ValueError, match="outside"):
        render_observation(MeshRaycaster(cave.triangles), Pose.from_xyz_yaw(-1, 5, 2), SimSensor(),
                           bounds=cave.bounds)


def test_sensor_directions():
    lidar = SimSensor("lidar")
    assert lidar.n_el == 31 and lidar.directions().shape == (360 * 31, 3)
    depth = SimSensor("depth").directions()
    assert np.allclose(np.linalg.norm(depth, axis=1), 1.0)
    assert np.all(depth[:, 0] > 0)
    half_h = np.max(np.abs(np.arctan2(depth[:, 1], depth[:, 0])))
    assert half_h < math.radians(87) / 2
    with pytest.raises(ValueError):
        SimSensor("sonar")


# ---------------------------------------------------------------- cave


def test_cave_deterministic(cave):
    again = generate_cave(0)
    assert again.mesh_hash() == cave.mesh_hash()
    assert generate_cave(1).mesh_hash() != cave.mesh_hash()


def test_cave_shape(cave):
    assert np.allclose(cave.bounds.min, 0) and np.allclose(cave.bounds.max, [20, 20, 4])
    v = cave.vertices
    assert np.all(v >= 0) and np.all(v <= [20, 20, 4])
    assert len(cave.start_positions) == 4


def test_cave_free_space_connected(cave):
    free = cave.free_mask
    labels, n = ndimage.label(free)
    sizes = np.bincount(labels.ravel())[1:]
    assert sizes.max() / free.sum() >= 0.95
    idx = np.floor(cave.start_positions / cave.lattice).astype(int)
    start_labels = {int(labels[tuple(i)]) for i in idx}
    assert start_labels == {1 + int(np.argmax(sizes))}


def test_cave_starts_clear_of_walls(cave):
    caster = MeshRaycaster(cave.triangles)
    dirs = unit_dirs(np.random.default_rng(0), 2000)
    for s in cave.start_positions:
        t = caster.cast(s, dirs, 5.0)
        assert np.min(t) > 0.8


def test_ply_roundtrip(cave, tmp_path):
    path = tmp_path / "cave.ply"
    save_ply(cave, path)
    back = load_ply(path)
    assert back.mesh_hash() == cave.mesh_hash()
    assert np.array_equal(back.start_positions, cave.start_positions)
    assert np.array_equal(back.bounds.min, cave.bounds.min)
    assert np.array_equal(back.bounds.max, cave.bounds.max)


def tiny_env():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    return Environment(v, np.array([[0, 1, 2]]), Aabb([0, 0, 0], [1, 1, 1]), np.array([[0.2, 0.2, 0.5]]))


@pytest.mark.parametrize("mutate, msg", [
    (lambda s: s.replace("ply\n", "plx\n", 1), "not a PLY"),
    (lambda s: s.replace("end_header\n", ""), "end_header"),
    (lambda s: s.replace("format ascii 1.0", "format binary_little_endian 1.0"), "ASCII"),
    (lambda s: s.replace("element face 1", "element face 2"), "bad vertex/face"),
    (lambda s: s.replace("\n3 0 1 2", "\n3 0 1 9"), "out of range"),
    (lambda s: s.replace("\n3 0 1 2", "\n4 0 1 2 0"), "triangular"),
    (lambda s: s.replace("element vertex 3\n", ""), "missing vertex"),
])
def test_malformed_ply(tmp_path, mutate, msg):
    path = tmp_path / "m.ply"
    save_ply(tiny_env(), path)
    path.write_text(mutate(path.read_text()))
    with pytest.raises(MeshFormatError, match=msg):
        load_ply(path)
