import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmmexplore.gmm import (
    EPS_COV,
    DepthObservation,
    Gmm,
    ObservationModel,
    SensorIntrinsics,
    fit_em,
    fit_free_space,
    fit_observation,
    floor_covariances,
    merge_gmms,
    sample,
    split_observation,
)
from gmmexplore.transforms import Pose
from oracles import mixture_pdf

CAM = SensorIntrinsics(80, 60, math.radians(87), math.radians(58))
PANO = SensorIntrinsics(360, 31, 2 * math.pi, math.radians(60))


def _obs(points, intr=CAM, pose=None):
    return DepthObservation(pose or Pose.from_xyz_yaw(0, 0, 0), points, intr)


def random_gmm(rng, m, support=None):
    w = rng.dirichlet(np.ones(m))
    mu = rng.normal(0, 3, (m, 3))
    a = rng.normal(0, 0.5, (m, 3, 3))
    cov = a @ np.swapaxes(a, 1, 2) + 0.01 * np.eye(3)
    return Gmm(w, mu, cov, support or int(rng.integers(1, 5000)))


def check_valid(g: Gmm, eps=EPS_COV):
    assert abs(g.weights.sum() - 1.0) <= 1e-9
    assert np.all((g.weights >= 0) & (g.weights <= 1))
    assert np.all(np.linalg.eigvalsh(g.covariances) >= eps)
    assert np.allclose(g.covariances, np.swapaxes(g.covariances, 1, 2), atol=0)


# ---------------------------------------------------------------- split


def test_split_example():
    occ, free = split_observation(_obs([[1, 0, 0], [7, 0, 0]]), ObservationModel(max_range=5))
    assert np.array_equal(occ, [[1, 0, 0]])
    assert np.allclose(free, [[5, 0, 0]])


def test_split_all_in_range():
    d = np.random.default_rng(0).normal(size=(50, 3))
    pts = 4.0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    occ, free = split_observation(_obs(pts), ObservationModel(max_range=5))
    assert len(occ) == 50 and len(free) == 0


def test_split_empty():
    occ, free = split_observation(_obs(np.zeros((0, 3))), ObservationModel())
    assert occ.shape == (0, 3) and free.shape == (0, 3)


@given(st.lists(st.tuples(*[st.floats(-20, 20)] * 3), max_size=60), st.floats(0.5, 10))
def test_split_totality(points, r_d):
    pts = np.array(points, float).reshape(-1, 3)
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-6]
    occ, free = split_observation(_obs(pts), ObservationModel(max_range=r_d))
    assert len(occ) + len(free) == len(pts)
    assert np.all(np.linalg.norm(occ, axis=1) < r_d)
    assert np.allclose(np.linalg.norm(free, axis=1), r_d)


# ---------------------------------------------------------------- EM


def two_clusters(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 0.1, (100, 3))
    b = rng.normal(10, 0.1, (100, 3))
    return a, b


def test_em_two_cluster_recovery():
    a, b = two_clusters(3)
    g = fit_em(np.vstack([a, b]), 2, seed=11)
    # oracle: centroids of the labeled populations
    truth = np.array([a.mean(axis=0), b.mean(axis=0)])
    order = np.argsort(g.means[:, 0])
    assert np.all(np.linalg.norm(g.means[order] - truth, axis=1) < 0.1)
    assert np.all(np.abs(g.weights - 0.5) < 0.05)
    check_valid(g)


def test_em_degenerate_cluster():
    g = fit_em(np.tile([1.0, 2.0, 3.0], (50, 1)), 1, seed=0)
    assert len(g) == 1
    assert np.allclose(g.means[0], [1, 2, 3], atol=0)
    assert np.allclose(g.covariances[0], EPS_COV * np.eye(3), rtol=1e-6, atol=0)
    assert g.weights[0] == 1.0
    check_valid(g)


def test_em_insufficient_support():
    with pytest.raises(ValueError, match="insufficient support"):
        fit_em(np.zeros((3, 3)), 4)


@pytest.mark.parametrize("seed", range(10))
def test_em_loglik_monotone(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    pts = np.vstack([rng.normal(rng.uniform(-5, 5, 3), rng.uniform(0.05, 1.0), (60, 3)) for _ in range(k)])
    g, trace = fit_em(pts, int(rng.integers(1, 12)), seed=seed, return_trace=True)
    assert np.all(np.diff(trace) >= -1e-9)
    check_valid(g)


def test_em_deterministic():
    pts = np.random.default_rng(1).normal(size=(300, 3))
    g1 = fit_em(pts, 5, seed=[4, 2])
    g2 = fit_em(pts, 5, seed=[4, 2])
    assert np.array_equal(g1.means, g2.means) and np.array_equal(g1.covariances, g2.covariances)


def test_em_gate_excludes_far_influence():
    # a single far outlier cannot drag a tight component when gated
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.normal(0, 0.05, (200, 3)), [[50.0, 50.0, 50.0]]])
    g = fit_em(pts, 1, gate=5.0, seed=0)
    assert np.linalg.norm(g.means[0]) < 0.02
    assert g.support_size == len(pts)


def test_coplanar_points_respect_floor():
    rng = np.random.default_rng(5)
    pts = np.column_stack([rng.uniform(0, 1, 400), rng.uniform(0, 1, 400), np.zeros(400)])
    g = fit_em(pts, 8, seed=1)
    check_valid(g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_floor_covariances_property(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 3, 2))  # rank-deficient
    c = floor_covariances(a @ np.swapaxes(a, 1, 2))
    assert np.all(np.linalg.eigvalsh(c) >= EPS_COV)


# ---------------------------------------------------------------- free space


def test_free_space_single_window():
    model = ObservationModel(free_window_grid=(1, 1))
    rng = np.random.default_rng(0)
    d = np.column_stack([np.ones(200), rng.uniform(-0.3, 0.3, 200), rng.uniform(-0.3, 0.3, 200)])
    free = 5.0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    g = fit_free_space(free, _obs(free * 1.5), model)
    assert len(g) == 2 and g.support_size == 200
    check_valid(g)


def test_free_space_windows_bound():
    model = ObservationModel()
    rng = np.random.default_rng(1)
    tx, ty = math.tan(CAM.h_fov / 2), math.tan(CAM.v_fov / 2)
    d = np.column_stack([np.ones(2000), rng.uniform(-tx, tx, 2000), rng.uniform(-ty, ty, 2000)])
    free = 5.0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    g = fit_free_space(free, _obs(free), model)
    rows, cols = model.free_window_grid
    assert len(g) <= model.n_free * rows * cols
    assert g.support_size == 2000
    check_valid(g)


def test_free_space_empty():
    g = fit_free_space(np.zeros((0, 3)), _obs(np.zeros((0, 3))), ObservationModel())
    assert g.is_empty and g.support_size == 0


def test_fit_observation_world_frame():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(3000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = np.where(rng.random(3000) < 0.6, rng.uniform(1, 4, 3000), 5.001)
    pose = Pose.from_xyz_yaw(3, -2, 1, 0.7)
    occ, free = fit_observation(_obs(d * r[:, None], PANO, pose), ObservationModel(), seed=9)
    check_valid(occ)
    check_valid(free)
    # free means sit on the max-range sphere around the sensor origin
    assert np.allclose(np.linalg.norm(free.means - [3, -2, 1], axis=1), 5.0, atol=0.5)
    assert occ.support_size + free.support_size == 3000


# ---------------------------------------------------------------- merge


def test_merge_symmetric_example():
    half = Gmm([0.5, 0.5], [[0, 0, 0], [1, 1, 1]], [np.eye(3)] * 2, 100)
    m = merge_gmms(half, half)
    assert m.support_size == 200
    assert np.array_equal(m.weights, [0.25] * 4)


def test_merge_support_example():
    rng = np.random.default_rng(0)
    a, b = random_gmm(rng, 3, 100), random_gmm(rng, 2, 50)
    m = merge_gmms(a, b)
    assert m.support_size == 150
    assert np.allclose(m.weights, np.concatenate([a.weights * 100 / 150, b.weights * 50 / 150]), rtol=0, atol=1e-15)


def test_merge_identity_with_empty():
    a = random_gmm(np.random.default_rng(1), 3)
    assert merge_gmms(a, Gmm.empty()) is a
    assert merge_gmms(Gmm.empty(), a) is a


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
def test_merge_density_order_invariant(seed, ma, mb):
    rng = np.random.default_rng(seed)
    a, b = random_gmm(rng, ma), random_gmm(rng, mb)
    x = rng.normal(0, 3, (20, 3))
    assert np.array_equal(merge_gmms(a, b).pdf(x), merge_gmms(b, a).pdf(x))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_pdf_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_gmm(rng, int(rng.integers(1, 5)))
    x = rng.normal(0, 3, (10, 3))
    ref = mixture_pdf(x, g.weights, g.means, g.covariances)
    assert np.allclose(g.pdf(x), ref, rtol=1e-9, atol=1e-300)


# ---------------------------------------------------------------- sampling


def test_sample_lln():
    mu = np.array([1.0, -2.0, 0.5])
    eps = 0.04
    g = Gmm([1.0], [mu], [eps * np.eye(3)], 1)
    x = sample(g, 10_000, seed=0)
    assert np.all(np.abs(x.mean(axis=0) - mu) < 5 * math.sqrt(eps) / math.sqrt(10_000))


def test_sample_component_counts_binomial():
    g = Gmm([0.5, 0.5], [[-100, 0, 0], [100, 0, 0]], [np.eye(3)] * 2, 2)
    n = 20_000
    x = sample(g, n, seed=3)
    k = int((x[:, 0] > 0).sum())
    assert abs(k - n / 2) <= 4 * math.sqrt(n * 0.25)


def test_sample_moments_within_standard_errors():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + 0.1 * np.eye(3)
    mu = rng.normal(size=3)
    n = 100_000
    x = sample(Gmm([1.0], [mu], [cov], 1), n, seed=1)
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(x.mean(axis=0) - mu) < 3 * se_mean)
    emp = np.cov(x.T)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) < 3 * se_cov)


def test_sample_deterministic_and_empty():
    g = random_gmm(np.random.default_rng(0), 3)
    assert np.array_equal(sample(g, 100, seed=5), sample(g, 100, seed=5))
    with pytest.raises(ValueError, match="empty model"):
        sample(Gmm.empty(), 10)
