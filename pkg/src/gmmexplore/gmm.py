"""Gaussian mixture fitting, merging and sampling for depth observations.

A depth observation is split into occupied points (closer than the sensor
max range) and free points (projected onto the max-range sphere). Each set is
compressed into a Gaussian mixture with an EM variant that only lets a point
influence components whose initial Mahalanobis distance is within a gate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .transforms import Pose

EPS_COV = 1e-6
PRUNE_WEIGHT = 1e-6
# clamp slightly above the floor so eigenvalues recomputed later stay >= EPS_COV
_FLOOR_SLACK = 1.0 + 1e-7
_LOG_2PI_3 = 3.0 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True, eq=False)
class Gmm:
    """Weighted mixture of 3-D Gaussians, stored as parallel arrays.

    ``support_size`` is the number of points the mixture was trained on; it
    drives the support-weighted merge and the resampling density.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    support_size: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float).reshape(-1, 3)
        cov = np.array(self.covariances, dtype=float).reshape(-1, 3, 3)
        if not (len(w) == len(mu) == len(cov)):
            raise ValueError("weights, means and covariances disagree in length")
        if len(w) and self.support_size < 1:
            raise ValueError("nonempty mixture needs support_size >= 1")
        for a in (w, mu, cov):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "support_size", int(self.support_size))

    @classmethod
    def empty(cls) -> "Gmm":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3)), 0)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def is_empty(self) -> bool:
        return len(self.weights) == 0

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(float(w), m, c)
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ]

    def pdf(self, x) -> np.ndarray:
        """Mixture density at (N, 3) points.

        Per-component terms are sorted before summation so the result does not
        depend on component order.
        """
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if self.is_empty:
            return np.zeros(len(x))
        terms = self.weights[None, :] * np.exp(_component_log_pdf(x, self.means, self.covariances))
        return np.sort(terms, axis=1).sum(axis=1)

    def log_likelihood(self, x) -> float:
        return float(np.sum(np.log(self.pdf(x))))

    def transformed(self, pose: Pose) -> "Gmm":
        """Express the mixture in the parent frame of ``pose``."""
        if self.is_empty:
            return self
        r = pose.rotation
        means = self.means @ r.T + pose.translation
        covs = np.einsum("ij,mjk,lk->mil", r, self.covariances, r)
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        return Gmm(self.weights, means, covs, self.support_size)


def _component_log_pdf(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """(N, M) matrix of log N(x_n | mu_m, cov_m)."""
    chol = np.linalg.cholesky(covs)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    diff = x[:, None, :] - means[None, :, :]
    # solve L y = diff for every (n, m) pair
    y = np.linalg.solve(chol[None, :, :, :], diff[..., None])[..., 0]
    return -0.5 * (np.einsum("nmi,nmi->nm", y, y) + logdet[None, :] + _LOG_2PI_3)


def floor_covariances(covs: np.ndarray, eps: float = EPS_COV) -> np.ndarray:
    """Symmetrize and clamp eigenvalues from below at ``eps``.

    Only matrices that violate the floor are rebuilt. Clamping the eigenvalues
    of a scatter matrix is the constrained maximizer of the Gaussian
    likelihood, so applying it inside the M step keeps EM monotone.
    """
    covs = np.array(covs, dtype=float).reshape(-1, 3, 3)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    if len(covs) == 0:
        return covs
    w, v = np.linalg.eigh(covs)
    bad = w[:, 0] < eps
    if bad.any():
        wb = np.maximum(w[bad], eps * _FLOOR_SLACK)
        vb = v[bad]
        rebuilt = (vb * wb[:, None, :]) @ np.swapaxes(vb, 1, 2)
        covs[bad] = 0.5 * (rebuilt + np.swapaxes(rebuilt, 1, 2))
    return covs


# --------------------------------------------------------------------------
# observation handling


@dataclass(frozen=True)
class SensorIntrinsics:
    """Image geometry of a depth sensor. ``h_fov >= 2*pi`` means a spinning LiDAR."""

    width: int
    height: int
    h_fov: float
    v_fov: float

    def __post_init__(self):
        for a in (self.h_fov, self.v_fov):
            if not (0.0 < a <= 2.0 * math.pi + 1e-12):
                raise ValueError("field-of-view angles must lie in (0, 2*pi]")

    @property
    def is_panoramic(self) -> bool:
        return self.h_fov >= 2.0 * math.pi - 1e-9


@dataclass(frozen=True, eq=False)
class DepthObservation:
    """One depth frame: points in the sensor frame plus the sensor pose.

    Sensor frame convention is x forward, y left, z up for both sensor kinds.
    """

    origin_pose: Pose
    points: np.ndarray
    intrinsics: SensorIntrinsics

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("observation contains non-finite points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def world_points(self) -> np.ndarray:
        return self.origin_pose.transform_points(self.points)


@dataclass(frozen=True)
class ObservationModel:
    max_range: float = 5.0
    free_window_grid: tuple[int, int] = (4, 4)
    n_free: int = 2
    n_occupied: int = 100
    gate: float = 5.0
    tol: float = 1e-4
    max_iter: int = 30
    eps_cov: float = EPS_COV

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.n_free < 1 or self.n_occupied < 1:
            raise ValueError("component counts must be >= 1")
        if self.gate <= 0:
            raise ValueError("gate must be positive")
        rows, cols = self.free_window_grid
        if rows < 1 or cols < 1:
            raise ValueError("free_window_grid must be at least 1x1")


def split_observation(obs: DepthObservation, model: ObservationModel) -> tuple[np.ndarray, np.ndarray]:
    """Partition sensor-frame points into occupied and max-range-projected free points."""
    pts = obs.points
    norms = np.linalg.norm(pts, axis=1)
    occ = norms < model.max_range
    occupied = pts[occ]
    far = pts[~occ]
    free = far / norms[~occ, None] * model.max_range
    return occupied, free


def image_coordinates(directions: np.ndarray, intrinsics: SensorIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Normalized image coordinates in [0, 1) of sensor-frame directions."""
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    if intrinsics.is_panoramic:
        u = (np.arctan2(y, x) + math.pi) / (2.0 * math.pi)
        el = np.arctan2(z, np.hypot(x, y))
        v = (el + 0.5 * intrinsics.v_fov) / intrinsics.v_fov
    else:
        xs = np.where(x > 1e-12, x, 1e-12)
        u = 0.5 - 0.5 * (y / xs) / math.tan(0.5 * intrinsics.h_fov)
        v = 0.5 - 0.5 * (z / xs) / math.tan(0.5 * intrinsics.v_fov)
    top = np.nextafter(1.0, 0.0)
    return np.clip(u, 0.0, top), np.clip(v, 0.0, top)


# --------------------------------------------------------------------------
# EM kernels


@njit(cache=True)
def _chol3(c, out):
    l00 = math.sqrt(c[0, 0])
    l10 = c[1, 0] / l00
    l20 = c[2, 0] / l00
    l11 = math.sqrt(c[1, 1] - l10 * l10)
    l21 = (c[2, 1] - l20 * l10) / l11
    l22 = math.sqrt(c[2, 2] - l20 * l20 - l21 * l21)
    out[0, 0] = l00
    out[1, 0] = l10
    out[1, 1] = l11
    out[2, 0] = l20
    out[2, 1] = l21
    out[2, 2] = l22
    out[0, 1] = 0.0
    out[0, 2] = 0.0
    out[1, 2] = 0.0
    return 2.0 * (math.log(l00) + math.log(l11) + math.log(l22))


@njit(cache=True)
def _mahalanobis_sq(x, mu, L):
    d0 = x[0] - mu[0]
    d1 = x[1] - mu[1]
    d2 = x[2] - mu[2]
    y0 = d0 / L[0, 0]
    y1 = (d1 - L[1, 0] * y0) / L[1, 1]
    y2 = (d2 - L[2, 0] * y0 - L[2, 1] * y1) / L[2, 2]
    return y0 * y0 + y1 * y1 + y2 * y2


@njit(cache=True)
def _factor_all(covs):
    m = covs.shape[0]
    chol = np.zeros((m, 3, 3))
    logdet = np.zeros(m)
    for k in range(m):
        logdet[k] = _chol3(covs[k], chol[k])
    return chol, logdet


@njit(cache=True)
def _gate_mask(x, means, covs, gate_sq):
    n = x.shape[0]
    m = means.shape[0]
    chol, _ = _factor_all(covs)
    mask = np.zeros((n, m), dtype=np.bool_)
    for i in range(n):
        for k in range(m):
            if _mahalanobis_sq(x[i], means[k], chol[k]) <= gate_sq:
                mask[i, k] = True
    return mask


@njit(cache=True)
def _e_step(x, indptr, cols, logw, means, covs, beta):
    chol, logdet = _factor_all(covs)
    n = x.shape[0]
    total = 0.0
    comp = 0.0
    for i in range(n):
        s = indptr[i]
        e = indptr[i + 1]
        mx = -np.inf
        for p in range(s, e):
            k = cols[p]
            lp = logw[k] - 0.5 * (_mahalanobis_sq(x[i], means[k], chol[k]) + logdet[k] + _LOG_2PI_3)
            beta[p] = lp
            if lp > mx:
                mx = lp
        acc = 0.0
        for p in range(s, e):
            acc += math.exp(beta[p] - mx)
        lse = mx + math.log(acc)
        for p in range(s, e):
            beta[p] = math.exp(beta[p] - lse)
        # Kahan summation keeps the trace monotone down to round-off
        yk = lse - comp
        t = total + yk
        comp = (t - total) - yk
        total = t
    return total


@njit(cache=True)
def _m_step(x, indptr, cols, beta, means_old, covs_old):
    m = means_old.shape[0]
    n = x.shape[0]
    nk = np.zeros(m)
    s1 = np.zeros((m, 3))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            k = cols[p]
            b = beta[p]
            nk[k] += b
            for a in range(3):
                s1[k, a] += b * x[i, a]
    means = means_old.copy()
    for k in range(m):
        if nk[k] > 0.0:
            for a in range(3):
                means[k, a] = s1[k, a] / nk[k]
    s2 = np.zeros((m, 3, 3))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            k = cols[p]
            b = beta[p]
            d0 = x[i, 0] - means[k, 0]
            d1 = x[i, 1] - means[k, 1]
            d2 = x[i, 2] - means[k, 2]
            s2[k, 0, 0] += b * d0 * d0
            s2[k, 0, 1] += b * d0 * d1
            s2[k, 0, 2] += b * d0 * d2
            s2[k, 1, 1] += b * d1 * d1
            s2[k, 1, 2] += b * d1 * d2
            s2[k, 2, 2] += b * d2 * d2
    covs = covs_old.copy()
    for k in range(m):
        if nk[k] > 0.0:
            for a in range(3):
                for c in range(a, 3):
                    v = s2[k, a, c] / nk[k]
                    covs[k, a, c] = v
                    covs[k, c, a] = v
    return nk, means, covs


# --------------------------------------------------------------------------
# fitting


def _kmeanspp_init(x: np.ndarray, m: int, rng: np.random.Generator, eps: float, lloyd_iters: int = 3):
    n = len(x)
    idx = np.empty(m, dtype=np.int64)
    idx[0] = rng.integers(n)
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for k in range(1, m):
        total = d2.sum()
        if total <= 0.0:
            idx[k] = rng.integers(n)
        else:
            c = np.cumsum(d2)
            idx[k] = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), n - 1)
        d2 = np.minimum(d2, np.sum((x - x[idx[k]]) ** 2, axis=1))
    centers = x[idx].copy()
    labels = cKDTree(centers).query(x)[1]
    for _ in range(lloyd_iters):
        counts = np.bincount(labels, minlength=m)
        sums = np.zeros((m, 3))
        np.add.at(sums, labels, x)
        nz = counts > 0
        centers[nz] = sums[nz] / counts[nz, None]
        labels = cKDTree(centers).query(x)[1]

    counts = np.bincount(labels, minlength=m).astype(float)
    sums = np.zeros((m, 3))
    np.add.at(sums, labels, x)
    means = centers.copy()
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz, None]
    diff = x - means[labels]
    scatter = np.zeros((m, 3, 3))
    np.add.at(scatter, labels, diff[:, :, None] * diff[:, None, :])
    covs = np.zeros((m, 3, 3))
    covs[nz] = scatter[nz] / counts[nz, None, None]
    covs = floor_covariances(covs, eps)
    weights = counts / n
    return weights, means, covs


def fit_em(
    points,
    m: int,
    gate: float = 5.0,
    seed=0,
    *,
    tol: float = 1e-4,
    max_iter: int = 30,
    eps_cov: float = EPS_COV,
    return_trace: bool = False,
):
    """Fit an ``m``-component mixture with Mahalanobis-gated EM.

    Seeding is k-means++ followed by a few Lloyd passes. The gate is evaluated
    once against the initial parameters: a point only contributes to
    components within Mahalanobis distance ``gate`` of their initialization,
    and points with no such component are dropped from the fit.

    Args:
        points: (N, 3) array with N >= m.
        m: number of components.
        gate: Mahalanobis bound.
        seed: anything ``numpy.random.default_rng`` accepts.
        tol: stop once the log-likelihood gain falls below ``tol`` times its
            magnitude.
        max_iter: maximum number of M steps.
        eps_cov: covariance eigenvalue floor.
        return_trace: also return the log-likelihood after every iteration.

    Returns:
        The fitted ``Gmm`` (components with weight below 1e-6 pruned), or
        ``(gmm, trace)`` when ``return_trace`` is set.
    """
    x = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    if m < 1 or len(x) < m:
        raise ValueError("insufficient support")
    rng = np.random.default_rng(seed)
    weights, means, covs = _kmeanspp_init(x, m, rng, eps_cov)

    mask = _gate_mask(x, means, covs, gate * gate)
    keep = mask.any(axis=1)
    xr = np.ascontiguousarray(x[keep])
    mask = mask[keep]
    rows, cols = np.nonzero(mask)
    indptr = np.zeros(len(xr) + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=len(xr)), out=indptr[1:])
    cols = cols.astype(np.int64)
    beta = np.empty(len(cols))
    n_kept = len(xr)

    with np.errstate(divide="ignore"):
        ll = _e_step(xr, indptr, cols, np.log(weights), means, covs, beta)
    trace = [ll]
    for _ in range(max_iter):
        nk, means, covs = _m_step(xr, indptr, cols, beta, means, covs)
        covs = floor_covariances(covs, eps_cov)
        weights = nk / n_kept
        with np.errstate(divide="ignore"):
            ll_new = _e_step(xr, indptr, cols, np.log(weights), means, covs, beta)
        trace.append(ll_new)
        done = ll_new - ll < tol * abs(ll)
        ll = ll_new
        if done:
            break

    alive = weights >= PRUNE_WEIGHT
    w = weights[alive]
    gmm = Gmm(w / w.sum(), means[alive], covs[alive], len(x))
    if return_trace:
        return gmm, np.array(trace)
    return gmm


def fit_free_space(free_points, obs: DepthObservation, model: ObservationModel, seed=0) -> Gmm:
    """Fit windowed free-space mixtures and merge them in window order."""
    pts = np.asarray(free_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return Gmm.empty()
    rows, cols = model.free_window_grid
    u, v = image_coordinates(pts, obs.intrinsics)
    win = np.floor(v * rows).astype(int) * cols + np.floor(u * cols).astype(int)
    merged = Gmm.empty()
    for w in range(rows * cols):
        sel = pts[win == w]
        if len(sel) == 0:
            continue
        g = fit_em(
            sel,
            min(model.n_free, len(sel)),
            model.gate,
            seed=_child_seed(seed, w),
            tol=model.tol,
            max_iter=model.max_iter,
            eps_cov=model.eps_cov,
        )
        merged = merge_gmms(merged, g)
    return merged


def fit_occupied_space(occupied_points, model: ObservationModel, seed=0) -> Gmm:
    pts = np.asarray(occupied_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return Gmm.empty()
    return fit_em(
        pts,
        min(model.n_occupied, len(pts)),
        model.gate,
        seed=seed,
        tol=model.tol,
        max_iter=model.max_iter,
        eps_cov=model.eps_cov,
    )


def fit_observation(obs: DepthObservation, model: ObservationModel, seed=0) -> tuple[Gmm, Gmm]:
    """Occupied and free mixtures of one observation, in the world frame."""
    occ_pts, free_pts = split_observation(obs, model)
    occ = fit_occupied_space(occ_pts, model, seed=_child_seed(seed, 0))
    free = fit_free_space(free_pts, obs, model, seed=_child_seed(seed, 1))
    return occ.transformed(obs.origin_pose), free.transformed(obs.origin_pose)


def _child_seed(seed, k: int):
    if isinstance(seed, (list, tuple)):
        return [*seed, k]
    return [int(seed), k]


def merge_gmms(a: Gmm, b: Gmm) -> Gmm:
    """Concatenate two mixtures, reweighting by support size."""
    if b.is_empty:
        return a
    if a.is_empty:
        return b
    n_star = a.support_size + b.support_size
    w = np.concatenate([a.support_size * a.weights / n_star, b.support_size * b.weights / n_star])
    return Gmm(
        w,
        np.concatenate([a.means, b.means]),
        np.concatenate([a.covariances, b.covariances]),
        n_star,
    )


def sample(g: Gmm, n: int, seed=0) -> np.ndarray:
    """Draw ``n`` i.i.d. points from the mixture."""
    if g.is_empty:
        raise ValueError("empty model")
    rng = np.random.default_rng(seed)
    p = g.weights / g.weights.sum()
    comp = rng.choice(len(g), size=n, p=p)
    z = rng.standard_normal((n, 3))
    chol = np.linalg.cholesky(g.covariances)
    return g.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def sample_per_component(g: Gmm, counts: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``counts[m]`` points from each component; returns (points, component index)."""
    counts = np.asarray(counts, dtype=np.int64)
    comp = np.repeat(np.arange(len(g)), counts)
    if len(comp) == 0:
        return np.zeros((0, 3)), comp
    z = rng.standard_normal((len(comp), 3))
    chol = np.linalg.cholesky(g.covariances)
    return g.means[comp] + np.einsum("nij,nj->ni", chol[comp], z), comp
