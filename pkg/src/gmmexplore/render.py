"""Depth sensor simulation by ray casting against a triangle mesh.

Triangles are bucketed into a uniform grid of cells; each ray walks the cells
it crosses and runs a two-sided Moller-Trumbore test against the triangles
stored there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .gmm import DepthObservation, SensorIntrinsics
from .transforms import Pose

MISS_EPS = 1e-3
_MT_EPS = 1e-12


@njit(cache=True)
def _mt(o, d, v0, e1, e2, t):
    """Ray parameter of the hit with triangle ``t``, or inf."""
    e10 = e1[t, 0]
    e11 = e1[t, 1]
    e12 = e1[t, 2]
    e20 = e2[t, 0]
    e21 = e2[t, 1]
    e22 = e2[t, 2]
    px = d[1] * e22 - d[2] * e21
    py = d[2] * e20 - d[0] * e22
    pz = d[0] * e21 - d[1] * e20
    det = e10 * px + e11 * py + e12 * pz
    if abs(det) < _MT_EPS:
        return np.inf
    inv = 1.0 / det
    tx = o[0] - v0[t, 0]
    ty = o[1] - v0[t, 1]
    tz = o[2] - v0[t, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e12 - tz * e11
    qy = tz * e10 - tx * e12
    qz = tx * e11 - ty * e10
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    th = (e20 * qx + e21 * qy + e22 * qz) * inv
    if th <= 0.0:
        return np.inf
    return th


@njit(cache=True)
def _bucket(v0, e1, e2, lo, cell, dims):
    n = v0.shape[0]
    ncell = dims[0] * dims[1] * dims[2]
    counts = np.zeros(ncell + 1, dtype=np.int64)
    rng = np.empty((n, 6), dtype=np.int64)
    for t in range(n):
        for a in range(3):
            mn = min(v0[t, a], v0[t, a] + e1[t, a], v0[t, a] + e2[t, a])
            mx = max(v0[t, a], v0[t, a] + e1[t, a], v0[t, a] + e2[t, a])
            i0 = int(math.floor((mn - lo[a]) / cell - 1e-9))
            i1 = int(math.floor((mx - lo[a]) / cell + 1e-9))
            rng[t, a] = max(0, min(dims[a] - 1, i0))
            rng[t, 3 + a] = max(0, min(dims[a] - 1, i1))
        for i in range(rng[t, 0], rng[t, 3] + 1):
            for j in range(rng[t, 1], rng[t, 4] + 1):
                for k in range(rng[t, 2], rng[t, 5] + 1):
                    counts[(i * dims[1] + j) * dims[2] + k + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    ids = np.empty(start[-1], dtype=np.int64)
    for t in range(n):
        for i in range(rng[t, 0], rng[t, 3] + 1):
            for j in range(rng[t, 1], rng[t, 4] + 1):
                for k in range(rng[t, 2], rng[t, 5] + 1):
                    c = (i * dims[1] + j) * dims[2] + k
                    ids[fill[c]] = t
                    fill[c] += 1
    return start, ids


@njit(cache=True)
def _cast(origin, dirs, tmax_ray, v0, e1, e2, lo, cell, dims, start, ids, skip):
    n = dirs.shape[0]
    out = np.full(n, np.inf)
    hi = np.empty(3)
    for a in range(3):
        hi[a] = lo[a] + dims[a] * cell
    d = np.empty(3)
    idx = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    tnext = np.empty(3)
    tdelta = np.empty(3)
    for r in range(n):
        for a in range(3):
            d[a] = dirs[r, a]
        # clip the ray to the grid box
        t0 = 0.0
        t1 = tmax_ray
        ok = True
        for a in range(3):
            if d[a] == 0.0:
                if origin[a] < lo[a] or origin[a] > hi[a]:
                    ok = False
            else:
                ta = (lo[a] - origin[a]) / d[a]
                tb = (hi[a] - origin[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
        if not ok or t0 > t1:
            continue
        for a in range(3):
            p = origin[a] + t0 * d[a]
            i = int(math.floor((p - lo[a]) / cell))
            idx[a] = max(0, min(dims[a] - 1, i))
            if d[a] > 0.0:
                step[a] = 1
                tnext[a] = (lo[a] + (idx[a] + 1) * cell - origin[a]) / d[a]
                tdelta[a] = cell / d[a]
            elif d[a] < 0.0:
                step[a] = -1
                tnext[a] = (lo[a] + idx[a] * cell - origin[a]) / d[a]
                tdelta[a] = -cell / d[a]
            else:
                step[a] = 0
                tnext[a] = np.inf
                tdelta[a] = np.inf
        best = np.inf
        while True:
            c = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
            k = skip[c]
            if k > 0:
                # every cell within Chebyshev radius k is empty: jump to the exit of that cube
                a = -1
                t_leave = np.inf
                for b in range(3):
                    if step[b] != 0:
                        edge = idx[b] + k + 1 if step[b] > 0 else idx[b] - k
                        tb = (lo[b] + edge * cell - origin[b]) / d[b]
                        if tb < t_leave:
                            t_leave = tb
                            a = b
                if t_leave > t1:
                    break
                for b in range(3):
                    if b == a:
                        idx[b] += step[b] * (k + 1)
                    else:
                        i = int(math.floor((origin[b] + t_leave * d[b] - lo[b]) / cell))
                        idx[b] = max(idx[b] - k, min(idx[b] + k, i))
                if idx[a] < 0 or idx[a] >= dims[a]:
                    break
                for b in range(3):
                    if step[b] > 0:
                        tnext[b] = (lo[b] + (idx[b] + 1) * cell - origin[b]) / d[b]
                    elif step[b] < 0:
                        tnext[b] = (lo[b] + idx[b] * cell - origin[b]) / d[b]
                continue
            for p in range(start[c], start[c + 1]):
                t = ids[p]
                th = _mt(origin, d, v0, e1, e2, t)
                if th < best:
                    best = th
            a = 0
            if tnext[1] < tnext[a]:
                a = 1
            if tnext[2] < tnext[a]:
                a = 2
            t_exit = tnext[a]
            if best <= t_exit or t_exit > t1:
                break
            idx[a] += step[a]
            if idx[a] < 0 or idx[a] >= dims[a]:
                break
            tnext[a] += tdelta[a]
        out[r] = best
    return out


class MeshRaycaster:
    def __init__(self, triangles: np.ndarray, cell: float = 0.15):
        tri = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        self.cell = float(cell)
        if len(tri):
            lo = tri.reshape(-1, 3).min(axis=0) - 1e-6
            hi = tri.reshape(-1, 3).max(axis=0) + 1e-6
        else:
            lo, hi = np.zeros(3), np.ones(3)
        self.lo = lo
        self.dims = np.maximum(np.ceil((hi - lo) / cell).astype(np.int64), 1)
        self.start, self.ids = _bucket(self.v0, self.e1, self.e2, self.lo, self.cell, self.dims)
        # Chebyshev radius of the empty cube around each cell, for empty-space skipping
        empty = (np.diff(self.start) == 0).reshape(tuple(self.dims))
        if empty.all():
            self.skip = np.zeros(empty.size, dtype=np.int64)
        else:
            cheb = ndimage.distance_transform_cdt(empty, metric="chessboard")
            self.skip = np.maximum(cheb.astype(np.int64) - 1, 0).reshape(-1)

    def cast(self, origin, directions, max_t: float) -> np.ndarray:
        """Nearest hit parameter per unit direction (inf for no hit within ``max_t``)."""
        dirs = np.ascontiguousarray(np.asarray(directions, dtype=float).reshape(-1, 3))
        origin = np.asarray(origin, dtype=float).reshape(3)
        if len(self.v0) == 0:
            return np.full(len(dirs), np.inf)
        t = _cast(origin, dirs, float(max_t), self.v0, self.e1, self.e2, self.lo, self.cell, self.dims,
                  self.start, self.ids, self.skip)
        t[t > max_t] = np.inf
        return t


def cast_exhaustive(triangles, origin, directions) -> np.ndarray:
    """Reference ray casting: every ray against every triangle, same intersection arithmetic."""
    tri = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
    dirs = np.asarray(directions, dtype=float).reshape(-1, 3)
    o = np.asarray(origin, dtype=float).reshape(3)
    v0 = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
    e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
    return _scan_all(o, dirs, v0, e1, e2)


@njit(cache=True)
def _scan_all(o, dirs, v0, e1, e2):
    out = np.full(dirs.shape[0], np.inf)
    for r in range(dirs.shape[0]):
        d = dirs[r]
        for k in range(v0.shape[0]):
            t = _mt(o, d, v0, e1, e2, k)
            if t < out[r]:
                out[r] = t
    return out


@dataclass(frozen=True)
class SimSensor:
    """Simulated depth sensor. Directions are in the body frame (x forward, y left, z up)."""

    kind: str = "lidar"
    max_range: float = 5.0
    rate: float = 10.0
    n_az: int = 360
    el_min_deg: float = -30.0
    el_max_deg: float = 30.0
    el_step_deg: float = 2.0
    width: int = 80
    height: int = 60
    h_fov_deg: float = 87.0
    v_fov_deg: float = 58.0
    noise: float = 0.01

    def __post_init__(self):
        if self.kind not in ("lidar", "depth"):
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        if not (self.max_range > 0 and self.rate > 0):
            raise ValueError("max_range and rate must be positive")

    @property
    def n_el(self) -> int:
        return int(round((self.el_max_deg - self.el_min_deg) / self.el_step_deg)) + 1

    def directions(self) -> np.ndarray:
        if self.kind == "lidar":
            az = np.radians(np.arange(self.n_az) * 360.0 / self.n_az - 180.0)
            el = np.radians(np.linspace(self.el_min_deg, self.el_max_deg, self.n_el))
            e, a = np.meshgrid(el, az, indexing="ij")
            d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], -1)
            return d.reshape(-1, 3)
        tx = math.tan(math.radians(self.h_fov_deg) / 2)
        ty = math.tan(math.radians(self.v_fov_deg) / 2)
        u = ((np.arange(self.width) + 0.5) / self.width * 2 - 1) * tx
        v = ((np.arange(self.height) + 0.5) / self.height * 2 - 1) * ty
        vv, uu = np.meshgrid(v, u, indexing="ij")
        d = np.stack([np.ones_like(uu), -uu, -vv], -1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def intrinsics(self) -> SensorIntrinsics:
        if self.kind == "lidar":
            return SensorIntrinsics(self.n_az, self.n_el, 2 * math.pi,
                                    math.radians(self.el_max_deg - self.el_min_deg))
        return SensorIntrinsics(self.width, self.height, math.radians(self.h_fov_deg), math.radians(self.v_fov_deg))

    @property
    def h_fov(self) -> float:
        return self.intrinsics.h_fov

    @property
    def v_fov(self) -> float:
        return self.intrinsics.v_fov


def render_observation(caster: MeshRaycaster, pose: Pose, sensor: SimSensor, seed=0, bounds=None,
                       noise: bool = True, directions: np.ndarray | None = None) -> DepthObservation:
    """Cast the sensor's beams from ``pose``; misses come back at max range plus a small epsilon."""
    if bounds is not None and not bool(bounds.contains(pose.translation)[0]):
        raise ValueError("pose outside environment bounds")
    body = sensor.directions() if directions is None else directions
    world_dirs = body @ pose.rotation.T
    t = caster.cast(pose.translation, world_dirs, sensor.max_range)
    hit = np.isfinite(t)
    rng_ = np.where(hit, t, sensor.max_range + MISS_EPS)
    if noise and sensor.noise > 0:
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal(len(rng_))
        rng_ = np.where(hit, rng_ + sensor.noise * rng_ * eps, rng_)
        rng_ = np.maximum(rng_, 1e-3)
    return DepthObservation(pose, body * rng_[:, None], sensor.intrinsics)
