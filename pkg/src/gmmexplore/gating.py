"""Keyframe gating: decide whether a new observation adds enough new coverage to store.

Panoramic sensors use a pose box test. Limited field-of-view sensors compare
view frusta, each approximated by a rectangular pyramid split into two
tetrahedra, and measure the volume of their intersection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .transforms import Pose

# optical frame (x right, y down, z forward) expressed in the body frame (x forward, y left, z up)
_OPTICAL_TO_BODY = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
_TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def tetra_volume(t: np.ndarray) -> float:
    return abs(float(np.linalg.det(t[1:] - t[0]))) / 6.0


def _halfspaces(t: np.ndarray):
    """Outward face normals and offsets so that inside means ``n @ x <= d``."""
    a, b, c = t[_TET_FACES[:, 0]], t[_TET_FACES[:, 1]], t[_TET_FACES[:, 2]]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = np.einsum("ij,ij->i", n, a)
    # the vertex opposite each face must be inside
    opp = t[np.arange(4)]
    flip = np.einsum("ij,ij->i", n, opp) > d
    n[flip] *= -1.0
    d[flip] *= -1.0
    return n, d


def _tetra_intersection_points(ta: np.ndarray, tb: np.ndarray, tol: float) -> np.ndarray:
    na, da = _halfspaces(ta)
    nb, db = _halfspaces(tb)
    pts = [ta[np.all(ta @ nb.T <= db + tol, axis=1)], tb[np.all(tb @ na.T <= da + tol, axis=1)]]
    for t, n_other, d_other in ((ta, nb, db), (tb, na, da)):
        p = t[_TET_EDGES[:, 0]]
        q = t[_TET_EDGES[:, 1]]
        pq = q - p
        denom = pq @ n_other.T  # (6, 4)
        num = d_other[None, :] - p @ n_other.T
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        ok = (np.abs(denom) > 1e-15) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
        e_idx, f_idx = np.nonzero(ok)
        if len(e_idx) == 0:
            continue
        x = p[e_idx] + s[e_idx, f_idx, None] * pq[e_idx]
        inside = np.all(x @ n_other.T <= d_other + tol, axis=1)
        pts.append(x[inside])
    return np.concatenate(pts)


def convex_volume(points: np.ndarray) -> float:
    """Volume of the convex hull, summed over a fan of tetrahedra from an interior point."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 4:
        return 0.0
    try:
        hull = ConvexHull(points)
    except (QhullError, ValueError):
        return 0.0
    apex = points[hull.vertices].mean(axis=0)
    tri = points[hull.simplices]
    m = tri - apex
    return float(np.abs(np.einsum("ij,ij->i", m[:, 0], np.cross(m[:, 1], m[:, 2]))).sum() / 6.0)


@dataclass(frozen=True, eq=False)
class FovPyramid:
    """Rectangular view pyramid: sensor origin plus four far-plane corners."""

    apex: np.ndarray
    corners: np.ndarray

    def __post_init__(self):
        a = np.array(self.apex, dtype=float).reshape(3)
        c = np.array(self.corners, dtype=float).reshape(4, 3)
        a.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "apex", a)
        object.__setattr__(self, "corners", c)

    @classmethod
    def from_pose(cls, pose: Pose, h_fov: float, v_fov: float, max_range: float) -> "FovPyramid":
        tx = math.tan(0.5 * h_fov)
        ty = math.tan(0.5 * v_fov)
        # corners in cyclic order so (0, 2) is a base diagonal
        opt = max_range * np.array([[tx, ty, 1.0], [-tx, ty, 1.0], [-tx, -ty, 1.0], [tx, -ty, 1.0]])
        body = opt @ _OPTICAL_TO_BODY.T
        return cls(pose.translation, pose.transform_points(body))

    def tetrahedra(self) -> tuple[np.ndarray, np.ndarray]:
        a, c = self.apex, self.corners
        return np.array([a, c[0], c[1], c[2]]), np.array([a, c[0], c[2], c[3]])

    @property
    def volume(self) -> float:
        t0, t1 = self.tetrahedra()
        return tetra_volume(t0) + tetra_volume(t1)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        v = np.vstack([self.apex, self.corners])
        c = v.mean(axis=0)
        return c, float(np.linalg.norm(v - c, axis=1).max())

    def transformed(self, rot: np.ndarray, trans) -> "FovPyramid":
        return FovPyramid(self.apex @ rot.T + trans, self.corners @ rot.T + trans)

    def contains(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 3)
        out = np.zeros(len(p), dtype=bool)
        for t in self.tetrahedra():
            n, d = _halfspaces(t)
            out |= np.all(p @ n.T <= d, axis=1)
        return out


def pyramid_overlap_fraction(a: FovPyramid, b: FovPyramid) -> float:
    """Fraction of ``a``'s volume that also lies inside ``b``."""
    if np.array_equal(a.apex, b.apex) and np.array_equal(a.corners, b.corners):
        return 1.0 if a.volume > 0 else 0.0  # hull and analytic volumes differ by rounding
    ca, ra = a.bounding_sphere()
    cb, rb = b.bounding_sphere()
    if np.linalg.norm(ca - cb) > ra + rb:
        return 0.0
    scale = max(ra, rb)
    tol = 1e-9 * scale
    pts = [
        _tetra_intersection_points(ta, tb, tol)
        for ta in a.tetrahedra()
        for tb in b.tetrahedra()
    ]
    pts = np.concatenate(pts)
    vol_a = a.volume
    if vol_a <= 0:
        return 0.0
    return float(np.clip(convex_volume(pts) / vol_a, 0.0, 1.0))


@dataclass(frozen=True)
class GateConfig:
    mode: str = "full_360"
    half_lengths: tuple = (1.5, 1.5, 1.0)
    overlap_threshold: float = 0.5
    max_range: float = 5.0

    def __post_init__(self):
        if self.mode not in ("full_360", "limited_fov"):
            raise ValueError(f"unknown gate mode {self.mode!r}")
        if len(self.half_lengths) != 3 or min(self.half_lengths) <= 0:
            raise ValueError("half_lengths must be three positive numbers")
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must lie in [0, 1]")


def should_store_360(pose, stored_origins, cfg: GateConfig) -> bool:
    """True iff no stored origin lies inside the closed box ``pose +- half_lengths``."""
    stored = np.asarray(stored_origins, dtype=float).reshape(-1, 3)
    if len(stored) == 0:
        return True
    p = np.asarray(pose, dtype=float).reshape(3)
    inside = np.all(np.abs(stored - p) <= np.asarray(cfg.half_lengths), axis=1)
    return not bool(inside.any())


def max_overlap(new: FovPyramid, stored, cfg: GateConfig, stop_at: float | None = None) -> float:
    """Largest overlap of ``new`` with stored pyramids whose apex is within twice the range.

    Candidates are visited nearest first so the early exit at ``stop_at``
    usually triggers after one or two volume computations.
    """
    stored = list(stored)
    if not stored:
        return 0.0
    apexes = np.array([s.apex for s in stored])
    dist = np.linalg.norm(apexes - new.apex, axis=1)
    order = np.argsort(dist, kind="stable")
    best = 0.0
    for i in order:
        if dist[i] > 2.0 * cfg.max_range:
            break
        best = max(best, pyramid_overlap_fraction(new, stored[i]))
        if stop_at is not None and best >= stop_at:
            break
    return best


def should_store_limited_fov(new: FovPyramid, stored, cfg: GateConfig) -> bool:
    """Store iff the largest overlap with nearby stored frusta is below the threshold."""
    return max_overlap(new, stored, cfg, stop_at=cfg.overlap_threshold) < cfg.overlap_threshold


class KeyframeGate:
    """Stateful gate remembering the views that were stored."""

    def __init__(self, cfg: GateConfig, h_fov: float = 2 * math.pi, v_fov: float = math.pi / 3):
        self.cfg = cfg
        self.h_fov = h_fov
        self.v_fov = v_fov
        self.origins: list[np.ndarray] = []
        self.pyramids: list[FovPyramid] = []

    def _pyramid(self, pose: Pose) -> FovPyramid:
        return FovPyramid.from_pose(pose, self.h_fov, self.v_fov, self.cfg.max_range)

    def should_store(self, pose: Pose) -> bool:
        if self.cfg.mode == "full_360":
            return should_store_360(pose.translation, self.origins, self.cfg)
        return should_store_limited_fov(self._pyramid(pose), self.pyramids, self.cfg)

    def record(self, pose: Pose) -> None:
        self.origins.append(np.array(pose.translation))
        if self.cfg.mode == "limited_fov":
            self.pyramids.append(self._pyramid(pose))
