"""Log-odds voxel grids, ray integration, GMM-based region reconstruction and grid services.

Voxels live on a lattice anchored at the world origin: voxel ``k`` along an
axis covers ``[k * res, (k + 1) * res)``. A grid stores the integer index of its
minimum voxel, so shifting never accumulates floating-point drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .gmm_map import GmmMap, Keyframe

DELTA = 0.1
L_HIT = math.log(0.7 / 0.3)
L_MISS = math.log(0.4 / 0.6)
CHANGESET_RECORD_BYTES = 16
MAX_SAMPLES_PER_COMPONENT = 2000


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=float).reshape(3)
        hi = np.array(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must not exceed max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.max - self.min))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def half_diagonal(self) -> float:
        return 0.5 * float(np.linalg.norm(self.max - self.min))

    def intersection(self, other: "Aabb") -> "Aabb | None":
        lo = np.maximum(self.min, other.min)
        hi = np.minimum(self.max, other.max)
        if np.any(lo >= hi):
            return None
        return Aabb(lo, hi)

    def contains(self, pts) -> np.ndarray:
        """Half-open membership ``min <= p < max``."""
        p = np.asarray(pts, dtype=float).reshape(-1, 3)
        return np.all((p >= self.min) & (p < self.max), axis=1)

    def translated(self, d) -> "Aabb":
        d = np.asarray(d, dtype=float)
        return Aabb(self.min + d, self.max + d)


def box_set_difference(b_new: Aabb, b_old: Aabb) -> list[Aabb]:
    """Disjoint boxes covering ``b_new \\ b_old``.

    Slabs are peeled off along x, then y, then z. A pure translation needs at
    most one slab per axis, so it yields at most three boxes.
    """
    inter = b_new.intersection(b_old)
    if inter is None:
        return [b_new] if b_new.volume > 0 else []
    lo = b_new.min.copy()
    hi = b_new.max.copy()
    out = []
    for a in range(3):
        if lo[a] < inter.min[a]:
            h = hi.copy()
            h[a] = inter.min[a]
            out.append(Aabb(lo.copy(), h))
            lo[a] = inter.min[a]
        if hi[a] > inter.max[a]:
            l_ = lo.copy()
            l_[a] = inter.max[a]
            out.append(Aabb(l_, hi.copy()))
            hi[a] = inter.max[a]
    return out


@dataclass(frozen=True)
class InverseSensorModel:
    l_hit: float = L_HIT
    l_miss: float = L_MISS
    l_clamp_min: float = -math.inf
    l_clamp_max: float = math.inf

    def __post_init__(self):
        if not (self.l_hit > 0 > self.l_miss):
            raise ValueError("need l_hit > 0 > l_miss")
        if not self.l_clamp_min < self.l_clamp_max:
            raise ValueError("clamp bounds out of order")

    @classmethod
    def clamped(cls, bound: float = 3.5, **kw) -> "InverseSensorModel":
        return cls(l_clamp_min=-bound, l_clamp_max=bound, **kw)


# --------------------------------------------------------------------------
# voxel traversal


@njit(cache=True)
def _walk_init(o, e):
    """State for a fast voxel walk in lattice units (voxel size 1)."""
    idx = np.empty(3, dtype=np.int64)
    last = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    tmax = np.full(3, np.inf)
    tdelta = np.full(3, np.inf)
    n = 0
    for a in range(3):
        idx[a] = int(math.floor(o[a]))
        last[a] = int(math.floor(e[a]))
        d = e[a] - o[a]
        if d > 0.0:
            step[a] = 1
            tmax[a] = (idx[a] + 1 - o[a]) / d
            tdelta[a] = 1.0 / d
        elif d < 0.0:
            step[a] = -1
            tmax[a] = (idx[a] - o[a]) / d
            tdelta[a] = -1.0 / d
        n += abs(last[a] - idx[a])
    return idx, step, tmax, tdelta, n


@njit(cache=True)
def _advance(idx, step, tmax, tdelta):
    a = 0
    if tmax[1] < tmax[a]:
        a = 1
    if tmax[2] < tmax[a]:
        a = 2
    idx[a] += step[a]
    tmax[a] += tdelta[a]


@njit(cache=True)
def _traverse_one(o, e, out):
    idx, step, tmax, tdelta, n = _walk_init(o, e)
    for a in range(3):
        out[0, a] = idx[a]
    for s in range(n):
        _advance(idx, step, tmax, tdelta)
        for a in range(3):
            out[s + 1, a] = idx[a]
    return n + 1


def traverse_voxels(a, b, resolution: float) -> np.ndarray:
    """Global voxel indices visited by the segment ``a -> b``, in order.

    The first row is the voxel containing ``a`` and the last row the voxel
    containing ``b``.
    """
    o = np.asarray(a, dtype=float) / resolution
    e = np.asarray(b, dtype=float) / resolution
    n = int(np.abs(np.floor(e) - np.floor(o)).sum()) + 1
    out = np.empty((n, 3), dtype=np.int64)
    k = _traverse_one(o, e, out)
    return out[:k]


@njit(cache=True)
def _segment_hits_box(o, e, lo, hi):
    """Slab test of segment o->e against the closed box [lo, hi]."""
    t0 = 0.0
    t1 = 1.0
    for a in range(3):
        d = e[a] - o[a]
        if d == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return False
        else:
            ta = (lo[a] - o[a]) / d
            tb = (hi[a] - o[a]) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit(cache=True)
def _axis_init(o, e):
    i = int(math.floor(o))
    d = e - o
    if d > 0.0:
        return i, 1, (i + 1 - o) / d, 1.0 / d
    if d < 0.0:
        return i, -1, (i - o) / d, -1.0 / d
    return i, 0, np.inf, np.inf


@njit(cache=True)
def _integrate_rays(cells, offset, origins, ends, hit, res, l_hit, l_miss, lo, hi):
    """Add ray updates to ``cells`` for voxels whose local index is in [lo, hi).

    ``origins`` is (N, 3) or (1, 3) (shared origin). Rays are processed
    serially so the floating-point result is independent of threading. The
    walk is the same as ``_walk_init``/``_advance``, unrolled into scalars.
    """
    n = ends.shape[0]
    shared = origins.shape[0] == 1
    o = np.empty(3)
    e = np.empty(3)
    blo = np.empty(3)
    bhi = np.empty(3)
    for a in range(3):
        blo[a] = offset[a] + lo[a]
        bhi[a] = offset[a] + hi[a]
    lo0, lo1, lo2 = lo[0], lo[1], lo[2]
    hi0, hi1, hi2 = hi[0], hi[1], hi[2]
    for r in range(n):
        src = 0 if shared else r
        for a in range(3):
            o[a] = origins[src, a] / res
            e[a] = ends[r, a] / res
        if not _segment_hits_box(o, e, blo, bhi):
            continue
        ix, sx, tx, dx = _axis_init(o[0], e[0])
        iy, sy, ty, dy = _axis_init(o[1], e[1])
        iz, sz, tz, dz = _axis_init(o[2], e[2])
        m = (abs(int(math.floor(e[0])) - ix) + abs(int(math.floor(e[1])) - iy)
             + abs(int(math.floor(e[2])) - iz))
        i = ix - offset[0]
        j = iy - offset[1]
        k = iz - offset[2]
        for s in range(m + 1):
            if s > 0:
                if ty < tx:
                    if tz < ty:
                        k += sz
                        tz += dz
                    else:
                        j += sy
                        ty += dy
                elif tz < tx:
                    k += sz
                    tz += dz
                else:
                    i += sx
                    tx += dx
            if lo0 <= i < hi0 and lo1 <= j < hi1 and lo2 <= k < hi2:
                if s == m and hit[r]:
                    cells[i, j, k] += l_hit
                else:
                    cells[i, j, k] += l_miss


# --------------------------------------------------------------------------
# grid


@dataclass(eq=False)
class LocalGrid:
    """Dense log-odds grid; ``offset`` is the global index of voxel (0, 0, 0).

    Cells at 0 are at the prior. ``l0`` is kept as bookkeeping for callers that
    want absolute log-odds (``cells + l0``).
    """

    offset: np.ndarray
    resolution: float
    dims: tuple
    cells: np.ndarray = None
    l0: float = 0.0

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.int64).reshape(3).copy()
        self.dims = tuple(int(d) for d in self.dims)
        if self.resolution <= 0 or min(self.dims) < 1:
            raise ValueError("grid needs positive resolution and dims")
        if self.cells is None:
            self.cells = np.zeros(self.dims)
        elif self.cells.shape != self.dims:
            raise ValueError("cells shape does not match dims")

    @classmethod
    def centered(cls, center, resolution: float, dims) -> "LocalGrid":
        return cls(center_offset(center, resolution, dims), resolution, dims)

    @classmethod
    def covering(cls, box: Aabb, resolution: float) -> "LocalGrid":
        lo = np.floor(box.min / resolution).astype(np.int64)
        hi = np.ceil(box.max / resolution).astype(np.int64)
        return cls(lo, resolution, tuple(np.maximum(hi - lo, 1)))

    @property
    def origin(self) -> np.ndarray:
        return self.offset * self.resolution

    @property
    def bounds(self) -> Aabb:
        return Aabb(self.origin, (self.offset + np.array(self.dims)) * self.resolution)

    @property
    def index_box(self) -> Aabb:
        return Aabb(self.offset, self.offset + np.array(self.dims))

    def copy(self) -> "LocalGrid":
        return LocalGrid(self.offset, self.resolution, self.dims, self.cells.copy(), self.l0)

    def local_index(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 3)
        return np.floor(p / self.resolution).astype(np.int64) - self.offset

    def in_grid(self, idx) -> np.ndarray:
        idx = np.asarray(idx).reshape(-1, 3)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)

    def voxel_centers(self, idx) -> np.ndarray:
        idx = np.asarray(idx).reshape(-1, 3)
        return (idx + self.offset + 0.5) * self.resolution

    def value_at(self, pts, default: float = 0.0) -> np.ndarray:
        idx = self.local_index(pts)
        ok = self.in_grid(idx)
        out = np.full(len(idx), default, dtype=float)
        out[ok] = self.cells[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
        return out

    def occupied_mask(self, delta: float = DELTA) -> np.ndarray:
        return self.cells > delta

    def free_mask(self, delta: float = DELTA) -> np.ndarray:
        return self.cells < -delta

    def unknown_mask(self, delta: float = DELTA) -> np.ndarray:
        return np.abs(self.cells) <= delta

    def classify(self, delta: float = DELTA) -> np.ndarray:
        """Tri-state labels: 1 occupied, -1 free, 0 unknown."""
        out = np.zeros(self.dims, dtype=np.int8)
        out[self.cells > delta] = 1
        out[self.cells < -delta] = -1
        return out


def center_offset(center, resolution: float, dims) -> np.ndarray:
    c = np.floor(np.asarray(center, dtype=float) / resolution).astype(np.int64)
    return c - np.asarray(dims, dtype=np.int64) // 2


def _clamp(grid: LocalGrid, ism: InverseSensorModel, box=None):
    if math.isfinite(ism.l_clamp_min) or math.isfinite(ism.l_clamp_max):
        c = grid.cells if box is None else grid.cells[box]
        np.clip(c, ism.l_clamp_min, ism.l_clamp_max, out=c)


def integrate_rays(grid: LocalGrid, origins, ends, hit, ism: InverseSensorModel, lo=None, hi=None) -> None:
    """Raw additive update of rays into ``grid`` (no clamping)."""
    ends = np.ascontiguousarray(np.asarray(ends, dtype=float).reshape(-1, 3))
    origins = np.ascontiguousarray(np.asarray(origins, dtype=float).reshape(-1, 3))
    hit = np.ascontiguousarray(np.asarray(hit, dtype=np.bool_).reshape(-1))
    lo = np.zeros(3, dtype=np.int64) if lo is None else np.asarray(lo, dtype=np.int64)
    hi = np.array(grid.dims, dtype=np.int64) if hi is None else np.asarray(hi, dtype=np.int64)
    if len(ends) == 0:
        return
    _integrate_rays(grid.cells, grid.offset, origins, ends, hit, float(grid.resolution),
                    ism.l_hit, ism.l_miss, lo, hi)


@dataclass(frozen=True)
class Changeset:
    """Voxels whose log-odds changed in one update, with their new values."""

    indices: np.ndarray
    values: np.ndarray
    centers: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def nbytes(self) -> int:
        return CHANGESET_RECORD_BYTES * len(self)

    def encode(self) -> bytes:
        rec = np.empty((len(self), 4), dtype="<f4")
        rec[:, :3] = self.centers
        rec[:, 3] = self.values
        return rec.tobytes()


def decode_changeset(data: bytes) -> np.ndarray:
    """(K, 4) float array of {x, y, z, logodds} records."""
    if len(data) % CHANGESET_RECORD_BYTES:
        raise ValueError("malformed changeset: length is not a multiple of 16")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)


def integrate_observation(grid: LocalGrid, origin, points_world, max_range: float,
                          ism: InverseSensorModel, changeset: bool = True) -> Changeset | None:
    """Raytrace a world-frame scan into ``grid`` and return the changed voxels.

    Points closer than ``max_range`` to ``origin`` mark their voxel with a hit;
    every other traversed voxel (and the end voxel of out-of-range beams) is
    marked free. With ``changeset=False`` nothing is returned.
    """
    pts = np.asarray(points_world, dtype=float).reshape(-1, 3)
    origin = np.asarray(origin, dtype=float).reshape(1, 3)
    hit = np.linalg.norm(pts - origin, axis=1) < max_range
    if not changeset:
        integrate_rays(grid, origin, pts, hit, ism)
        _clamp(grid, ism)
        return None
    # only voxels inside the scan's bounding box can change
    ext = np.vstack([origin, pts]) if len(pts) else origin
    lo = np.clip(np.floor(ext.min(axis=0) / grid.resolution).astype(np.int64) - grid.offset, 0, grid.dims)
    hi = np.clip(np.floor(ext.max(axis=0) / grid.resolution).astype(np.int64) - grid.offset + 1, 0, grid.dims)
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    before = grid.cells[box].copy()
    integrate_rays(grid, origin, pts, hit, ism)
    _clamp(grid, ism, box)
    changed = np.argwhere(grid.cells[box] != before) + lo
    vals = grid.cells[changed[:, 0], changed[:, 1], changed[:, 2]]
    return Changeset(changed, vals, grid.voxel_centers(changed))


def apply_changeset(grid: LocalGrid, cs: Changeset) -> None:
    if len(cs):
        grid.cells[cs.indices[:, 0], cs.indices[:, 1], cs.indices[:, 2]] = cs.values


# --------------------------------------------------------------------------
# reconstruction from stored mixtures


@dataclass
class _KeyframeSamples:
    origin: np.ndarray
    points: np.ndarray
    hit: np.ndarray
    comp: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray


class Reconstructor:
    """Resamples stored keyframes and raytraces the samples into grids.

    Samples of a keyframe come from an RNG seeded with ``(seed, keyframe id)``
    and are cached, so the contribution of a keyframe to any voxel does not
    depend on which region is being rebuilt.
    """

    def __init__(self, gmap: GmmMap, max_range: float = 5.0, ism: InverseSensorModel | None = None,
                 seed: int = 0, max_samples: int = MAX_SAMPLES_PER_COMPONENT, cache_size: int = 4096,
                 density: float = 1.0):
        if not density > 0:
            raise ValueError("density must be positive")
        self.gmap = gmap
        self.density = float(density)
        self.max_range = float(max_range)
        self.ism = ism or InverseSensorModel.clamped()
        self.seed = int(seed)
        self.max_samples = int(max_samples)
        self.cache_size = cache_size
        self._cache: dict[int, _KeyframeSamples] = {}

    def samples(self, kf: Keyframe) -> _KeyframeSamples:
        s = self._cache.get(kf.id)
        if s is not None:
            return s
        rng = np.random.default_rng([self.seed, kf.id])
        expected = self.density * kf.support_size * kf.weights
        counts = np.minimum(np.ceil(expected - 1e-9), self.max_samples).astype(np.int64)
        counts = np.maximum(counts, 0)
        comp = np.repeat(np.arange(kf.n_components), counts)
        if len(comp):
            chol = np.linalg.cholesky(kf.covariances)
            z = rng.standard_normal((len(comp), 3))
            pts = kf.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)
        else:
            pts = np.zeros((0, 3))
        origin = kf.origin_pose.translation.copy()
        # per-component bounding box of all its sample rays, for exact culling
        m = kf.n_components
        lo = np.tile(origin, (m, 1))
        hi = lo.copy()
        if len(comp):
            np.minimum.at(lo, comp, pts)
            np.maximum.at(hi, comp, pts)
        s = _KeyframeSamples(origin, np.ascontiguousarray(pts), comp < kf.n_occupied, comp, lo, hi)
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[kf.id] = s
        return s

    def _apply(self, grid: LocalGrid, kf: Keyframe, lo_idx, hi_idx) -> None:
        s = self.samples(kf)
        if len(s.points) == 0:
            return
        res = grid.resolution
        wlo = (grid.offset + lo_idx) * res
        whi = (grid.offset + hi_idx) * res
        keep_comp = np.all((s.box_lo <= whi) & (s.box_hi >= wlo), axis=1)
        if not keep_comp.any():
            return
        sel = keep_comp[s.comp]
        integrate_rays(grid, s.origin, s.points[sel], s.hit[sel], self.ism, lo_idx, hi_idx)

    def reconstruct_index_box(self, grid: LocalGrid, lo_idx, hi_idx, keyframes=None) -> None:
        """Rebuild local voxels in ``[lo_idx, hi_idx)`` from the map.

        The voxels are expected to be at the prior; contributions are added in
        keyframe order and clamped after each keyframe, which matches the
        incremental integration performed when keyframes arrive.
        """
        lo_idx = np.asarray(lo_idx, dtype=np.int64)
        hi_idx = np.asarray(hi_idx, dtype=np.int64)
        if np.any(hi_idx <= lo_idx):
            return
        if keyframes is None:
            wlo = (grid.offset + lo_idx) * grid.resolution
            whi = (grid.offset + hi_idx) * grid.resolution
            center = 0.5 * (wlo + whi)
            radius = 2.0 * self.max_range + 0.5 * float(np.linalg.norm(whi - wlo))
            kfp, _ = self.gmap.query_indices(center, radius)
            keyframes = [self.gmap.keyframes[p] for p in np.unique(kfp)]
        sub = (slice(lo_idx[0], hi_idx[0]), slice(lo_idx[1], hi_idx[1]), slice(lo_idx[2], hi_idx[2]))
        for kf in keyframes:
            self._apply(grid, kf, lo_idx, hi_idx)
            if math.isfinite(self.ism.l_clamp_min) or math.isfinite(self.ism.l_clamp_max):
                np.clip(grid.cells[sub], self.ism.l_clamp_min, self.ism.l_clamp_max, out=grid.cells[sub])

    def integrate_keyframe(self, grid: LocalGrid, kf: Keyframe) -> None:
        """Add one new keyframe over the whole grid."""
        self.reconstruct_index_box(grid, np.zeros(3, dtype=np.int64), np.array(grid.dims), [kf])


def region_index_range(grid: LocalGrid, region: Aabb) -> tuple[np.ndarray, np.ndarray]:
    """Local index range of voxels whose centers lie in ``region`` (half-open)."""
    res = grid.resolution
    lo = np.ceil(region.min / res - 0.5).astype(np.int64) - grid.offset
    hi = np.ceil(region.max / res - 0.5).astype(np.int64) - grid.offset
    dims = np.array(grid.dims)
    return np.clip(lo, 0, dims), np.clip(hi, 0, dims)


def reconstruct_region(grid: LocalGrid, region: Aabb, rec: Reconstructor) -> None:
    lo, hi = region_index_range(grid, region)
    rec.reconstruct_index_box(grid, lo, hi)


def shift_local_grid(grid: LocalGrid, new_center, rec: Reconstructor | None) -> LocalGrid:
    """Slide the window so it is centered on ``new_center``.

    Voxels in the overlap are copied, voxels in the newly exposed boxes are
    rebuilt from the map, and voxels that leave the window are dropped.
    """
    new_off = center_offset(new_center, grid.resolution, grid.dims)
    if np.array_equal(new_off, grid.offset):
        return grid
    out = LocalGrid(new_off, grid.resolution, grid.dims, None, grid.l0)
    old_box = grid.index_box
    new_box = out.index_box
    inter = new_box.intersection(old_box)
    if inter is not None:
        a = inter.min.astype(np.int64)
        b = inter.max.astype(np.int64)
        src = tuple(slice(a[i] - grid.offset[i], b[i] - grid.offset[i]) for i in range(3))
        dst = tuple(slice(a[i] - new_off[i], b[i] - new_off[i]) for i in range(3))
        out.cells[dst] = grid.cells[src]
    if rec is not None:
        for box in box_set_difference(new_box, old_box):
            rec.reconstruct_index_box(out, box.min.astype(np.int64) - new_off, box.max.astype(np.int64) - new_off)
    return out


# --------------------------------------------------------------------------
# grid services


def binary_entropy_bits(l) -> np.ndarray:
    """Entropy in bits of a Bernoulli variable given its log-odds."""
    a = np.abs(np.asarray(l, dtype=float))
    ea = np.exp(-a)
    q = ea / (1.0 + ea)  # probability of the less likely outcome
    return (np.log1p(ea) + a * q) / math.log(2.0)


def entropy(grid: LocalGrid) -> float:
    return float(binary_entropy_bits(grid.cells).sum())


_SIX = ndimage.generate_binary_structure(3, 1)


def frontier_mask(grid: LocalGrid, delta: float = DELTA) -> np.ndarray:
    unknown = grid.unknown_mask(delta)
    near_unknown = ndimage.binary_dilation(unknown, structure=_SIX, border_value=0)
    return grid.free_mask(delta) & near_unknown


def frontier_voxels(grid: LocalGrid, delta: float = DELTA) -> np.ndarray:
    return np.argwhere(frontier_mask(grid, delta))


def distance_field(sources: np.ndarray, resolution: float) -> np.ndarray:
    """Euclidean distance (meters) from each voxel center to the nearest source voxel center."""
    sources = np.asarray(sources, dtype=bool)
    if not sources.any():
        return np.full(sources.shape, np.inf)
    return ndimage.distance_transform_edt(~sources, sampling=resolution)


def reconstruct_full(gmap: GmmMap, box: Aabb, resolution: float, rec: Reconstructor) -> LocalGrid:
    """Grid covering ``box`` rebuilt from every keyframe of the map, in stream order."""
    grid = LocalGrid.covering(box, resolution)
    rec.reconstruct_index_box(grid, np.zeros(3, dtype=np.int64), np.array(grid.dims), list(gmap.keyframes))
    return grid


def tristate_agreement(grid: LocalGrid, reference: LocalGrid, delta: float = DELTA) -> tuple[float, int]:
    """Fraction of voxels known in ``reference`` whose occupied/free/unknown label matches.

    Both grids must share a lattice; voxels of ``reference`` outside ``grid``
    count as unknown in ``grid``. Returns (agreement, number of compared voxels).
    """
    if not math.isclose(grid.resolution, reference.resolution):
        raise ValueError("grids use different resolutions")
    ref = reference.classify(delta)
    window = extract_window(grid, reference.offset, reference.dims)
    lab = window.classify(delta)
    known = ref != 0
    n = int(known.sum())
    if n == 0:
        return 1.0, 0
    return float((lab[known] == ref[known]).mean()), n


def extract_window(src: LocalGrid, offset, dims, clamp: float = math.inf) -> LocalGrid:
    """Copy of ``src`` seen through a window at ``offset``; voxels outside ``src`` are at the prior."""
    out = LocalGrid(offset, src.resolution, dims)
    a = np.maximum(out.offset, src.offset)
    b = np.minimum(out.offset + np.array(out.dims), src.offset + np.array(src.dims))
    if np.all(b > a):
        s = tuple(slice(a[i] - src.offset[i], b[i] - src.offset[i]) for i in range(3))
        d = tuple(slice(a[i] - out.offset[i], b[i] - out.offset[i]) for i in range(3))
        out.cells[d] = np.clip(src.cells[s], -clamp, clamp)
    return out


def save_grid(path, grid: LocalGrid) -> None:
    """Write a grid as .npz with ``cells``, ``offset`` and ``resolution``."""
    with open(path, "wb") as fh:
        np.savez(fh, cells=grid.cells, offset=grid.offset, resolution=np.float64(grid.resolution))


def load_grid(path) -> LocalGrid:
    with np.load(path) as z:
        try:
            cells = np.array(z["cells"], dtype=float)
            offset = np.array(z["offset"], dtype=np.int64)
            res = float(z["resolution"])
        except KeyError as exc:
            raise ValueError(f"malformed grid file: missing {exc}") from None
    if cells.ndim != 3 or offset.shape != (3,) or not res > 0:
        raise ValueError("malformed grid file: bad shapes")
    return LocalGrid(offset, res, cells.shape, cells)
