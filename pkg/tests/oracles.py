"""Independent reference implementations used by the tests.

Nothing here imports from the package: each oracle recomputes its quantity
from first principles, usually by brute force.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------- rays


def moller_trumbore_all(triangles, origin, directions, eps=1e-12):
    """Nearest hit parameter of every ray against every triangle (vectorized numpy)."""
    tri = np.asarray(triangles, float).reshape(-1, 3, 3)
    d = np.asarray(directions, float).reshape(-1, 3)
    o = np.asarray(origin, float).reshape(3)
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    out = np.full(len(d), np.inf)
    for r in range(len(d)):
        p = np.cross(d[r], e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - v0
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        v = (q @ d[r]) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
        if hit.any():
            out[r] = t[hit].min()
    return out


def dense_voxel_walk(a, b, res, step_frac=0.1, min_dt=1e-13):
    """Voxels touched by segment a->b, by sampling at ``res * step_frac``.

    Wherever two consecutive samples land in voxels that are not face
    neighbours the interval is bisected until they are (or until the parameter
    gap falls below ``min_dt``), so clipped corners are not skipped.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    length = float(np.linalg.norm(b - a))
    n = max(1, int(math.ceil(length / (res * step_frac))))
    ts = np.linspace(0.0, 1.0, n + 1)

    def vox(t):
        return tuple(int(v) for v in np.floor((a + t * (b - a)) / res))

    found = set()
    prev_t, prev_v = 0.0, vox(0.0)
    found.add(prev_v)

    def refine(t0, v0, t1, v1):
        stack = [(t0, v0, t1, v1)]
        while stack:
            t0, v0, t1, v1 = stack.pop()
            if sum(abs(x - y) for x, y in zip(v0, v1)) <= 1 or t1 - t0 < min_dt:
                continue
            tm = 0.5 * (t0 + t1)
            vm = vox(tm)
            found.add(vm)
            stack.append((t0, v0, tm, vm))
            stack.append((tm, vm, t1, v1))

    for t in ts[1:]:
        v = vox(t)
        found.add(v)
        refine(prev_t, prev_v, t, v)
        prev_t, prev_v = t, v
    return found


def uniform_voxel_samples(a, b, res, step_frac=0.1):
    """Plain uniform sampling, without refinement."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / (res * step_frac))))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return {tuple(v) for v in np.floor((a + t * (b - a)) / res).astype(int)}


def segment_length_in_voxel(a, b, res, v):
    """Exact length of segment a->b inside the closed voxel ``v``, by slab clipping."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    lo = np.asarray(v, float) * res
    hi = lo + res
    t0, t1 = 0.0, 1.0
    d = b - a
    for k in range(3):
        if d[k] == 0:
            if a[k] < lo[k] or a[k] > hi[k]:
                return 0.0
            continue
        ta, tb = (lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return max(0.0, t1 - t0) * float(np.linalg.norm(d))


# ---------------------------------------------------------------- volumes


def mc_box_difference_volume(b_new, b_old, n, rng):
    """Monte-Carlo estimate of vol(b_new minus b_old); boxes are (lo, hi) pairs."""
    lo, hi = np.asarray(b_new[0], float), np.asarray(b_new[1], float)
    p = rng.uniform(lo, hi, size=(n, 3))
    olo, ohi = np.asarray(b_old[0], float), np.asarray(b_old[1], float)
    inside_old = np.all((p >= olo) & (p < ohi), axis=1)
    return float(np.prod(hi - lo)) * float(np.mean(~inside_old))


def _point_in_tetra(p, t):
    """Barycentric membership of points p (N, 3) in tetrahedron t (4, 3)."""
    m = np.column_stack([t[1] - t[0], t[2] - t[0], t[3] - t[0]])
    lam = np.linalg.solve(m, (p - t[0]).T).T
    return np.all(lam >= 0, axis=1) & (lam.sum(axis=1) <= 1)


def point_in_pyramid(p, apex, corners):
    """Membership in the pyramid with the given apex and base quad (cyclic corner order)."""
    c = np.asarray(corners, float)
    a = np.asarray(apex, float)
    t0 = np.array([a, c[0], c[1], c[2]])
    t1 = np.array([a, c[0], c[2], c[3]])
    return _point_in_tetra(p, t0) | _point_in_tetra(p, t1)


def pyramid_volume(apex, corners):
    c = np.asarray(corners, float)
    a = np.asarray(apex, float)
    v = 0.0
    for t in (np.array([a, c[0], c[1], c[2]]), np.array([a, c[0], c[2], c[3]])):
        v += abs(np.linalg.det(t[1:] - t[0])) / 6.0
    return v


def mc_pyramid_overlap(a_apex, a_corners, b_apex, b_corners, n, rng):
    """Fraction of pyramid a inside pyramid b by rejection sampling in a's bounding box."""
    pts_a = np.vstack([a_apex, a_corners])
    lo, hi = pts_a.min(axis=0), pts_a.max(axis=0)
    p = rng.uniform(lo, hi, size=(n, 3))
    in_a = point_in_pyramid(p, a_apex, a_corners)
    in_b = point_in_pyramid(p[in_a], b_apex, b_corners)
    return float(in_b.mean()) if in_a.any() else 0.0


def pyramid_from_pose(position, yaw, h_fov, v_fov, r):
    """Frustum pyramid of a camera looking along +x of a yaw-rotated body frame."""
    tx, ty = math.tan(h_fov / 2), math.tan(v_fov / 2)
    body = r * np.array([[1, -tx, -ty], [1, tx, -ty], [1, tx, ty], [1, -tx, ty]], float)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    p = np.asarray(position, float)
    return p, body @ rot.T + p


# ---------------------------------------------------------------- grids and fields


def brute_distance_field(sources, res):
    """Distance from every voxel center to its nearest source voxel center, by full scan."""
    src = np.argwhere(sources)
    shape = sources.shape
    if len(src) == 0:
        return np.full(shape, np.inf)
    allv = np.indices(shape).reshape(3, -1).T
    d2 = ((allv[:, None, :] - src[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return np.sqrt(d2).reshape(shape) * res


def binary_entropy(p):
    p = np.asarray(p, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.nan_to_num(h)


def brute_frontiers(cells, delta):
    free = cells < -delta
    unknown = np.abs(cells) <= delta
    out = np.zeros_like(free)
    nx, ny, nz = cells.shape
    for i, j, k in np.argwhere(free):
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + di, j + dj, k + dk
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and unknown[a, b, c]:
                out[i, j, k] = True
    return out


# ---------------------------------------------------------------- information


def csqmi_enumerated(probs):
    """Cauchy-Schwarz quadratic MI (bits) between cells and the first-hit measurement, by enumerating every map."""
    n = len(probs)
    joint = []
    pz = {}
    for m in itertools.product((0, 1), repeat=n):
        pm = 1.0
        for p, occ in zip(probs, m):
            pm *= p if occ else 1 - p
        z = m.index(1) if 1 in m else n
        joint.append((pm, z))
        pz[z] = pz.get(z, 0.0) + pm
    a = sum(pm * pm for pm, _ in joint)
    b = a * sum(v * v for v in pz.values())
    c = sum(pm * pm * pz[z] for pm, z in joint)
    return math.log2(a * b / (c * c))


# ---------------------------------------------------------------- mixtures


def gaussian_pdf(x, mean, cov):
    x = np.atleast_2d(x)
    d = x - mean
    inv = np.linalg.inv(cov)
    q = np.einsum("ni,ij,nj->n", d, inv, d)
    return np.exp(-0.5 * q) / math.sqrt((2 * math.pi) ** 3 * np.linalg.det(cov))


def mixture_pdf(x, weights, means, covs):
    return sum(w * gaussian_pdf(x, m, c) for w, m, c in zip(weights, means, covs))


def arc_endpoint(x0, y0, th0, v, w, t):
    """Closed-form unicycle endpoint; straight line when w == 0."""
    if w == 0:
        return x0 + v * t * math.cos(th0), y0 + v * t * math.sin(th0), th0
    return (x0 + v / w * (math.sin(th0 + w * t) - math.sin(th0)),
            y0 - v / w * (math.cos(th0 + w * t) - math.cos(th0)),
            th0 + w * t)


def arc_endpoint_quadrature(x0, y0, th0, v, w, t):
    """Endpoint by adaptive quadrature of the unicycle velocity; well conditioned for tiny w."""
    from scipy.integrate import quad

    dx, _ = quad(lambda s: v * math.cos(th0 + w * s), 0.0, t, epsabs=1e-14, epsrel=1e-13)
    dy, _ = quad(lambda s: v * math.sin(th0 + w * s), 0.0, t, epsabs=1e-14, epsrel=1e-13)
    return x0 + dx, y0 + dy, th0 + w * t
