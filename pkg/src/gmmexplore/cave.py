"""Procedural cave environments and the ASCII PLY mesh format.

A cave is carved from a solid block: ellipsoidal chambers joined by capsule
tunnels, with the walls roughened by smooth value noise. The carved region is
meshed with marching cubes.

PLY grammar accepted by :func:`load_ply` (ASCII only)::

    ply
    format ascii 1.0
    comment <free text>                     (any number)
    comment bounds xmin ymin zmin xmax ymax zmax
    comment start x y z                     (one per start position)
    element vertex N
    property float x
    property float y
    property float z
    element face M
    property list uchar int vertex_indices
    end_header
    x y z                                   (N lines)
    3 i j k                                 (M lines, triangles only)
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from skimage.measure import marching_cubes

from .occupancy import Aabb


@dataclass(eq=False)
class Environment:
    vertices: np.ndarray
    faces: np.ndarray
    bounds: Aabb
    start_positions: np.ndarray
    free_mask: np.ndarray | None = None
    lattice: float = 0.25

    def mesh_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


def _value_noise(shape, cell: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth noise in [-1, 1]: random values on a coarse lattice, trilinearly interpolated."""
    coarse = [s // cell + 2 for s in shape]
    knots = rng.uniform(-1.0, 1.0, coarse)
    coords = np.meshgrid(*[np.arange(s) / cell for s in shape], indexing="ij")
    return ndimage.map_coordinates(knots, coords, order=1, mode="nearest")


def _capsule_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(float(ab @ ab), 1e-12), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(p - closest, axis=1)


def generate_cave(seed: int = 0, dims=(20.0, 20.0, 4.0), lattice: float = 0.25, n_chambers: int = 5,
                  margin: float = 0.5, n_starts: int = 4, chamber_radius=(3.0, 4.0),
                  tunnel_radius=(1.3, 1.5), roughness: float = 0.12) -> Environment:
    """Carve a connected multi-chamber cave and mesh its walls."""
    rng = np.random.default_rng(seed)
    dims = np.asarray(dims, dtype=float)
    shape = tuple(int(round(d / lattice)) for d in dims)
    centers = np.stack(np.meshgrid(*[(np.arange(s) + 0.5) * lattice for s in shape], indexing="ij"), -1)
    pts = centers.reshape(-1, 3)
    zmid = 0.5 * dims[2]

    # chambers spread by rejection sampling on the horizontal plane
    chambers = []
    lo_xy = margin + 0.6 * chamber_radius[0]
    for _ in range(2000):
        if len(chambers) == n_chambers:
            break
        c = np.array([rng.uniform(lo_xy, dims[0] - lo_xy), rng.uniform(lo_xy, dims[1] - lo_xy),
                      zmid + rng.uniform(-0.2, 0.2) * dims[2]])
        if all(np.linalg.norm(c[:2] - o[:2]) > 1.6 * chamber_radius[0] for o in chambers):
            chambers.append(c)
    chambers = np.array(chambers)
    radii = np.column_stack([
        rng.uniform(*chamber_radius, len(chambers)),
        rng.uniform(*chamber_radius, len(chambers)),
        np.minimum(rng.uniform(1.3, 1.7, len(chambers)), 0.5 * dims[2] - margin),
    ])

    # implicit field: negative inside carved space
    f = np.full(len(pts), np.inf)
    for c, r in zip(chambers, radii):
        f = np.minimum(f, np.linalg.norm((pts - c) / r, axis=1) - 1.0)
    # tunnels along a minimum spanning tree plus one extra loop
    d = np.linalg.norm(chambers[:, None, :2] - chambers[None, :, :2], axis=2)
    mst = minimum_spanning_tree(csr_matrix(d)).tocoo()
    edges = list(zip(mst.row.tolist(), mst.col.tolist()))
    extra = [(i, j) for i in range(len(chambers)) for j in range(i + 1, len(chambers))
             if (i, j) not in edges and (j, i) not in edges]
    if extra:
        edges.append(extra[int(np.argmin([d[i, j] for i, j in extra]))])
    for i, j in edges:
        r_t = rng.uniform(*tunnel_radius)
        r_t = min(r_t, 0.5 * dims[2] - margin)
        f = np.minimum(f, _capsule_distance(pts, chambers[i], chambers[j]) / r_t - 1.0)

    noise = _value_noise(shape, max(2, int(round(1.0 / lattice))), rng).reshape(-1)
    f = f + roughness * noise
    f = f.reshape(shape)
    # solid shell at the borders
    for a in range(3):
        k = max(1, int(math.ceil(margin / lattice)))
        sl = [slice(None)] * 3
        sl[a] = slice(0, k)
        f[tuple(sl)] = np.maximum(f[tuple(sl)], 0.5)
        sl[a] = slice(shape[a] - k, shape[a])
        f[tuple(sl)] = np.maximum(f[tuple(sl)], 0.5)

    free = f < 0
    labels, n = ndimage.label(free)
    if n == 0:
        raise RuntimeError("cave generation carved no free space")
    sizes = ndimage.sum(free, labels, index=np.arange(1, n + 1))
    keep = labels == (1 + int(np.argmax(sizes)))
    f = np.where(keep, f, np.maximum(f, 0.05))
    free = keep

    # starts: high-clearance free cells, spread out by farthest-point selection
    clearance = ndimage.distance_transform_edt(free, sampling=lattice)
    cand = np.argwhere(clearance >= min(1.2, 0.8 * clearance.max()))
    cand_xyz = (cand + 0.5) * lattice
    first = int(np.argmax(clearance[tuple(cand.T)]))
    chosen = [first]
    dist = np.linalg.norm(cand_xyz - cand_xyz[first], axis=1)
    while len(chosen) < n_starts:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(cand_xyz - cand_xyz[nxt], axis=1))
    starts = cand_xyz[chosen]

    padded = np.pad(f, 1, mode="constant", constant_values=1.0)
    verts, faces, _, _ = marching_cubes(padded, level=0.0, spacing=(lattice,) * 3)
    verts = verts - lattice + 0.5 * lattice  # undo padding, move to cell centers
    return Environment(
        verts.astype(float), faces.astype(np.int64), Aabb(np.zeros(3), dims), starts, free, lattice
    )


def save_ply(env: Environment, path) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        "comment gmmexplore cave",
        "comment bounds " + " ".join(repr(float(v)) for v in (*env.bounds.min, *env.bounds.max)),
    ]
    lines += ["comment start " + " ".join(repr(float(v)) for v in s) for s in env.start_positions]
    lines += [
        f"element vertex {len(env.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(env.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = [" ".join(repr(float(c)) for c in v) for v in env.vertices]
    body += ["3 " + " ".join(str(int(i)) for i in f) for f in env.faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines + body) + "\n")


class MeshFormatError(ValueError):
    pass


def load_ply(path) -> Environment:
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text or text[0].strip() != "ply":
        raise MeshFormatError("not a PLY file")
    n_vert = n_face = None
    starts, bounds = [], None
    i = 1
    while i < len(text):
        tok = text[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format" and tok[1:2] != ["ascii"]:
            raise MeshFormatError("only ASCII PLY is supported")
        if tok[0] == "comment" and len(tok) >= 2:
            if tok[1] == "start" and len(tok) == 5:
                starts.append([float(v) for v in tok[2:]])
            elif tok[1] == "bounds" and len(tok) == 8:
                bounds = [float(v) for v in tok[2:]]
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vert = int(tok[2])
            elif tok[1] == "face":
                n_face = int(tok[2])
    else:
        raise MeshFormatError("missing end_header")
    if n_vert is None or n_face is None:
        raise MeshFormatError("missing vertex or face element")
    try:
        verts = np.array([[float(v) for v in text[i + k].split()[:3]] for k in range(n_vert)])
        faces = []
        for k in range(n_face):
            tok = text[i + n_vert + k].split()
            if int(tok[0]) != 3:
                raise MeshFormatError("only triangular faces are supported")
            faces.append([int(t) for t in tok[1:4]])
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    except (IndexError, ValueError) as exc:
        raise MeshFormatError(f"bad vertex/face data: {exc}") from exc
    if len(faces) and (faces.min() < 0 or faces.max() >= n_vert):
        raise MeshFormatError("face index out of range")
    verts = verts.reshape(-1, 3)
    if bounds is None:
        bounds = [*verts.min(axis=0), *verts.max(axis=0)]
    return Environment(verts, faces, Aabb(bounds[:3], bounds[3:]), np.array(starts).reshape(-1, 3))
