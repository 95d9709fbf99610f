"""Keyframe storage, spatial lookup of component means and the binary wire format.

Wire layout of one keyframe (all little-endian)::

    header   4s magic b"GMKF" | u32 version | u32 occupied count | u32 free count
    payload  f32 x 6      pose (x, y, z, roll, pitch, yaw)
             f32 x 1      support size (occupied + free points)
             f32 x 10 M   per component: weight, mean (3), covariance upper triangle
                          (c00, c01, c02, c11, c12, c22); occupied components first

Payload length is ``4 * (10 * M + 7)`` bytes; only the payload is counted when
reporting transmitted bytes. Weights on the wire are joint weights over the
occupied and free components of the keyframe, i.e. the support-weighted merge
of the two mixtures. The keyframe id is not transmitted: it is the position of
the record in the stream.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .gmm import EPS_COV, GaussianComponent, Gmm, merge_gmms
from .transforms import Pose

MAGIC = b"GMKF"
VERSION = 1
HEADER = struct.Struct("<4sIII")
HEADER_BYTES = HEADER.size
_TRIU = (np.array([0, 0, 0, 1, 1, 2]), np.array([0, 1, 2, 1, 2, 2]))


def payload_bytes(n_components: int) -> int:
    return 4 * (10 * int(n_components) + 7)


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


def _quantize_angle(a: float) -> float:
    q = np.float32(a)
    if float(q) > math.pi:
        q = np.nextafter(q, np.float32(0))
    elif float(q) <= -math.pi:
        q = np.nextafter(q, np.float32(0))
    return float(q)


def _quantize_pose(pose: Pose) -> Pose:
    t = _f32(pose.translation)
    r = [_quantize_angle(a) for a in pose.rpy]
    return Pose(t, np.array(r))


def _quantize_covariances(c: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(c)
    for k in range(len(c)):
        m = c[k]
        floor = eps
        for _ in range(20):
            q = _f32(m)
            q = np.triu(q) + np.triu(q, 1).T
            if np.linalg.eigvalsh(q)[0] >= eps:
                break
            floor *= 1.5
            w, v = np.linalg.eigh(0.5 * (m + m.T))
            m = (v * np.maximum(w, floor)) @ v.T
        out[k] = q
    return out


@dataclass(frozen=True, eq=False)
class Keyframe:
    """Stored observation: sensor pose plus occupied and free mixtures.

    The keyframe keeps one joint mixture (occupied components first) with all
    floats quantized to what the wire format can carry, so serialization is
    lossless in both directions. Quantized joint weights sum to one only up to
    float32 rounding; the mixtures handed out by ``occupied``, ``free`` and
    ``joint`` are renormalized in double precision.
    """

    id: int
    origin_pose: Pose
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    n_occupied: int
    support_size: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float).reshape(-1, 3)
        cov = np.array(self.covariances, dtype=float).reshape(-1, 3, 3)
        if not (len(w) == len(mu) == len(cov)) or not (0 <= self.n_occupied <= len(w)):
            raise ValueError("inconsistent keyframe arrays")
        if len(w) and self.support_size < 1:
            raise ValueError("nonempty keyframe needs support_size >= 1")
        if self.support_size >= 2**24:
            raise ValueError("support size not representable on the wire")
        if len(w):
            w = _f32(w)
            cov = _quantize_covariances(cov, EPS_COV)
        mu = _f32(mu)
        for a in (w, mu, cov):
            a.setflags(write=False)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "origin_pose", _quantize_pose(self.origin_pose))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "n_occupied", int(self.n_occupied))
        object.__setattr__(self, "support_size", int(self.support_size))

    @classmethod
    def from_mixtures(cls, id: int, origin_pose: Pose, occupied: Gmm, free: Gmm) -> "Keyframe":
        joint = merge_gmms(occupied, free)
        return cls(id, origin_pose, joint.weights, joint.means, joint.covariances, len(occupied), joint.support_size)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def n_free(self) -> int:
        return len(self.weights) - self.n_occupied

    def _part(self, sl: slice) -> Gmm:
        w = self.weights[sl]
        if len(w) == 0:
            return Gmm.empty()
        s = float(w.sum())
        n = max(1, int(np.rint(self.support_size * s)))
        return Gmm(w / s, self.means[sl], self.covariances[sl], n)

    @property
    def joint(self) -> Gmm:
        return self._part(slice(0, None))

    @property
    def occupied(self) -> Gmm:
        return self._part(slice(0, self.n_occupied))

    @property
    def free(self) -> Gmm:
        return self._part(slice(self.n_occupied, None))

    def with_id(self, new_id: int) -> "Keyframe":
        return Keyframe(new_id, self.origin_pose, self.weights, self.means, self.covariances,
                        self.n_occupied, self.support_size)

    def same_content(self, other: "Keyframe") -> bool:
        """Bitwise equality of every field."""
        return (
            self.id == other.id
            and self.origin_pose == other.origin_pose
            and self.n_occupied == other.n_occupied
            and self.support_size == other.support_size
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )


def serialize_keyframe(kf: Keyframe) -> bytes:
    m = kf.n_components
    body = np.empty(7 + 10 * m, dtype="<f4")
    body[:6] = kf.origin_pose.as_array()
    body[6] = kf.support_size
    if m:
        rec = body[7:].reshape(m, 10)
        rec[:, 0] = kf.weights
        rec[:, 1:4] = kf.means
        rec[:, 4:] = kf.covariances[:, _TRIU[0], _TRIU[1]]
    return HEADER.pack(MAGIC, VERSION, kf.n_occupied, kf.n_free) + body.tobytes()


def _malformed(why: str):
    return ValueError(f"malformed keyframe: {why}")


def deserialize_keyframe(data: bytes, id: int = 0) -> Keyframe:
    kf, used = _read_one(memoryview(data), 0, id)
    if used != len(data):
        raise _malformed("trailing bytes")
    return kf


def _read_one(buf: memoryview, offset: int, id: int) -> tuple[Keyframe, int]:
    if len(buf) - offset < HEADER_BYTES:
        raise _malformed("truncated header")
    magic, version, n_occ, n_free = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise _malformed("bad magic")
    if version != VERSION:
        raise _malformed(f"unsupported version {version}")
    m = n_occ + n_free
    size = payload_bytes(m)
    start = offset + HEADER_BYTES
    if len(buf) - start < size:
        raise _malformed("truncated payload")
    body = np.frombuffer(buf[start:start + size], dtype="<f4").astype(np.float64)
    if not np.isfinite(body).all():
        raise _malformed("non-finite value")
    pose = body[:6]
    if np.any(np.abs(pose[3:]) > math.pi):
        raise _malformed("angle out of range")
    support = body[6]
    if support != np.rint(support) or support < (1 if m else 0):
        raise _malformed("bad support size")
    rec = body[7:].reshape(m, 10)
    w = rec[:, 0]
    if m and (np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-4):
        raise _malformed("weights are not a distribution")
    cov = np.zeros((m, 3, 3))
    cov[:, _TRIU[0], _TRIU[1]] = rec[:, 4:]
    cov[:, _TRIU[1], _TRIU[0]] = rec[:, 4:]
    if m and np.linalg.eigvalsh(cov)[:, 0].min() <= 0:
        raise _malformed("covariance not positive definite")
    kf = Keyframe(id, Pose.from_array(pose), w, rec[:, 1:4], cov, n_occ, int(support))
    return kf, start + size


def read_keyframe_stream(data: bytes) -> list[Keyframe]:
    buf = memoryview(data)
    out = []
    offset = 0
    while offset < len(buf):
        kf, offset = _read_one(buf, offset, len(out))
        out.append(kf)
    return out


def write_keyframe_stream(keyframes) -> bytes:
    return b"".join(serialize_keyframe(k) for k in keyframes)


@dataclass(frozen=True)
class ComponentRef:
    keyframe_id: int
    index: int
    occupied: bool
    component: GaussianComponent


class GmmMap:
    """Keyframe store with a k-d tree over every component mean.

    The tree is rebuilt lazily on the first query after an insert.
    """

    def __init__(self):
        self.keyframes: list[Keyframe] = []
        self._by_id: dict[int, int] = {}
        self._means: list[np.ndarray] = []
        self._kf_pos: list[np.ndarray] = []
        self._comp: list[np.ndarray] = []
        self._tree = None
        self._cat = None

    def __len__(self):
        return len(self.keyframes)

    @property
    def n_components(self) -> int:
        return sum(k.n_components for k in self.keyframes)

    def insert(self, kf: Keyframe) -> None:
        if kf.id in self._by_id:
            raise ValueError(f"duplicate keyframe id {kf.id}")
        if self.keyframes and kf.id < self.keyframes[-1].id:
            raise ValueError("keyframe ids must be increasing")
        pos = len(self.keyframes)
        self.keyframes.append(kf)
        self._by_id[kf.id] = pos
        self._means.append(kf.means)
        self._kf_pos.append(np.full(kf.n_components, pos, dtype=np.int64))
        self._comp.append(np.arange(kf.n_components, dtype=np.int64))
        self._tree = None

    def get(self, kf_id: int) -> Keyframe:
        return self.keyframes[self._by_id[kf_id]]

    def stored_origins(self) -> np.ndarray:
        if not self.keyframes:
            return np.zeros((0, 3))
        return np.array([k.origin_pose.translation for k in self.keyframes])

    def _index(self):
        if self._tree is None:
            means = np.concatenate(self._means) if self._means else np.zeros((0, 3))
            kfp = np.concatenate(self._kf_pos) if self._kf_pos else np.zeros(0, dtype=np.int64)
            cmp_ = np.concatenate(self._comp) if self._comp else np.zeros(0, dtype=np.int64)
            self._cat = (means, kfp, cmp_)
            self._tree = cKDTree(means) if len(means) else None
        return self._tree, self._cat

    def query_indices(self, center, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """(keyframe position, component index) arrays within ``radius``, sorted."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        tree, cat = self._index()
        if tree is None:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        means, kfp, cmp_ = cat
        if math.isinf(radius):
            hits = np.arange(len(means))
        else:
            hits = np.asarray(tree.query_ball_point(np.asarray(center, dtype=float), radius), dtype=np.int64)
            hits.sort()
        return kfp[hits], cmp_[hits]

    def query_components(self, center, radius: float) -> list[ComponentRef]:
        kfp, cmp_ = self.query_indices(center, radius)
        out = []
        for p, c in zip(kfp, cmp_):
            kf = self.keyframes[p]
            out.append(
                ComponentRef(
                    kf.id,
                    int(c),
                    bool(c < kf.n_occupied),
                    GaussianComponent(float(kf.weights[c]), kf.means[c], kf.covariances[c]),
                )
            )
        return out
