"""Forward-arc motion primitives, action spaces and greedy information-driven action selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .occupancy import DELTA, Aabb, LocalGrid, distance_field, frontier_mask
from .transforms import wrap_angle

# twist components: (v_x body, v_y body, v_z, yaw rate)
TWIST_DIM = 4
STOP_DISTANCE_FACTOR = 3.0 / 7.0  # integral of the stop profile over [0, 1]


@dataclass(frozen=True)
class RobotState:
    """Pose (x, y, z, yaw) plus the commanded twist and its derivatives up to snap."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    twist: tuple = (0.0, 0.0, 0.0, 0.0)
    twist_derivatives: tuple = ((0.0,) * 4,) * 3

    def __post_init__(self):
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))
        object.__setattr__(self, "twist", tuple(float(v) for v in self.twist))
        object.__setattr__(
            self, "twist_derivatives", tuple(tuple(float(v) for v in row) for row in self.twist_derivatives)
        )

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def pose4(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw])

    def world_velocity(self) -> np.ndarray:
        vx, vy, vz, w = self.twist
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c * vx - s * vy, s * vx + c * vy, vz, w])

    @property
    def at_rest(self) -> bool:
        return not any(self.twist)


@dataclass(frozen=True)
class PlannerConfig:
    v_max_xy: float = 0.75
    v_max_z: float = 0.5
    omega_max: float = 0.25
    tau: float = 3.0
    k: int = 1
    c: float = 1.0
    r_coll: float = 0.4
    dt: float = 0.1
    n_omega: int = 3
    n_z: int = 5
    n_yaw_z: int = 5
    max_range: float = 5.0
    free_bubble: float = 0.9

    def __post_init__(self):
        for name in ("v_max_xy", "v_max_z", "omega_max", "tau", "r_coll", "dt", "max_range"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 1 or self.n_omega < 1 or self.n_z < 1 or self.n_yaw_z < 1:
            raise ValueError("k and discretization counts must be >= 1")
        if self.c < 0 or self.free_bubble < 0:
            raise ValueError("c and free_bubble must be non-negative")


def arc_integrals(omega: float, t):
    """(S, C) with S = sin(w t)/w and C = (1 - cos(w t))/w, continuous at w = 0."""
    t = np.array(t, dtype=float, ndmin=1)
    x = omega * t
    if omega == 0.0:
        return t.copy(), np.zeros_like(t)
    small = np.abs(x) < 1e-4
    s = t * (1.0 - x * x / 6.0 + x**4 / 120.0)
    c = 0.5 * x * t * (1.0 - x * x / 12.0 + x**4 / 360.0)
    big = ~small
    s[big] = np.sin(x[big]) / omega
    half = np.sin(0.5 * x[big])
    c[big] = 2.0 * half * half / omega
    return s, c


def arc_pose(start: RobotState, twist, sigma) -> np.ndarray:
    """Poses (N, 4) reached after following ``twist`` for arc time ``sigma`` from ``start``."""
    vx, vy, vz, w = (float(v) for v in twist)
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    s, c = arc_integrals(w, sigma)
    c0, s0 = math.cos(start.yaw), math.sin(start.yaw)
    # integral of the body velocity rotated by yaw(t)
    ix_cos = c0 * s - s0 * c
    ix_sin = s0 * s + c0 * c
    x = start.x + vx * ix_cos - vy * ix_sin
    y = start.y + vx * ix_sin + vy * ix_cos
    z = start.z + vz * sigma
    yaw = start.yaw + w * sigma
    return np.stack([x, y, z, yaw], axis=1)


def stop_profile(u):
    """Speed scale g(u) = (1-u)^4 (1 + 4u + 10u^2) and its first three derivatives.

    g(0) = 1 with g' = g'' = 0 there, and g and its first three derivatives
    vanish at u = 1, so velocity, acceleration, jerk and snap reach zero
    together.
    """
    u = np.asarray(u, dtype=float)
    w = 1.0 - u
    g = w**4 * (1 + 4 * u + 10 * u * u)
    g1 = -60.0 * u * u * w**3
    g2 = -120.0 * u * w**3 + 180.0 * u * u * w**2
    g3 = -120.0 * w**3 + 720.0 * u * w**2 - 360.0 * u * u * w
    return g, g1, g2, g3


def stop_arc_time(u):
    """Integral of g over [0, u]."""
    u = np.asarray(u, dtype=float)
    w = 1.0 - u

    def anti(v):
        # antiderivative of v^4 (15 - 24 v + 10 v^2), the profile written in v = 1 - u
        return 3.0 * v**5 - 4.0 * v**6 + (10.0 / 7.0) * v**7

    return anti(1.0) - anti(w)


@dataclass(frozen=True, eq=False)
class MotionPrimitive:
    start: RobotState
    command: tuple
    duration: float
    times: np.ndarray
    poses: np.ndarray
    twists: np.ndarray
    kind: str = "arc"
    mpl_id: int = -1
    index: int = -1

    @property
    def end(self) -> np.ndarray:
        return self.poses[-1]

    def state_at(self, t: float) -> RobotState:
        """State at time ``t`` (clamped to the primitive), including twist derivatives."""
        t = min(max(float(t), 0.0), self.duration)
        if self.kind == "arc":
            pose = arc_pose(self.start, self.command, t)[0]
            return RobotState(*pose, twist=self.command)
        u = t / self.duration if self.duration > 0 else 1.0
        sigma = self.duration * float(stop_arc_time(u))
        pose = arc_pose(self.start, self.command, sigma)[0]
        g, g1, g2, g3 = (float(v) for v in stop_profile(u))
        cmd = np.asarray(self.command)
        d = self.duration
        derivs = (tuple(cmd * g1 / d), tuple(cmd * g2 / d**2), tuple(cmd * g3 / d**3))
        return RobotState(*pose, twist=tuple(cmd * g), twist_derivatives=derivs)


def _sample_times(duration: float, dt: float) -> np.ndarray:
    n = max(1, int(math.ceil(duration / dt - 1e-9)))
    return np.linspace(0.0, duration, n + 1)


def forward_arc(start: RobotState, command, tau: float, dt: float = 0.1, mpl_id: int = -1,
                index: int = -1) -> MotionPrimitive:
    """Constant-twist arc: body velocity and yaw rate held at ``command`` for ``tau`` seconds."""
    command = tuple(float(v) for v in command)
    times = _sample_times(tau, dt)
    poses = arc_pose(start, command, times)
    twists = np.tile(command, (len(times), 1))
    return MotionPrimitive(start, command, float(tau), times, poses, twists, "arc", mpl_id, index)


def stopping_primitive(state: RobotState, tau: float = 3.0, dt: float = 0.1) -> MotionPrimitive:
    """Bring the twist of ``state`` smoothly to zero over ``tau`` seconds along the current arc."""
    command = state.twist
    times = _sample_times(tau, dt)
    u = times / tau
    sigma = tau * stop_arc_time(u)
    start = RobotState(state.x, state.y, state.z, state.yaw)
    poses = arc_pose(start, command, sigma)
    g = stop_profile(u)[0]
    twists = np.asarray(command)[None, :] * g[:, None]
    return MotionPrimitive(start, command, float(tau), times, poses, twists, "stop")


@dataclass(frozen=True, eq=False)
class Mpl:
    primitives: list
    n_omega: int
    n_z: int
    multiplier: int
    direction: str

    def __len__(self):
        return len(self.primitives)


_DIRECTIONS = {
    "+x": (1.0, 0.0),
    "-x": (-1.0, 0.0),
    "+y": (0.0, 1.0),
    "-y": (0.0, -1.0),
    "yaw": (0.0, 0.0),
}


def _spaced(n: int, bound: float) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-bound, bound, n)


def build_mpl(start: RobotState, direction: str, multiplier: int, cfg: PlannerConfig,
              n_omega: int | None = None, n_z: int | None = None, mpl_id: int = -1) -> Mpl:
    """Grid of arcs over yaw rate and vertical speed for one travel direction.

    ``direction`` is one of "+x", "-x", "+y", "-y" (body frame) or "yaw" for
    turning in place at the maximum yaw rate.
    """
    if direction not in _DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    n_omega = cfg.n_omega if n_omega is None else n_omega
    n_z = cfg.n_z if n_z is None else n_z
    dx, dy = _DIRECTIONS[direction]
    omegas = np.array([cfg.omega_max]) if direction == "yaw" else _spaced(n_omega, cfg.omega_max)
    if direction == "yaw":
        n_omega = 1
    vzs = _spaced(n_z, cfg.v_max_z)
    tau = multiplier * cfg.tau
    prims = []
    for w in omegas:
        for vz in vzs:
            cmd = (dx * cfg.v_max_xy, dy * cfg.v_max_xy, float(vz), float(w))
            prims.append(forward_arc(start, cmd, tau, cfg.dt, mpl_id, len(prims)))
    return Mpl(prims, n_omega, n_z, multiplier, direction)


LIDAR_MPLS = (("+x", 1), ("+x", 2), ("-x", 1), ("-x", 2))
DEPTH_MPLS = (("+x", 1), ("+x", 2), ("+y", 1), ("+y", 2), ("-y", 1), ("-y", 2), ("yaw", 1))


@dataclass(frozen=True, eq=False)
class ActionSpace:
    mpls: list
    sensor: str

    @property
    def primitives(self) -> list:
        return [p for m in self.mpls for p in m.primitives]

    def __len__(self):
        return sum(len(m) for m in self.mpls)


def build_action_space(start: RobotState, sensor: str, cfg: PlannerConfig) -> ActionSpace:
    if sensor == "lidar":
        table = LIDAR_MPLS
    elif sensor == "depth":
        table = DEPTH_MPLS
    else:
        raise ValueError(f"unknown sensor {sensor!r}")
    mpls = []
    for i, (d, mult) in enumerate(table):
        if d == "yaw":
            mpls.append(build_mpl(start, d, mult, cfg, 1, cfg.n_yaw_z, mpl_id=i))
        else:
            mpls.append(build_mpl(start, d, mult, cfg, mpl_id=i))
    return ActionSpace(mpls, sensor)


# --------------------------------------------------------------------------
# fields and safety


@dataclass(eq=False)
class PlanningFields:
    """Obstacle and frontier distance fields for one planning round."""

    grid: LocalGrid
    obstacle: np.ndarray
    frontier: np.ndarray
    has_frontiers: bool

    def lookup(self, field_: np.ndarray, pts, outside: float) -> np.ndarray:
        idx = self.grid.local_index(pts)
        ok = self.grid.in_grid(idx)
        out = np.full(len(idx), outside)
        out[ok] = field_[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
        return out

    def clearance(self, pts) -> np.ndarray:
        """Minimum obstacle distance over the 8 voxel centers surrounding each point.

        Bounds the field value of any voxel touched by points within a quarter
        voxel of the query, which makes path checks at half-voxel spacing sound.
        """
        p = np.asarray(pts, dtype=float).reshape(-1, 3)
        res = self.grid.resolution
        base = np.floor(p / res - 0.5).astype(np.int64) - self.grid.offset
        dims = np.array(self.grid.dims)
        best = np.full(len(p), np.inf)
        for corner in np.ndindex(2, 2, 2):
            idx = base + np.array(corner)
            ok = np.all((idx >= 0) & (idx < dims), axis=1)
            v = np.zeros(len(p))
            v[ok] = self.obstacle[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
            best = np.minimum(best, v)
        return best


def inside_mask(grid: LocalGrid, bounds: Aabb | None) -> np.ndarray:
    """Voxels whose centers lie inside ``bounds``."""
    if bounds is None:
        return np.ones(grid.dims, dtype=bool)
    res = grid.resolution
    axes = [(np.arange(grid.dims[a]) + grid.offset[a] + 0.5) * res for a in range(3)]
    m = [(axes[a] >= bounds.min[a]) & (axes[a] < bounds.max[a]) for a in range(3)]
    return m[0][:, None, None] & m[1][None, :, None] & m[2][None, None, :]


def build_fields(grid: LocalGrid, robot_position, cfg: PlannerConfig, bounds: Aabb | None = None,
                 delta: float = DELTA) -> PlanningFields:
    """Obstacle field from occupied, unknown and out-of-bounds voxels; frontier field from frontiers.

    Unknown voxels within ``cfg.free_bubble`` of the robot are not treated as
    obstacles: the sensor cannot see the volume it occupies.
    """
    inside = inside_mask(grid, bounds)
    unknown = grid.unknown_mask(delta)
    if cfg.free_bubble > 0:
        # only evaluate a small neighborhood for the bubble
        r_vox = int(math.ceil(cfg.free_bubble / grid.resolution)) + 1
        c = grid.local_index(np.asarray(robot_position, dtype=float))[0]
        lo = np.clip(c - r_vox, 0, np.array(grid.dims))
        hi = np.clip(c + r_vox + 1, 0, np.array(grid.dims))
        if np.all(hi > lo):
            sub = np.indices(hi - lo).reshape(3, -1).T + lo
            ctr = grid.voxel_centers(sub)
            near = np.linalg.norm(ctr - np.asarray(robot_position, dtype=float), axis=1) <= cfg.free_bubble
            sub = sub[near]
            unknown[sub[:, 0], sub[:, 1], sub[:, 2]] = False
    sources = grid.occupied_mask(delta) | unknown | ~inside
    obstacle = distance_field(sources, grid.resolution)
    front = frontier_mask(grid, delta) & inside
    frontier = distance_field(front, grid.resolution)
    return PlanningFields(grid, obstacle, frontier, bool(front.any()))


def path_points(prim: MotionPrimitive, max_spacing: float) -> np.ndarray:
    """Positions along the primitive with consecutive spacing at most ``max_spacing``."""
    pos = prim.poses[:, :3]
    if len(pos) < 2:
        return pos
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    worst = float(seg.max())
    if worst <= max_spacing:
        return pos
    n = int(math.ceil(worst / max_spacing))
    # resample on a finer clock; arcs are evaluated in closed form
    times = np.linspace(0.0, prim.duration, (len(pos) - 1) * n + 1)
    if prim.kind == "arc":
        return arc_pose(prim.start, prim.command, times)[:, :3]
    sigma = prim.duration * stop_arc_time(times / prim.duration)
    return arc_pose(prim.start, prim.command, sigma)[:, :3]


def within_bounds(prim: MotionPrimitive, cfg: PlannerConfig) -> bool:
    vx, vy, vz, w = prim.command
    return (math.hypot(vx, vy) <= cfg.v_max_xy + 1e-12 and abs(vz) <= cfg.v_max_z + 1e-12
            and abs(w) <= cfg.omega_max + 1e-12)


def safety_check(prim: MotionPrimitive, stop: MotionPrimitive, fields: PlanningFields, cfg: PlannerConfig) -> bool:
    """True iff the primitive and its stopping extension keep clearance > r_coll."""
    if not within_bounds(prim, cfg):
        return False
    spacing = 0.5 * fields.grid.resolution
    for p in (prim, stop):
        if not np.all(fields.clearance(path_points(p, spacing)) > cfg.r_coll):
            return False
    return True


# --------------------------------------------------------------------------
# information reward


@njit(cache=True)
def _beam_info(cells, offset, valid, origins, ends, res, mode, delta, saturation):
    """Per-beam information; mode 0 = CSQMI (bits), mode 1 = unknown-cell count."""
    n = ends.shape[0]
    out = np.zeros(n)
    o = np.empty(3)
    e = np.empty(3)
    nx, ny, nz = cells.shape
    for r in range(n):
        for a in range(3):
            o[a] = origins[r, a] / res
            e[a] = ends[r, a] / res
        idx = np.empty(3, dtype=np.int64)
        last = np.empty(3, dtype=np.int64)
        step = np.zeros(3, dtype=np.int64)
        tmax = np.full(3, np.inf)
        tdelta = np.full(3, np.inf)
        m = 0
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
            m += abs(last[a] - idx[a])
        p_free = 1.0  # probability that all cells so far are free
        r_free = 1.0  # running product of (1 - o)^2 / q
        s_acc = 0.0
        r_acc = 0.0
        count = 0.0
        for s in range(m + 1):
            if s > 0:
                a = 0
                if tmax[1] < tmax[a]:
                    a = 1
                if tmax[2] < tmax[a]:
                    a = 2
                idx[a] += step[a]
                tmax[a] += tdelta[a]
            i = idx[0] - offset[0]
            j = idx[1] - offset[1]
            k = idx[2] - offset[2]
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz or not valid[i, j, k]:
                break
            lv = cells[i, j, k]
            if lv >= saturation:
                occ = 1.0
            elif lv <= -saturation:
                occ = 0.0
            else:
                occ = 1.0 / (1.0 + math.exp(-lv))
            if mode == 1:
                if abs(lv) <= delta:
                    count += 1.0
                if lv > delta:
                    break
                continue
            q = occ * occ + (1.0 - occ) * (1.0 - occ)
            pe = occ * p_free
            s_acc += pe * pe
            r_acc += pe * (occ * occ / q) * r_free
            p_free *= 1.0 - occ
            r_free *= (1.0 - occ) * (1.0 - occ) / q
            if p_free == 0.0:
                break
        if mode == 1:
            out[r] = count
        else:
            s_acc += p_free * p_free
            r_acc += p_free * r_free
            val = math.log2(s_acc) - 2.0 * math.log2(r_acc)
            out[r] = val if val > 0.0 else 0.0
    return out


def csqmi_beam(occupancy_probs) -> float:
    """CSQMI in bits of one beam crossing independent cells with the given occupancy probabilities.

    The measurement is the index of the first occupied cell (or none).
    """
    p_free = 1.0
    r_free = 1.0
    s = 0.0
    r = 0.0
    for o in occupancy_probs:
        q = o * o + (1 - o) * (1 - o)
        pe = o * p_free
        s += pe * pe
        r += pe * (o * o / q) * r_free
        p_free *= 1 - o
        r_free *= (1 - o) ** 2 / q
    s += p_free * p_free
    r += p_free * r_free
    return max(0.0, math.log2(s) - 2.0 * math.log2(r))


class BeamInformation:
    """Information of a fan of beams cast into a grid. Subclasses pick the per-beam measure."""

    mode = 0

    def __init__(self, delta: float = DELTA, saturation: float = 3.5):
        self.delta = delta
        self.saturation = saturation

    def __call__(self, grid: LocalGrid, valid: np.ndarray, origins, ends) -> np.ndarray:
        ends = np.ascontiguousarray(np.asarray(ends, dtype=float).reshape(-1, 3))
        origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=float), ends.shape))
        return _beam_info(grid.cells, grid.offset, valid, origins, ends, float(grid.resolution), self.mode,
                          self.delta, self.saturation)


class CsqmiBeamInformation(BeamInformation):
    """Cauchy-Schwarz quadratic mutual information per beam; cells saturated at the clamp are certain."""

    mode = 0


class UnknownCountBeamInformation(BeamInformation):
    """Number of unknown cells a beam sees before its first occupied cell."""

    mode = 1


@dataclass(frozen=True)
class BeamFan:
    """Planning-time sensor model: unit directions in the body frame and a range."""

    directions: np.ndarray
    max_range: float

    @classmethod
    def lidar(cls, max_range: float = 5.0, n_az: int = 24, n_el: int = 7, el_half: float = math.radians(30)):
        az = np.linspace(-math.pi, math.pi, n_az, endpoint=False)
        el = np.linspace(-el_half, el_half, n_el)
        a, e = np.meshgrid(az, el, indexing="ij")
        d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
        return cls(d, max_range)

    @classmethod
    def camera(cls, max_range: float = 5.0, h_fov: float = math.radians(87), v_fov: float = math.radians(58),
               n_u: int = 16, n_v: int = 12):
        u = np.tan(0.5 * h_fov) * np.linspace(-1, 1, n_u)
        v = np.tan(0.5 * v_fov) * np.linspace(-1, 1, n_v)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        d = np.stack([np.ones_like(uu), -uu, -vv], axis=-1).reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return cls(d, max_range)

    def rays(self, pose4) -> tuple[np.ndarray, np.ndarray]:
        x, y, z, yaw = pose4
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        origin = np.array([x, y, z])
        return origin, origin + self.max_range * self.directions @ rot.T


def csqmi_reward(prim: MotionPrimitive, grid: LocalGrid, fan: BeamFan, k: int = 1,
                 info: BeamInformation | None = None, valid: np.ndarray | None = None) -> float:
    """Sum of beam information at ``k`` poses spaced evenly along the primitive (k = 1: endpoint)."""
    info = info or CsqmiBeamInformation()
    if valid is None:
        valid = np.ones(grid.dims, dtype=bool)
    total = 0.0
    for j in range(1, k + 1):
        t = prim.duration * j / k
        pose = prim.state_at(t).pose4
        origin, ends = fan.rays(pose)
        total += float(info(grid, valid, origin, ends).sum())
    return total


def frontier_reward(prim: MotionPrimitive, fields: PlanningFields) -> float:
    """d(start) - d(end) on the frontier distance field; 0 without frontiers."""
    if not fields.has_frontiers:
        return 0.0
    d = fields.lookup(fields.frontier, np.vstack([prim.poses[0, :3], prim.poses[-1, :3]]), np.inf)
    if not np.all(np.isfinite(d)):
        return 0.0
    return float(d[0] - d[1])


@dataclass
class Selection:
    primitive: MotionPrimitive
    reward: float
    feasible_count: int
    fallback: bool
    rewards: np.ndarray = field(default=None, repr=False)
    feasible: np.ndarray = field(default=None, repr=False)


def select_action(space: ActionSpace, state: RobotState, grid: LocalGrid, fields: PlanningFields,
                  cfg: PlannerConfig, fan: BeamFan, info: BeamInformation | None = None,
                  bounds: Aabb | None = None, reward_scale: float = 1.0) -> Selection:
    """Greedy choice of the feasible primitive maximizing I + c V.

    Ties go to the lowest (MPL id, primitive index). When no candidate is
    feasible, or every feasible candidate scores exactly zero, the stopping
    primitive from the current state is returned.
    """
    info = info or CsqmiBeamInformation()
    valid = inside_mask(grid, bounds)
    prims = space.primitives
    rewards = np.zeros(len(prims))
    feasible = np.zeros(len(prims), dtype=bool)
    for n, p in enumerate(prims):
        stop = stopping_primitive(p.state_at(cfg.tau), cfg.tau, cfg.dt)
        if not safety_check(p, stop, fields, cfg):
            continue
        feasible[n] = True
        rewards[n] = reward_scale * (csqmi_reward(p, grid, fan, cfg.k, info, valid) + cfg.c * frontier_reward(p, fields))
    stop_here = stopping_primitive(state, cfg.tau, cfg.dt)
    if not feasible.any():
        return Selection(stop_here, 0.0, 0, True, rewards, feasible)
    cand = np.flatnonzero(feasible)
    best = cand[int(np.argmax(rewards[cand]))]  # argmax returns the first maximum
    if np.all(rewards[cand] == 0.0):
        return Selection(stop_here, 0.0, len(cand), True, rewards, feasible)
    return Selection(prims[best], float(rewards[best]), len(cand), False, rewards, feasible)
