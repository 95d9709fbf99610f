"""Closed-loop exploration trials comparing GMM keyframe maps (MCG) with occupancy changesets (OG).

Every trial renders scans at the sensor rate, keeps a global referee grid fed
with every raw scan, maps with the selected approach, replans every ``tau``
seconds and logs referee entropy and cumulative transmitted bytes once per
simulated second.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .cave import Environment
from .gating import GateConfig, KeyframeGate
from .gmm import ObservationModel, fit_observation
from .gmm_map import GmmMap, Keyframe, payload_bytes, serialize_keyframe
from .occupancy import (
    InverseSensorModel,
    LocalGrid,
    Reconstructor,
    center_offset,
    entropy,
    extract_window,
    integrate_observation,
    shift_local_grid,
)
from .planner import (
    BeamFan,
    PlannerConfig,
    RobotState,
    build_action_space,
    build_fields,
    select_action,
    stopping_primitive,
)
from .render import MeshRaycaster, SimSensor, render_observation
from .transforms import Pose

CSV_HEADER = ["t_sec", "entropy_bits", "bytes_cum", "x", "y", "z", "yaw", "mode", "seed"]


@dataclass(frozen=True)
class TrialConfig:
    mode: str = "mcg"
    sensor: str = "lidar"
    duration: float = 300.0
    seed: int = 0
    start_index: int | None = None
    env_seed: int = 0
    referee_resolution: float = 0.2
    local_resolution: float = 0.2
    local_dims: tuple = (100, 100, 40)
    clamp: float = 3.5
    noise: bool = True
    watchdog: float = 30.0
    raycast_cell: float = 0.15
    keep_oracle_grid: bool = False
    resample_density: float = 4.0
    observation: ObservationModel = field(default_factory=ObservationModel)
    gate: GateConfig | None = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim_sensor: SimSensor | None = None

    def __post_init__(self):
        if self.mode not in ("mcg", "og"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sensor not in ("lidar", "depth"):
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if not self.duration >= 0:
            raise ValueError("duration must be non-negative")
        if not self.resample_density > 0:
            raise ValueError("resample_density must be positive")

    def resolved_sensor(self) -> SimSensor:
        if self.sim_sensor is not None:
            return self.sim_sensor
        return SimSensor(self.sensor, max_range=self.observation.max_range)

    def resolved_gate(self) -> GateConfig:
        if self.gate is not None:
            return self.gate
        mode = "full_360" if self.sensor == "lidar" else "limited_fov"
        return GateConfig(mode=mode, max_range=self.observation.max_range)


@dataclass
class TrialResult:
    config: TrialConfig
    rows: list
    status: str
    keyframe_stream: bytes
    keyframe_log: list
    changeset_log: list
    referee: LocalGrid
    gmap: GmmMap | None = None
    oracle_grid: LocalGrid | None = None
    og_map: LocalGrid | None = None

    @property
    def bytes_total(self) -> int:
        return int(self.rows[-1][2]) if self.rows else 0

    @property
    def final_entropy(self) -> float:
        return float(self.rows[-1][1])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(float(r[0])), repr(float(r[1])), str(int(r[2])), repr(float(r[3])),
                        repr(float(r[4])), repr(float(r[5])), repr(float(r[6])), r[7], str(int(r[8]))])
        return buf.getvalue()

    def write(self, out_dir) -> dict:
        """Write metrics.csv, keyframes.gmk, and the per-mode transmission log; return the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {"metrics": os.path.join(out_dir, "metrics.csv"),
                 "keyframes": os.path.join(out_dir, "keyframes.gmk")}
        with open(paths["metrics"], "w") as fh:
            fh.write(self.csv_text())
        with open(paths["keyframes"], "wb") as fh:
            fh.write(self.keyframe_stream)
        if self.config.mode == "mcg":
            paths["log"] = os.path.join(out_dir, "keyframes.csv")
            with open(paths["log"], "w") as fh:
                fh.write("keyframe_id,t_sec,n_occupied,n_free,payload_bytes\n")
                for kf_id, t, n_occ, n_free, nbytes in self.keyframe_log:
                    fh.write(f"{kf_id},{t!r},{n_occ},{n_free},{nbytes}\n")
        else:
            paths["log"] = os.path.join(out_dir, "changesets.csv")
            with open(paths["log"], "w") as fh:
                fh.write("frame,t_sec,n_voxels,bytes\n")
                for frame, t, n in self.changeset_log:
                    fh.write(f"{frame},{t!r},{n},{16 * n}\n")
        return paths


_CASTERS: dict = {}


def get_caster(env: Environment, cell: float) -> MeshRaycaster:
    key = (id(env), cell)
    c = _CASTERS.get(key)
    if c is None or c[0] is not env:
        c = (env, MeshRaycaster(env.triangles, cell))
        _CASTERS.clear()
        _CASTERS[key] = c
    return c[1]


def open_heading(caster: MeshRaycaster, position, max_range: float, n: int = 360, window: int = 15) -> float:
    """Yaw of the horizontal direction with the largest windowed-minimum free range."""
    az = np.arange(n) * (2.0 * math.pi / n) - math.pi
    dirs = np.stack([np.cos(az), np.sin(az), np.zeros(n)], -1)
    t = np.minimum(caster.cast(position, dirs, max_range), max_range)
    k = np.arange(-window, window + 1)
    score = t[(np.arange(n)[:, None] + k[None, :]) % n].min(axis=1)
    return float(az[int(np.argmax(score))])


def start_state(cfg: TrialConfig, env: Environment, caster: MeshRaycaster | None = None) -> RobotState:
    """Designated start position for the seed, facing the most open direction."""
    starts = np.asarray(env.start_positions)
    if len(starts) == 0:
        raise ValueError("environment has no start positions")
    k = cfg.seed % len(starts) if cfg.start_index is None else cfg.start_index
    if not 0 <= k < len(starts):
        raise ValueError(f"start_index {k} out of range")
    x, y, z = (float(v) for v in starts[k])
    caster = caster or get_caster(env, cfg.raycast_cell)
    yaw = open_heading(caster, np.array([x, y, z]), 2.0 * cfg.observation.max_range)
    return RobotState(x, y, z, yaw)


def _pose(state: RobotState) -> Pose:
    return Pose.from_xyz_yaw(state.x, state.y, state.z, state.yaw)


def run_trial(cfg: TrialConfig, env: Environment, progress=None, on_plan=None) -> TrialResult:
    """Simulate one trial. ``progress(row)`` sees each metrics row, ``on_plan(t, state, selection, local)`` each plan."""
    sensor = cfg.resolved_sensor()
    r_d = cfg.observation.max_range
    caster = get_caster(env, cfg.raycast_cell)
    directions = sensor.directions()
    raw_ism = InverseSensorModel()
    local_ism = InverseSensorModel.clamped(cfg.clamp)
    referee = LocalGrid.covering(env.bounds, cfg.referee_resolution)
    pcfg = replace(cfg.planner, max_range=r_d)
    fan = BeamFan.lidar(r_d) if cfg.sensor == "lidar" else BeamFan.camera(
        r_d, sensor.h_fov, sensor.v_fov)

    state = start_state(cfg, env, caster)
    rate = sensor.rate
    n_frames = int(round(cfg.duration * rate))
    frames_per_plan = max(1, int(round(pcfg.tau * rate)))
    frames_per_row = max(1, int(round(rate)))
    dt = 1.0 / rate

    gmap = GmmMap() if cfg.mode == "mcg" else None
    rec = Reconstructor(gmap, r_d, local_ism, seed=cfg.seed,
                        density=cfg.resample_density) if gmap is not None else None
    gate = KeyframeGate(cfg.resolved_gate(), sensor.h_fov, sensor.v_fov) if gmap is not None else None
    local = LocalGrid.centered(state.position, cfg.local_resolution, cfg.local_dims)
    oracle = LocalGrid.covering(env.bounds, cfg.local_resolution) if cfg.keep_oracle_grid else None
    # OG robot map: clamped, so saturated voxels stop generating changeset traffic
    og_map = LocalGrid.covering(env.bounds, cfg.local_resolution) if cfg.mode == "og" else None

    stream = []
    kf_log = []
    cs_log = []
    bytes_cum = 0

    def row(t):
        return (float(t), entropy(referee), int(bytes_cum), float(state.x), float(state.y), float(state.z),
                float(state.yaw), cfg.mode, cfg.seed)

    rows = [row(0.0)]
    status = "ok"
    prim = None
    prim_t = 0.0
    last_feasible_t = 0.0

    for f in range(n_frames):
        t = f * dt
        pose = _pose(state)
        obs = render_observation(caster, pose, sensor, seed=[cfg.seed, f, 1], bounds=env.bounds,
                                 noise=cfg.noise, directions=directions)
        world = obs.world_points()
        origin = pose.translation

        integrate_observation(referee, origin, world, r_d, raw_ism, changeset=False)
        if cfg.mode == "og":
            cs = integrate_observation(og_map, origin, world, r_d, local_ism)
            bytes_cum += cs.nbytes
            cs_log.append((f, t, len(cs)))
        elif gate.should_store(pose):
            kf_id = len(gmap)
            occ, free = fit_observation(obs, cfg.observation, seed=[cfg.seed, kf_id, 2])
            kf = Keyframe.from_mixtures(kf_id, pose, occ, free)
            data = serialize_keyframe(kf)
            stream.append(data)
            nbytes = payload_bytes(kf.n_components)
            bytes_cum += nbytes
            kf_log.append((kf_id, t, kf.n_occupied, kf.n_free, nbytes))
            gmap.insert(kf)
            gate.record(pose)
            rec.integrate_keyframe(local, kf)
            if oracle is not None:
                integrate_observation(oracle, origin, world, r_d, local_ism, changeset=False)

        if f % frames_per_plan == 0:
            if cfg.mode == "mcg":
                local = shift_local_grid(local, state.position, rec)
            else:
                local = extract_window(og_map, center_offset(state.position, cfg.local_resolution, cfg.local_dims),
                                       cfg.local_dims, cfg.clamp)
            fields = build_fields(local, state.position, pcfg, env.bounds)
            space = build_action_space(state, cfg.sensor, pcfg)
            sel = select_action(space, state, local, fields, pcfg, fan, bounds=env.bounds)
            prim = sel.primitive
            if on_plan is not None:
                on_plan(t, state, sel, local)
            prim_t = 0.0
            if sel.feasible_count > 0:
                last_feasible_t = t
            elif t - last_feasible_t >= cfg.watchdog:
                status = "stuck"

        prim_t += dt
        state = prim.state_at(prim_t)
        if prim.kind == "stop" and prim_t >= prim.duration - 1e-9:
            state = RobotState(state.x, state.y, state.z, state.yaw)

        if (f + 1) % frames_per_row == 0:
            rows.append(row((f + 1) * dt))
            if progress is not None:
                progress(rows[-1])
        if status == "stuck":
            break

    return TrialResult(cfg, rows, status, b"".join(stream), kf_log, cs_log, referee, gmap,
                       oracle, og_map)
