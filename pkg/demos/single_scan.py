"""One LiDAR scan in the bundled cave: mixture size versus the occupancy changeset it replaces.

    python demos/single_scan.py
"""
import numpy as np

from gmmexplore.cave import generate_cave
from gmmexplore.gmm import ObservationModel, fit_observation, sample
from gmmexplore.gmm_map import Keyframe, payload_bytes
from gmmexplore.occupancy import InverseSensorModel, LocalGrid, integrate_observation
from gmmexplore.render import MeshRaycaster, SimSensor, render_observation
from gmmexplore.transforms import Pose

env = generate_cave(0)
caster = MeshRaycaster(env.triangles)
pose = Pose.from_xyz_yaw(*env.start_positions[0], 0.0)
obs = render_observation(caster, pose, SimSensor("lidar"), seed=0)
print(f"scan: {len(obs.points)} beams")

occ, free = fit_observation(obs, ObservationModel(), seed=0)
kf = Keyframe.from_mixtures(0, pose, occ, free)
print(f"mixtures: {len(occ)} occupied + {len(free)} free components -> {payload_bytes(kf.n_components)} bytes")

grid = LocalGrid.covering(env.bounds, 0.2)
cs = integrate_observation(grid, pose.translation, obs.world_points(), 5.0, InverseSensorModel.clamped())
print(f"occupancy changeset: {len(cs)} voxels -> {cs.nbytes} bytes "
      f"({cs.nbytes / payload_bytes(kf.n_components):.0f}x larger)")

# the occupied mixture is generative: resampled points hug the scanned walls
pts = sample(occ, 20_000, seed=1)
d = np.linalg.norm(pts - pose.translation, axis=1)
print(f"resampled 20000 points, range {d.min():.2f} to {d.max():.2f} m from the sensor")
