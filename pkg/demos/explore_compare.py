"""Short MCG versus OG exploration run with the depth camera; prints entropy and bytes every 10 s.

    python demos/explore_compare.py [duration_s]
"""
import sys

from gmmexplore.cave import generate_cave
from gmmexplore.simulator import TrialConfig, run_trial

duration = float(sys.argv[1]) if len(sys.argv) > 1 else 60.0
env = generate_cave(0)
runs = {mode: run_trial(TrialConfig(mode, "depth", duration=duration, seed=0), env) for mode in ("mcg", "og")}

print(f"{'t':>5} {'H_mcg':>10} {'H_og':>10} {'bytes_mcg':>11} {'bytes_og':>11}")
for a, b in zip(runs["mcg"].rows, runs["og"].rows):
    if int(a[0]) % 10 == 0:
        print(f"{a[0]:5.0f} {a[1]:10.0f} {b[1]:10.0f} {a[2]:11d} {b[2]:11d}")
m, o = runs["mcg"], runs["og"]
print(f"keyframes sent: {len(m.keyframe_log)}; OG/MCG bytes = {o.bytes_total / max(m.bytes_total, 1):.1f}")
