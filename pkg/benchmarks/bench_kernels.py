"""Compare the numba and numpy backends of the hot kernels.

Run: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once per backend to warm up (JIT compilation for
numba), then timed over ``--repeat`` calls; the best time is reported along
with the maximum absolute difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from egostereo import kernels
from egostereo._accel import HAVE_NUMBA
from egostereo.geometry import FisheyeCamera
from egostereo.scene_depth import Room
from egostereo.skeleton import CANONICAL_SKELETON
from egostereo.synthetic import body_capsules, camera_rays, pose_from_angles, sample_angle_tracks


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads():
    cam = FisheyeCamera.centered(256)
    room = Room((6.0, 3.0, 6.0))
    rays = camera_rays(cam)
    origin = np.array([3.0, 1.6, 3.0])
    origins = np.broadcast_to(origin, rays.shape).copy()
    rng = np.random.default_rng(0)
    angles = {k: v[0] for k, v in sample_angle_tracks(rng, 1, 25.0).items()}
    joints = pose_from_angles(angles)[0] + np.array([3.0, 0.0, 3.0])
    a, b, r = body_capsules(joints, 1.0)
    centers = rng.uniform(0, 64, size=(CANONICAL_SKELETON.num_joints - 1, 2))
    return {
        "cast_room (65k rays)": lambda be: kernels.cast_room(origins, rays, room.box_min, room.box_max, be)[0],
        "cast_capsules (65k rays)": lambda be: kernels.cast_capsules(origin, rays, a, b, r, be)[0],
        "gaussian_heatmaps (15x64x64)": lambda be: kernels.gaussian_heatmaps(centers, 1.5, 64, 64, be),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=10)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy backend can run")
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in workloads().items():
        t_np = best_time(lambda: fn("numpy"), args.repeat)
        if not HAVE_NUMBA:
            print(f"{name:32s} {t_np * 1e3:10.2f} {'-':>10s} {'-':>8s} {'-':>11s}")
            continue
        t_nb = best_time(lambda: fn("numba"), args.repeat)
        x, y = fn("numpy"), fn("numba")
        finite = np.isfinite(x) & np.isfinite(y)
        diff = float(np.abs(x[finite] - y[finite]).max()) if finite.any() else 0.0
        print(f"{name:32s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
