"""Time the compiled and numpy geometry kernels on scenario-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per (kernel, backend) with the median time per call and the
speed-up of the compiled backend; also checks both backends agree.
"""
import argparse
import timeit

import numpy as np

from crowdsteer import scenarios
from crowdsteer.kernels import available_backends
from crowdsteer.sensors import LidarConfig


def workloads():
    spec = scenarios.get("dense-ped")
    world, _ = scenarios.build(spec, 0)
    segs = world.geometry.segments
    discs = np.vstack([world.geometry.discs.reshape(-1, 4)[:, :3],
                       np.array([[p.position[0], p.position[1], p.radius] for p in world.pedestrians])])
    angles = LidarConfig().angles()
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 20, 4096), rng.uniform(-3, 3, 4096)])
    return {
        "ray_cast (512 beams)": lambda k: k.ray_cast(0.0, 0.0, angles, segs, discs),
        "ray_hit_matrix (48 cols)": lambda k: k.ray_hit_matrix(0.0, 0.0, angles[:48], segs, discs),
        "points_min_distance (4096 pts)": lambda k: k.points_min_distance(pts, segs, discs),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    for name, fn in workloads().items():
        ref = fn(backends["python"])
        times = {}
        for b, mod in backends.items():
            if not np.allclose(fn(mod), ref, rtol=0, atol=1e-9, equal_nan=True):
                raise SystemExit(f"{name}: backend {b} disagrees with python")
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times[b] = np.median(timer.repeat(args.repeat, number)) / number
        line = "  ".join(f"{b} {t * 1e6:9.1f} us" for b, t in times.items())
        speedup = f"  x{times['python'] / times['cython']:.1f}" if "cython" in times else ""
        print(f"{name:<32}{line}{speedup}")


if __name__ == "__main__":
    main()
