"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are loaded explicitly, so the script works regardless of
CUPREG_BACKEND. Without a built extension only the fallback is timed.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cupreg._backend import get_kernels

POSE = np.array([25.0, 40.0, 30.0, -20.0, 310.0])
RADIUS, N_POINTS, SOURCE = 25.0, 100, 1040.0


def cases(k):
    pts, dpts = k.pose_points(POSE, RADIUS, N_POINTS, SOURCE, True)
    return {
        "pose_ellipse (jacobian)": lambda: k.pose_ellipse(POSE, RADIUS, N_POINTS, SOURCE, True),
        "pose_ellipse (value)": lambda: k.pose_ellipse(POSE, RADIUS, N_POINTS, SOURCE, False),
        "fit_points (value)": lambda: k.fit_points(pts),
        "fit_points (5 tangents)": lambda: k.fit_points(pts, dpts),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)

    backends = {"python": get_kernels("python")}
    try:
        backends["compiled"] = get_kernels("compiled")
    except ImportError:
        print("compiled extension not built; timing the fallback only")

    timings = {name: {label: best_of(fn, args.repeat, args.number) for label, fn in cases(k).items()}
               for name, k in backends.items()}

    labels = list(timings["python"])
    print(f"{'kernel':<26}" + "".join(f"{name:>14}" for name in timings) + ("   speedup" if len(timings) > 1 else ""))
    for label in labels:
        line = f"{label:<26}" + "".join(f"{timings[name][label] * 1e6:>11.1f} us" for name in timings)
        if "compiled" in timings:
            line += f"{timings['python'][label] / timings['compiled'][label]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
