"""Time the compiled and pure-Python kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Each row reports the best-of-N wall time per call and the speedup of the
compiled backend. Outputs of the two backends are also checked for bitwise
equality.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from periodic_qat import _backend

CASES = {
    "dense_forward 256x512 @ 512x64": lambda rng: (
        "dense_forward", (rng.standard_normal((256, 512)), rng.standard_normal((512, 64)), rng.standard_normal(256))),
    "dense_backward 256x512, batch 64": lambda rng: (
        "dense_backward", (rng.standard_normal((256, 64)), rng.standard_normal((512, 64)),
                           rng.standard_normal((256, 512)))),
    "conv2d_forward 16x28x28x1, 5x5x1x8": lambda rng: (
        "conv2d_forward", (rng.standard_normal((16, 28, 28, 1)), rng.standard_normal((5, 5, 1, 8)), 1, 1)),
    "conv2d_backward 16x28x28x1, 5x5x1x8": lambda rng: (
        "conv2d_backward", (rng.standard_normal((16, 24, 24, 8)), rng.standard_normal((16, 28, 28, 1)),
                            rng.standard_normal((5, 5, 1, 8)), 1, 1)),
}


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def run(repeat):
    backends = _backend.available()
    rows = []
    for label, make in CASES.items():
        name, args = make(np.random.default_rng(0))
        times, outputs = {}, {}
        for backend in backends:
            _backend.set_backend(backend)
            fn = getattr(_backend.kernels, name)
            outputs[backend] = fn(*args)
            times[backend] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
        row = {"case": label, **{f"{b}_seconds": t for b, t in times.items()}}
        if len(backends) > 1:
            row["speedup"] = times["python"] / times["cython"]
            row["bitwise_equal"] = _same(outputs["python"], outputs["cython"])
        rows.append(row)
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)
    rows = run(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    if "cython" not in _backend.available():
        print("compiled backend not built; timing the pure-Python kernels only", file=sys.stderr)
    for row in rows:
        cols = [f"{row['case']:<40}"]
        cols += [f"{k[:-8]} {v * 1e3:9.2f} ms" for k, v in row.items() if k.endswith("_seconds")]
        if "speedup" in row:
            cols.append(f"x{row['speedup']:.1f}  equal={row['bitwise_equal']}")
        print("  ".join(cols))
    return 0


if __name__ == "__main__":
    sys.exit(main())
