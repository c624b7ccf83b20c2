"""Time the compiled and pure-Python kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--pixels N] [--repeat R]

The sampler must agree bit for bit across backends and the NLL sum to
rounding; the script checks this before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pgdenoise.kernels import available_backends
from pgdenoise.rng import RngState


def _best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixels", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = RngState(0)
    x = 0.02 + 0.9 * rng.uniform(args.pixels)
    y = x + 0.05 * rng.normal(args.pixels)
    mask = np.ones(args.pixels, dtype=bool)
    mask[::17] = False
    key_p, key_g = rng.next_key(), rng.next_key()

    cases = {
        "pg_sample (a=0.02, b=0.0015)": lambda m: m.pg_sample(x, 0.02, 0.0015, key_p, key_g, True, 0),
        "pg_sample (a=0.001, PTRS path)": lambda m: m.pg_sample(x, 0.001, 0.0, key_p, key_g, True, 0),
        "masked_nll": lambda m: m.masked_nll(y, x, mask, 0.02, 0.0015),
    }
    backends = available_backends()
    print(f"{args.pixels} pixels, best of {args.repeat}")
    if "compiled" not in backends:
        print("compiled backend not built; timing the Python fallback only")
    print(f"{'kernel':34s} " + " ".join(f"{name:>12s}" for name in backends) + "   speedup")
    for label, call in cases.items():
        times, outputs = {}, {}
        for name, mod in backends.items():
            times[name], outputs[name] = _best_of(lambda: call(mod), args.repeat)
        if len(outputs) == 2:
            a, b = outputs["python"], outputs["compiled"]
            if isinstance(a, np.ndarray):
                same = np.array_equal(a, b)
            else:
                # reductions differ only in summation order
                same = a[1] == b[1] and abs(a[0] - b[0]) <= 1e-12 * abs(a[0])
            if not same:
                raise SystemExit(f"backends disagree on {label}")
        speed = f"{times['python'] / times['compiled']:8.1f}x" if "compiled" in times else ""
        print(f"{label:34s} " + " ".join(f"{t * 1e3:10.1f}ms" for t in times.values()) + f"  {speed}")


if __name__ == "__main__":
    main()
