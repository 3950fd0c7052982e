"""Compiled vs pure-Python timing of the pixel-wise tomography sweep.

    python3 benchmarks/bench_tomography.py --width 24 --flux 50 --background 5
"""

import argparse
import time

import numpy as np

from lovtomo.lattice import (
    default_geometry,
    evaluate_field,
    simulate_measurement_frames,
)
from lovtomo.tomography import MeasurementSet, available_backends, pixelwise_tomography


def measurement(width: int, flux: float, background: float, seed: int) -> MeasurementSet:
    fld = evaluate_field(*default_geometry(width=width))
    frames = simulate_measurement_frames(fld, flux * fld.grid.n_pixels, background, seed)
    return MeasurementSet.from_frames(frames)


def bench(mset: MeasurementSet, backend: str, repeats: int, threads: int):
    best, tmap = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        tmap = pixelwise_tomography(mset, backend=backend, num_threads=threads)
        best = min(best, time.perf_counter() - t0)
    return best, tmap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=24, help="grid side in pixels")
    ap.add_argument("--flux", type=float, default=1e4, help="mean counts per pixel")
    ap.add_argument("--background", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=0, help="OpenMP threads for the compiled kernel")
    args = ap.parse_args()

    mset = measurement(args.width, args.flux, args.background, args.seed)
    n = mset.grid.n_pixels
    print(f"{n} pixels, flux {args.flux:g}/pixel, background {args.background:g}")
    results = {}
    for backend in available_backends():
        elapsed, tmap = bench(mset, backend, args.repeats, args.threads)
        results[backend] = (elapsed, tmap)
        print(f"{backend:>9}: {elapsed:8.3f} s total  {1e6 * elapsed / n:9.1f} us/pixel  "
              f"mean iterations {tmap.iterations.mean():.1f}")
    if len(results) == 2:
        (tc, mc), (tp, mp) = results["compiled"], results["python"]
        diff = np.max(np.abs(mc.rho - mp.rho))
        print(f"speedup {tp / tc:.1f}x, max |rho_compiled - rho_python| = {diff:.1e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
