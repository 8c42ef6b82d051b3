"""Numba vs pure-numpy kernels: wall clock and agreement.

Times single solves at a few state sizes and one streaming preset on both
backends, after a warm-up call so JIT compilation is excluded, and reports
the largest absolute difference between the two backends' outputs.

    python benchmarks/bench_backends.py [--repeat 5] [--out FILE]
"""

import argparse
import os
import sys
import timeit

import numpy as np

from streamdeq import bench
from streamdeq._kernels import NUMBA_AVAILABLE
from streamdeq.cell import make_random_cell
from streamdeq.sequence import SequenceSpec, generate_sequence
from streamdeq.solver import SolverConfig, solve

DEFAULT_OUT = os.path.join(os.path.dirname(__file__), "results", "backends.txt")


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def solve_case(dz, method, iters, repeat):
    cell = make_random_cell(0, dz, 16)
    x = generate_sequence(SequenceSpec(length=1, dx=16, seed=1000))[0]
    z0 = np.zeros(dz)
    cfg = SolverConfig(method, iters, 0.0)
    out, times = {}, {}
    for backend in ("numpy", "numba"):
        out[backend] = solve(cell, x, z0, cfg, backend)  # warm-up / compile
        number = max(1, 2000 // (iters * max(1, dz // 32)))
        times[backend] = _best(lambda: solve(cell, x, z0, cfg, backend), repeat, number)
    diff = float(np.max(np.abs(out["numpy"].z - out["numba"].z)))
    return times, diff


def stream_case(repeat):
    spec = bench.preset_spec("fig3-zero", 3).replace(baseline=False)
    rows, times = {}, {}
    for backend in ("numpy", "numba"):
        rows[backend] = bench.run(spec, backend).rows
        times[backend] = _best(lambda: bench.run(spec, backend), max(1, repeat // 2), 1)
    diff = max(
        abs(a.sq_dist_to_reference - b.sq_dist_to_reference)
        for a, b in zip(rows["numpy"], rows["numba"])
    )
    return times, diff


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--out", default=DEFAULT_OUT)
    args = p.parse_args(argv)
    if not NUMBA_AVAILABLE:
        sys.exit("numba is not installed; nothing to compare")

    lines = [f"{'case':<34}{'numpy':>12}{'numba':>12}{'speedup':>9}{'max |diff|':>12}"]

    def add(name, times, diff):
        lines.append(
            f"{name:<34}{times['numpy'] * 1e3:>10.3f}ms{times['numba'] * 1e3:>10.3f}ms"
            f"{times['numpy'] / times['numba']:>8.1f}x{diff:>12.1e}"
        )

    for dz in (16, 64, 256):
        for method, iters in (("picard", 26), ("broyden", 26)):
            add(f"{method} {iters} steps, dz={dz}", *solve_case(dz, method, iters, args.repeat))
    add("fig3-zero preset, 3 seeds", *stream_case(args.repeat))

    text = "\n".join(lines) + "\n"
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)


if __name__ == "__main__":
    main()
