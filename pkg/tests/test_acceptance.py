"""Acceptance criteria C1-C10, each at its stated tolerance.

Every test prints one ``C<n> PASS|FAIL: ...`` line, so ``pytest -s`` or the
plain ``-v`` log shows the whole gate at a glance.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from streamdeq import bench
from streamdeq.cell import analytic_fixed_point, contraction_violations, make_random_cell
from streamdeq.cli import _build_cell
from streamdeq.linalg import l2_norm
from streamdeq.sequence import SequenceSpec, generate_sequence
from streamdeq.solver import SolverConfig, broyden_solve, picard_solve, reference_fixed_point
from streamdeq.stream import BudgetSchedule, WarmStartPolicy, reference_states, stream_infer

SEEDS = range(20)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nC{n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def streams(policies, budgets, seeds=SEEDS):
    """Seed-mean squared-distance curves for the default setup, keyed by (policy, M)."""
    cfg = SolverConfig("picard", 1, 0.0)
    per = {}
    deltas = {}
    for seed in seeds:
        cell = make_random_cell(seed, 64, 16)
        frames = generate_sequence(SequenceSpec(length=40, dx=16, epsilon=0.05, seed=seed + 1000))
        refs = reference_states(cell, frames)
        deltas[seed] = np.array([l2_norm(b - a) for a, b in zip(refs, refs[1:])])
        for policy in policies:
            for M in budgets:
                recs = stream_infer(cell, frames, policy, BudgetSchedule.of(M), cfg, True, references=refs)
                per.setdefault((policy, M), {})[seed] = np.array([r.sq_dist_to_reference for r in recs])
    means = {k: np.mean(list(v.values()), axis=0) for k, v in per.items()}
    return means, per, deltas


def test_c1_warm_start_dominance(report):
    (means, _, _), secs = timed(lambda: streams(["ref-chain", "cold"], [1, 8]))
    warm, cold = means[("ref-chain", 1)], means[("cold", 8)]
    worst = float(np.max(warm[1:] / cold[1:]))
    ok = bool(np.all(warm[1:] < cold[1:])) and secs < 10
    report(1, ok, f"ref-chain M=1 / cold M=8 at worst frame t>=1 = {worst:.3g}; {secs:.1f} s")
    assert ok


def test_c2_plateau_and_stabilization(report):
    budgets = [1, 2, 4, 8]
    (means, per, deltas), secs = timed(lambda: streams(["stream-zero"], budgets))
    curves = [means[("stream-zero", M)] for M in budgets]
    plateaus = [float(np.mean(c[20:40])) for c in curves]
    a = all(p <= c[5] for p, c in zip(plateaus, curves))
    b = all(y < x for x, y in zip(plateaus, plateaus[1:]))
    slack = -math.inf
    for M in budgets:
        for seed, d2 in per[("stream-zero", M)].items():
            d = np.sqrt(d2)
            slack = max(slack, float(np.max(d[1:] - (0.9 ** M * (d[:-1] + deltas[seed]) + 1e-9))))
    c = slack <= 0.0
    ok = a and b and c and secs < 30
    report(2, ok, f"(a) {a} (b) {b} plateaus {', '.join(f'{p:.3e}' for p in plateaus)} "
                  f"(c) {c} max slack {slack:.2e}; {secs:.1f} s")
    assert ok


def test_c3_init_independence(report):
    budgets = [2, 4, 8]
    (means, _, _), secs = timed(lambda: streams(["stream-ref", "stream-zero"], budgets))
    rel = []
    for M in budgets:
        ref = float(np.mean(means[("stream-ref", M)][20:40]))
        zero = float(np.mean(means[("stream-zero", M)][20:40]))
        rel.append(abs(ref - zero) / max(ref, zero))
    ok = max(rel) <= 0.2 and secs < 30
    report(3, ok, "relative plateau gap " + ", ".join(f"M={M}:{r:.1%}" for M, r in zip(budgets, rel))
           + f"; {secs:.1f} s")
    assert ok


def test_c4_streaming_beats_bigger_cold_budget(report):
    means, _, _ = streams(["stream-ref", "cold"], [2, 4])
    streamed, cold = means[("stream-ref", 2)][20], means[("cold", 4)][20]
    ok = bool(streamed < cold)
    report(4, ok, f"stream-ref M=2 {streamed:.3e} vs cold M=4 {cold:.3e} at t=20")
    assert ok


@pytest.mark.parametrize("T, M", [(40, 2), (10, 7), (25, 1)])
def test_c5_static_scene_equivalence(report, T, M):
    cfg = SolverConfig("picard", M, 0.0)
    bad = []
    for seed in SEEDS:
        cell = make_random_cell(seed, 64, 16)
        frames = generate_sequence(SequenceSpec(length=T, dx=16, epsilon=0.0, seed=seed + 1000))
        recs = stream_infer(cell, frames, "stream-zero", M, cfg, keep_states=True)
        once = picard_solve(cell, frames[0], np.zeros(64), cfg.with_iters(T * M))
        if not np.array_equal(recs[-1].z_final, once.z):
            bad.append(seed)
    report(5, not bad, f"T={T} M={M}: {20 - len(bad)}/20 seeds bitwise equal")
    assert not bad


@pytest.mark.parametrize("orthogonal", [True, False], ids=["default-family", "gaussian-family"])
def test_c6_analytic_oracle(report, orthogonal):
    kw = {} if orthogonal else dict(input_scale=1.0, bias_scale=1.0)
    worst_err, worst_res, fails = 0.0, 0.0, 0
    for seed in SEEDS:
        dz = 1 + seed % 16
        cell = make_random_cell(seed, dz, 4, activation="identity", orthogonal=orthogonal, **kw)
        x = np.random.default_rng(seed).standard_normal(4)
        err = float(np.max(np.abs(reference_fixed_point(cell, x) - analytic_fixed_point(cell, x))))
        r = broyden_solve(cell, x, np.zeros(dz), SolverConfig("broyden", 2 * dz + 2, 1e-10))
        worst_err, worst_res = max(worst_err, err), max(worst_res, r.residual_norm)
        fails += err > 1e-8 or not r.converged
    report(6, fails == 0, f"{'default' if orthogonal else 'gaussian'} family: max coord error "
                          f"{worst_err:.1e}, max Broyden residual {worst_res:.1e} in 2*dz+2 steps")
    assert fails == 0


def test_c7_first_step_identity(report):
    same = 0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        cell = make_random_cell(seed, int(rng.integers(1, 65)), 16, orthogonal=bool(seed % 2),
                                activation=("tanh", "identity")[seed % 3 == 0])
        x, z0 = rng.standard_normal(16), rng.standard_normal(cell.dz)
        p = picard_solve(cell, x, z0, SolverConfig("picard", 1, 0.0))
        b = broyden_solve(cell, x, z0, SolverConfig("broyden", 1, 0.0))
        same += np.array_equal(p.z, b.z)
    report(7, same == 20, f"{same}/20 first iterates bitwise equal")
    assert same == 20


def test_c8_shot_change_recovery(report):
    spec = bench.preset_spec("shot-change", 20)
    out = bench.run(spec)
    recs = [bench.shot_recovery(s, c, 30) for s, c in sorted(bench.per_seed(out.rows, "stream-zero", 4).items())]
    n_ok = sum(r.ok for r in recs)
    frames = [r.frames_to_recover for r in recs if r.ok]
    ok = n_ok >= 18
    report(8, ok, f"{n_ok}/20 seeds jump >2x and recover within 1.2x in <=10 frames "
                  f"(median {int(np.median(frames))} frames; epsilon {spec.sequence.epsilon})")
    assert ok


def test_c9_bench_reproducibility(report, tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        r = subprocess.run([sys.executable, "-m", "streamdeq.cli", "bench", "--suite", "fig3-zero",
                            "--seeds", "20", "--out", str(d)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs.append({f: (d / f).read_bytes() for f in sorted(os.listdir(d))})
    files = sorted(outs[0])
    ok = files == sorted(outs[1]) and all(outs[0][f] == outs[1][f] for f in files) and len(files) == 3
    report(9, ok, f"{len(files)} files byte-identical across two runs: {', '.join(files)}")
    assert ok


def test_c10_contraction_suite(report):
    cells = []
    for seed in SEEDS:
        cells.append(make_random_cell(seed, 64, 16))
        cells.append(make_random_cell(seed, 1 + seed % 16, 4, activation="identity"))
        cells.append(make_random_cell(seed, 1 + seed % 16, 4, activation="identity", orthogonal=False,
                                      input_scale=1.0, bias_scale=1.0))
        cells.append(make_random_cell(seed, 32, 16, orthogonal=False, input_scale=4.0, bias_scale=1.0))
        for preset in ("default", "identity", "multiscale"):
            cells.append(_build_cell(preset, seed))
    violations = sum(contraction_violations(c, pairs=100, seed=i) for i, c in enumerate(cells))
    report(10, violations == 0, f"{len(cells)} cells x 100 pairs, {violations} violations")
    assert violations == 0
