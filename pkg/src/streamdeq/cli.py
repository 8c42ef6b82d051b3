"""Command-line front end: ``streamdeq {solve,stream,bench,gen-sequence}``.

Exit codes: 0 success, 1 runtime or solver failure, 2 usage error. Summaries
go to stdout, data only to files. The default output directory comes from
``STREAMDEQ_OUT_DIR`` (falling back to ``./results``).
"""

import argparse
import os
import sys

import numpy as np

from . import bench
from .cell import ActivationKind, load_cell, make_multiscale_cell, make_random_cell, residual
from .linalg import l2_norm
from .readout import make_readout_head
from .sequence import SequenceSpec, generate_sequence, load_sequence_spec, read_frames, write_frames
from .solver import ConvergenceError, DivergenceError, SolverConfig, solve
from .stream import BudgetSchedule, StreamError, WarmStartPolicy, stream_infer

OUT_DIR_ENV = "STREAMDEQ_OUT_DIR"

CELL_PRESETS = ("default", "identity", "multiscale")
SEQUENCE_PRESETS = {
    "walk": dict(mode="random_walk", epsilon=0.05),
    "walk-slow": dict(mode="random_walk", epsilon=0.01),
    "walk-fast": dict(mode="random_walk", epsilon=0.2),
    "shot": dict(mode="random_walk", epsilon=bench.SHOT_EPSILON, shot_frames=[30]),
    "static": dict(mode="random_walk", epsilon=0.0),
    "blob": dict(mode="moving_blob", grid=[4, 4], velocity=[0.25, 0.125]),
}


class UsageError(Exception):
    pass


def _default_out_dir():
    return os.environ.get(OUT_DIR_ENV) or "results"


def _build_cell(ref, seed):
    if ref == "default":
        return make_random_cell(seed, 64, 16)
    if ref == "identity":
        return make_random_cell(seed, 16, 16, activation=ActivationKind.IDENTITY)
    if ref == "multiscale":
        return make_multiscale_cell(seed, [(4, 4, 4), (2, 2, 8), (1, 1, 16)], 16)
    if not os.path.exists(ref):
        raise UsageError(f"--cell: {ref!r} is neither a preset ({', '.join(CELL_PRESETS)}) nor a file")
    return load_cell(ref)


def _sequence_spec(ref, seed, length, dx):
    if ref in SEQUENCE_PRESETS:
        return SequenceSpec(length=length, dx=dx, seed=seed + bench.SEQUENCE_SEED_OFFSET, **SEQUENCE_PRESETS[ref])
    if ref.endswith(".json") and os.path.exists(ref):
        spec = load_sequence_spec(ref)
        return spec if length is None else spec.replace(length=length)
    return None


def _load_frames(ref, seed, length, dx):
    spec = _sequence_spec(ref, seed, length, dx)
    if spec is not None:
        return generate_sequence(spec)
    if not os.path.exists(ref):
        names = ", ".join(SEQUENCE_PRESETS)
        raise UsageError(f"--sequence: {ref!r} is neither a preset ({names}) nor a file")
    frames = read_frames(ref)
    if length is not None:
        if length > len(frames):
            raise UsageError(f"--frames {length} but {ref} holds only {len(frames)} frames")
        frames = frames[:length]
    return frames


def _load_input(ref, seed, dx):
    if ref == "default":
        return generate_sequence(SequenceSpec(length=1, dx=dx, seed=seed + bench.SEQUENCE_SEED_OFFSET))[0]
    if ref == "zeros":
        return np.zeros(dx)
    if not os.path.exists(ref):
        raise UsageError(f"--input: {ref!r} is neither a preset (default, zeros) nor a file")
    return read_frames(ref)[0]


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _float_pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return a, b


def _grid(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return h, w


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_solve(args):
    cell = _build_cell(args.cell, args.seed)
    x = _load_input(args.input, args.seed, cell.dx)
    if x.shape != (cell.dx,):
        raise UsageError(f"input has {x.size} values, cell expects {cell.dx}")
    cfg = SolverConfig(args.solver, args.iters, args.tol)
    z0 = np.zeros(cell.dz)
    result = solve(cell, x, z0, cfg)
    res = result.residual_norm if result.iterations else l2_norm(residual(cell, z0, x))
    print(f"solver={cfg.method.value} iterations={result.iterations} "
          f"residual_norm={res:.6e} converged={'true' if result.converged else 'false'}")
    return 0


def cmd_stream(args):
    cell = _build_cell(args.cell, args.seed)
    if args.schedule is not None:
        frames_n = args.frames if args.frames is not None else len(args.schedule)
        schedule = BudgetSchedule.frames(args.schedule)
    else:
        frames_n = args.frames if args.frames is not None else 40
        schedule = BudgetSchedule.of(args.budget if args.budget is not None else 1)
    try:
        schedule.check(frames_n)
    except ValueError as exc:
        raise UsageError(str(exc))
    frames = _load_frames(args.sequence, args.seed, frames_n, cell.dx)
    if len(frames) != frames_n:
        raise UsageError(f"sequence has {len(frames)} frames, expected {frames_n}")
    if frames[0].shape != (cell.dx,):
        raise UsageError(f"frames have {frames[0].size} values, cell expects {cell.dx}")
    head = make_readout_head(args.seed + bench.HEAD_SEED_OFFSET, bench.DEFAULT_CLASSES, cell)
    cfg = SolverConfig(args.solver, 1, args.tol)
    policy = WarmStartPolicy.parse(args.policy)
    records = stream_infer(cell, frames, policy, schedule, cfg, args.refs, head=head if args.refs else None)
    M = schedule.constant if schedule.constant is not None else 0
    rows = [
        bench.MetricsRow("stream", args.seed, policy.value, M, r.t, r.iterations_used,
                         r.residual_norm, r.sq_dist_to_reference, r.label_agreement)
        for r in records
    ]
    out = args.out or os.path.join(_default_out_dir(), "stream.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    bench.write_csv(rows, out)
    last = records[-1]
    msg = f"policy={policy.value} frames={len(records)} final_residual={last.residual_norm:.6e}"
    if args.refs:
        msg += f" final_sq_dist={last.sq_dist_to_reference:.6e}"
    print(msg)
    print(f"wrote {out}")
    return 0


def cmd_bench(args):
    if args.spec:
        spec = bench.load_experiment_spec(args.spec)
        if args.seeds is not None:
            spec = spec.replace(seeds=tuple(range(args.seed, args.seed + args.seeds)))
    else:
        if args.suite is None:
            raise UsageError("give --suite or --spec")
        count = args.seeds if args.seeds is not None else bench.DEFAULT_SEEDS
        spec = bench.preset_spec(args.suite, range(args.seed, args.seed + count))
    out_dir = args.out or (spec.out_dir if args.spec else None) or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)

    result = bench.run(spec)
    name = spec.name.value
    csv_path = os.path.join(out_dir, f"{name}.csv")
    svg_path = os.path.join(out_dir, f"{name}.svg")
    bench.write_csv(result.rows, csv_path)
    written = [csv_path]
    if result.baseline_rows:
        base_path = os.path.join(out_dir, f"{name}.baseline.csv")
        bench.write_csv(result.baseline_rows, base_path)
        written.append(base_path)
    bench.render_svg_lines(result.rows + result.baseline_rows, ("policy", "M"), svg_path)
    written.append(svg_path)
    if args.timing:
        timing_path = os.path.join(out_dir, f"{name}.timing.csv")
        bench.write_timing_csv(name, result.timings, timing_path)
        written.append(timing_path)

    checks = bench.suite_checks(result)
    print(f"{name}: {len(spec.seeds)} seeds, budgets {list(spec.budgets)}, {len(result.rows)} rows")
    for c in checks:
        print(c.line())
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_gen_sequence(args):
    if args.spec:
        spec = load_sequence_spec(args.spec)
    else:
        fields = dict(mode=args.mode, length=args.length, dx=args.dx, epsilon=args.epsilon,
                      shot_frames=args.shots or [], seed=args.seed)
        if args.grid:
            fields["grid"] = args.grid
        if args.velocity:
            fields["velocity"] = args.velocity
        spec = SequenceSpec(**fields)
    frames = generate_sequence(spec)
    write_frames(frames, args.out)
    print(f"mode={spec.mode.value} frames={len(frames)} dim={spec.frame_dim} wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="streamdeq", description="Streaming fixed-point inference.")
    p.add_argument("--seed", type=int, default=0, help="base seed for cells, sequences and heads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one fixed point")
    s.add_argument("--cell", default="default", help="preset (default, identity, multiscale) or cell JSON")
    s.add_argument("--input", default="default", help="preset (default, zeros) or frame dump file")
    s.add_argument("--solver", choices=["picard", "broyden"], default="broyden")
    s.add_argument("--iters", type=int, default=26)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("stream", help="budgeted solves over a frame sequence")
    s.add_argument("--cell", default="default")
    s.add_argument("--policy", choices=[p.value for p in WarmStartPolicy], default="stream-zero")
    budget = s.add_mutually_exclusive_group()
    budget.add_argument("--budget", type=int, help="iterations per frame")
    budget.add_argument("--schedule", type=_int_list, help="comma-separated per-frame budgets")
    s.add_argument("--frames", type=int, help="number of frames (default 40, or the schedule length)")
    s.add_argument("--sequence", default="walk",
                   help=f"preset ({', '.join(SEQUENCE_PRESETS)}), sequence JSON or frame dump")
    s.add_argument("--solver", choices=["picard", "broyden"], default="broyden")
    s.add_argument("--tol", type=float, default=0.0)
    s.add_argument("--refs", action="store_true", help="compute reference fixed points and distances")
    s.add_argument("--out", help="CSV path")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("bench", help="run an experiment preset")
    s.add_argument("--suite", choices=sorted(bench.SUITE_ALIASES))
    s.add_argument("--spec", help="experiment spec JSON (overrides --suite)")
    s.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    s.add_argument("--out", help="output directory")
    s.add_argument("--timing", action="store_true", help="also write per-frame wall-clock times")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gen-sequence", help="write a synthetic sequence as a frame dump")
    s.add_argument("--spec", help="sequence spec JSON")
    s.add_argument("--mode", default="random_walk")
    s.add_argument("--length", type=int, default=40)
    s.add_argument("--dx", type=int, default=16)
    s.add_argument("--grid", type=_grid, help="HxW for moving_blob")
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--velocity", type=_float_pair, help="vx,vy for moving_blob")
    s.add_argument("--shots", type=_int_list, help="comma-separated shot frames")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_sequence)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seeds", None) is not None and args.seeds < 1:
            raise UsageError("--seeds must be positive")
        return args.func(args)
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"streamdeq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, ConvergenceError, StreamError, OSError) as exc:
        print(f"streamdeq {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
