"""Experiment presets, metric rows, CSV/SVG emission and suite property checks.

Every preset runs the same loop: for each seed build a cell (seed ``s``), a
sequence (seed ``s + 1000``) and a readout head (seed ``s + 2000``), compute
the reference fixed points once, then stream every (policy, budget) pair over
the frames. Aggregates are plain means over seeds.
"""

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cell import (
    DEFAULT_BIAS_SCALE,
    DEFAULT_GAMMA,
    DEFAULT_INPUT_SCALE,
    ActivationKind,
    MultiscaleLayout,
    make_multiscale_cell,
    make_random_cell,
)
from .linalg import l2_norm
from .readout import make_readout_head
from .sequence import SequenceSpec, generate_sequence
from .solver import SolverConfig, SolverMethod, picard_solve
from .stream import BudgetSchedule, WarmStartPolicy, reference_states, stream_infer

SEQUENCE_SEED_OFFSET = 1000
HEAD_SEED_OFFSET = 2000
DEFAULT_CLASSES = 10
DEFAULT_SEEDS = 20
SVG_FLOOR = 1e-18
SHOT_EPSILON = 0.5  # calibrated, see benchmarks/calibrate_shot_change.py

CSV_HEADER = (
    "experiment,seed,policy,M,t,iterations_used,residual_norm,sq_dist_to_reference,label_agreement"
)
TIMING_HEADER = "experiment,seed,policy,M,t,seconds"
_NUMERIC = CSV_HEADER.split(",")[3:]


class Preset(enum.Enum):
    FIG2 = "fig2-analog"
    FIG3_REF = "fig3-ref-analog"
    FIG3_ZERO = "fig3-zero-analog"
    SHOT_CHANGE = "shot-change-analog"
    STATIC_EQ = "static-equivalence"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in SUITE_ALIASES:
            return SUITE_ALIASES[key]
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(sorted(SUITE_ALIASES))
            raise ValueError(f"unknown experiment {value!r}; expected one of {names}")


SUITE_ALIASES = {
    "fig2": Preset.FIG2,
    "fig3-ref": Preset.FIG3_REF,
    "fig3-zero": Preset.FIG3_ZERO,
    "shot-change": Preset.SHOT_CHANGE,
    "static-eq": Preset.STATIC_EQ,
}

# main policy, then an optional baseline written to its own CSV
PRESET_POLICIES = {
    Preset.FIG2: (WarmStartPolicy.REFERENCE_CHAIN, WarmStartPolicy.COLD_START),
    Preset.FIG3_REF: (WarmStartPolicy.STREAM_FROM_REFERENCE, None),
    Preset.FIG3_ZERO: (WarmStartPolicy.STREAM_FROM_ZERO, WarmStartPolicy.COLD_START),
    Preset.SHOT_CHANGE: (WarmStartPolicy.STREAM_FROM_ZERO, None),
    Preset.STATIC_EQ: (WarmStartPolicy.STREAM_FROM_ZERO, None),
}


@dataclass(frozen=True)
class CellParams:
    dz: int = 64
    dx: int = 16
    gamma: float = DEFAULT_GAMMA
    activation: str = "tanh"
    orthogonal: bool = True
    input_scale: float = DEFAULT_INPUT_SCALE
    bias_scale: float = DEFAULT_BIAS_SCALE
    scales: tuple = None  # (h, w, c) per scale for a multiscale cell

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation).value)
        if self.scales is not None:
            object.__setattr__(self, "scales", tuple(tuple(int(v) for v in s) for s in self.scales))
            object.__setattr__(self, "dz", MultiscaleLayout(self.scales).dz)

    def build(self, seed):
        kw = dict(orthogonal=self.orthogonal, input_scale=self.input_scale, bias_scale=self.bias_scale)
        if self.scales is not None:
            return make_multiscale_cell(seed, self.scales, self.dx, self.gamma, self.activation, **kw)
        return make_random_cell(seed, self.dz, self.dx, self.gamma, self.activation, **kw)

    def to_dict(self):
        d = asdict(self)
        d["scales"] = None if self.scales is None else [list(s) for s in self.scales]
        return d


@dataclass(frozen=True)
class ExperimentSpec:
    name: Preset
    seeds: tuple = tuple(range(DEFAULT_SEEDS))
    budgets: tuple = (1, 2, 4, 8)
    solver: SolverMethod = SolverMethod.PICARD
    cell: CellParams = field(default_factory=CellParams)
    sequence: SequenceSpec = field(default_factory=SequenceSpec)
    classes: int = DEFAULT_CLASSES
    baseline: bool = True
    out_dir: str = "."

    def __post_init__(self):
        object.__setattr__(self, "name", Preset.parse(self.name))
        object.__setattr__(self, "solver", SolverMethod.parse(self.solver))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "budgets", tuple(int(m) for m in self.budgets))
        if not self.budgets:
            raise ValueError("budgets must be nonempty")
        if any(m < 1 for m in self.budgets):
            raise ValueError(f"budgets must be positive, got {self.budgets}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if self.sequence.frame_dim != self.cell.dx:
            raise ValueError(
                f"sequence frames have {self.sequence.frame_dim} values but the cell takes dx={self.cell.dx}"
            )

    @property
    def policy(self):
        return PRESET_POLICIES[self.name][0]

    @property
    def baseline_policy(self):
        return PRESET_POLICIES[self.name][1] if self.baseline else None

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {
            "name": self.name.value,
            "seeds": list(self.seeds),
            "budgets": list(self.budgets),
            "solver": self.solver.value,
            "cell": self.cell.to_dict(),
            "sequence": self.sequence.to_dict(),
            "classes": self.classes,
            "baseline": self.baseline,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d):
        """Build from a spec-file mapping; ``cell.*`` / ``sequence.*`` may be dotted or nested."""
        d = dict(d)
        nested = {"cell": dict(d.pop("cell", {}) or {}), "sequence": dict(d.pop("sequence", {}) or {})}
        for key in list(d):
            head, dot, rest = key.partition(".")
            if dot and head in nested:
                nested[head][rest] = d.pop(key)
        known = {"name", "seeds", "budgets", "solver", "classes", "baseline", "out_dir"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        if "name" not in d:
            raise ValueError("experiment spec needs a name")
        base = preset_spec(d["name"])
        if isinstance(d.get("seeds"), int):
            d["seeds"] = range(d["seeds"])
        cell = CellParams(**{**base.cell.to_dict(), **nested["cell"]})
        seq = base.sequence.replace(**nested["sequence"]) if nested["sequence"] else base.sequence
        return base.replace(**{k: v for k, v in d.items() if k != "name"}, cell=cell, sequence=seq)


def preset_spec(name, seeds=DEFAULT_SEEDS, out_dir="."):
    """The shipped configuration of each preset; ``seeds`` is a count or a list."""
    preset = Preset.parse(name)
    seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(seeds)
    walk = SequenceSpec("random_walk", length=40, dx=16, epsilon=0.05)
    budgets = (1, 2, 4, 8)
    if preset is Preset.SHOT_CHANGE:
        walk = walk.replace(length=60, epsilon=SHOT_EPSILON, shot_frames=[30])
        budgets = (4,)
    elif preset is Preset.STATIC_EQ:
        walk = walk.replace(epsilon=0.0)
        budgets = (2,)
    return ExperimentSpec(preset, seeds, budgets, SolverMethod.PICARD, CellParams(), walk, out_dir=out_dir)


def load_experiment_spec(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    seed: int
    policy: str
    M: int
    t: int
    iterations_used: int
    residual_norm: float
    sq_dist_to_reference: float = None
    label_agreement: float = None

    def key(self):
        return (self.seed, self.policy, self.M, self.t)


@dataclass
class RunOutput:
    """Rows of a run plus what the property checks need beyond them."""

    spec: ExperimentSpec
    rows: list
    baseline_rows: list
    deltas: dict  # seed -> ||z*_t - z*_{t-1}|| for t >= 1
    timings: list  # (seed, policy, M, t, seconds)


def _stream_rows(spec, seed, policy, M, records):
    return [
        MetricsRow(
            spec.name.value,
            seed,
            policy.value,
            M,
            r.t,
            r.iterations_used,
            r.residual_norm,
            r.sq_dist_to_reference,
            r.label_agreement,
        )
        for r in records
    ]


def run(spec, backend=None):
    """Run ``spec`` and keep the extras (reference steps, timings)."""
    cfg = SolverConfig(spec.solver, 1, 0.0)
    rows, baseline_rows, timings, deltas = [], [], [], {}
    policies = [(spec.policy, rows)]
    if spec.baseline_policy is not None:
        policies.append((spec.baseline_policy, baseline_rows))
    for seed in spec.seeds:
        cell = spec.cell.build(seed)
        frames = generate_sequence(spec.sequence.replace(seed=seed + SEQUENCE_SEED_OFFSET))
        head = make_readout_head(seed + HEAD_SEED_OFFSET, spec.classes, cell)
        refs = reference_states(cell, frames, backend)
        deltas[seed] = np.array([l2_norm(b - a) for a, b in zip(refs, refs[1:])])
        for policy, sink in policies:
            for M in spec.budgets:
                records = stream_infer(
                    cell, frames, policy, BudgetSchedule.of(M), cfg, True,
                    references=refs, head=head, backend=backend,
                )
                sink.extend(_stream_rows(spec, seed, policy, M, records))
                timings.extend((seed, policy.value, M, r.t, r.seconds) for r in records)
    rows.sort(key=MetricsRow.key)
    baseline_rows.sort(key=MetricsRow.key)
    return RunOutput(spec, rows, baseline_rows, deltas, timings)


def run_experiment(spec, backend=None):
    """One :class:`MetricsRow` per (seed, policy, M, t), baseline rows included."""
    out = run(spec, backend)
    return sorted(out.rows + out.baseline_rows, key=MetricsRow.key)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(rows, path):
    if not rows:
        raise ValueError("write_csv needs at least one row")
    lines = [CSV_HEADER]
    for r in sorted(rows, key=MetricsRow.key):
        lines.append(",".join([r.experiment, _fmt(r.seed), r.policy] + [_fmt(getattr(r, k)) for k in _NUMERIC]))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _opt_float(s):
    return float(s) if s else None


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or wrong header")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        f = line.split(",")
        if len(f) != 9:
            raise ValueError(f"{path}:{lineno}: expected 9 fields, got {len(f)}")
        rows.append(
            MetricsRow(f[0], int(f[1]), f[2], int(f[3]), int(f[4]), int(f[5]),
                       float(f[6]), _opt_float(f[7]), _opt_float(f[8]))
        )
    return rows


def write_timing_csv(experiment, timings, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TIMING_HEADER + "\n")
        for seed, policy, M, t, sec in sorted(timings, key=lambda r: r[:4]):
            fh.write(f"{experiment},{seed},{policy},{M},{t},{sec:.9f}\n")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def seed_mean(rows, policy, M, metric="sq_dist_to_reference"):
    """Mean of ``metric`` over seeds, one entry per frame."""
    policy = WarmStartPolicy.parse(policy).value
    by_t = {}
    for r in rows:
        if r.policy == policy and r.M == M:
            by_t.setdefault(r.t, []).append(getattr(r, metric))
    if not by_t:
        raise KeyError(f"no rows for policy={policy} M={M}")
    return np.array([np.mean(by_t[t]) for t in sorted(by_t)])


def per_seed(rows, policy, M, metric="sq_dist_to_reference"):
    policy = WarmStartPolicy.parse(policy).value
    out = {}
    for r in rows:
        if r.policy == policy and r.M == M:
            out.setdefault(r.seed, []).append((r.t, getattr(r, metric)))
    return {s: np.array([v for _, v in sorted(vals)]) for s, vals in out.items()}


def plateau_mean(curve, start=20, stop=40):
    return float(np.mean(curve[start:stop]))


@dataclass(frozen=True)
class ShotRecovery:
    seed: int
    jump_ratio: float  # d_shot / pre-shot plateau mean
    frames_to_recover: int = None  # None: not back within the window

    @property
    def ok(self):
        return self.jump_ratio > 2.0 and self.frames_to_recover is not None


def shot_recovery(seed, curve, shot, window=10, jump=2.0, within=1.2):
    """Recovery detector: the shot must jump above ``jump`` times the mean over
    the ``window`` frames before it, then come back to ``within`` times that
    mean at most ``window`` frames later."""
    pre = float(np.mean(curve[shot - window:shot]))
    ratio = curve[shot] / pre if pre > 0 else math.inf
    back = None
    for k in range(1, window + 1):
        if shot + k < len(curve) and curve[shot + k] <= within * pre:
            back = k
            break
    return ShotRecovery(seed, float(ratio), back)


# ---------------------------------------------------------------------------
# suite checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _ordering_check(rows, policy, budgets, picard):
    plateaus = [plateau_mean(seed_mean(rows, policy, M)) for M in budgets]
    ok = True
    for a, b in zip(plateaus, plateaus[1:]):
        ok &= b <= a + 1e-9 if picard else b <= a * 1.05
    detail = ", ".join(f"M={M}:{p:.3e}" for M, p in zip(budgets, plateaus))
    return Check("plateau nonincreasing in M", bool(ok), detail)


def static_equivalence(spec, backend=None):
    """Streaming a constant input for T frames of M Picard steps equals one
    cold solve of T*M steps, bit for bit. Returns the seeds that differ."""
    M = spec.budgets[0]
    bad = []
    for seed in spec.seeds:
        cell = spec.cell.build(seed)
        frames = generate_sequence(spec.sequence.replace(seed=seed + SEQUENCE_SEED_OFFSET))
        cfg = SolverConfig(SolverMethod.PICARD, M, 0.0)
        recs = stream_infer(
            cell, frames, WarmStartPolicy.STREAM_FROM_ZERO, BudgetSchedule.of(M), cfg,
            keep_states=True, backend=backend,
        )
        once = picard_solve(cell, frames[0], np.zeros(cell.dz), cfg.with_iters(M * len(frames)), backend)
        if not np.array_equal(recs[-1].z_final, once.z):
            bad.append(seed)
    return bad


def suite_checks(out, backend=None):
    """Built-in property checks of a finished run."""
    spec, rows = out.spec, out.rows
    picard = spec.solver is SolverMethod.PICARD
    checks = []
    name = spec.name
    if name is Preset.STATIC_EQ:
        bad = static_equivalence(spec, backend)
        checks.append(Check("static equivalence (bitwise)", not bad, f"differing seeds {bad}" if bad else ""))
        return checks
    if name is Preset.SHOT_CHANGE:
        shot = spec.sequence.shot_frames[0]
        for M in spec.budgets:
            recs = [shot_recovery(s, c, shot) for s, c in sorted(per_seed(rows, spec.policy, M).items())]
            n_ok = sum(r.ok for r in recs)
            need = math.ceil(0.9 * len(recs))
            frames = " ".join(
                f"{r.seed}:{r.frames_to_recover if r.ok else '-'}" for r in recs
            )
            checks.append(Check(f"shot recovery M={M}", n_ok >= need, f"{n_ok}/{len(recs)} seeds; {frames}"))
        return checks
    if name is Preset.FIG2 and spec.baseline_policy is not None and 1 in spec.budgets:
        warm = seed_mean(rows, spec.policy, 1)
        cold_M = max(spec.budgets)
        cold = seed_mean(out.baseline_rows, spec.baseline_policy, cold_M)
        ok = bool(np.all(warm[1:] < cold[1:]))
        checks.append(Check(f"warm M=1 below cold M={cold_M} for t>=1", ok))
    if spec.sequence.length >= 40:
        if picard and spec.policy is WarmStartPolicy.STREAM_FROM_ZERO:
            stab = [plateau_mean(seed_mean(rows, spec.policy, M)) <= seed_mean(rows, spec.policy, M)[5]
                    for M in spec.budgets]
            checks.append(Check("plateau at or below t=5", all(stab)))
        checks.append(_ordering_check(rows, spec.policy, spec.budgets, picard))
        if 1 in spec.budgets and 4 in spec.budgets:
            a1 = plateau_mean(seed_mean(rows, spec.policy, 1, "label_agreement"))
            a4 = plateau_mean(seed_mean(rows, spec.policy, 4, "label_agreement"))
            ok = a4 > a1 or (a4 == 1.0 and a1 == 1.0)
            checks.append(Check("label agreement M=4 above M=1", ok, f"{a4:.3f} vs {a1:.3f}"))
    if picard and spec.policy is not WarmStartPolicy.REFERENCE_CHAIN:
        gamma = spec.cell.gamma
        worst = -math.inf
        for M in spec.budgets:
            for seed, d2 in per_seed(rows, spec.policy, M).items():
                d = np.sqrt(d2)
                slack = d[1:] - (gamma ** M * (d[:-1] + out.deltas[seed]) + 1e-9)
                worst = max(worst, float(slack.max()))
        checks.append(Check("Picard error recursion", worst <= 0.0, f"max slack {worst:.3e}"))
    return checks


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
_W, _H = 720, 440
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 170, 30, 50


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg_lines(rows, group_keys, path, title=None):
    """One polyline per group: seed-mean squared distance against frame index
    on a log10 axis (values below 1e-18 are drawn at the floor)."""
    rows = [r for r in rows if r.sq_dist_to_reference is not None]
    if not rows:
        raise ValueError("no rows with distances to plot")
    experiments = {r.experiment for r in rows}
    if len(experiments) != 1:
        raise ValueError(f"rows mix experiments {sorted(experiments)}")
    groups = {}
    for r in rows:
        key = tuple(getattr(r, k) for k in group_keys)
        groups.setdefault(key, {}).setdefault(r.t, []).append(r.sq_dist_to_reference)
    series = {}
    for key in sorted(groups):
        by_t = groups[key]
        ts = sorted(by_t)
        ys = [math.log10(max(float(np.mean(by_t[t])), SVG_FLOOR)) for t in ts]
        series[key] = (ts, ys)

    t_max = max(max(ts) for ts, _ in series.values())
    y_lo = math.floor(min(min(ys) for _, ys in series.values()))
    y_hi = math.ceil(max(max(ys) for _, ys in series.values()))
    if y_hi == y_lo:
        y_hi += 1
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(t):
        return _LEFT + (pw * t / t_max if t_max else 0.0)

    def py(y):
        return _TOP + ph * (y_hi - y) / (y_hi - y_lo)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_LEFT + pw / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{_esc(title or next(iter(experiments)))}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = max(1, int(math.ceil((y_hi - y_lo) / 10)))
    for y in range(y_lo, y_hi + 1, step):
        out.append(f'<line x1="{_LEFT - 4}" y1="{py(y):.2f}" x2="{_LEFT}" y2="{py(y):.2f}" stroke="black"/>')
        out.append(
            f'<text x="{_LEFT - 7}" y="{py(y) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">1e{y}</text>'
        )
    xstep = max(1, int(math.ceil(t_max / 8 / 5)) * 5) if t_max >= 10 else 1
    for t in range(0, t_max + 1, xstep):
        out.append(f'<line x1="{px(t):.2f}" y1="{_TOP + ph}" x2="{px(t):.2f}" y2="{_TOP + ph + 4}" stroke="black"/>')
        out.append(
            f'<text x="{px(t):.2f}" y="{_TOP + ph + 17}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{t}</text>'
        )
    out.append(
        f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">frame t</text>'
    )
    out.append(
        f'<text x="16" y="{_TOP + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_TOP + ph / 2:.1f})">squared distance to reference (log10)</text>'
    )
    for i, (key, (ts, ys)) in enumerate(series.items()):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(t):.2f},{py(y):.2f}" for t, y in zip(ts, ys))
        label = " ".join(f"{k}={v}" for k, v in zip(group_keys, key))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = _TOP + 12 + 18 * i
        lx = _W - _RIGHT + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(
            f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="11">{_esc(label)}</text>'
        )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
