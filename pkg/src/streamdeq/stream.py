"""Per-frame budgeted solves with warm starts carried across a stream.

Warm-start policies, for frame ``t`` with reference fixed points ``z*_t``:

``COLD_START``
    every frame starts from zeros.
``REFERENCE_CHAIN``
    frame ``t >= 1`` starts from ``z*_{t-1}``; frame 0 from zeros.
``STREAM_FROM_REFERENCE``
    frame 0 is ``z*_0``; later frames start from the previous frame's estimate.
``STREAM_FROM_ZERO``
    frame 0 starts from zeros; later frames start from the previous estimate.

Only the state carries over between frames; Broyden's low-rank inverse
Jacobian is rebuilt from ``-I`` on every frame.
"""

import enum
import time
from dataclasses import dataclass

import numpy as np

from .linalg import l2_norm, sq_distance
from .readout import label_agreement
from .cell import residual
from .solver import ConvergenceError, DivergenceError, reference_solve, solve


class WarmStartPolicy(enum.Enum):
    COLD_START = "cold"
    REFERENCE_CHAIN = "ref-chain"
    STREAM_FROM_REFERENCE = "stream-ref"
    STREAM_FROM_ZERO = "stream-zero"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {value!r}; expected one of {names}")


@dataclass(frozen=True)
class BudgetSchedule:
    """Per-frame iteration budget: a constant ``M`` or an explicit list."""

    constant: int = None
    per_frame: tuple = None

    def __post_init__(self):
        if (self.constant is None) == (self.per_frame is None):
            raise ValueError("give exactly one of constant or per_frame")
        if self.constant is not None and self.constant < 1:
            raise ValueError(f"constant budget must be positive, got {self.constant}")
        if self.per_frame is not None:
            budgets = tuple(int(m) for m in self.per_frame)
            if any(m < 0 for m in budgets):
                raise ValueError(f"per-frame budgets must be >= 0, got {budgets}")
            object.__setattr__(self, "per_frame", budgets)

    @classmethod
    def of(cls, m):
        return cls(constant=int(m))

    @classmethod
    def frames(cls, budgets):
        return cls(per_frame=tuple(budgets))

    def check(self, n_frames):
        if self.per_frame is not None and len(self.per_frame) != n_frames:
            raise ValueError(
                f"schedule has {len(self.per_frame)} entries but the stream has {n_frames} frames"
            )

    def __call__(self, t):
        return self.constant if self.per_frame is None else self.per_frame[t]


@dataclass(eq=False)
class FrameRecord:
    t: int
    iterations_used: int
    residual_norm: float
    sq_dist_to_reference: float = None
    label_agreement: float = None
    z_final: np.ndarray = None
    seconds: float = None  # wall clock of the frame's solve, not deterministic


class StreamError(RuntimeError):
    """A solve failed inside a stream; ``t`` is the frame index."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


def reference_states(cell, frames, backend=None):
    """Reference fixed point of every frame (the oracle pass)."""
    refs = []
    for t, x in enumerate(frames):
        try:
            refs.append(reference_solve(cell, x, backend).z)
        except (ConvergenceError, DivergenceError) as exc:
            raise StreamError(f"reference at frame {t}: {exc}", t) from exc
    return refs


def stream_infer(
    cell,
    frames,
    policy,
    schedule,
    solver_cfg,
    compute_references=False,
    *,
    references=None,
    head=None,
    keep_states=False,
    backend=None,
):
    """Run the stream frame by frame and return one :class:`FrameRecord` per frame.

    ``schedule(t)`` overrides ``solver_cfg.max_iters`` for frame ``t``. When
    ``compute_references`` is set, each record also gets the squared distance
    to ``z*_t`` (and the label agreement if ``head`` is given). Precomputed
    ``references`` may be passed to skip the oracle pass.
    """
    policy = WarmStartPolicy.parse(policy)
    if isinstance(schedule, int):
        schedule = BudgetSchedule.of(schedule)
    schedule.check(len(frames))
    for t, x in enumerate(frames):
        if np.shape(x) != (cell.dx,):
            raise ValueError(f"frame {t} has shape {np.shape(x)}, cell expects ({cell.dx},)")

    refs = references
    if refs is None and (compute_references or policy is WarmStartPolicy.REFERENCE_CHAIN):
        refs = reference_states(cell, frames, backend)
    elif refs is not None and len(refs) != len(frames):
        raise ValueError(f"{len(refs)} references for {len(frames)} frames")

    records = []
    z_prev = None
    for t, x in enumerate(frames):
        budget = schedule(t)
        first_ref = None
        start = time.perf_counter()
        if policy is WarmStartPolicy.COLD_START or t == 0:
            z0 = np.zeros(cell.dz)
            if policy is WarmStartPolicy.STREAM_FROM_REFERENCE:
                try:
                    first_ref = reference_solve(cell, x, backend)
                except (ConvergenceError, DivergenceError) as exc:
                    raise StreamError(f"frame {t}: {exc}", t) from exc
        elif policy is WarmStartPolicy.REFERENCE_CHAIN:
            z0 = refs[t - 1]
        else:
            z0 = z_prev

        if first_ref is not None:
            z, iters, res = first_ref.z, first_ref.iterations, first_ref.residual_norm
        elif budget == 0:
            z = np.array(z0, dtype=np.float64)
            iters, res = 0, l2_norm(residual(cell, z, x, backend))
        else:
            try:
                out = solve(cell, x, z0, solver_cfg.with_iters(budget), backend)
            except DivergenceError as exc:
                raise StreamError(f"frame {t}: {exc}", t) from exc
            z, iters, res = out.z, out.iterations, out.residual_norm

        rec = FrameRecord(t=t, iterations_used=iters, residual_norm=res)
        rec.seconds = time.perf_counter() - start
        if compute_references:
            rec.sq_dist_to_reference = sq_distance(z, refs[t])
            if head is not None:
                rec.label_agreement = label_agreement(head, z, refs[t])
        if keep_states:
            rec.z_final = z
        records.append(rec)
        z_prev = z
    return records


def replay_recursion_diagnostic(cell, frames, M, solver_cfg, *, head=None, backend=None):
    """Every frame warm-started from the previous frame's reference, ``M`` steps each."""
    return stream_infer(
        cell,
        frames,
        WarmStartPolicy.REFERENCE_CHAIN,
        BudgetSchedule.of(M),
        solver_cfg,
        compute_references=True,
        head=head,
        backend=backend,
    )
