"""Streaming fixed-point inference.

Budgeted Picard / Broyden solves of a contractive weight-tied cell, warm
started across the frames of an input stream.
"""

from ._kernels import BACKEND
from .cell import (
    ActivationKind,
    EquilibriumCell,
    MultiscaleLayout,
    analytic_fixed_point,
    cell_apply,
    contraction_violations,
    load_cell,
    make_multiscale_cell,
    make_random_cell,
    residual,
    save_cell,
)
from .readout import ReadoutHead, label_agreement, make_readout_head
from .sequence import SequenceMode, SequenceSpec, generate_sequence, read_frames, write_frames
from .solver import (
    ConvergenceError,
    DivergenceError,
    SolveResult,
    SolverConfig,
    SolverMethod,
    broyden_solve,
    picard_solve,
    reference_fixed_point,
    solve,
)
from .stream import (
    BudgetSchedule,
    FrameRecord,
    StreamError,
    WarmStartPolicy,
    replay_recursion_diagnostic,
    stream_infer,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ActivationKind",
    "BudgetSchedule",
    "ConvergenceError",
    "DivergenceError",
    "EquilibriumCell",
    "FrameRecord",
    "MultiscaleLayout",
    "ReadoutHead",
    "SequenceMode",
    "SequenceSpec",
    "SolveResult",
    "SolverConfig",
    "SolverMethod",
    "StreamError",
    "WarmStartPolicy",
    "analytic_fixed_point",
    "broyden_solve",
    "cell_apply",
    "contraction_violations",
    "generate_sequence",
    "label_agreement",
    "load_cell",
    "make_multiscale_cell",
    "make_random_cell",
    "make_readout_head",
    "picard_solve",
    "read_frames",
    "reference_fixed_point",
    "replay_recursion_diagnostic",
    "residual",
    "save_cell",
    "solve",
    "stream_infer",
    "write_frames",
]
