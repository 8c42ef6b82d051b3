"""Weight-tied equilibrium cells ``f(z; x) = act(A z + U x + b)``.

The state map ``A`` is rescaled to spectral norm ``gamma < 1`` at construction.
Both activations are 1-Lipschitz, so every cell is a strict contraction in
``z`` and has a unique fixed point for each input.
"""

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .linalg import DimensionError, as_matrix, as_vector, l2_norm, spectral_norm

CELL_FORMAT = "streamdeq-cell/1"
DEFAULT_GAMMA = 0.9
# slack allowed between the exact spectral norm of A and gamma
SPECTRAL_SLACK = 1e-6
# rounding allowance for the Lipschitz check: with A = gamma * (orthogonal)
# the bound is an equality, so ulp-level excess is expected
LIPSCHITZ_RTOL = 1e-12
DEFAULT_INPUT_SCALE = 0.006
DEFAULT_BIAS_SCALE = 0.01


class ActivationKind(enum.Enum):
    TANH = "tanh"
    IDENTITY = "identity"

    @property
    def code(self):
        return _kernels.TANH if self is ActivationKind.TANH else _kernels.IDENTITY

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}; expected 'tanh' or 'identity'")


@dataclass(frozen=True)
class MultiscaleLayout:
    """Per-scale ``(height, width, channels)``, finest first.

    Each coarser scale has spatial dims ``ceil(finer / 2)``. The state vector
    is the concatenation of the scales, each flattened position-major
    (row, column, channel).
    """

    scales: tuple

    def __post_init__(self):
        scales = tuple(tuple(int(v) for v in s) for s in self.scales)
        if not scales:
            raise ValueError("layout needs at least one scale")
        for s in scales:
            if len(s) != 3 or min(s) < 1:
                raise ValueError(f"scale {s} must be (height, width, channels) with positive entries")
        for fine, coarse in zip(scales, scales[1:]):
            want = (math.ceil(fine[0] / 2), math.ceil(fine[1] / 2))
            if coarse[:2] != want:
                raise ValueError(
                    f"scale {coarse} does not halve {fine}: expected spatial dims {want}"
                )
        object.__setattr__(self, "scales", scales)

    @classmethod
    def pyramid(cls, height, width, channels):
        """Build a layout from the finest grid and one channel count per scale."""
        scales = []
        h, w = height, width
        for c in channels:
            scales.append((h, w, c))
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        return cls(tuple(scales))

    @property
    def sizes(self):
        return [h * w * c for h, w, c in self.scales]

    @property
    def offsets(self):
        return [int(v) for v in np.cumsum([0] + self.sizes[:-1])]

    @property
    def dz(self):
        return sum(self.sizes)

    @property
    def finest(self):
        return self.scales[0]

    def to_list(self):
        return [list(s) for s in self.scales]


def pool_matrix(fine_hw, coarse_hw):
    """Average-pool over 2x2 windows (clipped at the border), positions only."""
    fh, fw = fine_hw
    ch, cw = coarse_hw
    p = np.zeros((ch * cw, fh * fw))
    for i in range(ch):
        for j in range(cw):
            window = [
                (a, b)
                for a in range(2 * i, min(2 * i + 2, fh))
                for b in range(2 * j, min(2 * j + 2, fw))
            ]
            for a, b in window:
                p[i * cw + j, a * fw + b] = 1.0 / len(window)
    return p


def upsample_matrix(fine_hw, coarse_hw):
    """Nearest-neighbour upsampling, positions only."""
    fh, fw = fine_hw
    ch, cw = coarse_hw
    n = np.zeros((fh * fw, ch * cw))
    for a in range(fh):
        for b in range(fw):
            n[a * fw + b, (a // 2) * cw + b // 2] = 1.0
    return n


@dataclass(frozen=True, eq=False)
class EquilibriumCell:
    A: np.ndarray
    U: np.ndarray
    b: np.ndarray
    activation: ActivationKind = ActivationKind.TANH
    gamma: float = DEFAULT_GAMMA
    seed: object = None
    layout: object = field(default=None)

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        U = as_matrix(self.U, "U")
        b = as_vector(self.b, "b")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if U.shape[0] != A.shape[0] or b.shape[0] != A.shape[0]:
            raise DimensionError(
                f"inconsistent shapes: A {A.shape}, U {U.shape}, b {b.shape}"
            )
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        sigma = spectral_norm(A)
        if sigma > gamma + SPECTRAL_SLACK:
            raise ValueError(f"spectral norm of A is {sigma:.9g}, above gamma={gamma}")
        if self.layout is not None and self.layout.dz != A.shape[0]:
            raise DimensionError(
                f"layout describes {self.layout.dz} state entries, A has {A.shape[0]}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation))
        object.__setattr__(self, "gamma", gamma)

    @property
    def dz(self):
        return self.A.shape[0]

    @property
    def dx(self):
        return self.U.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EquilibriumCell):
            return NotImplemented
        return (
            self.activation is other.activation
            and self.gamma == other.gamma
            and self.seed == other.seed
            and self.layout == other.layout
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.U, other.U)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None


def _check_gamma(gamma):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def _sym_orthogonal(m):
    """Polar factor of the symmetric part of ``m``: a symmetric orthogonal
    matrix, so every eigenvalue is +1 or -1."""
    u, _, vt = np.linalg.svd(0.5 * (m + m.T))
    return 0.5 * ((u @ vt) + (u @ vt).T)


def make_random_cell(
    seed,
    dz,
    dx,
    gamma=DEFAULT_GAMMA,
    activation=ActivationKind.TANH,
    *,
    orthogonal=True,
    input_scale=DEFAULT_INPUT_SCALE,
    bias_scale=DEFAULT_BIAS_SCALE,
):
    """Random contractive cell drawn from ``numpy.random.default_rng(seed)``.

    ``A``, ``U`` and ``b`` are drawn standard normal in that order. With
    ``orthogonal`` set, ``A`` is replaced by the polar factor of its symmetric
    part, so every eigenvalue of ``A`` is ``+gamma`` or ``-gamma`` and
    ``gamma`` is a tight contraction constant; otherwise the Gaussian draw is
    just rescaled to spectral norm ``gamma``. ``U`` is
    multiplied by ``input_scale / sqrt(dx)`` and ``b`` by ``bias_scale``.

    ``orthogonal=False, input_scale=sqrt(dx), bias_scale=1`` gives plain
    i.i.d. standard normal ``U`` and ``b``.
    """
    _check_gamma(gamma)
    if dz < 1 or dx < 1:
        raise ValueError(f"dz and dx must be positive, got dz={dz}, dx={dx}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dz, dz))
    U = rng.standard_normal((dz, dx))
    b = rng.standard_normal(dz)
    if orthogonal:
        A = _sym_orthogonal(A)
    A = gamma * A / spectral_norm(A)
    U = U * (input_scale / np.sqrt(dx))
    b = b * bias_scale
    return EquilibriumCell(A, U, b, ActivationKind.parse(activation), gamma, seed=seed)


def make_multiscale_cell(
    seed,
    layout,
    dx,
    gamma=DEFAULT_GAMMA,
    activation=ActivationKind.TANH,
    *,
    orthogonal=True,
    input_scale=DEFAULT_INPUT_SCALE,
    bias_scale=DEFAULT_BIAS_SCALE,
):
    """Cell over a multiscale state.

    ``A`` holds a dense random block per scale on the diagonal and, between
    adjacent scales, fixed pool (fine to coarse) / upsample (coarse to fine)
    maps composed with a random channel mix. The assembled matrix is then
    rescaled once to spectral norm ``gamma``. Diagonal blocks are symmetric
    orthogonal when ``orthogonal`` is set. With a single scale the result matches
    :func:`make_random_cell` exactly.
    """
    _check_gamma(gamma)
    if not isinstance(layout, MultiscaleLayout):
        layout = MultiscaleLayout(tuple(layout))
    if dx < 1:
        raise ValueError(f"dx must be positive, got {dx}")
    rng = np.random.default_rng(seed)
    sizes, offsets = layout.sizes, layout.offsets
    dz = layout.dz
    A = np.zeros((dz, dz))
    for n, off in zip(sizes, offsets):
        block = rng.standard_normal((n, n))
        A[off:off + n, off:off + n] = _sym_orthogonal(block) if orthogonal else block
    U = rng.standard_normal((dz, dx)) * (input_scale / np.sqrt(dx))
    b = rng.standard_normal(dz) * bias_scale
    for s in range(len(sizes) - 1):
        fh, fw, fc = layout.scales[s]
        ch, cw, cc = layout.scales[s + 1]
        down = np.kron(pool_matrix((fh, fw), (ch, cw)), rng.standard_normal((cc, fc)))
        up = np.kron(upsample_matrix((fh, fw), (ch, cw)), rng.standard_normal((fc, cc)))
        f0, c0 = offsets[s], offsets[s + 1]
        A[c0:c0 + sizes[s + 1], f0:f0 + sizes[s]] = down
        A[f0:f0 + sizes[s], c0:c0 + sizes[s + 1]] = up
    A = gamma * A / spectral_norm(A)
    return EquilibriumCell(
        A, U, b, ActivationKind.parse(activation), gamma, seed=seed, layout=layout
    )


def _check_dims(cell, z, x):
    if z.shape != (cell.dz,):
        raise DimensionError(f"state has shape {z.shape}, cell expects ({cell.dz},)")
    if x.shape != (cell.dx,):
        raise DimensionError(f"input has shape {x.shape}, cell expects ({cell.dx},)")


def input_injection(cell, x, backend=None):
    """``U x + b``, the part of the cell that is constant within one frame."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (cell.dx,):
        raise DimensionError(f"input has shape {x.shape}, cell expects ({cell.dx},)")
    return _kernels.get_kernels(backend).injection(cell.U, x, cell.b)


def cell_apply(cell, z, x, backend=None):
    z = np.ascontiguousarray(z, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    _check_dims(cell, z, x)
    k = _kernels.get_kernels(backend)
    return k.apply(cell.A, k.injection(cell.U, x, cell.b), cell.activation.code, z)


def residual(cell, z, x, backend=None):
    """``f(z; x) - z``; zero exactly at the fixed point."""
    return cell_apply(cell, z, x, backend) - np.asarray(z, dtype=np.float64)


def analytic_fixed_point(cell, x):
    """Fixed point of an Identity cell by solving ``(I - A) z = U x + b``."""
    if cell.activation is not ActivationKind.IDENTITY:
        raise ValueError("analytic_fixed_point needs an Identity-activation cell")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cell.dx,):
        raise DimensionError(f"input has shape {x.shape}, cell expects ({cell.dx},)")
    return np.linalg.solve(np.eye(cell.dz) - cell.A, cell.U @ x + cell.b)


def contraction_violations(cell, pairs=100, seed=0, scale=1.0, rtol=LIPSCHITZ_RTOL):
    """Count seeded random ``(z1, z2, x)`` triples where the gamma-Lipschitz
    bound fails by more than ``rtol`` relative."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(pairs):
        z1 = scale * rng.standard_normal(cell.dz)
        z2 = scale * rng.standard_normal(cell.dz)
        x = rng.standard_normal(cell.dx)
        lhs = l2_norm(cell_apply(cell, z1, x) - cell_apply(cell, z2, x))
        if lhs > cell.gamma * l2_norm(z1 - z2) * (1.0 + rtol):
            bad += 1
    return bad


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _matrix_dict(m):
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.ravel()]}


def _matrix_from(d, name):
    try:
        rows, cols, data = int(d["rows"]), int(d["cols"]), d["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix entry {name!r}") from exc
    if len(data) != rows * cols:
        raise ValueError(f"matrix {name!r}: {len(data)} values for shape ({rows}, {cols})")
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def cell_to_dict(cell):
    return {
        "format": CELL_FORMAT,
        "seed": cell.seed,
        "dz": cell.dz,
        "dx": cell.dx,
        "gamma": cell.gamma,
        "activation": cell.activation.value,
        "layout": None if cell.layout is None else cell.layout.to_list(),
        "A": _matrix_dict(cell.A),
        "U": _matrix_dict(cell.U),
        "b": [float(v) for v in cell.b],
    }


def cell_from_dict(d):
    if d.get("format", CELL_FORMAT) != CELL_FORMAT:
        raise ValueError(f"unsupported cell format {d.get('format')!r}")
    layout = None if d.get("layout") is None else MultiscaleLayout(tuple(map(tuple, d["layout"])))
    cell = EquilibriumCell(
        _matrix_from(d["A"], "A"),
        _matrix_from(d["U"], "U"),
        np.array(d["b"], dtype=np.float64),
        ActivationKind.parse(d["activation"]),
        float(d["gamma"]),
        seed=d.get("seed"),
        layout=layout,
    )
    if "dz" in d and int(d["dz"]) != cell.dz or "dx" in d and int(d["dx"]) != cell.dx:
        raise ValueError("declared dz/dx do not match the stored matrices")
    return cell


def save_cell(cell, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cell_to_dict(cell), fh, indent=1)
        fh.write("\n")


def load_cell(path):
    with open(path, encoding="utf-8") as fh:
        return cell_from_dict(json.load(fh))
