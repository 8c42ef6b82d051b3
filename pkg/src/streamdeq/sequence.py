"""Synthetic input streams with controlled frame-to-frame change.

Two modes:

``random_walk``
    ``x_{t+1} = x_t + epsilon * u_t / ||u_t||`` with Gaussian ``u_t``, so each
    step has norm exactly ``epsilon``. A shot frame resamples ``x_t`` from
    scratch.

``moving_blob``
    A unit Gaussian bump (sigma = width / 8) on an ``h x w`` torus, moving by
    ``velocity = (vx, vy)`` pixels per frame. A shot frame teleports the
    centre to a random position at least ``3 * sigma`` away.

Blob centres live on a 1/256-pixel grid, so for dyadic velocities every
centre is exact and a full period reproduces frame 0 bit for bit.
"""

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_vector

CENTER_RESOLUTION = 256
TELEPORT_MIN_SIGMAS = 3.0


class SequenceMode(enum.Enum):
    RANDOM_WALK = "random_walk"
    MOVING_BLOB = "moving_blob"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"randomwalk": "random_walk", "walk": "random_walk",
                   "movingblob": "moving_blob", "blob": "moving_blob"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown sequence mode {value!r}")


@dataclass(frozen=True)
class SequenceSpec:
    mode: SequenceMode = SequenceMode.RANDOM_WALK
    length: int = 40
    dx: int = 16
    grid: tuple = (16, 16)
    epsilon: float = 0.05
    velocity: tuple = (0.25, 0.125)
    shot_frames: tuple = field(default=())
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SequenceMode.parse(self.mode))
        object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "shot_frames", tuple(int(t) for t in self.shot_frames))
        self.validate()

    def validate(self):
        if self.length < 1:
            raise ValueError(f"length must be positive, got {self.length}")
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mode is SequenceMode.RANDOM_WALK and self.dx < 1:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.mode is SequenceMode.MOVING_BLOB:
            if len(self.grid) != 2 or min(self.grid) < 1:
                raise ValueError(f"grid must be (height, width) with positive entries, got {self.grid}")
            if len(self.velocity) != 2:
                raise ValueError(f"velocity must be a pair, got {self.velocity}")
        shots = self.shot_frames
        if any(b <= a for a, b in zip(shots, shots[1:])):
            raise ValueError(f"shot_frames must be strictly increasing, got {shots}")
        if shots and (shots[0] < 1 or shots[-1] > self.length - 1):
            raise ValueError(f"shot_frames must lie in [1, {self.length - 1}], got {shots}")

    @property
    def frame_dim(self):
        if self.mode is SequenceMode.MOVING_BLOB:
            return self.grid[0] * self.grid[1]
        return self.dx

    @property
    def sigma(self):
        return self.grid[1] / 8.0

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return SequenceSpec.from_dict(d)

    def to_dict(self):
        return {
            "mode": self.mode.value,
            "length": self.length,
            "dx": self.dx,
            "grid": list(self.grid),
            "epsilon": self.epsilon,
            "velocity": list(self.velocity),
            "shot_frames": list(self.shot_frames),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"mode", "length", "dx", "grid", "epsilon", "velocity", "shot_frames", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sequence keys: {sorted(unknown)}")
        return cls(**d)


def _wrap(d, period):
    return (d + period / 2.0) % period - period / 2.0


def _blob_frame(h, w, cy, cx, sigma):
    dy = _wrap(np.arange(h, dtype=np.float64) - cy, h)
    dx = _wrap(np.arange(w, dtype=np.float64) - cx, w)
    r2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return np.exp(-r2 / (2.0 * sigma * sigma)).ravel()


def _torus_distance(a, b, h, w):
    dy = _wrap(a[0] - b[0], h)
    dx = _wrap(a[1] - b[1], w)
    return math.hypot(dy, dx)


def _random_center(rng, h, w):
    cy = rng.integers(0, h * CENTER_RESOLUTION) / CENTER_RESOLUTION
    cx = rng.integers(0, w * CENTER_RESOLUTION) / CENTER_RESOLUTION
    return float(cy), float(cx)


def _teleport(rng, current, h, w, sigma):
    min_dist = min(TELEPORT_MIN_SIGMAS * sigma, 0.5 * math.hypot(h / 2.0, w / 2.0))
    for _ in range(10_000):
        cand = _random_center(rng, h, w)
        if _torus_distance(cand, current, h, w) >= min_dist:
            return cand
    raise RuntimeError("could not place a teleported blob centre")  # pragma: no cover


def generate_sequence(spec):
    """Return the ``spec.length`` frames of ``spec`` as a list of float64 vectors."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shots = set(spec.shot_frames)
    frames = []
    if spec.mode is SequenceMode.RANDOM_WALK:
        x = rng.standard_normal(spec.dx)
        frames.append(x)
        for t in range(1, spec.length):
            if t in shots:
                x = rng.standard_normal(spec.dx)
            else:
                u = rng.standard_normal(spec.dx)
                if spec.epsilon > 0.0:
                    x = x + spec.epsilon * (u / np.sqrt(u @ u))
            frames.append(x)
    else:
        h, w = spec.grid
        vx, vy = spec.velocity
        sigma = spec.sigma
        cy, cx = _random_center(rng, h, w)
        frames.append(_blob_frame(h, w, cy, cx, sigma))
        for t in range(1, spec.length):
            if t in shots:
                cy, cx = _teleport(rng, (cy, cx), h, w, sigma)
            else:
                cy, cx = (cy + vy) % h, (cx + vx) % w
            frames.append(_blob_frame(h, w, cy, cx, sigma))
    return [as_vector(f, f"frame {t}") for t, f in enumerate(frames)]


def blob_step_bound(velocity, sigma, grid):
    """Upper bound on ``||x_{t+1} - x_t||`` for a blob moving by ``velocity``.

    Mean-value bound: displacement norm times the largest lattice sum of
    ``|grad G|^2`` over sub-pixel centre offsets, plus the jump a pixel can see
    when it crosses the wrap-around seam.
    """
    h, w = grid
    speed = math.hypot(*velocity)
    reach = int(math.ceil(6 * sigma)) + 2
    offs = np.arange(-reach, reach + 1, dtype=np.float64)
    worst = 0.0
    for oy in np.linspace(0.0, 1.0, 9):
        for ox in np.linspace(0.0, 1.0, 9):
            dy = offs[:, None] - oy
            dx = offs[None, :] - ox
            g = np.exp(-(dy ** 2 + dx ** 2) / (2 * sigma * sigma))
            grad2 = g ** 2 * (dy ** 2 + dx ** 2) / sigma ** 4
            worst = max(worst, float(grad2.sum()))
    seam = max(math.exp(-(h / 2.0) ** 2 / (2 * sigma ** 2)), math.exp(-(w / 2.0) ** 2 / (2 * sigma ** 2)))
    return 1.05 * speed * math.sqrt(worst) + 2.0 * math.sqrt(h * w) * seam


# ---------------------------------------------------------------------------
# plain-text frame dump: one frame per line, space-separated decimals
# ---------------------------------------------------------------------------


def write_frames(frames, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in frames:
            fh.write(" ".join(repr(float(v)) for v in f))
            fh.write("\n")


def read_frames(path):
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            frames.append(as_vector(values, f"{path}:{lineno}"))
    if frames and len({f.size for f in frames}) != 1:
        raise ValueError(f"{path}: frames have differing lengths")
    return frames


def load_sequence_spec(path):
    with open(path, encoding="utf-8") as fh:
        return SequenceSpec.from_dict(json.load(fh))
