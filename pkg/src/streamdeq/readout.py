"""Fixed random linear readout used as a stand-in for a task head.

``label_agreement`` compares the argmax class of two states. For cells with a
multiscale layout the head has one row per class over the finest-scale
channels and is applied at every finest-scale position; the score is the
fraction of positions whose labels agree.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError, as_matrix


@dataclass(frozen=True, eq=False)
class ReadoutHead:
    R: np.ndarray
    layout: object = None

    def __post_init__(self):
        R = as_matrix(self.R, "R")
        if R.shape[0] < 2:
            raise ValueError(f"a readout head needs at least 2 classes, got {R.shape[0]}")
        object.__setattr__(self, "R", R)

    @property
    def k(self):
        return self.R.shape[0]

    def labels(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.layout is None:
            if z.shape != (self.R.shape[1],):
                raise DimensionError(f"state has shape {z.shape}, head expects ({self.R.shape[1]},)")
            return np.array([int(np.argmax(self.R @ z))])
        h, w, c = self.layout.finest
        if z.shape != (self.layout.dz,):
            raise DimensionError(f"state has shape {z.shape}, layout expects ({self.layout.dz},)")
        fine = z[: h * w * c].reshape(h * w, c)
        return np.argmax(fine @ self.R.T, axis=1)


def make_readout_head(seed, k, cell):
    """Seeded standard-normal head with ``k`` classes sized for ``cell``."""
    rng = np.random.default_rng(seed)
    if cell.layout is None:
        if k > cell.dz:
            raise ValueError(f"k={k} classes exceeds state dimension {cell.dz}")
        return ReadoutHead(rng.standard_normal((k, cell.dz)))
    channels = cell.layout.finest[2]
    return ReadoutHead(rng.standard_normal((k, channels)), layout=cell.layout)


def label_agreement(head, z, z_ref):
    """Fraction of positions where ``z`` and ``z_ref`` get the same argmax class."""
    a = head.labels(z)
    b = head.labels(z_ref)
    return float(np.mean(a == b))
