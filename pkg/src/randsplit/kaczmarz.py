"""Cyclic and randomized Kaczmarz iterations for consistent linear systems."""

from dataclasses import dataclass

import numpy as np

from randsplit.activation import SeededRng

__all__ = ["LinearSystem", "kaczmarz_cyclic", "kaczmarz_randomized", "row_probabilities"]


@dataclass(frozen=True)
class LinearSystem:
    """Rows ``r_i . x = b_i``. Consistency is assumed, not checked."""

    R: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if R.shape[0] != b.shape[0]:
            raise ValueError("row count and right-hand side length differ")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite system data")
        norms = np.einsum("ij,ij->i", R, R)
        if np.any(norms == 0):
            raise ValueError("zero row in linear system")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_row_sq", norms)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        return cls(np.array([r for r, _ in rows], dtype=float), np.array([b for _, b in rows], dtype=float))

    @property
    def n(self):
        return self.R.shape[1]

    @property
    def m(self):
        return self.R.shape[0]

    def residual(self, x):
        return self.R @ x - self.b

    def project_row(self, i, x):
        r = self.R[i]
        return x + ((self.b[i] - r @ x) / self._row_sq[i]) * r


def _start(sys, x0):
    x = np.array(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"x0 must have shape ({sys.n},)")
    return x


def kaczmarz_cyclic(sys, x0, sweeps, tol=None, callback=None):
    """``sweeps`` full passes of row projections in order ``1, ..., m``.

    With ``tol`` set, stops early once ``max|Rx - b| <= tol`` (checked after
    each sweep).
    """
    if sweeps < 0:
        raise ValueError("sweeps must be nonnegative")
    x = _start(sys, x0)
    for _ in range(sweeps):
        for i in range(sys.m):
            x = sys.project_row(i, x)
            if callback is not None:
                callback(i, x)
        if tol is not None and np.max(np.abs(sys.residual(x))) <= tol:
            break
    return x


def row_probabilities(sys):
    """Sampling law proportional to squared row norms."""
    return sys._row_sq / sys._row_sq.sum()


def kaczmarz_randomized(sys, x0, steps, rng, tol=None, callback=None):
    """Randomized Kaczmarz: row ``i`` drawn with probability ``|r_i|^2 / |R|_F^2``.

    ``rng`` is a :class:`SeededRng` or an integer seed. With ``tol`` set,
    the residual ``max|Rx - b|`` is checked every ``m`` steps.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if not isinstance(rng, SeededRng):
        rng = SeededRng(rng)
    x = _start(sys, x0)
    cum = np.cumsum(row_probabilities(sys))
    cum[-1] = 1.0
    for k in range(steps):
        i = rng.choice(cum)
        x = sys.project_row(i, x)
        if callback is not None:
            callback(i, x)
        if tol is not None and (k + 1) % sys.m == 0 and np.max(np.abs(sys.residual(x))) <= tol:
            break
    return x
