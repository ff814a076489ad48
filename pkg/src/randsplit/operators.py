"""Vector checks, linear maps and closed-form projections.

Vectors are plain 1-d ``numpy.ndarray`` of ``float64``. Block vectors
(one row per scenario) are 2-d arrays of shape ``(n_scenarios, dim)``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "as_vector",
    "LinearMap",
    "HalfSpace",
    "AveragedMap",
    "project_halfspace",
    "project_hyperplane",
    "project_capped_simplex",
    "project_capped_simplex_rows",
    "project_box_consensus",
    "project_capacity_pair",
    "capacity_pair_kernel",
    "box_consensus_kernel",
    "moreau_dual_prox",
    "estimate_operator_norm",
    "matrix_map",
    "zero_map",
]


def as_vector(z, name="vector"):
    """Return ``z`` as a finite 1-d float array or raise ``ValueError``."""
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


@dataclass(frozen=True)
class LinearMap:
    """A linear map with its adjoint and an upper bound on its norm."""

    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    norm_bound: float
    shape: tuple = None  # (codomain dim, domain dim), optional

    def __post_init__(self):
        if not (self.norm_bound >= 0 and np.isfinite(self.norm_bound)):
            raise ValueError("norm_bound must be finite and nonnegative")

    def __call__(self, x):
        return self.forward(x)


def matrix_map(K, norm_bound=None):
    """Wrap a dense matrix as a :class:`LinearMap` (norm by power iteration)."""
    K = np.asarray(K, dtype=float)
    if norm_bound is None:
        norm_bound = estimate_operator_norm(K)
    return LinearMap(lambda x: K @ x, lambda u: K.T @ u, float(norm_bound), K.shape)


def zero_map(n_out, n_in):
    return LinearMap(lambda x: np.zeros(n_out), lambda u: np.zeros(n_in), 0.0, (n_out, n_in))


@dataclass(frozen=True)
class HalfSpace:
    """The set ``{z : <normal, z> <= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = as_vector(self.normal, "normal")
        if not np.any(normal):
            raise ValueError("halfspace normal must be nonzero")
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, z, tol=0.0):
        return float(self.normal @ z) <= self.offset + tol


@dataclass(frozen=True)
class AveragedMap:
    """An averaged nonexpansive operator together with its constant ``alpha``.

    Projections are 1/2-averaged, which is the default.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def __call__(self, z):
        return self.apply(z)


def project_halfspace(h, z):
    """Euclidean projection of ``z`` onto the halfspace ``h``."""
    z = as_vector(z, "z")
    if z.shape != h.normal.shape:
        raise ValueError("dimension mismatch between halfspace and point")
    excess = float(h.normal @ z) - h.offset
    if excess <= 0.0:
        return z.copy()
    return z - (excess / float(h.normal @ h.normal)) * h.normal


def project_hyperplane(r, b, z):
    """Project ``z`` onto ``{y : r.y = b}``: ``z + (b - r.z)/|r|^2 r``."""
    r = as_vector(r, "r")
    z = as_vector(z, "z")
    if r.shape != z.shape:
        raise ValueError("dimension mismatch between row and point")
    rr = float(r @ r)
    if rr == 0.0:
        raise ValueError("zero row vector")
    return z + ((b - float(r @ z)) / rr) * r


def project_capped_simplex(v, h):
    """Project ``v`` onto ``{f >= 0, sum(f) = h}`` by sort-and-threshold."""
    v = as_vector(v, "v")
    if not h >= 0:
        raise ValueError("simplex level h must be nonnegative")
    return project_capped_simplex_rows(v[None, :], np.array([h], dtype=float))[0]


def project_capped_simplex_rows(V, h):
    """Row-wise simplex projection of a 2-d array ``V`` with levels ``h``.

    Each row ``V[i]`` is projected onto ``{f >= 0, sum(f) = h[i]}``.
    """
    V = np.asarray(V, dtype=float)
    h = np.asarray(h, dtype=float)
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - h[:, None]
    ind = np.arange(1, n + 1)
    # last index where the sorted entry stays above the running threshold
    cond = U - css / ind >= 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


def project_box_consensus(x, upper):
    """Project scenario blocks onto ``{x_1 = ... = x_S} ∩ [0, upper]^S``.

    ``x`` has shape ``(n_scenarios, n)``; the result repeats the clamped
    scenario average in every row.
    """
    x = np.asarray(x, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if x.ndim != 2 or x.shape[1] != upper.shape[0]:
        raise ValueError("scenario blocks must match the dimension of upper")
    if np.any(upper <= 0):
        raise ValueError("upper bounds must be positive")
    _check_finite(x)
    return box_consensus_kernel(x, upper)


def box_consensus_kernel(x, upper):
    """Unchecked form of :func:`project_box_consensus` for inner loops."""
    avg = np.clip(x.mean(axis=0), 0.0, upper)
    return np.broadcast_to(avg, x.shape).copy()


def project_capacity_pair(eta, nu, c):
    """Project ``(eta, nu)`` onto ``{(x, w) : w - x <= c}``.

    Works elementwise on arrays as well as on scalars.
    """
    if np.any(np.asarray(c) < 0):
        raise ValueError("capacity must be nonnegative")
    _check_finite(eta, nu, c)
    if np.ndim(eta) == 0 and np.ndim(nu) == 0 and np.ndim(c) == 0:
        if eta - nu + c < 0:
            return (eta + nu - c) / 2.0, (eta + nu + c) / 2.0
        return float(eta), float(nu)
    eta, nu, c = np.broadcast_arrays(np.asarray(eta, float), np.asarray(nu, float), np.asarray(c, float))
    return capacity_pair_kernel(eta, nu, c)


def capacity_pair_kernel(eta, nu, c):
    """Unchecked array form of :func:`project_capacity_pair` for inner loops."""
    viol = eta - nu + c < 0
    s = eta + nu
    return np.where(viol, (s - c) / 2.0, eta), np.where(viol, (s + c) / 2.0, nu)


def moreau_dual_prox(prox_g_scaled, gamma, u):
    """Prox of ``gamma g*`` through Moreau: ``u - gamma prox_{g/gamma}(u/gamma)``.

    ``prox_g_scaled`` evaluates ``prox_{g/gamma}``; for indicator functions
    this is just the projection.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return u - gamma * prox_g_scaled(u / gamma)


def estimate_operator_norm(N, tol=1e-8, max_iter=100_000):
    """Spectral norm of a dense matrix by power iteration on ``N^T N``.

    The start vector is the normalized all-ones vector, so the result is
    deterministic.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if not np.any(N):
        return 0.0
    n = N.shape[1]
    v = np.ones(n) / np.sqrt(n)
    w = N.T @ (N @ v)
    if not np.any(w):
        # all-ones lies in the kernel; fall back to a fixed generic vector
        v = np.cos(np.arange(1, n + 1))
        v /= np.linalg.norm(v)
        w = N.T @ (N @ v)
    lam = float(v @ w)
    for _ in range(max_iter):
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        w = N.T @ (N @ v)
        lam_new = float(v @ w)
        # Rayleigh quotients increase monotonically; stop once the gain is negligible
        if lam_new - lam <= 1e-2 * tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam))
