"""Primal-dual splitting with randomly activated averaged maps.

One iteration, with ``T_0 = Id`` and the index ``i`` drawn from an
activation schedule::

    u+   = J_{gamma B^-1}(u + gamma (L xbar - Dinv u))
    p+   = J_{tau A}(x - tau (L* u+ + C x))
    x+   = T_i p+
    xbar+ = x+ + p+ - x

With no maps (or ``i = 0`` throughout) this is the Vu/Condat iteration.
"""

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from randsplit.activation import SeededRng, next_index, validate_schedule
from randsplit.operators import LinearMap

__all__ = [
    "ProblemSpec",
    "StepSizes",
    "StepSizeError",
    "IterationState",
    "Status",
    "SolveReport",
    "FejerMetric",
    "validate_steps",
    "default_steps",
    "initial_state",
    "iterate_once",
    "relative_change",
    "solve",
    "fejer_distance",
]


def _identity(v):
    return v


def _zero_like(v):
    return np.zeros_like(v)


@dataclass(frozen=True)
class ProblemSpec:
    """Operators of the monotone inclusion.

    ``resolvent_A(tau, x)`` and ``resolvent_Binv(gamma, u)`` evaluate the
    resolvents ``J_{tau A}`` and ``J_{gamma B^-1}``. ``C`` is
    ``mu``-cocoercive and ``Dinv`` is ``delta``-cocoercive; ``delta = inf``
    means ``Dinv = 0``. ``activated_maps[i - 1]`` is the map ``T_i``; any
    object supporting integer indexing works, which lets very large
    families be decoded lazily (see ``num_maps``).
    """

    L: LinearMap
    resolvent_A: Callable = lambda tau, x: x
    resolvent_Binv: Callable = lambda gamma, u: np.zeros_like(u)
    C: Callable = _zero_like
    mu: float = math.inf
    Dinv: Optional[Callable] = None
    delta: float = math.inf
    activated_maps: Sequence = ()
    num_maps: Optional[int] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("cocoercivity constant mu must be positive")
        if not self.delta > 0:
            raise ValueError("strong monotonicity delta must be positive")
        if self.num_maps is None:
            object.__setattr__(self, "num_maps", len(self.activated_maps))

    def apply_map(self, i, p):
        if i == 0:
            return p
        return self.activated_maps[i - 1](p)


class StepSizeError(ValueError):
    """Raised when step sizes violate the convergence condition."""

    def __init__(self, message, slack):
        super().__init__(message)
        self.slack = slack


@dataclass(frozen=True)
class StepSizes:
    tau: float
    gamma: float


def _step_slack(spec, s):
    """``(1/gamma - 1/2delta)(1/tau - 1/2mu) - |L|^2``; positive means admissible."""
    a = 1.0 / s.tau - 0.5 / spec.mu
    b = 1.0 / s.gamma - 0.5 / spec.delta
    return a * b - spec.L.norm_bound ** 2


def validate_steps(spec, s):
    """Raise :class:`StepSizeError` unless ``s`` satisfies the step condition.

    Requires ``tau < 2 mu``, ``gamma < 2 delta`` and
    ``|L|^2 < (1/gamma - 1/(2 delta)) (1/tau - 1/(2 mu))`` with the
    declared norm bound in place of ``|L|``. Returns the (positive) slack.
    """
    if not (s.tau > 0 and s.gamma > 0):
        raise ValueError("step sizes must be positive")
    if not s.tau < 2 * spec.mu:
        raise StepSizeError(f"tau={s.tau} must be below 2*mu={2 * spec.mu}", -math.inf)
    if not s.gamma < 2 * spec.delta:
        raise StepSizeError(f"gamma={s.gamma} must be below 2*delta={2 * spec.delta}", -math.inf)
    slack = _step_slack(spec, s)
    if not slack > 0:
        raise StepSizeError(f"step condition violated, slack {slack:.3e}", slack)
    return slack


def default_steps(spec, safety=0.99, tau=None):
    """Largest admissible ``gamma`` for ``tau``, scaled by ``safety``.

    ``tau`` defaults to ``mu`` (or 1 when ``C = 0``).
    """
    if not 0 < safety < 1:
        raise ValueError("safety must lie in (0, 1)")
    safety = min(safety, 1 - 1e-6)
    if tau is None:
        tau = spec.mu if math.isfinite(spec.mu) else 1.0
    a = 1.0 / tau - 0.5 / spec.mu
    denom = spec.L.norm_bound ** 2 / a + 0.5 / spec.delta
    gamma = safety / denom if denom > 0 else 1.0
    s = StepSizes(tau, gamma)
    validate_steps(spec, s)
    return s


@dataclass
class IterationState:
    """Iterates ``x``, ``xbar``, ``u`` and the pre-activation point ``p``."""

    x: np.ndarray
    x_bar: np.ndarray
    u: np.ndarray
    p: np.ndarray
    k: int = 0

    def copy(self):
        return IterationState(self.x.copy(), self.x_bar.copy(), self.u.copy(), self.p.copy(), self.k)


def initial_state(x0, u0=None, dual_dim=None):
    """State with ``xbar = p = x0`` and ``u0`` (zero by default)."""
    x0 = np.array(x0, dtype=float)
    if u0 is None:
        if dual_dim is None:
            raise ValueError("need u0 or dual_dim")
        u0 = np.zeros(dual_dim)
    return IterationState(x0, x0.copy(), np.array(u0, dtype=float), x0.copy(), 0)


def iterate_once(spec, s, st, idx):
    """Apply one iteration with activation index ``idx``; returns a new state."""
    w = st.u + s.gamma * spec.L.forward(st.x_bar)
    if spec.Dinv is not None:
        w = w - s.gamma * spec.Dinv(st.u)
    u = spec.resolvent_Binv(s.gamma, w)
    p = spec.resolvent_A(s.tau, st.x - s.tau * (spec.L.adjoint(u) + spec.C(st.x)))
    x = spec.apply_map(idx, p)
    x_bar = x + p - st.x
    return IterationState(x, x_bar, u, p, st.k + 1)


def relative_change(old, new):
    """``sqrt((|dx|^2 + |du|^2) / (|x|^2 + |u|^2))`` between two states.

    A zero denominator gives ``inf`` (or 0 when nothing moved); non-finite
    states give ``nan``.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        dx, du = new.x - old.x, new.u - old.u
        num = float(dx @ dx + du @ du)
        den = float(old.x @ old.x + old.u @ old.u)
    if not (math.isfinite(num) and math.isfinite(den)):
        return math.nan
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return math.sqrt(num / den)


class Status(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    DIVERGED = "Diverged"

    def __str__(self):
        return self.value


@dataclass
class SolveReport:
    iterations: int
    wall_time: float
    final_error: float
    error_trace: list
    terminal: IterationState
    status: Status
    previous: Optional[IterationState] = field(default=None, repr=False)

    @property
    def converged(self):
        return self.status is Status.CONVERGED


_TRACE_FULL = 100_000


def solve(spec, s, schedule, init, tolerance=1e-10, max_iters=200_000, rng=None,
          full_trace=False, check_steps=True, callback=None):
    """Run the iteration until the relative change drops below ``tolerance``.

    ``init`` is an :class:`IterationState` (or a primal start ``x0``, with a
    zero dual). The error of iteration ``k`` compares ``k+1`` with ``k``;
    the run stops at the first ``k`` where it is ``<= tolerance``. The error
    trace keeps every value up to 100000 iterations and every tenth value
    afterwards unless ``full_trace`` is set. ``callback(state)`` is called
    after every iteration.
    """
    if check_steps:
        validate_steps(spec, s)
    cert = validate_schedule(schedule)
    if not cert.ok and not cert.case_i_only:
        raise ValueError(f"invalid activation schedule: {cert.violation}")
    if rng is None:
        rng = SeededRng(schedule.seed)
    if not isinstance(init, IterationState):
        init = initial_state(init, dual_dim=spec.L.shape[0] if spec.L.shape else None)
    st = init.copy()
    trace = []
    err = math.inf
    status = Status.MAX_ITERATIONS
    prev = st
    t0 = time.perf_counter()
    for k in range(st.k, st.k + max_iters):
        idx = next_index(schedule, k, rng)
        new = iterate_once(spec, s, st, idx)
        err = relative_change(st, new)
        if math.isnan(err) or not np.isfinite(new.x_bar).all():
            prev, st = st, new
            status = Status.DIVERGED
            err = math.nan
            break
        n = new.k
        if full_trace or n <= _TRACE_FULL or n % 10 == 0:
            trace.append(err)
        prev, st = st, new
        if callback is not None:
            callback(st)
        if err <= tolerance:
            status = Status.CONVERGED
            break
    return SolveReport(
        iterations=st.k - init.k,
        wall_time=time.perf_counter() - t0,
        final_error=err,
        error_trace=trace,
        terminal=st,
        status=status,
        previous=prev,
    )


@dataclass(frozen=True)
class FejerMetric:
    """Quadratic form of the monotonicity argument.

    ``|(x, u, z)|_V^2 = |x|^2/tau + |u|^2/gamma + 2<L z, u>
    + (1/tau - 1/(2 mu)) |z|^2``, positive definite under the step
    condition.
    """

    tau: float
    gamma: float
    mu: float
    L: LinearMap

    def squared(self, x, u, z):
        c = 1.0 / self.tau - 0.5 / self.mu
        return (float(x @ x) / self.tau + float(u @ u) / self.gamma
                + 2.0 * float(self.L.forward(z) @ u) + c * float(z @ z))

    def is_positive_definite(self):
        c = 1.0 / self.tau - 0.5 / self.mu
        return c > 0 and self.L.norm_bound ** 2 < c / self.gamma


def fejer_distance(metric, st, ref):
    """V-distance of ``(x, u, p - x_prev)`` to ``(x*, u*, 0)``.

    Since ``xbar = x + p - x_prev``, the third component is ``xbar - x``.
    """
    if not metric.is_positive_definite():
        raise StepSizeError("metric is not positive definite for these step sizes", -math.inf)
    x_ref, u_ref = ref
    val = metric.squared(st.x - x_ref, st.u - u_ref, st.x_bar - st.x)
    return math.sqrt(max(val, 0.0))
