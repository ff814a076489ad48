"""Two-stage stochastic arc-capacity expansion solved by primal-dual splitting.

Variables per scenario ``xi``: expansions ``x[xi]`` (one per arc) and route
flows ``f[xi]``. Expansions must agree across scenarios and lie in
``[0, M]``; flows are nonnegative and meet the OD demands; arc flow may
not exceed the expanded capacity ``c[xi] + x[xi]``. The capacity
constraints are handled by the dual variables and, redundantly, by
projections onto blocks of them chosen by an activation schedule.

The solver works on flat vectors ``z = (x.ravel(), f.ravel())`` and dual
vectors ``w = (u.ravel(), v.ravel())`` where ``x``, ``u``, ``v`` have shape
``(S, A)`` and ``f`` has shape ``(S, R)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from randsplit import activation
from randsplit.activation import SeededRng
from randsplit.operators import (
    AveragedMap,
    LinearMap,
    box_consensus_kernel,
    capacity_pair_kernel,
    estimate_operator_norm,
    moreau_dual_prox,
)
from randsplit.pdsplit import ProblemSpec, default_steps, initial_state, solve

__all__ = [
    "CapexProblem",
    "ConstraintBlock",
    "RandomBlockFamily",
    "CapexSolution",
    "ALGORITHMS",
    "algorithm_info",
    "l_grid",
    "build_problem",
    "smooth_gradient",
    "objective",
    "lipschitz_constant",
    "assemble_problem",
    "make_blocks",
    "project_block",
    "initial_point",
    "solution_from_state",
    "solve_capexp",
]

FIXED, BERNOULLI, DETERMINISTIC, RANDOM_K, NONE = "F", "BA", "DA", "RK", "none"

# algorithm id -> (class, position in the l grid)
ALGORITHMS = {
    1: (NONE, None),
    2: (FIXED, 0), 3: (FIXED, 1), 4: (FIXED, 2),
    5: (BERNOULLI, 0), 6: (BERNOULLI, 1), 7: (BERNOULLI, 2),
    8: (DETERMINISTIC, 0), 9: (DETERMINISTIC, 1), 10: (DETERMINISTIC, 2),
    11: (RANDOM_K, 0), 12: (RANDOM_K, 1), 13: (RANDOM_K, 2),
}

DEFAULT_FIXED_ARC = 16

# Primal step. The generic choice tau = mu (about 18 here) leaves the dual
# step tiny and the iteration crawls; 0.4 was the fastest setting of a
# coarse sweep that still meets the capacity residual target.
DEFAULT_TAU = 0.4


def l_grid(n_scenarios):
    """Block sizes ``(1, largest proper divisor, n_scenarios)``; (1, 9, 18) for 18."""
    mid = max([d for d in range(1, n_scenarios) if n_scenarios % d == 0] or [1])
    return (1, mid, n_scenarios)


def algorithm_info(algorithm_id, n_scenarios):
    """``(class label, block size l)`` of an algorithm id in ``1..13``."""
    if algorithm_id not in ALGORITHMS:
        raise ValueError(f"unknown algorithm id {algorithm_id}; expected 1..13")
    cls, pos = ALGORITHMS[algorithm_id]
    if pos is None:
        return cls, 0
    return cls, l_grid(n_scenarios)[pos]


@dataclass(frozen=True)
class CapexProblem:
    """Dense data of an instance laid out for vectorized evaluation."""

    instance: object
    N: np.ndarray          # (A, R) incidence
    p: np.ndarray          # (S,)
    c: np.ndarray          # (S, A)
    h: np.ndarray          # (S, n_od)
    eta: np.ndarray        # (A,)
    cong: np.ndarray       # (A,)
    M: np.ndarray          # (A,)
    Q: np.ndarray          # (A, A)
    od_slices: tuple
    norm_N: float
    norm_Q: float
    route_count: np.ndarray = field(repr=False)  # routes through each arc

    @property
    def S(self):
        return self.c.shape[0]

    @property
    def A(self):
        return self.c.shape[1]

    @property
    def R(self):
        return self.N.shape[1]

    @property
    def primal_dim(self):
        return self.S * (self.A + self.R)

    @property
    def dual_dim(self):
        return 2 * self.S * self.A

    def split_primal(self, z):
        k = self.S * self.A
        return z[:k].reshape(self.S, self.A), z[k:].reshape(self.S, self.R)

    def join_primal(self, x, f):
        return np.concatenate([np.ravel(x), np.ravel(f)])

    def split_dual(self, w):
        k = self.S * self.A
        return w[:k].reshape(self.S, self.A), w[k:].reshape(self.S, self.A)

    def join_dual(self, u, v):
        return np.concatenate([np.ravel(u), np.ravel(v)])

    def arc_flows(self, f):
        """``(N f_xi)`` for every scenario, shape ``(S, A)``."""
        return f @ self.N.T


def build_problem(inst):
    net = inst.network
    N = net.incidence
    return CapexProblem(
        instance=inst,
        N=N,
        p=inst.probabilities.copy(),
        c=inst.capacities.copy(),
        h=inst.demands.copy(),
        eta=net.param("eta"),
        cong=net.param("cong"),
        M=net.param("M"),
        Q=inst.Q.copy(),
        od_slices=tuple(net.od_slices),
        norm_N=estimate_operator_norm(N),
        norm_Q=estimate_operator_norm(inst.Q),
        route_count=N.sum(axis=1),
    )


def _as_problem(obj):
    return obj if isinstance(obj, CapexProblem) else build_problem(obj)


def smooth_gradient(prob, x, f):
    """Gradient of the expected cost: ``(p Q x_xi, p N^T t_xi(N f_xi))`` per scenario.

    The travel time is affine, ``t(v) = eta + cong v / c``.
    """
    prob = _as_problem(prob)
    pw = prob.p[:, None]
    t = prob.eta + prob.cong * prob.arc_flows(f) / prob.c
    return pw * (x @ prob.Q.T), pw * (t @ prob.N)


def objective(prob, x, f):
    """Expected travel cost (integrated travel times) plus quadratic expansion cost."""
    prob = _as_problem(prob)
    v = prob.arc_flows(f)
    travel = (prob.eta * v + prob.cong * v ** 2 / (2.0 * prob.c)).sum(axis=1)
    invest = 0.5 * np.einsum("sa,ab,sb->s", x, prob.Q, x)
    return float(prob.p @ (travel + invest))


def lipschitz_constant(prob):
    """``max_xi p_xi max(|Q|, |N|^2 max_a beta[xi, a])``: Lipschitz constant of the gradient."""
    prob = _as_problem(prob)
    beta = prob.cong[None, :] / prob.c
    per_scenario = prob.p * np.maximum(prob.norm_Q, prob.norm_N ** 2 * beta.max(axis=1))
    return float(per_scenario.max())


@dataclass(frozen=True)
class ConstraintBlock:
    """Capacity constraints ``(arc, scenario)`` with pairwise distinct scenarios.

    Arcs and scenarios are 0-based positions. Because the scenarios differ,
    the constraint normals are orthogonal and the block projection is the
    composition of the single-constraint projections.
    """

    arcs: tuple
    scenarios: tuple

    def __post_init__(self):
        if len(self.arcs) != len(self.scenarios) or not self.arcs:
            raise ValueError("a block needs matching, non-empty arc and scenario lists")
        if len(set(self.scenarios)) != len(self.scenarios):
            raise ValueError("scenarios within a block must be pairwise distinct")
        object.__setattr__(self, "_a", np.asarray(self.arcs, dtype=np.intp))
        object.__setattr__(self, "_s", np.asarray(self.scenarios, dtype=np.intp))

    @property
    def entries(self):
        return list(zip(self.arcs, self.scenarios))

    @property
    def l(self):
        return len(self.arcs)


def project_block(prob, block, x, f, sequential=False):
    """Project ``(x, f)`` onto the block's capacity halfspaces.

    Each constraint ``N_a f_xi - x[xi, a] <= c[xi, a]`` has normal ``-1`` on
    ``x[xi, a]`` and ``N[a]`` on ``f[xi]`` (squared norm ``1 + #routes
    through a``). With ``sequential`` the halfspace projections are applied
    one at a time in the stored order; otherwise all at once, which is the
    same map because the scenarios are distinct.
    """
    x = np.array(x, dtype=float)
    f = np.array(f, dtype=float)
    if sequential:
        for a, s in block.entries:
            viol = prob.N[a] @ f[s] - x[s, a] - prob.c[s, a]
            if viol > 0:
                t = viol / (1.0 + prob.route_count[a])
                x[s, a] += t
                f[s] -= t * prob.N[a]
        return x, f
    a, s = block._a, block._s
    Na = prob.N[a]
    viol = np.einsum("ij,ij->i", f[s], Na) - x[s, a] - prob.c[s, a]
    t = np.maximum(viol, 0.0) / (1.0 + prob.route_count[a])
    x[s, a] += t
    f[s] -= t[:, None] * Na
    return x, f


def _block_map(prob, block):
    def apply(z):
        x, f = prob.split_primal(z)
        return prob.join_primal(*project_block(prob, block, x, f))

    return AveragedMap(apply, 0.5)


class RandomBlockFamily:
    """All blocks ``(a_1..a_l, xi_1..xi_l)`` with distinct scenarios, decoded lazily.

    Index ``i`` in ``1..size`` maps to mixed-radix digits: ``l`` arc digits
    in base ``A`` followed by ``l`` Lehmer digits (bases ``S, S-1, ...``)
    selecting an ordered tuple of distinct scenarios. Drawing every digit
    uniformly is a uniform draw over the whole family.
    """

    def __init__(self, prob, l):
        if not 1 <= l <= prob.S:
            raise ValueError(f"block size l={l} must be in 1..{prob.S}")
        self.prob = prob
        self.l = l
        self.bases = [prob.A] * l + [prob.S - i for i in range(l)]
        self.size = math.prod(self.bases)
        self._cache = (None, None)

    def __len__(self):
        # sizes exceed sys.maxsize for large l; use .size
        raise TypeError("family size may exceed sys.maxsize; use .size")

    def _digits_to_block(self, digits):
        arcs = tuple(digits[: self.l])
        remaining = list(range(self.prob.S))
        scen = tuple(remaining.pop(d) for d in digits[self.l:])
        return ConstraintBlock(arcs, scen)

    def block(self, i):
        if not 1 <= i <= self.size:
            raise IndexError(i)
        if self._cache[0] == i:
            return self._cache[1]
        rest = i - 1
        digits = []
        for b in self.bases:
            rest, d = divmod(rest, b)
            digits.append(d)
        return self._digits_to_block(digits)

    def sample(self, rng):
        """Draw a uniform index (digit by digit) and remember its block."""
        digits = [rng.randint(b) for b in self.bases]
        i, mult = 0, 1
        for d, b in zip(digits, self.bases):
            i += d * mult
            mult *= b
        i += 1
        self._cache = (i, self._digits_to_block(digits))
        return i

    def __getitem__(self, j):
        # ProblemSpec indexes maps 0-based: map T_i is element i - 1
        return _block_map(self.prob, self.block(j + 1))


def make_blocks(prob, cls, l, q=0.5, fixed_arc=None, seed=0):
    """Constraint blocks and activation schedule of a selection class.

    ``F``: one block ``(fixed_arc, xi_j)`` for the first ``l`` scenarios.
    ``BA``/``DA``: same-arc blocks over consecutive groups of ``l``
    scenarios, ordered arc-major (all groups of the first arc, then the
    next arc), visited cyclically; ``BA`` gates each visit with a
    Bernoulli(``q``) draw. ``RK``: a uniform draw over every block of ``l``
    arcs and ``l`` distinct scenarios. ``fixed_arc`` is a 0-based arc
    position. Returns ``(blocks, schedule)``; for ``RK`` ``blocks`` is a
    :class:`RandomBlockFamily`.
    """
    prob = _as_problem(prob)
    S, A = prob.S, prob.A
    if cls == NONE:
        return [], activation.fixed(0, 0, seed=seed)
    if not 1 <= l <= S:
        raise ValueError(f"block size l={l} must be in 1..{S}")
    if cls == FIXED:
        if fixed_arc is None:
            fixed_arc = _default_fixed_arc(prob)
        block = ConstraintBlock((fixed_arc,) * l, tuple(range(l)))
        return [block], activation.fixed(1, 1, seed=seed)
    if cls in (BERNOULLI, DETERMINISTIC):
        if S % l:
            raise ValueError(f"block size l={l} must divide the number of scenarios {S}")
        groups = [tuple(range(g * l, (g + 1) * l)) for g in range(S // l)]
        blocks = [ConstraintBlock((a,) * l, grp) for a in range(A) for grp in groups]
        m = len(blocks)
        if cls == BERNOULLI:
            return blocks, activation.bernoulli_alternating(m, q=q, seed=seed)
        return blocks, activation.deterministic_alternating(m, seed=seed)
    if cls == RANDOM_K:
        fam = RandomBlockFamily(prob, l)
        return fam, activation.randomized_uniform(fam.size, seed=seed, sampler=fam.sample)
    raise ValueError(f"unknown selection class {cls!r}")


def _default_fixed_arc(prob):
    """Arc 16 when the network has it, else the arc with the smallest base capacity."""
    net = prob.instance.network
    try:
        return net.arc_index(DEFAULT_FIXED_ARC)
    except KeyError:
        return int(np.argmin(net.param("c")))


class _BatchedSimplex:
    """Capped-simplex projection of every (scenario, OD) route block at once.

    Route blocks of unequal length are padded with a huge negative value,
    which never enters the active set.
    """

    _PAD = -1e30

    def __init__(self, prob):
        sizes = [sl.stop - sl.start for sl in prob.od_slices]
        width = max(sizes)
        self.idx = np.zeros((len(sizes), width), dtype=np.intp)
        self.mask = np.zeros((len(sizes), width), dtype=bool)
        for j, sl in enumerate(prob.od_slices):
            self.idx[j, : sizes[j]] = np.arange(sl.start, sl.stop)
            self.mask[j, : sizes[j]] = True
        self.cols = self.idx[self.mask]
        self.h = prob.h.ravel()
        self.rows = np.arange(self.h.shape[0])
        self.ind = np.arange(1, width + 1)
        self.width = width

    def __call__(self, f):
        S = f.shape[0]
        V = np.where(self.mask, f[:, self.idx], self._PAD).reshape(-1, self.width)
        U = -np.sort(-V, axis=1)
        css = np.cumsum(U, axis=1) - self.h[:, None]
        cond = U - css / self.ind >= 0
        rho = self.width - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[self.rows, rho] / (rho + 1)
        P = np.maximum(V - theta[:, None], 0.0).reshape(S, *self.mask.shape)
        out = np.empty_like(f)
        out[:, self.cols] = P[:, self.mask]
        return out


def assemble_problem(inst, blocks=(), safety=0.99, tau=DEFAULT_TAU):
    """Build the :class:`ProblemSpec` and default step sizes.

    Returns ``(spec, steps, prob)``. ``blocks`` is a list of
    :class:`ConstraintBlock` or a :class:`RandomBlockFamily`. ``gamma`` is
    the largest admissible dual step for ``tau`` scaled by ``safety``;
    ``tau=None`` falls back to ``tau = mu``.
    """
    prob = _as_problem(inst)
    S, A = prob.S, prob.A
    N, NT = prob.N, prob.N.T.copy()
    k = S * A

    def L_fwd(z):
        return np.concatenate([z[:k], (z[k:].reshape(S, prob.R) @ NT).ravel()])

    def L_adj(w):
        return np.concatenate([w[:k], (w[k:].reshape(S, A) @ N).ravel()])

    L = LinearMap(L_fwd, L_adj, max(1.0, prob.norm_N), (prob.dual_dim, prob.primal_dim))
    c_flat = prob.c.ravel()

    def proj_H(w):
        # (x, Nf) pairs onto {Nf - x <= c}, one pair per (scenario, arc)
        a, b = capacity_pair_kernel(w[:k], w[k:], c_flat)
        return np.concatenate([a, b])

    def resolvent_Binv(gamma, w):
        return moreau_dual_prox(proj_H, gamma, w)

    simplex = _BatchedSimplex(prob)

    def resolvent_A(tau, z):
        out = np.empty_like(z)
        out[:k] = box_consensus_kernel(z[:k].reshape(S, A), prob.M).ravel()
        out[k:] = simplex(z[k:].reshape(S, prob.R)).ravel()
        return out

    def C(z):
        x, f = prob.split_primal(z)
        return prob.join_primal(*smooth_gradient(prob, x, f))

    if isinstance(blocks, RandomBlockFamily):
        maps, num = blocks, blocks.size
    else:
        maps = [_block_map(prob, b) for b in blocks]
        num = len(maps)
    spec = ProblemSpec(
        L=L,
        resolvent_A=resolvent_A,
        resolvent_Binv=resolvent_Binv,
        C=C,
        mu=1.0 / lipschitz_constant(prob),
        activated_maps=maps,
        num_maps=num,
    )
    return spec, default_steps(spec, safety, tau), prob


def initial_point(prob):
    """``x = 0``, demand split evenly over each OD's routes, zero duals."""
    f = np.empty((prob.S, prob.R))
    for j, sl in enumerate(prob.od_slices):
        n = sl.stop - sl.start
        f[:, sl] = prob.h[:, j][:, None] / n
    z = prob.join_primal(np.zeros((prob.S, prob.A)), f)
    return initial_state(z, np.zeros(prob.dual_dim))


@dataclass
class CapexSolution:
    """Audit of a terminal point.

    Taken at the last pre-activation point ``p``, which lies in the
    consensus box and meets every demand exactly; the capacity constraints
    hold there only up to the solver tolerance.
    """

    arc_ids: list
    x_bar: np.ndarray          # consensus expansion per arc
    x: np.ndarray              # (S, A)
    f: np.ndarray              # (S, R)
    worst_excess: np.ndarray   # max_xi (N f_xi)_a - c[xi, a]
    objective: float
    capacity_residual: float   # max positive part of N f - x - c
    demand_residual: float
    consensus_spread: float
    box_violation: float

    @property
    def expanded_arcs(self):
        return [a for a, v in zip(self.arc_ids, self.x_bar) if v > 1e-3]

    @property
    def positive_excess_arcs(self):
        return [a for a, e in zip(self.arc_ids, self.worst_excess) if e > 1e-3]

    def table(self):
        """Rows ``(arc, worst-scenario excess, expansion)``."""
        return [(a, float(e), float(v)) for a, e, v in zip(self.arc_ids, self.worst_excess, self.x_bar)]

    def to_dict(self):
        return {
            "arcs": [
                {"arc": a, "worst_excess": e, "x": v, "expanded": v > 1e-3}
                for a, e, v in self.table()
            ],
            "objective": self.objective,
            "capacity_residual": self.capacity_residual,
            "demand_residual": self.demand_residual,
            "consensus_spread": self.consensus_spread,
            "box_violation": self.box_violation,
            "expanded_arcs": self.expanded_arcs,
        }


def solution_from_state(prob, st, use="p"):
    z = st.p if use == "p" else st.x
    x, f = prob.split_primal(z)
    x, f = x.copy(), f.copy()
    flows = prob.arc_flows(f)
    excess = (flows - prob.c).max(axis=0)
    demand_res = max(
        float(np.max(np.abs(f[:, sl].sum(axis=1) - prob.h[:, j]))) for j, sl in enumerate(prob.od_slices)
    )
    box = float(max(0.0, np.max(-x), np.max(x - prob.M)))
    return CapexSolution(
        arc_ids=prob.instance.network.arc_ids,
        x_bar=x.mean(axis=0),
        x=x,
        f=f,
        worst_excess=excess,
        objective=objective(prob, x, f),
        capacity_residual=float(np.max(flows - x - prob.c, initial=0.0)),
        demand_residual=demand_res,
        consensus_spread=float(np.max(x.max(axis=0) - x.min(axis=0))),
        box_violation=box,
    )


def solve_capexp(inst, algorithm_id, seed=0, tolerance=1e-10, max_iters=200_000, *,
                 stream=(), q=0.5, safety=0.99, tau=DEFAULT_TAU, fixed_arc=None, prob=None,
                 callback=None):
    """Run algorithm ``algorithm_id`` (1..13) on an instance.

    The activation stream is seeded by ``(seed, algorithm_id, *stream)``.
    Returns ``(report, solution)``.
    """
    prob = prob if prob is not None else _as_problem(inst)
    cls, l = algorithm_info(algorithm_id, prob.S)
    blocks, schedule = make_blocks(prob, cls, l, q=q, fixed_arc=fixed_arc, seed=seed)
    spec, steps, _ = assemble_problem(prob, blocks, safety, tau)
    if isinstance(stream, int):
        stream = (stream,)
    rng = SeededRng(seed, (algorithm_id, *stream))
    report = solve(spec, steps, schedule, initial_point(prob), tolerance, max_iters, rng=rng,
                   callback=callback)
    return report, solution_from_state(prob, report.terminal)
