"""Seeded scenario generation for the stochastic capacity-expansion problem.

Capacities are ``c + kappa * Beta(20, 20)`` per arc and demands
``d + s * Beta(50, 10)`` per OD pair, with equiprobable scenarios.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from randsplit.activation import SeededRng
from randsplit.network import Network, network_from_dict

log = logging.getLogger(__name__)

__all__ = [
    "BetaSampler",
    "sample_gamma",
    "sample_beta",
    "Instance",
    "generate_instance",
    "instance_from_dict",
    "load_instance",
    "CAP_BETA",
    "DEM_BETA",
]

CAP_BETA = (20.0, 20.0)
DEM_BETA = (50.0, 10.0)


def sample_gamma(shape, rng):
    """Gamma(shape, 1) variate by Marsaglia-Tsang squeeze/rejection.

    Shapes below one are boosted with the usual ``U**(1/shape)`` factor.
    """
    if not shape > 0:
        raise ValueError("gamma shape must be positive")
    if shape < 1.0:
        u = rng.uniform()
        return sample_gamma(shape + 1.0, rng) * (1.0 - u) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        z = rng.normal()
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - rng.uniform()  # in (0, 1]
        if u < 1.0 - 0.0331 * z ** 4:
            return d * v
        if math.log(u) < 0.5 * z * z + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(a, b, rng):
    """Beta(a, b) variate as ``X / (X + Y)`` with ``X ~ Gamma(a)``, ``Y ~ Gamma(b)``."""
    if not (a > 0 and b > 0):
        raise ValueError("beta shapes must be positive")
    x = sample_gamma(a, rng)
    y = sample_gamma(b, rng)
    return x / (x + y)


@dataclass
class BetaSampler:
    alpha: float
    beta: float
    rng: SeededRng

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("beta shapes must be positive")

    def __call__(self):
        return sample_beta(self.alpha, self.beta, self.rng)

    def sample(self, n):
        return np.array([self() for _ in range(n)])


@dataclass
class Instance:
    """A network plus sampled scenario data.

    ``capacities`` has shape ``(n_scenarios, n_arcs)`` and ``demands``
    ``(n_scenarios, n_od)``. ``Q`` is the expansion cost matrix.
    """

    network: Network
    probabilities: np.ndarray
    capacities: np.ndarray
    demands: np.ndarray
    Q: np.ndarray = None
    seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.capacities = np.atleast_2d(np.asarray(self.capacities, dtype=float))
        self.demands = np.atleast_2d(np.asarray(self.demands, dtype=float))
        if self.Q is None:
            self.Q = np.eye(self.network.n_arcs)
        self.Q = np.asarray(self.Q, dtype=float)
        S = self.probabilities.shape[0]
        if self.capacities.shape != (S, self.network.n_arcs):
            raise ValueError("capacities must have shape (n_scenarios, n_arcs)")
        if self.demands.shape != (S, len(self.network.od_pairs)):
            raise ValueError("demands must have shape (n_scenarios, n_od)")
        if np.any(self.probabilities <= 0) or abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError("scenario probabilities must be positive and sum to one")
        if np.any(self.capacities <= 0):
            raise ValueError("capacities must be positive")
        if np.any(self.demands < 0):
            raise ValueError("demands must be nonnegative")

    @property
    def n_scenarios(self):
        return self.probabilities.shape[0]

    @property
    def lipschitz_rows(self):
        """``beta[xi, a] = cong_a / c[xi, a]``, slopes of the travel times."""
        return self.network.param("cong")[None, :] / self.capacities

    def feasibility_warnings(self):
        """Cheap necessary checks for a nonempty feasible set.

        Every route crossing an arc can carry at most the expanded capacity
        of that arc, so each OD demand must fit through the widest route
        bottleneck sum. Returns a list of messages (empty when fine).
        """
        net = self.network
        cap = self.capacities + net.param("M")[None, :]
        N = net.incidence
        msgs = []
        for j, (od, sl) in enumerate(zip(net.od_pairs, net.od_slices)):
            for s in range(self.n_scenarios):
                # bottleneck bound: each route limited by its tightest arc
                route_caps = [cap[s, N[:, r] > 0].min() for r in range(sl.start, sl.stop)]
                if self.demands[s, j] > sum(route_caps) + 1e-9:
                    msgs.append(f"scenario {s}: demand of OD ({od.o},{od.d}) exceeds route capacity bound")
        return msgs

    def to_dict(self):
        d = self.network.to_dict()
        d.update(self.meta)
        d["num_scenarios"] = self.n_scenarios
        d["seed"] = self.seed
        d["Q"] = "identity" if np.array_equal(self.Q, np.eye(self.network.n_arcs)) else self.Q.tolist()
        d["scenarios"] = {
            "probabilities": self.probabilities.tolist(),
            "capacities": self.capacities.tolist(),
            "demands": self.demands.tolist(),
        }
        return d

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def generate_instance(net, num_scenarios=18, seed=0, cap_beta=CAP_BETA, dem_beta=DEM_BETA):
    """Sample ``num_scenarios`` equiprobable scenarios for ``net``.

    Sampling order is scenario-major: for each scenario, all arc capacities
    (arc order) and then all OD demands (OD order). Warnings about
    potential infeasibility are logged, never raised.
    """
    if num_scenarios < 1:
        raise ValueError("num_scenarios must be at least 1")
    rng = SeededRng(seed)
    c = net.param("c")
    kappa = net.param("kappa")
    d = np.array([od.demand_base for od in net.od_pairs])
    s = np.array([od.demand_spread for od in net.od_pairs])
    caps = np.empty((num_scenarios, net.n_arcs))
    dems = np.empty((num_scenarios, len(net.od_pairs)))
    for xi in range(num_scenarios):
        for a in range(net.n_arcs):
            caps[xi, a] = c[a] + kappa[a] * sample_beta(*cap_beta, rng)
        for j in range(len(net.od_pairs)):
            dems[xi, j] = d[j] + s[j] * sample_beta(*dem_beta, rng)
    probs = np.full(num_scenarios, 1.0 / num_scenarios)
    meta = {
        "beta_params": {"cap": list(cap_beta), "dem": list(dem_beta)},
        "demand_base": d.tolist(),
        "demand_spread": s.tolist(),
        "M_rule": "200*kappa",
    }
    inst = Instance(net, probs, caps, dems, seed=seed, meta=meta)
    for msg in inst.feasibility_warnings():
        log.warning(msg)
    return inst


def instance_from_dict(d):
    """Rebuild an instance; samples it from ``seed`` when no scenarios are stored."""
    net = network_from_dict(d)
    Q = d.get("Q", "identity")
    Q = None if Q == "identity" else np.asarray(Q, dtype=float)
    if "scenarios" in d:
        sc = d["scenarios"]
        meta = {k: d[k] for k in ("beta_params", "demand_base", "demand_spread", "M_rule") if k in d}
        return Instance(net, sc["probabilities"], sc["capacities"], sc["demands"], Q=Q,
                        seed=d.get("seed"), meta=meta)
    bp = d.get("beta_params", {})
    inst = generate_instance(net, int(d.get("num_scenarios", 18)), int(d.get("seed", 0)),
                             tuple(bp.get("cap", CAP_BETA)), tuple(bp.get("dem", DEM_BETA)))
    if Q is not None:
        inst.Q = Q
    return inst


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
