"""Directed networks, route enumeration and the Nguyen-Dupuis test network."""

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Arc",
    "ODPair",
    "Network",
    "enumerate_routes",
    "build_network",
    "build_nguyen_dupuis",
    "network_from_dict",
    "load_network",
]


@dataclass(frozen=True)
class Arc:
    id: int
    tail: int
    head: int
    c: float = 1.0
    kappa: float = 1.0
    eta: float = 1.0
    M: float = None

    @property
    def cong(self):
        """Congestion coefficient of the affine travel time (15% of free-flow time)."""
        return 0.15 * self.eta

    @property
    def expansion_cap(self):
        return 200.0 * self.kappa if self.M is None else self.M


@dataclass(frozen=True)
class ODPair:
    o: int
    d: int
    demand_base: float = 0.0
    demand_spread: float = 0.0


def enumerate_routes(arcs, origin, destination, max_len=None):
    """All simple directed paths from ``origin`` to ``destination``.

    ``arcs`` is a sequence of objects with ``id``, ``tail`` and ``head``.
    Paths are tuples of arc ids, at most ``max_len`` arcs long (default:
    number of arcs), sorted lexicographically by arc-id sequence.
    """
    arcs = list(arcs)
    if max_len is None:
        max_len = len(arcs)
    out = {}
    for a in sorted(arcs, key=lambda a: a.id):
        out.setdefault(a.tail, []).append(a)
    routes = []

    def dfs(node, visited, path):
        if node == destination:
            routes.append(tuple(path))
            return
        if len(path) >= max_len:
            return
        for a in out.get(node, ()):
            if a.head not in visited:
                visited.add(a.head)
                path.append(a.id)
                dfs(a.head, visited, path)
                path.pop()
                visited.discard(a.head)

    if origin == destination:
        return []
    dfs(origin, {origin}, [])
    return sorted(set(routes))


@dataclass(frozen=True)
class Network:
    """Graph, OD pairs, route sets and the arc-route incidence matrix.

    Arc and route order is fixed: arcs as given, routes grouped by OD pair
    (in ``od_pairs`` order) and sorted lexicographically inside a group.
    """

    nodes: tuple
    arcs: tuple
    od_pairs: tuple
    routes: dict = field(repr=False)
    name: str = ""

    @property
    def n_arcs(self):
        return len(self.arcs)

    @property
    def arc_ids(self):
        return [a.id for a in self.arcs]

    @property
    def route_list(self):
        return [r for od in self.od_pairs for r in self.routes[(od.o, od.d)]]

    @property
    def n_routes(self):
        return sum(len(self.routes[(od.o, od.d)]) for od in self.od_pairs)

    @property
    def od_slices(self):
        """Column slice of each OD pair's routes, in ``od_pairs`` order."""
        slices, start = [], 0
        for od in self.od_pairs:
            n = len(self.routes[(od.o, od.d)])
            slices.append(slice(start, start + n))
            start += n
        return slices

    @property
    def incidence(self):
        pos = {a.id: i for i, a in enumerate(self.arcs)}
        routes = self.route_list
        N = np.zeros((self.n_arcs, len(routes)))
        for j, r in enumerate(routes):
            for a in r:
                N[pos[a], j] = 1.0
        return N

    def arc_index(self, arc_id):
        for i, a in enumerate(self.arcs):
            if a.id == arc_id:
                return i
        raise KeyError(f"no arc with id {arc_id}")

    def param(self, name):
        """Per-arc parameter vector: ``c``, ``kappa``, ``eta``, ``cong`` or ``M``."""
        if name == "M":
            return np.array([a.expansion_cap for a in self.arcs], dtype=float)
        return np.array([getattr(a, name) for a in self.arcs], dtype=float)

    def unused_arcs(self):
        """Ids of arcs lying on no route (all-zero incidence rows)."""
        N = self.incidence
        return [a.id for a, row in zip(self.arcs, N) if not row.any()]

    def to_dict(self):
        arcs = []
        for a in self.arcs:
            d = {"id": a.id, "tail": a.tail, "head": a.head, "c": a.c, "kappa": a.kappa, "eta": a.eta}
            if a.M is not None:
                d["M"] = a.M
            arcs.append(d)
        return {
            "name": self.name,
            "nodes": list(self.nodes),
            "arcs": arcs,
            "od_pairs": [
                {"o": od.o, "d": od.d, "demand_base": od.demand_base, "demand_spread": od.demand_spread}
                for od in self.od_pairs
            ],
        }


def build_network(nodes, arcs, od_pairs, name="", max_len=None):
    """Validate the data and enumerate the route set of every OD pair."""
    arcs = tuple(arcs)
    od_pairs = tuple(od_pairs)
    nodes = tuple(nodes)
    node_set = set(nodes)
    ids = [a.id for a in arcs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate arc ids")
    for a in arcs:
        if a.tail not in node_set or a.head not in node_set:
            raise ValueError(f"arc {a.id} references an unknown node")
        if not (a.c > 0 and a.kappa > 0 and a.eta > 0 and a.expansion_cap > 0):
            raise ValueError(f"arc {a.id}: c, kappa, eta and M must be positive")
    routes = {}
    for od in od_pairs:
        rs = enumerate_routes(arcs, od.o, od.d, max_len)
        if not rs:
            raise ValueError(f"OD pair ({od.o},{od.d}) has no route")
        routes[(od.o, od.d)] = rs
    return Network(nodes, arcs, od_pairs, routes, name)


# (id, tail, head, c, kappa, eta)
_ND_ARCS = [
    (1, 1, 5, 1100, 15, 7),
    (2, 1, 12, 484, 6.6, 9),
    (3, 4, 5, 154, 2.1, 9),
    (4, 4, 9, 1100, 15, 12),
    (5, 5, 6, 330, 4.5, 3),
    (6, 5, 9, 484, 6.6, 9),
    (7, 6, 7, 1100, 15, 5),
    (8, 6, 10, 220, 3, 13),
    (9, 7, 8, 220, 3, 5),
    (10, 7, 11, 220, 6, 9),
    (11, 8, 2, 770, 10.5, 9),
    (12, 9, 10, 770, 10.5, 10),
    (13, 9, 13, 770, 10.5, 9),
    (14, 10, 11, 770, 10.5, 6),
    (15, 11, 2, 440, 6, 9),
    (16, 11, 3, 385, 5.25, 8),
    (17, 12, 6, 242, 3.3, 7),
    (18, 12, 8, 220, 6.6, 14),
    (19, 13, 3, 440, 10.5, 11),
]

# OD order (1,2), (1,3), (4,2), (4,3) with demand d + s * Beta(50, 10)
_ND_OD = [(1, 2, 300, 120), (1, 3, 700, 120), (4, 2, 500, 120), (4, 3, 350, 120)]


def build_nguyen_dupuis():
    """The 13-node, 19-arc Nguyen-Dupuis network with its arc data."""
    arcs = [Arc(i, t, h, float(c), float(k), float(e)) for i, t, h, c, k, e in _ND_ARCS]
    ods = [ODPair(o, d, float(b), float(s)) for o, d, b, s in _ND_OD]
    return build_network(range(1, 14), arcs, ods, name="nguyen-dupuis")


def network_from_dict(d):
    arcs = [
        Arc(int(a["id"]), a["tail"], a["head"], float(a["c"]), float(a["kappa"]), float(a["eta"]),
            None if a.get("M") is None else float(a["M"]))
        for a in d["arcs"]
    ]
    ods = [
        ODPair(od["o"], od["d"], float(od.get("demand_base", 0.0)), float(od.get("demand_spread", 0.0)))
        for od in d["od_pairs"]
    ]
    return build_network(d["nodes"], arcs, ods, name=d.get("name", ""))


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))
