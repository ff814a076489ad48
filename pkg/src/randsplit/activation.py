"""Activation schedules: which averaged map is applied at each iteration.

Index 0 always denotes the identity; indices ``1..m`` select the maps.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SeededRng",
    "ActivationSchedule",
    "ScheduleCertificate",
    "fixed",
    "bernoulli_alternating",
    "deterministic_alternating",
    "randomized_uniform",
    "next_index",
    "validate_schedule",
    "support",
]

_TWO_M53 = 2.0 ** -53


class SeededRng:
    """Counter-based generator (Philox-4x64) with portable draws.

    Only the raw 64-bit words of the bit generator are used; every derived
    draw (uniform, integer, normal) is computed here, so a given seed yields
    the same stream regardless of the numpy ``Generator`` implementation.
    ``stream`` selects an independent substream, e.g. a run id.
    """

    _CHUNK = 512

    def __init__(self, seed, stream=()):
        if isinstance(stream, int):
            stream = (stream,)
        entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]]
        self.seed = int(seed)
        self.stream = tuple(stream)
        self._bitgen = np.random.Philox(np.random.SeedSequence(entropy))
        self._buf = []
        self._pos = 0
        self._normal_spare = None

    def raw(self):
        """Next raw 64-bit word as a Python int."""
        if self._pos >= len(self._buf):
            self._buf = self._bitgen.random_raw(self._CHUNK).tolist()
            self._pos = 0
        r = self._buf[self._pos]
        self._pos += 1
        return r

    def uniform(self):
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.raw() >> 11) * _TWO_M53

    def randint(self, n):
        """Uniform integer in ``{0, ..., n-1}`` (unbiased, rejection)."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        if n > 1 << 64:
            raise ValueError("n too large for a single draw")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.raw()
            if r < limit:
                return r % n

    def bernoulli(self, q):
        return self.uniform() < q

    def normal(self):
        """Standard normal via the Marsaglia polar method."""
        if self._normal_spare is not None:
            z, self._normal_spare = self._normal_spare, None
            return z
        while True:
            a = 2.0 * self.uniform() - 1.0
            b = 2.0 * self.uniform() - 1.0
            s = a * a + b * b
            if 0.0 < s < 1.0:
                break
        scale = math.sqrt(-2.0 * math.log(s) / s)
        self._normal_spare = b * scale
        return a * scale

    def choice(self, cumulative):
        """Index drawn from a cumulative probability table (last entry 1)."""
        idx = int(np.searchsorted(cumulative, self.uniform(), side="right"))
        return min(idx, len(cumulative) - 1)


FIXED = "fixed"
BERNOULLI = "bernoulli_alternating"
DETERMINISTIC = "deterministic_alternating"
RANDOMIZED = "randomized_uniform"
KINDS = (FIXED, BERNOULLI, DETERMINISTIC, RANDOMIZED)


@dataclass(frozen=True)
class ActivationSchedule:
    """Law of the activation index process.

    ``cycle`` is the number of distinct maps visited cyclically by the
    alternating kinds (index ``(k mod cycle) + 1`` at iteration ``k``).
    ``sampler`` optionally draws a uniform index in ``1..m`` constructively,
    for families too large to enumerate.
    """

    num_operators: int
    kind: str
    fixed_index: int = 1
    q: float = 0.5
    cycle: Optional[int] = None
    seed: int = 0
    window_N: Optional[int] = None
    zeta: Optional[float] = None
    sampler: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.num_operators < 0:
            raise ValueError("num_operators must be nonnegative")
        if self.kind in (BERNOULLI, DETERMINISTIC) and self.cycle is None:
            object.__setattr__(self, "cycle", self.num_operators)

    @property
    def is_random(self):
        return self.kind in (BERNOULLI, RANDOMIZED)

    def to_dict(self):
        d = {"kind": self.kind, "num_operators": self.num_operators, "seed": self.seed}
        if self.kind == FIXED:
            d["fixed_index"] = self.fixed_index
        if self.kind == BERNOULLI:
            d["q"] = self.q
        if self.kind in (BERNOULLI, DETERMINISTIC):
            d["cycle"] = self.cycle
        if self.window_N is not None:
            d["window_N"] = self.window_N
        if self.zeta is not None:
            d["zeta"] = self.zeta
        return d

    @classmethod
    def from_dict(cls, d):
        keys = ("num_operators", "kind", "fixed_index", "q", "cycle", "seed", "window_N", "zeta")
        return cls(**{k: d[k] for k in keys if k in d})


def fixed(m, j, seed=0):
    return ActivationSchedule(m, FIXED, fixed_index=j, seed=seed)


def bernoulli_alternating(m, q=0.5, seed=0, cycle=None):
    return ActivationSchedule(m, BERNOULLI, q=q, cycle=cycle, seed=seed)


def deterministic_alternating(m, seed=0, cycle=None):
    return ActivationSchedule(m, DETERMINISTIC, cycle=cycle, seed=seed)


def randomized_uniform(m, seed=0, window_N=None, sampler=None):
    return ActivationSchedule(m, RANDOMIZED, seed=seed, window_N=window_N, sampler=sampler)


def next_index(s, k, rng=None):
    """Activation index at iteration ``k`` (0 = identity)."""
    if k < 0:
        raise ValueError("iteration counter must be nonnegative")
    if s.num_operators == 0:
        return 0
    if s.kind == FIXED:
        return s.fixed_index
    if s.kind == DETERMINISTIC:
        return k % s.cycle + 1
    if s.kind == BERNOULLI:
        return k % s.cycle + 1 if rng.uniform() < s.q else 0
    if s.sampler is not None:
        return s.sampler(rng)
    return rng.randint(s.num_operators) + 1


def support(s, k):
    """The support set of the activation index at iteration ``k``."""
    if s.num_operators == 0:
        return {0}
    if s.kind == FIXED:
        return {s.fixed_index}
    if s.kind == DETERMINISTIC:
        return {k % s.cycle + 1}
    if s.kind == BERNOULLI:
        return {k % s.cycle + 1} if s.q >= 1 else {0, k % s.cycle + 1}
    return set(range(1, s.num_operators + 1))


@dataclass(frozen=True)
class ScheduleCertificate:
    """Outcome of :func:`validate_schedule`.

    ``ok`` is True when the covering window ``N`` and the minimal
    probability ``zeta`` were established. ``case_i_only`` marks fixed
    schedules that are only admissible when every solution already lies in
    the a-priori set.
    """

    ok: bool
    N: Optional[int] = None
    zeta: Optional[float] = None
    violation: str = ""
    case_i_only: bool = False

    def __bool__(self):
        return self.ok


def validate_schedule(s):
    """Check the covering/probability condition of the activation law."""
    m = s.num_operators
    if m == 0:
        return ScheduleCertificate(True, N=1, zeta=1.0)
    if s.kind == FIXED:
        if not 1 <= s.fixed_index <= m:
            return ScheduleCertificate(False, violation=f"fixed index {s.fixed_index} not in 1..{m}")
        if m == 1:
            return ScheduleCertificate(True, N=1, zeta=1.0)
        missing = sorted(set(range(1, m + 1)) - {s.fixed_index})
        return ScheduleCertificate(
            False,
            violation=f"indices {{{','.join(map(str, missing))}}} never covered",
            case_i_only=True,
        )
    if s.kind in (BERNOULLI, DETERMINISTIC):
        if not s.cycle or s.cycle < 1:
            return ScheduleCertificate(False, violation="empty cycle")
        if s.cycle < m:
            return ScheduleCertificate(
                False, violation=f"cycle of length {s.cycle} never reaches indices {s.cycle + 1}..{m}"
            )
        if s.cycle > m:
            return ScheduleCertificate(False, violation=f"cycle of length {s.cycle} exceeds {m} operators")
        if s.kind == DETERMINISTIC:
            return ScheduleCertificate(True, N=m, zeta=1.0)
        if not 0 < s.q <= 1:
            return ScheduleCertificate(False, violation=f"activation probability q={s.q} not in (0, 1]")
        return ScheduleCertificate(True, N=m, zeta=float(s.q))
    # randomized: every index has probability 1/m at every k; the covering
    # window only holds with high probability, so N is whatever the caller declared
    return ScheduleCertificate(True, N=s.window_N, zeta=1.0 / m)
