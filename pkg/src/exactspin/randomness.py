"""Deterministic space-time event streams and the grand couplings.

Every random quantity is a pure function of a 64-bit master seed and
integer counters, so any sub-window of the space-time Poisson process
can be regenerated without storing events.  Arrival times come from
per-vertex, per-unit-time-block Poisson counts keyed by
(seed, vertex, block); restricting a stream to a smaller window yields
exactly the time-restriction of the larger stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .lattice import BoxRegion, Vertex

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# stream tags separating independent uniform channels of one event
_TAG_COUNT = 0x1
_TAG_TIME = 0x2
_TAG_PRIMARY = 0x3
_TAG_REFINE = 0x4
_TAG_MATCH = 0x5
_TAG_EDGE = 0x6


def mix64(z: int) -> int:
    """SplitMix64 finalizer; the core keyed generator."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _to_unit(bits: int) -> float:
    """Map 64 bits to a float strictly inside (0, 1)."""
    return ((bits >> 11) + 0.5) * (1.0 / (1 << 53))


def vertex_key(master: int, vertex: Vertex) -> int:
    """Fold the master seed and the vertex coordinates into one key."""
    h = mix64(master & _MASK)
    for c in vertex:
        h = mix64(h ^ (c & _MASK))
    return h


def _poisson_unit(u: float) -> int:
    """Inverse-CDF Poisson(1) draw from one uniform."""
    p = math.exp(-1.0)
    cum = p
    k = 0
    while u > cum:
        k += 1
        p /= k
        cum += p
        if k > 60:  # pragma: no cover - cdf saturates long before
            break
    return k


@dataclass(frozen=True)
class SeedKey:
    """Identifies one event's randomness source.

    ``counter`` packs (time block, slot within block).  The event list
    restricted to any sub-window is a deterministic function of
    (master, window) and is restriction-consistent across windows.
    """

    master: int
    vertex: Vertex
    counter: int

    def event_key(self) -> int:
        return mix64(vertex_key(self.master, self.vertex) ^ self.counter)


@dataclass(frozen=True)
class UpdateRandomness:
    """The randomness triple driving one single-site update.

    ``u_primary`` selects the digit cell through the inverse-CDF grand
    coupling, ``u_refine`` drives the refinement inside the cell, and
    ``u_match`` encodes the Bernoulli matching bit: ``b_match(eps)`` is
    0 (the matching branch) with probability 1 - eps.  The three
    channels are independent given the seed key.
    """

    u_primary: float
    u_refine: float
    u_match: float
    key: int = 0

    def b_match(self, eps: float) -> int:
        return 1 if self.u_match < eps else 0

    def edge_uniform(self, slot: int) -> float:
        """Extra independent uniform, counter-split from the same key."""
        return _to_unit(mix64(self.key ^ (_TAG_EDGE + ((slot + 1) << 8))))


@dataclass(frozen=True)
class UpdateEvent:
    vertex: Vertex
    time: float
    randomness: UpdateRandomness


def randomness_from_key(key: int) -> UpdateRandomness:
    return UpdateRandomness(
        u_primary=_to_unit(mix64(key ^ _TAG_PRIMARY)),
        u_refine=_to_unit(mix64(key ^ _TAG_REFINE)),
        u_match=_to_unit(mix64(key ^ _TAG_MATCH)),
        key=key,
    )


def _vertex_events_in_block(vkey: int, block: int) -> List[Tuple[float, int]]:
    """(time, counter) pairs for one vertex in the block (-block-1, -block]."""
    bkey = mix64(vkey ^ (block * 2 + 11))
    count = _poisson_unit(_to_unit(mix64(bkey ^ _TAG_COUNT)))
    out = []
    for slot in range(count):
        t = -(block + _to_unit(mix64(bkey ^ (_TAG_TIME + ((slot + 1) << 8)))))
        out.append((t, (block << 8) | slot))
    return out


def event_stream(
    region: BoxRegion | Sequence[Vertex],
    t_start: float,
    t_end: float,
    seed: int,
    reseed: Optional[Mapping[Vertex, int]] = None,
) -> List[UpdateEvent]:
    """Ordered update events on region x (t_start, t_end].

    Unit-rate Poisson arrivals per vertex, deterministic in the seed.
    ``reseed`` swaps the master seed for selected vertices, which
    re-randomizes their whole event line (used by decoupling checks).
    """
    if t_start >= t_end:
        if t_start == t_end:
            return []
        raise ValueError("need t_start < t_end <= 0")
    if t_end > 0:
        raise ValueError("windows end at or before time 0")
    verts = region.vertices() if isinstance(region, BoxRegion) else list(region)
    first_block = max(0, math.floor(-t_end))
    last_block = math.ceil(-t_start) - 1
    events: List[Tuple[float, Vertex, int]] = []
    for v in verts:
        master = seed if reseed is None else reseed.get(v, seed)
        vkey = vertex_key(master, v)
        for block in range(first_block, last_block + 1):
            for t, counter in _vertex_events_in_block(vkey, block):
                if t_start < t <= t_end:
                    events.append((t, v, mix64(vkey ^ counter)))
    events.sort(key=lambda rec: rec[0])
    return [
        UpdateEvent(vertex=v, time=t, randomness=randomness_from_key(key))
        for (t, v, key) in events
    ]


# ---------------------------------------------------------------------------
# Digit arithmetic
# ---------------------------------------------------------------------------

MAX_DIGITS = 15


def digit_cell(x: float, k: int) -> int:
    """floor(10^k * x), exact for any binary float.

    Works on the integer pair returned by ``float.as_integer_ratio`` so
    boundary values never suffer float-flooring anomalies.
    """
    if not (0 <= k <= MAX_DIGITS):
        raise ValueError(f"digit depth k must be in [0, {MAX_DIGITS}]")
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    p, q = float(x).as_integer_ratio()
    return (p * 10**k) // q


def digit_split(x: float, k: int) -> Tuple[float, float]:
    """(floor_k, frac_k) with floor_k = 10^-k * floor(10^k x)."""
    n = digit_cell(x, k)
    floor_k = n / 10**k
    return floor_k, x - floor_k


# ---------------------------------------------------------------------------
# Grand couplings
# ---------------------------------------------------------------------------


def monotone_inverse(
    cdf: Callable[[float], float], u: float, lower: float, upper: float
) -> float:
    """inf{x in [lower, upper] : cdf(x) >= u}, ties broken by infimum.

    Full-resolution bisection: deterministic, exactly monotone in u and
    monotone under pointwise domination of the (computed) CDF.
    """
    if not (0.0 <= u <= 1.0):
        raise ValueError("u must lie in [0, 1]")
    if cdf(lower) >= u:
        return lower
    lo, hi = lower, upper
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cdf(mid) >= u:
            hi = mid
        else:
            lo = mid
    return hi


def grand_inverse_cdf(
    cdf: Callable[[float], float], u: float, lower: float, upper: float
) -> float:
    """The inverse-CDF grand coupling map at one uniform u."""
    return monotone_inverse(cdf, u, lower, upper)


class CellLaw:
    """A conditional law restricted to one digit cell [lower, upper].

    ``cdf`` must be the cell-normalized CDF: 0 at ``lower``, 1 at
    ``upper``, monotone in between.
    """

    def __init__(self, lower: float, upper: float, cdf: Callable[[float], float]):
        if not lower < upper:
            raise ValueError("cell must have positive width")
        self.lower = lower
        self.upper = upper
        self.cdf = cdf

    def uniform_point(self, u: float) -> float:
        return self.lower + (self.upper - self.lower) * u


class CalibrationError(RuntimeError):
    """The cell law fails the (1-eps)-uniform domination precondition."""


def residual_cdf(cell: CellLaw, eps: float) -> Callable[[float], float]:
    """The leftover CDF after peeling (1-eps) of the uniform component."""
    width = cell.upper - cell.lower

    def tilde(x: float) -> float:
        linear = (x - cell.lower) / width
        return (cell.cdf(x) - (1.0 - eps) * linear) / eps

    return tilde


def matched_refine(
    cell: CellLaw, iota: UpdateRandomness, eps: float
) -> Tuple[float, bool]:
    """Draw from the cell law, matching across laws with prob 1 - eps.

    On the matching branch (b_match = 0) the value is the plain uniform
    point of the cell, identical for every admissible law; otherwise it
    is the inverse of the residual CDF at ``u_refine``.  Preserves
    stochastic domination across laws sharing the same randomness.
    """
    if not (0.0 <= eps < 1.0):
        raise ValueError("eps must lie in [0, 1)")
    if eps == 0.0 or iota.b_match(eps) == 0:
        return cell.uniform_point(iota.u_refine), True
    tilde = residual_cdf(cell, eps)
    if tilde(cell.upper) < iota.u_refine - 1e-9:
        raise CalibrationError(
            "residual CDF does not reach u_refine; eps or k miscalibrated"
        )
    return monotone_inverse(tilde, iota.u_refine, cell.lower, cell.upper), False


def validate_cell_law(cell: CellLaw, eps: float, grid: int = 64) -> None:
    """Check the residual CDF is monotone on a grid; raise otherwise."""
    tilde = residual_cdf(cell, eps)
    xs = [
        cell.lower + (cell.upper - cell.lower) * i / grid for i in range(grid + 1)
    ]
    vals = [tilde(x) for x in xs]
    for a, b in zip(vals, vals[1:]):
        if b < a - 1e-12:
            raise CalibrationError(
                "residual CDF decreases: cell law fails uniform domination"
            )
