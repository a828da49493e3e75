"""Finite categorical distributions over tagged scalar values.

Every random choice in a model or guide program is drawn from a `Dist`:
an ordered, normalized probability table over distinct integer, boolean,
or symbol (string) values.  All probability arithmetic elsewhere in the
package is carried in natural-log space (nats), with ``-inf`` encoding
probability zero.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from itertools import accumulate
from typing import Iterable, Sequence, Union

import numpy as np

Value = Union[int, bool, str]

NEG_INF = float("-inf")


class ZeroMassError(ValueError):
    """All supplied weights were zero."""


class DuplicateValueError(ValueError):
    """The same support value appeared more than once."""


class EmptyRangeError(ValueError):
    """An integer range with lo > hi has no atoms."""


def _as_value(v) -> Value:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, str):
        return v
    raise TypeError(f"support values must be int, bool, or str, got {type(v).__name__}")


def log_nonneg(p: float) -> float:
    """Natural log of a nonnegative number, with log(0) = -inf."""
    if p == 0.0:
        return NEG_INF
    return math.log(p)


class Dist:
    """Normalized categorical distribution with an ordered support.

    Immutable after construction; safe to share across samplers.  Sampling
    is inverse-CDF over the support order, so a fixed random stream always
    maps to the same value.
    """

    __slots__ = ("values", "masses", "_cum", "_index")

    def __init__(self, values: Sequence[Value], masses: Sequence[float]):
        self.values: tuple[Value, ...] = tuple(values)
        self.masses: tuple[float, ...] = tuple(masses)
        cum = list(accumulate(self.masses))
        cum[-1] = 1.0  # absorb last-ulp normalization slack
        self._cum = cum
        self._index = {v: i for i, v in enumerate(self.values)}

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(zip(self.values, self.masses))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dist):
            return NotImplemented
        return self.values == other.values and self.masses == other.masses

    def __hash__(self):
        return hash((self.values, self.masses))

    def __repr__(self) -> str:
        body = ", ".join(f"{v!r}: {m:.6g}" for v, m in self)
        return f"Dist({{{body}}})"

    def prob(self, v: Value) -> float:
        i = self._index.get(v)
        return 0.0 if i is None else self.masses[i]

    def log_prob(self, v: Value) -> float:
        """Natural log of v's mass; -inf when v is outside the support."""
        i = self._index.get(v)
        if i is None:
            return NEG_INF
        return math.log(self.masses[i])

    def sample(self, rng: np.random.Generator) -> Value:
        """Draw one value; deterministic given the generator state."""
        u = rng.random()
        return self.values[bisect_right(self._cum, u)]


def dist_from_weights(pairs: Iterable[tuple[Value, float]]) -> Dist:
    """Build a Dist from (value, nonnegative weight) pairs.

    Weights are normalized to sum to one; zero-weight entries are dropped.
    Raises ZeroMassError when nothing has positive weight and
    DuplicateValueError when a value repeats.
    """
    values: list[Value] = []
    weights: list[float] = []
    seen = set()
    for v, w in pairs:
        v = _as_value(v)
        w = float(w)
        if math.isnan(w) or w < 0.0:
            raise ValueError(f"weight for {v!r} must be nonnegative, got {w}")
        if v in seen:
            raise DuplicateValueError(f"duplicate support value {v!r}")
        seen.add(v)
        if w == 0.0:
            continue
        values.append(v)
        weights.append(w)
    if not values:
        raise ZeroMassError("no support value has positive weight")
    total = math.fsum(weights)
    if not math.isfinite(total):
        raise ValueError("weights must have a finite sum")
    return Dist(values, [w / total for w in weights])


def uniform_range(lo: int, hi: int) -> Dist:
    """Uniform distribution on the integers lo..hi inclusive."""
    if lo > hi:
        raise EmptyRangeError(f"empty integer range {lo}..{hi}")
    n = hi - lo + 1
    return Dist(range(lo, hi + 1), [1.0 / n] * n)


def point_mass(v: Value) -> Dist:
    """Distribution concentrated on a single value."""
    return Dist([_as_value(v)], [1.0])
