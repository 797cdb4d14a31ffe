"""Ground spaces, functions, measures and extended reals.

Points of a :class:`Space` carry the labels ``1..n``; label ``m`` sits at array
position ``m - 1``.  Compact sets are label prefixes ``{1..m}``, so a compact
family is stored as the tuple of its prefix lengths.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "UsageError",
    "DomainError",
    "DegenerateError",
    "CertificationError",
    "StructuralError",
    "ExtReal",
    "INF",
    "Space",
    "Func",
    "Measure",
    "pairing",
    "lattice_min",
    "lattice_min_one",
    "dirac",
    "zero_measure",
    "uniform_measure",
    "geometric_measure",
    "make_truncation_ladder",
    "DEFAULT_LADDER",
]


class UsageError(ValueError):
    """Bad arguments: mismatched spaces, out-of-range labels, invalid schedules."""


class DomainError(ArithmeticError):
    """A point lies outside the region where an operation is defined."""


class DegenerateError(ArithmeticError):
    """A functional is infinite everywhere it was probed."""


class CertificationError(RuntimeError):
    """A representation identity could not be certified."""

    def __init__(self, message: str, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class StructuralError(ValueError):
    """A sequence handed to a checker is not monotone or not dominated."""


@functools.total_ordering
@dataclass(frozen=True)
class ExtReal:
    """An element of ``R ∪ {+inf}``.

    Arithmetic follows convex-analysis conventions: ``r + inf = inf`` and
    ``0 * inf = 0``.  Anything that would produce ``-inf`` or NaN raises.
    """

    value: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if self.infinite:
            object.__setattr__(self, "value", math.inf)
            return
        v = float(self.value)
        if math.isnan(v):
            raise UsageError("ExtReal cannot hold NaN")
        if v == -math.inf:
            raise UsageError("ExtReal has no -inf")
        if v == math.inf:
            object.__setattr__(self, "infinite", True)
        object.__setattr__(self, "value", v)

    @classmethod
    def of(cls, x: Union["ExtReal", float]) -> "ExtReal":
        if isinstance(x, ExtReal):
            return x
        return cls(float(x))

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        return self.value

    def __add__(self, other):
        o = ExtReal.of(other)
        if self.infinite or o.infinite:
            return INF
        return ExtReal(self.value + o.value)

    __radd__ = __add__

    def __sub__(self, other):
        o = ExtReal.of(other)
        if o.infinite:
            raise UsageError("inf - inf and r - inf are not representable")
        if self.infinite:
            return INF
        return ExtReal(self.value - o.value)

    def __rsub__(self, other):
        return ExtReal.of(other) - self

    def __mul__(self, scalar):
        s = float(scalar)
        if s < 0 or math.isnan(s):
            raise UsageError("ExtReal only scales by nonnegative reals")
        if self.infinite:
            return ExtReal(0.0) if s == 0 else INF
        return ExtReal(self.value * s)

    __rmul__ = __mul__

    def __eq__(self, other):
        try:
            o = ExtReal.of(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.infinite == o.infinite and (self.infinite or self.value == o.value)

    def __lt__(self, other):
        o = ExtReal.of(other)
        if self.infinite:
            return False
        return o.infinite or self.value < o.value

    def __hash__(self):
        return hash((self.infinite, self.value))

    def __repr__(self):
        return "ExtReal(+inf)" if self.infinite else f"ExtReal({self.value!r})"


INF = ExtReal(infinite=True)


@dataclass(frozen=True)
class Space:
    """Finite ground set ``{1..size}`` with an increasing family of prefix compacts."""

    size: int
    compact_family: tuple = ()
    ladder_tag: Optional[int] = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise UsageError(f"space size must be a positive integer, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))
        fam = tuple(int(m) for m in self.compact_family) or tuple(range(1, self.size + 1))
        if any(b < a for a, b in zip(fam, fam[1:])):
            raise UsageError("compact family must be increasing")
        if fam[0] < 1 or fam[-1] > self.size:
            raise UsageError("compact prefixes must lie in 1..size")
        object.__setattr__(self, "compact_family", fam)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.size + 1)

    def prefix_mask(self, m: int) -> np.ndarray:
        """Boolean mask of the prefix ``{1..m}`` (clipped to the space)."""
        mask = np.zeros(self.size, dtype=bool)
        mask[: max(0, min(int(m), self.size))] = True
        return mask

    def with_family(self, family: Sequence[int]) -> "Space":
        return Space(self.size, tuple(family), self.ladder_tag)


def _frozen(values, n: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise UsageError(f"{what} needs {n} entries, got {arr.size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Func:
    """A real function on a :class:`Space`, stored densely."""

    space: Space
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, self.space.size, "Func")
        if not np.all(np.isfinite(arr)):
            raise UsageError("Func entries must be finite")
        object.__setattr__(self, "values", arr)

    @classmethod
    def constant(cls, space: Space, c: float) -> "Func":
        return cls(space, np.full(space.size, float(c)))

    @classmethod
    def indicator(cls, space: Space, labels: Iterable[int]) -> "Func":
        v = np.zeros(space.size)
        idx = np.asarray(list(labels), dtype=int)
        if idx.size and (idx.min() < 1 or idx.max() > space.size):
            raise UsageError("indicator labels out of range")
        v[idx - 1] = 1.0
        return cls(space, v)

    @classmethod
    def from_recipe(cls, space: Space, recipe: Callable[[np.ndarray], np.ndarray]) -> "Func":
        """Evaluate ``recipe`` on the labels ``1..n``; restrictions to prefixes agree."""
        return cls(space, np.asarray(recipe(space.labels), dtype=float))

    def _other(self, g) -> np.ndarray:
        if isinstance(g, Func):
            _same_space(self.space, g.space)
            return g.values
        return np.float64(g)

    def __add__(self, g):
        return Func(self.space, self.values + self._other(g))

    __radd__ = __add__

    def __sub__(self, g):
        return Func(self.space, self.values - self._other(g))

    def __rsub__(self, g):
        return Func(self.space, self._other(g) - self.values)

    def __mul__(self, c):
        return Func(self.space, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return Func(self.space, -self.values)

    def __eq__(self, g):
        if not isinstance(g, Func):
            return NotImplemented
        return self.space == g.space and np.array_equal(self.values, g.values)

    __hash__ = None

    def le(self, g: "Func") -> bool:
        """Pointwise ``self <= g`` with exact comparisons."""
        return bool(np.all(self.values <= self._other(g)))

    def sup(self) -> float:
        return float(self.values.max())

    def inf(self) -> float:
        return float(self.values.min())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def meet(self, g) -> "Func":
        return Func(self.space, np.minimum(self.values, self._other(g)))

    def __repr__(self):
        return f"Func(n={self.space.size}, values={np.array2string(self.values, precision=4, threshold=8)})"


@dataclass(frozen=True, eq=False)
class Measure:
    """A nonnegative weight vector on a :class:`Space`."""

    space: Space
    weights: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.weights, self.space.size, "Measure")
        if not np.all(np.isfinite(arr)):
            raise UsageError("Measure weights must be finite")
        if np.any(arr < 0):
            raise UsageError("Measure weights must be nonnegative")
        object.__setattr__(self, "weights", arr)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def of(self, labels: Iterable[int]) -> float:
        """Measure of the set with the given labels."""
        idx = np.unique(np.asarray(list(labels), dtype=int))
        if idx.size == 0:
            return 0.0
        return float(self.weights[idx - 1].sum())

    def of_mask(self, mask: np.ndarray) -> float:
        return float(self.weights[np.asarray(mask, dtype=bool)].sum())

    def prefix_mass(self, m: int) -> float:
        """``mu({1..m})``."""
        return float(self.weights[: max(0, min(int(m), self.space.size))].sum())

    def __add__(self, other: "Measure") -> "Measure":
        _same_space(self.space, other.space)
        return Measure(self.space, self.weights + other.weights)

    def __mul__(self, c):
        return Measure(self.space, self.weights * float(c))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Measure):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def __repr__(self):
        return f"Measure(n={self.space.size}, mass={self.mass:.6g})"


def _same_space(a: Space, b: Space) -> None:
    if a != b:
        raise UsageError(f"space mismatch: size {a.size} vs size {b.size}")


def pairing(f: Func, mu: Measure) -> float:
    """The integral ``<f, mu> = sum_i f_i mu_i``."""
    _same_space(f.space, mu.space)
    return float(np.dot(f.values, mu.weights))


def lattice_min(f: Func, g: Func) -> Func:
    _same_space(f.space, g.space)
    return Func(f.space, np.minimum(f.values, g.values))


def lattice_min_one(f: Func) -> Func:
    return Func(f.space, np.minimum(f.values, 1.0))


def dirac(space: Space, i: int) -> Measure:
    """Unit mass at label ``i`` (``1 <= i <= n``)."""
    if int(i) != i or not 1 <= i <= space.size:
        raise UsageError(f"label {i!r} outside 1..{space.size}")
    w = np.zeros(space.size)
    w[int(i) - 1] = 1.0
    return Measure(space, w)


def zero_measure(space: Space) -> Measure:
    return Measure(space, np.zeros(space.size))


def uniform_measure(space: Space, mass: float = 1.0) -> Measure:
    return Measure(space, np.full(space.size, mass / space.size))


def geometric_measure(space: Space, ratio: float = 0.5, normalize: bool = False) -> Measure:
    """Weights ``ratio**i`` on labels ``i``; optionally rescaled to mass one."""
    w = float(ratio) ** space.labels.astype(float)
    if normalize:
        w = w / w.sum()
    return Measure(space, w)


DEFAULT_LADDER = tuple(2**j for j in range(1, 13))


def make_truncation_ladder(schedule: Optional[Sequence[int]] = None) -> list:
    """One prefix-family space per size in a strictly increasing schedule."""
    sizes = list(DEFAULT_LADDER if schedule is None else schedule)
    if not sizes:
        raise UsageError("empty ladder schedule")
    if any(int(s) != s or s < 1 for s in sizes):
        raise UsageError("ladder sizes must be positive integers")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise UsageError("ladder schedule must be strictly increasing")
    return [Space(int(s), ladder_tag=int(s)) for s in sizes]
