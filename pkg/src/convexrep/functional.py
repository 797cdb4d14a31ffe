"""Increasing convex functionals and probes of their domain and shape.

A :class:`Functional` is driven by a batch evaluator mapping an ``(m, n)``
array of function values to ``m`` numbers in ``R ∪ {inf}`` (``np.inf`` marks
``+inf`` internally; :func:`evaluate` converts to :class:`ExtReal`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import (
    DomainError,
    ExtReal,
    Func,
    Measure,
    Space,
    UsageError,
    _same_space,
)

__all__ = [
    "Functional",
    "DomainProbe",
    "DEFAULT_GRID",
    "MASS_TOL",
    "make_sup_functional",
    "make_indicator_p",
    "make_entropic",
    "make_linear",
    "make_worst_case",
    "scale",
    "add",
    "pointwise_max",
    "evaluate",
    "difference_quotients",
    "directional_derivative",
    "unit_directional_derivatives",
    "in_interior",
    "has_translation_property",
    "monotonicity_violations",
    "convexity_violations",
    "standard_catalog",
]

DEFAULT_GRID = tuple(2.0**-j for j in range(21))

# closed-form conjugates treat a measure as a probability measure within this slack
MASS_TOL = 1e-8
NEG_TOL = 1e-12
LINEAR_TOL = 1e-8
FEAS_TOL = 1e-8

_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class Functional:
    """An increasing convex map from functions on ``space`` to ``R ∪ {+inf}``.

    ``conjugate`` (optional) maps a signed weight vector to the exact value of
    the convex conjugate; ``gradient`` (optional) returns one subgradient per
    row and only steers the numerical conjugate search.
    """

    space: Space
    kind: str
    batch: Callable[[np.ndarray], np.ndarray]
    conjugate: Optional[Callable[[np.ndarray], float]] = None
    translation_invariant: Optional[bool] = None
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def values(self, F: np.ndarray) -> np.ndarray:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if F.shape[1] != self.space.size:
            raise UsageError(f"expected rows of length {self.space.size}, got {F.shape[1]}")
        rows = max(1, _CHUNK_ELEMS // self.space.size)
        if F.shape[0] <= rows:
            return np.asarray(self.batch(F), dtype=float)
        return np.concatenate([np.asarray(self.batch(F[i : i + rows]), dtype=float) for i in range(0, F.shape[0], rows)])

    def __call__(self, f: Func) -> ExtReal:
        return evaluate(self, f)

    def closed_form_conjugate(self, mu) -> Optional[ExtReal]:
        if self.conjugate is None:
            return None
        return ExtReal.of(self.conjugate(_weights(mu, self.space)))

    def subgradients(self, F: np.ndarray) -> np.ndarray:
        F = np.atleast_2d(F)
        if self.gradient is not None:
            return np.asarray(self.gradient(F), dtype=float)
        # forward differences; only used to steer the ascent
        h = 1e-7 * np.maximum(1.0, np.abs(F).max(axis=1, keepdims=True))
        base = self.values(F)
        G = np.empty_like(F)
        for i in range(F.shape[1]):
            E = F.copy()
            E[:, i] += h[:, 0]
            G[:, i] = (self.values(E) - base) / h[:, 0]
        return np.where(np.isfinite(G), G, 0.0)

    def __repr__(self):
        return f"Functional({self.kind}, n={self.space.size})"


def _weights(mu, space: Space) -> np.ndarray:
    if isinstance(mu, Measure):
        _same_space(mu.space, space)
        return mu.weights
    w = np.asarray(mu, dtype=float).reshape(-1)
    if w.shape != (space.size,):
        raise UsageError(f"weight vector needs {space.size} entries")
    return w


def _has_negative(w: np.ndarray) -> bool:
    return bool(np.any(w < -NEG_TOL))


def evaluate(phi: Functional, f: Func) -> ExtReal:
    _same_space(phi.space, f.space)
    return ExtReal.of(phi.values(f.values[None, :])[0])


# ---------------------------------------------------------------- catalog


def make_sup_functional(space: Space) -> Functional:
    def conj(w):
        if _has_negative(w):
            return math.inf
        return 0.0 if abs(w.sum() - 1.0) <= MASS_TOL else math.inf

    def grad(F):
        G = np.zeros_like(F)
        G[np.arange(F.shape[0]), np.argmax(F, axis=1)] = 1.0
        return G

    return Functional(space, "sup", lambda F: F.max(axis=1), conj, True, grad)


def make_indicator_p(space: Space) -> Functional:
    """0 where ``max f <= 0`` and ``+inf`` elsewhere."""

    def conj(w):
        return math.inf if _has_negative(w) else 0.0

    return Functional(
        space,
        "indicator_p",
        lambda F: np.where(F.max(axis=1) <= 0.0, 0.0, np.inf),
        conj,
        False,
        np.zeros_like,
    )


def make_entropic(space: Space, p: Measure) -> Functional:
    """``log sum_i p_i exp(f_i)`` for a strictly positive probability ``p``."""
    _same_space(space, p.space)
    pw = p.weights
    if np.any(pw <= 0):
        raise UsageError("entropic reference measure must be strictly positive")
    if abs(pw.sum() - 1.0) > 1e-12:
        raise UsageError(f"entropic reference must have mass 1, got {pw.sum()!r}")
    logp = np.log(pw)

    def conj(w):
        if _has_negative(w) or abs(w.sum() - 1.0) > MASS_TOL:
            return math.inf
        pos = w > 0
        return float(np.sum(w[pos] * (np.log(w[pos]) - logp[pos])))

    def grad(F):
        z = F + logp
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    return Functional(
        space,
        "entropic",
        lambda F: logsumexp(F, b=pw, axis=1),
        conj,
        True,
        grad,
        {"reference": pw.tolist()},
    )


def make_linear(nu: Measure) -> Functional:
    w_nu = nu.weights

    def conj(w):
        return 0.0 if np.allclose(w, w_nu, rtol=0.0, atol=LINEAR_TOL) else math.inf

    return Functional(
        nu.space,
        "linear",
        lambda F: F @ w_nu,
        conj,
        abs(nu.mass - 1.0) <= 1e-12,
        lambda F: np.broadcast_to(w_nu, F.shape).copy(),
        {"nu": w_nu.tolist()},
    )


def make_worst_case(measures: Sequence[tuple]) -> Functional:
    """``max_j (<f, mu_j> - c_j)`` over a finite list of ``(mu_j, c_j)``."""
    if len(measures) == 0:
        raise UsageError("worst_case needs at least one measure")
    space = measures[0][0].space
    for mu, c in measures:
        _same_space(space, mu.space)
        if not math.isfinite(float(c)):
            raise UsageError("worst_case penalties must be finite")
    A = np.stack([mu.weights for mu, _ in measures], axis=1)  # n x J
    c = np.array([float(c) for _, c in measures])
    B = np.vstack([A, np.ones((1, A.shape[1]))])
    full_rank = np.linalg.matrix_rank(B) == B.shape[1]

    def batch(F):
        return (F @ A - c).max(axis=1)

    def grad(F):
        return A[:, np.argmax(F @ A - c, axis=1)].T.copy()

    def conj(w):
        # min c.lam over the simplex subject to sum_j lam_j mu_j = w
        if _has_negative(w):
            return math.inf
        rhs = np.append(w, 1.0)
        scale_ = max(1.0, float(np.abs(rhs).max()))
        lam, *_ = np.linalg.lstsq(B, rhs, rcond=None)
        if np.abs(B @ lam - rhs).max() > FEAS_TOL * scale_:
            return math.inf
        if full_rank:
            if lam.min() < -FEAS_TOL:
                return math.inf
            return float(c @ np.clip(lam, 0.0, None))
        res = linprog(c, A_eq=B, b_eq=rhs, bounds=(0, None), method="highs")
        return float(res.fun) if res.status == 0 else math.inf

    masses = A.sum(axis=0)
    return Functional(
        space,
        "worst_case",
        batch,
        conj,
        bool(np.all(np.abs(masses - 1.0) <= 1e-12)),
        grad,
        {"measures": A.T.tolist(), "penalties": c.tolist()},
    )


# ------------------------------------------------------------ combinators


def scale(phi: Functional, a: float) -> Functional:
    """``a * phi`` for ``a > 0``; the conjugate is ``a phi*(mu / a)``."""
    a = float(a)
    if not a > 0:
        raise UsageError("scale factor must be positive")
    conj = None
    if phi.conjugate is not None:
        conj = lambda w: a * phi.conjugate(w / a)  # noqa: E731
    grad = None if phi.gradient is None else (lambda F: a * phi.gradient(F))
    return Functional(
        phi.space,
        "combinator",
        lambda F: a * phi.batch(F),
        conj,
        phi.translation_invariant if a == 1.0 else False,
        grad,
        {"op": "scale", "factor": a, "base": phi.kind},
    )


def add(*phis: Functional) -> Functional:
    """Pointwise sum; exact conjugate only when all but one summand is linear."""
    if not phis:
        raise UsageError("add needs at least one functional")
    space = phis[0].space
    for p in phis:
        _same_space(space, p.space)
    linear = [p for p in phis if p.kind == "linear"]
    rest = [p for p in phis if p.kind != "linear"]
    conj = None
    if len(rest) <= 1 and all(p.conjugate is not None for p in rest):
        shift = sum((np.asarray(p.params["nu"]) for p in linear), np.zeros(space.size))
        if rest:
            base = rest[0]
            conj = lambda w: base.conjugate(w - shift)  # noqa: E731
        else:
            conj = lambda w: 0.0 if np.allclose(w, shift, rtol=0.0, atol=LINEAR_TOL) else math.inf  # noqa: E731
    grad = None
    if all(p.gradient is not None for p in phis):
        grad = lambda F: sum(p.gradient(F) for p in phis)  # noqa: E731
    return Functional(
        space,
        "combinator",
        lambda F: sum(p.batch(F) for p in phis),
        conj,
        None,
        grad,
        {"op": "add", "terms": [p.kind for p in phis]},
    )


def pointwise_max(*phis: Functional) -> Functional:
    if not phis:
        raise UsageError("pointwise_max needs at least one functional")
    space = phis[0].space
    for p in phis:
        _same_space(space, p.space)

    def batch(F):
        return np.max(np.stack([p.batch(F) for p in phis]), axis=0)

    grad = None
    if all(p.gradient is not None for p in phis):

        def grad(F):
            vals = np.stack([p.batch(F) for p in phis])
            active = np.argmax(vals, axis=0)
            grads = np.stack([p.gradient(F) for p in phis])
            return grads[active, np.arange(F.shape[0])]

    ti = True if all(p.translation_invariant for p in phis) else None
    return Functional(space, "combinator", batch, None, ti, grad, {"op": "max", "terms": [p.kind for p in phis]})


# ------------------------------------------------------------------ probes


@dataclass(frozen=True)
class DomainProbe:
    """Directions and step grid used to test the algebraic interior.

    Default directions: ``±e_i``, ``±1`` and ``n_random`` seeded Gaussian
    directions.
    """

    epsilon_grid: tuple = DEFAULT_GRID
    extra_directions: Optional[np.ndarray] = None
    n_random: int = 8
    seed: int = 0
    use_units: bool = True

    def __post_init__(self):
        g = tuple(float(e) for e in self.epsilon_grid)
        if not g or any(e <= 0 for e in g) or any(b >= a for a, b in zip(g, g[1:])):
            raise UsageError("epsilon grid must be positive and strictly decreasing")
        object.__setattr__(self, "epsilon_grid", g)

    def blocks(self, n: int) -> Iterator[np.ndarray]:
        rows = max(1, _CHUNK_ELEMS // n)
        if self.use_units:
            for sign in (1.0, -1.0):
                for lo in range(0, n, rows):
                    hi = min(n, lo + rows)
                    D = np.zeros((hi - lo, n))
                    D[np.arange(hi - lo), np.arange(lo, hi)] = sign
                    yield D
        extra = [np.ones((1, n)), -np.ones((1, n))]
        if self.n_random:
            extra.append(np.random.default_rng(self.seed).normal(size=(self.n_random, n)))
        if self.extra_directions is not None:
            extra.append(np.atleast_2d(np.asarray(self.extra_directions, dtype=float)))
        yield np.vstack(extra)


def in_interior(phi: Functional, f: Func, probe: Optional[DomainProbe] = None) -> bool:
    """Whether every probe direction admits a step on the grid that keeps phi finite."""
    _same_space(phi.space, f.space)
    probe = probe or DomainProbe()
    x = f.values
    if not math.isfinite(phi.values(x[None])[0]):
        return False
    for D in probe.blocks(x.size):
        pending = np.ones(D.shape[0], dtype=bool)
        for eps in probe.epsilon_grid:
            vals = phi.values(x + eps * D[pending])
            idx = np.flatnonzero(pending)
            pending[idx[np.isfinite(vals)]] = False
            if not pending.any():
                break
        if pending.any():
            return False
    return True


def difference_quotients(phi: Functional, f: Func, g: Func, grid: Sequence[float] = DEFAULT_GRID) -> np.ndarray:
    """``(phi(f + eps g) - phi(f)) / eps`` along the grid; ``inf`` where phi is infinite."""
    _same_space(phi.space, f.space)
    _same_space(f.space, g.space)
    base = phi.values(f.values[None])[0]
    if not math.isfinite(base):
        raise DomainError("phi(f) is infinite")
    eps = np.asarray(grid, dtype=float)
    vals = phi.values(f.values[None, :] + eps[:, None] * g.values[None, :])
    return (vals - base) / eps


def _eps_min(x: np.ndarray) -> float:
    return 2.0**-46 * max(1.0, float(np.abs(x).max()))


def _refine(phi, x, base, D, eps, q_prev, q_cur):
    """Keep halving below the grid floor for rows whose quotient still jumps.

    A kink closer to ``x`` than the floor makes successive quotients move by
    a non-shrinking amount; smooth rows shrink geometrically and stop at once.
    Rows stop as soon as the change drops to the rounding level of the step.
    """
    q = q_cur.copy()
    scale_ = max(1.0, abs(float(base)), float(np.abs(x).max())) * np.maximum(1.0, np.abs(D).max(axis=1))

    def noise(e):
        return 32.0 * np.finfo(float).eps * scale_ / e

    d_old = np.abs(q_cur - q_prev)
    active = (d_old > np.maximum(1e-9 * np.maximum(1.0, np.abs(q_cur)), noise(eps)))
    active &= np.isfinite(q_cur) & np.isfinite(q_prev)
    e = eps / 2.0
    lo = _eps_min(x)
    while active.any() and e >= lo:
        idx = np.flatnonzero(active)
        qn = (phi.values(x + e * D[idx]) - base) / e
        d_new = np.abs(qn - q[idx])
        settled = (d_new <= np.maximum(1e-9 * np.maximum(1.0, np.abs(qn)), noise(e)[idx]))
        settled |= (d_new <= 0.75 * d_old[idx]) | ~np.isfinite(qn)
        q[idx] = np.where(np.isfinite(qn), np.minimum(q[idx], qn), q[idx])
        d_old[idx] = d_new
        active[idx[settled]] = False
        e /= 2.0
    return q


def _bulk_quotients(phi: Functional, x: np.ndarray, base: float, D: np.ndarray, grid: Sequence[float], refine: bool):
    """Infimum over the grid of the difference quotients, one per row of ``D``.

    Convexity makes the quotients non-increasing as eps shrinks and makes the
    set of finite steps an interval containing 0, so the floor decides.
    """
    grid = tuple(grid)
    floor = grid[-1]
    q = (phi.values(x + floor * D) - base) / floor
    bad = ~np.isfinite(q)
    if bad.any():
        # not expected for convex phi; scan the rest of the grid for these rows
        for eps in reversed(grid[:-1]):
            idx = np.flatnonzero(bad)
            qe = (phi.values(x + eps * D[idx]) - base) / eps
            q[idx] = np.where(np.isfinite(qe), qe, q[idx])
            bad[idx] = ~np.isfinite(qe)
            if not bad.any():
                break
    if refine and len(grid) > 1:
        prev_eps = grid[-2]
        q_prev = (phi.values(x + prev_eps * D) - base) / prev_eps
        q_prev = np.where(np.isfinite(q_prev), q_prev, q)
        q = _refine(phi, x, base, D, floor, q_prev, q)
    return q


def directional_derivative(
    phi: Functional,
    f: Func,
    g: Func,
    grid: Sequence[float] = DEFAULT_GRID,
    refine: bool = True,
) -> float:
    """Infimum of the difference quotients of phi at f in direction g."""
    q = difference_quotients(phi, f, g, grid)
    finite = np.isfinite(q)
    if not finite.any():
        raise DomainError("phi(f + eps g) is infinite on the whole grid")
    best = float(q[finite].min())
    if refine and finite.sum() >= 2 and finite[-1] and finite[-2]:
        base = phi.values(f.values[None])[0]
        r = _refine(phi, f.values[None, :], base, g.values[None, :], grid[-1], q[-2:-1], q[-1:])
        best = min(best, float(r[0]))
    return best


def unit_directional_derivatives(
    phi: Functional,
    f: Func,
    sign: float = 1.0,
    grid: Sequence[float] = DEFAULT_GRID,
    refine: bool = True,
) -> np.ndarray:
    """``phi'(f; sign * e_i)`` for every label ``i``."""
    _same_space(phi.space, f.space)
    x = f.values
    base = phi.values(x[None])[0]
    if not math.isfinite(base):
        raise DomainError("phi(f) is infinite")
    n = x.size
    rows = max(1, _CHUNK_ELEMS // (3 * n))
    out = np.empty(n)
    for lo in range(0, n, rows):
        hi = min(n, lo + rows)
        D = np.zeros((hi - lo, n))
        D[np.arange(hi - lo), np.arange(lo, hi)] = sign
        out[lo:hi] = _bulk_quotients(phi, x, base, D, grid, refine)
    if not np.all(np.isfinite(out)):
        raise DomainError("some coordinate direction leaves the domain on the whole grid")
    return out


def _sample_finite(phi: Functional, rng: np.random.Generator, count: int, spread: float = 1.0) -> np.ndarray:
    """Random rows with finite phi, shifted down until finite (phi is increasing)."""
    F = rng.normal(scale=spread, size=(count, phi.space.size))
    for _ in range(60):
        bad = ~np.isfinite(phi.values(F))
        if not bad.any():
            return F
        F[bad] -= np.abs(F[bad]).max(axis=1, keepdims=True) + 1.0
    raise DomainError("could not find points of finite value")


def has_translation_property(
    phi: Functional,
    samples: Optional[Sequence[Func]] = None,
    shifts: Sequence[float] = (-1.0, 0.5, 2.0),
    tol: float = 1e-10,
    seed: int = 0,
) -> bool:
    """Sampled check of ``phi(f + m) = phi(f) + m``."""
    if samples is None:
        F = _sample_finite(phi, np.random.default_rng(seed), 16)
    else:
        F = np.stack([s.values for s in samples])
        for s in samples:
            _same_space(phi.space, s.space)
    base = phi.values(F)
    F = F[np.isfinite(base)]
    base = base[np.isfinite(base)]
    if F.shape[0] == 0:
        return False
    for m in shifts:
        shifted = phi.values(F + m)
        if not np.all(np.isfinite(shifted)):
            return False
        if np.abs(shifted - base - m).max() > tol:
            return False
    return True


def _random_points(phi: Functional, rng: np.random.Generator, count: int) -> np.ndarray:
    # downward offsets put a share of samples inside dom for indicator-type functionals
    F = rng.normal(size=(count, phi.space.size))
    return F - rng.uniform(0.0, 3.0, size=(count, 1))


def monotonicity_violations(phi: Functional, rng: np.random.Generator, n_pairs: int = 1000, tol: float = 1e-10) -> int:
    """Count sampled pairs ``f <= f + |h|`` with ``phi(f) > phi(f + |h|) + tol``."""
    F = _random_points(phi, rng, n_pairs)
    G = F + np.abs(rng.normal(size=F.shape)) * rng.uniform(0, 1, size=(n_pairs, 1))
    a, b = phi.values(F), phi.values(G)
    with np.errstate(invalid="ignore"):
        bad = np.isfinite(a) & (a > b + tol)
    return int(bad.sum())


def convexity_violations(phi: Functional, rng: np.random.Generator, n_triples: int = 1000, tol: float = 1e-10) -> int:
    """Count sampled ``(f, g, lam)`` breaking ``phi(lam f + (1-lam) g) <= lam phi(f) + (1-lam) phi(g)``."""
    F = _random_points(phi, rng, n_triples)
    G = _random_points(phi, rng, n_triples)
    lam = rng.uniform(0, 1, size=n_triples)
    mid = phi.values(lam[:, None] * F + (1 - lam)[:, None] * G)
    a, b = phi.values(F), phi.values(G)
    with np.errstate(invalid="ignore"):
        rhs = lam * a + (1 - lam) * b
        rhs = np.where(np.isnan(rhs), np.inf, rhs)
        bad = np.isfinite(mid) & (mid > rhs + tol * np.maximum(1.0, np.abs(mid)))
        bad |= ~np.isfinite(mid) & np.isfinite(rhs)
    return int(bad.sum())


def standard_catalog(space: Space, seed: int = 0) -> dict:
    """The reference functionals used throughout the verification suites."""
    rng = np.random.default_rng(seed)
    n = space.size
    p = rng.uniform(0.5, 1.5, size=n)
    ref = Measure(space, p / p.sum())
    nu = Measure(space, rng.uniform(0.0, 1.0, size=n))
    probs = rng.dirichlet(np.ones(n), size=3)
    wc = make_worst_case([(Measure(space, q), float(c)) for q, c in zip(probs, rng.uniform(0, 0.5, size=3))])
    ent = make_entropic(space, ref)
    return {
        "sup": make_sup_functional(space),
        "indicator_p": make_indicator_p(space),
        "entropic": ent,
        "linear": make_linear(nu),
        "worst_case": wc,
        "scaled_entropic": scale(ent, 2.0),
        "tilted_sup": add(make_sup_functional(space), make_linear(Measure(space, rng.uniform(0, 0.3, size=n)))),
    }
