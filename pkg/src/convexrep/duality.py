"""Convex conjugates, subgradient witnesses and max-representation certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .core import (
    INF,
    CertificationError,
    DegenerateError,
    DomainError,
    ExtReal,
    Func,
    Measure,
    UsageError,
    _same_space,
    pairing,
)
from .functional import (
    NEG_TOL,
    DomainProbe,
    Functional,
    _weights,
    directional_derivative,
    has_translation_property,
    in_interior,
    unit_directional_derivatives,
)

__all__ = [
    "ConjugateResult",
    "RepresentationReport",
    "conjugate",
    "conjugate_value",
    "subgradient",
    "verify_maxrep",
    "dual_value_grid",
    "probability_mass_check",
    "fenchel_young_violations",
    "sample_measures",
]


@dataclass(frozen=True)
class ConjugateResult:
    value: ExtReal
    maximizer: Optional[Func]
    diverged: bool
    box_radius_used: float
    history: tuple = ()
    reason: str = ""


@dataclass(frozen=True)
class RepresentationReport:
    lhs: ExtReal
    rhs: ExtReal
    gap: float
    witness: Measure
    fenchel_young_violations: int
    fenchel_young_samples: int
    conjugate_route: str
    certified: bool


def _ascend(phi: Functional, w: np.ndarray, X: np.ndarray, R: float, max_iter: int, tol: float, check_every: int = 100):
    """Projected supergradient ascent of ``<x, w> - phi(x)`` on ``[-R, R]^n``.

    Runs all rows of ``X`` in lockstep and returns the best value and point seen.
    """
    X = np.clip(X, -R, R)
    best = X @ w - phi.values(X)
    bestX = X.copy()
    mark = best.max()
    for k in range(1, max_iter + 1):
        G = w - phi.subgradients(X)
        step = (R / k) / np.maximum(1.0, np.abs(G).max(axis=1, keepdims=True))
        Xn = np.clip(X + step * G, -R, R)
        pv = phi.values(Xn)
        bad = ~np.isfinite(pv)
        t = 1.0
        while bad.any() and t > 2.0**-40:
            t /= 2.0
            Xn[bad] = np.clip(X[bad] + t * step[bad] * G[bad], -R, R)
            pv[bad] = phi.values(Xn[bad])
            bad = ~np.isfinite(pv)
        if bad.any():
            Xn[bad] = X[bad]
            pv[bad] = phi.values(X[bad])
        X = Xn
        v = X @ w - pv
        up = v > best
        best[up] = v[up]
        bestX[up] = X[up]
        if k % check_every == 0:
            top = best.max()
            if top - mark <= tol * max(1.0, abs(top)):
                break
            mark = top
    j = int(np.argmax(best))
    return float(best[j]), bestX[j].copy(), bestX


def _polish(phi: Functional, w: np.ndarray, x0: np.ndarray, R: float, max_cuts: int = 100, tol: float = 1e-11,
            seeds: Optional[np.ndarray] = None):
    """Refine an ascent point: L-BFGS-B on the box, then Kelley cutting planes.

    Returns the best value, its point, and the cutting-plane upper bound on the
    box (``inf`` if the cutting planes could not run).
    """
    n = w.size

    def value(x):
        v = phi.values(x[None])[0]
        return float(x @ w - v) if math.isfinite(v) else -math.inf

    best_x = x0.copy()
    best_v = value(best_x)

    def neg(x):
        v = phi.values(x[None])[0]
        if not math.isfinite(v):
            return 1e300, np.zeros(n)
        return -(x @ w - v), -(w - phi.subgradients(x[None])[0])

    try:
        res = minimize(neg, best_x, jac=True, method="L-BFGS-B", bounds=[(-R, R)] * n,
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
        cand = np.clip(res.x, -R, R)
        if value(cand) > best_v:
            best_v, best_x = value(cand), cand
    except (ValueError, FloatingPointError):
        pass

    # Kelley: cuts t >= phi(x_k) + <g_k, y - x_k> bound phi from below, so the LP optimum bounds us from above
    cuts, rhs = [], []
    if seeds is not None:
        S = np.atleast_2d(seeds)
        fs = phi.values(S)
        S, fs = S[np.isfinite(fs)], fs[np.isfinite(fs)]
        if S.shape[0]:
            G = phi.subgradients(S)
            cuts.extend(np.hstack([G, -np.ones((S.shape[0], 1))]))
            rhs.extend(np.einsum("ij,ij->i", G, S) - fs)
    x = best_x
    upper = math.inf
    c = np.append(-w, 1.0)
    bounds = [(-R, R)] * n + [(None, None)]
    for _ in range(max_cuts):
        fx = phi.values(x[None])[0]
        if not math.isfinite(fx):
            upper = math.inf
            break
        g = phi.subgradients(x[None])[0]
        cuts.append(np.append(g, -1.0))
        rhs.append(float(g @ x - fx))
        lp = linprog(c, A_ub=np.array(cuts), b_ub=np.array(rhs), bounds=bounds, method="highs")
        if lp.status != 0:
            upper = math.inf
            break
        upper = -float(lp.fun)
        x = np.clip(lp.x[:n], -R, R)
        vx = value(x)
        if vx > best_v:
            best_v, best_x = vx, x
        if upper - best_v <= tol * max(1.0, abs(best_v)):
            break
    return best_v, best_x, upper


def _into_domain(phi: Functional, X: np.ndarray) -> np.ndarray:
    # phi is increasing: pushing a row down can only lower its value
    X = X.copy()
    for _ in range(60):
        bad = ~np.isfinite(phi.values(X))
        if not bad.any():
            break
        X[bad] -= np.abs(X[bad]).max(axis=1, keepdims=True) + 1.0
    return X[np.isfinite(phi.values(X))]


def _still_growing(history: list, growth: float) -> bool:
    """Whether the best values over doubling radii still look unbounded.

    Each increment must stay above a noise floor, and every consecutive pair
    must either both exceed ``growth`` or grow by half again (an increment that
    doubles with the radius is the signature of a positive recession slope).
    """
    h = np.asarray(history, dtype=float)
    d = np.diff(h)
    floor = 1e-9 * max(1.0, float(np.abs(h).max()))
    if d.size == 0 or np.any(d <= floor):
        return False
    for a, b in zip(d, d[1:]):
        if not (min(a, b) > growth or b >= 1.5 * a):
            return False
    return True


def conjugate(
    phi: Functional,
    mu,
    box_radius: float = 8.0,
    tol: float = 1e-10,
    seed: int = 0,
    max_iter: int = 10_000,
    doublings: int = 6,
    growth: float = 1.0,
    restarts: int = 4,
    polish: bool = True,
) -> ConjugateResult:
    """Numerical conjugate ``sup_f <f, mu> - phi(f)`` by boxed supergradient ascent.

    The box radius doubles up to ``doublings`` times; the value is declared
    ``+inf`` when the best objective keeps growing at every doubling, either by
    more than ``growth`` or in proportion to the radius.  The ascent
    result on each box is polished by L-BFGS-B and Kelley cutting planes.  Signed weight vectors are accepted: a negative coordinate makes
    the conjugate of an increasing functional infinite.
    """
    if not box_radius > 0:
        raise UsageError("box_radius must be positive")
    w = _weights(mu, phi.space)
    if np.any(w < -NEG_TOL):
        return ConjugateResult(INF, None, True, float(box_radius), (), "negative weight")
    n = phi.space.size
    rng = np.random.default_rng(seed)
    R = float(box_radius)
    starts = np.vstack([np.zeros((1, n)), rng.uniform(-R / 2, R / 2, size=(restarts, n))])
    starts = _into_domain(phi, starts)
    ones = np.ones((1, n))

    best_val, best_x = -math.inf, None
    history = []
    for level in range(doublings + 1):
        cand = [np.clip(starts, -R, R), R * ones, -R * ones]
        if best_x is not None:
            cand.append(best_x[None, :])
        X0 = _into_domain(phi, np.vstack(cand))
        if X0.shape[0] == 0:
            if best_x is None:
                raise DegenerateError("phi is +inf at every tested point")
        else:
            v, x, rows = _ascend(phi, w, X0, R, max_iter, tol)
            if polish:
                pv, px, _ = _polish(phi, w, x, R, seeds=np.vstack([X0, rows]))
                if pv > v:
                    v, x = pv, px
            if v > best_val:
                best_val, best_x = v, x
        history.append(best_val)
        if level > 0 and not _still_growing(history, growth):
            break
        if level < doublings:
            R *= 2.0
    if best_x is None:
        raise DegenerateError("phi is +inf at every tested point")
    if len(history) == doublings + 1 and _still_growing(history, growth):
        return ConjugateResult(INF, None, True, R, tuple(history), "unbounded growth across box doublings")
    return ConjugateResult(ExtReal(best_val), Func(phi.space, best_x), False, R, tuple(history))


def conjugate_value(phi: Functional, mu, **kwargs) -> ExtReal:
    """Exact conjugate when phi carries one, otherwise the ascent estimate."""
    exact = phi.closed_form_conjugate(mu)
    if exact is not None:
        return exact
    return conjugate(phi, mu, **kwargs).value


def subgradient(
    phi: Functional,
    f: Func,
    probe: Optional[DomainProbe] = None,
    point_tol: float = 1e-6,
    eta: float = 1e-4,
) -> Measure:
    """A measure in the subdifferential of phi at f built from directional derivatives.

    Coordinate ``i`` is confined to ``[-phi'(f; -e_i), phi'(f; e_i)]``.  Where
    these intervals are not points, f is nudged up along a weight that is
    largest on the lowest label, which selects the lowest-index extreme
    subgradient of a polyhedral phi.  The total mass is then pulled into
    ``[-phi'(f; -1), phi'(f; 1)]``.
    """
    _same_space(phi.space, f.space)
    probe = probe or DomainProbe()
    if not in_interior(phi, f, probe):
        raise DomainError("f is not in the algebraic interior of dom phi")
    grid = probe.epsilon_grid
    n = phi.space.size

    def intervals(g: Func):
        hi = unit_directional_derivatives(phi, g, 1.0, grid)
        lo = -unit_directional_derivatives(phi, g, -1.0, grid)
        return lo, hi

    lo0, hi0 = intervals(f)
    lo, hi = lo0, hi0
    x = f
    rough = (hi - lo) > point_tol * np.maximum(1.0, np.abs(hi))
    if rough.any():
        idx = np.flatnonzero(rough)
        bump = np.zeros(n)
        bump[idx] = (idx.size - np.arange(idx.size)) / idx.size
        h = eta * max(1.0, f.sup_norm())
        for _ in range(6):
            try:
                x = f + Func(phi.space, h * bump)
                lo, hi = intervals(x)
            except DomainError:
                x, lo, hi = f, lo0, hi0
            if not np.any((hi - lo) > point_tol * np.maximum(1.0, np.abs(hi))):
                break
            h /= 4.0
    still = (hi - lo) > point_tol * np.maximum(1.0, np.abs(hi))
    mu = np.where(still, lo, 0.5 * (lo + hi))
    if phi.gradient is not None and not still.any():
        # differentiable at the (nudged) point: snap to the exact gradient when the quotients confirm it
        exact = phi.gradient(x.values[None])[0]
        if np.all(np.abs(exact - mu) <= point_tol * np.maximum(1.0, np.abs(mu))):
            return Measure(phi.space, np.clip(exact, 0.0, None))
    mu = np.clip(mu, np.minimum(lo0, hi0), np.maximum(lo0, hi0))

    one = Func.constant(phi.space, 1.0)

    total_hi = directional_derivative(phi, f, one, grid)
    total_lo = -directional_derivative(phi, f, -one, grid)
    if still.any():
        # greedy fill from the lowest label up to the lower end of the total-mass interval
        need = total_lo - mu.sum()
        for i in np.flatnonzero(still):
            if need <= 0:
                break
            add = min(need, hi0[i] - mu[i])
            mu[i] += add
            need -= add
    s = mu.sum()
    if s > total_hi and s > 0:
        mu *= total_hi / s
    elif s < total_lo and s > 0:
        mu *= total_lo / s
    return Measure(phi.space, np.clip(mu, 0.0, None))


def sample_measures(rng: np.random.Generator, n: int, count: int, anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """Random nonnegative weight rows: probability vectors, free-mass vectors and anchor mixtures."""
    k = count // 3
    probs = rng.dirichlet(np.ones(n), size=k)
    free = rng.dirichlet(np.ones(n), size=k) * rng.uniform(0.0, 2.0, size=(k, 1))
    rest = count - 2 * k
    mix = rng.dirichlet(np.ones(n), size=rest)
    if anchor is not None:
        t = rng.uniform(0.0, 1.0, size=(rest, 1))
        mix = (1 - t) * anchor[None, :] + t * mix * max(anchor.sum(), 1e-12)
    return np.vstack([probs, free, mix])


def fenchel_young_violations(phi: Functional, f: Func, weights: np.ndarray, tol: float = 1e-9) -> int:
    """Count rows ``mu`` with ``<f, mu> > phi(f) + phi*(mu) + tol`` (exact conjugate required)."""
    if phi.conjugate is None:
        raise UsageError("Fenchel-Young sampling needs an exact conjugate")
    val = phi.values(f.values[None])[0]
    bad = 0
    for w in weights:
        c = phi.conjugate(w)
        if math.isfinite(val) and math.isfinite(c) and f.values @ w > val + c + tol:
            bad += 1
    return bad


def verify_maxrep(
    phi: Functional,
    f: Func,
    tol: float = 1e-6,
    n_samples: int = 1000,
    seed: int = 0,
    probe: Optional[DomainProbe] = None,
) -> RepresentationReport:
    """Certify ``phi(f) = <f, mu> - phi*(mu)`` at the subgradient witness.

    Also samples ``n_samples`` measures and counts Fenchel-Young violations
    when phi carries an exact conjugate.
    """
    lhs = phi(f)
    witness = subgradient(phi, f, probe)
    route = "closed" if phi.conjugate is not None else "ascent"
    conj = conjugate_value(phi, witness, box_radius=8.0 * max(1.0, f.sup_norm()), seed=seed)
    diag = {"lhs": float(lhs), "witness": witness.weights.tolist(), "route": route}
    if not conj.is_finite:
        raise CertificationError("conjugate diverges at the subgradient witness", diag)
    rhs = ExtReal(pairing(f, witness) - conj.value)
    gap = float(lhs.value - rhs.value)
    violations, used = 0, 0
    if route == "closed" and n_samples > 0:
        rng = np.random.default_rng(seed)
        W = sample_measures(rng, phi.space.size, n_samples, witness.weights)
        violations, used = fenchel_young_violations(phi, f, W), W.shape[0]
    return RepresentationReport(
        lhs, rhs, gap, witness, violations, used, route, abs(gap) <= tol and violations == 0
    )


def dual_value_grid(phi: Functional, f: Func, samples: Sequence) -> float:
    """``max_mu <f, mu> - phi*(mu)`` over sample measures; a lower bound for phi(f)."""
    if len(samples) == 0:
        raise UsageError("dual_value_grid needs at least one sample")
    best = -math.inf
    for mu in samples:
        w = _weights(mu, phi.space)
        if np.any(w < 0):
            raise UsageError("sample measures must be nonnegative")
        c = conjugate_value(phi, w)
        if c.is_finite:
            best = max(best, float(f.values @ w) - c.value)
    return best


def probability_mass_check(phi: Functional, f: Func, tol: float = 1e-8, **kwargs) -> bool:
    """Whether the max-representation witness at f is a probability measure."""
    ti = phi.translation_invariant
    if ti is None:
        ti = has_translation_property(phi)
    if not ti:
        raise UsageError("probability_mass_check requires the translation property")
    report = verify_maxrep(phi, f, **kwargs)
    return abs(report.witness.mass - 1.0) <= tol
