"""Monotone-continuity checkers, mass escape on truncation ladders, tightness,
regularity and step-function approximation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_LADDER,
    DomainError,
    Func,
    Measure,
    Space,
    StructuralError,
    UsageError,
    _same_space,
    make_truncation_ladder,
    pairing,
)
from .duality import conjugate_value, subgradient, verify_maxrep
from .functional import DEFAULT_GRID, DomainProbe, Functional, in_interior, make_sup_functional

__all__ = [
    "MonotoneSequence",
    "ConditionVerdict",
    "EscapeDiagnostic",
    "AuditReport",
    "StepApproximation",
    "check_condition",
    "generate_sequences",
    "implication_audit",
    "mass_escape_diagnostic",
    "witness_gap",
    "tightness_check",
    "check_regular",
    "ladder_prefix_diagnostic",
    "step_approximation",
    "step_family",
    "step_inequality_check",
    "lower_regularization",
    "DEFAULT_RANK",
    "CONVERGENCE_TOL",
]

DEFAULT_RANK = 64
CONVERGENCE_TOL = 1e-8
CONDITIONS = ("i", "ii", "iii", "v", "vi")


@dataclass(frozen=True)
class MonotoneSequence:
    """Terms ``f^n`` (``n >= 1``) converging monotonically to ``target``."""

    target: Func
    term: Callable[[int], Func]
    direction: str
    label: str = ""

    def __post_init__(self):
        if self.direction not in ("up", "down"):
            raise UsageError(f"direction must be 'up' or 'down', got {self.direction!r}")

    def terms(self, rank: int):
        for n in range(1, rank + 1):
            yield self.term(n)

    def matrix(self, rank: int) -> np.ndarray:
        return np.vstack([t.values for t in self.terms(rank)])

    def validate(self, rank: int) -> np.ndarray:
        """Stack the first ``rank`` terms, raising StructuralError if they are not monotone and dominated."""
        T = self.matrix(rank)
        t = self.target.values
        if self.direction == "down":
            ok = np.all(np.diff(T, axis=0) <= 0) and np.all(T >= t)
        else:
            ok = np.all(np.diff(T, axis=0) >= 0) and np.all(T <= t)
        if not ok:
            raise StructuralError(f"sequence {self.label or '<anon>'} is not monotone {self.direction} to its target")
        return T

    def shifted(self, base: Func) -> "MonotoneSequence":
        """The same increments placed on top of another target."""
        off = base - self.target
        return MonotoneSequence(base, lambda n: self.term(n) + off, self.direction, self.label)

    @classmethod
    def harmonic(cls, target: Func, scale: float = 1.0, direction: str = "down") -> "MonotoneSequence":
        """``target ± (scale / n) * 1``."""
        s = abs(float(scale)) * (1.0 if direction == "down" else -1.0)
        return cls(target, lambda n: target + s / n, direction, f"harmonic(scale={abs(scale):g})")

    @classmethod
    def geometric(cls, target: Func, bump: Optional[Func] = None, direction: str = "down") -> "MonotoneSequence":
        """``target ± 2^-n * bump`` with a nonnegative bump (default all ones)."""
        h = np.ones(target.space.size) if bump is None else np.abs(bump.values)
        s = 1.0 if direction == "down" else -1.0
        return cls(target, lambda n: Func(target.space, target.values + s * 2.0**-n * h), direction, "geometric")

    @classmethod
    def truncation(cls, target: Func, bump: Optional[Func] = None, direction: str = "down") -> "MonotoneSequence":
        """``target ± bump`` off the prefix ``{1..n}``; equals the target from rank ``size`` on."""
        h = np.ones(target.space.size) if bump is None else np.abs(bump.values)
        s = 1.0 if direction == "down" else -1.0
        space = target.space

        def term(n):
            return Func(space, target.values + s * np.where(space.prefix_mask(n), 0.0, h))

        return cls(target, term, direction, "truncation")


@dataclass(frozen=True)
class ConditionVerdict:
    condition_id: str
    passed: bool
    witness_epsilon: Optional[float] = None
    trace: tuple = ()
    limit: float = math.nan
    detail: str = ""


def _converges(trace: np.ndarray, limit: float, direction: str, tol: float) -> bool:
    """Monotone trace whose last term, or its two-point extrapolation, sits within tol of the limit."""
    N = trace.size
    half, last = trace[N // 2 - 1], trace[-1]
    if not (math.isfinite(half) and math.isfinite(last)):
        return False
    with np.errstate(invalid="ignore"):
        steps = np.diff(trace)
    finite = np.isfinite(steps)
    if direction == "down":
        # an infinite head followed by finite values is still non-increasing
        mono = np.all(steps[finite] <= tol) and not np.any(np.isinf(trace[1:]) & np.isfinite(trace[:-1]))
    else:
        mono = np.all(steps[finite] >= -tol) and not np.any(np.isinf(trace))
    if not mono:
        return False
    return abs(last - limit) <= tol or abs(2.0 * last - half - limit) <= tol


def _trace(phi: Functional, T: np.ndarray) -> np.ndarray:
    return phi.values(T)


def _require_interior(phi: Functional, f: Func, probe: Optional[DomainProbe]):
    if not phi(f).is_finite:
        raise DomainError("phi is +inf at the target")
    if not in_interior(phi, f, probe):
        raise DomainError("target is not in the algebraic interior of dom phi")


def check_condition(
    phi: Functional,
    seq: MonotoneSequence,
    condition_id: str,
    base: Optional[Func] = None,
    rank: int = DEFAULT_RANK,
    tol: float = CONVERGENCE_TOL,
    grid: Sequence[float] = DEFAULT_GRID,
    n_candidates: int = 16,
    seed: int = 0,
    probe: Optional[DomainProbe] = None,
) -> ConditionVerdict:
    """Test one monotone-continuity condition of phi along ``seq`` up to ``rank``.

    ``ii``: ``phi(f^n)`` decreases to ``phi(f)`` for a down-sequence at an interior f.
    ``iii``: for a down-sequence to 0 and interior ``base``, some grid epsilon makes
    ``phi(base + eps f^n)`` decrease to ``phi(base)``; the first such epsilon is
    recorded.  ``vi``: ``phi(f^n)`` increases to ``phi(f)``.  ``i``: the increments
    of ``seq`` placed on some of ``n_candidates`` sampled interior points converge.
    ``v``: the max-representation certificate at ``base`` (or the target).
    A verdict is "no counterexample up to ``rank``", not a proof.
    """
    _same_space(phi.space, seq.target.space)
    if condition_id not in CONDITIONS:
        raise UsageError(f"unknown condition {condition_id!r}; expected one of {CONDITIONS}")
    if rank < 2:
        raise UsageError("rank must be at least 2")
    need = "up" if condition_id == "vi" else "down"
    if condition_id != "v" and seq.direction != need:
        raise UsageError(f"condition {condition_id} needs a '{need}' sequence")

    if condition_id == "v":
        f = base if base is not None else seq.target
        _require_interior(phi, f, probe)
        rep = verify_maxrep(phi, f, seed=seed, probe=probe)
        return ConditionVerdict("v", rep.certified, None, (float(rep.lhs), float(rep.rhs)), float(rep.lhs),
                                f"gap={rep.gap:.3e}")

    T = seq.validate(rank)

    if condition_id in ("ii", "vi"):
        _require_interior(phi, seq.target, probe)
        limit = float(phi(seq.target))
        tr = _trace(phi, T)
        return ConditionVerdict(condition_id, _converges(tr, limit, seq.direction, tol), None, tuple(tr), limit)

    if condition_id == "iii":
        if base is None:
            raise UsageError("condition iii needs an interior base point")
        if np.any(seq.target.values != 0):
            raise UsageError("condition iii needs a sequence decreasing to 0")
        _require_interior(phi, base, probe)
        limit = float(phi(base))
        last = None
        for eps in grid:
            tr = _trace(phi, base.values + eps * T)
            last = tr
            if _converges(tr, limit, "down", tol):
                return ConditionVerdict("iii", True, float(eps), tuple(tr), limit)
        return ConditionVerdict("iii", False, None, tuple(last), limit, "no grid epsilon works")

    # condition i: one good interior point suffices
    rng = np.random.default_rng(seed)
    cands = [seq.target] if base is None else [base, seq.target]
    n = phi.space.size
    while len(cands) < n_candidates:
        cands.append(Func(phi.space, rng.normal(size=n) - 1.0 - 2.0 * len(cands) / n_candidates))
    tr = ()
    for k, c in enumerate(cands):
        if not (phi(c).is_finite and in_interior(phi, c, probe)):
            continue
        shifted = seq.shifted(c)
        tr = _trace(phi, shifted.matrix(rank))
        limit = float(phi(c))
        if _converges(tr, limit, "down", tol):
            return ConditionVerdict("i", True, None, tuple(tr), limit, f"candidate {k}")
    return ConditionVerdict("i", False, None, tuple(tr), math.nan, "no sampled interior point works")


@dataclass(frozen=True)
class AuditReport:
    cases: tuple
    per_functional: dict
    violations: tuple

    @property
    def consistent(self) -> bool:
        return not self.violations


def generate_sequences(space: Space, count: int, rng: np.random.Generator, direction: str = "down") -> list:
    """Random sequences decreasing to 0 (or increasing to 0): harmonic, geometric and truncation shapes."""
    out = []
    zero = Func.constant(space, 0.0)
    for k in range(count):
        bump = Func(space, np.abs(rng.normal(size=space.size)) + 0.05)
        kind = k % 3
        if kind == 0:
            out.append(MonotoneSequence.harmonic(zero, rng.uniform(0.1, 2.0), direction))
        elif kind == 1:
            out.append(MonotoneSequence.geometric(zero, bump, direction))
        else:
            out.append(MonotoneSequence.truncation(zero, bump, direction))
    return out


def implication_audit(
    catalog: dict,
    n_sequences: int = 100,
    seed: int = 0,
    rank: int = DEFAULT_RANK,
    tol: float = CONVERGENCE_TOL,
    extra_cases: Sequence = (),
) -> AuditReport:
    """Run (ii), (iii) and (vi) over generated sequences and look for broken implications.

    A functional that passes every (ii) case must pass every (iii) case, and one
    passing every (iii) case must pass every (vi) case.  ``extra_cases`` holds
    ``(name, condition_id, sequence, base)`` tuples added to the tally.
    """
    rng = np.random.default_rng(seed)
    names = sorted(catalog)
    cases = []
    for j in range(n_sequences):
        name = names[j % len(names)]
        phi = catalog[name]
        space = phi.space
        base = Func(space, rng.uniform(-3.0, -0.5, size=space.size))
        down = generate_sequences(space, 1, rng, "down")[0]
        # reuse the same increment shape for the up-sequence
        up = MonotoneSequence(down.target, lambda n, d=down: -d.term(n), "up", down.label)
        res = {
            "ii": check_condition(phi, down.shifted(base), "ii", rank=rank, tol=tol),
            "iii": check_condition(phi, down, "iii", base=base, rank=rank, tol=tol),
            "vi": check_condition(phi, up.shifted(base), "vi", rank=rank, tol=tol),
        }
        cases.append({"case": j, "functional": name, "sequence": down.label,
                      **{c: v.passed for c, v in res.items()}})
    for name, cid, seq, base in extra_cases:
        v = check_condition(catalog[name], seq, cid, base=base, rank=rank, tol=tol)
        cases.append({"case": len(cases), "functional": name, "sequence": seq.label, cid: v.passed})

    per = {}
    for name in names:
        mine = [c for c in cases if c["functional"] == name]
        per[name] = {cid: all(c[cid] for c in mine if cid in c) for cid in ("ii", "iii", "vi")}
    violations = []
    for name, ok in per.items():
        if ok["ii"] and not ok["iii"]:
            violations.append((name, "ii", "iii"))
        if ok["iii"] and not ok["vi"]:
            violations.append((name, "iii", "vi"))
    return AuditReport(tuple(cases), per, tuple(violations))


# ------------------------------------------------------------------ escape and regularity


@dataclass(frozen=True)
class EscapeDiagnostic:
    ladder: tuple
    per_rung_witness: tuple
    mass_on_prefix: np.ndarray
    escape_detected: bool
    witness_labels: tuple = ()
    label: str = "escape stand-in"


def _default_profile(m: np.ndarray) -> np.ndarray:
    return 1.0 - 1.0 / m


def ladder_prefix_diagnostic(measures: Sequence[Measure], sizes: Optional[Sequence[int]] = None) -> EscapeDiagnostic:
    """Prefix masses ``M[k][j] = mu_k({1..sizes[j]})`` for one measure per ladder rung.

    Escape is flagged when the top rung puts no mass on ``{1..K/2}``.
    """
    if not measures:
        raise UsageError("need at least one measure")
    ladder = tuple(m.space for m in measures)
    sizes = [s.size for s in ladder] if sizes is None else list(sizes)
    M = np.array([[mu.prefix_mass(s) for s in sizes] for mu in measures])
    top = measures[-1]
    escaped = top.mass > 0 and top.prefix_mass(top.space.size // 2) == 0.0
    labels = tuple(int(np.argmax(mu.weights)) + 1 if mu.mass > 0 else 0 for mu in measures)
    return EscapeDiagnostic(ladder, tuple(measures), M, bool(escaped), labels)


def mass_escape_diagnostic(
    recipe: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ladder: Optional[Sequence[Space]] = None,
) -> EscapeDiagnostic:
    """Sup-functional witnesses of an increasing profile on every ladder rung.

    For a profile that never attains its supremum the witness on each rung is
    the Dirac at the rung's last label, so its mass leaves every fixed prefix.
    """
    recipe = recipe or _default_profile
    ladder = list(ladder) if ladder is not None else make_truncation_ladder(DEFAULT_LADDER)
    top = Func.from_recipe(ladder[-1], recipe)
    if np.any(np.diff(top.values) < 0):
        raise UsageError("profile must be non-decreasing")
    witnesses = []
    for space in ladder:
        f = Func.from_recipe(space, recipe)
        witnesses.append(subgradient(make_sup_functional(space), f))
    return ladder_prefix_diagnostic(witnesses)


def witness_gap(phi: Functional, f: Func, mu: Measure) -> float:
    """``phi(f) - (<f, mu> - phi*(mu))``; zero exactly when mu is a maximizing measure."""
    c = conjugate_value(phi, mu)
    if not c.is_finite:
        return math.inf
    return float(phi(f).value - (pairing(f, mu) - c.value))


def tightness_check(
    phi: Functional,
    M: float = 2.0,
    ladder: Optional[Sequence] = None,
    tol: float = 1e-6,
) -> ConditionVerdict:
    """Trace ``phi(M * 1 off {1..m})`` over proper prefixes m and test its decrease to ``phi(0)``."""
    if not M >= 1:
        raise UsageError("M must be at least 1")
    space = phi.space
    zero = phi(Func.constant(space, 0.0))
    if not zero.is_finite:
        raise DomainError("phi(0) is +inf")
    if ladder is None:
        sizes = list(space.compact_family)
    else:
        sizes = [s.size if isinstance(s, Space) else int(s) for s in ladder]
    sizes = [m for m in sizes if m < space.size]
    if not sizes:
        raise UsageError("no proper prefix to test")
    T = np.vstack([np.where(space.prefix_mask(m), 0.0, float(M)) for m in sizes])
    tr = phi.values(T)
    with np.errstate(invalid="ignore"):
        mono = bool(np.all(np.isfinite(tr)) and np.all(np.diff(tr) <= 1e-12))
    passed = mono and tr[-1] - zero.value <= tol
    return ConditionVerdict("tightness", bool(passed), None, tuple(tr), zero.value, f"M={M:g}")


def check_regular(
    mu: Measure,
    family: Optional[Sequence[int]] = None,
    tol: float = 1e-10,
    n_subsets: int = 32,
    seed: int = 0,
) -> bool:
    """Inner regularity against prefix compacts ``{1..m}`` for m in ``family``.

    Requires ``sup_m mu({1..m}) >= mu(Omega) - tol`` and, for ``n_subsets``
    random subsets A, ``sup_m mu(A ∩ {1..m}) >= mu(A) - tol``.
    """
    sizes = list(mu.space.compact_family if family is None else family)
    if not sizes:
        raise UsageError("empty compact family")
    if max(mu.prefix_mass(m) for m in sizes) < mu.mass - tol:
        return False
    rng = np.random.default_rng(seed)
    top = max(sizes)
    inner = mu.space.prefix_mask(top)
    for _ in range(n_subsets):
        A = rng.random(mu.space.size) < 0.5
        if mu.of_mask(A & inner) < mu.of_mask(A) - tol:
            return False
    return True


# ------------------------------------------------------------------ step functions


class StepApproximation(NamedTuple):
    partition: tuple
    levels: np.ndarray
    g: Func


def step_approximation(f: Func, delta: float) -> StepApproximation:
    """Step function ``g = sum_m a_m 1_{A_m}`` with ``g <= f <= g + delta`` exactly.

    Levels start at ``min f`` and are spaced by ``delta``; ``floor(range / delta) + 1``
    of them are used.  Cells ``A_m = {a_m <= f < a_m + delta}`` are returned as
    arrays of labels.
    """
    delta = float(delta)
    if not delta > 0 or not math.isfinite(delta):
        raise UsageError("delta must be positive and finite")
    v = f.values
    lo, hi = float(v.min()), float(v.max())
    count = int(math.floor((hi - lo) / delta)) + 1
    # sequential accumulation, so each level is exactly the previous one plus delta
    a = np.add.accumulate(np.concatenate([[lo], np.full(count - 1, delta)]))
    while hi > a[-1] + delta:
        a = np.append(a, a[-1] + delta)
    cell = np.searchsorted(a, v, side="right") - 1
    g = a[cell]
    order = np.argsort(cell, kind="stable")
    cuts = np.searchsorted(cell[order], np.arange(1, a.size))
    partition = tuple(np.split(order + 1, cuts))
    return StepApproximation(partition, a, Func(f.space, g))


def step_family(f: Func, exponents: Sequence[int] = range(11)) -> list:
    """Step approximations of f at ``delta = 2^-j``."""
    return [step_approximation(f, 2.0**-j).g for j in exponents]


def step_inequality_check(f: Func, mu: Measure, delta: float) -> bool:
    """``<f, mu> <= <h, mu> + delta (mu(Omega) + 1)`` with h the step approximation of f."""
    _same_space(f.space, mu.space)
    h = step_approximation(f, delta).g
    return pairing(f, mu) <= pairing(h, mu) + delta * (mu.mass + 1.0)


def lower_regularization(
    phi: Functional, f: Func, test_family: Sequence[Func], include_self: bool = False
) -> float:
    """``max {phi(g) : g in test_family, g <= f}``; ``-inf`` when nothing is admissible."""
    if len(test_family) == 0:
        raise UsageError("test family is empty")
    admissible = [g for g in test_family if g.le(f)]
    if include_self:
        admissible.append(f)
    if not admissible:
        return -math.inf
    return float(np.max(phi.values(np.vstack([g.values for g in admissible]))))
