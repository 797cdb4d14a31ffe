import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from convexrep.core import INF, DomainError, Func, Measure, Space, UsageError, dirac, uniform_measure
from convexrep.functional import (
    DEFAULT_GRID,
    DomainProbe,
    add,
    convexity_violations,
    difference_quotients,
    directional_derivative,
    evaluate,
    has_translation_property,
    in_interior,
    make_entropic,
    make_indicator_p,
    make_linear,
    make_sup_functional,
    make_worst_case,
    monotonicity_violations,
    pointwise_max,
    scale,
    standard_catalog,
    unit_directional_derivatives,
)

CATALOG = standard_catalog(Space(8), seed=0)


def entropic_oracle(p, f):
    # plain-python log-sum-exp with a max shift
    m = max(f)
    return m + math.log(sum(pi * math.exp(fi - m) for pi, fi in zip(p, f)))


# ---------------------------------------------------------------- catalog values


def test_sup_values():
    s = Space(3)
    phi = make_sup_functional(s)
    assert phi(Func(s, [1, 2, 3])) == 3.0
    assert phi(Func.constant(s, -4.5)) == -4.5
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = rng.normal(size=3)
        best = f[0]
        for v in f[1:]:
            if v > best:
                best = v
        assert phi(Func(s, f)) == best


def test_indicator_values():
    s = Space(2)
    p = make_indicator_p(s)
    assert p(Func(s, [-1, -2])) == 0.0
    assert p(Func(s, [0, 0])) == 0.0
    assert p(Func(s, [-1, 0.1])) == INF
    assert evaluate(p, Func(s, [1, 1])) == INF


def test_entropic_values():
    s = Space(2)
    phi = make_entropic(s, uniform_measure(s))
    assert float(phi(Func(s, [0.0, math.log(3.0)]))) == pytest.approx(math.log(2.0), abs=1e-15)
    assert float(phi(Func.constant(s, 1.7))) == pytest.approx(1.7, abs=1e-14)
    rng = np.random.default_rng(2)
    big = Space(6)
    p = rng.dirichlet(np.ones(6))
    phi = make_entropic(big, Measure(big, p))
    for _ in range(50):
        f = rng.normal(scale=5, size=6)
        assert float(phi(Func(big, f))) == pytest.approx(entropic_oracle(p, f), abs=1e-12)


def test_entropic_rejects_bad_reference():
    s = Space(2)
    with pytest.raises(UsageError):
        make_entropic(s, Measure(s, [1.0, 0.0]))
    with pytest.raises(UsageError):
        make_entropic(s, Measure(s, [0.7, 0.7]))


def test_linear_and_worst_case_values():
    s = Space(2)
    assert make_worst_case([(dirac(s, 1), 0.0), (dirac(s, 2), 0.0)])(Func(s, [5, 7])) == 7.0
    nu = Measure(s, [0.3, 2.0])
    f = Func(s, [1.5, -1.0])
    assert make_linear(nu)(f) == pytest.approx(0.3 * 1.5 - 2.0)
    with pytest.raises(UsageError):
        make_worst_case([])
    with pytest.raises(UsageError):
        make_worst_case([(dirac(s, 1), math.inf)])


def test_evaluate_is_deterministic_and_checks_space():
    phi = CATALOG["entropic"]
    f = Func(Space(8), np.linspace(-1, 1, 8))
    assert phi(f) == phi(f)
    with pytest.raises(UsageError):
        phi(Func(Space(3), [0, 0, 0]))


def test_combinators():
    s = Space(3)
    sup = make_sup_functional(s)
    ent = make_entropic(s, uniform_measure(s))
    f = Func(s, [0.2, -1.0, 0.4])
    assert float(scale(ent, 3.0)(f)) == pytest.approx(3.0 * float(ent(f)))
    assert float(add(sup, ent)(f)) == pytest.approx(0.4 + float(ent(f)))
    assert float(pointwise_max(sup, ent)(f)) == pytest.approx(max(0.4, float(ent(f))))
    with pytest.raises(UsageError):
        scale(ent, 0.0)
    with pytest.raises(UsageError):
        add()


# ---------------------------------------------------------------- sampled structure


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_is_monotone(name):
    assert monotonicity_violations(CATALOG[name], np.random.default_rng(1), 1000, 1e-10) == 0


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_is_convex(name):
    assert convexity_violations(CATALOG[name], np.random.default_rng(2), 1000, 1e-10) == 0


def test_violation_counters_catch_bad_functionals():
    s = Space(4)
    from convexrep.functional import Functional

    concave = Functional(s, "sup", lambda F: -np.log(np.exp(-F).sum(axis=1)))
    decreasing = Functional(s, "sup", lambda F: -F.sum(axis=1))
    assert convexity_violations(concave, np.random.default_rng(0), 200) > 0
    assert monotonicity_violations(decreasing, np.random.default_rng(0), 200) > 0


def test_translation_property():
    s = Space(5)
    rng = np.random.default_rng(4)
    assert has_translation_property(make_entropic(s, Measure(s, rng.dirichlet(np.ones(5)))))
    assert has_translation_property(make_sup_functional(s))
    assert not has_translation_property(make_linear(Measure(s, np.full(5, 0.4))))
    assert not has_translation_property(make_indicator_p(s))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_translation_metadata_agrees_with_probe(name):
    phi = CATALOG[name]
    if phi.translation_invariant is not None:
        assert has_translation_property(phi) == phi.translation_invariant


# ---------------------------------------------------------------- interior


def test_interior_examples():
    s = Space(2)
    p = make_indicator_p(s)
    assert in_interior(p, Func(s, [-1, -1]))
    assert not in_interior(p, Func(s, [0, -1]))
    assert not in_interior(p, Func(s, [1, -1]))
    ent = make_entropic(s, uniform_measure(s))
    assert in_interior(ent, Func(s, [30.0, -12.0]))


def test_interior_uses_the_whole_grid():
    s = Space(2)
    p = make_indicator_p(s)
    f = Func(s, [-2.0**-19, -1.0])
    assert in_interior(p, f)
    assert not in_interior(p, f, DomainProbe(epsilon_grid=(1.0, 0.5)))


def test_probe_validates_grid():
    with pytest.raises(UsageError):
        DomainProbe(epsilon_grid=(0.5, 1.0))
    with pytest.raises(UsageError):
        DomainProbe(epsilon_grid=(1.0, 0.0))


# ---------------------------------------------------------------- directional derivatives


def test_directional_derivative_linear():
    rng = np.random.default_rng(5)
    s = Space(6)
    nu = Measure(s, rng.uniform(size=6))
    phi = make_linear(nu)
    for _ in range(10):
        f, g = Func(s, rng.normal(size=6)), Func(s, rng.normal(size=6))
        assert directional_derivative(phi, f, g) == pytest.approx(float(g.values @ nu.weights), abs=1e-9)


def test_directional_derivative_sup_off_argmax():
    s = Space(2)
    phi = make_sup_functional(s)
    assert directional_derivative(phi, Func(s, [0, 1]), Func(s, [1, 0])) == 0.0
    assert directional_derivative(phi, Func(s, [1, 1]), Func(s, [1, 0])) == pytest.approx(1.0)
    assert directional_derivative(phi, Func(s, [1, 1]), Func(s, [-1, 0])) == pytest.approx(0.0)


def test_directional_derivative_resolves_close_kinks():
    # the tie gap is far below the grid floor, yet the one-sided derivative is recovered
    s = Space(2)
    phi = make_sup_functional(s)
    f = Func(s, [1.0, 1.0 - 1e-9])
    assert directional_derivative(phi, f, Func(s, [0.0, 1.0])) == pytest.approx(0.0, abs=1e-6)


def test_directional_derivative_entropic_matches_gibbs():
    rng = np.random.default_rng(6)
    s = Space(5)
    p = rng.dirichlet(np.ones(5))
    phi = make_entropic(s, Measure(s, p))
    for _ in range(10):
        f, g = rng.normal(size=5), rng.normal(size=5)
        gibbs = p * np.exp(f) / np.sum(p * np.exp(f))
        # Richardson-checked central differences of the independent formula
        h1, h2 = 1e-6, 1e-7
        c1 = (entropic_oracle(p, f + h1 * g) - entropic_oracle(p, f - h1 * g)) / (2 * h1)
        c2 = (entropic_oracle(p, f + h2 * g) - entropic_oracle(p, f - h2 * g)) / (2 * h2)
        assert c1 == pytest.approx(c2, abs=1e-6)
        d = directional_derivative(phi, Func(s, f), Func(s, g))
        assert d == pytest.approx(float(g @ gibbs), abs=1e-6)
        assert d == pytest.approx(c1, abs=1e-6)


def test_directional_derivative_outside_domain():
    s = Space(2)
    p = make_indicator_p(s)
    with pytest.raises(DomainError):
        directional_derivative(p, Func(s, [1, 1]), Func(s, [1, 0]))
    with pytest.raises(DomainError):
        directional_derivative(p, Func(s, [-1, 0]), Func(s, [0, 1]))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_difference_quotients_decrease_with_eps(name):
    phi = CATALOG[name]
    rng = np.random.default_rng(7)
    for _ in range(5):
        f = Func(phi.space, rng.uniform(-3, -0.5, size=8))
        g = Func(phi.space, rng.normal(size=8))
        q = difference_quotients(phi, f, g, DEFAULT_GRID)
        finite = q[np.isfinite(q)]
        assert np.all(np.diff(finite) <= 1e-9)


def test_unit_derivatives_bracket_the_gradient():
    rng = np.random.default_rng(8)
    phi = CATALOG["worst_case"]
    f = Func(phi.space, rng.normal(size=8))
    hi = unit_directional_derivatives(phi, f, 1.0)
    lo = -unit_directional_derivatives(phi, f, -1.0)
    assert np.all(lo <= hi + 1e-9)
    grad = phi.gradient(f.values[None])[0]
    assert np.all(lo - 1e-6 <= grad) and np.all(grad <= hi + 1e-6)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.floats(-3, 3))
def test_sup_translation_identity(a, m):
    s = Space(4)
    phi = make_sup_functional(s)
    f = Func(s, a)
    assert float(phi(f + m)) == pytest.approx(float(phi(f)) + m, abs=1e-12)
