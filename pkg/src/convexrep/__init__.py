"""Numerical verification of dual representations of increasing convex functionals."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DEFAULT_LADDER,
    INF,
    CertificationError,
    DegenerateError,
    DomainError,
    ExtReal,
    Func,
    Measure,
    Space,
    StructuralError,
    UsageError,
    dirac,
    geometric_measure,
    lattice_min,
    lattice_min_one,
    make_truncation_ladder,
    pairing,
    uniform_measure,
    zero_measure,
)
from .functional import (  # noqa: E402
    DomainProbe,
    Functional,
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
)
from .duality import (  # noqa: E402
    ConjugateResult,
    RepresentationReport,
    conjugate,
    conjugate_value,
    dual_value_grid,
    probability_mass_check,
    subgradient,
    verify_maxrep,
)
from .limits import (  # noqa: E402
    ConditionVerdict,
    EscapeDiagnostic,
    MonotoneSequence,
    check_condition,
    check_regular,
    implication_audit,
    lower_regularization,
    mass_escape_diagnostic,
    step_inequality_check,
    step_approximation,
    tightness_check,
)
