"""Configuration-driven runner for the verification suites.

``convexrep run <config>`` executes the selected suites and writes a JSON Lines
report (one header line, then one record per case sorted by case id).
``convexrep explain <case-id>`` prints the stored trace of one case.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .core import (
    DomainError,
    Func,
    Measure,
    Space,
    dirac,
    geometric_measure,
    make_truncation_ladder,
    uniform_measure,
)
from .duality import verify_maxrep
from .functional import (
    Functional,
    add,
    make_entropic,
    make_indicator_p,
    make_linear,
    make_sup_functional,
    make_worst_case,
    pointwise_max,
    scale,
)
from .limits import (
    MonotoneSequence,
    check_condition,
    check_regular,
    generate_sequences,
    ladder_prefix_diagnostic,
    lower_regularization,
    mass_escape_diagnostic,
    step_inequality_check,
    step_approximation,
    step_family,
    tightness_check,
    witness_gap,
)

SCHEMA_VERSION = 1
SUITES = ("duality", "conditions", "escape", "tightness", "regularity", "approximation")
KINDS = ("sup", "indicator_p", "entropic", "linear", "worst_case", "combinator")
COMBINATOR_OPS = ("scale", "add", "max")
PROFILES = ("non_attaining", "capped")
REPORT_ENV = "CONVEXREP_REPORT_DIR"
REPORT_NAME = "convexrep-report.jsonl"

DEFAULT_LADDER = tuple(2**j for j in range(1, 11))
QUICK_SIZE = 4
QUICK_LADDER_MAX = 2**6

DEFAULT_TOLERANCES = {
    "duality": 1e-6,
    "convergence": 1e-8,
    "tightness": 1e-6,
    "regularity": 1e-10,
    "mass": 1e-8,
}
DEFAULT_OPTIONS = {
    "duality_points": 3,
    "fenchel_young_samples": 1000,
    "sequences": 6,
    "rank": 64,
    "profiles": list(PROFILES),
    "tightness_M": 2.0,
    "delta": 0.05,
    "approximation_size": 100,
    "approximation_samples": 10,
}

DEFAULT_FUNCTIONALS = (
    {"name": "sup", "kind": "sup"},
    {"name": "indicator_p", "kind": "indicator_p"},
    {"name": "entropic", "kind": "entropic", "reference": "random"},
    {"name": "linear", "kind": "linear", "weights": "random"},
    {"name": "worst_case", "kind": "worst_case", "count": 3},
    {"name": "scaled_entropic", "kind": "combinator", "op": "scale", "terms": ["entropic"], "factor": 2.0},
    {"name": "tilted_sup", "kind": "combinator", "op": "add", "terms": ["sup", "linear"]},
)


class ConfigError(Exception):
    """Invalid configuration; ``where`` is the dotted path of the offending field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class SuiteConfig:
    seed: int
    size: int
    ladder: tuple
    functionals: tuple
    suites: tuple
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    options: dict = field(default_factory=lambda: dict(DEFAULT_OPTIONS))


# ------------------------------------------------------------------ config parsing


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def _positive_int(x, where: str, minimum: int = 1) -> int:
    if not _is_int(x) or x < minimum:
        raise ConfigError(where, f"expected an integer >= {minimum}, got {x!r}")
    return x


def _vector(x, where: str, n: int) -> list:
    if not isinstance(x, list) or len(x) != n or not all(_is_num(v) and v >= 0 for v in x):
        raise ConfigError(where, f"expected a list of {n} nonnegative numbers")
    return [float(v) for v in x]


def _check_functional(spec, where: str, size: int, known: set) -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(where, "expected a mapping")
    kind = spec.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"{where}.kind", f"unknown kind {kind!r}; expected one of {list(KINDS)}")
    name = spec.get("name", kind)
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigError(f"{where}.name", "expected a non-empty string without '/'")
    if name in known:
        raise ConfigError(f"{where}.name", f"duplicate functional name {name!r}")
    out = dict(spec, name=name)
    if kind == "entropic":
        ref = spec.get("reference", "uniform")
        if isinstance(ref, list):
            w = _vector(ref, f"{where}.reference", size)
            if min(w) <= 0 or abs(sum(w) - 1.0) > 1e-9:
                raise ConfigError(f"{where}.reference", "must be strictly positive with total mass 1")
        elif ref not in ("uniform", "geometric", "random"):
            raise ConfigError(f"{where}.reference", "expected uniform, geometric, random or a weight list")
    elif kind == "linear":
        w = spec.get("weights", "random")
        if isinstance(w, list):
            _vector(w, f"{where}.weights", size)
        elif w != "random":
            raise ConfigError(f"{where}.weights", "expected 'random' or a weight list")
    elif kind == "worst_case":
        if "measures" in spec:
            ms = spec["measures"]
            if not isinstance(ms, list) or not ms:
                raise ConfigError(f"{where}.measures", "expected a non-empty list of weight lists")
            for j, m in enumerate(ms):
                _vector(m, f"{where}.measures[{j}]", size)
            pen = spec.get("penalties", [0.0] * len(ms))
            if not isinstance(pen, list) or len(pen) != len(ms) or not all(_is_num(c) for c in pen):
                raise ConfigError(f"{where}.penalties", f"expected {len(ms)} finite numbers")
        else:
            _positive_int(spec.get("count", 3), f"{where}.count")
    elif kind == "combinator":
        op = spec.get("op")
        if op not in COMBINATOR_OPS:
            raise ConfigError(f"{where}.op", f"expected one of {list(COMBINATOR_OPS)}")
        terms = spec.get("terms")
        if not isinstance(terms, list) or not terms:
            raise ConfigError(f"{where}.terms", "expected a non-empty list of earlier functional names")
        for j, t in enumerate(terms):
            if t not in known:
                raise ConfigError(f"{where}.terms[{j}]", f"unknown or later functional {t!r}")
        if op == "scale":
            if len(terms) != 1:
                raise ConfigError(f"{where}.terms", "scale takes exactly one term")
            a = spec.get("factor", 1.0)
            if not _is_num(a) or a <= 0:
                raise ConfigError(f"{where}.factor", "expected a positive number")
    return out


def parse_config(raw) -> SuiteConfig:
    """Validate a parsed config tree; raises ConfigError naming the bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = set(raw) - {"seed", "space", "functionals", "suites", "tolerances", "options"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    if "seed" not in raw:
        raise ConfigError("seed", "required")
    seed = raw["seed"]
    if not _is_int(seed) or seed < 0:
        raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}")

    space = raw.get("space", {}) or {}
    if not isinstance(space, dict):
        raise ConfigError("space", "expected a mapping")
    size = _positive_int(space.get("size", 8), "space.size", 2)
    ladder = space.get("ladder", list(DEFAULT_LADDER))
    if not isinstance(ladder, list) or not ladder:
        raise ConfigError("space.ladder", "expected a non-empty list of sizes")
    for j, s in enumerate(ladder):
        _positive_int(s, f"space.ladder[{j}]")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("space.ladder", "sizes must be strictly increasing")

    specs = raw.get("functionals")
    if specs is None:
        specs = [dict(s) for s in DEFAULT_FUNCTIONALS]
    if not isinstance(specs, list) or not specs:
        raise ConfigError("functionals", "expected a non-empty list")
    known, checked = set(), []
    for j, s in enumerate(specs):
        c = _check_functional(s, f"functionals[{j}]", size, known)
        known.add(c["name"])
        checked.append(c)

    suites = raw.get("suites", list(SUITES))
    if not isinstance(suites, list) or not suites:
        raise ConfigError("suites", "expected a non-empty list")
    for j, s in enumerate(suites):
        if s not in SUITES:
            raise ConfigError(f"suites[{j}]", f"unknown suite {s!r}; expected one of {list(SUITES)}")

    tols = dict(DEFAULT_TOLERANCES)
    given = raw.get("tolerances", {}) or {}
    if not isinstance(given, dict):
        raise ConfigError("tolerances", "expected a mapping")
    for k, v in given.items():
        if k not in tols:
            raise ConfigError(f"tolerances.{k}", "unknown tolerance")
        if not _is_num(v) or v <= 0:
            raise ConfigError(f"tolerances.{k}", f"must be a positive number, got {v!r}")
        tols[k] = float(v)

    opts = dict(DEFAULT_OPTIONS)
    given = raw.get("options", {}) or {}
    if not isinstance(given, dict):
        raise ConfigError("options", "expected a mapping")
    for k, v in given.items():
        if k not in opts:
            raise ConfigError(f"options.{k}", "unknown option")
        if k == "profiles":
            if not isinstance(v, list) or not all(p in PROFILES for p in v):
                raise ConfigError("options.profiles", f"expected a list drawn from {list(PROFILES)}")
        elif k in ("tightness_M", "delta"):
            if not _is_num(v) or v <= 0 or (k == "tightness_M" and v < 1):
                raise ConfigError(f"options.{k}", f"invalid value {v!r}")
            v = float(v)
        else:
            _positive_int(v, f"options.{k}", 2 if k == "rank" else 1)
        opts[k] = v

    return SuiteConfig(seed, size, tuple(ladder), tuple(checked), tuple(dict.fromkeys(suites)), tols, opts)


def load_config(path: str) -> SuiteConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return parse_config(raw)


def apply_overrides(cfg: SuiteConfig, quick: bool = False, suites=None, seed: Optional[int] = None) -> SuiteConfig:
    if quick:
        ladder = tuple(s for s in cfg.ladder if s <= QUICK_LADDER_MAX) or tuple(2**j for j in range(1, 7))
        # explicit weight lists no longer fit the smaller space
        specs = tuple(_shrink(s) for s in cfg.functionals)
        cfg = replace(cfg, size=QUICK_SIZE, ladder=ladder, functionals=specs)
    if suites:
        cfg = replace(cfg, suites=tuple(dict.fromkeys(suites)))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _shrink(spec: dict) -> dict:
    s = dict(spec)
    if s["kind"] == "entropic" and isinstance(s.get("reference"), list):
        s["reference"] = "uniform"
    if s["kind"] == "linear" and isinstance(s.get("weights"), list):
        s["weights"] = "random"
    if s["kind"] == "worst_case" and "measures" in s:
        s = {"name": s["name"], "kind": "worst_case", "count": len(s["measures"])}
    return s


# ------------------------------------------------------------------ building functionals


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def case_rng(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, stable_hash(key)])


def tail_ratio(space: Space, floor: float = 1e-12) -> float:
    """Geometric ratio, at most 0.9, whose tail beyond the largest proper prefix is below ``floor``."""
    proper = [m for m in space.compact_family if m < space.size]
    m = max(proper) if proper else space.size
    return min(0.9, floor ** (1.0 / m))


def build_functionals(cfg: SuiteConfig, space: Space, tail: bool = False) -> dict:
    """Instantiate the configured functionals on ``space``.

    With ``tail=True`` random references are replaced by geometric ones so the
    functionals make sense on a long truncation of the natural numbers.
    """
    out = {}
    n = space.size
    r = tail_ratio(space)
    for spec in cfg.functionals:
        name, kind = spec["name"], spec["kind"]
        rng = case_rng(cfg.seed, f"functional/{name}")
        if kind == "sup":
            phi = make_sup_functional(space)
        elif kind == "indicator_p":
            phi = make_indicator_p(space)
        elif kind == "entropic":
            ref = spec.get("reference", "uniform")
            if tail:
                p = geometric_measure(space, r, normalize=True)
            elif ref == "geometric":
                p = geometric_measure(space, 0.9, normalize=True)
            elif ref == "uniform":
                p = uniform_measure(space)
            elif ref == "random":
                w = rng.uniform(0.5, 1.5, size=n)
                p = Measure(space, w / w.sum())
            else:
                p = Measure(space, np.asarray(ref) / np.sum(ref))
            phi = make_entropic(space, p)
        elif kind == "linear":
            w = spec.get("weights", "random")
            if tail:
                nu = geometric_measure(space, min(0.5, r))
            elif w == "random":
                nu = Measure(space, rng.uniform(0.0, 1.0, size=n))
            else:
                nu = Measure(space, w)
            phi = make_linear(nu)
        elif kind == "worst_case":
            if tail:
                pairs = [(geometric_measure(space, r, True), 0.0), (geometric_measure(space, 0.9 * r, True), 0.1)]
            elif "measures" in spec:
                pairs = [(Measure(space, m), float(c)) for m, c in zip(spec["measures"], spec["penalties"])]
            else:
                k = spec.get("count", 3)
                probs = rng.dirichlet(np.ones(n), size=k)
                pairs = [(Measure(space, q), float(c)) for q, c in zip(probs, rng.uniform(0, 0.5, size=k))]
            phi = make_worst_case(pairs)
        else:
            terms = [out[t] for t in spec["terms"]]
            if spec["op"] == "scale":
                phi = scale(terms[0], spec.get("factor", 1.0))
            elif spec["op"] == "add":
                phi = add(*terms)
            else:
                phi = pointwise_max(*terms)
        out[name] = phi
    return out


def expected_tight(cfg: SuiteConfig) -> dict:
    """Whether each configured functional is tight on a truncated ladder with geometric references."""
    out = {}
    for spec in cfg.functionals:
        kind = spec["kind"]
        if kind in ("sup", "indicator_p"):
            out[spec["name"]] = False
        elif kind == "combinator":
            out[spec["name"]] = all(out[t] for t in spec["terms"])
        else:
            out[spec["name"]] = True
    return out


# ------------------------------------------------------------------ records


def _enc(x):
    """JSON-safe copy: numpy to builtin, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _enc(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    if isinstance(x, np.ndarray):
        return _enc(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    return x


def digest(values) -> str:
    arr = np.asarray(values, dtype="<f8").ravel()
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def _record(case_id, suite, passed, lhs=math.nan, rhs=math.nan, gap=math.nan, witness=(), trace=(),
            provenance=None, expected=None, observed=None, details=None) -> dict:
    return {
        "case_id": case_id,
        "suite": suite,
        "verdict": "pass" if passed else "fail",
        "lhs": lhs,
        "rhs": rhs,
        "gap": gap,
        "witness_digest": digest(witness),
        "trace_digest": digest(trace),
        "provenance": provenance or {},
        "expected": expected,
        "observed": observed,
        "details": details or {},
    }


def _prov(cfg: SuiteConfig, name: str, phi: Optional[Functional], tol: float, **extra) -> dict:
    p = {"functional": name, "seed": cfg.seed, "tolerance": tol}
    if phi is not None:
        p["kind"] = phi.kind
        p["params"] = phi.params
    p.update(extra)
    return p


def _interior_point(rng: np.random.Generator, n: int) -> Func:
    # below zero everywhere, so it is interior for every catalog kind
    return Func(Space(n), rng.uniform(-3.0, -0.5, size=n))


# ------------------------------------------------------------------ suites


def suite_duality(cfg: SuiteConfig) -> list:
    space = Space(cfg.size)
    phis = build_functionals(cfg, space)
    tol, mtol = cfg.tolerances["duality"], cfg.tolerances["mass"]
    out = []
    for name, phi in phis.items():
        for k in range(cfg.options["duality_points"]):
            cid = f"duality/{name}/{k:02d}"
            rng = case_rng(cfg.seed, cid)
            f = Func(space, _interior_point(rng, cfg.size).values)
            prov = _prov(cfg, name, phi, tol)
            try:
                rep = verify_maxrep(phi, f, tol=tol, n_samples=cfg.options["fenchel_young_samples"],
                                    seed=stable_hash(cid) % 2**32)
            except (ArithmeticError, RuntimeError) as exc:
                out.append(_record(cid, "duality", False, provenance=prov, expected="certified",
                                   observed=type(exc).__name__, details={"f": f.values, "error": str(exc)}))
                continue
            mass_ok = True
            if phi.translation_invariant:
                mass_ok = abs(rep.witness.mass - 1.0) <= mtol
            passed = rep.certified and mass_ok
            out.append(_record(
                cid, "duality", passed, float(rep.lhs), float(rep.rhs), rep.gap, rep.witness.weights, (),
                prov, "certified", "certified" if passed else "not certified",
                {
                    "f": f.values,
                    "witness": rep.witness.weights,
                    "witness_mass": rep.witness.mass,
                    "conjugate_at_witness": float(np.dot(f.values, rep.witness.weights)) - float(rep.rhs),
                    "conjugate_route": rep.conjugate_route,
                    "box_radius": 8.0 * max(1.0, f.sup_norm()),
                    "fenchel_young_violations": rep.fenchel_young_violations,
                    "fenchel_young_samples": rep.fenchel_young_samples,
                    "translation_invariant": phi.translation_invariant,
                },
            ))
    return out


def _condition_record(cid, v, prov, expected_pass=True, extra=None):
    tr = np.asarray(v.trace, dtype=float)
    last = float(tr[-1]) if tr.size else math.nan
    gap = last - v.limit if math.isfinite(last) and math.isfinite(v.limit) else math.inf
    details = {"condition": v.condition_id, "trace": tr, "limit": v.limit, "witness_epsilon": v.witness_epsilon}
    details.update(extra or {})
    return _record(cid, "conditions", v.passed == expected_pass, last, v.limit, gap, (), tr, prov,
                   "pass" if expected_pass else "fail", "pass" if v.passed else "fail", details)


def suite_conditions(cfg: SuiteConfig) -> list:
    space = Space(cfg.size)
    phis = build_functionals(cfg, space)
    tol, rank = cfg.tolerances["convergence"], cfg.options["rank"]
    out = []
    for name, phi in phis.items():
        seen = {"ii": True, "iii": True, "vi": True}
        for j in range(cfg.options["sequences"]):
            key = f"conditions/{name}/{j:02d}"
            rng = case_rng(cfg.seed, key)
            base = Func(space, rng.uniform(-3.0, -0.5, size=cfg.size))
            down = generate_sequences(space, 3, rng, "down")[j % 3]
            up = MonotoneSequence(down.target, lambda n, d=down: -d.term(n), "up", down.label)
            runs = {
                "ii": check_condition(phi, down.shifted(base), "ii", rank=rank, tol=tol),
                "iii": check_condition(phi, down, "iii", base=base, rank=rank, tol=tol),
                "vi": check_condition(phi, up.shifted(base), "vi", rank=rank, tol=tol),
            }
            for cond, v in runs.items():
                seen[cond] &= v.passed
                prov = _prov(cfg, name, phi, tol, sequence=down.label, rank=rank)
                out.append(_condition_record(f"{key}/{cond}", v, prov, extra={"base": base.values}))
        if phi.kind == "indicator_p":
            zero = Func.constant(space, 0.0)
            v = check_condition(phi, MonotoneSequence.harmonic(zero), "iii", base=Func.constant(space, -1.0),
                                rank=rank, tol=tol)
            prov = _prov(cfg, name, phi, tol, sequence="harmonic(scale=1)", rank=rank)
            out.append(_condition_record(f"conditions/{name}/iii-example", v, prov))
            f = Func.constant(space, -1.0 / 64)
            v = check_condition(phi, MonotoneSequence.harmonic(f, 2.0), "ii", rank=rank, tol=tol)
            prov = _prov(cfg, name, phi, tol, sequence="harmonic(scale=2)", rank=rank)
            out.append(_condition_record(f"conditions/{name}/ii-counterexample", v, prov, expected_pass=False))
        broken = (seen["ii"] and not seen["iii"]) or (seen["iii"] and not seen["vi"])
        out.append(_record(f"conditions/{name}/chain", "conditions", not broken,
                           provenance=_prov(cfg, name, phi, tol), expected="consistent",
                           observed="broken" if broken else "consistent", details={"all_passed": seen}))
    return out


def _profile(kind: str):
    if kind == "non_attaining":
        return lambda m: 1.0 - 1.0 / m
    return lambda m: np.minimum(1.0 - 1.0 / m, 1.0 - 1.0 / 3.0)


def suite_escape(cfg: SuiteConfig) -> list:
    ladder = make_truncation_ladder(cfg.ladder)
    sizes = [s.size for s in ladder]
    out = []
    for prof in cfg.options["profiles"]:
        cid = f"escape/{prof}"
        d = mass_escape_diagnostic(_profile(prof), ladder)
        if prof == "non_attaining":
            expected, labels_ok = True, list(d.witness_labels) == sizes
        else:
            expected = False
            labels_ok = all(lab == min(3, s) for lab, s in zip(d.witness_labels, sizes))
        prov = {"profile": prof, "seed": cfg.seed, "tolerance": 0.0, "ladder": sizes}
        out.append(_record(
            cid, "escape", d.escape_detected == expected and labels_ok,
            witness=np.concatenate([w.weights for w in d.per_rung_witness]), trace=d.mass_on_prefix,
            provenance=prov, expected={"escape_detected": expected},
            observed={"escape_detected": d.escape_detected},
            details={"label": d.label, "ladder": sizes, "witness_labels": list(d.witness_labels),
                     "mass_on_prefix": d.mass_on_prefix},
        ))
        # a forced uniform witness on the top rung leaves a positive duality gap
        top = ladder[-1]
        f = Func.from_recipe(top, _profile(prof))
        sup = make_sup_functional(top)
        gap = witness_gap(sup, f, uniform_measure(top))
        closed = float(np.mean(f.values[-1] - f.values))
        cid = f"escape/{prof}/uniform-witness"
        out.append(_record(
            cid, "escape", gap > 0 and abs(gap - closed) <= 1e-12, float(sup(f)), float(sup(f)) - gap, gap,
            uniform_measure(top).weights, (), prov, {"gap": closed}, {"gap": gap}, {"rung": top.size},
        ))
    return out


def suite_tightness(cfg: SuiteConfig) -> list:
    ladder = list(cfg.ladder)
    top = Space(ladder[-1], tuple(ladder))
    phis = build_functionals(cfg, top, tail=True)
    expect = expected_tight(cfg)
    tol, M = cfg.tolerances["tightness"], cfg.options["tightness_M"]
    out = []
    for name, phi in phis.items():
        cid = f"tightness/{name}"
        prov = _prov(cfg, name, None, tol, kind=phi.kind, M=M, reference="geometric tail", ratio=tail_ratio(top))
        try:
            v = tightness_check(phi, M, ladder, tol)
        except DomainError as exc:
            out.append(_record(cid, "tightness", False, provenance=prov, expected=expect[name],
                               observed="error", details={"error": str(exc)}))
            continue
        tr = np.asarray(v.trace)
        out.append(_record(
            cid, "tightness", v.passed == expect[name], float(tr[-1]), v.limit, float(tr[-1]) - v.limit,
            (), tr, prov, {"tight": expect[name]}, {"tight": v.passed},
            {"trace": tr, "prefixes": [m for m in ladder if m < top.size], "phi_zero": v.limit},
        ))
    return out


def suite_regularity(cfg: SuiteConfig) -> list:
    ladder = make_truncation_ladder(cfg.ladder)
    top = ladder[-1]
    proper = [s.size for s in ladder if s.size < top.size]
    tol = cfg.tolerances["regularity"]
    out = []
    cases = {
        "geometric": (geometric_measure(top, 0.25), proper, True),
        "dirac1": (dirac(top, 1), proper, True),
    }
    for label, (mu, fam, expected) in cases.items():
        cid = f"regularity/{label}"
        ok = check_regular(mu, fam, tol=tol, seed=stable_hash(cid) % 2**32)
        best = max(mu.prefix_mass(m) for m in fam)
        out.append(_record(
            cid, "regularity", ok == expected, best, mu.mass, mu.mass - best, mu.weights, (),
            {"measure": label, "seed": cfg.seed, "tolerance": tol, "family": fam},
            {"regular": expected}, {"regular": ok}, {"prefix_masses": [mu.prefix_mass(m) for m in fam]},
        ))
    d = ladder_prefix_diagnostic([dirac(s, s.size) for s in ladder])
    each = all(check_regular(w, tol=tol) for w in d.per_rung_witness)
    out.append(_record(
        "regularity/dirac-ladder", "regularity", d.escape_detected and each, trace=d.mass_on_prefix,
        provenance={"measure": "dirac ladder", "seed": cfg.seed, "tolerance": tol, "ladder": list(cfg.ladder)},
        expected={"escape_detected": True}, observed={"escape_detected": d.escape_detected},
        details={"label": d.label, "ladder": list(cfg.ladder), "mass_on_prefix": d.mass_on_prefix},
    ))
    return out


def suite_approximation(cfg: SuiteConfig) -> list:
    n, delta = cfg.options["approximation_size"], cfg.options["delta"]
    space = Space(n)
    out = []
    for k in range(cfg.options["approximation_samples"]):
        cid = f"approximation/sandwich/{k:02d}"
        rng = case_rng(cfg.seed, cid)
        f = Func(space, rng.normal(size=n))
        st = step_approximation(f, delta)
        g = st.g.values
        sandwich = bool(np.all(g <= f.values) and np.all(f.values <= g + delta))
        mu = Measure(space, rng.exponential(size=n) * rng.uniform(0, 2))
        lhs = float(f.values @ mu.weights)
        rhs = float(g @ mu.weights) + delta * (mu.mass + 1.0)
        ineq = step_inequality_check(f, mu, delta)
        out.append(_record(
            cid, "approximation", sandwich and ineq, lhs, rhs, rhs - lhs, mu.weights, g,
            {"seed": cfg.seed, "tolerance": 0.0, "delta": delta},
            {"sandwich": True, "inequality": True}, {"sandwich": sandwich, "inequality": ineq},
            {"levels": len(st.levels), "max_residual": float(np.max(f.values - g))},
        ))
    small = Space(cfg.size)
    exps = range(11)
    for name, phi in build_functionals(cfg, small).items():
        if not (phi.translation_invariant or phi.kind == "indicator_p"):
            continue
        cid = f"approximation/lower-regularization/{name}"
        rng = case_rng(cfg.seed, cid)
        f = Func(small, rng.normal(size=cfg.size))
        if phi.kind == "indicator_p":
            f = f - f.sup()
        val = lower_regularization(phi, f, step_family(f, exps))
        target = float(phi(f))
        bound = 2.0 ** -max(exps)
        ok = target - bound <= val <= target
        out.append(_record(
            cid, "approximation", ok, target, val, target - val, (), [val],
            _prov(cfg, name, phi, bound, deltas=[2.0**-j for j in exps]),
            {"gap_at_most": bound}, {"gap": target - val}, {"f": f.values},
        ))
    return out


SUITE_RUNNERS = {
    "duality": suite_duality,
    "conditions": suite_conditions,
    "escape": suite_escape,
    "tightness": suite_tightness,
    "regularity": suite_regularity,
    "approximation": suite_approximation,
}


def run_suites(cfg: SuiteConfig) -> list:
    records = []
    for s in cfg.suites:
        records.extend(SUITE_RUNNERS[s](cfg))
    return sorted(records, key=lambda r: r["case_id"])


def header(cfg: SuiteConfig) -> dict:
    return {
        "record": "header",
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "seed": cfg.seed,
        "size": cfg.size,
        "ladder": list(cfg.ladder),
        "suites": list(cfg.suites),
        "tolerances": cfg.tolerances,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def dumps(obj) -> str:
    return json.dumps(_enc(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_report(path: str, cfg: SuiteConfig, records: list) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(header(cfg)) + "\n")
        for r in records:
            fh.write(dumps(r) + "\n")


def default_report_path() -> str:
    return os.path.join(os.environ.get(REPORT_ENV, "."), REPORT_NAME)


def summarize(cfg: SuiteConfig, records: list, path: str) -> str:
    lines = [f"convexrep {__version__}: seed={cfg.seed} n={cfg.size} ladder={cfg.ladder[0]}..{cfg.ladder[-1]}"]
    for s in cfg.suites:
        mine = [r for r in records if r["suite"] == s]
        bad = sum(r["verdict"] == "fail" for r in mine)
        lines.append(f"  {s:<14}{len(mine) - bad:>5} pass{bad:>5} fail")
    failing = [r["case_id"] for r in records if r["verdict"] == "fail"]
    lines.append(f"total: {len(records)} cases, {len(failing)} failing")
    lines.extend(f"FAIL {cid}" for cid in failing)
    lines.append(f"report: {path}")
    return "\n".join(lines)


# ------------------------------------------------------------------ explain


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    if isinstance(v, list) and v and all(isinstance(x, (int, float)) for x in v):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def explain_record(rec: dict) -> str:
    d = rec.get("details", {})
    lines = [f"case {rec['case_id']}  suite={rec['suite']}  verdict={rec['verdict']}",
             f"  expected: {rec.get('expected')}  observed: {rec.get('observed')}",
             f"  provenance: {json.dumps(rec.get('provenance'), sort_keys=True)}"]
    suite = rec["suite"]
    if suite == "duality":
        for k in ("f", "witness"):
            if k in d:
                lines.append(f"  {k:<22}{_fmt(d[k])}")
        lines.append(f"  {'phi(f)':<22}{_fmt(rec['lhs'])}")
        lines.append(f"  {'phi*(witness)':<22}{_fmt(d.get('conjugate_at_witness'))}")
        lines.append(f"  {'gap':<22}{_fmt(rec['gap'])}")
        lines.append(f"  {'witness mass':<22}{_fmt(d.get('witness_mass'))}")
        lines.append(f"  {'conjugate route':<22}{d.get('conjugate_route')} (box radius {_fmt(d.get('box_radius'))})")
        lines.append(f"  fenchel-young violations {d.get('fenchel_young_violations')} / {d.get('fenchel_young_samples')}")
    elif suite in ("conditions", "tightness") and "trace" in d:
        lines.append(f"  limit: {_fmt(d.get('limit', d.get('phi_zero')))}")
        if d.get("witness_epsilon") is not None:
            lines.append(f"  witness epsilon: {_fmt(d['witness_epsilon'])}")
        idx = d.get("prefixes") or list(range(1, len(d["trace"]) + 1))
        lines.append(f"  {'n':>6}  phi")
        for n, t in zip(idx, d["trace"]):
            lines.append(f"  {n:>6}  {_fmt(t)}")
    elif "mass_on_prefix" in d:
        sizes = d["ladder"]
        lines.append("  rung  " + " ".join(f"{s:>7}" for s in sizes))
        for s, row in zip(sizes, d["mass_on_prefix"]):
            lines.append(f"  {s:>4}  " + " ".join(f"{x:>7.3g}" for x in row))
        if "witness_labels" in d:
            lines.append(f"  witness labels: {d['witness_labels']}")
    else:
        for k, v in d.items():
            lines.append(f"  {k}: {_fmt(v)}")
        for k in ("lhs", "rhs", "gap"):
            lines.append(f"  {k}: {_fmt(rec[k])}")
    return "\n".join(lines)


# ------------------------------------------------------------------ entry points


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convexrep", description="Dual-representation verification suites.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run suites from a YAML config")
    r.add_argument("config")
    r.add_argument("--quick", action="store_true", help=f"n={QUICK_SIZE}, ladder up to {QUICK_LADDER_MAX}")
    r.add_argument("--suite", action="append", choices=SUITES, help="restrict to a suite (repeatable)")
    r.add_argument("--report", help=f"report path (default ${REPORT_ENV}/{REPORT_NAME})")
    r.add_argument("--seed", type=int)
    e = sub.add_parser("explain", help="print the stored trace of one case")
    e.add_argument("case_id")
    e.add_argument("--report")
    return ap


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg = apply_overrides(cfg, args.quick, args.suite, args.seed)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    records = run_suites(cfg)
    path = args.report or default_report_path()
    write_report(path, cfg, records)
    print(summarize(cfg, records, path))
    return 1 if any(r["verdict"] == "fail" for r in records) else 0


def cmd_explain(args) -> int:
    path = args.report or default_report_path()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read report {path}: {exc}", file=sys.stderr)
        return 2
    for rec in lines:
        if rec.get("case_id") == args.case_id:
            print(explain_record(rec))
            return 0
    print(f"unknown case id {args.case_id!r} in {path}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return cmd_run(args) if args.command == "run" else cmd_explain(args)


if __name__ == "__main__":
    sys.exit(main())
