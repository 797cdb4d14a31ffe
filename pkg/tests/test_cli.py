import json
import math
import os
import subprocess
import sys

import pytest
import yaml

from convexrep import cli
from convexrep.cli import ConfigError, apply_overrides, parse_config, run_suites

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def read_report(path):
    with open(path) as fh:
        lines = [json.loads(x) for x in fh if x.strip()]
    return lines[0], lines[1:]


def strip_timestamp(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = json.loads(lines[0])
    head.pop("timestamp")
    return [json.dumps(head, sort_keys=True)] + lines[1:]


# ---------------------------------------------------------------- config validation


def test_minimal_config_gets_defaults():
    cfg = parse_config({"seed": 1})
    assert cfg.size == 8
    assert cfg.ladder == tuple(2**j for j in range(1, 11))
    assert cfg.suites == cli.SUITES
    assert [f["name"] for f in cfg.functionals][:2] == ["sup", "indicator_p"]


@pytest.mark.parametrize(
    "raw, where",
    [
        ({}, "seed"),
        ({"seed": -1}, "seed"),
        ({"seed": 1, "tolerances": {"duality": -1e-6}}, "tolerances.duality"),
        ({"seed": 1, "tolerances": {"typo": 1e-6}}, "tolerances.typo"),
        ({"seed": 1, "space": {"size": 1}}, "space.size"),
        ({"seed": 1, "space": {"ladder": [4, 2]}}, "space.ladder"),
        ({"seed": 1, "suites": ["duality", "nope"]}, "suites[1]"),
        ({"seed": 1, "functionals": [{"kind": "cvar"}]}, "functionals[0].kind"),
        ({"seed": 1, "functionals": [{"kind": "entropic", "reference": [1, 0]}], "space": {"size": 2}},
         "functionals[0].reference"),
        ({"seed": 1, "functionals": [{"kind": "combinator", "op": "add", "terms": ["ghost"]}]},
         "functionals[0].terms[0]"),
        ({"seed": 1, "functionals": [{"kind": "sup"}, {"kind": "sup"}]}, "functionals[1].name"),
        ({"seed": 1, "options": {"rank": 1}}, "options.rank"),
        ({"seed": 1, "options": {"profiles": ["wobbly"]}}, "options.profiles"),
        ({"seed": 1, "extra": 3}, "extra"),
    ],
)
def test_config_errors_name_the_field(raw, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.where == where


def test_quick_override_shrinks_problem():
    cfg = parse_config({"seed": 3, "space": {"size": 5},
                        "functionals": [{"kind": "entropic", "reference": [0.2] * 5}]})
    q = apply_overrides(cfg, quick=True, suites=["duality"], seed=9)
    assert q.size == cli.QUICK_SIZE
    assert max(q.ladder) <= cli.QUICK_LADDER_MAX
    assert q.suites == ("duality",)
    assert q.seed == 9
    assert q.functionals[0]["reference"] == "uniform"


def test_case_rng_is_keyed_and_stable():
    a = cli.case_rng(5, "x").normal(size=3)
    assert (a == cli.case_rng(5, "x").normal(size=3)).all()
    assert not (a == cli.case_rng(5, "y").normal(size=3)).all()


def test_encoding_handles_non_finite():
    assert cli.dumps({"a": math.inf, "b": -math.inf, "c": math.nan}) == '{"a":"+inf","b":"-inf","c":"nan"}'


# ---------------------------------------------------------------- run command


def test_entropic_duality_config(tmp_path, capsys):
    report = tmp_path / "r.jsonl"
    code = cli.main(["run", os.path.join(CONFIGS, "entropic.yaml"), "--report", str(report)])
    assert code == 0
    head, recs = read_report(report)
    assert head["schema_version"] == cli.SCHEMA_VERSION and head["seed"] == 7
    assert len(recs) == 10
    for r in recs:
        assert r["suite"] == "duality" and r["verdict"] == "pass"
        assert abs(r["gap"]) <= 1e-6
        for key in ("case_id", "suite", "verdict", "lhs", "rhs", "gap", "witness_digest", "trace_digest"):
            assert key in r
        assert {"kind", "seed", "tolerance"} <= set(r["provenance"])
    out = capsys.readouterr().out
    assert "10 pass" in out and "0 failing" in out


def test_negative_tolerance_exits_2(tmp_path, capsys):
    path = write_cfg(tmp_path, {"seed": 1, "tolerances": {"tightness": -0.5}})
    assert cli.main(["run", path, "--report", str(tmp_path / "r.jsonl")]) == 2
    assert "tolerances.tightness" in capsys.readouterr().err
    assert not (tmp_path / "r.jsonl").exists()


def test_unreadable_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    assert cli.main(["run", str(bad)]) == 2
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_attaining_profile_records_no_escape(tmp_path):
    path = write_cfg(tmp_path, {"seed": 2, "suites": ["escape"], "options": {"profiles": ["capped"]},
                                "space": {"ladder": [2, 4, 8, 16, 32]}})
    report = tmp_path / "r.jsonl"
    assert cli.main(["run", path, "--report", str(report)]) == 0
    _, recs = read_report(report)
    main = [r for r in recs if r["case_id"] == "escape/capped"][0]
    assert main["observed"] == {"escape_detected": False}
    assert main["details"]["witness_labels"] == [2, 3, 3, 3, 3]


def test_failing_case_exits_1_and_lists_ids(tmp_path, capsys, monkeypatch):
    def broken(cfg):
        return [cli._record("fake/one", "duality", False)]

    monkeypatch.setitem(cli.SUITE_RUNNERS, "duality", broken)
    path = write_cfg(tmp_path, {"seed": 1, "suites": ["duality"]})
    assert cli.main(["run", path, "--report", str(tmp_path / "r.jsonl")]) == 1
    assert "FAIL fake/one" in capsys.readouterr().out


def test_exit_status_tracks_failing_records(tmp_path):
    path = write_cfg(tmp_path, {"seed": 4})
    report = tmp_path / "r.jsonl"
    code = cli.main(["run", path, "--quick", "--report", str(report)])
    _, recs = read_report(report)
    assert code == (1 if any(r["verdict"] == "fail" for r in recs) else 0)
    assert code == 0
    assert [r["case_id"] for r in recs] == sorted(r["case_id"] for r in recs)
    assert {r["suite"] for r in recs} == set(cli.SUITES)


def test_quick_reports_are_reproducible(tmp_path):
    path = write_cfg(tmp_path, {"seed": 11})
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    cli.main(["run", path, "--quick", "--report", str(a)])
    cli.main(["run", path, "--quick", "--report", str(b)])
    assert strip_timestamp(a) == strip_timestamp(b)
    c = tmp_path / "c.jsonl"
    cli.main(["run", path, "--quick", "--seed", "12", "--report", str(c)])
    assert strip_timestamp(a) != strip_timestamp(c)


def test_suite_flag_and_env_report_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.REPORT_ENV, str(tmp_path / "out"))
    path = write_cfg(tmp_path, {"seed": 1})
    assert cli.main(["run", path, "--quick", "--suite", "regularity", "--suite", "escape"]) == 0
    _, recs = read_report(tmp_path / "out" / cli.REPORT_NAME)
    assert {r["suite"] for r in recs} == {"regularity", "escape"}


def test_records_sorted_regardless_of_suite_order():
    cfg = apply_overrides(parse_config({"seed": 5}), quick=True, suites=["regularity", "escape"])
    recs = run_suites(cfg)
    rev = run_suites(apply_overrides(cfg, suites=["escape", "regularity"]))
    assert [cli.dumps(r) for r in recs] == [cli.dumps(r) for r in rev]


# ---------------------------------------------------------------- explain


@pytest.fixture(scope="module")
def quick_report(tmp_path_factory):
    d = tmp_path_factory.mktemp("rep")
    cfg = d / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 1}))
    report = d / "r.jsonl"
    assert cli.main(["run", str(cfg), "--quick", "--report", str(report)]) == 0
    return str(report)


def test_explain_duality_case(quick_report, capsys):
    assert cli.main(["explain", "duality/entropic/00", "--report", quick_report]) == 0
    out = capsys.readouterr().out
    for token in ("phi(f)", "phi*(witness)", "gap", "witness"):
        assert token in out


def test_explain_condition_and_escape_cases(quick_report, capsys):
    assert cli.main(["explain", "conditions/indicator_p/ii-counterexample", "--report", quick_report]) == 0
    out = capsys.readouterr().out
    assert "limit" in out and "inf" in out
    assert cli.main(["explain", "escape/non_attaining", "--report", quick_report]) == 0
    out = capsys.readouterr().out
    assert "rung" in out and "witness labels" in out


def test_explain_unknown_case_exits_2(quick_report, tmp_path):
    assert cli.main(["explain", "no/such/case", "--report", quick_report]) == 2
    assert cli.main(["explain", "duality/sup/00", "--report", str(tmp_path / "none.jsonl")]) == 2


def test_module_entry_point(tmp_path):
    env = dict(os.environ, **{cli.REPORT_ENV: str(tmp_path)})
    path = write_cfg(tmp_path, {"seed": 1, "suites": ["regularity"]})
    res = subprocess.run([sys.executable, "-m", "convexrep", "run", path, "--quick"], capture_output=True,
                         text=True, env=env)
    assert res.returncode == 0
    assert "regularity" in res.stdout
    assert (tmp_path / cli.REPORT_NAME).exists()
