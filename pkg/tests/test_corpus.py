import json
from dataclasses import replace

import numpy as np
import pytest

from varcalc import cli
from varcalc import corpus as C
from varcalc import expr as E
from varcalc import subdiff as S

FAST = S.SampleParams(dirs_per_radius=32)


def test_corpus_has_twenty_entries_with_required_functions():
    assert len(C.CORPUS) == 20
    texts = {e.text for e in C.CORPUS}
    for required in ("(abs x)", "(- (abs x))", "(min 0 x)", "(max x (* 2 x))", "(max x y)", "(* x x)"):
        assert required in texts
    dims = {e.space.dim for e in C.CORPUS}
    assert dims == {1, 2}


def test_corpus_expected_values_are_canonical():
    for entry in C.CORPUS:
        union = entry.expected_union()
        assert union.dim == entry.space.dim


def test_verify_suite_passes_on_builtin_corpus():
    report = C.run_verify_suite(C.CORPUS, params=FAST)
    assert report.all_passed, [c.as_json() for c in report.failing()]
    rules = {c.rule for c in report.checks}
    assert {
        "expected-value",
        "oracle-consistency",
        "convex-reduction",
        "sum-rule",
        "intersection-rule-refusal",
        "difference-rule",
        "coderivative-criterion",
        "extremal-principle",
    } <= rules


def test_verify_suite_flags_injected_wrong_gradient():
    corrupted = list(C.CORPUS[:3])
    bad = replace(corrupted[0], expected_basic=(((-1.0,), (2.5,)),))
    corrupted[0] = bad
    report = C.run_verify_suite(tuple(corrupted), params=FAST, with_oracle=False)
    assert not report.all_passed
    failing = report.failing()
    assert any(c.rule == "expected-value" and c.entry == bad.name for c in failing)


def test_cli_verify_exit_one_names_failing_rule(monkeypatch, capsys):
    corrupted = list(C.CORPUS[:3])
    corrupted[0] = replace(corrupted[0], expected_basic=(((9.0,),),))
    monkeypatch.setattr(C, "CORPUS", tuple(corrupted))
    code = cli.main(["verify", "--builtin-corpus", "--json", "--dirs", "16"])
    out = capsys.readouterr().out
    assert code == 1
    report = json.loads(out)
    rules = {c["rule"] for c in report["results"]["failed"]}
    assert "expected-value" in rules


def test_pattern_census_reported():
    f = E.parse_function("(min 0 x)", E.VarSpace.of("x"))
    result = S.full_subdifferential(f, [0.0], FAST)
    census = result.witnesses["pattern_census"]
    assert len(census) >= 2
    assert any(c["at_smallest_radius"] for c in census)


def test_branch_restricted_eval_matches_where_uniquely_active():
    # fixing the branch reproduces the function on its activity region
    f = E.parse_function("(max (* x x) x)", E.VarSpace.of("x"))
    for p, expect_piece in [(0.5, "x"), (-0.5, "(* x x)")]:
        pat = E.active_pattern(f, [p])
        assert pat.is_smooth()
        restricted = E.restrict_to_pattern(f, pat)
        rng = np.random.default_rng(1)
        for u in p + rng.uniform(-0.05, 0.05, 12):
            assert E.evaluate(restricted, [u]) == pytest.approx(E.evaluate(f, [u]), abs=1e-12)
