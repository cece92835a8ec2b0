import numpy as np
import pytest

from varcalc import convgeom as G
from varcalc import expr as E
from varcalc import subdiff as S
from varcalc import valuefn as V

XY = E.VarSpace.of("x", "y")
FAST = S.SampleParams(dirs_per_radius=32)


def f(t):
    return E.parse_function(t, XY)


def parabola_problem():
    # minimize y subject to x^2 - y <= 0
    return V.ParametricProblem(f("y"), (f("(- (* x x) y)"),), 1, 1)


def bang_problem():
    # minimize x*y subject to |y| - 1 <= 0; value function -|x|
    return V.ParametricProblem(f("(* x y)"), (f("(- (abs y) 1)"),), 1, 1)


def w_problem():
    # minimize y subject to -x - y <= 0; value function -x
    return V.ParametricProblem(f("y"), (f("(- 0 (+ x y))"),), 1, 1)


GRID = V.GridSpec(y_box=((-2.0, 2.0),))


# ---------------------------------------------------------------------------
# evaluate_value


def test_value_parabola_at_half():
    out = V.evaluate_value(parabola_problem(), [0.5], GRID)
    assert out.theta == pytest.approx(0.25, abs=1e-4)
    assert min(abs(y[0] - 0.25) for y in out.argmins) <= 1e-4


def test_value_bang_at_one():
    out = V.evaluate_value(bang_problem(), [1.0], GRID)
    assert out.theta == pytest.approx(-1.0, abs=1e-9)
    assert len(out.argmins) == 1
    assert out.argmins[0][0] == pytest.approx(-1.0, abs=1e-9)


def test_value_infeasible_on_box():
    prob = V.ParametricProblem(f("y"), (f("(+ y 1)"),), 1, 1)
    with pytest.raises(V.InfeasibleOnBox) as err:
        V.evaluate_value(prob, [0.0], V.GridSpec(y_box=((0.0, 2.0),)))
    assert err.value.certified_empty
    assert err.value.margin == pytest.approx(1.0, abs=1e-9)


def test_value_refinement_monotone():
    prob = parabola_problem()
    coarse = V.evaluate_value(prob, [0.3], V.GridSpec(y_box=((-2.0, 2.0),), resolution=201))
    fine = V.evaluate_value(prob, [0.3], V.GridSpec(y_box=((-2.0, 2.0),), resolution=401))
    assert fine.theta <= coarse.theta + 1e-12


def test_value_refine_passes_reduce_error():
    out = V.evaluate_value(parabola_problem(), [0.31], GRID, refine=2)
    assert out.theta == pytest.approx(0.31**2, abs=1e-6)


def test_value_line_matches_analytic_w():
    xs = [[x] for x in np.round(np.arange(-1.0, 1.0001, 0.1), 10)]
    samples = V.value_function_on_line(w_problem(), xs, GRID)
    for x, s in zip(xs, samples):
        assert s.theta == pytest.approx(-x[0], abs=1e-6)


# ---------------------------------------------------------------------------
# inner semicontinuity probe


def test_isc_holds_for_parabola():
    report = V.inner_semicontinuity_probe(parabola_problem(), [0.0, 0.0], GRID, FAST)
    assert report.verdict


def test_isc_fails_for_bang():
    report = V.inner_semicontinuity_probe(bang_problem(), [0.0, 1.0], GRID, FAST)
    assert not report.verdict
    assert report.worst_distance == pytest.approx(2.0, abs=1e-6)


def test_isc_trivial_for_constant_cost():
    prob = V.ParametricProblem(f("0.0"), (f("(- (abs y) 1)"),), 1, 1)
    report = V.inner_semicontinuity_probe(prob, [0.0, 0.5], GRID, FAST)
    assert report.verdict


def test_isc_rejects_non_optimal_reference():
    with pytest.raises(V.ValueFnError):
        V.inner_semicontinuity_probe(parabola_problem(), [0.0, 1.0], GRID, FAST)


# ---------------------------------------------------------------------------
# estimates


def test_estimate_parabola_at_origin():
    out = V.value_subdiff_estimate(parabola_problem(), [0.0, 0.0], GRID, FAST)
    assert len(out.basic.parts) == 1
    part = out.basic.parts[0]
    assert part.num_vertices == 1
    assert part.vertices[0] == pytest.approx([0.0], abs=1e-9)
    assert all(c.is_zero() for c in out.singular)


def test_estimate_refuses_without_isc():
    with pytest.raises(V.HypothesisNotSatisfied):
        V.value_subdiff_estimate(bang_problem(), [0.0, -1.0], GRID, FAST)


def test_estimate_override_recorded():
    out = V.value_subdiff_estimate(
        bang_problem(), [0.0, -1.0], GRID, FAST, override_isc=True
    )
    statuses = {e["hypothesis"]: e["status"] for e in out.ledger}
    assert statuses["argminimum mapping inner semicontinuous at the candidate"] == "overridden"
    # one-sided estimate: the x-block of the cost gradient at (0, -1)
    assert out.basic.parts[0].vertices[0] == pytest.approx([-1.0], abs=1e-9)


def test_estimate_w_problem():
    out = V.value_subdiff_estimate(w_problem(), [0.0, 0.0], GRID, FAST)
    assert out.basic.parts[0].vertices[0] == pytest.approx([-1.0], abs=1e-9)


# ---------------------------------------------------------------------------
# Lipschitz verdict


def test_lipschitz_verdict_parabola():
    out = V.lipschitz_verdict(parabola_problem(), [0.0, 0.0], GRID, FAST)
    assert out.verdict
    assert out.modulus_estimate <= 0.0101


def test_lipschitz_verdict_sqrt_fails():
    prob = V.ParametricProblem(f("y"), (f("(- (* y y) x)"),), 1, 1)
    out = V.lipschitz_verdict(prob, [0.0, 0.0], GRID, FAST, override_isc=True)
    assert not out.verdict


def test_singular_consistency_no_blowup_when_lipschitz():
    # positive verdict: difference quotients stay within twice the
    # estimated modulus; the failing case blows up like 1/sqrt(r)
    bang = bang_problem()
    verdict = V.lipschitz_verdict(bang, [0.0, -1.0], GRID, FAST, override_isc=True)
    assert verdict.verdict
    theta0 = V.evaluate_value(bang, [0.0], GRID, refine=2).theta
    for r in FAST.radii[:3]:
        for d in (1.0, -1.0):
            th = V.evaluate_value(bang, [r * d], GRID, refine=2).theta
            assert abs(th - theta0) / r <= 2.0 * max(verdict.modulus_estimate, 1e-3)

    sqrt_prob = V.ParametricProblem(f("y"), (f("(- (* y y) x)"),), 1, 1)
    bad = V.lipschitz_verdict(sqrt_prob, [0.0, 0.0], GRID, FAST, override_isc=True)
    assert not bad.verdict
    quotients = []
    for r in (1e-2, 1e-4):
        th = V.evaluate_value(sqrt_prob, [r], GRID, refine=2).theta
        quotients.append(abs(th - 0.0) / r)
    assert quotients[1] > 5 * quotients[0]  # blow-up as r shrinks


def test_lipschitz_verdict_bang_with_override():
    out = V.lipschitz_verdict(bang_problem(), [0.0, -1.0], GRID, FAST, override_isc=True)
    assert out.verdict
    xs = [[x] for x in np.round(np.arange(-1.0, 1.0001, 0.1), 10)]
    for x, s in zip(xs, V.value_function_on_line(bang_problem(), xs, GRID)):
        assert s.theta == pytest.approx(-abs(x[0]), abs=1e-4)


# ---------------------------------------------------------------------------
# regular-subdifferential outer approximation of theta


def test_regular_value_outer_w_problem():
    out = V.regular_value_subdiff_outer(w_problem(), [0.0], GRID, FAST)
    assert out is not None
    assert G.point_to_polytope_distance([-1.0], out) <= 1e-9


def test_regular_value_outer_empty_for_concave_kink():
    out = V.regular_value_subdiff_outer(bang_problem(), [0.0], GRID, FAST)
    assert out is None
