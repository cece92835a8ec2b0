import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varcalc import convgeom as G


# ---------------------------------------------------------------------------
# convex hull


def test_hull_interval():
    p = G.convex_hull([[-1.0], [1.0], [0.0]])
    assert p.vertices.tolist() == [[-1.0], [1.0]]


def test_hull_removes_interior_point():
    p = G.convex_hull([[0, 0], [1, 0], [0, 1], [0.25, 0.25]])
    assert p.num_vertices == 3
    assert not any(np.allclose(v, [0.25, 0.25]) for v in p.vertices)


def test_hull_single_point():
    p = G.convex_hull([[2.0, 3.0]])
    assert p.vertices.tolist() == [[2.0, 3.0]]


def test_hull_rejects_high_dim():
    with pytest.raises(G.DimensionError):
        G.convex_hull(np.zeros((2, 5)))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(-4, 4), st.integers(-4, 4)).map(
            lambda t: [float(t[0]) / 2, float(t[1]) / 2]
        ),
        min_size=1,
        max_size=8,
    )
)
def test_hull_idempotent(points):
    h1 = G.convex_hull(points)
    h2 = G.convex_hull(h1.vertices)
    assert G.polytopes_equal(h1, h2)


def test_hull_collinear_degenerate():
    p = G.convex_hull([[0, 0], [1, 1], [2, 2], [0.5, 0.5]])
    assert p.num_vertices == 2


# ---------------------------------------------------------------------------
# LP


def test_lp_infeasible_pair():
    lp = G.LPProblem(
        1,
        [G.LinearConstraint([1.0], ">=", 0.0), G.LinearConstraint([1.0], "<=", -1.0)],
        lower=np.array([-np.inf]),
    )
    assert isinstance(G.lp_feasible(lp), G.LPInfeasible)


def test_lp_feasible_simplex_edge():
    lp = G.LPProblem(2, [G.LinearConstraint([1.0, 1.0], "==", 1.0)])
    out = G.lp_feasible(lp)
    assert isinstance(out, G.LPFeasible)
    x = out.assignment
    assert x[0] + x[1] == pytest.approx(1.0, abs=1e-9)
    assert np.all(x >= -1e-9)


def test_lp_membership_halfway():
    # 0.5 = 0.25 * (-1) + 0.75 * 1
    base = G.Polytope.create([[-1.0], [1.0]])
    out = G.minkowski_membership([0.5], base)
    assert isinstance(out, G.Membership)
    assert out.base_weights == pytest.approx([0.25, 0.75], abs=1e-8)


def test_lp_certificates_verify():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(2, 5))
        cons = []
        for _ in range(int(rng.integers(1, 4))):
            sense = ["<=", ">=", "=="][int(rng.integers(0, 3))]
            cons.append(G.LinearConstraint(rng.integers(-3, 4, n).astype(float), sense, float(rng.integers(-3, 4))))
        out = G.lp_feasible(G.LPProblem(n, cons, upper=np.full(n, 10.0)))
        assert not isinstance(out, G.LPBreakdown)
        if isinstance(out, G.LPFeasible):
            x = out.assignment
            for c in cons:
                v = float(c.coeffs @ x)
                if c.sense == "<=":
                    assert v <= c.rhs + 1e-7
                elif c.sense == ">=":
                    assert v >= c.rhs - 1e-7
                else:
                    assert v == pytest.approx(c.rhs, abs=1e-7)


# ---------------------------------------------------------------------------
# minkowski membership


def test_membership_midpoint_trivial():
    base = G.Polytope.create([[-1.0], [1.0]])
    assert isinstance(G.minkowski_membership([0.0], base), G.Membership)


def test_membership_scaled_term():
    # (0,1) + lambda * (-1,-1) = (-1,0) at lambda = 1
    base = G.Polytope.singleton([0.0, 1.0])
    term = G.Polytope.singleton([-1.0, -1.0])
    out = G.minkowski_membership([-1.0, 0.0], base, scaled_terms=[term])
    assert isinstance(out, G.Membership)
    assert out.scales == pytest.approx([1.0], abs=1e-8)


def test_membership_scaled_term_wrong_side():
    base = G.Polytope.singleton([0.0])
    term = G.Polytope.singleton([-1.0])
    out = G.minkowski_membership([2.0], base, scaled_terms=[term])
    assert isinstance(out, G.NotMember)
    assert out.margin > 0


def test_membership_with_cone():
    base = G.Polytope.singleton([1.0])
    cone = G.ConeSpec.from_generators(1, [[1.0]])
    assert isinstance(G.minkowski_membership([5.0], base, cones=[cone]), G.Membership)
    assert isinstance(G.minkowski_membership([0.5], base, cones=[cone]), G.NotMember)


def test_membership_agrees_with_brute_force_small():
    # randomized instances on a lattice so the dense weight grid can
    # reproduce any member exactly; see test_acceptance for the full run
    from tests.brute import brute_force_membership, random_instance

    rng = np.random.default_rng(99)
    for i in range(40):
        inst = random_instance(rng)
        lp = G.minkowski_membership(inst.target, inst.base, scaled_terms=inst.scaled)
        brute = brute_force_membership(inst)
        assert isinstance(lp, (G.Membership, G.NotMember))
        assert isinstance(lp, G.Membership) == inst.is_member
        assert brute == inst.is_member


# ---------------------------------------------------------------------------
# clipping and distances


def test_clip_interval():
    p = G.Polytope.create([[-1.0], [1.0]])
    out = G.clip_polytope(p, np.array([[1.0]]), np.array([0.25]))
    assert G.polytopes_equal(out, G.Polytope.create([[-1.0], [0.25]]))


def test_clip_to_empty():
    p = G.Polytope.create([[-1.0], [1.0]])
    out = G.clip_polytope(p, np.array([[1.0], [-1.0]]), np.array([-0.5, -0.5]))
    assert out is None


def test_clip_triangle_to_point():
    tri = G.Polytope.create([[2, 0], [1, 1], [0, 2]])
    dirs = G.directions(2, 16)
    offsets = np.array([float(d @ np.array([1.0, 1.0])) for d in dirs])
    out = G.clip_polytope(tri, dirs, offsets)
    assert out is not None
    assert np.all(np.linalg.norm(out.vertices - np.array([1.0, 1.0]), axis=1) < 1e-9)


def test_point_distance_exact():
    sq = G.Polytope.create([[0, 0], [1, 0], [0, 1], [1, 1]])
    assert G.point_to_polytope_distance([2.0, 0.5], sq) == pytest.approx(1.0)
    assert G.point_to_polytope_distance([0.5, 0.5], sq) == pytest.approx(0.0)
    assert G.point_to_polytope_distance([2.0, 2.0], sq) == pytest.approx(np.sqrt(2.0))


# ---------------------------------------------------------------------------
# hausdorff


def test_hausdorff_identity():
    p = G.PolytopeUnion.single(G.Polytope.create([[-1.0], [1.0]]))
    assert G.hausdorff_distance(p, p) == pytest.approx(0.0, abs=1e-12)


def test_hausdorff_two_points():
    a = G.PolytopeUnion.single(G.Polytope.singleton([0.0]))
    b = G.PolytopeUnion.single(G.Polytope.singleton([1.0]))
    assert G.hausdorff_distance(a, b) == pytest.approx(1.0)


def test_hausdorff_union_vs_hull():
    union = G.PolytopeUnion.create([G.Polytope.singleton([-1.0]), G.Polytope.singleton([1.0])])
    interval = G.PolytopeUnion.single(G.Polytope.create([[-1.0], [1.0]]))
    assert G.hausdorff_distance(union, interval) == pytest.approx(1.0, abs=1e-9)


def test_hausdorff_symmetric_convex():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = G.PolytopeUnion.single(G.Polytope.create(rng.uniform(-2, 2, (4, 2))))
        b = G.PolytopeUnion.single(G.Polytope.create(rng.uniform(-2, 2, (4, 2))))
        assert G.hausdorff_distance(a, b) == pytest.approx(G.hausdorff_distance(b, a), abs=1e-12)


def test_hausdorff_zero_iff_equal_canonical():
    a = G.PolytopeUnion.single(G.Polytope.create([[0, 0], [1, 0], [0, 1]]))
    b = G.PolytopeUnion.single(G.Polytope.create([[0, 0], [1, 0], [0, 1], [0.2, 0.2]]))
    assert G.hausdorff_distance(a, b) == pytest.approx(0.0, abs=1e-12)
    assert a.canonical_key() == b.canonical_key()
    c = G.PolytopeUnion.single(G.Polytope.create([[0, 0], [1, 0], [0, 1.5]]))
    assert G.hausdorff_distance(a, c) > 1e-6
    assert a.canonical_key() != c.canonical_key()


# ---------------------------------------------------------------------------
# unions and cones


def test_union_absorbs_contained_parts():
    u = G.PolytopeUnion.create(
        [
            G.Polytope.create([[-1.0], [1.0]]),
            G.Polytope.singleton([0.5]),
            G.Polytope.singleton([-1.0]),
        ]
    )
    assert len(u.parts) == 1


def test_union_keeps_distinct_parts():
    u = G.PolytopeUnion.create([G.Polytope.singleton([0.0]), G.Polytope.singleton([1.0])])
    assert len(u.parts) == 2


def test_minkowski_sum_intervals():
    a = G.Polytope.create([[-1.0], [1.0]])
    b = G.Polytope.singleton([1.0])
    assert G.minkowski_sum(a, b).vertices.tolist() == [[0.0], [2.0]]


def test_cone_contains():
    c = G.ConeSpec.from_generators(2, [[-1.0, -1.0], [1.0, -1.0]])
    assert c.contains([0.0, -5.0])
    assert c.contains([0.0, 0.0])
    assert not c.contains([0.0, 1.0])
    assert not c.contains([2.0, 0.1])


def test_cone_full_space_and_zero():
    full = G.ConeSpec.full_space(2)
    assert full.contains([3.0, -7.0])
    zero = G.ConeSpec.zero(2)
    assert zero.is_zero()
    assert not full.is_zero()


def test_cones_equal_modulo_generators():
    a = G.ConeSpec.from_generators(2, [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b = G.ConeSpec.from_generators(2, [[0.0, 2.0], [3.0, 0.0]])
    assert G.cones_equal(a, b)
    c = G.ConeSpec.from_generators(2, [[1.0, 0.0]])
    assert not G.cones_equal(a, c)
