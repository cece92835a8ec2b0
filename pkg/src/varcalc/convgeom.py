"""Small-dimension convex geometry in vertex representation.

Polytopes are stored as lists of vertices (V-representation); halfspace
data only appears transiently inside LP constraints.  All geometry is
floating point with tol_lp = 1e-9 for LP feasibility and tol_geom = 1e-8
for canonicalization.  Cones fed into membership LPs are capped at
coefficient R_CONE so the phase-1 simplex works with bounded variables.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL_LP = 1e-9
TOL_GEOM = 1e-8
R_CONE = 1e6
HULL_MAX_DIM = 4
MAX_LP_VARS = 512


class GeometryError(ValueError):
    pass


class DimensionError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# Linear programming: phase-1 simplex with Bland's rule (feasibility only)


@dataclass
class LinearConstraint:
    coeffs: np.ndarray
    sense: str  # "<=", ">=", "=="
    rhs: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.sense not in ("<=", ">=", "=="):
            raise GeometryError(f"bad constraint sense {self.sense!r}")
        if not np.all(np.isfinite(self.coeffs)) or not math.isfinite(self.rhs):
            raise GeometryError("constraint has non-finite coefficients")


@dataclass
class LPProblem:
    """Feasibility problem: find x with lower <= x <= upper satisfying all
    constraints.  Objective optimization is out of scope; only the
    feasibility mode is implemented."""

    num_vars: int
    constraints: list[LinearConstraint] = field(default_factory=list)
    lower: np.ndarray | None = None  # default 0
    upper: np.ndarray | None = None  # default +inf

    def __post_init__(self):
        if self.num_vars <= 0 or self.num_vars > MAX_LP_VARS:
            raise GeometryError(f"num_vars must be in 1..{MAX_LP_VARS}")
        if self.lower is None:
            self.lower = np.zeros(self.num_vars)
        else:
            self.lower = np.asarray(self.lower, dtype=float)
        if self.upper is None:
            self.upper = np.full(self.num_vars, np.inf)
        else:
            self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.num_vars,) or self.upper.shape != (self.num_vars,):
            raise GeometryError("bound arrays must match num_vars")


@dataclass
class LPFeasible:
    assignment: np.ndarray


@dataclass
class LPInfeasible:
    margin: float  # residual infeasibility left by phase 1


@dataclass
class LPBreakdown:
    reason: str


LPOutcome = LPFeasible | LPInfeasible | LPBreakdown


def lp_feasible(problem: LPProblem) -> LPOutcome:
    """Phase-1 simplex with Bland's rule.

    Free variables are split, shifted variables absorb finite lower
    bounds, finite upper bounds become rows.  Numerical breakdown is a
    distinct outcome, never silently reported as infeasible.
    """
    n = problem.num_vars
    lower = problem.lower
    upper = problem.upper

    # Column layout for the standard-form variables.
    col_of: list[tuple[int, float, int]] = []  # (orig index, sign, shift-kind)
    shifts = np.zeros(n)
    cols = []
    for j in range(n):
        lo, hi = lower[j], upper[j]
        if math.isfinite(lo):
            shifts[j] = lo
            cols.append((j, 1.0))
        elif math.isinf(lo) and lo < 0:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
        else:
            raise GeometryError("lower bound must be finite or -inf")

    ncols = len(cols)
    rows: list[np.ndarray] = []
    senses: list[str] = []
    rhss: list[float] = []

    def expand(coeffs: np.ndarray) -> np.ndarray:
        out = np.zeros(ncols)
        for k, (j, sgn) in enumerate(cols):
            out[k] = coeffs[j] * sgn
        return out

    for c in problem.constraints:
        if c.coeffs.shape != (n,):
            raise DimensionError("constraint length does not match num_vars")
        rows.append(expand(c.coeffs))
        senses.append(c.sense)
        rhss.append(c.rhs - float(c.coeffs @ shifts))
    for j in range(n):
        hi = upper[j]
        if math.isfinite(hi):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(expand(e))
            senses.append("<=")
            rhss.append(hi - shifts[j])

    m = len(rows)
    if m == 0:
        x = shifts.copy()
        for k, (j, sgn) in enumerate(cols):
            pass
        return LPFeasible(x)

    # Slack columns for inequalities, then standard-form equalities.
    A = np.array(rows, dtype=float)
    b = np.array(rhss, dtype=float)
    slack_cols = []
    for i, s in enumerate(senses):
        if s == "<=":
            slack_cols.append((i, 1.0))
        elif s == ">=":
            slack_cols.append((i, -1.0))
    S = np.zeros((m, len(slack_cols)))
    for k, (i, sgn) in enumerate(slack_cols):
        S[i, k] = sgn
    A = np.hstack([A, S])

    neg = b < 0
    A[neg] *= -1.0
    b = np.abs(b)

    result = _phase1_simplex(A, b)
    if isinstance(result, (LPInfeasible, LPBreakdown)):
        return result
    z = result
    x = shifts.copy()
    for k, (j, sgn) in enumerate(cols):
        x[j] += sgn * z[k]

    # Certificate check: the assignment must satisfy everything.
    for c in problem.constraints:
        v = float(c.coeffs @ x)
        ok = (
            v <= c.rhs + 1e-7
            if c.sense == "<="
            else v >= c.rhs - 1e-7
            if c.sense == ">="
            else abs(v - c.rhs) <= 1e-7
        )
        if not ok:
            return LPBreakdown(f"assignment violates constraint by {abs(v - c.rhs):.3e}")
    if np.any(x < lower - 1e-7) or np.any(x > upper + 1e-7):
        return LPBreakdown("assignment violates variable bounds")
    return LPFeasible(x)


def _phase1_simplex(A: np.ndarray, b: np.ndarray) -> np.ndarray | LPInfeasible | LPBreakdown:
    """Minimize the sum of artificial variables for Ax = b, x >= 0, b >= 0."""
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    # Objective row: reduced costs for min sum(artificials) with the
    # artificial basis; equals -(column sums of A), rhs -(sum b).
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    max_iter = 2000 + 40 * (m + n)
    for _ in range(max_iter):
        if not np.all(np.isfinite(T)):
            return LPBreakdown("non-finite tableau entries")
        # Bland: entering column = smallest index with negative reduced cost.
        enter = -1
        for j in range(n + m):
            if T[m, j] < -TOL_LP:
                enter = j
                break
        if enter < 0:
            break
        # Ratio test, Bland tie-break on the leaving basis variable index.
        leave = -1
        best = math.inf
        for i in range(m):
            a = T[i, enter]
            if a > TOL_LP:
                ratio = T[i, -1] / a
                if ratio < best - TOL_LP or (
                    abs(ratio - best) <= TOL_LP and (leave < 0 or basis[i] < basis[leave])
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            return LPBreakdown("unbounded pivot column in phase 1")
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
    else:
        return LPBreakdown("iteration limit exceeded")

    objective = -T[m, -1]
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    if objective > TOL_LP * scale * 10:
        return LPInfeasible(float(objective))
    x = np.zeros(n)
    for i, bv in enumerate(basis):
        if bv < n:
            x[bv] = T[i, -1]
    x[np.abs(x) < 1e-13] = 0.0
    return x


# ---------------------------------------------------------------------------
# Polytopes


def _as_vertex_array(points: Iterable[Sequence[float]], dim: int | None = None) -> np.ndarray:
    V = np.asarray(list(points), dtype=float)
    if V.ndim == 1:
        V = V.reshape(-1, 1)
    if V.size == 0:
        raise GeometryError("empty vertex list")
    if dim is not None and V.shape[1] != dim:
        raise DimensionError(f"expected dim {dim}, got {V.shape[1]}")
    if not np.all(np.isfinite(V)):
        raise GeometryError("vertices must be finite")
    return V


def _dedupe_rows(V: np.ndarray, tol: float) -> np.ndarray:
    keep: list[int] = []
    for i in range(V.shape[0]):
        if all(np.linalg.norm(V[i] - V[j]) > tol for j in keep):
            keep.append(i)
    return V[keep]


def _lex_sorted(V: np.ndarray) -> np.ndarray:
    order = np.lexsort(tuple(np.round(V[:, k], 10) for k in range(V.shape[1] - 1, -1, -1)))
    return V[order]


def _in_hull_lp(target: np.ndarray, V: np.ndarray, tol: float = 1e-7) -> bool:
    k = V.shape[0]
    dim = V.shape[1]
    cons = [LinearConstraint(np.ones(k), "==", 1.0)]
    for d in range(dim):
        cons.append(LinearConstraint(V[:, d], "==", float(target[d])))
    out = lp_feasible(LPProblem(k, cons))
    if isinstance(out, LPBreakdown):
        raise GeometryError(f"LP breakdown during hull membership: {out.reason}")
    return isinstance(out, LPFeasible)


@dataclass(frozen=True)
class Polytope:
    """Convex polytope as the hull of its stored vertices.

    A canonical polytope lists only extreme points (no vertex is a convex
    combination of the others), deduplicated at tol_geom and sorted
    lexicographically.
    """

    vertices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _as_vertex_array(self.vertices))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @staticmethod
    def create(points: Iterable[Sequence[float]], canonicalize: bool = True) -> "Polytope":
        V = _as_vertex_array(points)
        if canonicalize:
            return convex_hull(V)
        return Polytope(V)

    @staticmethod
    def singleton(point: Sequence[float]) -> "Polytope":
        return Polytope(np.asarray(point, dtype=float).reshape(1, -1))

    def contains(self, point: Sequence[float], tol: float = 1e-7) -> bool:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise DimensionError("point dim mismatch")
        if self.num_vertices == 1:
            return bool(np.linalg.norm(p - self.vertices[0]) <= tol)
        return _in_hull_lp(p, self.vertices, tol)

    def support(self, direction: np.ndarray) -> float:
        return float(np.max(self.vertices @ np.asarray(direction, dtype=float)))

    def translate(self, v: Sequence[float]) -> "Polytope":
        return Polytope(self.vertices + np.asarray(v, dtype=float))

    def scale(self, c: float) -> "Polytope":
        return Polytope(self.vertices * float(c))

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def sample_points(self, per_edge: int = 9) -> np.ndarray:
        """Deterministic points of the polytope: vertices, centroid, and
        evenly spaced points on every vertex-pair segment."""
        V = self.vertices
        pts = [V]
        if V.shape[0] >= 2:
            ts = np.linspace(0.0, 1.0, per_edge + 2)[1:-1]
            for i, j in itertools.combinations(range(V.shape[0]), 2):
                seg = np.outer(1 - ts, V[i]) + np.outer(ts, V[j])
                pts.append(seg)
            pts.append(self.centroid().reshape(1, -1))
        return np.vstack(pts)

    def canonical_key(self) -> tuple:
        return tuple(tuple(round(float(x), 9) for x in v) for v in self.vertices)


def convex_hull(points: Iterable[Sequence[float]]) -> Polytope:
    """Canonicalized hull of the input points (extreme points only).

    Works in any dimension up to HULL_MAX_DIM by LP-based extreme point
    filtering; degenerate (flat) inputs are fine.
    """
    V = _as_vertex_array(points)
    if V.shape[1] > HULL_MAX_DIM:
        raise DimensionError(f"convex_hull supports dim <= {HULL_MAX_DIM}, got {V.shape[1]}")
    V = _dedupe_rows(V, TOL_GEOM)
    if V.shape[0] > 1:
        keep = []
        alive = list(range(V.shape[0]))
        for idx in range(V.shape[0]):
            others = [j for j in alive if j != idx]
            if not others:
                keep.append(idx)
                continue
            if not _in_hull_lp(V[idx], V[others]):
                keep.append(idx)
            else:
                alive.remove(idx)
        V = V[keep]
    return Polytope(_lex_sorted(V))


def polytopes_equal(a: Polytope, b: Polytope, tol: float = TOL_GEOM) -> bool:
    if a.dim != b.dim or a.num_vertices != b.num_vertices:
        return False
    return bool(np.all(np.linalg.norm(a.vertices - b.vertices, axis=1) <= tol))


def clip_polytope(
    poly: Polytope, normals: np.ndarray, offsets: np.ndarray, tol: float = TOL_GEOM
) -> Polytope | None:
    """Intersect a polytope with halfspaces {v : <a, v> <= beta}.

    Exact in any dimension: the vertices of P cut by one halfspace are
    the surviving vertices plus the crossings of vertex-pair segments
    with the hyperplane (crossings from non-edge pairs are interior and
    vanish under re-canonicalization).  Returns None when empty.
    """
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    V = poly.vertices
    for a, beta in zip(normals, offsets):
        vals = V @ a
        inside = vals <= beta + tol
        if np.all(inside):
            continue
        if not np.any(inside):
            return None
        new_pts = [V[inside]]
        ins = np.where(inside)[0]
        outs = np.where(~inside)[0]
        for i in ins:
            for j in outs:
                denom = vals[j] - vals[i]
                if abs(denom) < 1e-15:
                    continue
                t = (beta - vals[i]) / denom
                t = min(max(t, 0.0), 1.0)
                new_pts.append(((1 - t) * V[i] + t * V[j]).reshape(1, -1))
        V = np.vstack(new_pts)
        if V.shape[0] > 4 * (poly.dim + 1):
            V = convex_hull(V).vertices
    return convex_hull(V)


# ---------------------------------------------------------------------------
# Distances


def _project_affine_subset(p: np.ndarray, S: np.ndarray) -> tuple[float, np.ndarray]:
    """Projection of p onto aff(S) with barycentric weights summing to one.

    Solved as unconstrained least squares after parametrizing the weights
    on the sum-to-one affine subspace, so degenerate subsets are fine.
    """
    k = S.shape[0]
    w0 = np.full(k, 1.0 / k)
    # nullspace basis of the all-ones row
    _, _, vt = np.linalg.svd(np.ones((1, k)))
    N = vt[1:].T  # k x (k-1)
    A = S.T @ N  # dim x (k-1)
    rhs = p - S.T @ w0
    z, _, _, _ = np.linalg.lstsq(A, rhs, rcond=None)
    w = w0 + N @ z
    q = S.T @ w
    return float(np.linalg.norm(p - q)), w


def point_to_polytope_distance(p: Sequence[float], poly: Polytope) -> float:
    """Exact Euclidean distance from a point to conv(vertices).

    Enumerates faces via vertex subsets of size <= dim+1; by the
    Caratheodory argument at least one subset realizes the projection.
    """
    p = np.asarray(p, dtype=float)
    V = poly.vertices
    if p.shape != (poly.dim,):
        raise DimensionError("point dim mismatch")
    best = math.inf
    kmax = min(V.shape[0], poly.dim + 1)
    for size in range(1, kmax + 1):
        for subset in itertools.combinations(range(V.shape[0]), size):
            S = V[list(subset)]
            if size == 1:
                d = float(np.linalg.norm(p - S[0]))
                best = min(best, d)
                continue
            d, w = _project_affine_subset(p, S)
            if np.all(w >= -1e-9):
                best = min(best, d)
    return best


# ---------------------------------------------------------------------------
# Unions of polytopes


@dataclass(frozen=True)
class PolytopeUnion:
    """Finite union of polytopes of equal dimension; parts are canonical
    and pairwise distinct, with parts contained in other parts removed."""

    parts: tuple[Polytope, ...]

    def __post_init__(self):
        if not self.parts:
            raise GeometryError("union needs at least one part")
        dim = self.parts[0].dim
        for p in self.parts:
            if p.dim != dim:
                raise DimensionError("union parts have mixed dims")

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    @staticmethod
    def create(parts: Iterable[Polytope], canonicalize: bool = True) -> "PolytopeUnion":
        ps = [convex_hull(p.vertices) if canonicalize else p for p in parts]
        if not ps:
            raise GeometryError("union needs at least one part")
        if canonicalize:
            ps = _absorb_parts(ps)
        ps.sort(key=lambda p: (p.num_vertices, p.canonical_key()))
        return PolytopeUnion(tuple(ps))

    @staticmethod
    def single(poly: Polytope) -> "PolytopeUnion":
        return PolytopeUnion.create([poly])

    def hull(self) -> Polytope:
        return convex_hull(np.vstack([p.vertices for p in self.parts]))

    def all_vertices(self) -> np.ndarray:
        return np.vstack([p.vertices for p in self.parts])

    def contains(self, point: Sequence[float], tol: float = 1e-7) -> bool:
        return any(p.contains(point, tol) for p in self.parts)

    def negate(self) -> "PolytopeUnion":
        return PolytopeUnion.create([Polytope(-p.vertices) for p in self.parts])

    def translate(self, v: Sequence[float]) -> "PolytopeUnion":
        return PolytopeUnion.create([p.translate(v) for p in self.parts])

    def canonical_key(self) -> tuple:
        return tuple(p.canonical_key() for p in self.parts)


def _absorb_parts(parts: list[Polytope]) -> list[Polytope]:
    kept: list[Polytope] = []
    for p in sorted(parts, key=lambda q: -q.num_vertices):
        contained = False
        for q in kept:
            if all(q.contains(v) for v in p.vertices):
                contained = True
                break
        if not contained:
            kept.append(p)
    return kept


def unions_equal(a: PolytopeUnion, b: PolytopeUnion, tol: float = TOL_GEOM) -> bool:
    if len(a.parts) != len(b.parts):
        return False
    return all(polytopes_equal(p, q, tol) for p, q in zip(a.parts, b.parts))


def minkowski_sum(a: Polytope, b: Polytope) -> Polytope:
    if a.dim != b.dim:
        raise DimensionError("minkowski sum dim mismatch")
    sums = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, a.dim)
    return convex_hull(sums)


def union_minkowski_sum(a: PolytopeUnion, b: PolytopeUnion) -> PolytopeUnion:
    return PolytopeUnion.create([minkowski_sum(p, q) for p in a.parts for q in b.parts])


# ---------------------------------------------------------------------------
# Cones


@dataclass(frozen=True)
class ConeSpec:
    """Convex cone {sum lambda_g g : lambda_g >= 0} + span(lineality)."""

    dim: int
    generators: np.ndarray
    lineality: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.generators, dtype=float).reshape(-1, self.dim)
        l = np.asarray(self.lineality, dtype=float).reshape(-1, self.dim)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(l))):
            raise GeometryError("cone data must be finite")
        object.__setattr__(self, "generators", g)
        object.__setattr__(self, "lineality", l)

    @staticmethod
    def zero(dim: int) -> "ConeSpec":
        return ConeSpec(dim, np.zeros((0, dim)), np.zeros((0, dim)))

    @staticmethod
    def full_space(dim: int) -> "ConeSpec":
        return ConeSpec(dim, np.zeros((0, dim)), np.eye(dim))

    @staticmethod
    def from_generators(dim: int, generators: Iterable[Sequence[float]]) -> "ConeSpec":
        g = np.asarray(list(generators), dtype=float).reshape(-1, dim)
        return ConeSpec(dim, g, np.zeros((0, dim))).canonicalize()

    def canonicalize(self) -> "ConeSpec":
        g = self.generators
        norms = np.linalg.norm(g, axis=1)
        g = g[norms > TOL_GEOM]
        if g.shape[0]:
            g = g / np.linalg.norm(g, axis=1, keepdims=True)
            g = _dedupe_rows(g, 1e-9)
        l = self.lineality
        if l.shape[0]:
            q, r = np.linalg.qr(l.T)
            keep = np.abs(np.diag(r)) > 1e-12 if r.ndim == 2 else np.array([abs(r) > 1e-12])
            basis = q[:, : l.shape[0]].T[keep[: l.shape[0]]] if l.shape[0] else l
            rank = np.linalg.matrix_rank(l, tol=1e-10)
            basis = q[:, :rank].T
            # canonical signs: first nonzero coordinate positive
            rows = []
            for row in basis:
                nz = np.nonzero(np.abs(row) > 1e-12)[0]
                if nz.size and row[nz[0]] < 0:
                    row = -row
                rows.append(row)
            l = np.array(rows).reshape(-1, self.dim)
        # drop generators already in the cone of the remaining ones
        if g.shape[0] > 1:
            keep_idx: list[int] = []
            alive = list(range(g.shape[0]))
            for i in range(g.shape[0]):
                others = [j for j in alive if j != i]
                sub = ConeSpec(self.dim, g[others], l)
                if others and sub.contains(g[i]):
                    alive.remove(i)
                else:
                    keep_idx.append(i)
            g = g[keep_idx]
        if g.shape[0]:
            g = _lex_sorted(g)
        return ConeSpec(self.dim, g, l)

    def is_zero(self, tol: float = TOL_GEOM) -> bool:
        if self.lineality.shape[0] and np.any(np.linalg.norm(self.lineality, axis=1) > tol):
            return False
        return self.generators.shape[0] == 0 or bool(
            np.all(np.linalg.norm(self.generators, axis=1) <= tol)
        )

    def contains(self, v: Sequence[float], tol: float = 1e-7) -> bool:
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv <= tol:
            return True
        v = v / nv  # scale invariance of cones
        ng = self.generators.shape[0]
        nl = self.lineality.shape[0]
        if ng + nl == 0:
            return False
        k = ng + 2 * nl
        cols = []
        if ng:
            cols.append(self.generators.T)
        if nl:
            cols.append(self.lineality.T)
            cols.append(-self.lineality.T)
        M = np.hstack(cols)
        cons = [LinearConstraint(M[d], "==", float(v[d])) for d in range(self.dim)]
        problem = LPProblem(k, cons, upper=np.full(k, R_CONE))
        out = lp_feasible(problem)
        if isinstance(out, LPBreakdown):
            raise GeometryError(f"LP breakdown in cone membership: {out.reason}")
        return isinstance(out, LPFeasible)

    def translate_columns(self) -> np.ndarray:
        """Columns spanning the cone for LP assembly: generators plus +/-
        lineality vectors; all take nonnegative coefficients."""
        cols = [self.generators]
        if self.lineality.shape[0]:
            cols.append(self.lineality)
            cols.append(-self.lineality)
        return np.vstack([c for c in cols if c.shape[0]]) if any(
            c.shape[0] for c in cols
        ) else np.zeros((0, self.dim))


def cone_sum(cones: Sequence[ConeSpec]) -> ConeSpec:
    dim = cones[0].dim
    gens = np.vstack([c.generators for c in cones]) if cones else np.zeros((0, dim))
    lin = np.vstack([c.lineality for c in cones]) if cones else np.zeros((0, dim))
    return ConeSpec(dim, gens, lin).canonicalize()


def cones_equal(a: ConeSpec, b: ConeSpec) -> bool:
    ca, cb = a.canonicalize(), b.canonicalize()
    for g in ca.generators:
        if not cb.contains(g):
            return False
    for g in cb.generators:
        if not ca.contains(g):
            return False
    for l in ca.lineality:
        if not (cb.contains(l) and cb.contains(-l)):
            return False
    for l in cb.lineality:
        if not (ca.contains(l) and ca.contains(-l)):
            return False
    return True


# ---------------------------------------------------------------------------
# Minkowski-sum membership via one LP


@dataclass
class Membership:
    base_weights: np.ndarray
    scales: np.ndarray  # implied lambda_i per scaled term
    scaled_weights: list[np.ndarray]
    fixed_weights: list[np.ndarray]
    cone_coeffs: list[np.ndarray]
    at_cap: bool


@dataclass
class NotMember:
    margin: float


def minkowski_membership(
    target: Sequence[float],
    base: Polytope,
    scaled_terms: Sequence[Polytope] = (),
    fixed_terms: Sequence[tuple[float, Polytope]] = (),
    cones: Sequence[ConeSpec] = (),
) -> Membership | NotMember:
    """Decide target in base + sum_i lambda_i * scaled_i + sum_j c_j * fixed_j
    + sum_k cone_k with convex weights over base and fixed terms and
    lambda_i >= 0.

    A nonnegatively weighted vertex combination of a scaled term spans
    exactly the union over lambda >= 0 of lambda * conv(term), which makes
    the scale a linear byproduct (lambda_i = sum of that term's weights)
    and the whole decision a single LP.
    """
    t = np.asarray(target, dtype=float)
    dim = base.dim
    if t.shape != (dim,):
        raise DimensionError("target dim mismatch")
    for q in scaled_terms:
        if q.dim != dim:
            raise DimensionError("scaled term dim mismatch")
    for _, q in fixed_terms:
        if q.dim != dim:
            raise DimensionError("fixed term dim mismatch")
    for c in cones:
        if c.dim != dim:
            raise DimensionError("cone dim mismatch")

    blocks: list[np.ndarray] = [base.vertices]
    convex_rows: list[tuple[int, int]] = [(0, base.num_vertices)]
    offset = base.num_vertices
    scaled_slices = []
    for q in scaled_terms:
        blocks.append(q.vertices)
        scaled_slices.append((offset, offset + q.num_vertices))
        offset += q.num_vertices
    fixed_slices = []
    for cst, q in fixed_terms:
        blocks.append(q.vertices * float(cst))
        convex_rows.append((offset, offset + q.num_vertices))
        fixed_slices.append((offset, offset + q.num_vertices))
        offset += q.num_vertices
    cone_slices = []
    for c in cones:
        cols = c.translate_columns()
        norms = np.linalg.norm(cols, axis=1)
        cols = cols[norms > TOL_GEOM]
        if cols.shape[0]:
            cols = cols / np.linalg.norm(cols, axis=1, keepdims=True)
        blocks.append(cols)
        cone_slices.append((offset, offset + cols.shape[0]))
        offset += cols.shape[0]

    M = np.vstack([b for b in blocks if b.shape[0]]) if offset else np.zeros((0, dim))
    nvars = offset
    if nvars == 0:
        return NotMember(float(np.linalg.norm(t)))
    upper = np.full(nvars, np.inf)
    for lo, hi in cone_slices:
        upper[lo:hi] = R_CONE

    cons = []
    for d in range(dim):
        cons.append(LinearConstraint(M[:, d], "==", float(t[d])))
    for lo, hi in convex_rows:
        row = np.zeros(nvars)
        row[lo:hi] = 1.0
        cons.append(LinearConstraint(row, "==", 1.0))

    out = lp_feasible(LPProblem(nvars, cons, upper=upper))
    if isinstance(out, LPBreakdown):
        raise GeometryError(f"LP breakdown in membership: {out.reason}")
    if isinstance(out, LPInfeasible):
        return NotMember(out.margin)
    z = out.assignment
    at_cap = any(np.any(z[lo:hi] > R_CONE * (1 - 1e-6)) for lo, hi in cone_slices)
    return Membership(
        base_weights=z[: base.num_vertices],
        scales=np.array([float(z[lo:hi].sum()) for lo, hi in scaled_slices]),
        scaled_weights=[z[lo:hi] for lo, hi in scaled_slices],
        fixed_weights=[z[lo:hi] for lo, hi in fixed_slices],
        cone_coeffs=[z[lo:hi] for lo, hi in cone_slices],
        at_cap=at_cap,
    )


# ---------------------------------------------------------------------------
# Direction sets and Hausdorff distances


def directions(dim: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit directions: signed axes, signed axis pairs, then
    seeded random fill up to n."""
    structured = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        structured.append(e.copy())
        structured.append(-e)
    for i in range(dim):
        for j in range(i + 1, dim):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(dim)
                    v[i], v[j] = si, sj
                    structured.append(v / np.linalg.norm(v))
    out = structured[:n]
    if len(out) < n:
        rng = np.random.default_rng(seed + 774321)
        while len(out) < n:
            v = rng.standard_normal(dim)
            nv = np.linalg.norm(v)
            if nv > 1e-12:
                out.append(v / nv)
    return np.array(out)


def point_to_union_distance(p: Sequence[float], u: PolytopeUnion) -> float:
    return min(point_to_polytope_distance(p, part) for part in u.parts)


def _as_union(x: Polytope | PolytopeUnion) -> PolytopeUnion:
    return x if isinstance(x, PolytopeUnion) else PolytopeUnion.create([x])


def _split_singletons(u: PolytopeUnion) -> tuple[np.ndarray | None, list[Polytope]]:
    singles = [p.vertices[0] for p in u.parts if p.num_vertices == 1]
    multi = [p for p in u.parts if p.num_vertices > 1]
    return (np.array(singles) if singles else None), multi


def hausdorff_distance(
    a: Polytope | PolytopeUnion, b: Polytope | PolytopeUnion, n_dirs: int = 32
) -> float:
    """Hausdorff distance estimate for unions of polytopes.

    Combines directed point-to-set distances over deterministic in-part
    sample points (exact for convex inputs, where the max of the convex
    distance function sits at a vertex) with a support-function gap over
    n_dirs directions.  Symmetric by construction; singleton parts are
    handled vectorized so large oracle clouds stay cheap.
    """
    ua, ub = _as_union(a), _as_union(b)
    if ua.dim != ub.dim:
        raise DimensionError("hausdorff dim mismatch")
    if n_dirs < 2 * ua.dim:
        raise GeometryError("n_dirs must be at least 2*dim")

    def directed(u: PolytopeUnion, v: PolytopeUnion) -> float:
        v_singles, v_multi = _split_singletons(v)
        samples = []
        for part in u.parts:
            samples.append(part.vertices if part.num_vertices == 1 else part.sample_points())
        pts = np.vstack(samples)
        if v_singles is not None:
            d2 = ((pts[:, None, :] - v_singles[None, :, :]) ** 2).sum(axis=2)
            best = np.sqrt(d2.min(axis=1))
        else:
            best = np.full(pts.shape[0], math.inf)
        if v_multi:
            for i in range(pts.shape[0]):
                if best[i] <= 0:
                    continue
                best[i] = min(
                    best[i], min(point_to_polytope_distance(pts[i], q) for q in v_multi)
                )
        return float(best.max(initial=0.0))

    dirs = directions(ua.dim, n_dirs)
    va = np.vstack([p.vertices for p in ua.parts])
    vb = np.vstack([p.vertices for p in ub.parts])
    sup_gap = float(np.max(np.abs((va @ dirs.T).max(axis=0) - (vb @ dirs.T).max(axis=0))))
    return max(directed(ua, ub), directed(ub, ua), sup_gap)
