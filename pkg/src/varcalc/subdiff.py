"""Generalized-differentiation objects for the expression class.

Symbolic route: at a candidate point the active piecewise branches are
enumerated; pure max-type kinks give the hull of active branch gradients,
concave-type kinks fall back to clipping the candidate hull with sampled
difference-quotient halfspaces.  Limiting (basic) subdifferentials union
the contributions of every branch pattern realizable on the sample grid
near the point.

Numeric route: sampling oracles built directly from the limiting
definitions (epsilon-enlarged regular subgradients, projection residual
directions).  Both routes are deterministic for a fixed seed, so symbolic
results are cross-checkable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize as sciopt

from varcalc import expr as ex
from varcalc.convgeom import (
    ConeSpec,
    DimensionError,
    GeometryError,
    LinearConstraint,
    LPFeasible,
    LPInfeasible,
    LPProblem,
    Membership,
    NotMember,
    Polytope,
    PolytopeUnion,
    R_CONE,
    TOL_GEOM,
    cones_equal,
    convex_hull,
    clip_polytope,
    directions,
    hausdorff_distance,
    lp_feasible,
    minkowski_membership,
    point_to_union_distance,
    union_minkowski_sum,
)

MAX_BRANCH_COMBOS = 4096
CLUSTER_TOL = 10 * TOL_GEOM


class SubdiffError(ValueError):
    pass


class QualificationError(SubdiffError):
    """Raised when a normal-cone qualification condition fails; carries a
    witness so callers can report the refusal instead of guessing."""

    def __init__(self, message: str, witness: dict):
        super().__init__(message)
        self.witness = witness


class CombinatorialOverflow(SubdiffError):
    pass


class ExtremalityNotWitnessed(SubdiffError):
    def __init__(self, k: int):
        super().__init__(
            f"distance term vanished at k={k}: the shifts do not witness "
            "extremality at this resolution"
        )
        self.k = k


# ---------------------------------------------------------------------------
# Sampling parameters


@dataclass(frozen=True)
class SampleParams:
    radii: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    dirs_per_radius: int = 256
    eps_sequence: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        r = self.radii
        if not r or any(a <= 0 for a in r):
            raise SubdiffError("radii must be positive")
        if any(r[i + 1] >= r[i] for i in range(len(r) - 1)):
            raise SubdiffError("radii must be strictly decreasing")
        if self.eps_sequence is None:
            object.__setattr__(self, "eps_sequence", tuple(a / 10 for a in r))
        else:
            e = self.eps_sequence
            if len(e) != len(r) or any(a < 0 for a in e):
                raise SubdiffError("eps_sequence must be nonnegative, one per radius")
        if self.dirs_per_radius < 2:
            raise SubdiffError("dirs_per_radius must be at least 2")

    def directions(self, dim: int, extra_seed: int = 0) -> np.ndarray:
        return directions(dim, self.dirs_per_radius, self.seed + extra_seed)

    @property
    def r_min(self) -> float:
        return self.radii[-1]

    @property
    def eps_min(self) -> float:
        return self.eps_sequence[-1]


DEFAULT_PARAMS = SampleParams()


# ---------------------------------------------------------------------------
# Set specifications


@dataclass(frozen=True)
class SetSpec:
    """A set given as inequalities, a graph, an epigraph, a singleton or a
    product.  Graph and epigraph specs carry the (x-block, y-block) split
    of their product space."""

    kind: str  # sublevel | graph | epigraph | singleton | product
    functions: tuple[ex.FunctionDef, ...] = ()
    point: np.ndarray | None = None
    factors: tuple["SetSpec", ...] = ()
    block_dims: tuple[int, int] | None = None

    @property
    def dim(self) -> int:
        if self.kind == "singleton":
            return self.point.shape[0]
        if self.kind == "product":
            return sum(f.dim for f in self.factors)
        return self.functions[0].space.dim

    @staticmethod
    def sublevel(functions: Sequence[ex.FunctionDef]) -> "SetSpec":
        fns = tuple(functions)
        if not fns:
            raise SubdiffError("sublevel spec needs at least one constraint")
        space = fns[0].space
        for f in fns:
            if f.space != space:
                raise DimensionError("sublevel constraints live in different spaces")
        return SetSpec("sublevel", fns)

    @staticmethod
    def graph(functions: Sequence[ex.FunctionDef], x_dim: int, y_dim: int) -> "SetSpec":
        fns = tuple(functions)
        if fns[0].space.dim != x_dim + y_dim:
            raise DimensionError("graph constraints must live in the product space")
        return SetSpec("graph", fns, block_dims=(x_dim, y_dim))

    @staticmethod
    def epigraph(f: ex.FunctionDef) -> "SetSpec":
        names = f.space.names + ("_epi",)
        product = ex.VarSpace(names)
        lifted = ex.lift_to_product(f, product, 0)
        t = ex.FunctionDef(product, ex.var(f.space.dim))
        constraint = ex.fsub(lifted, t)  # f(x) - t <= 0
        return SetSpec("epigraph", (constraint,), block_dims=(f.space.dim, 1))

    @staticmethod
    def singleton(point: Sequence[float]) -> "SetSpec":
        return SetSpec("singleton", point=np.asarray(point, dtype=float))

    @staticmethod
    def product(factors: Sequence["SetSpec"]) -> "SetSpec":
        return SetSpec("product", factors=tuple(factors))

    def constraint_functions(self) -> tuple[ex.FunctionDef, ...]:
        if self.kind in ("sublevel", "graph", "epigraph"):
            return self.functions
        raise SubdiffError(f"{self.kind} spec has no constraint functions")


def set_membership(spec: SetSpec, point: Sequence[float], tol: float = TOL_GEOM) -> bool:
    p = np.asarray(point, dtype=float)
    if spec.kind == "singleton":
        return bool(np.linalg.norm(p - spec.point) <= tol)
    if spec.kind == "product":
        out = []
        off = 0
        for f in spec.factors:
            if not set_membership(f, p[off : off + f.dim], tol):
                return False
            off += f.dim
        return True
    return all(ex.evaluate(f, p) <= tol for f in spec.functions)


def feasible_mask(spec: SetSpec, pts: np.ndarray, tol: float = TOL_GEOM) -> np.ndarray:
    if spec.kind == "singleton":
        return np.linalg.norm(pts - spec.point[None, :], axis=1) <= tol
    if spec.kind == "product":
        mask = np.ones(pts.shape[0], dtype=bool)
        off = 0
        for f in spec.factors:
            mask &= feasible_mask(f, pts[:, off : off + f.dim], tol)
            off += f.dim
        return mask
    mask = np.ones(pts.shape[0], dtype=bool)
    for f in spec.functions:
        mask &= ex.eval_batch(f, pts) <= tol
    return mask


class ProjectionUnavailable(SubdiffError):
    pass


def _affine_system(spec: SetSpec) -> tuple[np.ndarray, np.ndarray] | None:
    """(A, b) with the set equal to {x : Ax <= b}, or None."""
    if spec.kind not in ("sublevel", "graph", "epigraph"):
        return None
    rows, rhs = [], []
    for f in spec.functions:
        parts = ex.affine_parts(f)
        if parts is None:
            return None
        w, b = parts
        rows.append(w)
        rhs.append(-b)
    return np.array(rows), np.array(rhs)


def project_onto(spec: SetSpec, point: Sequence[float]) -> np.ndarray:
    """Exact Euclidean projection for polyhedral specs, singletons and
    products of those.  Non-polyhedral sets have no closed-form projector
    here; callers needing one should use the grid-based oracle."""
    p = np.asarray(point, dtype=float)
    if spec.kind == "singleton":
        return spec.point.copy()
    if spec.kind == "product":
        out = np.empty_like(p)
        off = 0
        for f in spec.factors:
            out[off : off + f.dim] = project_onto(f, p[off : off + f.dim])
            off += f.dim
        return out
    system = _affine_system(spec)
    if system is None:
        raise ProjectionUnavailable(
            "exact projection needs affine constraints; use the sampled oracle"
        )
    A, b = system
    if np.all(A @ p <= b + 1e-12):
        return p.copy()
    m, dim = A.shape
    best = None
    best_d = math.inf
    for size in range(1, min(m, dim) + 1):
        for subset in itertools.combinations(range(m), size):
            As = A[list(subset)]
            bs = b[list(subset)]
            # least-norm correction onto {As x = bs}
            x = p - As.T @ np.linalg.lstsq(As @ As.T, As @ p - bs, rcond=None)[0]
            if np.all(A @ x <= b + 1e-9):
                d = float(np.linalg.norm(x - p))
                if d < best_d:
                    best, best_d = x, d
    if best is None:
        raise ProjectionUnavailable("no feasible active-set projection found")
    return best


def set_distance(spec: SetSpec, point: Sequence[float]) -> float:
    w = project_onto(spec, point)
    return float(np.linalg.norm(np.asarray(point, dtype=float) - w))


# ---------------------------------------------------------------------------
# Regular subdifferential


def _combo_data(f: ex.FunctionDef, x: np.ndarray, pattern: ex.ActivePattern):
    combos = ex.branch_combinations(pattern)
    if len(combos) > MAX_BRANCH_COMBOS:
        raise CombinatorialOverflow(
            f"{len(combos)} branch combinations exceed the cap {MAX_BRANCH_COMBOS}"
        )
    grads = []
    contexts = []
    for sel in combos:
        g, ctx = ex.gradient_and_contexts(f, x, sel)
        grads.append(g)
        contexts.append(ctx)
    return combos, np.array(grads), contexts


def _pattern_is_max_like(pattern: ex.ActivePattern, f: ex.FunctionDef, contexts) -> bool:
    """True when every tied piecewise node carries a sign making the kink
    convex: max nodes with nonnegative sensitivity, min nodes with
    nonpositive sensitivity (zero sensitivity is neutral)."""
    tol = 1e-9
    for path, act in pattern.selections:
        if len(act) < 2:
            continue
        kind = ex.node_at(f.root, path).kind
        vals = [ctx.get(path, 0.0) for ctx in contexts]
        if all(abs(v) <= tol for v in vals):
            continue
        if kind in ("max", "abs"):
            if any(v < -tol for v in vals):
                return False
        else:
            if any(v > tol for v in vals):
                return False
    return True


def _curvature_estimate(f: ex.FunctionDef, x: np.ndarray, pattern: ex.ActivePattern) -> float:
    """Rough bound on branch-composition curvature near x via central
    second differences of the branch-restricted functions."""
    dim = f.space.dim
    r = 1e-3
    probes = directions(dim, 2 * dim)
    worst = 0.0
    for sel_pattern in _singleton_subpatterns(pattern)[:8]:
        restricted = ex.restrict_to_pattern(f, sel_pattern)
        pts = np.vstack([x + r * probes, x - r * probes, x[None, :]])
        vals = ex.eval_batch(restricted, pts)
        k = probes.shape[0]
        second = np.abs(vals[:k] + vals[k : 2 * k] - 2 * vals[-1]) / r**2
        worst = max(worst, float(second.max(initial=0.0)))
    return worst


def _singleton_subpatterns(pattern: ex.ActivePattern) -> list[ex.ActivePattern]:
    out = []
    for sel in ex.branch_combinations(pattern):
        out.append(
            ex.ActivePattern(tuple(sorted((p, (b,)) for p, b in sel.items())))
        )
    if not out:
        out.append(pattern)
    return out


def regular_subdifferential(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
) -> Polytope | None:
    """Regular subdifferential at x; None encodes the empty set.

    Pure max-type patterns give the hull of active branch gradients
    directly.  Patterns with concave-type ties clip that candidate hull
    with difference-quotient halfspaces sampled at the smallest radius,
    relaxed by the epsilon schedule plus a curvature allowance, so the
    result satisfies the defining inequality on all drawn samples.
    """
    p = ex.as_point(f.space, x)
    pattern = ex.active_pattern(f, p, tau_act)
    combos, grads, contexts = _combo_data(f, p, pattern)
    candidate = convex_hull(grads)
    if _pattern_is_max_like(pattern, f, contexts):
        return candidate
    r = params.r_min
    eps = params.eps_min + _curvature_estimate(f, p, pattern) * r
    dirs = params.directions(f.space.dim)
    quotients = (ex.eval_batch(f, p[None, :] + r * dirs) - ex.evaluate(f, p)) / r
    return clip_polytope(candidate, dirs, quotients + eps)


# ---------------------------------------------------------------------------
# Basic (limiting) subdifferential


@dataclass
class PatternCensus:
    entries: dict[tuple, dict]

    def as_json(self) -> list[dict]:
        out = []
        for key, info in sorted(self.entries.items(), key=lambda kv: repr(kv[0])):
            out.append(
                {
                    "pattern": repr(key),
                    "count": info["count"],
                    "at_smallest_radius": info["smallest"],
                }
            )
        return out


def _realizable_patterns(
    f: ex.FunctionDef, p: np.ndarray, params: SampleParams, tau_act: float
) -> tuple[list[ex.ActivePattern], PatternCensus]:
    """Patterns seen on the sample grid around p, plus p's own pattern.

    Only patterns realized at the smallest radius (or at p itself) feed
    the limiting union; the full census is kept for audit.  Thin patterns
    that no sampled ray enters can be missed, which is why results carry
    the census.
    """
    census: dict[tuple, dict] = {}
    chosen: dict[tuple, ex.ActivePattern] = {}
    own = ex.active_pattern(f, p, tau_act)
    census[own.key()] = {"count": 1, "smallest": True}
    chosen[own.key()] = own
    dirs = params.directions(f.space.dim)
    for level, r in enumerate(params.radii):
        smallest = level == len(params.radii) - 1
        for d in dirs:
            pat = ex.active_pattern(f, p + r * d, tau_act)
            info = census.setdefault(pat.key(), {"count": 0, "smallest": False})
            info["count"] += 1
            if smallest:
                info["smallest"] = True
                chosen.setdefault(pat.key(), pat)
    return list(chosen.values()), PatternCensus(census)


def basic_subdifferential(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
) -> PolytopeUnion:
    union, _ = basic_subdifferential_with_census(f, x, params, tau_act)
    return union


def basic_subdifferential_with_census(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
) -> tuple[PolytopeUnion, PatternCensus]:
    p = ex.as_point(f.space, x)
    patterns, census = _realizable_patterns(f, p, params, tau_act)
    parts: list[Polytope] = []
    for pat in patterns:
        restricted = ex.restrict_to_pattern(f, pat)
        piece = regular_subdifferential(restricted, p, params, tau_act)
        if piece is not None:
            parts.append(piece)
    if not parts:
        raise SubdiffError("no realizable pattern produced a subgradient set")
    return PolytopeUnion.create(parts), census


def singular_subdifferential(f: ex.FunctionDef, x: Sequence[float]) -> ConeSpec:
    """The expression class is locally Lipschitz by construction, so the
    singular subdifferential is always {0}."""
    ex.as_point(f.space, x)
    return ConeSpec.zero(f.space.dim)


@dataclass
class SubdiffResult:
    regular: Polytope | None
    basic: PolytopeUnion
    singular: ConeSpec
    method: str  # symbolic | sampled
    witnesses: dict


def full_subdifferential(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
) -> SubdiffResult:
    p = ex.as_point(f.space, x)
    pattern = ex.active_pattern(f, p, tau_act)
    _, _, contexts = _combo_data(f, p, pattern)
    method = "symbolic" if _pattern_is_max_like(pattern, f, contexts) else "sampled"
    regular = regular_subdifferential(f, p, params, tau_act)
    basic, census = basic_subdifferential_with_census(f, p, params, tau_act)
    return SubdiffResult(
        regular=regular,
        basic=basic,
        singular=singular_subdifferential(f, p),
        method=method,
        witnesses={"pattern_census": census.as_json()},
    )


# ---------------------------------------------------------------------------
# Sampled subdifferential oracle


@dataclass
class OracleCloud:
    points: np.ndarray
    cluster_centers: np.ndarray

    def as_union(self) -> PolytopeUnion:
        if self.cluster_centers.shape[0] == 0:
            raise SubdiffError("oracle accepted no subgradient candidates")
        # cluster centers are pairwise separated by construction; no
        # canonicalization pass needed (and unions can be large)
        return PolytopeUnion(
            tuple(Polytope(c.reshape(1, -1)) for c in self.cluster_centers)
        )


def _cluster(points: np.ndarray, tol: float) -> np.ndarray:
    """Greedy clustering at the given tolerance via a spatial hash (cells
    of size tol, neighbor cells checked); returns cluster centroids in a
    canonical lexicographic order."""
    if points.shape[0] == 0:
        return points
    dim = points.shape[1]
    order = np.lexsort(tuple(points[:, k] for k in range(dim - 1, -1, -1)))
    pts = points[order]
    cells: dict[tuple, list[int]] = {}
    centers: list[np.ndarray] = []
    counts: list[int] = []
    neighbor = list(itertools.product(*([(-1, 0, 1)] * dim)))
    for q in pts:
        key = tuple(np.floor(q / tol).astype(np.int64))
        hit = -1
        for off in neighbor:
            cell = tuple(k + o for k, o in zip(key, off))
            for idx in cells.get(cell, ()):
                if np.linalg.norm(q - centers[idx]) <= tol:
                    hit = idx
                    break
            if hit >= 0:
                break
        if hit >= 0:
            counts[hit] += 1
            centers[hit] = centers[hit] + (q - centers[hit]) / counts[hit]
        else:
            centers.append(q.copy())
            counts.append(1)
            cells.setdefault(key, []).append(len(centers) - 1)
    out = np.array(centers)
    order = np.lexsort(tuple(out[:, k] for k in range(dim - 1, -1, -1)))
    return out[order]


def _accepts(
    f: ex.FunctionDef,
    u: np.ndarray,
    candidates: np.ndarray,
    stencil: np.ndarray,
    eps: float,
) -> np.ndarray:
    """Vectorized epsilon-relaxed regular-subgradient test at u: keep v
    with f(w) - f(u) >= <v, w-u> - eps*|w-u| on every stencil point w."""
    fu = ex.evaluate(f, u)
    gains = ex.eval_batch(f, stencil) - fu  # (S,)
    offs = stencil - u[None, :]  # (S, dim)
    norms = np.linalg.norm(offs, axis=1)
    lhs = candidates @ offs.T  # (C, S)
    ok = lhs <= gains[None, :] + eps * norms[None, :] + 1e-14
    return np.all(ok, axis=1)


def sampled_subdiff_oracle(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
    fill_spacing: float = 0.025,
) -> OracleCloud:
    """Point cloud of limiting subgradient candidates.

    Branch gradients at nearby singleton-pattern points are screened by
    the epsilon-enlarged defining inequality over a local stencil; the
    surviving values from the two smallest accepting radii are linearly
    extrapolated to radius zero.  Candidates drawn from the hull of the
    active branch gradients at x itself are screened the same way, which
    fills convex faces (and rejects midpoints of genuinely nonconvex
    unions).  Deterministic for a fixed seed.
    """
    p = ex.as_point(f.space, x)
    dim = f.space.dim
    dirs = params.directions(dim)
    stencil_dirs = directions(dim, max(8, min(32, params.dirs_per_radius // 8)), params.seed + 1)

    accepted: dict[int, dict[int, np.ndarray]] = {}
    raw: list[np.ndarray] = []
    for level, (r, eps) in enumerate(zip(params.radii, params.eps_sequence)):
        rho = np.array([r / 32, r / 64])
        for di, d in enumerate(dirs):
            u = p + r * d
            pat = ex.active_pattern(f, u, tau_act)
            if not pat.is_smooth():
                continue
            sel = {path: act[0] for path, act in pat.selections}
            v = ex.branch_gradient(f, u, sel)
            stencil = np.vstack([u[None, :] + rr * stencil_dirs for rr in rho])
            if _accepts(f, u, v[None, :], stencil, eps)[0]:
                accepted.setdefault(di, {})[level] = v
                raw.append(v)

    limits: list[np.ndarray] = []
    last = len(params.radii) - 1
    for di, levels in accepted.items():
        if last in levels:
            v1 = levels[last]
            if last - 1 in levels:
                v0 = levels[last - 1]
                r1, r0 = params.radii[last], params.radii[last - 1]
                limits.append(v1 + (v1 - v0) * (r1 / (r0 - r1)))
            else:
                limits.append(v1)

    # fill candidates at x itself
    pattern = ex.active_pattern(f, p, tau_act)
    _, grads, _ = _combo_data(f, p, pattern)
    hull = convex_hull(grads)
    fill = _barycentric_fill(hull, fill_spacing)
    stencil = np.vstack(
        [p[None, :] + r * stencil_dirs for r in params.radii]
    )
    eps_fill = params.eps_sequence[0]
    keep = _accepts(f, p, fill, stencil, eps_fill)
    fill_accepted = fill[keep]
    raw.extend(fill_accepted)

    cloud = np.array(limits + list(fill_accepted)) if (limits or len(fill_accepted)) else np.zeros((0, dim))
    centers = _cluster(cloud, CLUSTER_TOL)
    points = np.array(raw) if raw else np.zeros((0, dim))
    return OracleCloud(points=points, cluster_centers=centers)


def _barycentric_fill(poly: Polytope, spacing: float, budget: int = 5000) -> np.ndarray:
    """Deterministic covering of a polytope at the given spacing: segment
    lattices in 1D, a clipped box lattice in 2D, a budgeted barycentric
    lattice above that."""
    V = poly.vertices
    if V.shape[0] == 1:
        return V.copy()
    diameter = max(
        float(np.linalg.norm(V[i] - V[j]))
        for i in range(V.shape[0])
        for j in range(i + 1, V.shape[0])
    )
    m = int(max(1, math.ceil(diameter / spacing)))
    k = V.shape[0]
    if k == 2:
        ts = np.linspace(0.0, 1.0, min(m, budget) + 1)
        return np.outer(1 - ts, V[0]) + np.outer(ts, V[1])
    if poly.dim == 2:
        return _polygon_lattice(V, spacing)
    while m > 1 and math.comb(m + k - 1, k - 1) > budget:
        m -= 1
    weights = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            weights.append(prefix + [remaining])
            return
        for i in range(remaining + 1):
            rec(prefix + [i], remaining - i, slots - 1)

    rec([], m, k)
    W = np.array(weights, dtype=float) / m
    return W @ V


def _polygon_lattice(V: np.ndarray, spacing: float) -> np.ndarray:
    """Box lattice restricted to a 2D convex hull (vertices included)."""
    center = V.mean(axis=0)
    order = np.argsort(np.arctan2(V[:, 1] - center[1], V[:, 0] - center[0]))
    ring = V[order]
    lo, hi = V.min(axis=0), V.max(axis=0)
    nx = max(2, int(math.ceil((hi[0] - lo[0]) / spacing)) + 1)
    ny = max(2, int(math.ceil((hi[1] - lo[1]) / spacing)) + 1)
    gx = np.linspace(lo[0], hi[0], nx)
    gy = np.linspace(lo[1], hi[1], ny)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = np.ones(pts.shape[0], dtype=bool)
    for i in range(ring.shape[0]):
        a, b = ring[i], ring[(i + 1) % ring.shape[0]]
        edge = b - a
        rel = pts - a
        inside &= edge[0] * rel[:, 1] - edge[1] * rel[:, 0] >= -1e-12
    return np.vstack([V, pts[inside]])


# ---------------------------------------------------------------------------
# Normal cones


@dataclass
class NormalCone:
    parts: tuple[ConeSpec, ...]
    qualification: str  # "polyhedral-exact" | "verified" | "trivial"
    active: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.parts[0].dim


def _check_positive_combination_of_zero(
    part_choices: list[Polytope], dim: int
) -> np.ndarray | None:
    """Find lambda >= 0, sum = 1, with 0 in sum_j lambda_j * conv(P_j);
    returns the witness multipliers or None."""
    blocks = [P.vertices for P in part_choices]
    nvars = sum(b.shape[0] for b in blocks)
    M = np.vstack(blocks)
    cons = [LinearConstraint(M[:, d], "==", 0.0) for d in range(dim)]
    cons.append(LinearConstraint(np.ones(nvars), "==", 1.0))
    out = lp_feasible(LPProblem(nvars, cons))
    if isinstance(out, LPInfeasible):
        return None
    if not isinstance(out, LPFeasible):
        raise GeometryError(f"LP breakdown in qualification check: {out.reason}")
    z = out.assignment
    lams = []
    off = 0
    for b in blocks:
        lams.append(float(z[off : off + b.shape[0]].sum()))
        off += b.shape[0]
    lams = np.array(lams)
    return lams / lams.max()


def normal_cone(
    spec: SetSpec,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    tau_act: float = ex.TAU_ACT_DEFAULT,
    tol: float = TOL_GEOM,
) -> NormalCone:
    """Normal cone computed from the active-constraint subdifferentials.

    Affine constraint systems take the exact polyhedral route.  Otherwise
    the cone is the nonnegative span of the active constraints' basic
    subdifferentials, one ConeSpec per branch choice of the nonconvex
    parts, valid under the positive-combination qualification condition;
    when that condition fails the operation refuses with a witness.
    """
    p = np.asarray(x, dtype=float)
    if spec.kind == "singleton":
        if not set_membership(spec, p, tol):
            raise SubdiffError("point not in the set")
        return NormalCone((ConeSpec.full_space(spec.dim),), "trivial", ())
    if spec.kind == "product":
        offs = []
        off = 0
        factor_cones = []
        for f in spec.factors:
            factor_cones.append(normal_cone(f, p[off : off + f.dim], params, tau_act, tol))
            offs.append(off)
            off += f.dim
        dim = spec.dim
        parts = []
        for combo in itertools.product(*(nc.parts for nc in factor_cones)):
            gens, lins = [], []
            for cone, off_, f in zip(combo, offs, spec.factors):
                G = np.zeros((cone.generators.shape[0], dim))
                G[:, off_ : off_ + f.dim] = cone.generators
                gens.append(G)
                L = np.zeros((cone.lineality.shape[0], dim))
                L[:, off_ : off_ + f.dim] = cone.lineality
                lins.append(L)
            parts.append(
                ConeSpec(dim, np.vstack(gens), np.vstack(lins)).canonicalize()
            )
        return NormalCone(tuple(parts), "trivial", ())

    if not set_membership(spec, p, tol):
        raise SubdiffError("point not in the set")
    fns = spec.constraint_functions()
    dim = spec.dim
    active = tuple(j for j, f in enumerate(fns) if abs(ex.evaluate(f, p)) <= tol)
    if not active:
        return NormalCone((ConeSpec.zero(dim),), "trivial", ())

    system = _affine_system(spec)
    if system is not None:
        A, _ = system
        gens = A[list(active)]
        return NormalCone(
            (ConeSpec.from_generators(dim, gens),), "polyhedral-exact", active
        )

    subdiffs = [basic_subdifferential(fns[j], p, params, tau_act) for j in active]
    combos = list(itertools.product(*(u.parts for u in subdiffs)))
    if len(combos) > MAX_BRANCH_COMBOS:
        raise CombinatorialOverflow("too many branch choices in normal cone")
    for choice in combos:
        witness = _check_positive_combination_of_zero(list(choice), dim)
        if witness is not None:
            raise QualificationError(
                "qualification condition fails: a nonzero nonnegative combination "
                "of active constraint subgradients vanishes",
                {
                    "multipliers": witness.tolist(),
                    "active_constraints": list(active),
                },
            )
    parts = []
    for choice in combos:
        gens = np.vstack([P.vertices for P in choice])
        parts.append(ConeSpec.from_generators(dim, gens))
    # distinct parts only
    uniq: list[ConeSpec] = []
    for c in parts:
        if not any(cones_equal(c, q) for q in uniq):
            uniq.append(c)
    return NormalCone(tuple(uniq), "verified", active)


def sampled_normal_cone_oracle(
    spec: SetSpec,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    grid_factor: int = 64,
) -> OracleCloud:
    """Normal directions accumulated from Euclidean projections onto a
    dense local feasible grid: directions (x_k - w_k)/|x_k - w_k| for
    sampled x_k near the point.  Deterministic for a fixed seed.

    The grid uses a near-machine feasibility tolerance: a loose tolerance
    admits a sliver of width sqrt(tol) along curved boundaries, which
    would tilt projection directions by far more than the grid step.
    """
    p = np.asarray(x, dtype=float)
    dim = spec.dim
    if dim > 3:
        raise SubdiffError("projection oracle supports dim <= 3")
    if not set_membership(spec, p):
        raise SubdiffError("point not in the set")
    dirs = params.directions(dim)
    collected: list[np.ndarray] = []
    grid_tol = 1e-13 * (1.0 + float(np.linalg.norm(p)))
    for r in params.radii:
        step = r / grid_factor if dim <= 2 else r / 16
        half = 2.5 * r
        axes = [np.arange(c - half, c + half + step / 2, step) for c in p]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        mask = feasible_mask(spec, pts, grid_tol)
        feas = pts[mask]
        if feas.shape[0] == 0:
            raise SubdiffError(
                f"projection grid found no feasible points at radius {r}"
            )
        for d in dirs:
            q = p + r * d
            dists = np.linalg.norm(feas - q[None, :], axis=1)
            dmin = float(dists.min())
            # directions from sample points near the set are dominated by
            # grid error; only distances well above the resolution give
            # normals accurate to a few hundredths of a radian
            if dmin <= 32 * step:
                continue
            near = feas[dists <= dmin + step**2 / (2 * dmin)]
            for w in near:
                v = q - w
                collected.append(v / np.linalg.norm(v))
    cloud = np.array(collected) if collected else np.zeros((0, dim))
    centers = _cluster(cloud, 0.02)
    return OracleCloud(points=cloud, cluster_centers=centers)


# ---------------------------------------------------------------------------
# Coderivatives


@dataclass
class SlicedCone:
    """Affine slice of a cone mapped to the x-block: polytope base plus a
    recession cone (empty base encodes an infeasible slice)."""

    base: Polytope | None
    recession: ConeSpec

    def is_zero_only(self, tol: float = TOL_GEOM) -> bool:
        if self.base is None:
            return False
        return (
            self.base.num_vertices == 1
            and float(np.linalg.norm(self.base.vertices[0])) <= tol
            and self.recession.is_zero(tol)
        )


def _nonneg_solutions(B: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """V-representation of {z >= 0 : Bz = c}: vertices and extreme rays,
    by basic-solution enumeration (the set is pointed since z >= 0)."""
    m, K = B.shape
    scale = 1.0 + max(float(np.abs(B).max(initial=0.0)), float(np.abs(c).max(initial=0.0)))
    tol = 1e-9 * scale

    def basic_points(M: np.ndarray, rhs: np.ndarray) -> list[np.ndarray]:
        rank = int(np.linalg.matrix_rank(M, tol=1e-10)) if M.size else 0
        out = []
        if rank == 0:
            if np.linalg.norm(rhs) <= tol:
                out.append(np.zeros(M.shape[1]))
            return out
        for subset in itertools.combinations(range(M.shape[1]), rank):
            Ms = M[:, list(subset)]
            zs, _, _, _ = np.linalg.lstsq(Ms, rhs, rcond=None)
            if np.linalg.norm(Ms @ zs - rhs) > tol:
                continue
            if np.any(zs < -1e-9):
                continue
            z = np.zeros(M.shape[1])
            for idx, val in zip(subset, zs):
                z[idx] = max(val, 0.0)
            out.append(z)
        return out

    vertices = basic_points(B, c)
    ray_system = np.vstack([B, np.ones((1, K))])
    ray_rhs = np.concatenate([np.zeros(m), [1.0]])
    rays = basic_points(ray_system, ray_rhs)
    return (
        np.array(vertices) if vertices else np.zeros((0, K)),
        np.array(rays) if rays else np.zeros((0, K)),
    )


def coderivative(
    spec: SetSpec,
    point: Sequence[float],
    w: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
) -> tuple[SlicedCone, ...]:
    """Coderivative value {v : (v, -w) in N(point; gph F)} as a union of
    sliced cones; an empty tuple encodes the empty set."""
    if spec.block_dims is None:
        raise SubdiffError("coderivative needs a graph or epigraph spec")
    n, m = spec.block_dims
    w = np.asarray(w, dtype=float)
    if w.shape != (m,):
        raise DimensionError("coderivative argument has wrong dimension")
    cone_parts = normal_cone(spec, point, params).parts
    out: list[SlicedCone] = []
    for cone in cone_parts:
        cols = cone.translate_columns()  # (K, n+m), nonneg coefficients
        if cols.shape[0] == 0:
            if np.linalg.norm(w) <= TOL_GEOM:
                out.append(SlicedCone(Polytope.singleton(np.zeros(n)), ConeSpec.zero(n)))
            continue
        B = cols[:, n:].T  # (m, K)
        A = cols[:, :n].T  # (n, K)
        vertices, rays = _nonneg_solutions(B, -w)
        if vertices.shape[0] == 0:
            continue
        base = convex_hull(vertices @ A.T)
        ray_vecs = rays @ A.T if rays.shape[0] else np.zeros((0, n))
        ray_vecs = ray_vecs[np.linalg.norm(ray_vecs, axis=1) > TOL_GEOM]
        recession = (
            ConeSpec.from_generators(n, ray_vecs) if ray_vecs.shape[0] else ConeSpec.zero(n)
        )
        out.append(SlicedCone(base, recession))
    return tuple(out)


@dataclass
class LipschitzLikeReport:
    verdict: bool
    at_zero: tuple[SlicedCone, ...]


def lipschitz_like_check(
    spec: SetSpec, point: Sequence[float], params: SampleParams = DEFAULT_PARAMS
) -> LipschitzLikeReport:
    """Coderivative criterion: the mapping is Lipschitz-like at the point
    iff the coderivative at 0 collapses to {0}."""
    n, m = spec.block_dims
    parts = coderivative(spec, point, np.zeros(m), params)
    verdict = len(parts) > 0 and all(c.is_zero_only() for c in parts)
    return LipschitzLikeReport(verdict=verdict, at_zero=parts)


def sampled_lipschitz_like_test(
    spec: SetSpec,
    point: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
    ell_max: float = 1e3,
    v_radius: float = 0.5,
    y_resolution: int = 2001,
) -> tuple[bool, float]:
    """Direct sampled test of the Lipschitz-like inclusion
    F(x) cap V subset F(u) + ell |x - u| B on parameter pairs near the
    point.  Returns (verdict, empirical modulus)."""
    n, m = spec.block_dims
    if m != 1:
        raise SubdiffError("sampled Lipschitz-like test supports one decision variable")
    p = np.asarray(point, dtype=float)
    xb, yb = p[:n], p[n:]
    ys = np.linspace(yb[0] - 4 * v_radius, yb[0] + 4 * v_radius, y_resolution)
    step = ys[1] - ys[0]

    def feasible_ys(xv: np.ndarray) -> np.ndarray:
        pts = np.hstack([np.tile(xv, (ys.size, 1)), ys[:, None]])
        return ys[feasible_mask(spec, pts)]

    dirs = directions(n, max(4, 2 * n), params.seed)
    worst = 0.0
    for r in params.radii:
        for d1 in dirs:
            for d2 in dirs:
                xa = xb + r * d1
                xu = xb + 0.5 * r * d2
                gap = float(np.linalg.norm(xa - xu))
                if gap < 1e-12:
                    continue
                fa = feasible_ys(xa)
                fa = fa[np.abs(fa - yb[0]) <= v_radius]
                if fa.size == 0:
                    continue
                fu = feasible_ys(xu)
                if fu.size == 0:
                    return False, math.inf
                dist = float(np.max(np.min(np.abs(fa[:, None] - fu[None, :]), axis=1)))
                worst = max(worst, max(0.0, dist - step) / gap)
    return worst <= ell_max, worst


# ---------------------------------------------------------------------------
# Calculus-rule verifiers


@dataclass
class RuleReport:
    rule: str
    holds: bool
    margin: float
    detail: dict


def _directed_union_margin(a: PolytopeUnion, b: PolytopeUnion) -> float:
    worst = 0.0
    for part in a.parts:
        for q in part.sample_points():
            worst = max(worst, point_to_union_distance(q, b))
    return worst


def verify_sum_rule(
    summands: Sequence[ex.FunctionDef | SetSpec],
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
) -> RuleReport:
    """Check the basic and singular subdifferential sum rules.

    The first summand may be an indicator (SetSpec); the rest must be
    functions of the class (automatically Lipschitz).  Margins are
    directed Hausdorff distances of the left side into the right side.
    """
    p = np.asarray(x, dtype=float)
    first = summands[0]
    rest = list(summands[1:])
    if isinstance(first, SetSpec):
        return _verify_indicator_sum_rule(first, rest, p, params)
    fns = [first] + rest
    total = ex.fsum(*fns)
    lhs = basic_subdifferential(total, p, params)
    rhs = basic_subdifferential(fns[0], p, params)
    for g in fns[1:]:
        rhs = union_minkowski_sum(rhs, basic_subdifferential(g, p, params))
    margin = _directed_union_margin(lhs, rhs)
    back = _directed_union_margin(rhs, lhs)
    return RuleReport(
        rule="sum",
        holds=margin <= 1e-6,
        margin=margin,
        detail={
            "equality_margin": max(margin, back),
            "singular_sides_equal": True,  # both {0} for the Lipschitz class
        },
    )


def _verify_indicator_sum_rule(
    omega: SetSpec, fns: list[ex.FunctionDef], p: np.ndarray, params: SampleParams
) -> RuleReport:
    if omega.kind != "sublevel":
        raise SubdiffError("indicator sum rule needs a sublevel spec")
    total = ex.fsum(*fns) if len(fns) > 1 else fns[0]
    dim = total.space.dim
    # left side: subdifferential of (indicator + f) through its epigraph
    epi_names = total.space.names + ("_epi",)
    product = ex.VarSpace(epi_names)
    lifted = [ex.lift_to_product(g, product, 0) for g in omega.functions]
    t = ex.FunctionDef(product, ex.var(dim))
    lifted.append(ex.fsub(ex.lift_to_product(total, product, 0), t))
    epi_spec = SetSpec("graph", tuple(lifted), block_dims=(dim, 1))
    epi_point = np.concatenate([p, [ex.evaluate(total, p)]])
    lhs = coderivative(epi_spec, epi_point, np.array([1.0]), params)
    lhs_zero = coderivative(epi_spec, epi_point, np.array([0.0]), params)
    # right side: N(p; omega) + basic subdifferential of f
    ncone = normal_cone(omega, p, params)
    fsub_union = basic_subdifferential(total, p, params)
    worst = 0.0
    holds = True
    for comp in lhs:
        member_somewhere = []
        for v in comp.base.vertices:
            found = math.inf
            for cone in ncone.parts:
                for part in fsub_union.parts:
                    out = minkowski_membership(v, part, cones=[cone])
                    if isinstance(out, Membership):
                        found = 0.0
                        break
                    found = min(found, out.margin)
                if found == 0.0:
                    break
            member_somewhere.append(found)
        worst = max(worst, max(member_somewhere))
        for g in comp.recession.generators:
            if not any(cone.contains(g) for cone in ncone.parts):
                holds = False
    holds = holds and worst <= 1e-6
    # singular side: slice at 0 must equal N(p; omega)
    sing_ok = True
    for comp in lhs_zero:
        cone_from_slice = ConeSpec(
            dim,
            np.vstack([comp.recession.generators, comp.base.vertices]),
            comp.recession.lineality,
        ).canonicalize()
        if not any(cones_equal(cone_from_slice, c) for c in ncone.parts):
            sing_ok = False
    return RuleReport(
        rule="sum-indicator",
        holds=holds and sing_ok,
        margin=worst,
        detail={"singular_sides_equal": sing_ok},
    )


def verify_intersection_rule(
    sets: Sequence[SetSpec],
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
) -> RuleReport:
    """Normal-cone intersection rule with its qualification condition.

    The condition is tested by LP: some choice of normals x_i from the
    per-set cones sums to zero with one block forced away from zero.  On
    failure the report carries the witness multipliers; otherwise each
    generator of the intersection's cone is checked for membership in the
    sum of the per-set cones.
    """
    p = np.asarray(x, dtype=float)
    if len(sets) == 1:
        return RuleReport("intersection", True, 0.0, {"degenerate_single_set": True})
    for s in sets:
        if not set_membership(s, p):
            raise SubdiffError("point must lie in every set")
    cones_per_set = [normal_cone(s, p, params).parts for s in sets]
    dim = p.shape[0]

    for combo in itertools.product(*cones_per_set):
        witness = _qc_violation_witness(combo, dim)
        if witness is not None:
            return RuleReport(
                "intersection",
                False,
                math.inf,
                {"qualification_violated": True, "witness_multipliers": witness},
            )

    merged = SetSpec.sublevel(
        tuple(f for s in sets for f in s.constraint_functions())
    )
    left = normal_cone(merged, p, params)
    worst = 0.0
    for part in left.parts:
        targets = [g for g in part.generators]
        targets += [l for l in part.lineality] + [-l for l in part.lineality]
        for g in targets:
            best = math.inf
            for combo in itertools.product(*cones_per_set):
                out = minkowski_membership(
                    np.asarray(g), Polytope.singleton(np.zeros(dim)), cones=list(combo)
                )
                if isinstance(out, Membership):
                    best = 0.0
                    break
                best = min(best, out.margin)
            worst = max(worst, best)
    return RuleReport(
        "intersection",
        worst <= 1e-6,
        worst,
        {"qualification_violated": False},
    )


def _qc_violation_witness(cones: Sequence[ConeSpec], dim: int) -> list[float] | None:
    col_blocks = [c.translate_columns() for c in cones]
    sizes = [b.shape[0] for b in col_blocks]
    nvars = sum(sizes)
    if nvars == 0:
        return None
    M = np.vstack([b for b in col_blocks if b.shape[0]])
    for j, block in enumerate(col_blocks):
        if block.shape[0] == 0:
            continue
        off = sum(sizes[:j])
        for k in range(dim):
            for sign in (1.0, -1.0):
                cons = [LinearConstraint(M[:, d], "==", 0.0) for d in range(dim)]
                row = np.zeros(nvars)
                row[off : off + sizes[j]] = sign * block[:, k]
                cons.append(LinearConstraint(row, ">=", 1.0))
                out = lp_feasible(LPProblem(nvars, cons, upper=np.full(nvars, R_CONE)))
                if isinstance(out, LPFeasible):
                    z = out.assignment
                    lams = []
                    for i, sz in enumerate(sizes):
                        o = sum(sizes[:i])
                        lams.append(float(z[o : o + sz].sum()))
                    top = max(lams)
                    return [l / top for l in lams]
    return None


def verify_difference_rule(
    f1: ex.FunctionDef,
    f2: ex.FunctionDef,
    x: Sequence[float],
    claimed_local_minimizer: bool = False,
    params: SampleParams = DEFAULT_PARAMS,
) -> RuleReport:
    """Difference rule for regular subgradients, checked at vertices
    (sufficient by convexity of the sets involved); optionally also the
    minimizer necessary condition that the second regular subdifferential
    be contained in the first."""
    p = np.asarray(x, dtype=float)
    r1 = regular_subdifferential(f1, p, params)
    r2 = regular_subdifferential(f2, p, params)
    if r2 is None:
        return RuleReport(
            "difference", True, 0.0, {"vacuous": "second regular subdifferential empty"}
        )
    lhs = regular_subdifferential(ex.fsub(f1, f2), p, params)
    worst = 0.0
    if lhs is not None:
        if r1 is None:
            worst = math.inf
        else:
            for v in r2.vertices:
                shifted = r1.translate(-v)
                for u in lhs.vertices:
                    out = minkowski_membership(u, shifted)
                    if isinstance(out, NotMember):
                        worst = max(worst, out.margin)
    detail: dict = {}
    if claimed_local_minimizer or True:
        containment = 0.0
        if r1 is None:
            containment = math.inf
        else:
            for v in r2.vertices:
                out = minkowski_membership(v, r1)
                if isinstance(out, NotMember):
                    containment = max(containment, out.margin)
        detail["minimizer_condition_margin"] = containment
        detail["minimizer_condition_holds"] = containment <= 1e-6
        if claimed_local_minimizer and containment > 1e-6:
            detail["claim_refuted"] = True
    return RuleReport("difference", worst <= 1e-6, worst, detail)


# ---------------------------------------------------------------------------
# Extremal principle solver


@dataclass
class ExtremalTrace:
    ks: list[int]
    iterates: list[np.ndarray]
    gammas: list[float]
    normals: list[list[np.ndarray]]  # per k, per set
    euler_residuals: list[float]  # | sum_i v_ik |
    stationarity_residuals: list[float]  # | sum_i v_ik + 2 (x_k - x_ref) |
    normalization_errors: list[float]


def _shift_at(shift, k: int) -> np.ndarray:
    if callable(shift):
        return np.asarray(shift(k), dtype=float)
    return np.asarray(shift, dtype=float) / k


def extremal_principle_solve(
    sets: Sequence[SetSpec],
    x: Sequence[float],
    shifts: Sequence,
    ks: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024),
) -> ExtremalTrace:
    """Constructive extremal-principle scheme.

    For each k the shifted squared-distance objective is minimized by
    multi-start quasi-Newton descent with the exact projection gradient;
    the scheme fails with a diagnostic when the distance term vanishes
    (the shifts then do not witness extremality at this resolution).

    A shift entry is either a base vector (schedule base/k) or a callable
    k -> vector.  euler_residuals records |sum_i v_ik|, the distance to
    the limiting Euler equation; stationarity_residuals records the Fermat
    residual of the inner minimization and stays at solver tolerance.
    """
    if len(sets) < 2:
        raise SubdiffError("extremal systems need at least two sets")
    if len(shifts) != len(sets):
        raise SubdiffError("one shift sequence per set required")
    x_ref = np.asarray(x, dtype=float)
    dim = x_ref.shape[0]
    for s in sets:
        if not set_membership(s, x_ref):
            raise SubdiffError("reference point must lie in every set")

    trace = ExtremalTrace([], [], [], [], [], [], [])
    for k in ks:
        a = [_shift_at(sh, k) for sh in shifts]

        def gamma_and_projections(pt: np.ndarray):
            ws = [project_onto(s, pt + ai) for s, ai in zip(sets, a)]
            gamma = math.sqrt(
                sum(float(np.dot(pt + ai - w, pt + ai - w)) for ai, w in zip(a, ws))
            )
            return gamma, ws

        def objective(pt: np.ndarray) -> float:
            gamma, _ = gamma_and_projections(pt)
            return gamma + float(np.dot(pt - x_ref, pt - x_ref))

        def grad(pt: np.ndarray) -> np.ndarray:
            gamma, ws = gamma_and_projections(pt)
            if gamma < 1e-14:
                return 2 * (pt - x_ref)
            g = 2 * (pt - x_ref)
            for ai, w in zip(a, ws):
                g = g + (pt + ai - w) / gamma
            return g

        scale = max(np.linalg.norm(ai) for ai in a)
        starts = [x_ref.copy(), x_ref - np.mean(a, axis=0)]
        starts += [x_ref - ai for ai in a]
        if scale > 0:
            for d in directions(dim, 2 * dim):
                starts.append(x_ref + 0.5 * scale * d)
        best_x, best_val = None, math.inf
        for s0 in starts:
            res = sciopt.minimize(
                objective,
                s0,
                jac=grad,
                method="L-BFGS-B",
                options={"maxiter": 500, "ftol": 1e-18, "gtol": 1e-12},
            )
            if res.fun < best_val:
                best_val, best_x = res.fun, res.x
        # polish: simplex refinement removes the last quasi-Newton slack
        res = sciopt.minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={"xatol": 1e-14, "fatol": 1e-16, "maxiter": 4000},
        )
        if res.fun < best_val:
            best_x = res.x
        xk = best_x

        gamma, ws = gamma_and_projections(xk)
        if gamma <= 1e-12 * (1 + scale):
            raise ExtremalityNotWitnessed(k)
        vs = [(xk + ai - w) / gamma for ai, w in zip(a, ws)]
        n_err = abs(sum(float(np.dot(v, v)) for v in vs) - 1.0)
        euler = float(np.linalg.norm(sum(vs)))
        stationarity = float(np.linalg.norm(sum(vs) + 2 * (xk - x_ref)))

        trace.ks.append(int(k))
        trace.iterates.append(xk)
        trace.gammas.append(gamma)
        trace.normals.append(vs)
        trace.euler_residuals.append(euler)
        trace.stationarity_residuals.append(stationarity)
        trace.normalization_errors.append(n_err)
    return trace


# ---------------------------------------------------------------------------
# Epigraph consistency


@dataclass
class EpigraphReport:
    basic_discrepancy: float
    singular_consistent: bool
    basic_direct: PolytopeUnion
    basic_via_epigraph: PolytopeUnion


def epigraph_consistency_check(
    f: ex.FunctionDef,
    x: Sequence[float],
    params: SampleParams = DEFAULT_PARAMS,
) -> EpigraphReport:
    """Compare the direct subdifferentials with the epigraph/coderivative
    route: slicing the epigraph normal cone at height one must reproduce
    the basic subdifferential, and at height zero the singular one."""
    p = ex.as_point(f.space, x)
    direct = basic_subdifferential(f, p, params)
    spec = SetSpec.epigraph(f)
    q = np.concatenate([p, [ex.evaluate(f, p)]])
    slices = coderivative(spec, q, np.array([1.0]), params)
    parts = []
    for comp in slices:
        if not comp.recession.is_zero():
            raise SubdiffError("epigraph slice unbounded for a Lipschitz function")
        parts.append(comp.base)
    via = PolytopeUnion.create(parts)
    zero_slices = coderivative(spec, q, np.array([0.0]), params)
    singular_ok = all(c.is_zero_only() for c in zero_slices)
    return EpigraphReport(
        basic_discrepancy=hausdorff_distance(direct, via),
        singular_consistent=singular_ok,
        basic_direct=direct,
        basic_via_epigraph=via,
    )
