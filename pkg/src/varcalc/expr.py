"""Piecewise-smooth scalar expressions over named real variables.

Expressions are written as s-expressions:

    expr := const | var | "(" op expr+ ")"
    op   := "+" | "-" | "*" | "pow" | "abs" | "max" | "min"

"-" with one child is negation, with two children subtraction.  "pow"
takes an expression and a nonnegative integer exponent.  "abs" takes one
child.  Every expression built this way is a composition of polynomials
with max/min/abs and is therefore locally Lipschitz on all of R^n.

For piecewise analysis an abs node behaves as a two-branch max over
(arg, -arg); max/min nodes branch over their children.  Branches are
addressed by the node's path from the root (tuple of child indices).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

TAU_ACT_DEFAULT = 1e-9
MAX_DIM = 8

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

_OPS = {"+", "-", "*", "pow", "abs", "max", "min"}


class ExprError(ValueError):
    """Base class for expression-layer failures."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownVariableError(ParseError):
    pass


class DimensionMismatchError(ExprError):
    pass


@dataclass(frozen=True)
class VarSpace:
    """Ordered list of variable names; the ambient space is R^dim."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ExprError("variable space must have at least one variable")
        if len(set(self.names)) != len(self.names):
            raise ExprError(f"duplicate variable names in {self.names}")
        if len(self.names) > MAX_DIM:
            raise ExprError(f"dim {len(self.names)} exceeds supported maximum {MAX_DIM}")
        for nm in self.names:
            if not _IDENT_RE.match(nm) or nm in _OPS:
                raise ExprError(f"invalid variable name {nm!r}")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @staticmethod
    def of(*names: str) -> "VarSpace":
        return VarSpace(tuple(names))


@dataclass(frozen=True)
class ExprNode:
    """AST node.  kind in {const, var, add, sub, mul, intpow, abs, max, min}.

    payload holds the constant value (const), variable index (var) or
    integer exponent (intpow).  sub with one child is negation.
    """

    kind: str
    children: tuple["ExprNode", ...] = ()
    payload: float | int | None = None

    def __post_init__(self):
        k = self.kind
        n = len(self.children)
        if k == "const":
            if n or not isinstance(self.payload, float):
                raise ExprError("const node takes a float payload and no children")
        elif k == "var":
            if n or not isinstance(self.payload, int) or self.payload < 0:
                raise ExprError("var node takes a nonnegative index payload")
        elif k in ("add", "mul"):
            if n < 1:
                raise ExprError(f"{k} needs at least one child")
        elif k == "sub":
            if n not in (1, 2):
                raise ExprError("sub takes one (negation) or two children")
        elif k == "intpow":
            if n != 1 or not isinstance(self.payload, int):
                raise ExprError("intpow takes one child and an integer exponent")
            if self.payload < 0:
                raise ExprError("negative intpow exponent")
        elif k == "abs":
            if n != 1:
                raise ExprError("abs takes exactly one child")
        elif k in ("max", "min"):
            if n < 2:
                raise ExprError(f"{k} needs at least two children")
        else:
            raise ExprError(f"unknown node kind {k!r}")


def const(c: float) -> ExprNode:
    return ExprNode("const", payload=float(c))


def var(i: int) -> ExprNode:
    return ExprNode("var", payload=int(i))


PIECEWISE_KINDS = ("max", "min", "abs")

Path = tuple[int, ...]


def branch_count(node: ExprNode) -> int:
    if node.kind == "abs":
        return 2
    return len(node.children)


def branch_child(node: ExprNode, index: int) -> tuple[ExprNode, bool]:
    """Return (child expression, negate flag) for one piecewise branch."""
    if node.kind == "abs":
        if index not in (0, 1):
            raise ExprError("abs branch index must be 0 or 1")
        return node.children[0], index == 1
    return node.children[index], False


@dataclass(frozen=True)
class FunctionDef:
    space: VarSpace
    root: ExprNode

    def __post_init__(self):
        for path, node in walk(self.root):
            if node.kind == "var" and node.payload >= self.space.dim:
                raise ExprError(
                    f"variable index {node.payload} out of range for dim {self.space.dim}"
                )


def walk(node: ExprNode, path: Path = ()) -> Iterator[tuple[Path, ExprNode]]:
    yield path, node
    for i, ch in enumerate(node.children):
        yield from walk(ch, path + (i,))


def piecewise_paths(root: ExprNode) -> list[Path]:
    return [p for p, n in walk(root) if n.kind in PIECEWISE_KINDS]


def node_at(root: ExprNode, path: Path) -> ExprNode:
    node = root
    for i in path:
        node = node.children[i]
    return node


# ---------------------------------------------------------------------------
# Parsing and printing


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            tokens.append((c, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append((text[i:j], i))
            i = j
    return tokens


def parse_function(text: str, space: VarSpace) -> FunctionDef:
    """Parse an s-expression into a FunctionDef over the given space."""
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression", 0)
    pos = 0

    def parse_expr() -> ExprNode:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input", len(text))
        tok, off = tokens[pos]
        if tok == ")":
            raise ParseError("unexpected ')'", off)
        if tok != "(":
            pos += 1
            return parse_atom(tok, off)
        open_off = off
        pos += 1
        if pos >= len(tokens):
            raise ParseError("unclosed list", len(text))
        head, head_off = tokens[pos]
        if head not in _OPS:
            raise ParseError(f"expected operator, got {head!r}", head_off)
        pos += 1
        args: list[ExprNode] = []
        exponent: int | None = None
        while True:
            if pos >= len(tokens):
                raise ParseError("unclosed list", len(text))
            tok, off = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if head == "pow" and len(args) == 1:
                pos += 1
                exponent = parse_exponent(tok, off)
            else:
                args.append(parse_expr())
        return build(head, args, exponent, open_off)

    def parse_atom(tok: str, off: int) -> ExprNode:
        if _NUMBER_RE.match(tok):
            return const(float(tok))
        if _IDENT_RE.match(tok):
            if tok not in space.names:
                raise UnknownVariableError(f"unknown variable {tok!r}", off)
            return var(space.index(tok))
        raise ParseError(f"invalid token {tok!r}", off)

    def parse_exponent(tok: str, off: int) -> int:
        try:
            k = int(tok)
        except ValueError:
            raise ParseError(f"pow exponent must be an integer, got {tok!r}", off) from None
        if k < 0:
            raise ParseError("negative intpow exponent", off)
        return k

    def build(head: str, args: list[ExprNode], exponent: int | None, off: int) -> ExprNode:
        try:
            if head == "+":
                return ExprNode("add", tuple(args))
            if head == "-":
                return ExprNode("sub", tuple(args))
            if head == "*":
                return ExprNode("mul", tuple(args))
            if head == "pow":
                if len(args) != 1 or exponent is None:
                    raise ParseError("pow takes an expression and an integer exponent", off)
                return ExprNode("intpow", tuple(args), exponent)
            if head == "abs":
                return ExprNode("abs", tuple(args))
            if head == "max":
                return ExprNode("max", tuple(args))
            if head == "min":
                return ExprNode("min", tuple(args))
        except ExprError as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(str(e), off) from None
        raise ParseError(f"unknown operator {head!r}", off)

    root = parse_expr()
    if pos != len(tokens):
        raise ParseError("trailing input", tokens[pos][1])
    return FunctionDef(space, root)


def to_text(f: FunctionDef | ExprNode, space: VarSpace | None = None) -> str:
    """Canonical printer; parse(to_text(f)) is structurally equal to f."""
    if isinstance(f, FunctionDef):
        node, space = f.root, f.space
    else:
        node = f
        if space is None:
            raise ExprError("printing a bare node needs a VarSpace")

    def pr(n: ExprNode) -> str:
        if n.kind == "const":
            return repr(n.payload)
        if n.kind == "var":
            return space.names[n.payload]
        if n.kind == "intpow":
            return f"(pow {pr(n.children[0])} {n.payload})"
        head = {"add": "+", "sub": "-", "mul": "*", "abs": "abs", "max": "max", "min": "min"}[n.kind]
        return "(" + head + " " + " ".join(pr(c) for c in n.children) + ")"

    return pr(node)


# ---------------------------------------------------------------------------
# Evaluation


def as_point(space: VarSpace, coords: Sequence[float]) -> np.ndarray:
    p = np.asarray(coords, dtype=float)
    if p.shape != (space.dim,):
        raise DimensionMismatchError(
            f"point of length {p.size} does not match space dim {space.dim}"
        )
    if not np.all(np.isfinite(p)):
        raise ExprError("point coordinates must be finite")
    return p


def evaluate(f: FunctionDef, point: Sequence[float]) -> float:
    p = as_point(f.space, point)

    def ev(n: ExprNode) -> float:
        if n.kind == "const":
            return n.payload
        if n.kind == "var":
            return float(p[n.payload])
        vals = [ev(c) for c in n.children]
        if n.kind == "add":
            return math.fsum(vals)
        if n.kind == "sub":
            return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
        if n.kind == "mul":
            out = 1.0
            for v in vals:
                out *= v
            return out
        if n.kind == "intpow":
            return vals[0] ** n.payload
        if n.kind == "abs":
            return abs(vals[0])
        if n.kind == "max":
            return max(vals)
        return min(vals)

    return ev(f.root)


def eval_batch(f: FunctionDef, points: np.ndarray) -> np.ndarray:
    """Vectorized evaluation on an (N, dim) array of points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != f.space.dim:
        raise DimensionMismatchError(
            f"expected (N, {f.space.dim}) array, got shape {pts.shape}"
        )

    def ev(n: ExprNode) -> np.ndarray:
        if n.kind == "const":
            return np.full(pts.shape[0], n.payload)
        if n.kind == "var":
            return pts[:, n.payload]
        vals = [ev(c) for c in n.children]
        if n.kind == "add":
            out = vals[0].copy()
            for v in vals[1:]:
                out += v
            return out
        if n.kind == "sub":
            return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
        if n.kind == "mul":
            out = vals[0].copy()
            for v in vals[1:]:
                out *= v
            return out
        if n.kind == "intpow":
            return vals[0] ** n.payload
        if n.kind == "abs":
            return np.abs(vals[0])
        if n.kind == "max":
            return np.maximum.reduce(vals)
        return np.minimum.reduce(vals)

    return ev(f.root)


# ---------------------------------------------------------------------------
# Activity analysis and branch gradients


@dataclass(frozen=True)
class ActivePattern:
    """Active branch indices per piecewise node, keyed by node path."""

    selections: tuple[tuple[Path, tuple[int, ...]], ...]

    def __post_init__(self):
        for _, act in self.selections:
            if len(act) == 0:
                raise ExprError("active pattern has an empty selection")

    def as_dict(self) -> dict[Path, tuple[int, ...]]:
        return dict(self.selections)

    def is_smooth(self) -> bool:
        return all(len(act) == 1 for _, act in self.selections)

    def key(self) -> tuple:
        return self.selections

    def num_combinations(self) -> int:
        out = 1
        for _, act in self.selections:
            out *= len(act)
        return out


def active_pattern(f: FunctionDef, point: Sequence[float], tau_act: float = TAU_ACT_DEFAULT) -> ActivePattern:
    """Active branches within absolute tolerance tau_act at the point."""
    if tau_act <= 0:
        raise ExprError("tau_act must be positive")
    p = as_point(f.space, point)
    sels: list[tuple[Path, tuple[int, ...]]] = []

    def ev(n: ExprNode, path: Path) -> float:
        if n.kind == "const":
            return n.payload
        if n.kind == "var":
            return float(p[n.payload])
        vals = [ev(c, path + (i,)) for i, c in enumerate(n.children)]
        if n.kind == "add":
            return math.fsum(vals)
        if n.kind == "sub":
            return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
        if n.kind == "mul":
            out = 1.0
            for v in vals:
                out *= v
            return out
        if n.kind == "intpow":
            return vals[0] ** n.payload
        if n.kind == "abs":
            a = vals[0]
            if abs(a) <= tau_act:
                act = (0, 1)
            elif a > 0:
                act = (0,)
            else:
                act = (1,)
            sels.append((path, act))
            return abs(a)
        if n.kind == "max":
            top = max(vals)
            act = tuple(i for i, v in enumerate(vals) if v >= top - tau_act)
            sels.append((path, act))
            return top
        bot = min(vals)
        act = tuple(i for i, v in enumerate(vals) if v <= bot + tau_act)
        sels.append((path, act))
        return bot

    ev(f.root, ())
    sels.sort(key=lambda s: s[0])
    return ActivePattern(tuple(sels))


def branch_combinations(pattern: ActivePattern) -> list[dict[Path, int]]:
    """All single-branch selections compatible with the pattern, in a
    deterministic order."""
    combos: list[dict[Path, int]] = [{}]
    for path, act in pattern.selections:
        combos = [{**c, path: b} for c in combos for b in act]
    return combos


def gradient_and_contexts(
    f: FunctionDef, point: Sequence[float], selection: Mapping[Path, int]
) -> tuple[np.ndarray, dict[Path, float]]:
    """Gradient of the smooth composition fixed by the branch selection,
    plus the sensitivity of f to each piecewise node's output (its adjoint).

    One forward pass for values, one reverse pass for adjoints; every
    branch is polynomial so this is exact up to rounding.
    """
    p = as_point(f.space, point)
    values: dict[Path, float] = {}

    def fwd(n: ExprNode, path: Path) -> float:
        if n.kind == "const":
            v = n.payload
        elif n.kind == "var":
            v = float(p[n.payload])
        else:
            vals = [fwd(c, path + (i,)) for i, c in enumerate(n.children)]
            if n.kind == "add":
                v = math.fsum(vals)
            elif n.kind == "sub":
                v = -vals[0] if len(vals) == 1 else vals[0] - vals[1]
            elif n.kind == "mul":
                v = 1.0
                for x in vals:
                    v *= x
            elif n.kind == "intpow":
                v = vals[0] ** n.payload
            else:
                if path not in selection:
                    raise ExprError(f"branch selection missing piecewise node at {path}")
                b = selection[path]
                if b >= branch_count(n):
                    raise ExprError(f"branch index {b} out of range at {path}")
                child, negate = branch_child(n, b)
                v = -vals[0] if negate else vals[b if n.kind != "abs" else 0]
        values[path] = v
        return v

    fwd(f.root, ())

    grad = np.zeros(f.space.dim)
    contexts: dict[Path, float] = {}

    def back(n: ExprNode, path: Path, adj: float) -> None:
        if n.kind in PIECEWISE_KINDS:
            contexts[path] = adj
        if n.kind == "const":
            return
        if n.kind == "var":
            grad[n.payload] += adj
            return
        if n.kind == "add":
            for i, c in enumerate(n.children):
                back(c, path + (i,), adj)
        elif n.kind == "sub":
            if len(n.children) == 1:
                back(n.children[0], path + (0,), -adj)
            else:
                back(n.children[0], path + (0,), adj)
                back(n.children[1], path + (1,), -adj)
        elif n.kind == "mul":
            vals = [values[path + (i,)] for i in range(len(n.children))]
            for i, c in enumerate(n.children):
                others = 1.0
                for j, v in enumerate(vals):
                    if j != i:
                        others *= v
                back(c, path + (i,), adj * others)
        elif n.kind == "intpow":
            k = n.payload
            if k == 0:
                return
            base = values[path + (0,)]
            back(n.children[0], path + (0,), adj * k * base ** (k - 1))
        else:
            b = selection[path]
            _, negate = branch_child(n, b)
            child_index = 0 if n.kind == "abs" else b
            back(n.children[child_index], path + (child_index,), -adj if negate else adj)

    back(f.root, (), 1.0)
    return grad, contexts


def branch_gradient(
    f: FunctionDef, point: Sequence[float], selection: Mapping[Path, int]
) -> np.ndarray:
    grad, _ = gradient_and_contexts(f, point, selection)
    return grad


# ---------------------------------------------------------------------------
# AST surgery used by the subdifferential machinery


def restrict_to_pattern(f: FunctionDef, pattern: ActivePattern) -> FunctionDef:
    """Prune piecewise nodes to the branches active in the pattern.

    Nodes restricted to a single branch collapse to that branch (negated
    for the negative abs branch); max/min keep their kind over the
    surviving children.
    """
    sel = pattern.as_dict()

    def rebuild(n: ExprNode, path: Path) -> ExprNode:
        if n.kind in ("const", "var"):
            return n
        if n.kind not in PIECEWISE_KINDS:
            return ExprNode(n.kind, tuple(rebuild(c, path + (i,)) for i, c in enumerate(n.children)), n.payload)
        act = sel.get(path)
        if act is None:
            raise ExprError(f"pattern missing piecewise node at {path}")
        if n.kind == "abs":
            child = rebuild(n.children[0], path + (0,))
            if act == (0, 1):
                return ExprNode("abs", (child,))
            if act == (0,):
                return child
            return ExprNode("sub", (child,))
        kept = [rebuild(n.children[i], path + (i,)) for i in act]
        if len(kept) == 1:
            return kept[0]
        return ExprNode(n.kind, tuple(kept))

    return FunctionDef(f.space, rebuild(f.root, ()))


def negate(f: FunctionDef) -> FunctionDef:
    return FunctionDef(f.space, ExprNode("sub", (f.root,)))


def fsum(*fs: FunctionDef) -> FunctionDef:
    space = fs[0].space
    for g in fs:
        if g.space != space:
            raise DimensionMismatchError("summands live in different spaces")
    return FunctionDef(space, ExprNode("add", tuple(g.root for g in fs)))


def fsub(f: FunctionDef, g: FunctionDef) -> FunctionDef:
    if f.space != g.space:
        raise DimensionMismatchError("operands live in different spaces")
    return FunctionDef(f.space, ExprNode("sub", (f.root, g.root)))


def lift_to_product(f: FunctionDef, product: VarSpace, offset: int) -> FunctionDef:
    """Re-index f's variables into a product space starting at offset."""
    if offset + f.space.dim > product.dim:
        raise DimensionMismatchError("lift does not fit in the product space")

    def rebuild(n: ExprNode) -> ExprNode:
        if n.kind == "var":
            return var(n.payload + offset)
        if n.kind in ("const",):
            return n
        return ExprNode(n.kind, tuple(rebuild(c) for c in n.children), n.payload)

    return FunctionDef(product, rebuild(f.root))


# ---------------------------------------------------------------------------
# Shape heuristics

_AFFINE = "affine"
_CONVEX = "convex"
_CONCAVE = "concave"
_UNKNOWN = "unknown"


def shape_class(f: FunctionDef) -> str:
    """Conservative syntactic convexity check.

    Returns one of affine/convex/concave/unknown; "convex" is only
    reported when convexity is certain from the structure.
    """

    def shape(n: ExprNode) -> str:
        if n.kind in ("const", "var"):
            return _AFFINE
        if n.kind == "add":
            return _combine_sum([shape(c) for c in n.children])
        if n.kind == "sub":
            if len(n.children) == 1:
                return _flip(shape(n.children[0]))
            return _combine_sum([shape(n.children[0]), _flip(shape(n.children[1]))])
        if n.kind == "mul":
            shapes = [shape(c) for c in n.children]
            non_const = [(c, s) for c, s in zip(n.children, shapes) if c.kind != "const"]
            sign = 1.0
            for c in n.children:
                if c.kind == "const":
                    sign *= c.payload
            if not non_const:
                return _AFFINE
            if len(non_const) == 1:
                s = non_const[0][1]
                if sign == 0:
                    return _AFFINE
                return s if sign > 0 else _flip(s)
            if len(non_const) == 2 and non_const[0][0] == non_const[1][0] and non_const[0][1] == _AFFINE:
                return _CONVEX if sign > 0 else (_CONCAVE if sign < 0 else _AFFINE)
            return _UNKNOWN
        if n.kind == "intpow":
            s = shape(n.children[0])
            if n.payload == 0:
                return _AFFINE
            if n.payload == 1:
                return s
            if s == _AFFINE and n.payload % 2 == 0:
                return _CONVEX
            return _UNKNOWN
        if n.kind == "abs":
            return _CONVEX if shape(n.children[0]) == _AFFINE else _UNKNOWN
        if n.kind == "max":
            shapes = [shape(c) for c in n.children]
            return _CONVEX if all(s in (_AFFINE, _CONVEX) for s in shapes) else _UNKNOWN
        shapes = [shape(c) for c in n.children]
        return _CONCAVE if all(s in (_AFFINE, _CONCAVE) for s in shapes) else _UNKNOWN

    return shape(f.root)


def _flip(s: str) -> str:
    return {_AFFINE: _AFFINE, _CONVEX: _CONCAVE, _CONCAVE: _CONVEX, _UNKNOWN: _UNKNOWN}[s]


def _combine_sum(shapes: list[str]) -> str:
    if all(s == _AFFINE for s in shapes):
        return _AFFINE
    if all(s in (_AFFINE, _CONVEX) for s in shapes):
        return _CONVEX
    if all(s in (_AFFINE, _CONCAVE) for s in shapes):
        return _CONCAVE
    return _UNKNOWN


def is_syntactically_convex(f: FunctionDef) -> bool:
    return shape_class(f) in (_AFFINE, _CONVEX)


def affine_parts(f: FunctionDef) -> tuple[np.ndarray, float] | None:
    """Return (w, b) with f(x) = <w, x> + b, or None if f is not affine.

    Detection: no piecewise nodes, constant gradient at probe points and
    exact agreement of the affine model at a further probe set.
    """
    if piecewise_paths(f.root):
        return None
    dim = f.space.dim
    rng = np.random.default_rng(20240901)
    probes = rng.uniform(-1.3, 1.7, size=(4, dim))
    g0 = branch_gradient(f, probes[0], {})
    for p in probes[1:]:
        if not np.allclose(branch_gradient(f, p, {}), g0, atol=1e-10, rtol=0):
            return None
    b = evaluate(f, np.zeros(dim))
    for p in probes:
        if abs(evaluate(f, p) - (float(g0 @ p) + b)) > 1e-9 * (1 + abs(b)):
            return None
    return g0, b
