"""Expression language for convex objectives and constraints.

A small convex-atom calculus: affine forms, squares, guarded powers, exp and
Euclidean norms of affine arguments.  Expressions are immutable trees that
evaluate exactly, differentiate exactly (the norm atom is smoothed for
derivatives only) and carry a curvature tag computed bottom-up.  A
line-oriented text format describes whole problems; see :func:`parse_problem`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import polyhedra

AFFINE = "affine"
CONVEX = "convex"
UNKNOWN = "unknown"

NORM_SMOOTHING = 1e-8


class ExprError(Exception):
    """Base class for expression and problem-file failures."""


class ParseError(ExprError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class DomainError(ExprError):
    """Evaluation outside a guard, e.g. a negative argument to a power."""


class ConvexityError(ExprError):
    """Curvature verification rejected an expression."""


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base node.  Subclasses set ``curvature`` and ``nonneg`` on creation."""

    curvature: str = UNKNOWN
    nonneg: bool = False

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def affine_form(self, n: int) -> tuple[np.ndarray, float] | None:
        """Coefficients and offset when the node is affine, else None."""
        return None

    def __str__(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Expr):
    c: float

    def __post_init__(self):
        object.__setattr__(self, "curvature", AFFINE)
        object.__setattr__(self, "nonneg", self.c >= 0.0)

    def value(self, x):
        return self.c

    def grad(self, x):
        return np.zeros(len(x))

    def hess(self, x):
        return np.zeros((len(x), len(x)))

    def affine_form(self, n):
        return np.zeros(n), self.c

    def __str__(self):
        return repr(self.c) if self.c != int(self.c) else str(int(self.c))


@dataclass(frozen=True)
class Variable(Expr):
    index: int  # 1-based

    def __post_init__(self):
        if self.index < 1:
            raise ParseError(f"variable index must be >= 1, got {self.index}")
        object.__setattr__(self, "curvature", AFFINE)

    def value(self, x):
        return float(x[self.index - 1])

    def grad(self, x):
        g = np.zeros(len(x))
        g[self.index - 1] = 1.0
        return g

    def hess(self, x):
        return np.zeros((len(x), len(x)))

    def affine_form(self, n):
        coeffs = np.zeros(n)
        coeffs[self.index - 1] = 1.0
        return coeffs, 0.0

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple[Expr, ...]

    def __post_init__(self):
        curv = AFFINE
        for t in self.terms:
            if t.curvature == UNKNOWN:
                curv = UNKNOWN
                break
            if t.curvature == CONVEX:
                curv = CONVEX
        object.__setattr__(self, "curvature", curv)
        object.__setattr__(self, "nonneg", all(t.nonneg for t in self.terms))

    def value(self, x):
        return sum(t.value(x) for t in self.terms)

    def grad(self, x):
        return sum(t.grad(x) for t in self.terms)

    def hess(self, x):
        return sum(t.hess(x) for t in self.terms)

    def affine_form(self, n):
        coeffs, offset = np.zeros(n), 0.0
        for t in self.terms:
            form = t.affine_form(n)
            if form is None:
                return None
            coeffs += form[0]
            offset += form[1]
        return coeffs, offset

    def __str__(self):
        return " + ".join(str(t) for t in self.terms)


@dataclass(frozen=True)
class Difference(Expr):
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.left.curvature == AFFINE and self.right.curvature == AFFINE:
            curv = AFFINE
        elif self.left.curvature != UNKNOWN and self.right.curvature == AFFINE:
            curv = CONVEX
        else:
            curv = UNKNOWN
        object.__setattr__(self, "curvature", curv)

    def value(self, x):
        return self.left.value(x) - self.right.value(x)

    def grad(self, x):
        return self.left.grad(x) - self.right.grad(x)

    def hess(self, x):
        return self.left.hess(x) - self.right.hess(x)

    def affine_form(self, n):
        lf, rf = self.left.affine_form(n), self.right.affine_form(n)
        if lf is None or rf is None:
            return None
        return lf[0] - rf[0], lf[1] - rf[1]

    def __str__(self):
        rhs = str(self.right)
        if isinstance(self.right, (Sum, Difference)):
            rhs = f"({rhs})"
        return f"{str(self.left)} - {rhs}"


@dataclass(frozen=True)
class Scale(Expr):
    coeff: float
    arg: Expr

    def __post_init__(self):
        if self.arg.curvature == AFFINE:
            curv = AFFINE
        elif self.coeff >= 0.0 and self.arg.curvature == CONVEX:
            curv = CONVEX
        else:
            curv = UNKNOWN
        object.__setattr__(self, "curvature", curv)
        object.__setattr__(self, "nonneg", self.coeff >= 0.0 and self.arg.nonneg)

    def value(self, x):
        return self.coeff * self.arg.value(x)

    def grad(self, x):
        return self.coeff * self.arg.grad(x)

    def hess(self, x):
        return self.coeff * self.arg.hess(x)

    def affine_form(self, n):
        form = self.arg.affine_form(n)
        if form is None:
            return None
        return self.coeff * form[0], self.coeff * form[1]

    def __str__(self):
        inner = str(self.arg)
        if isinstance(self.arg, (Sum, Difference)):
            inner = f"({inner})"
        c = Constant(self.coeff)
        return f"{c} * {inner}"


@dataclass(frozen=True)
class Square(Expr):
    arg: Expr

    def __post_init__(self):
        if self.arg.curvature == AFFINE or (self.arg.curvature == CONVEX and self.arg.nonneg):
            curv = CONVEX
        else:
            curv = UNKNOWN
        object.__setattr__(self, "curvature", curv)
        object.__setattr__(self, "nonneg", True)

    def value(self, x):
        return self.arg.value(x) ** 2

    def grad(self, x):
        return 2.0 * self.arg.value(x) * self.arg.grad(x)

    def hess(self, x):
        g = self.arg.grad(x)
        return 2.0 * np.outer(g, g) + 2.0 * self.arg.value(x) * self.arg.hess(x)

    def __str__(self):
        return f"sqr({self.arg})"


@dataclass(frozen=True)
class Power(Expr):
    """``arg ** p`` with ``p >= 1`` on a nonnegativity-guarded argument."""

    arg: Expr
    exponent: float

    def __post_init__(self):
        if self.exponent < 1.0:
            raise ParseError(f"pow exponent must be >= 1, got {self.exponent}")
        if self.exponent == 1.0:
            curv = self.arg.curvature
        elif self.arg.curvature in (AFFINE, CONVEX):
            curv = CONVEX
        else:
            curv = UNKNOWN
        object.__setattr__(self, "curvature", curv)
        object.__setattr__(self, "nonneg", True)

    def _base(self, x):
        v = self.arg.value(x)
        if v < -1e-12:
            raise DomainError(f"pow argument is negative ({v!r}) at {list(x)}")
        return max(v, 0.0)

    def value(self, x):
        return self._base(x) ** self.exponent

    def grad(self, x):
        v, p = max(self._base(x), 1e-12), self.exponent
        return p * v ** (p - 1.0) * self.arg.grad(x)

    def hess(self, x):
        v, p = max(self._base(x), 1e-12), self.exponent
        g = self.arg.grad(x)
        return (p * (p - 1.0) * v ** (p - 2.0) * np.outer(g, g)
                + p * v ** (p - 1.0) * self.arg.hess(x))

    def __str__(self):
        return f"pow({self.arg}, {Constant(self.exponent)})"


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr

    def __post_init__(self):
        curv = CONVEX if self.arg.curvature in (AFFINE, CONVEX) else UNKNOWN
        object.__setattr__(self, "curvature", curv)
        object.__setattr__(self, "nonneg", True)

    def value(self, x):
        return float(np.exp(min(self.arg.value(x), 700.0)))

    def grad(self, x):
        return self.value(x) * self.arg.grad(x)

    def hess(self, x):
        g = self.arg.grad(x)
        return self.value(x) * (np.outer(g, g) + self.arg.hess(x))

    def __str__(self):
        return f"exp({self.arg})"


@dataclass(frozen=True)
class Norm2(Expr):
    """Euclidean norm of affine arguments; derivatives use a smoothed form."""

    args: tuple[Expr, ...]

    def __post_init__(self):
        if not all(a.curvature == AFFINE for a in self.args):
            raise ParseError("norm2 arguments must be affine")
        object.__setattr__(self, "curvature", CONVEX)
        object.__setattr__(self, "nonneg", True)

    def _rows(self, x):
        vals = np.array([a.value(x) for a in self.args])
        rows = np.vstack([a.grad(x) for a in self.args])
        return vals, rows

    def value(self, x):
        vals = np.array([a.value(x) for a in self.args])
        return float(np.sqrt(np.sum(vals ** 2)))

    def grad(self, x):
        vals, rows = self._rows(x)
        s = np.sqrt(np.sum(vals ** 2) + NORM_SMOOTHING)
        return rows.T @ vals / s

    def hess(self, x):
        vals, rows = self._rows(x)
        s = np.sqrt(np.sum(vals ** 2) + NORM_SMOOTHING)
        av = rows.T @ vals
        return rows.T @ rows / s - np.outer(av, av) / s ** 3

    def __str__(self):
        return "norm2(" + ", ".join(str(a) for a in self.args) + ")"


# ---------------------------------------------------------------------------
# Public evaluation helpers


def evaluate(e: Expr, x) -> float:
    """Exact value of the expression tree at point ``x``."""
    return float(e.value(np.asarray(x, dtype=float)))


def gradient(e: Expr, x) -> np.ndarray:
    """Gradient at ``x`` (smoothed at the norm atom's kink)."""
    return np.asarray(e.grad(np.asarray(x, dtype=float)), dtype=float)


def hessian(e: Expr, x) -> np.ndarray:
    """Hessian at ``x``; needed by the barrier solver's Newton steps."""
    return np.asarray(e.hess(np.asarray(x, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# Expression parser (recursive descent)

_TOKEN_RE = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                       r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
                       r"|(?P<sym>[-+*(),]))")

_FUNCTIONS = {"sqr", "exp", "pow", "norm2"}


class _Tokens:
    def __init__(self, text: str, line: int | None = None):
        self.text = text
        self.line = line
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                if text[pos:].strip():
                    raise ParseError(f"unexpected character {text[pos:].strip()[0]!r}",
                                     line, pos + 1)
                break
            kind = m.lastgroup
            self.items.append((kind, m.group(kind), m.start(kind) + 1))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else (None, "", len(self.text) + 1)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, col = self.next()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}",
                             self.line, col)

    def error(self, message: str):
        _, val, col = self.peek()
        raise ParseError(f"{message} (near {val or 'end of input'!r})", self.line, col)


def _parse_expr(toks: _Tokens) -> Expr:
    negate = False
    if toks.peek()[1] == "-":
        toks.next()
        negate = True
    node = _parse_term(toks)
    if negate:
        node = Difference(Constant(0.0), node)
    while toks.peek()[1] in ("+", "-"):
        op = toks.next()[1]
        rhs = _parse_term(toks)
        node = Sum((node, rhs)) if op == "+" else Difference(node, rhs)
    return node


def _parse_term(toks: _Tokens) -> Expr:
    factors = [_parse_factor(toks)]
    while toks.peek()[1] == "*":
        toks.next()
        factors.append(_parse_factor(toks))
    coeff = 1.0
    main: Expr | None = None
    for f in factors:
        if isinstance(f, Constant):
            coeff *= f.c
        elif main is None:
            main = f
        else:
            toks.error("a product may contain at most one non-constant factor")
    if main is None:
        return Constant(coeff)
    if coeff == 1.0:
        return main
    return Scale(coeff, main)


def _parse_number(toks: _Tokens) -> float:
    sign = 1.0
    if toks.peek()[1] == "-":
        toks.next()
        sign = -1.0
    kind, val, col = toks.next()
    if kind != "num":
        raise ParseError(f"expected a number, found {val!r}", toks.line, col)
    return sign * float(val)


def _parse_factor(toks: _Tokens) -> Expr:
    kind, val, col = toks.next()
    if kind == "num":
        return Constant(float(val))
    if val == "(":
        inner = _parse_expr(toks)
        toks.expect(")")
        return inner
    if kind == "name":
        m = re.fullmatch(r"x(\d+)", val)
        if m:
            return Variable(int(m.group(1)))
        if val in _FUNCTIONS:
            toks.expect("(")
            args = [_parse_expr(toks)]
            while toks.peek()[1] == ",":
                toks.next()
                if val == "pow" and len(args) == 1:
                    exponent = _parse_number(toks)
                    toks.expect(")")
                    return Power(args[0], exponent)
                args.append(_parse_expr(toks))
            toks.expect(")")
            if val == "sqr":
                if len(args) != 1:
                    raise ParseError("sqr takes one argument", toks.line, col)
                return Square(args[0])
            if val == "exp":
                if len(args) != 1:
                    raise ParseError("exp takes one argument", toks.line, col)
                return Exp(args[0])
            if val == "pow":
                raise ParseError("pow takes an expression and an exponent", toks.line, col)
            return Norm2(tuple(args))
        raise ParseError(f"unknown identifier {val!r}", toks.line, col)
    raise ParseError(f"unexpected token {val or 'end of input'!r}", toks.line, col)


def parse_expression(text: str, line: int | None = None) -> Expr:
    toks = _Tokens(text, line)
    node = _parse_expr(toks)
    if toks.peek()[0] is not None:
        toks.error("trailing input after expression")
    return node


# ---------------------------------------------------------------------------
# Problem specification


@dataclass(frozen=True)
class ProblemSpec:
    """A validated convex vector optimization problem.

    Objectives are minimized with respect to the partial order of the cone
    spanned by ``cone_generators``; each constraint expression ``g`` means
    ``g(x) <= 0``.  ``free`` marks a problem whose feasible set is all of
    R^n.  Instances are immutable and safe to share between solver threads.
    """

    n: int
    q: int
    objectives: tuple[Expr, ...]
    constraints: tuple[Expr, ...]
    cone_generators: np.ndarray        # rows span the ordering cone
    cone_dual_generators: np.ndarray   # rows span its positive dual
    free: bool = False
    generators_given: bool = True
    dual_given: bool = False
    name: str | None = None

    def __post_init__(self):
        self.cone_generators.flags.writeable = False
        self.cone_dual_generators.flags.writeable = False

    def objective_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([g.value(x) for g in self.objectives])

    def constraint_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([g.value(x) for g in self.constraints])

    def max_variable_index(self) -> int:
        return self.n


def _check_variable_indices(e: Expr, n: int, what: str) -> None:
    if isinstance(e, Variable):
        if e.index > n:
            raise ParseError(f"{what} references x{e.index} but vars is {n}")
        return
    for f in getattr(e, "__dataclass_fields__", {}):
        v = getattr(e, f)
        if isinstance(v, Expr):
            _check_variable_indices(v, n, what)
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, Expr):
                    _check_variable_indices(item, n, what)


def collect_powers(e: Expr, out: list[Power]) -> None:
    """Append every power atom in the tree to ``out`` (pre-order)."""
    if isinstance(e, Power):
        out.append(e)
    for f in getattr(e, "__dataclass_fields__", {}):
        v = getattr(e, f)
        if isinstance(v, Expr):
            collect_powers(v, out)
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, Expr):
                    collect_powers(item, out)


def _power_guard_ok(p: Power, constraints: tuple[Expr, ...], n: int) -> bool:
    """A power argument is guarded if intrinsically nonnegative or if some
    constraint pins it: a constraint g <= 0 with g == -(argument)."""
    if p.arg.nonneg:
        return True
    form = p.arg.affine_form(n)
    if form is None:
        return False
    for g in constraints:
        gform = g.affine_form(n)
        if gform is None:
            continue
        if np.allclose(gform[0], -form[0], atol=1e-12) and abs(gform[1] + form[1]) <= 1e-12:
            return True
    return False


def verify_c_convexity(objectives: tuple[Expr, ...],
                       dual_generators: np.ndarray) -> None:
    """Accept iff every dual-generator weighting of the objectives is convex.

    All-affine objectives pass outright.  Otherwise each dual generator z
    must put nonnegative weight on every non-affine component; the weighted
    sum is then a nonnegative combination of convex atoms plus an affine
    part, hence convex.  Rejection raises :class:`ConvexityError` naming the
    first offending generator and component.
    """
    if all(g.curvature == AFFINE for g in objectives):
        return
    for g in objectives:
        if g.curvature == UNKNOWN:
            raise ConvexityError(f"objective {g} has unknown curvature")
    for j, z in enumerate(np.atleast_2d(dual_generators)):
        for k, g in enumerate(objectives):
            if z[k] < -1e-12 and g.curvature != AFFINE:
                raise ConvexityError(
                    f"dual generator {j + 1} ({list(np.round(z, 12))}) puts negative "
                    f"weight on non-affine objective {k + 1} ({g})")


def parse_problem(text: str, name: str | None = None) -> ProblemSpec:
    """Parse and validate a problem file; see the module docstring for the
    line grammar.  Curvature tags are assigned bottom-up, the cone is checked
    to be non-trivial, pointed and solid, and a missing generator or dual
    generator set is completed from the other one."""
    n = None
    objectives: list[Expr] = []
    constraints: list[Expr] = []
    generators: list[np.ndarray] = []
    duals: list[np.ndarray] = []
    free = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "vars":
            if n is not None:
                raise ParseError("duplicate vars line", lineno)
            try:
                n = int(rest)
            except ValueError:
                raise ParseError(f"vars expects an integer, found {rest!r}", lineno)
        elif head == "objective":
            objectives.append(parse_expression(rest, lineno))
        elif head == "constraint":
            constraints.append(parse_expression(rest, lineno))
        elif head == "free":
            free = True
        elif head == "cone":
            kind, _, numbers = rest.partition(" ")
            try:
                vec = np.array([float(v) for v in numbers.split()])
            except ValueError:
                raise ParseError(f"cone line has a non-numeric entry: {numbers!r}", lineno)
            if kind == "generator":
                generators.append(vec)
            elif kind == "dual":
                duals.append(vec)
            else:
                raise ParseError(f"cone expects 'generator' or 'dual', found {kind!r}", lineno)
        else:
            raise ParseError(f"unknown directive {head!r}", lineno)

    if n is None:
        raise ParseError("missing vars line")
    if n < 1:
        raise ParseError("n >= 1 required")
    q = len(objectives)
    if q < 2:
        raise ParseError("q >= 2 required (at least two objective lines)")
    if not constraints and not free:
        raise ParseError("at least one constraint is required (or an explicit 'free' line)")
    if constraints and free:
        raise ParseError("'free' cannot be combined with constraints")
    if not generators and not duals:
        raise ParseError("the ordering cone needs generator or dual lines")

    for vecs, what in ((generators, "cone generator"), (duals, "cone dual")):
        for v in vecs:
            if v.shape != (q,):
                raise ParseError(f"{what} must have {q} entries, found {v.shape[0]}")
            if np.max(np.abs(v)) <= 1e-12:
                raise ParseError(f"{what} must be nonzero")

    for k, g in enumerate(objectives, start=1):
        _check_variable_indices(g, n, f"objective {k}")
        if g.curvature == UNKNOWN:
            raise ConvexityError(f"objective {k} ({g}) is not verifiably convex or affine")
    for k, g in enumerate(constraints, start=1):
        _check_variable_indices(g, n, f"constraint {k}")
        if g.curvature == UNKNOWN:
            raise ConvexityError(f"constraint {k} ({g}) is not verifiably convex")

    powers: list[Power] = []
    for e in (*objectives, *constraints):
        collect_powers(e, powers)
    for p in powers:
        if not _power_guard_ok(p, tuple(constraints), n):
            raise ParseError(f"pow argument {p.arg} has no nonnegativity guard")

    gen_arr = np.array(generators) if generators else None
    dual_arr = np.array(duals) if duals else None
    if gen_arr is None:
        gen_arr = polyhedra.cone_from_halfspace_normals(dual_arr)
    if dual_arr is None:
        dual_arr = polyhedra.cone_from_halfspace_normals(gen_arr)
    if generators and duals:
        cross = gen_arr @ dual_arr.T
        if cross.min() < -1e-9:
            raise ParseError("given cone generators and duals are inconsistent")

    polyhedra.validate_ordering_cone(gen_arr)

    spec = ProblemSpec(
        n=n, q=q,
        objectives=tuple(objectives),
        constraints=tuple(constraints),
        cone_generators=gen_arr,
        cone_dual_generators=dual_arr,
        free=free,
        generators_given=bool(generators),
        dual_given=bool(duals),
        name=name,
    )
    verify_c_convexity(spec.objectives, spec.cone_dual_generators)
    return spec


def serialize_problem(spec: ProblemSpec) -> str:
    """Inverse of :func:`parse_problem` up to cone completion."""
    lines = [f"vars {spec.n}"]
    lines += [f"objective {g}" for g in spec.objectives]
    if spec.free:
        lines.append("free")
    lines += [f"constraint {g}" for g in spec.constraints]
    if spec.generators_given:
        for v in spec.cone_generators:
            lines.append("cone generator " + " ".join(repr(float(c)) for c in v))
    if spec.dual_given or not spec.generators_given:
        for z in spec.cone_dual_generators:
            lines.append("cone dual " + " ".join(repr(float(c)) for c in z))
    return "\n".join(lines) + "\n"
