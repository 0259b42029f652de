"""Scalar convex programming layer.

A log-barrier method with damped Newton steps solves the three scalar
problems the vector algorithms need: a phase-one feasibility program, the
weighted-sum program and the Pascoletti-Serafini program, whose Lagrange
multipliers give the supporting-hyperplane normals.  Unboundedness is
certified by a configurable cap on objective magnitude together with a
descent check, which is the standard finite realization of the
bounded/unbounded oracle the algorithms assume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .expressions import DomainError, Expr, ProblemSpec, Power, collect_powers

OPTIMAL = "optimal"
UNBOUNDED = "unbounded"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


class ScalarizationError(Exception):
    pass


class SlaterError(ScalarizationError):
    """Feasible set has no strictly feasible point within reach."""


@dataclass(frozen=True)
class SolverOptions:
    """Tunables of the scalar solver; defaults suit tolerances >= 1e-8."""

    tolerance: float = 1e-6          # accepted accuracy of scalar solves
    cap: float = 1e8                 # unboundedness cap on |objective|, |x|
    barrier_t0: float = 1.0
    barrier_mult: float = 10.0
    barrier_stages: int = 12
    newton_max_iter: int = 100
    linesearch_alpha: float = 0.25
    linesearch_beta: float = 0.5
    mix: float = 0.5                 # convex-combination weight for refinements
    phase1_box: float = 10.0         # initial search box of the feasibility phase

    def __post_init__(self):
        for name in ("tolerance", "cap", "barrier_t0", "barrier_mult",
                     "linesearch_alpha", "linesearch_beta", "mix", "phase1_box"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.mix < 1:
            raise ValueError("mix must lie in (0, 1)")


@dataclass(frozen=True)
class ScalarOutcome:
    """Result of one scalar solve.

    ``value`` is the objective value of the underlying program (for the
    Pascoletti-Serafini program this equals ``z``).  ``multiplier`` is the
    dual weight vector w scaled so that ``w @ d == -1``; it is a nonnegative
    combination of the dual-cone generators by construction.  ``attained``
    is False when the solver accepted a near-optimal iterate without a
    convergence certificate (noncompact feasible sets).
    """

    status: str
    x: np.ndarray | None = None
    value: float | None = None
    z: float | None = None
    multiplier: np.ndarray | None = None
    attained: bool = True

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class _Fn:
    val: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]


def _expr_fn(e: Expr) -> _Fn:
    return _Fn(e.value, e.grad, e.hess)


def _weighted_objective(spec: ProblemSpec, w: np.ndarray) -> _Fn:
    terms = [(float(wk), g) for wk, g in zip(w, spec.objectives) if wk != 0.0]

    def val(x):
        return sum(wk * g.value(x) for wk, g in terms)

    def grad(x):
        out = np.zeros(len(x))
        for wk, g in terms:
            out += wk * g.grad(x)
        return out

    def hess(x):
        out = np.zeros((len(x), len(x)))
        for wk, g in terms:
            out += wk * g.hess(x)
        return out

    return _Fn(val, grad, hess)


def _lift(fn: _Fn, n: int, extra: int, coeffs: np.ndarray | None = None) -> _Fn:
    """Embed a function of x into (x, extra) space, optionally adding a
    linear term in the extra variables."""
    c = np.zeros(extra) if coeffs is None else np.asarray(coeffs, dtype=float)

    def val(y):
        return fn.val(y[:n]) + float(c @ y[n:])

    def grad(y):
        return np.concatenate([fn.grad(y[:n]), c])

    def hess(y):
        h = np.zeros((n + extra, n + extra))
        h[:n, :n] = fn.hess(y[:n])
        return h

    return _Fn(val, grad, hess)


def _linear_fn(coeffs: np.ndarray, offset: float = 0.0) -> _Fn:
    coeffs = np.asarray(coeffs, dtype=float)
    dim = len(coeffs)

    def val(y):
        return float(coeffs @ y) + offset

    def grad(y):
        return coeffs.copy()

    def hess(y):
        return np.zeros((dim, dim))

    return _Fn(val, grad, hess)


# ---------------------------------------------------------------------------
# Barrier core


def _safe_vals(gs: Sequence[_Fn], y: np.ndarray) -> np.ndarray | None:
    try:
        return np.array([g.val(y) for g in gs])
    except (DomainError, FloatingPointError, OverflowError):
        return None


def _barrier_value(f0: _Fn, gs, y, t) -> float | None:
    vals = _safe_vals(gs, y)
    if vals is None or np.any(vals >= 0.0) or not np.all(np.isfinite(vals)):
        return None
    try:
        fv = f0.val(y)
    except DomainError:
        return None
    total = t * fv - float(np.sum(np.log(-vals)))
    return total if np.isfinite(total) else None


class _Diverged(Exception):
    def __init__(self, y):
        super().__init__()
        self.y = y


class _Stalled(Exception):
    def __init__(self, y):
        super().__init__()
        self.y = y


def _newton_stage(f0: _Fn, gs: Sequence[_Fn], y: np.ndarray, t: float,
                  opts: SolverOptions) -> np.ndarray:
    """Minimize t*f0 - sum log(-g) from a strictly feasible y.

    Raises _Diverged when the objective crosses the unboundedness cap with
    sustained descent, _Stalled when the iteration budget runs out while
    progress is still being made.
    """
    with np.errstate(all="ignore"):
        return _newton_loop(f0, gs, y, t, opts)


def _newton_loop(f0: _Fn, gs: Sequence[_Fn], y: np.ndarray, t: float,
                 opts: SolverOptions) -> np.ndarray:
    start_val = f0.val(y)
    decreased = False
    for _ in range(opts.newton_max_iter):
        vals = np.array([g.val(y) for g in gs])
        grads = [g.grad(y) for g in gs]
        grad = t * f0.grad(y)
        hess = t * f0.hess(y)
        for gv, gg, g in zip(vals, grads, gs):
            grad += -gg / gv
            hess += np.outer(gg, gg) / gv ** 2 - g.hess(y) / gv

        step = None
        ridge = 0.0
        for _attempt in range(14):
            try:
                reg = hess if ridge == 0.0 else hess + ridge * np.eye(len(y))
                ch = np.linalg.cholesky(reg)
                step = -np.linalg.solve(ch.T, np.linalg.solve(ch, grad))
                break
            except np.linalg.LinAlgError:
                ridge = 1e-12 if ridge == 0.0 else ridge * 100.0
        if step is None or not np.all(np.isfinite(step)):
            raise _Stalled(y)

        decrement = float(-grad @ step)
        if decrement / 2.0 <= 1e-11:
            return y

        current = _barrier_value(f0, gs, y, t)
        slope = opts.linesearch_alpha * float(grad @ step)
        size = 1.0
        for _bt in range(80):
            cand = y + size * step
            value = _barrier_value(f0, gs, cand, t)
            if value is not None and value <= current + size * slope:
                break
            size *= opts.linesearch_beta
        else:
            return y  # no admissible step: accept the current iterate
        if size * abs(slope) <= 1e-13 * max(1.0, abs(current)):
            return cand  # progress below float precision: converged
        y = cand

        fv = f0.val(y)
        if fv < start_val - 1e-12:
            decreased = True
        if fv < -opts.cap:
            raise _Diverged(y)
        if float(np.sum(np.abs(y))) > opts.cap and decreased:
            raise _Diverged(y)
    if decreased:
        raise _Stalled(y)
    return y


def _barrier_minimize(f0: _Fn, gs: Sequence[_Fn], y0: np.ndarray,
                      opts: SolverOptions) -> tuple[str, np.ndarray, np.ndarray, bool]:
    """Returns (status, y, constraint multipliers, attained)."""
    y = np.asarray(y0, dtype=float)
    vals = _safe_vals(gs, y)
    if vals is None or np.any(vals >= 0.0):
        raise ScalarizationError("barrier started at an infeasible point")
    if not gs:
        # Unconstrained: plain Newton at a fixed scale.
        try:
            y = _newton_stage(f0, gs, y, 1.0, opts)
        except _Diverged as exc:
            return UNBOUNDED, exc.y, np.zeros(0), True
        except _Stalled as exc:
            if f0.val(exc.y) < -opts.cap * 1e-4:
                return UNBOUNDED, exc.y, np.zeros(0), True
            return NUMERICAL_FAILURE, exc.y, np.zeros(0), True
        return OPTIMAL, y, np.zeros(0), True

    t = opts.barrier_t0
    attained = True
    stage = 0
    repeats = 0
    while stage < opts.barrier_stages:
        f_start = f0.val(y)
        stalled = False
        try:
            y = _newton_stage(f0, gs, y, t, opts)
        except _Diverged as exc:
            return UNBOUNDED, exc.y, np.zeros(len(gs)), True
        except _Stalled as exc:
            y = exc.y
            stalled = True
            attained = False
        # A stage that ran out of Newton iterations while still descending is
        # repeated at the same centering parameter: a bounded problem will
        # eventually center, an unbounded one keeps falling until it crosses
        # the cap.  Raising t here would shrink the steps near the boundary
        # and disguise a diverging objective as a converged one.
        if stalled and f0.val(y) < f_start - 1e-7 * max(1.0, abs(f_start)):
            repeats += 1
            if repeats >= 20:
                return UNBOUNDED, y, np.zeros(len(gs)), True
            continue
        repeats = 0
        if len(gs) / t < opts.tolerance:
            break
        t *= opts.barrier_mult
        stage += 1
    vals = np.array([g.val(y) for g in gs])
    if np.any(vals >= 0.0):
        return NUMERICAL_FAILURE, y, np.zeros(len(gs)), attained
    multipliers = 1.0 / (t * (-vals))
    return OPTIMAL, y, multipliers, attained


# ---------------------------------------------------------------------------
# Phase one


def _collect_guards(spec: ProblemSpec) -> list[np.ndarray]:
    guards = []
    out: list[Power] = []
    for e in (*spec.objectives, *spec.constraints):
        collect_powers(e, out)
    for p in out:
        form = p.arg.affine_form(spec.n)
        if form is not None and not p.arg.nonneg:
            guards.append(np.append(form[0], form[1]))  # coeffs, offset
    return guards


def _domain_start(spec: ProblemSpec) -> np.ndarray:
    """A point where every guarded atom is defined; the origin unless affine
    power guards say otherwise."""
    x = np.zeros(spec.n)
    guards = _collect_guards(spec)
    if not guards or all(g[:-1] @ x + g[-1] >= 0.5 for g in guards):
        return x
    from .lp import solve_lp
    # max m s.t. guard(x) >= m, m <= 1  (variables x, m)
    rows = [np.append(g[:-1], -1.0) for g in guards]
    rhs = [-g[-1] for g in guards]
    cap = np.zeros(spec.n + 1)
    cap[-1] = -1.0
    rows.append(cap)
    rhs.append(-1.0)
    cost = np.zeros(spec.n + 1)
    cost[-1] = -1.0
    res = solve_lp(cost, np.array(rows), np.array(rhs))
    if not res.optimal or res.x is None or -res.value <= 0.0:
        raise ScalarizationError("could not find a point satisfying the power guards")
    return res.x[:-1]


def check_feasibility(spec: ProblemSpec, opts: SolverOptions | None = None) -> ScalarOutcome:
    """Phase one: minimize s subject to g_i(x) <= s inside a search box.

    Returns an outcome whose x is strictly feasible when one exists; status
    is ``infeasible`` when min s stays positive.  A feasible set with empty
    interior raises :class:`SlaterError` since the barrier method needs a
    strict starting point.  The box doubles a few times before giving up so
    that feasible sets far from the origin are still found.
    """
    opts = opts or SolverOptions()
    if spec.free or not spec.constraints:
        return ScalarOutcome(OPTIMAL, x=np.zeros(spec.n), value=0.0)
    x_start = _domain_start(spec)
    n = spec.n
    box = max(opts.phase1_box, 2.0 * float(np.max(np.abs(x_start))) + 1.0)
    last_value = np.inf
    for _round in range(7):
        gs: list[_Fn] = [_lift(_expr_fn(g), n, 1, np.array([-1.0])) for g in spec.constraints]
        gs.append(_linear_fn(np.append(np.zeros(n), -1.0), -1.0))  # s >= -1
        for j in range(n):
            e = np.zeros(n + 1)
            e[j] = 1.0
            gs.append(_linear_fn(e, -box))    # x_j <= box
            gs.append(_linear_fn(-e, -box))   # x_j >= -box
        s0 = max(float(max(g.value(x_start) for g in spec.constraints)), -0.5) + 1.0
        y0 = np.append(x_start, s0)
        f0 = _linear_fn(np.append(np.zeros(n), 1.0))
        status, y, _, _ = _barrier_minimize(f0, gs, y0, opts)
        if status != OPTIMAL:
            return ScalarOutcome(NUMERICAL_FAILURE)
        s_star = float(y[-1])
        last_value = s_star
        if s_star < -opts.tolerance:
            return ScalarOutcome(OPTIMAL, x=y[:n].copy(), value=s_star)
        box *= 10.0
    if last_value > opts.tolerance:
        return ScalarOutcome(INFEASIBLE, value=last_value)
    raise SlaterError(
        f"no strictly feasible point found (phase-one value {last_value:.3e}); "
        "the feasible set appears to have empty interior")


def _constraint_fns(spec: ProblemSpec, extra: int = 0) -> list[_Fn]:
    if spec.free:
        return []
    fns = [_expr_fn(g) for g in spec.constraints]
    if extra:
        fns = [_lift(f, spec.n, extra) for f in fns]
    return fns


def solve_weighted_sum(spec: ProblemSpec, w: np.ndarray,
                       opts: SolverOptions | None = None,
                       x0: np.ndarray | None = None) -> ScalarOutcome:
    """Minimize ``w @ objectives`` over the feasible set."""
    opts = opts or SolverOptions()
    w = np.asarray(w, dtype=float)
    if np.max(np.abs(w)) <= 0.0:
        raise ValueError("weight vector must be nonzero")
    if x0 is None:
        phase = check_feasibility(spec, opts)
        if phase.status != OPTIMAL:
            return ScalarOutcome(phase.status)
        x0 = phase.x
    f0 = _weighted_objective(spec, w)
    status, x, _, attained = _barrier_minimize(f0, _constraint_fns(spec), x0, opts)
    if status != OPTIMAL:
        return ScalarOutcome(status, x=x, attained=attained)
    value = f0.val(x)
    if abs(value) > opts.cap or float(np.sum(np.abs(x))) > opts.cap:
        return ScalarOutcome(UNBOUNDED, x=x, attained=attained)
    return ScalarOutcome(OPTIMAL, x=x, value=value, attained=attained)


def detect_unbounded_direction(spec: ProblemSpec, w: np.ndarray,
                               opts: SolverOptions | None = None,
                               x0: np.ndarray | None = None) -> bool:
    """True iff the weighted-sum program descends past the cap."""
    outcome = solve_weighted_sum(spec, w, opts, x0)
    if outcome.status == NUMERICAL_FAILURE:
        raise ScalarizationError("weighted-sum solve failed numerically")
    return outcome.status == UNBOUNDED


def _z_start(a: np.ndarray, b: np.ndarray, cap: float) -> float:
    lo, hi = -np.inf, np.inf
    for aj, bj in zip(a, b):
        if bj > 1e-12:
            lo = max(lo, aj / bj)
        elif bj < -1e-12:
            hi = min(hi, aj / bj)
        elif aj >= -1e-12:
            raise ScalarizationError(
                "no strictly feasible start for the direction scalarization")
    if lo >= hi - 1e-9:
        raise ScalarizationError(
            "empty feasibility interval for the scalarization variable")
    if np.isinf(lo) and np.isinf(hi):
        return 0.0
    if np.isinf(lo):
        z = hi - max(1.0, 0.1 * abs(hi))
        return max(min(z, 0.0), -cap) if hi > -cap else -cap
    if np.isinf(hi):
        return lo + max(1.0, 0.1 * abs(lo))
    return 0.5 * (lo + hi)


def solve_pascoletti_serafini(spec: ProblemSpec, v: np.ndarray, d: np.ndarray,
                              opts: SolverOptions | None = None,
                              x0: np.ndarray | None = None) -> ScalarOutcome:
    """Maximize z subject to objectives(x) - v - z d lying below zero in the
    cone order.

    The cone constraint is expanded into one scalar constraint per dual
    generator.  On an optimal exit the barrier multipliers of those
    constraints assemble the dual weight w (rescaled so ``w @ d == -1``),
    which supports the upper image at the optimal objective point.  An
    unbounded exit means z grew past the cap; for interior reference points
    this certifies that d is a recession direction of the upper image.
    """
    opts = opts or SolverOptions()
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.max(np.abs(d)) <= 0.0:
        raise ValueError("direction must be nonzero")
    if x0 is None:
        phase = check_feasibility(spec, opts)
        if phase.status != OPTIMAL:
            return ScalarOutcome(phase.status)
        x0 = phase.x

    n = spec.n
    duals = np.atleast_2d(spec.cone_dual_generators)
    gx0 = spec.objective_values(x0)
    a = duals @ (gx0 - v)
    b = duals @ d
    z0 = _z_start(a, b, opts.cap)
    y0 = np.append(x0, z0)

    cone_fns: list[_Fn] = []
    for zj, bj in zip(duals, b):
        base = _weighted_objective(spec, zj)
        offset = -float(zj @ v)
        lifted = _lift(base, n, 1, np.array([-float(bj)]))
        zj_off = offset

        def val(y, f=lifted, c=zj_off):
            return f.val(y) + c
        cone_fns.append(_Fn(val, lifted.grad, lifted.hess))

    gs = _constraint_fns(spec, extra=1) + cone_fns
    f0 = _linear_fn(np.append(np.zeros(n), -1.0))  # maximize z
    status, y, multipliers, attained = _barrier_minimize(f0, gs, y0, opts)
    if status == UNBOUNDED:
        return ScalarOutcome(UNBOUNDED, attained=True)
    if status != OPTIMAL:
        return ScalarOutcome(status, attained=attained)
    z_star = float(y[-1])
    if z_star > opts.cap:
        return ScalarOutcome(UNBOUNDED, attained=True)

    mu = multipliers[len(gs) - len(cone_fns):]
    w = mu @ duals
    wd = float(w @ d)
    if wd > -1e-12:
        raise ScalarizationError(
            f"multiplier normalization failed: w @ d = {wd!r} is not negative")
    w = w / (-wd)
    return ScalarOutcome(OPTIMAL, x=y[:n].copy(), value=z_star, z=z_star,
                         multiplier=w, attained=attained)


def warn_tolerance_gap(opts: SolverOptions, *tols: float) -> bool:
    """True when the scalar accuracy is not well below the caller's
    tolerances; callers may log a warning in that case."""
    target = min(t for t in tols if t is not None)
    return opts.tolerance > 0.01 * target
