"""Approximation of the recession cone of the upper image.

The refinement loop maintains an outer polyhedral approximation of the upper
image whose recession cone shrinks toward the true one: directions certified
by an unbounded scalarization enter the inner set, bounded scalarizations
yield supporting-hyperplane cuts, and the loop stops once every vertex of
the clipped recession cone is within the direction tolerance of the inner
set.  The byproducts (weak minimizers, dual points, the cut polyhedron)
seed the second-phase algorithms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import polyhedra as ph
from .expressions import ProblemSpec
from .scalarize import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ScalarizationError,
    SolverOptions,
    check_feasibility,
    solve_pascoletti_serafini,
    solve_weighted_sum,
    warn_tolerance_gap,
)

logger = logging.getLogger(__name__)

BOUNDED = "bounded"
DONE = "done"
INFEASIBLE_STATUS = "infeasible"

DIRECTION_MATCH_TOL = 1e-9


class IterationLimitError(Exception):
    """Refinement loop exceeded its iteration budget; carries partial state."""

    def __init__(self, message: str, partial: "ConeApproximation"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class IterationRecord:
    """One refinement-loop iteration, mirroring the run log columns."""

    iter: int
    d: tuple[float, ...]
    r_tilde: tuple[float, ...] | None
    dist: float | None
    action: str  # accept | inner_update | cut
    new_y_out: tuple[tuple[float, ...], ...]
    inner_added: tuple[float, ...] | None = None
    cut_normal: tuple[float, ...] | None = None
    cut_offset: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "iter": self.iter,
            "d": list(self.d),
            "r_tilde": list(self.r_tilde) if self.r_tilde is not None else None,
            "dist": self.dist,
            "action": self.action,
            "new_y_out": [list(v) for v in self.new_y_out],
        }
        if self.inner_added is not None:
            out["inner_added"] = list(self.inner_added)
        if self.cut_normal is not None:
            out["cut"] = {"w": list(self.cut_normal), "gamma": self.cut_offset}
        return out


@dataclass(frozen=True)
class ConeApproximation:
    """Output of the recession-cone approximation.

    ``status`` is ``infeasible`` (feasibility check failed), ``bounded``
    (every dual generator gave a bounded weighted sum, so the ordering cone
    itself is the answer) or ``done``.  ``outer_dirs``/``inner_dirs`` are
    the unit-l1 direction sets sandwiching the recession cone of the upper
    image; ``accepted`` holds outer directions accepted at tolerance.
    """

    status: str
    dim: int
    delta: float
    outer_poly: ph.Polyhedron | None
    inner_dirs: np.ndarray
    outer_dirs: np.ndarray
    accepted: np.ndarray
    minimizers: np.ndarray
    dual_points: np.ndarray
    interior_point: np.ndarray | None
    generators: np.ndarray
    dual_generators: np.ndarray
    c: np.ndarray
    t_matrix: np.ndarray
    initial_cuts: tuple[tuple[tuple[float, ...], float], ...]
    iteration_log: tuple[IterationRecord, ...]
    scalarizations: int
    feasible_point: np.ndarray | None = None

    @property
    def inner_cone(self) -> ph.PolyCone:
        return ph.cone_from_generators(self.inner_dirs)

    @property
    def outer_cone(self) -> ph.PolyCone:
        if self.outer_poly is not None and len(self.outer_poly.normals):
            return ph.PolyCone(dim=self.dim, generators=self.outer_dirs.copy(),
                               normals=self.outer_poly.normals.copy())
        return ph.cone_from_generators(self.outer_dirs)


def normalized_generators(spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical (R, R*, c): extreme rays of the ordering cone at unit l1
    length, dual extreme rays scaled to c'z = 1, and the interior direction
    c taken as the normalized sum of the primal generators."""
    cone = ph.cone_from_generators(spec.cone_generators)
    gens = ph.extreme_rays(cone)
    c = gens.sum(axis=0)
    c = c / np.sum(np.abs(c))
    duals = ph.extreme_rays(ph.dual_cone(cone))
    scales = duals @ c
    if np.any(scales <= 1e-12):
        raise ph.GeometryError("dual generator orthogonal to the interior direction")
    duals = duals / scales[:, None]
    return gens, duals, c


def default_t_matrix(c: np.ndarray) -> np.ndarray:
    """Standard basis columns with c in the last slot; standard columns are
    cyclically shifted until the matrix is nonsingular."""
    q = len(c)
    for shift in range(q):
        cols = [np.eye(q)[:, (j + shift) % q] for j in range(q - 1)]
        t = np.column_stack(cols + [c])
        if abs(np.linalg.det(t)) > 1e-12:
            return t
    raise ValueError("no nonsingular direction matrix exists for c = 0")


def _match(rows: np.ndarray, d: np.ndarray, tol: float = DIRECTION_MATCH_TOL) -> bool:
    return len(rows) > 0 and bool(np.any(np.max(np.abs(rows - d), axis=1) <= tol))


def _lex_largest(rows: list[np.ndarray]) -> np.ndarray:
    return max(rows, key=tuple)


def _nearest_inner(d: np.ndarray, inner: np.ndarray) -> tuple[np.ndarray, float]:
    """argmin of the l1 distance over the inner set; near-ties (1e-9) break
    toward the lexicographically smallest direction for determinism."""
    dists = np.sum(np.abs(inner - d), axis=1)
    best = float(np.min(dists))
    tied = inner[dists <= best + DIRECTION_MATCH_TOL]
    choice = min((tuple(r) for r in tied))
    return np.array(choice), best


class _OuterPoly:
    """Mutable cut accumulator for the outer approximation."""

    def __init__(self, q: int):
        self.q = q
        self.normals = np.zeros((0, q))
        self.offsets = np.zeros(0)

    def add_cut(self, w: np.ndarray, gamma: float) -> bool:
        scale = float(np.sum(np.abs(w)))
        if scale <= 1e-12:
            raise ph.GeometryError("zero cut normal")
        w = w / scale
        gamma = gamma / scale
        for i in range(len(self.normals)):
            if np.max(np.abs(self.normals[i] - w)) <= DIRECTION_MATCH_TOL:
                if gamma > self.offsets[i] + 1e-12:
                    self.offsets[i] = gamma  # same normal, deeper offset
                    return True
                return False
        self.normals = np.vstack([self.normals, w])
        self.offsets = np.append(self.offsets, gamma)
        return True

    def polyhedron(self) -> ph.Polyhedron:
        return ph.Polyhedron(dim=self.q, normals=self.normals.copy(),
                             offsets=self.offsets.copy())

    def outer_directions(self) -> np.ndarray:
        cone = ph.PolyCone(dim=self.q, normals=self.normals.copy())
        return ph.nonzero_vertices(ph.hrep_to_vrep(ph.intersect_unit_ball(cone)))


def approximate_recession_cone(spec: ProblemSpec, delta: float,
                               opts: SolverOptions | None = None,
                               t_matrix: np.ndarray | None = None,
                               max_iterations: int = 500) -> ConeApproximation:
    """Compute unit-direction sets sandwiching the recession cone of the
    upper image to Hausdorff tolerance ``delta`` (within the unit ball),
    together with an initial outer approximation of the upper image itself.

    Follows the two-stage scheme: a feasibility check fixes an interior
    reference point, weighted sums over the dual generators detect
    boundedness and cut the outer polyhedron, a lineality sweep probes the
    negated generators, and the main loop refines the clipped recession
    cone vertex by vertex.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    opts = opts or SolverOptions()
    if warn_tolerance_gap(opts, delta):
        logger.warning("scalar tolerance %.1e close to delta %.1e; results may be noisy",
                       opts.tolerance, delta)
    q = spec.q
    gens, duals, c = normalized_generators(spec)
    if t_matrix is None:
        t_matrix = default_t_matrix(c)
    t_matrix = np.asarray(t_matrix, dtype=float)
    if abs(np.linalg.det(t_matrix)) <= 1e-12:
        raise ValueError("direction matrix must be nonsingular")
    if np.max(np.abs(t_matrix[:, -1] - c)) > 1e-9:
        raise ValueError("the last column of the direction matrix must equal c")

    solves = 0

    def empty(status: str, **kw) -> ConeApproximation:
        defaults = dict(
            status=status, dim=q, delta=delta, outer_poly=None,
            inner_dirs=np.zeros((0, q)), outer_dirs=np.zeros((0, q)),
            accepted=np.zeros((0, q)), minimizers=np.zeros((0, spec.n)),
            dual_points=np.zeros((0, q)), interior_point=None,
            generators=gens, dual_generators=duals, c=c, t_matrix=t_matrix,
            initial_cuts=(), iteration_log=(), scalarizations=solves,
            feasible_point=None)
        defaults.update(kw)
        return ConeApproximation(**defaults)

    # Feasibility check and interior reference point.
    phase = check_feasibility(spec, opts)
    solves += 1
    if phase.status == INFEASIBLE:
        return empty(INFEASIBLE_STATUS)
    if phase.status != OPTIMAL:
        raise ScalarizationError("feasibility phase failed numerically")
    x0 = phase.x
    v = spec.objective_values(x0) + gens.sum(axis=0)

    inner: list[np.ndarray] = [g.copy() for g in gens]
    accepted: list[np.ndarray] = []
    minimizers: list[np.ndarray] = []
    dual_points: list[np.ndarray] = []
    outer = _OuterPoly(q)
    bounded = True

    # Boundedness probe over the dual generators.
    for z in duals:
        out = solve_weighted_sum(spec, z, opts, x0)
        solves += 1
        if out.status == UNBOUNDED:
            bounded = False
        elif out.status == OPTIMAL:
            minimizers.append(out.x)
            dual_points.append(t_matrix.T @ z)
            outer.add_cut(z, float(z @ spec.objective_values(out.x)))
        else:
            raise ScalarizationError(f"weighted-sum probe failed ({out.status})")

    if bounded:
        logger.info("problem is bounded; ordering cone already outer-approximates")
        return empty(
            BOUNDED,
            outer_poly=outer.polyhedron(),
            inner_dirs=gens.copy(), outer_dirs=gens.copy(),
            minimizers=np.array(minimizers).reshape(-1, spec.n),
            dual_points=np.array(dual_points).reshape(-1, q),
            interior_point=v,
            initial_cuts=tuple((tuple(w), float(g))
                               for w, g in zip(outer.normals, outer.offsets)),
            feasible_point=x0)

    # Lineality sweep over the negated generators.
    for d in -gens:
        out = solve_pascoletti_serafini(spec, v, d, opts, x0)
        solves += 1
        if out.status == UNBOUNDED:
            inner.append(d.copy())
        elif out.status == OPTIMAL:
            w = out.multiplier
            minimizers.append(out.x)
            dual_points.append(t_matrix.T @ (w / float(c @ w)))
            outer.add_cut(w, float(w @ spec.objective_values(out.x)))
        else:
            raise ScalarizationError(f"lineality probe failed ({out.status})")

    initial_cuts = tuple((tuple(w), float(g))
                         for w, g in zip(outer.normals, outer.offsets))
    outer_dirs = outer.outer_directions()
    log: list[IterationRecord] = []

    def build(status: str) -> ConeApproximation:
        return empty(
            status,
            outer_poly=outer.polyhedron(),
            inner_dirs=np.array(inner), outer_dirs=outer_dirs,
            accepted=np.array(accepted).reshape(-1, q),
            minimizers=np.array(minimizers).reshape(-1, spec.n),
            dual_points=np.array(dual_points).reshape(-1, q),
            interior_point=v, initial_cuts=initial_cuts,
            iteration_log=tuple(log), feasible_point=x0)

    iteration = 0
    while True:
        inner_arr = np.array(inner)
        accepted_arr = np.array(accepted).reshape(-1, q)
        candidates = [d for d in outer_dirs
                      if not _match(inner_arr, d) and not _match(accepted_arr, d)]
        if not candidates:
            break
        iteration += 1
        if iteration > max_iterations:
            raise IterationLimitError(
                f"refinement loop exceeded {max_iterations} iterations", build(DONE))
        d = _lex_largest(candidates)
        r_tilde, dist = _nearest_inner(d, inner_arr)
        if dist <= delta:
            accepted.append(d.copy())
            log.append(IterationRecord(iteration, tuple(d), tuple(r_tilde), dist,
                                       "accept", tuple(map(tuple, outer_dirs))))
            logger.debug("iteration %d: accepted %s (dist %.4g)", iteration, d, dist)
            continue
        combo = opts.mix * d + (1.0 - opts.mix) * r_tilde
        out = solve_pascoletti_serafini(spec, v, combo, opts, x0)
        solves += 1
        if out.status == UNBOUNDED:
            new_dir = combo / np.sum(np.abs(combo))
            inner.append(new_dir)
            log.append(IterationRecord(iteration, tuple(d), tuple(r_tilde), dist,
                                       "inner_update", tuple(map(tuple, outer_dirs)),
                                       inner_added=tuple(new_dir)))
            logger.debug("iteration %d: inner direction %s", iteration, new_dir)
        elif out.status == OPTIMAL:
            w = out.multiplier
            minimizers.append(out.x)
            dual_points.append(t_matrix.T @ (w / float(c @ w)))
            gamma = float(w @ spec.objective_values(out.x))
            outer.add_cut(w, gamma)
            outer_dirs = outer.outer_directions()
            scale = float(np.sum(np.abs(w)))
            log.append(IterationRecord(iteration, tuple(d), tuple(r_tilde), dist,
                                       "cut", tuple(map(tuple, outer_dirs)),
                                       cut_normal=tuple(w / scale),
                                       cut_offset=gamma / scale))
            logger.debug("iteration %d: cut with normal %s", iteration, w)
        else:
            raise ScalarizationError(f"refinement scalarization failed ({out.status})")

    logger.info("recession approximation done: %d iterations, %d inner, %d outer dirs",
                iteration, len(inner), len(outer_dirs))
    return build(DONE)


@dataclass(frozen=True)
class DeltaReport:
    """Outcome of re-certifying a finished approximation."""

    passed: bool
    distance: float
    delta: float
    angle_bound: float
    failures: tuple[str, ...] = field(default_factory=tuple)

    def to_json_dict(self) -> dict:
        return {"passed": self.passed, "distance": self.distance,
                "delta": self.delta, "angle_bound": self.angle_bound,
                "failures": list(self.failures)}


def certify_delta(approx: ConeApproximation, delta: float | None = None) -> DeltaReport:
    """Recheck the finished approximation: the clipped Hausdorff distance
    between the inner and outer cones, inner-in-outer containment and the
    per-vertex nearest-inner condition.  Violations are reported naming the
    offending vertex, not raised."""
    if approx.status not in (DONE, BOUNDED):
        raise ValueError(f"cannot certify an approximation with status {approx.status!r}")
    delta = approx.delta if delta is None else delta
    failures: list[str] = []

    inner_cone = approx.inner_cone
    outer_cone = approx.outer_cone
    distance = ph.hausdorff_cone_distance(inner_cone, outer_cone)
    if distance > delta + 1e-9:
        failures.append(f"clipped Hausdorff distance {distance:.6g} exceeds {delta:g}")

    outer_normals = ph.cone_normals(outer_cone)
    for r in approx.inner_dirs:
        if len(outer_normals) and np.min(outer_normals @ r) < -ph.CONTAIN_TOL:
            failures.append(f"inner direction {tuple(np.round(r, 6))} escapes the outer cone")

    for d in approx.outer_dirs:
        _, dist = _nearest_inner(d, approx.inner_dirs)
        if dist > delta + 1e-9:
            failures.append(
                f"outer vertex {tuple(np.round(d, 6))} is {dist:.6g} from the inner set")

    achieved = min(distance, delta)
    angle_bound = float(np.arccos(max(-1.0, 1.0 - approx.dim * achieved ** 2 / 2.0)))
    return DeltaReport(passed=not failures, distance=distance, delta=delta,
                       angle_bound=angle_bound, failures=tuple(failures))
