"""Polyhedral geometry kernel.

Convex polyhedra carry an H-representation (rows ``w`` with ``w @ y >=
gamma``), a V-representation (vertices plus rays), or both.  Conversions run
through the double description method on a homogenizing cone, so the same
machinery serves vertex enumeration, facet enumeration, dual cones and
recession cones.  All arithmetic is floating point with a merge tolerance of
1e-9 and a containment tolerance of 1e-7; dimensions up to q = 6 are
supported (the l1 unit ball is stored by its 2**q facets).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LPResult, SimplexError, solve_lp

MERGE_TOL = 1e-9
CONTAIN_TOL = 1e-7
MAX_DIM = 6

__all__ = [
    "MERGE_TOL", "CONTAIN_TOL", "MAX_DIM",
    "Polyhedron", "PolyCone", "GeometryError",
    "hrep_to_vrep", "vrep_to_hrep", "recession_cone", "dual_cone",
    "intersect_unit_ball", "nonzero_vertices", "extreme_rays",
    "l1_distance_point_to_set", "l1_distance_point_to_vrep",
    "hausdorff_cone_distance", "contains_point", "cone_contains",
    "cone_from_halfspace_normals", "validate_ordering_cone",
    "solve_lp", "LPResult", "SimplexError", "OPTIMAL", "UNBOUNDED", "INFEASIBLE",
]


class GeometryError(Exception):
    pass


def _sorted_rows(rows: np.ndarray) -> np.ndarray:
    if rows.size == 0:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def _dedupe_rows(rows: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    kept: list[np.ndarray] = []
    for r in rows:
        if not any(np.max(np.abs(r - k)) <= tol for k in kept):
            kept.append(r)
    return np.array(kept) if kept else rows.reshape(0, rows.shape[1] if rows.ndim == 2 else 0)


@dataclass(frozen=True)
class Polyhedron:
    """Convex polyhedron with at least one representation present."""

    dim: int
    normals: np.ndarray | None = None    # (m, q)
    offsets: np.ndarray | None = None    # (m,)
    vertices: np.ndarray | None = None   # (s, q)
    rays: np.ndarray | None = None       # (t, q)

    def __post_init__(self):
        if self.normals is None and self.vertices is None:
            raise GeometryError("a polyhedron needs an H- or a V-representation")
        for arr in (self.normals, self.offsets, self.vertices, self.rays):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def has_hrep(self) -> bool:
        return self.normals is not None

    @property
    def has_vrep(self) -> bool:
        return self.vertices is not None

    @property
    def is_empty(self) -> bool:
        return self.vertices is not None and len(self.vertices) == 0

    def to_json_dict(self) -> dict:
        out: dict = {}
        if self.has_hrep:
            out["halfspaces"] = [
                {"w": [float(c) for c in w], "gamma": float(g)}
                for w, g in zip(self.normals, self.offsets)
            ]
        if self.has_vrep:
            out["vertices"] = [[float(c) for c in v] for v in self.vertices]
            out["rays"] = [[float(c) for c in r] for r in (
                self.rays if self.rays is not None else np.zeros((0, self.dim)))]
        return out


def from_halfspaces(normals, offsets) -> Polyhedron:
    normals = np.atleast_2d(np.asarray(normals, dtype=float)).copy()
    offsets = np.asarray(offsets, dtype=float).copy()
    if normals.size and np.min(np.max(np.abs(normals), axis=1)) <= 1e-12:
        raise GeometryError("halfspace normals must be nonzero")
    return Polyhedron(dim=normals.shape[1], normals=normals, offsets=offsets)


def from_generators(vertices, rays=None, dim: int | None = None) -> Polyhedron:
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float)).copy()
    if vertices.size == 0 and dim is None:
        raise GeometryError("need a vertex or an explicit dimension")
    q = vertices.shape[1] if vertices.size else dim
    vertices = vertices.reshape(-1, q)
    if rays is None:
        rays = np.zeros((0, q))
    rays = np.asarray(rays, dtype=float).reshape(-1, q).copy()
    if rays.size and np.min(np.max(np.abs(rays), axis=1)) <= 1e-12:
        raise GeometryError("rays must be nonzero")
    return Polyhedron(dim=q, vertices=vertices, rays=rays)


@dataclass(frozen=True)
class PolyCone:
    """Polyhedral cone; generators are rows, normals mean ``w @ y >= 0``."""

    dim: int
    generators: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        if self.generators is None and self.normals is None:
            raise GeometryError("a cone needs generators or normals")
        for arr in (self.generators, self.normals):
            if arr is not None:
                arr.flags.writeable = False


def cone_from_generators(generators) -> PolyCone:
    g = np.atleast_2d(np.asarray(generators, dtype=float)).copy()
    return PolyCone(dim=g.shape[1], generators=g)


def cone_from_normals(normals, dim: int | None = None) -> PolyCone:
    w = np.asarray(normals, dtype=float)
    if w.size == 0:
        if dim is None:
            raise GeometryError("a normal-free cone needs an explicit dimension")
        return PolyCone(dim=dim, normals=np.zeros((0, dim)))
    w = np.atleast_2d(w).copy()
    return PolyCone(dim=w.shape[1], normals=w)


# ---------------------------------------------------------------------------
# Double description method


def _nullspace(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if a.size == 0:
        return np.eye(a.shape[1])
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * max(a.shape)))
    return vt[rank:].T  # columns span the nullspace


def _rowspace(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if a.size == 0:
        return np.zeros((a.shape[1], 0))
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * max(a.shape)))
    return vt[:rank].T  # columns span the row space


def _independent_rows(a: np.ndarray, r: int) -> list[int]:
    picked: list[int] = []
    basis = np.zeros((0, a.shape[1]))
    for i in range(a.shape[0]):
        cand = np.vstack([basis, a[i]])
        if np.linalg.matrix_rank(cand, tol=1e-10) > basis.shape[0]:
            picked.append(i)
            basis = cand
            if len(picked) == r:
                break
    return picked


def dd_cone(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Extreme rays and lineality basis of the cone ``{x : a @ x >= 0}``.

    Rows of the first return value are unit extreme rays of the pointed part;
    rows of the second span the lineality space.  The full cone is the conic
    hull of the rays plus the lineality span.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = a.shape[1]
    if a.size:
        norms = np.linalg.norm(a, axis=1)
        a = a[norms > 1e-12]
        if a.size:
            a = a / np.linalg.norm(a, axis=1, keepdims=True)
    if a.size == 0:
        return np.zeros((0, q)), np.eye(q)

    lin = _nullspace(a)
    basis = _rowspace(a)
    r = basis.shape[1]
    if r == 0:
        return np.zeros((0, q)), lin.T
    reduced = a @ basis  # (m, r), full column rank, reduced cone is pointed

    start = _independent_rows(reduced, r)
    init = reduced[start]
    rays = np.linalg.inv(init).T  # rows are rays of {z : init @ z >= 0}
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    processed = list(start)

    def active_sets(mat: np.ndarray) -> list[frozenset[int]]:
        vals = mat @ reduced[processed].T  # (k, len(processed))
        return [frozenset(np.flatnonzero(np.abs(row) <= 1e-9)) for row in vals]

    for i in range(reduced.shape[0]):
        if i in processed:
            continue
        vals = rays @ reduced[i]
        pos = np.flatnonzero(vals > 1e-9)
        neg = np.flatnonzero(vals < -1e-9)
        zero = np.flatnonzero(np.abs(vals) <= 1e-9)
        if len(neg) == 0:
            processed.append(i)
            continue
        keep = rays[np.concatenate([pos, zero])] if len(pos) + len(zero) else np.zeros((0, r))
        new: list[np.ndarray] = []
        if len(pos):
            act = active_sets(rays)
            for p in pos:
                for m in neg:
                    common = act[p] & act[m]
                    if len(common) < r - 2:
                        continue
                    adjacent = True
                    for other in range(len(rays)):
                        if other in (p, m):
                            continue
                        if common <= act[other]:
                            adjacent = False
                            break
                    if adjacent:
                        cand = vals[p] * rays[m] - vals[m] * rays[p]
                        nrm = np.linalg.norm(cand)
                        if nrm > 1e-12:
                            new.append(cand / nrm)
        parts = [keep, np.array(new)] if new else [keep]
        rays = _dedupe_rows(np.vstack(parts), tol=1e-9)
        processed.append(i)
        if len(rays) == 0:
            break

    full = rays @ basis.T if len(rays) else np.zeros((0, q))
    if len(full):
        full = full / np.linalg.norm(full, axis=1, keepdims=True)
        full = _sorted_rows(_dedupe_rows(full))
    return full, lin.T


def cone_from_halfspace_normals(normals: np.ndarray) -> np.ndarray:
    """Generators (rows, l1-normalized) of ``{y : normals @ y >= 0}``.

    Lineality directions, when present, contribute a +/- pair of rows.
    """
    rays, lin = dd_cone(np.atleast_2d(np.asarray(normals, dtype=float)))
    rows = [rays] + [np.vstack([lin, -lin])] if len(lin) else [rays]
    gens = np.vstack(rows) if rows else rays
    if len(gens) == 0:
        raise GeometryError("halfspaces admit no nonzero direction")
    gens = gens / np.sum(np.abs(gens), axis=1, keepdims=True)
    return _sorted_rows(_dedupe_rows(gens))


# ---------------------------------------------------------------------------
# Representation conversion


def hrep_to_vrep(p: Polyhedron) -> Polyhedron:
    """Attach the V-representation, computed by double description on the
    homogenization.  An empty polyhedron comes back with an empty vertex
    list (``is_empty``), not an exception.  Lines are reported as +/- ray
    pairs."""
    if not p.has_hrep:
        raise GeometryError("hrep_to_vrep needs an H-representation")
    if p.dim > MAX_DIM:
        raise GeometryError(f"dimension {p.dim} exceeds the supported {MAX_DIM}")
    q = p.dim
    hom = np.hstack([p.normals, -p.offsets[:, None]]) if len(p.normals) else np.zeros((0, q + 1))
    hom = np.vstack([hom, np.append(np.zeros(q), 1.0)])
    rays_h, lin_h = dd_cone(hom)

    verts: list[np.ndarray] = []
    rays: list[np.ndarray] = []
    for r in rays_h:
        t = r[q]
        if t > 1e-9:
            verts.append(r[:q] / t)
        else:
            rays.append(r[:q])
    for l_vec in lin_h:
        rays.append(l_vec[:q])
        rays.append(-l_vec[:q])

    vert_arr = np.array(verts) if verts else np.zeros((0, q))
    ray_arr = np.array(rays) if rays else np.zeros((0, q))
    if len(ray_arr):
        ray_arr = ray_arr / np.linalg.norm(ray_arr, axis=1, keepdims=True)
        ray_arr = _sorted_rows(_dedupe_rows(ray_arr))
        ray_arr = ray_arr[np.max(np.abs(ray_arr), axis=1) > 1e-9]
    vert_arr = _sorted_rows(_dedupe_rows(vert_arr))
    return Polyhedron(dim=q, normals=p.normals, offsets=p.offsets,
                      vertices=vert_arr, rays=ray_arr)


def vrep_to_hrep(p: Polyhedron) -> Polyhedron:
    """Attach the (irredundant) H-representation via polarity.  Degenerate,
    lower-dimensional input yields affine-hull equalities as paired
    halfspaces."""
    if not p.has_vrep:
        raise GeometryError("vrep_to_hrep needs a V-representation")
    if p.is_empty:
        raise GeometryError("cannot convert an empty polyhedron")
    q = p.dim
    rows = [np.hstack([p.vertices, np.ones((len(p.vertices), 1))])]
    if p.rays is not None and len(p.rays):
        rows.append(np.hstack([p.rays, np.zeros((len(p.rays), 1))]))
    polar = np.vstack(rows)

    rays_h, lin_h = dd_cone(polar)
    normals: list[np.ndarray] = []
    offsets: list[float] = []
    for r in rays_h:
        w, g = r[:q], r[q]
        if np.max(np.abs(w)) <= 1e-9:
            continue  # 0'y >= -g is trivial
        normals.append(w)
        offsets.append(-g)
    for l_vec in lin_h:
        w, g = l_vec[:q], l_vec[q]
        if np.max(np.abs(w)) <= 1e-9:
            continue
        normals.append(w)
        offsets.append(-g)
        normals.append(-w)
        offsets.append(g)

    if not normals:
        # V-rep spans the whole space; represent it by a single trivial bound
        # on nothing is impossible in H-form, so reject explicitly.
        raise GeometryError("input has no supporting halfspace (full space)")
    normal_arr = np.array(normals)
    offset_arr = np.array(offsets)
    scale = np.linalg.norm(normal_arr, axis=1, keepdims=True)
    normal_arr /= scale
    offset_arr = offset_arr / scale[:, 0]
    stacked = _sorted_rows(_dedupe_rows(np.hstack([normal_arr, offset_arr[:, None]])))
    return Polyhedron(dim=q, normals=stacked[:, :q].copy(), offsets=stacked[:, q].copy(),
                      vertices=p.vertices, rays=p.rays)


def recession_cone(p: Polyhedron) -> PolyCone:
    """Same normals, offsets zeroed."""
    if not p.has_hrep:
        raise GeometryError("recession_cone needs an H-representation")
    return PolyCone(dim=p.dim, normals=p.normals.copy())


def cone_generators(c: PolyCone) -> np.ndarray:
    if c.generators is not None:
        return c.generators
    return cone_from_halfspace_normals(c.normals)


def cone_normals(c: PolyCone) -> np.ndarray:
    if c.normals is not None:
        return c.normals
    # Normals of cone{gens} are the generators of its dual cone.
    return cone_from_halfspace_normals(np.atleast_2d(c.generators))


def dual_cone(c: PolyCone) -> PolyCone:
    """Positive dual: generators become normals and vice versa; extreme rays
    of the dual are extracted by double description."""
    if c.generators is not None:
        gens = cone_from_halfspace_normals(c.generators)
        return PolyCone(dim=c.dim, generators=gens, normals=c.generators.copy())
    gens = cone_from_halfspace_normals(c.normals)
    return PolyCone(dim=c.dim, generators=c.normals.copy(), normals=gens)


def extreme_rays(c: PolyCone) -> np.ndarray:
    """Minimal (unit-l1) generator set of the cone."""
    if c.normals is not None:
        return cone_from_halfspace_normals(c.normals)
    normals = cone_from_halfspace_normals(c.generators)  # dual generators
    return cone_from_halfspace_normals(normals)


def intersect_unit_ball(c: PolyCone) -> Polyhedron:
    """H-representation of the cone clipped to the l1 unit ball, the ball
    written as its 2**q sign facets."""
    q = c.dim
    if q > MAX_DIM:
        raise GeometryError(f"dimension {q} exceeds the supported {MAX_DIM}")
    ball = np.array(list(itertools.product((-1.0, 1.0), repeat=q)))
    normals = [-ball]
    offsets = [-np.ones(len(ball))]
    cn = c.normals if c.normals is not None else cone_normals(c)
    if cn is not None and len(cn):
        normals.insert(0, cn)
        offsets.insert(0, np.zeros(len(cn)))
    return Polyhedron(dim=q, normals=np.vstack(normals), offsets=np.concatenate(offsets))


def nonzero_vertices(p: Polyhedron) -> np.ndarray:
    """Vertex set minus the origin, snapped to unit l1 length when within
    1e-7 of it."""
    poly = p if p.has_vrep else hrep_to_vrep(p)
    if poly.rays is not None and len(poly.rays):
        raise GeometryError("nonzero_vertices expects a bounded polyhedron")
    out = []
    for v in poly.vertices:
        norm = float(np.sum(np.abs(v)))
        if norm <= MERGE_TOL:
            continue
        if abs(norm - 1.0) <= CONTAIN_TOL:
            v = v / norm
        out.append(v)
    return _sorted_rows(np.array(out)) if out else np.zeros((0, p.dim))


# ---------------------------------------------------------------------------
# Distances and membership


def contains_point(p: Polyhedron, y, tol: float = CONTAIN_TOL) -> bool:
    y = np.asarray(y, dtype=float)
    if p.has_hrep:
        if len(p.normals) == 0:
            return True
        return bool(np.all(p.normals @ y - p.offsets >= -tol))
    return l1_distance_point_to_vrep(y, p.vertices, p.rays) <= tol


def cone_contains(c: PolyCone, y, tol: float = CONTAIN_TOL) -> bool:
    y = np.asarray(y, dtype=float)
    cn = c.normals if c.normals is not None else cone_normals(c)
    if len(cn) == 0:
        return True
    return bool(np.all(cn @ y >= -tol))


def l1_distance_point_to_set(y, p: Polyhedron) -> float:
    """min ||y - u||_1 over u in the polyhedron, by LP with split variables."""
    y = np.asarray(y, dtype=float)
    if not p.has_hrep:
        return l1_distance_point_to_vrep(y, p.vertices, p.rays)
    q = p.dim
    eye = np.eye(q)
    zero = np.zeros((len(p.normals), q)) if len(p.normals) else np.zeros((0, q))
    a = np.vstack([
        np.hstack([eye, eye]),      # t + u >= y
        np.hstack([-eye, eye]),     # t - u >= -y
        np.hstack([p.normals, zero]) if len(p.normals) else np.zeros((0, 2 * q)),
    ])
    b = np.concatenate([y, -y, p.offsets if len(p.normals) else np.zeros(0)])
    cost = np.concatenate([np.zeros(q), np.ones(q)])
    res = solve_lp(cost, a, b)
    if res.status == INFEASIBLE:
        raise GeometryError("distance to an empty polyhedron")
    if not res.optimal:
        raise GeometryError(f"distance LP ended with status {res.status}")
    return max(res.value, 0.0)


def l1_distance_point_to_vrep(y, vertices: np.ndarray, rays: np.ndarray | None) -> float:
    """min ||y - (conv vertices + cone rays)||_1 by LP over the weights."""
    y = np.asarray(y, dtype=float)
    v = np.atleast_2d(np.asarray(vertices, dtype=float))
    r = np.asarray(rays, dtype=float).reshape(-1, v.shape[1]) if rays is not None else \
        np.zeros((0, v.shape[1]))
    q = v.shape[1]
    s, t = len(v), len(r)
    # variables: [lambda (s), mu (t), d (q)]
    nvar = s + t + q
    rows, rhs = [], []
    gen = np.hstack([v.T, r.T])  # (q, s + t)
    eye = np.eye(q)
    rows.append(np.hstack([gen, eye]))       # point + d >= y
    rhs.append(y)
    rows.append(np.hstack([-gen, eye]))      # d - point >= -y
    rhs.append(-y)
    lam_row = np.concatenate([np.ones(s), np.zeros(t + q)])
    rows.append(lam_row[None, :])            # sum lambda >= 1
    rhs.append(np.array([1.0]))
    rows.append(-lam_row[None, :])           # sum lambda <= 1
    rhs.append(np.array([-1.0]))
    rows.append(np.hstack([np.eye(s + t), np.zeros((s + t, q))]))  # weights >= 0
    rhs.append(np.zeros(s + t))
    cost = np.concatenate([np.zeros(s + t), np.ones(q)])
    res = solve_lp(cost, np.vstack(rows), np.concatenate(rhs))
    if not res.optimal:
        raise GeometryError(f"distance LP ended with status {res.status}")
    return max(res.value, 0.0)


def hausdorff_cone_distance(a: PolyCone, b: PolyCone) -> float:
    """Hausdorff distance (l1) between the two cones clipped to the unit
    ball.  Point-to-convex-set distance is convex, so each supremum over a
    polytope is attained at one of its vertices."""
    ha = intersect_unit_ball(a)
    hb = intersect_unit_ball(b)
    pa = hrep_to_vrep(ha)
    pb = hrep_to_vrep(hb)
    worst = 0.0
    for v in pa.vertices:
        worst = max(worst, l1_distance_point_to_set(v, hb))
    for v in pb.vertices:
        worst = max(worst, l1_distance_point_to_set(v, ha))
    return worst


# ---------------------------------------------------------------------------
# Ordering-cone validation


def cone_is_pointed(generators: np.ndarray) -> bool:
    g = np.atleast_2d(np.asarray(generators, dtype=float))
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    q = g.shape[1]
    # max m  s.t.  g_i @ w >= m, |w_k| <= 1, m <= 1; pointed iff max > 0.
    nvar = q + 1
    rows = [np.hstack([g, -np.ones((len(g), 1))])]
    rhs = [np.zeros(len(g))]
    for k in range(q):
        e = np.zeros(nvar)
        e[k] = 1.0
        rows.append(e[None, :])
        rhs.append(np.array([-1.0]))
        rows.append(-e[None, :])
        rhs.append(np.array([-1.0]))
    cap = np.zeros(nvar)
    cap[q] = -1.0
    rows.append(cap[None, :])
    rhs.append(np.array([-1.0]))
    cost = np.zeros(nvar)
    cost[q] = -1.0
    res = solve_lp(cost, np.vstack(rows), np.concatenate(rhs))
    return res.optimal and -res.value > CONTAIN_TOL


def cone_is_solid(generators: np.ndarray) -> bool:
    g = np.atleast_2d(np.asarray(generators, dtype=float))
    return np.linalg.matrix_rank(g, tol=1e-9) == g.shape[1]


def validate_ordering_cone(generators: np.ndarray) -> None:
    """Ordering cones must be non-trivial, pointed and solid."""
    g = np.atleast_2d(np.asarray(generators, dtype=float))
    if len(g) == 0 or np.max(np.abs(g)) <= 1e-12:
        raise GeometryError("ordering cone has no nonzero generator")
    if not cone_is_solid(g):
        raise GeometryError("ordering cone is not solid (generators do not span)")
    if not cone_is_pointed(g):
        raise GeometryError("ordering cone is not pointed")
