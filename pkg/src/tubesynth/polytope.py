"""Origin-symmetric polytopes in H-representation and the set algebra built on them.

A symmetric polytope is stored as a normal matrix ``A`` (one row per facet
pair) and a positive offset vector ``b``, describing ``{x : -b <= A x <= b}``.
Every set manipulated by the synthesis pipeline (disturbance set, tube
cross-section, terminal set, state/input constraints) has this form, so all
set comparisons reduce to support-function evaluations on fixed normals.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class MalformedPolytope(ValueError):
    """The H-representation does not describe a bounded nonempty set."""


class EmptyDifference(ValueError):
    """A Minkowski difference produced a set with empty interior."""


class UnsupportedDimension(ValueError):
    """Operation only implemented for the stated ambient dimension."""


@dataclass(frozen=True)
class SymPolytope:
    """Symmetric polytope {x : -offsets <= normals @ x <= offsets}."""

    normals: np.ndarray  # (m, n)
    offsets: np.ndarray  # (m,), strictly positive

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError(
                f"{normals.shape[0]} normals but {offsets.shape[0]} offsets"
            )
        if not np.all(np.isfinite(normals)) or not np.all(np.isfinite(offsets)):
            raise MalformedPolytope("non-finite H-representation")
        if np.any(offsets <= 0):
            raise MalformedPolytope("offsets must be strictly positive")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def num_facets(self):
        return self.normals.shape[0]

    def halfspaces(self):
        """Full one-sided form (A_full, b_full) with both facet orientations."""
        return np.vstack([self.normals, -self.normals]), np.concatenate(
            [self.offsets, self.offsets]
        )

    def scale(self, c):
        """The scaled set c * P (c > 0)."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return SymPolytope(self.normals, c * self.offsets)

    def to_json(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @staticmethod
    def from_json(obj):
        return SymPolytope(np.asarray(obj["normals"]), np.asarray(obj["offsets"]))


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid {x : x' @ shape @ x <= radius} with positive-definite shape."""

    shape: np.ndarray
    radius: float

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=float)
        if np.any(np.linalg.eigvalsh(shape) <= 0):
            raise ValueError("shape matrix must be positive definite")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "shape", shape)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.shape @ x) <= self.radius + tol


def support(P, direction):
    """Support value max{direction . x : x in P} via an LP on the H-form.

    Raises MalformedPolytope when the LP is infeasible or unbounded, which
    for a symmetric polytope can only happen if the representation itself is
    degenerate (e.g. normals that do not span the space).
    """
    direction = np.asarray(direction, dtype=float).ravel()
    if direction.shape[0] != P.dim:
        raise ValueError(f"direction has dim {direction.shape[0]}, set has {P.dim}")
    if not np.any(direction):
        return 0.0
    A_full, b_full = P.halfspaces()
    res = linprog(-direction, A_ub=A_full, b_ub=b_full, bounds=(None, None),
                  method="highs")
    if res.status != 0:
        raise MalformedPolytope(f"support LP failed (status {res.status})")
    return float(-res.fun)


def supports(P, directions):
    """Support values for each row of ``directions``.

    For 2-D sets this enumerates the vertices once and takes dot products,
    which agrees with the per-direction LP to the vertex tolerance; in higher
    dimension it falls back to one LP per direction.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if P.dim == 2:
        V = np.asarray(vertices_2d(P))
        return np.max(directions @ V.T, axis=1)
    return np.array([support(P, q) for q in directions])


def contains(P, x, tol=1e-9):
    """Membership check -b - tol <= A x <= b + tol."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != P.dim:
        raise ValueError("dimension mismatch")
    y = P.normals @ x
    return bool(np.all(np.abs(y) <= P.offsets + tol))


def contains_set(outer, inner, tol=1e-9):
    """True iff ``inner`` is contained in ``outer``, by support dominance on
    the outer normals."""
    h = supports(inner, outer.normals)
    return bool(np.all(h <= outer.offsets + tol))


def _dedup_rows(rows):
    """Drop rows that duplicate an earlier row exactly, up to sign."""
    kept = []
    for r in rows:
        if any(np.array_equal(r, k) or np.array_equal(-r, k) for k in kept):
            continue
        kept.append(r)
    return np.array(kept)


def minkowski_sum(P, Q, template=None):
    """Outer H-form of P + Q on a normal template.

    Offsets are per-facet support sums: h_{P+Q}(a) = h_P(a) + h_Q(a). The
    result contains the true sum and equals it whenever the template covers
    all facet normals of the sum. Default template: normals of P and Q,
    deduplicated. The block-diagonal lifted representation
    [I I] {(x, y) : x in P, y in Q} is exact but lives in 2n dimensions;
    every downstream use here only needs supports on fixed normals, so the
    template form is used throughout.
    """
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    if template is None:
        template = _dedup_rows(np.vstack([P.normals, Q.normals]))
    template = np.atleast_2d(np.asarray(template, dtype=float))
    h = supports(P, template) + supports(Q, template)
    return SymPolytope(template, h)


def minkowski_diff(P, Q):
    """Exact H-form Minkowski (Pontryagin) difference P - Q on P's normals.

    offsets_i = b_i - h_Q(a_i); raises EmptyDifference when any offset drops
    to zero or below (the tightening consumed the whole set).
    """
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    h = P.offsets - supports(Q, P.normals)
    if np.any(h <= 0):
        raise EmptyDifference(
            f"difference empty: worst margin {float(np.min(h)):.3e}"
        )
    return SymPolytope(P.normals, h)


def vertices_2d(P, tol=1e-9):
    """Vertices of a 2-D symmetric polytope, counter-clockwise.

    Intersects facet pairs of the full (two-sided) H-form, keeps points
    feasible for all inequalities within ``tol``, deduplicates, and sorts by
    angle. Every returned point lies on two active facets by construction.
    """
    if P.dim != 2:
        raise UnsupportedDimension(f"vertex enumeration needs n=2, got n={P.dim}")
    A_full, b_full = P.halfspaces()
    m = A_full.shape[0]
    pts = []
    for i in range(m):
        for j in range(i + 1, m):
            M = A_full[[i, j]]
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-12 * max(1.0, np.abs(M).max() ** 2):
                continue
            v = np.linalg.solve(M, b_full[[i, j]])
            if np.all(A_full @ v <= b_full + tol):
                pts.append(v)
    if not pts:
        raise MalformedPolytope("no vertices found; set unbounded or empty")
    pts = np.array(pts)
    # deduplicate within a scale-aware tolerance
    scale = max(1.0, float(np.abs(pts).max()))
    keep = []
    for v in pts:
        if not any(np.max(np.abs(v - w)) <= 1e-9 * scale for w in keep):
            keep.append(v)
    keep = np.array(keep)
    order = np.argsort(np.arctan2(keep[:, 1], keep[:, 0]))
    return keep[order]


def uniform_normals(m, n=2):
    """m unit normals at angles k*pi/m, k = 0..m-1 (half-space symmetry
    supplies the opposite directions)."""
    if n != 2:
        raise UnsupportedDimension("uniform normal generation is 2-D only")
    if m < n:
        raise ValueError(f"need at least {n} normals, got {m}")
    angles = np.arange(m) * np.pi / m
    return np.column_stack([np.cos(angles), np.sin(angles)])


def box(radius, n=2):
    """Axis-aligned box {x : |x_i| <= radius_i}; scalar radius broadcasts."""
    r = np.broadcast_to(np.asarray(radius, dtype=float), (n,)).copy()
    return SymPolytope(np.eye(n), r)


def write_vertices_csv(P, path):
    """Dump the 2-D vertex loop as CSV (x1, x2) for external plotting."""
    V = vertices_2d(P)
    V = np.vstack([V, V[:1]])  # close the loop
    np.savetxt(path, V, delimiter=",", header="x1,x2", comments="")


def save_json(P, path):
    with open(path, "w") as fh:
        json.dump(P.to_json(), fh, indent=1)


def load_json(path):
    with open(path) as fh:
        return SymPolytope.from_json(json.load(fh))
