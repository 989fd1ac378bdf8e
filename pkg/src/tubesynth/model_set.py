"""Data-consistent model set: linear encoding, smallest-disturbance LP, checks.

A model (A, B, d) is accepted when every measured transition's one-step
prediction error lands inside the disturbance polytope P(F, d) tightened by a
coverage margin: unseen transitions within distance ``theta`` (max norm) of a
measured one are then covered too, because the error is Lipschitz in the
transition with constant |F [-A -B I]|_inf. That norm is encoded linearly
through an entrywise slack matrix and a row-sum bound, which upper-bounds the
true norm and is therefore safe.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

EPS_POS = 1e-9  # closed-set margin standing in for strict inequalities


class InfeasibleModelSet(RuntimeError):
    """No (A, B, d) explains the data at this coverage margin; either the
    margin is too large for the disturbance parametrization or the data are
    inconsistent with an LTI-plus-bounded-error model."""


@dataclass(frozen=True)
class ModelTriple:
    """LTI matrices plus disturbance offsets: x+ = A x + B u + w, w in P(F, d)."""

    A: np.ndarray
    B: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if np.any(d <= 0):
            raise ValueError("disturbance offsets must be strictly positive")
        for arr in (A, B, d):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite model entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "d", d)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    def to_json(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "d": self.d.tolist()}

    @staticmethod
    def from_json(obj):
        return ModelTriple(np.asarray(obj["A"]), np.asarray(obj["B"]),
                           np.asarray(obj["d"]))


@dataclass(frozen=True)
class ModelSetRows:
    """Sparse inequality system G z <= h over z = [vec A, vec B, d, vec Z, lam].

    Z is the entrywise slack on |F [-A -B I]| and lam bounds its row sums, so
    lam >= |F [-A -B I]|_inf at any feasible point. Row blocks, in order:
    2 m_w (T-1) transition-membership rows, 2 m_w (2 n_x + n_u) slack-envelope
    rows, m_w row-sum rows, m_w positivity rows d >= lam theta + eps.
    """

    G: sp.csr_matrix
    h: np.ndarray
    n_x: int
    n_u: int
    m_w: int
    theta: float
    normals: np.ndarray

    @property
    def num_vars(self):
        nx, nu, mw = self.n_x, self.n_u, self.m_w
        return nx * nx + nx * nu + mw + mw * (2 * nx + nu) + 1

    def var_slices(self):
        nx, nu, mw = self.n_x, self.n_u, self.m_w
        nA = nx * nx
        nB = nx * nu
        nZ = mw * (2 * nx + nu)
        ofs = np.cumsum([0, nA, nB, mw, nZ])
        return {
            "A": slice(ofs[0], ofs[1]),
            "B": slice(ofs[1], ofs[2]),
            "d": slice(ofs[2], ofs[3]),
            "Z": slice(ofs[3], ofs[4]),
            "lam": slice(ofs[4], ofs[4] + 1),
        }

    def unpack(self, z):
        s = self.var_slices()
        A = z[s["A"]].reshape(self.n_x, self.n_x)
        B = z[s["B"]].reshape(self.n_x, self.n_u)
        d = z[s["d"]].copy()
        Z = z[s["Z"]].reshape(self.m_w, 2 * self.n_x + self.n_u)
        lam = float(z[s["lam"]][0])
        return A, B, d, Z, lam


def feasible_model_rows(transitions, normals, theta):
    """Assemble the inequality rows for the data-consistent model set.

    Per facet i and transition (x, u, x+):
        -(d_i - lam theta) <= F_i (x+ - A x - B u) <= d_i - lam theta
    plus the envelope -Z <= F [-A -B I] <= Z, row sums sum_j Z_ij <= lam, and
    d >= lam theta 1 + eps (strict positivity as a closed margin).
    """
    if theta < 0:
        raise ValueError("coverage margin must be nonnegative")
    if len(transitions) == 0:
        raise ValueError("no transitions")
    F = np.atleast_2d(np.asarray(normals, dtype=float))
    x, u, xp = transitions.split()
    n = len(transitions)
    nx, nu = transitions.n_x, transitions.n_u
    mw = F.shape[0]
    nA, nB = nx * nx, nx * nu
    off_d = nA + nB
    off_Z = off_d + mw
    off_lam = off_Z + mw * (2 * nx + nu)
    nv = off_lam + 1

    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def put(rr, cc, vv):
        rows.append(np.asarray(rr, dtype=np.int64))
        cols.append(np.asarray(cc, dtype=np.int64))
        vals.append(np.asarray(vv, dtype=float))

    # membership rows, vectorized over the n transitions per (sign, facet)
    idx = np.arange(n)
    for sgn in (1.0, -1.0):
        for i in range(mw):
            rr = r + idx
            for j in range(nx):
                for k in range(nx):
                    put(rr, np.full(n, j * nx + k), -sgn * F[i, j] * x[:, k])
                for l in range(nu):
                    put(rr, np.full(n, nA + j * nu + l), -sgn * F[i, j] * u[:, l])
            put(rr, np.full(n, off_d + i), np.full(n, -1.0))
            put(rr, np.full(n, off_lam), np.full(n, theta))
            rhs.append(-sgn * (xp @ F[i]))
            r += n

    # envelope rows: +-(F [-A -B I])_ic <= Z_ic
    width = 2 * nx + nu
    for sgn in (1.0, -1.0):
        for i in range(mw):
            for c in range(width):
                const = 0.0
                if c < nx:  # columns hitting -A
                    for j in range(nx):
                        put([r], [j * nx + c], [-sgn * F[i, j]])
                elif c < nx + nu:  # columns hitting -B
                    l = c - nx
                    for j in range(nx):
                        put([r], [nA + j * nu + l], [-sgn * F[i, j]])
                else:  # identity block: constant F entries
                    const = sgn * F[i, c - nx - nu]
                put([r], [off_Z + i * width + c], [-1.0])
                rhs.append(np.array([-const]))
                r += 1

    # row sums bounded by lam
    for i in range(mw):
        put(
            np.full(width, r),
            off_Z + i * width + np.arange(width),
            np.ones(width),
        )
        put([r], [off_lam], [-1.0])
        rhs.append(np.array([0.0]))
        r += 1

    # strict positivity of the tightened offsets
    for i in range(mw):
        put([r], [off_d + i], [-1.0])
        put([r], [off_lam], [theta])
        rhs.append(np.array([-EPS_POS]))
        r += 1

    G = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r, nv),
    ).tocsr()
    return ModelSetRows(G=G, h=np.concatenate(rhs), n_x=nx, n_u=nu, m_w=mw,
                        theta=theta, normals=F)


def initial_model_lp(rows):
    """Smallest-disturbance model: minimize |d|_1 over the consistent set.

    Returns the optimal ModelTriple along with the slack matrix and its row
    bound. Since d > 0 is part of the rows, the 1-norm is a plain sum.
    """
    c = np.zeros(rows.num_vars)
    c[rows.var_slices()["d"]] = 1.0
    res = linprog(c, A_ub=rows.G, b_ub=rows.h, bounds=(None, None),
                  method="highs")
    if res.status == 2:
        raise InfeasibleModelSet(
            f"consistent model set empty at theta={rows.theta:g}"
        )
    if res.status != 0:
        raise RuntimeError(f"model LP failed: {res.message}")
    A, B, d, Z, lam = rows.unpack(res.x)
    return ModelTriple(A, B, np.maximum(d, EPS_POS)), Z, lam


@dataclass(frozen=True)
class MembershipReport:
    """Worst-case slack of the tightened membership test over a transition set."""

    worst_slack: float
    kappa: float
    violating: np.ndarray  # transition indices with negative slack
    count: int

    @property
    def ok(self):
        return self.violating.size == 0

    def to_json(self):
        return {
            "worst_slack": self.worst_slack,
            "kappa": self.kappa,
            "violating": self.violating.tolist(),
            "count": self.count,
            "ok": self.ok,
        }


def prediction_errors(model, transitions):
    """One-step residuals x+ - A x - B u, shape (count, n_x)."""
    x, u, xp = transitions.split()
    return xp - x @ model.A.T - u @ model.B.T


def lipschitz_norm(model, normals):
    """|F [-A -B I]|_inf computed from the definition (max abs row sum)."""
    F = np.atleast_2d(np.asarray(normals, dtype=float))
    M = np.hstack([-F @ model.A, -F @ model.B, F])
    return float(np.max(np.abs(M).sum(axis=1)))


def check_membership(model, transitions, normals, theta, tol=1e-9):
    """Verify F zeta(z) within [-(d - kappa), d - kappa] for every transition,
    with kappa from the norm definition (not the slack encoding). Slacks more
    negative than ``tol`` count as violations; the raw worst slack is
    reported either way."""
    F = np.atleast_2d(np.asarray(normals, dtype=float))
    kappa = lipschitz_norm(model, normals) * theta
    margin = model.d - kappa
    fz = prediction_errors(model, transitions) @ F.T  # (count, m_w)
    slack = margin[None, :] - np.abs(fz)
    worst = float(slack.min()) if slack.size else float("inf")
    if np.any(margin <= 0):
        worst = min(worst, float(margin.min()))
    bad = np.unique(np.nonzero(slack < -tol)[0])
    return MembershipReport(worst_slack=worst, kappa=float(kappa),
                            violating=bad, count=len(transitions))


def validate_theta(model, transitions, normals, theta, tol=1e-9):
    """True iff the model also explains a held-out transition set (vacuously
    true when the set is empty)."""
    if len(transitions) == 0:
        return True
    return check_membership(model, transitions, normals, theta, tol=tol).ok
