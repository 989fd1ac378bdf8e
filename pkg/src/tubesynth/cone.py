"""Assembly and solution of conic programs: linear rows plus PSD blocks.

This is the one place the package talks to an interior-point solver. A
``ConeProgram`` owns a registry of named scalar blocks (free / nonnegative /
diagonal / symmetric), linear equality and inequality rows in sparse triplet
form, and a list of PSD constraints, each an affine symmetric-matrix
expression over the registered scalars. ``assemble`` lowers everything to the
standard form  min 0.5 x'Px + q'x  s.t.  Ax + s = b,  s in K  consumed by
Clarabel, with symmetric blocks vectorized in scaled (sqrt-2 off-diagonal)
triangular form so matrix inner products are preserved.

Strict definiteness is realized as M >= eps_psd * I; the margin is uniform
and configurable per program.
"""

import json
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

import clarabel

DEFAULT_EPS_PSD = 1e-7
# enforcement pad absorbing solver accuracy, so recovered blocks still clear
# the unpadded strictness threshold
SOLVE_PAD = 1e-8


@dataclass
class _Var:
    name: str
    kind: str          # "free" | "nonneg" | "diag" | "sym"
    shape: tuple
    offset: int
    size: int


class MatExpr:
    """Affine matrix expression C0 + sum_j x_j C_j over program scalars."""

    __slots__ = ("shape", "const", "lin")

    def __init__(self, shape, const=None, lin=None):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)
        self.lin = {} if lin is None else lin

    @staticmethod
    def constant(arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return MatExpr(arr.shape, const=arr)

    def copy(self):
        return MatExpr(self.shape, self.const.copy(),
                       {k: v.copy() for k, v in self.lin.items()})

    def __add__(self, other):
        if not isinstance(other, MatExpr):
            other = MatExpr.constant(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        out = self.copy()
        out.const = out.const + other.const
        for k, v in other.lin.items():
            out.lin[k] = out.lin.get(k, 0) + v
        return out

    def __sub__(self, other):
        if not isinstance(other, MatExpr):
            other = MatExpr.constant(other)
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        out = MatExpr(self.shape, scalar * self.const,
                      {k: scalar * v for k, v in self.lin.items()})
        return out

    def __neg__(self):
        return (-1.0) * self

    @property
    def T(self):
        return MatExpr((self.shape[1], self.shape[0]), self.const.T,
                       {k: v.T for k, v in self.lin.items()})

    def lmul(self, C):
        """Constant-left product C @ self."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return MatExpr((C.shape[0], self.shape[1]), C @ self.const,
                       {k: C @ v for k, v in self.lin.items()})

    def rmul(self, C):
        """Constant-right product self @ C."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return MatExpr((self.shape[0], C.shape[1]), self.const @ C,
                       {k: v @ C for k, v in self.lin.items()})

    def evaluate(self, x):
        """Numeric value at a full primal vector."""
        out = self.const.copy()
        for k, v in self.lin.items():
            out = out + x[k] * v
        return out


def sym_block(grid):
    """Assemble a symmetric block matrix expression from its upper triangle.

    ``grid[i][j]`` for j >= i may be a MatExpr, an ndarray, a scalar (1x1),
    or None (zeros); entries below the diagonal are ignored and filled with
    the transpose of the mirrored block. Diagonal blocks must be symmetric
    expressions themselves.
    """
    nblk = len(grid)
    # infer block dimensions from diagonal entries first, then off-diagonals
    dims = [None] * nblk
    def shape_of(e):
        if e is None:
            return None
        if isinstance(e, MatExpr):
            return e.shape
        arr = np.atleast_2d(np.asarray(e, dtype=float))
        return arr.shape
    for i in range(nblk):
        s = shape_of(grid[i][i])
        if s is not None:
            dims[i] = s[0]
    for i in range(nblk):
        for j in range(i, nblk):
            s = shape_of(grid[i][j])
            if s is None:
                continue
            if dims[i] is None:
                dims[i] = s[0]
            if dims[j] is None:
                dims[j] = s[1]
            if (s[0], s[1]) != (dims[i], dims[j]):
                raise ValueError(f"block ({i},{j}) has shape {s}, expected "
                                 f"({dims[i]},{dims[j]})")
    if any(d is None for d in dims):
        raise ValueError("could not infer all block dimensions")
    total = int(sum(dims))
    starts = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    out = MatExpr((total, total))

    def paste(expr, r0, c0):
        if expr is None:
            return
        if not isinstance(expr, MatExpr):
            expr = MatExpr.constant(expr)
        r1, c1 = r0 + expr.shape[0], c0 + expr.shape[1]
        out.const[r0:r1, c0:c1] += expr.const
        if (r0, c0) != (c0, r0):
            out.const[c0:c1, r0:r1] += expr.const.T
        for k, v in expr.lin.items():
            coef = out.lin.get(k)
            if coef is None:
                coef = np.zeros((total, total))
                out.lin[k] = coef
            coef[r0:r1, c0:c1] += v
            if (r0, c0) != (c0, r0):
                coef[c0:c1, r0:r1] += v.T

    for i in range(nblk):
        for j in range(i, nblk):
            paste(grid[i][j], starts[i], starts[j])
    # symmetrize diagonal blocks defensively (cheap, sizes are small)
    out.const = 0.5 * (out.const + out.const.T)
    for k in out.lin:
        out.lin[k] = 0.5 * (out.lin[k] + out.lin[k].T)
    return out


@dataclass
class ProblemSize:
    """Row/variable accounting in the convention used for complexity reports:
    each PSD block of side s contributes s rows."""

    psd_rows: int
    psd_block_sides: list
    eq_rows: int
    ineq_rows: int
    scalar_vars: int

    def to_json(self):
        return {
            "psd_rows": self.psd_rows,
            "psd_block_sides": list(self.psd_block_sides),
            "eq_rows": self.eq_rows,
            "ineq_rows": self.ineq_rows,
            "scalar_vars": self.scalar_vars,
        }


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numerical-trouble
    values: dict
    objective: float
    iterations: int
    solve_time: float
    solver_status: str = ""

    @property
    def optimal(self):
        return self.status == "optimal"


def _tri_index(n):
    """(row, col, scale) triples of the column-major upper triangle."""
    rows, cols, scale = [], [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    return np.array(rows), np.array(cols), np.array(scale)


def _svec(M, tri):
    r, c, s = tri
    return s * M[r, c]


class ConeProgram:
    """Conic program builder; see module docstring for the lowered form."""

    def __init__(self, eps_psd=DEFAULT_EPS_PSD):
        self.eps_psd = float(eps_psd)
        self._vars = {}
        self._order = []
        self._n = 0
        self._obj = {}          # scalar index -> linear coefficient
        self._quad = []         # (rows, cols, vals) triplets, global indices
        self._eq = ([], [], [], [])    # rows, cols, vals, rhs chunks
        self._ineq = ([], [], [], [])
        self._eq_count = 0
        self._ineq_count = 0
        self._psd = []          # (name, MatExpr)

    # ---- variables ----------------------------------------------------

    def add_var(self, name, shape, kind="free"):
        if name in self._vars:
            raise ValueError(f"variable {name!r} already registered")
        if isinstance(shape, int):
            shape = (shape,)
        shape = tuple(int(s) for s in shape)
        if kind in ("free", "nonneg"):
            size = int(np.prod(shape)) if shape else 1
        elif kind == "diag":
            (n,) = shape
            size = n
        elif kind == "sym":
            n = shape[0]
            if shape != (n, n):
                raise ValueError("symmetric variable must be square")
            size = n * (n + 1) // 2
        else:
            raise ValueError(f"unknown kind {kind!r}")
        var = _Var(name, kind, shape, self._n, size)
        self._vars[name] = var
        self._order.append(var)
        self._n += size
        if kind == "nonneg":
            idx = np.arange(var.offset, var.offset + size)
            self.add_ineq_triplets(np.arange(size), idx, -np.ones(size),
                                   np.zeros(size))
        return var

    @property
    def num_scalars(self):
        return self._n

    def indices(self, name):
        v = self._vars[name]
        return np.arange(v.offset, v.offset + v.size)

    def mat(self, name):
        """Matrix-shaped affine view of a registered variable."""
        v = self._vars[name]
        if v.kind in ("free", "nonneg"):
            if len(v.shape) == 1:
                m = v.shape[0] if v.shape else 1
                lin = {v.offset + i: _unit(m, 1, i, 0) for i in range(m)}
                return MatExpr((m, 1), lin=lin)
            p, q = v.shape
            lin = {v.offset + i * q + j: _unit(p, q, i, j)
                   for i in range(p) for j in range(q)}
            return MatExpr((p, q), lin=lin)
        if v.kind == "diag":
            (n,) = v.shape
            lin = {v.offset + i: _unit(n, n, i, i) for i in range(n)}
            return MatExpr((n, n), lin=lin)
        # symmetric: row-major upper-triangle storage
        n = v.shape[0]
        lin = {}
        t = 0
        for i in range(n):
            for j in range(i, n):
                coef = _unit(n, n, i, j)
                if i != j:
                    coef = coef + _unit(n, n, j, i)
                lin[v.offset + t] = coef
                t += 1
        return MatExpr((n, n), lin=lin)

    def scalar(self, name):
        """1x1 view of a scalar variable."""
        v = self._vars[name]
        if v.size != 1:
            raise ValueError(f"{name!r} is not scalar")
        return MatExpr((1, 1), lin={v.offset: np.ones((1, 1))})

    def entry(self, name, i):
        """1x1 view of entry i of a vector/diag variable."""
        v = self._vars[name]
        return MatExpr((1, 1), lin={v.offset + int(i): np.ones((1, 1))})

    # ---- constraints ---------------------------------------------------

    def add_ineq_triplets(self, rows, cols, vals, rhs):
        """Append rows G x <= h given local row indices 0..len(rhs)-1."""
        rows = np.asarray(rows, dtype=np.int64) + self._ineq_count
        self._ineq[0].append(rows)
        self._ineq[1].append(np.asarray(cols, dtype=np.int64))
        self._ineq[2].append(np.asarray(vals, dtype=float))
        self._ineq[3].append(np.asarray(rhs, dtype=float).ravel())
        self._ineq_count += len(self._ineq[3][-1])

    def add_eq_triplets(self, rows, cols, vals, rhs):
        rows = np.asarray(rows, dtype=np.int64) + self._eq_count
        self._eq[0].append(rows)
        self._eq[1].append(np.asarray(cols, dtype=np.int64))
        self._eq[2].append(np.asarray(vals, dtype=float))
        self._eq[3].append(np.asarray(rhs, dtype=float).ravel())
        self._eq_count += len(self._eq[3][-1])

    def _expr_rows(self, expr):
        """Triplets of a column-vector expression, rhs = -const."""
        if expr.shape[1] != 1:
            raise ValueError("expected a column expression")
        m = expr.shape[0]
        rows, cols, vals = [], [], []
        for k, v in expr.lin.items():
            nz = np.nonzero(v[:, 0])[0]
            rows.append(nz)
            cols.append(np.full(nz.size, k))
            vals.append(v[nz, 0])
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        return rows, cols, vals, -expr.const[:, 0]

    def add_ineq_expr(self, expr):
        """Rows expr <= 0 for a column MatExpr."""
        self.add_ineq_triplets(*self._expr_rows(expr))

    def add_eq_expr(self, expr):
        """Rows expr == 0 for a column MatExpr."""
        self.add_eq_triplets(*self._expr_rows(expr))

    def add_psd(self, name, expr):
        if expr.shape[0] != expr.shape[1]:
            raise ValueError("PSD block must be square")
        for k in expr.lin:
            if not (0 <= k < self._n):
                raise ValueError("PSD block references unregistered scalar")
        self._psd.append((name, expr))

    # ---- objective -----------------------------------------------------

    def add_obj(self, name, coef=1.0):
        """Add coef * sum(entries of variable) to the linear objective."""
        for idx in self.indices(name):
            self._obj[idx] = self._obj.get(idx, 0.0) + float(coef)

    def add_obj_index(self, idx, coef):
        self._obj[int(idx)] = self._obj.get(int(idx), 0.0) + float(coef)

    def add_quad(self, name, H):
        """Add x_name' H x_name to the objective (H symmetric PSD)."""
        v = self._vars[name]
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape != (v.size, v.size):
            raise ValueError("quadratic block shape mismatch")
        r, c = np.nonzero(H)
        self._quad.append((v.offset + r, v.offset + c, H[r, c]))

    # ---- assembly / solution --------------------------------------------

    def problem_size(self):
        sides = [e.shape[0] for _, e in self._psd]
        return ProblemSize(
            psd_rows=int(sum(sides)),
            psd_block_sides=sides,
            eq_rows=self._eq_count,
            ineq_rows=self._ineq_count,
            scalar_vars=self._n,
        )

    def _stack(self, store, count):
        if count == 0:
            return sp.csr_matrix((0, self._n)), np.zeros(0)
        G = sp.coo_matrix(
            (np.concatenate(store[2]),
             (np.concatenate(store[0]), np.concatenate(store[1]))),
            shape=(count, self._n),
        ).tocsr()
        return G, np.concatenate(store[3])

    def assemble(self):
        """Lower to (P, q, A, b, cones) with zero, nonnegative and scaled-PSD
        cones, subtracting the strictness margin from every PSD block."""
        n = self._n
        Aeq, beq = self._stack(self._eq, self._eq_count)
        Gin, hin = self._stack(self._ineq, self._ineq_count)
        blocks = [Aeq, Gin]
        rhs = [beq, hin]
        cones = []
        if self._eq_count:
            cones.append(clarabel.ZeroConeT(self._eq_count))
        if self._ineq_count:
            cones.append(clarabel.NonnegativeConeT(self._ineq_count))
        for _, expr in self._psd:
            s = expr.shape[0]
            tri = _tri_index(s)
            m = len(tri[0])
            rows, cols, vals = [], [], []
            for k, coef in expr.lin.items():
                sv = _svec(0.5 * (coef + coef.T), tri)
                nz = np.nonzero(sv)[0]
                rows.append(nz)
                cols.append(np.full(nz.size, k))
                vals.append(-sv[nz])
            if rows:
                A_blk = sp.coo_matrix(
                    (np.concatenate(vals),
                     (np.concatenate(rows), np.concatenate(cols))),
                    shape=(m, n),
                ).tocsr()
            else:
                A_blk = sp.csr_matrix((m, n))
            const = 0.5 * (expr.const + expr.const.T) - self.eps_psd * np.eye(s)
            blocks.append(A_blk)
            rhs.append(_svec(const, tri))
            cones.append(clarabel.PSDTriangleConeT(s))
        A = sp.vstack(blocks).tocsc()
        b = np.concatenate(rhs)
        q = np.zeros(n)
        for k, v in self._obj.items():
            q[k] += v
        if self._quad:
            r = np.concatenate([t[0] for t in self._quad])
            c = np.concatenate([t[1] for t in self._quad])
            v = np.concatenate([t[2] for t in self._quad])
            P = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
            P = 0.5 * (P + P.T)
            # quadratic form x'Hx lowers to 0.5 x'Px with P = 2H
            P = sp.triu(2.0 * P).tocsc()
        else:
            P = sp.csc_matrix((n, n))
        return P, q, A, b, cones

    def _unpack(self, x):
        out = {}
        for v in self._order:
            chunk = x[v.offset:v.offset + v.size]
            if v.kind in ("free", "nonneg"):
                out[v.name] = (chunk.reshape(v.shape).copy()
                               if len(v.shape) > 1 else chunk.copy())
            elif v.kind == "diag":
                out[v.name] = chunk.copy()
            else:
                nn = v.shape[0]
                M = np.zeros((nn, nn))
                t = 0
                for i in range(nn):
                    for j in range(i, nn):
                        M[i, j] = M[j, i] = chunk[t]
                        t += 1
                out[v.name] = M
        return out

    def objective_at(self, x):
        val = sum(coef * x[k] for k, coef in self._obj.items())
        for r, c, v in self._quad:
            val += float(np.sum(v * x[r] * x[c]))
        return float(val)

    def solve(self, max_iter=200, time_limit=60.0, tol=1e-9, verbose=False):
        P, q, A, b, cones = self.assemble()
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.max_iter = max_iter
        settings.time_limit = time_limit
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        t0 = time.perf_counter()
        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        sol = solver.solve()
        wall = time.perf_counter() - t0
        raw = str(sol.status)
        if raw == "Solved":
            status = "optimal"
        elif "PrimalInfeasible" in raw:
            status = "infeasible"
        elif "DualInfeasible" in raw:
            status = "unbounded"
        else:
            status = "numerical-trouble"
        values = {}
        objective = float("nan")
        if status == "optimal":
            x = np.asarray(sol.x)
            values = self._unpack(x)
            objective = self.objective_at(x)
        return SolveResult(status=status, values=values, objective=objective,
                           iterations=int(sol.iterations), solve_time=wall,
                           solver_status=raw)

    def psd_min_eigs(self, values):
        """Minimum eigenvalue of every PSD block at a named-value assignment
        (round-trip check of a solution)."""
        x = self.flatten_values(values)
        return {name: float(np.linalg.eigvalsh(expr.evaluate(x)).min())
                for name, expr in self._psd}

    def flatten_values(self, values):
        x = np.zeros(self._n)
        for v in self._order:
            val = np.asarray(values[v.name], dtype=float)
            if v.kind in ("free", "nonneg", "diag"):
                x[v.offset:v.offset + v.size] = val.ravel()
            else:
                nn = v.shape[0]
                t = 0
                for i in range(nn):
                    for j in range(i, nn):
                        x[v.offset + t] = val[i, j]
                        t += 1
        return x

    def dump(self, path):
        """Write the assembled data as JSON triplets for external checking."""
        P, q, A, b, _ = self.assemble()
        Pc = P.tocoo()
        Ac = A.tocoo()
        cone_list = []
        if self._eq_count:
            cone_list.append(["zero", self._eq_count])
        if self._ineq_count:
            cone_list.append(["nonneg", self._ineq_count])
        cone_list.extend(["psd_triangle", e.shape[0]] for _, e in self._psd)
        payload = {
            "num_vars": self._n,
            "objective_linear": q.tolist(),
            "objective_quad": {
                "rows": Pc.row.tolist(), "cols": Pc.col.tolist(),
                "vals": Pc.data.tolist(),
            },
            "constraint": {
                "rows": Ac.row.tolist(), "cols": Ac.col.tolist(),
                "vals": Ac.data.tolist(), "rhs": b.tolist(),
            },
            "cones": cone_list,
            "eps_psd": self.eps_psd,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def _unit(p, q, i, j):
    E = np.zeros((p, q))
    E[i, j] = 1.0
    return E
