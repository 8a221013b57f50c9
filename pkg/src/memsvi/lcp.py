"""Dirichlet Laplacian assembly and obstacle (linear complementarity) kernels.

The obstacle problem solved here is

    M u + zeta = q,   u >= lo,   zeta <= 0,   zeta (u - lo) = 0,

i.e. zeta is the multiplier of the constraint with the sign convention of the
subdifferential of the indicator of [lo, oo).  M must be a symmetric M-matrix.
Operators are kept in banded (1D) or sparse (2D) form, never dense.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .core import ConvergenceError, Grid, SolverConfig

__all__ = [
    "DiscreteOperator",
    "LcpProblem",
    "LcpResult",
    "NotAnMMatrix",
    "assemble_laplacian",
    "solve_obstacle",
    "pdas",
    "psor",
    "brute_force_obstacle",
    "feasible_active_sets",
]


class NotAnMMatrix(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Symmetric operator over interior unknowns.

    ``bands`` holds the (upper, diagonal, lower) rows in scipy's banded layout
    when the matrix is tridiagonal; ``matrix`` is the CSR form, built lazily
    for tridiagonal operators.
    """

    n: int
    bands: np.ndarray | None = None
    csr: sp.csr_matrix | None = None
    grid: Grid | None = None
    shift: float = 0.0

    @classmethod
    def from_matrix(cls, m, grid: Grid | None = None) -> "DiscreteOperator":
        m = sp.csr_matrix(m, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError("operator must be square")
        return cls(n=m.shape[0], csr=m, grid=grid)

    @property
    def matrix(self) -> sp.csr_matrix:
        if self.csr is None:
            b = self.bands
            m = sp.diags([b[2, :-1], b[1], b[0, 1:]], [-1, 0, 1], format="csr")
            object.__setattr__(self, "csr", m)
        return self.csr

    @property
    def diagonal(self) -> np.ndarray:
        if self.bands is not None:
            return self.bands[1]
        return self.matrix.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.bands is not None:
            b = self.bands
            y = b[1] * x
            y[:-1] += b[0, 1:] * x[1:]
            y[1:] += b[2, :-1] * x[:-1]
            return y
        return self.matrix @ x

    def with_diagonal(self, d: np.ndarray | float) -> "DiscreteOperator":
        """Operator plus diag(d)."""
        if self.bands is not None:
            b = self.bands.copy()
            b[1] += d
            return DiscreteOperator(self.n, bands=b, grid=self.grid)
        dv = np.broadcast_to(np.asarray(d, dtype=float), (self.n,))
        return DiscreteOperator(self.n, csr=(self.matrix + sp.diags(dv)).tocsr(), grid=self.grid)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.bands is not None:
            return solve_banded((1, 1), self.bands, rhs, check_finite=False)
        return spsolve(self.matrix.tocsc(), rhs)

    def solve_with_active(self, rhs: np.ndarray, active: np.ndarray, lo: np.ndarray) -> np.ndarray:
        """Solve with u = lo pinned on the active set and M u = rhs elsewhere."""
        if not active.any():
            return self.solve(rhs)
        if self.bands is not None:
            b = self.bands.copy()
            b[1, active] = 1.0
            idx = np.flatnonzero(active)
            up = idx[idx + 1 < self.n] + 1
            b[0, up] = 0.0
            down = idx[idx >= 1] - 1
            b[2, down] = 0.0
            r = np.where(active, lo, rhs)
            return solve_banded((1, 1), b, r, check_finite=False)
        inactive = ~active
        u = np.where(active, lo, 0.0)
        if inactive.any():
            m = self.matrix
            m_ii = m[inactive][:, inactive]
            r = rhs[inactive] - m[inactive][:, active] @ lo[active]
            u[inactive] = spsolve(m_ii.tocsc(), r) if m_ii.shape[0] > 1 else r / m_ii.toarray()[0, 0]
        return u

    def check_m_matrix(self) -> None:
        if self.bands is not None:
            b = self.bands
            if np.any(b[1] <= 0) or np.any(b[0, 1:] > 0) or np.any(b[2, :-1] > 0):
                raise NotAnMMatrix("tridiagonal operator is not a Z-matrix with positive diagonal")
            if not np.allclose(b[0, 1:], b[2, :-1]):
                raise NotAnMMatrix("operator is not symmetric")
            rows = b[1].copy()
            rows[:-1] += b[0, 1:]
            rows[1:] += b[2, :-1]
        else:
            m = self.matrix
            d = m.diagonal()
            off = m - sp.diags(d)
            if np.any(d <= 0) or (off.data > 0).any():
                raise NotAnMMatrix("operator is not a Z-matrix with positive diagonal")
            if abs(m - m.T).max() > 1e-12 * max(1.0, abs(d).max()):
                raise NotAnMMatrix("operator is not symmetric")
            rows = np.asarray(m.sum(axis=1)).ravel()
        scale = np.abs(self.diagonal).max()
        if np.all(rows >= -1e-12 * scale):
            return
        if self.n <= 500:
            if np.linalg.eigvalsh(self.matrix.toarray()).min() > 0:
                return
        raise NotAnMMatrix("operator is not positive definite")


def _second_difference(n: int, hx: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
                    format="csr") / hx ** 2


@lru_cache(maxsize=64)
def assemble_laplacian(grid: Grid, shift: float = 0.0) -> DiscreteOperator:
    """-Delta_h with Dirichlet rows eliminated, plus ``shift`` on the diagonal."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    m = grid.n - 2
    if grid.dim == 1:
        hx = grid.spacing[0]
        bands = np.empty((3, m))
        bands[0] = bands[2] = -1.0 / hx ** 2
        bands[1] = 2.0 / hx ** 2 + shift
        bands[0, 0] = bands[2, -1] = 0.0
        bands.setflags(write=False)
        return DiscreteOperator(m, bands=bands, grid=grid, shift=shift)
    hx, hy = grid.spacing
    eye = sp.identity(m, format="csr")
    lap = sp.kron(_second_difference(m, hx), eye) + sp.kron(eye, _second_difference(m, hy))
    lap = (lap + shift * sp.identity(m * m)).tocsr()
    return DiscreteOperator(m * m, csr=lap, grid=grid, shift=shift)


@dataclass(frozen=True, eq=False)
class LcpProblem:
    operator: DiscreteOperator
    q: np.ndarray
    lo: np.ndarray | float = -1.0

    def __post_init__(self):
        if not isinstance(self.operator, DiscreteOperator):
            object.__setattr__(self, "operator", DiscreteOperator.from_matrix(self.operator))
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.operator.n,):
            raise ValueError(f"load has shape {q.shape}, operator has {self.operator.n} unknowns")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lo", np.broadcast_to(np.asarray(self.lo, dtype=float), q.shape))


@dataclass(frozen=True, eq=False)
class LcpResult:
    u: np.ndarray
    zeta: np.ndarray
    active: np.ndarray
    iterations: int
    method: str
    residual: float
    comp_residual: float


def _finish(problem: LcpProblem, u: np.ndarray, active: np.ndarray, iterations: int,
            method: str) -> LcpResult:
    raw = problem.q - problem.operator.matvec(u)
    zeta = np.where(active, raw, 0.0)
    gap = u - problem.lo
    finite = np.isfinite(gap)
    natural = np.minimum(gap[finite], -raw[finite])
    return LcpResult(
        u=u, zeta=zeta, active=active, iterations=iterations, method=method,
        residual=float(np.max(np.abs(natural), initial=0.0)),
        comp_residual=float(np.max(np.abs(zeta[finite] * gap[finite]), initial=0.0)),
    )


def pdas(problem: LcpProblem, config: SolverConfig | None = None,
         active: np.ndarray | None = None) -> LcpResult:
    """Primal-dual active set iteration; terminates when the active set repeats."""
    config = config or SolverConfig()
    op, q, lo = problem.operator, problem.q, problem.lo
    act = np.zeros(op.n, dtype=bool) if active is None else active.copy()
    act &= np.isfinite(lo)
    for it in range(1, config.max_lcp_iter + 1):
        u = op.solve_with_active(q, act, lo)
        zeta = np.where(act, q - op.matvec(u), 0.0)
        # ties (zeta = 0 at u = lo) stay inactive
        new = (zeta + (u - lo)) < 0
        if np.array_equal(new, act):
            u = np.where(act, lo, u)
            return _finish(problem, u, act, it, "pdas")
        act = new
    raise ConvergenceError(f"PDAS did not settle in {config.max_lcp_iter} iterations")


def psor(problem: LcpProblem, config: SolverConfig | None = None,
         u0: np.ndarray | None = None) -> LcpResult:
    """Projected successive over-relaxation."""
    config = config or SolverConfig()
    op, q, lo = problem.operator, problem.q, problem.lo
    m = op.matrix
    n = op.n
    indptr, indices, data = m.indptr.tolist(), m.indices.tolist(), m.data.tolist()
    diag = op.diagonal.tolist()
    qv, lov = q.tolist(), lo.tolist()
    u = np.maximum(np.zeros(n) if u0 is None else np.asarray(u0, dtype=float), lo).tolist()
    omega = config.psor_omega
    tol = config.lcp_tol
    for sweep in range(1, config.max_lcp_iter + 1):
        biggest = 0.0
        for i in range(n):
            s = qv[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * u[j]
            new = (1 - omega) * u[i] + omega * s / diag[i]
            if new < lov[i]:
                new = lov[i]
            d = abs(new - u[i])
            if d > biggest:
                biggest = d
            u[i] = new
        if biggest < tol:
            uu = np.array(u)
            res = _finish(problem, uu, uu <= lo, sweep, "psor")
            if res.residual < tol:
                return res
    raise ConvergenceError(f"PSOR did not converge in {config.max_lcp_iter} sweeps")


def solve_obstacle(problem: LcpProblem, method: str = "pdas", config: SolverConfig | None = None,
                   active: np.ndarray | None = None, check: bool = True) -> LcpResult:
    if check:
        problem.operator.check_m_matrix()
    if method == "pdas":
        return pdas(problem, config, active)
    if method == "psor":
        return psor(problem, config)
    raise ValueError(f"unknown method {method!r}")


def feasible_active_sets(problem: LcpProblem, tol: float = 1e-12) -> list[tuple[np.ndarray, np.ndarray]]:
    """Enumerate every active set and keep the feasible ones (dense; testing only)."""
    n = problem.operator.n
    if n > 12:
        raise ValueError("brute force enumeration is limited to 12 unknowns")
    m = problem.operator.matrix.toarray()
    q, lo = problem.q, problem.lo
    found = []
    for bits in itertools.product((False, True), repeat=n):
        act = np.array(bits, dtype=bool)
        ina = ~act
        u = lo.copy()
        if ina.any():
            r = q[ina] - m[np.ix_(ina, act)] @ lo[act]
            u[ina] = np.linalg.solve(m[np.ix_(ina, ina)], r)
        zeta = np.where(act, q - m @ u, 0.0)
        if np.all(u[ina] >= lo[ina] - tol) and np.all(zeta[act] <= tol):
            found.append((act, u))
    return found


def brute_force_obstacle(problem: LcpProblem) -> LcpResult:
    found = feasible_active_sets(problem)
    if not found:
        raise ValueError("no feasible active set: not a well-posed M-matrix obstacle problem")
    if len(found) > 1:
        # degenerate ties; prefer the smallest active set like PDAS does
        found.sort(key=lambda p: p[0].sum())
    act, u = found[0]
    return _finish(problem, u, act, len(found), "brute")
