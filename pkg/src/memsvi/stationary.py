"""Maximal stationary state by monotone iteration, and threshold estimates.

Starting from u = 0, each sweep solves the linear obstacle problem

    -Delta_h u_{n+1} + zeta_{n+1} = -lambda g_W(u_n),   u_{n+1} >= -1,

which produces a non-increasing sequence converging to the maximal state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .core import (
    ConvergenceError,
    DielectricSpec,
    Field,
    Grid,
    InvariantViolation,
    SolutionWitness,
    SolverConfig,
    StateClassification,
    classify_state,
    discrete_energy,
    g_w,
    make_witness,
)
from .lcp import LcpProblem, assemble_laplacian, pdas

__all__ = [
    "StationaryResult",
    "ThresholdReport",
    "monotone_stationary",
    "principal_eigenpair",
    "pullin_upper_bound",
    "unzipped_lower_bound",
    "lambda_z_bisect",
    "stationary_residual",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StationaryResult:
    witness: SolutionWitness
    classification: StateClassification
    outer_iterations: int
    final_update_norm: float
    energy: float
    lam: float

    @property
    def u(self) -> Field:
        return self.witness.u


def stationary_residual(u: Field, lam: float, w: DielectricSpec) -> np.ndarray:
    """Delta_h u - lambda g_W(u) per interior node.

    On a stationary state this equals zeta: zero off the contact set, <= 0 on it.
    """
    grid = u.grid
    op = assemble_laplacian(grid)
    ui = u.interior
    return -lam * g_w(ui, w.interior(grid)) - op.matvec(ui)


def _witness(grid: Grid, u: np.ndarray, lam: float, w: np.ndarray, active: np.ndarray) -> SolutionWitness:
    op = assemble_laplacian(grid)
    zeta = np.where(active, -lam * g_w(u, w) - op.matvec(u), 0.0)
    return make_witness(grid, u, zeta, active)


def monotone_stationary(lam: float, w, grid: Grid, config: SolverConfig | None = None,
                        start: Field | None = None, stop_when_zipped: bool = False) -> StationaryResult:
    """Maximal stationary state for the given lambda.

    ``start`` may be any supersolution above the maximal state (for instance
    the maximal state of a smaller lambda); the default is u = 0.  With
    ``stop_when_zipped`` the iteration returns as soon as the iterate is
    zipped, which is then final for the limit since iterates only decrease.
    """
    config = config or SolverConfig()
    w = DielectricSpec.of(w)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    wi = w.interior(grid)
    op = assemble_laplacian(grid)
    u = np.zeros(grid.n_interior) if start is None else start.interior.copy()
    active = u <= -1.0
    update = 0.0
    it = 0
    if lam == 0:
        update = float(np.max(np.abs(u), initial=0.0))
        u = np.zeros_like(u)
        active = np.zeros_like(active)
    while lam > 0:
        it += 1
        if it > config.max_outer:
            raise ConvergenceError(f"monotone iteration did not settle in {config.max_outer} sweeps")
        res = pdas(LcpProblem(op, -lam * g_w(u, wi)), config, active)
        rise = float(np.max(res.u - u))
        if rise > 1e-12:
            raise InvariantViolation(f"monotone iteration increased by {rise:.3e} at sweep {it}")
        update = float(np.max(np.abs(res.u - u)))
        u, active = res.u, res.active
        if update < config.outer_tol:
            break
        if stop_when_zipped and classify_state(Field.from_interior(grid, u), config).zipped:
            break
    witness = _witness(grid, u, lam, wi, active)
    cls = classify_state(witness.u, config)
    return StationaryResult(witness, cls, it, update, discrete_energy(witness.u, lam, w), lam)


def principal_eigenpair(grid: Grid, tol: float = 1e-13, max_iter: int = 1000) -> tuple[float, Field]:
    """First Dirichlet eigenpair of -Delta_h by inverse power iteration, ||phi1||_1 = 1."""
    op = assemble_laplacian(grid)
    lu = splu(op.matrix.tocsc())
    wts = grid.interior_weights
    x = np.ones(op.n)
    mu = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= np.sum(wts * np.abs(y))
        mu_new = float(y @ op.matvec(y) / (y @ y))
        if abs(mu_new - mu) <= tol * mu_new and np.max(np.abs(y - x)) < 1e-10:
            x, mu = y, mu_new
            break
        x, mu = y, mu_new
    else:
        raise ConvergenceError("inverse power iteration did not converge")
    if np.any(x <= 0):
        raise InvariantViolation("principal eigenvector is not positive")
    return mu, Field.from_interior(grid, x)


def pullin_upper_bound(w, grid: Grid) -> float:
    """mu_1 / integral(phi_1 g_W(0)): every stationary state is zipped above it."""
    w = DielectricSpec.of(w)
    mu, phi1 = principal_eigenpair(grid)
    return mu / grid.integrate(phi1.values * w.g0(grid))


def unzipped_lower_bound(w, grid: Grid) -> float:
    """1/||v_1||_inf with -Delta_h v_1 = -1/(2 W^2); all states are unzipped below it."""
    w = DielectricSpec.of(w)
    op = assemble_laplacian(grid)
    v1 = op.solve(-0.5 / w.interior(grid) ** 2)
    return 1.0 / float(np.max(np.abs(v1)))


@dataclass(frozen=True)
class ThresholdReport:
    lambda_z_lo: float
    lambda_z_hi: float
    pullin_upper: float
    unzipped_lower: float
    bisection_steps: int

    def to_record(self) -> dict:
        return {
            "lambda_z_estimate": [self.lambda_z_lo, self.lambda_z_hi],
            "pullin_upper": self.pullin_upper,
            "unzipped_lower": self.unzipped_lower,
            "bisection_steps": self.bisection_steps,
        }


def lambda_z_bisect(w, grid: Grid, bracket: tuple[float, float] | None = None,
                    config: SolverConfig | None = None) -> ThresholdReport:
    """Bracket the zipping threshold of the maximal state by bisection in lambda.

    The default bracket is [unzipped lower bound, pull-in upper bound].
    Maximal states decrease in lambda, so the lower end's state is a valid
    starting supersolution for every probe above it.
    """
    config = config or SolverConfig()
    w = DielectricSpec.of(w)
    lower = unzipped_lower_bound(w, grid)
    upper = pullin_upper_bound(w, grid)
    lo, hi = bracket if bracket is not None else (lower * (1 - 1e-9), upper * (1 + 1e-9))
    if not 0 < lo < hi:
        raise ValueError(f"invalid bracket ({lo}, {hi})")
    at_lo = monotone_stationary(lo, w, grid, config)
    if at_lo.classification.zipped:
        raise ValueError(f"lower bracket end {lo} already gives a zipped maximal state")
    if not monotone_stationary(hi, w, grid, config, start=at_lo.u, stop_when_zipped=True).classification.zipped:
        raise ValueError(f"upper bracket end {hi} gives an unzipped maximal state")
    steps = 0
    while hi - lo > config.bisect_tol:
        mid = 0.5 * (lo + hi)
        probe = monotone_stationary(mid, w, grid, config, start=at_lo.u, stop_when_zipped=True)
        steps += 1
        log.debug("bisection probe lambda=%.8f zipped=%s sweeps=%d", mid,
                  probe.classification.zipped, probe.outer_iterations)
        if probe.classification.zipped:
            hi = mid
        else:
            lo, at_lo = mid, probe
    # re-verify both ends from the cold start u = 0
    if monotone_stationary(lo, w, grid, config).classification.zipped:
        raise InvariantViolation(f"lower end {lo} turned zipped on re-check")
    if not monotone_stationary(hi, w, grid, config, stop_when_zipped=True).classification.zipped:
        raise InvariantViolation(f"upper end {hi} turned unzipped on re-check")
    return ThresholdReport(lo, hi, upper, lower, steps)
