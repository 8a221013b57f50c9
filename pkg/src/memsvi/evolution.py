"""Implicit Euler (minimizing movement) time stepping for the constrained flow.

One step from f with step size h solves

    (u - f)/h - Delta_h u + zeta = -lambda g_W(u),   zeta in dI_[-1,oo)(u).

The nonlinearity is linearized about the current iterate (Newton) and each
linearized problem is a linear obstacle problem with diagonal shift 1/h.
When the Newton shift 1/h - lambda g_W'(u) loses its sign the iteration falls
back to lagging g_W (Picard), whose shift 1/h is always admissible.  A step is
accepted only if the discrete energy inequality of the minimizing movement
holds; otherwise h is halved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConvergenceError,
    DielectricSpec,
    EnergyLedger,
    Field,
    Grid,
    InvariantViolation,
    LedgerEntry,
    SolutionWitness,
    SolverConfig,
    classify_state,
    discrete_energy,
    g_w,
    l2_norm,
    make_witness,
)
from .lcp import LcpProblem, assemble_laplacian, pdas
from .stationary import monotone_stationary, principal_eigenpair, pullin_upper_bound

__all__ = [
    "StepResult",
    "Trajectory",
    "euler_step",
    "penalty_step",
    "evolve",
    "penalty_evolve",
    "zipping_time_bound",
    "OmegaLimitReport",
    "omega_limit_check",
    "ComparisonReport",
    "comparison_check",
    "TailNotSettled",
]

log = logging.getLogger(__name__)


class TailNotSettled(ConvergenceError):
    pass


@dataclass(frozen=True, eq=False)
class StepResult:
    witness: SolutionWitness
    h: float
    energy_before: float
    energy_after: float
    kinetic: float
    slack: float
    inner_iterations: int
    halvings: int

    @property
    def u(self) -> Field:
        return self.witness.u


def _linearized(u, f, h, lam, wi, newton: bool):
    """Diagonal shift and load of the linearized step about ``u``."""
    g = g_w(u, wi)
    if newton:
        c = 1.0 / (1.0 + u + wi) ** 3
        shift = 1.0 / h - lam * c
        if np.all(shift >= 0):
            return shift, f / h - lam * g - lam * c * u
    return np.full_like(u, 1.0 / h), f / h - lam * g


def _solve_step(f, h, lam, wi, grid, config, penalty: float | None):
    """Inner fixed-point loop for one step; returns (u, active, iterations)."""
    lap = assemble_laplacian(grid)
    newton = config.inner == "newton"
    u = f.copy() if penalty is not None else np.maximum(f, -1.0)
    active = u <= -1.0 if penalty is None else np.minimum(1.0 + u, 0.0) < 0
    for it in range(1, config.max_inner + 1):
        shift, rhs = _linearized(u, f, h, lam, wi, newton)
        if penalty is None:
            res = pdas(LcpProblem(lap.with_diagonal(shift), rhs), config, active)
            new_u, new_active = res.u, res.active
        else:
            shift = shift + penalty * active
            rhs = rhs - penalty * active
            new_u = lap.with_diagonal(shift).solve(rhs)
            new_active = (1.0 + new_u) < 0
        if np.any(1.0 + new_u + wi <= 0):
            raise ConvergenceError("iterate crossed the singularity 1 + u + W = 0")
        du = float(np.max(np.abs(new_u - u), initial=0.0))
        same = np.array_equal(new_active, active)
        u, active = new_u, new_active
        if du < config.outer_tol and same:
            return u, active, it
    raise ConvergenceError(f"inner iteration did not converge in {config.max_inner} sweeps")


def _step(f: Field, h: float, lam: float, w: DielectricSpec, config: SolverConfig,
          penalty: float | None) -> StepResult:
    grid = f.grid
    wi = w.interior(grid)
    fi = f.interior
    lap = assemble_laplacian(grid)
    k = 0.0 if penalty is None else penalty
    e_f = discrete_energy(f, lam, w, penalty=k)
    cap = max(0.0, float(np.max(f.values)))
    for halvings in range(config.max_halvings + 1):
        u, active, iters = _solve_step(fi, h, lam, wi, grid, config, penalty)
        uf = Field.from_interior(grid, u)
        kinetic = l2_norm(grid, uf.values - f.values) ** 2 / (2 * h)
        e_u = discrete_energy(uf, lam, w, penalty=k)
        slack = e_f - e_u - kinetic
        if slack >= -config.energy_tol:
            break
        log.info("energy inequality failed (slack %.3e) at h=%.3e; halving", slack, h)
        h /= 2
    else:
        raise ConvergenceError(f"step rejected after {config.max_halvings} halvings")
    if np.max(u, initial=-np.inf) > cap + 1e-12:
        raise InvariantViolation(f"step exceeded the upper bound max(0, max f) = {cap}")
    if penalty is None:
        zeta = np.where(active, fi / h - lam * g_w(u, wi) - u / h - lap.matvec(u), 0.0)
        witness = make_witness(grid, u, zeta, active)
    else:
        zeta = penalty * np.minimum(1.0 + u, 0.0)
        witness = make_witness(grid, u, zeta, active)
    return StepResult(witness, h, e_f, e_u, kinetic, slack, iters, halvings)


def euler_step(f: Field, h: float, lam: float, w, config: SolverConfig | None = None) -> StepResult:
    """One energy-gated implicit Euler step of the obstacle flow (``h`` may be halved)."""
    config = config or SolverConfig()
    if np.any(f.values < -1.0):
        raise ValueError("initial datum lies below the obstacle")
    if not f.boundary_is_zero():
        raise ValueError("initial datum violates the Dirichlet condition")
    return _step(f, h, lam, DielectricSpec.of(w), config, None)


def penalty_step(f: Field, h: float, lam: float, w, k: float,
                 config: SolverConfig | None = None) -> StepResult:
    """Implicit Euler step with the constraint replaced by the reaction K min(1+u, 0)."""
    if not k > 0:
        raise ValueError("penalty K must be positive")
    return _step(f, h, lam, DielectricSpec.of(w), config or SolverConfig(), k)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: tuple[SolutionWitness, ...]
    ledger: EnergyLedger
    touchdown_time: float | None
    zipping_time: float | None
    final: SolutionWitness
    final_time: float
    n_steps: int
    max_time_increase: float
    nesting_violations: int
    min_value: float
    final_rate: float
    upper_bound: float
    penalty: float | None = None
    step_sizes: np.ndarray = field(default=None, repr=False)

    def events(self) -> dict:
        return {"touchdown_time": self.touchdown_time, "zipping_time": self.zipping_time}


def _run(u0, lam, w, h, t_end, config, penalty, settle_tol, every):
    w = DielectricSpec.of(w)
    grid = u0.grid
    if penalty is None:
        if np.any(u0.values < -1.0):
            raise ValueError("initial datum lies below the obstacle")
    if not u0.boundary_is_zero():
        raise ValueError("initial datum violates the Dirichlet condition")
    every = every or config.snapshot_every
    k = 0.0 if penalty is None else penalty
    bound = float(np.max(np.maximum(u0.values, 0.0)))
    state = make_witness(grid, u0.interior, np.zeros(grid.n_interior))
    times, states, steps, entries = [0.0], [state], [], []
    t = 0.0
    n = 0
    touchdown = zipping = None
    prev_cls = classify_state(u0, config)
    if u0.values.min() <= -1.0 + config.contact_tol:
        touchdown = 0.0
    if prev_cls.zipped:
        zipping = 0.0
    max_rise = -np.inf
    nest_bad = 0
    min_val = float(u0.values.min())
    rate = np.inf
    e0 = discrete_energy(u0, lam, w, penalty=k)
    while t < t_end * (1 - 1e-12):
        dt = min(h, t_end - t)
        res = _step(state.u, dt, lam, w, config, penalty)
        n += 1
        t += res.h
        u = res.witness.u
        if res.slack < -config.energy_tol:
            raise InvariantViolation(f"energy slack {res.slack:.3e} at t={t}")
        if np.max(u.values) > bound + 1e-12:
            raise InvariantViolation(f"trajectory exceeded ||(u0)+||_inf = {bound} at t={t}")
        entries.append(LedgerEntry(t, res.energy_after, res.kinetic, res.slack))
        steps.append(res.h)
        max_rise = max(max_rise, float(np.max(u.values - state.u.values)))
        min_val = min(min_val, float(u.values.min()))
        cls = classify_state(u, config)
        if prev_cls.n_contact and not _contains(cls, prev_cls):
            nest_bad += 1
        if touchdown is None and u.values.min() <= -1.0 + config.contact_tol:
            touchdown = t
        event = False
        if zipping is None and cls.zipped:
            zipping = t
            event = True
        rate = l2_norm(grid, u.values - state.u.values) / res.h
        state, prev_cls = res.witness, cls
        settled = settle_tol is not None and rate < settle_tol
        if event or n % every == 0 or settled:
            times.append(t)
            states.append(state)
        if settled:
            break
    if times[-1] != t:
        times.append(t)
        states.append(state)
    ledger = EnergyLedger(e0, tuple(entries))
    if not ledger.cumulative_ok(config.energy_tol):
        raise InvariantViolation("cumulative energy inequality violated")
    return Trajectory(
        times=np.array(times), states=tuple(states), ledger=ledger,
        touchdown_time=touchdown, zipping_time=zipping, final=state, final_time=t,
        n_steps=n, max_time_increase=max_rise, nesting_violations=nest_bad,
        min_value=min_val, final_rate=rate, upper_bound=bound, penalty=penalty,
        step_sizes=np.array(steps),
    )


def _contains(later, earlier) -> bool:
    a = {tuple(np.atleast_1d(x)) for x in earlier.coincidence_nodes}
    b = {tuple(np.atleast_1d(x)) for x in later.coincidence_nodes}
    return a <= b


def evolve(u0: Field, lam: float, w, h: float, t_end: float, config: SolverConfig | None = None,
           settle_tol: float | None = None, every: int | None = None) -> Trajectory:
    """Repeated energy-gated Euler steps up to ``t_end``.

    With ``settle_tol`` the run stops early once the discrete time derivative
    has L2 norm below it.  Snapshots are kept every ``every`` steps plus the
    zipping event and the final state; the diagnostics cover every step.
    """
    return _run(u0, lam, w, h, t_end, config or SolverConfig(), None, settle_tol, every)


def penalty_evolve(u0: Field, lam: float, w, h: float, t_end: float, k: float,
                   config: SolverConfig | None = None, settle_tol: float | None = None,
                   every: int | None = None) -> Trajectory:
    if not k > 0:
        raise ValueError("penalty K must be positive")
    return _run(u0, lam, w, h, t_end, config or SolverConfig(), float(k), settle_tol, every)


def zipping_time_bound(lam: float, w, grid: Grid) -> float:
    """Lambda*/(mu_1 (lambda - Lambda*)): the flow from rest is zipped after this time."""
    w = DielectricSpec.of(w)
    big = pullin_upper_bound(w, grid)
    if lam <= big:
        raise ValueError(f"lambda={lam} <= Lambda*={big}: no zipping time bound")
    mu, _ = principal_eigenpair(grid)
    return big / (mu * (lam - big))


@dataclass(frozen=True)
class OmegaLimitReport:
    distance_l2: float
    tail_rate: float
    final_time: float
    converged: bool


def omega_limit_check(traj: Trajectory, lam: float, w, grid: Grid, tol: float,
                      settle_tol: float | None = None, config: SolverConfig | None = None) -> OmegaLimitReport:
    """Compare the trajectory tail with the maximal stationary state in discrete L2."""
    settle_tol = tol if settle_tol is None else settle_tol
    if traj.final_rate >= settle_tol:
        raise TailNotSettled(f"tail rate {traj.final_rate:.3e} is not below {settle_tol:.3e}")
    ustat = monotone_stationary(lam, w, grid, config).u
    dist = l2_norm(grid, traj.final.u.values - ustat.values)
    return OmegaLimitReport(dist, traj.final_rate, traj.final_time, dist <= tol)


@dataclass(frozen=True)
class ComparisonReport:
    ordered: bool
    max_violation: float
    violations: int
    steps_compared: int


def comparison_check(u0: Field, v0: Field, lam: float, w, h: float, t_end: float,
                     config: SolverConfig | None = None, tol: float = 1e-10) -> ComparisonReport:
    """Evolve both data and check u(t) <= v(t) + tol at every common step.

    Ordering is only guaranteed when 1/W has enough integrability; constant
    or bounded-below W qualifies.
    """
    if np.any(u0.values > v0.values):
        raise ValueError("initial data are not ordered")
    tu = evolve(u0, lam, w, h, t_end, config, every=1)
    tv = evolve(v0, lam, w, h, t_end, config, every=1)
    worst = -math.inf
    bad = 0
    count = 0
    j = 0
    for i, t in enumerate(tu.times):
        while j < len(tv.times) and tv.times[j] < t - 1e-12:
            j += 1
        if j == len(tv.times) or abs(tv.times[j] - t) > 1e-12:
            continue
        gap = float(np.max(tu.states[i].u.values - tv.states[j].u.values))
        worst = max(worst, gap)
        bad += gap > tol
        count += 1
    return ComparisonReport(bad == 0, worst, bad, count)
