"""Closed-form stationary states for d = 1, constant W, D = (-1, 1).

Unzipped states are even with minimum -m at x = 0, where the depth m solves
lambda = (1+W)^3 phi(m/(1+W))^2.  A zipped state lies on the plate over
[-a, a] with a = 1 - sqrt(Lambda_*(W)/lambda).  Profiles are reconstructed by
inverting the first integral of u'' = lambda g_W(u); after the substitution
y = sqrt(u + m) (resp. y = sqrt(1 + u)) the integrand becomes sqrt(y^2 + B),
whose antiderivative is elementary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Field, Grid

__all__ = [
    "DomainError",
    "NoZippedState",
    "Case44",
    "BranchPoint",
    "phi",
    "psi",
    "dphi",
    "find_r0",
    "R0",
    "lambda_star",
    "fold_lambda",
    "classify",
    "contact_halfwidth",
    "unzipped_depths",
    "depth_residual",
    "profile_unzipped",
    "profile_zipped",
    "maximal_profile",
    "bifurcation_sweep",
]


class DomainError(ValueError):
    pass


class NoZippedState(DomainError):
    pass


def phi(r):
    """phi(r) on [0, 1], extended by continuity with phi(0) = phi(1) = 0."""
    r_arr = np.asarray(r, dtype=float)
    if np.any((r_arr < 0) | (r_arr > 1)) or np.any(np.isnan(r_arr)):
        raise DomainError("phi is defined on [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1.0 - r_arr
        val = (np.sqrt(r_arr * s) + s ** 1.5 * np.log1p(np.sqrt(r_arr))
               - 0.5 * s ** 1.5 * np.log(s))
    val = np.where((r_arr == 0) | (r_arr == 1), 0.0, val)
    return float(val) if np.ndim(r) == 0 else val


def psi(r: float) -> float:
    """The factor in phi'(r) = sqrt(1-r) psi(r); strictly decreasing on (0, 1)."""
    if not 0 < r < 1:
        raise DomainError("psi is defined on (0, 1)")
    sr = math.sqrt(r)
    return ((1 - 2 * r) / (2 * sr * (1 - r)) - 1.5 * math.log1p(sr)
            + (1 - r) / (2 * (sr + r)) + 0.75 * math.log1p(-r) + 0.5)


def dphi(r: float) -> float:
    return math.sqrt(1 - r) * psi(r)


def find_r0(tol: float = 1e-12) -> float:
    """Unique critical point of phi, by bisection on the sign of psi."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = 1e-12, 1 - 1e-12
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if psi(mid) > 0:
            lo = mid
        else:
            hi = mid
    r0 = 0.5 * (lo + hi)
    assert abs(dphi(r0)) < 10 * tol + 1e-15
    return r0


R0 = find_r0()


def lambda_star(w: float) -> float:
    """Lambda_*(W) = (1+W)^3 phi(1/(1+W))^2: zipped states exist iff lambda exceeds it."""
    if not w > 0:
        raise DomainError("W must be positive")
    return (1 + w) ** 3 * phi(1 / (1 + w)) ** 2


def regime(w: float) -> str:
    return "I" if 1 / (1 + w) <= R0 else "II"


def fold_lambda(w: float) -> float:
    """Largest lambda with an unzipped state when 1/(1+W) > r0."""
    if regime(w) != "II":
        raise DomainError(f"W={w} is in regime I (1/(1+W) <= r0); no interior fold")
    return (1 + w) ** 3 * phi(R0) ** 2


@dataclass(frozen=True)
class Case44:
    regime: str
    subcase: str
    n_unzipped: int
    n_zipped: int
    touches_at_point: bool

    @property
    def label(self) -> str:
        return f"{self.regime}({self.subcase})"

    def to_record(self) -> dict:
        return {"case": self.label, "regime": self.regime, "subcase": self.subcase,
                "n_unzipped": self.n_unzipped, "n_zipped": self.n_zipped,
                "touches_at_point": self.touches_at_point}


def _cmp(a: float, b: float, rtol: float) -> int:
    if abs(a - b) <= rtol * max(abs(a), abs(b)):
        return 0
    return 1 if a > b else -1


def classify(lam: float, w: float, rtol: float = 1e-9) -> Case44:
    """Case-by-case structure of all stationary states.

    In regime II below Lambda_* only the rising branch of phi reaches
    sqrt(lambda/(1+W)^3), so there is a single unzipped state there.
    """
    if not (lam > 0 and w > 0):
        raise DomainError("lambda and W must be positive")
    ls = lambda_star(w)
    c_star = _cmp(lam, ls, rtol)
    if regime(w) == "I":
        if c_star > 0:
            return Case44("I", "i", 0, 1, False)
        if c_star == 0:
            return Case44("I", "ii", 1, 0, True)
        return Case44("I", "iii", 1, 0, False)
    c_fold = _cmp(lam, fold_lambda(w), rtol)
    if c_fold > 0:
        return Case44("II", "i", 0, 1, False)
    if c_fold == 0:
        return Case44("II", "ii", 1, 1, False)
    if c_star > 0:
        return Case44("II", "iii", 2, 1, False)
    if c_star == 0:
        return Case44("II", "iv", 2, 0, True)
    return Case44("II", "v", 1, 0, False)


def contact_halfwidth(lam: float, w: float) -> float:
    ls = lambda_star(w)
    if lam <= ls:
        raise NoZippedState(f"lambda={lam} <= Lambda_*({w})={ls}: no zipped state")
    return 1 - math.sqrt(ls / lam)


@dataclass(frozen=True)
class BranchPoint:
    lam: float
    m: float
    branch: str

    def to_record(self) -> dict:
        return {"lambda": self.lam, "m": self.m, "branch": self.branch}


def depth_residual(m: float, lam: float, w: float) -> float:
    return (1 + w) ** 3 * phi(m / (1 + w)) ** 2 - lam


def _bisect(f, lo: float, hi: float, ftol: float, xtol: float = 1e-15) -> float:
    flo = f(lo)
    if flo == 0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= ftol or hi - lo <= xtol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def unzipped_depths(lam: float, w: float, tol: float = 1e-12,
                    rtol: float = 1e-9) -> list[BranchPoint]:
    """All depths m in (0, 1] of unzipped states, shallowest first."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    scale = (1 + w) ** 3
    rmax = 1 / (1 + w)
    target = lam / scale

    def f(r):
        return phi(r) ** 2 - target

    ftol = tol * max(1.0, target)
    rises_to = min(R0, rmax)
    roots: list[float] = []
    top = phi(rises_to) ** 2
    if _cmp(top, target, rtol) == 0:
        roots.append(rises_to)
    elif top > target:
        roots.append(_bisect(f, 0.0, rises_to, ftol))
    if rmax > R0:
        peak = phi(R0) ** 2
        end = phi(rmax) ** 2
        if _cmp(peak, target, rtol) > 0:
            c_end = _cmp(end, target, rtol)
            if c_end == 0:
                roots.append(rmax)
            elif end < target:
                roots.append(_bisect(f, R0, rmax, ftol))
    m = sorted(r * (1 + w) for r in roots)
    tags = ["upper", "lower"]
    return [BranchPoint(lam, min(mi, 1.0), tags[k]) for k, mi in enumerate(m)]


def _x_unzipped(y, m: float, lam: float, w: float):
    b = 1 - m + w
    return math.sqrt(b / lam) * (y * np.sqrt(y * y + b) + b * np.arcsinh(y / math.sqrt(b)))


def _x_zipped(y, lam: float, w: float):
    return math.sqrt(w / lam) * (y * np.sqrt(y * y + w) + w * np.arcsinh(y / math.sqrt(w)))


def _invert(xfun, target: np.ndarray, ymax: float) -> np.ndarray:
    """Vectorised bisection for y in [0, ymax] with xfun(y) = target (xfun increasing)."""
    lo = np.zeros_like(target)
    hi = np.full_like(target, ymax)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = xfun(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _check_grid(grid: Grid) -> np.ndarray:
    if grid.dim != 1 or not np.allclose(grid.extents[0], (-1.0, 1.0)):
        raise DomainError("analytic profiles live on D = (-1, 1)")
    return grid.axes[0]


def _even(grid: Grid, fn) -> np.ndarray:
    x = _check_grid(grid)
    half = fn(np.abs(x))
    # exact symmetry regardless of rounding in the node coordinates
    half = 0.5 * (half + half[::-1])
    half[0] = half[-1] = 0.0
    return half


def profile_unzipped(m: float, lam: float, w: float, grid: Grid, rtol: float = 1e-8) -> Field:
    """Even unzipped state with u(0) = -m, sampled on the grid."""
    if not 0 < m <= 1:
        raise DomainError("depth m must lie in (0, 1]")
    if abs(depth_residual(m, lam, w)) > rtol * lam:
        raise DomainError(f"(m={m}, lambda={lam}) does not satisfy the depth equation")
    ymax = math.sqrt(m)
    span = _x_unzipped(ymax, m, lam, w)

    def fn(ax):
        # the depth relation makes span = 1 up to root tolerance
        target = np.minimum(ax * span, span)
        y = _invert(lambda s: _x_unzipped(s, m, lam, w), target, ymax)
        return y * y - m

    return Field(grid, _even(grid, fn))


def profile_zipped(lam: float, w: float, grid: Grid) -> Field:
    """The unique zipped state: u = -1 on [-a, a], even, u(+-1) = 0."""
    a = contact_halfwidth(lam, w)

    def fn(ax):
        target = np.maximum(ax - a, 0.0)
        y = _invert(lambda s: _x_zipped(s, lam, w), target, 1.0)
        return np.where(ax <= a, -1.0, y * y - 1.0)

    return Field(grid, _even(grid, fn))


def maximal_profile(lam: float, w: float, grid: Grid) -> Field:
    """Largest stationary state: the shallowest unzipped one if any, else the zipped one."""
    roots = unzipped_depths(lam, w)
    if roots:
        return profile_unzipped(roots[0].m, lam, w, grid)
    return profile_zipped(lam, w, grid)


def bifurcation_sweep(w: float, lambdas) -> list[dict]:
    rows = []
    for lam in lambdas:
        roots = unzipped_depths(lam, w)
        ms = [r.m for r in roots] + [math.nan] * (2 - len(roots))
        a = contact_halfwidth(lam, w) if lam > lambda_star(w) else math.nan
        rows.append({"lambda": float(lam), "m1": ms[0], "m2": ms[1], "a": a,
                     "case": classify(lam, w).label})
    return rows
