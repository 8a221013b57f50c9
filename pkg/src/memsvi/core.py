"""Grids, nodal fields, the discrete energy and zipped/unzipped classification.

All solvers in the package work on a uniform tensor mesh over an interval
(1D) or a rectangle (2D).  Boundary nodes carry homogeneous Dirichlet data;
unknown vectors handed to the linear-algebra kernels contain interior nodes
only, in C order.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MemsviError",
    "InvariantViolation",
    "ConvergenceError",
    "Grid",
    "Field",
    "DielectricSpec",
    "SolutionWitness",
    "StateClassification",
    "LedgerEntry",
    "EnergyLedger",
    "SolverConfig",
    "g_w",
    "discrete_energy",
    "l2_norm",
    "classify_state",
    "make_witness",
    "field_to_record",
    "field_from_record",
    "write_csv",
    "read_field_csv",
    "output_precision",
    "write_json",
    "dumps",
    "as_field",
    "dirichlet_energy",
]


class MemsviError(Exception):
    """Base class for errors raised by this package."""


class InvariantViolation(MemsviError):
    """A proven property of the discrete scheme failed (solver or kernel bug)."""


class ConvergenceError(MemsviError):
    """An iteration exhausted its budget."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh with ``n`` nodes per axis (boundary included)."""

    n: int
    dim: int = 1
    extents: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if self.n < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.n}")
        ext = self.extents
        if ext is None:
            ext = ((-1.0, 1.0),) * self.dim
        ext = tuple((float(a), float(b)) for a, b in ext)
        if len(ext) != self.dim or any(b <= a for a, b in ext):
            raise ValueError(f"invalid extents {ext!r} for dimension {self.dim}")
        object.__setattr__(self, "extents", ext)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (self.n - 1) for a, b in self.extents)

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))

    @property
    def n_interior(self) -> int:
        return (self.n - 2) ** self.dim

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(a, b, self.n) for a, b in self.extents)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        if self.dim == 1:
            return self.axes
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dim] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights per node."""
        w1 = []
        for hx in self.spacing:
            w = np.full(self.n, hx)
            w[0] = w[-1] = hx / 2
            w1.append(w)
        w = w1[0] if self.dim == 1 else np.multiply.outer(w1[0], w1[1])
        w.setflags(write=False)
        return w

    @cached_property
    def interior_weights(self) -> np.ndarray:
        return self.weights[self.interior_mask]

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Interior node values as a flat vector."""
        return np.asarray(values, dtype=float).reshape(self.shape)[self.interior_mask]

    def extend(self, interior: np.ndarray, boundary: float = 0.0) -> np.ndarray:
        """Nodal array from interior values, boundary set to ``boundary``."""
        out = np.full(self.shape, boundary, dtype=float)
        out[self.interior_mask] = interior
        return out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def is_symmetric(self) -> bool:
        return all(np.isclose(a, -b) for a, b in self.extents)

    def to_record(self) -> dict:
        return {"n": self.n, "dim": self.dim, "extents": [list(e) for e in self.extents]}

    @classmethod
    def from_record(cls, rec: dict) -> "Grid":
        return cls(int(rec["n"]), int(rec["dim"]), tuple(tuple(e) for e in rec["extents"]))


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of a scalar function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, fn(*grid.coordinates))

    @classmethod
    def from_interior(cls, grid: Grid, interior: np.ndarray) -> "Field":
        return cls(grid, grid.extend(interior))

    @property
    def interior(self) -> np.ndarray:
        return self.grid.restrict(self.values)

    def boundary_is_zero(self) -> bool:
        return bool(np.all(self.values[~self.grid.interior_mask] == 0.0))

    def check_same_grid(self, other: "Field") -> None:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")


@dataclass(frozen=True, eq=False)
class DielectricSpec:
    """Dielectric profile W, either a positive constant or sampled nodal values."""

    constant: float | None = None
    sampled: Field | None = None

    def __post_init__(self):
        if (self.constant is None) == (self.sampled is None):
            raise ValueError("give exactly one of constant or sampled")
        if self.constant is not None:
            if not (np.isfinite(self.constant) and self.constant > 0):
                raise ValueError(f"W must be positive, got {self.constant}")
        else:
            v = self.sampled.values
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError("sampled W must be finite and strictly positive at every node")

    @classmethod
    def of(cls, w: "float | Field | DielectricSpec") -> "DielectricSpec":
        if isinstance(w, DielectricSpec):
            return w
        if isinstance(w, Field):
            return cls(sampled=w)
        return cls(constant=float(w))

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def values(self, grid: Grid) -> np.ndarray:
        if self.constant is not None:
            return np.full(grid.shape, self.constant)
        if self.sampled.grid != grid:
            raise ValueError("sampled W lives on a different grid")
        return self.sampled.values

    def interior(self, grid: Grid) -> np.ndarray:
        if self.constant is not None:
            return np.full(grid.n_interior, self.constant)
        return grid.restrict(self.values(grid))

    def g0(self, grid: Grid) -> np.ndarray:
        """g_W(0) = 1/(2(1+W)^2) per node."""
        return g_w(np.zeros(grid.shape), self.values(grid))

    def describe(self) -> float | str:
        return self.constant if self.constant is not None else "sampled"


def g_w(u, w):
    """Right-hand side nonlinearity 1/(2(1+u+W)^2)."""
    return 0.5 / (1.0 + u + w) ** 2


@dataclass(frozen=True)
class SolverConfig:
    comp_tol: float = 1e-10
    outer_tol: float = 1e-10
    lcp_tol: float = 1e-12
    bisect_tol: float = 1e-3
    root_tol: float = 1e-12
    energy_tol: float = 1e-10
    max_outer: int = 10_000
    max_lcp_iter: int = 10_000
    max_inner: int = 200
    measure_threshold: float | None = None
    contact_tol: float = 10 * np.finfo(float).eps + 1e-10
    psor_omega: float = 1.5
    penalty_k: float = 1e4
    time_step: float = 1e-3
    max_halvings: int = 20
    snapshot_every: int = 10
    equality_rtol: float = 1e-9
    inner: str = "newton"

    def __post_init__(self):
        for name in ("comp_tol", "outer_tol", "lcp_tol", "bisect_tol", "root_tol",
                     "energy_tol", "contact_tol", "time_step", "equality_rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.psor_omega < 2:
            raise ValueError("PSOR relaxation must lie in (0, 2)")
        if self.inner not in ("newton", "picard"):
            raise ValueError(f"unknown inner strategy {self.inner!r}")

    def threshold(self, grid: Grid) -> float:
        if self.measure_threshold is not None:
            return self.measure_threshold
        return 1.5 * grid.cell_volume


@dataclass(frozen=True, eq=False)
class SolutionWitness:
    """A pair (u, zeta) with zeta in the subdifferential of the indicator of [-1, oo)."""

    u: Field
    zeta: Field
    active: np.ndarray
    comp_residual: float
    zeta_positive: float
    obstacle_violation: float

    def satisfies(self, tol: float) -> bool:
        return max(self.comp_residual, self.zeta_positive, self.obstacle_violation) <= tol


def make_witness(grid: Grid, u: np.ndarray, zeta: np.ndarray, active: np.ndarray | None = None,
                 lo: float = -1.0) -> SolutionWitness:
    """Build a witness from interior vectors and report its complementarity residuals."""
    if active is None:
        active = u <= lo
    return SolutionWitness(
        u=Field.from_interior(grid, u),
        zeta=Field.from_interior(grid, zeta),
        active=grid.extend(active, boundary=0.0).astype(bool),
        comp_residual=float(np.max(np.abs(zeta * (u - lo)), initial=0.0)),
        zeta_positive=float(np.max(zeta, initial=0.0)),
        obstacle_violation=float(np.max(lo - u, initial=0.0)),
    )


@dataclass(frozen=True, eq=False)
class StateClassification:
    zipped: bool
    coincidence_nodes: np.ndarray
    coincidence_measure: float
    contact_interval: tuple[float, float] | None = None

    @property
    def n_contact(self) -> int:
        return int(self.coincidence_nodes.shape[0])


def classify_state(u: Field, config: SolverConfig | None = None) -> StateClassification:
    """Coincidence set {u <= -1 + contact_tol} and the zipped verdict."""
    config = config or SolverConfig()
    grid = u.grid
    hit = (u.values <= -1.0 + config.contact_tol) & grid.interior_mask
    nodes = np.argwhere(hit)
    if grid.dim == 1:
        nodes = nodes[:, 0]
    measure = float(np.count_nonzero(hit)) * grid.cell_volume
    interval = None
    if grid.dim == 1 and nodes.size:
        x = grid.axes[0]
        interval = (float(x[nodes.min()]), float(x[nodes.max()]))
    return StateClassification(
        zipped=measure > config.threshold(grid),
        coincidence_nodes=nodes,
        coincidence_measure=measure,
        contact_interval=interval,
    )


def dirichlet_energy(u: Field) -> float:
    """Half the squared L2 norm of the forward-difference gradient."""
    grid = u.grid
    total = 0.0
    for axis, hx in enumerate(grid.spacing):
        d = np.diff(u.values, axis=axis) / hx
        total += np.sum(d * d)
    return 0.5 * total * grid.cell_volume


def discrete_energy(u: Field, lam: float, w: DielectricSpec | float, penalty: float = 0.0) -> float:
    """Total energy; ``inf`` when u dips below the ground plate.

    With ``penalty > 0`` the indicator term is replaced by
    (K/2) * integral of min(1+u, 0)^2, the functional behind the penalty scheme.
    """
    w = DielectricSpec.of(w)
    grid = u.grid
    wv = w.values(grid)
    if penalty <= 0 and np.any(u.values < -1.0):
        return np.inf
    energy = dirichlet_energy(u) - 0.5 * lam * grid.integrate(1.0 / (1.0 + u.values + wv))
    if penalty > 0:
        dip = np.minimum(1.0 + u.values, 0.0)
        energy += 0.5 * penalty * grid.integrate(dip * dip)
    return float(energy)


def l2_norm(grid: Grid, values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float).reshape(grid.shape)
    return float(np.sqrt(grid.integrate(v * v)))


@dataclass(frozen=True)
class LedgerEntry:
    t: float
    energy: float
    kinetic: float
    slack: float


@dataclass(frozen=True)
class EnergyLedger:
    """Per-step energy bookkeeping of an implicit Euler trajectory."""

    initial_energy: float
    entries: tuple[LedgerEntry, ...] = field(default_factory=tuple)

    @property
    def min_slack(self) -> float:
        return min((e.slack for e in self.entries), default=np.inf)

    def cumulative_margins(self) -> np.ndarray:
        """E(u0) - (sum of kinetic terms up to n) - E(u_n), per step."""
        kin = np.cumsum([e.kinetic for e in self.entries])
        en = np.array([e.energy for e in self.entries])
        return self.initial_energy - kin - en

    def cumulative_ok(self, tol: float) -> bool:
        margins = self.cumulative_margins()
        allowance = tol * np.arange(1, len(margins) + 1)
        return bool(np.all(margins >= -allowance))


def output_precision() -> int:
    """Significant digits for emitted numbers (env ``MEMSVI_PRECISION``)."""
    return int(os.environ.get("MEMSVI_PRECISION", "15"))


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}g}"


def field_to_record(f: Field) -> dict:
    return {"grid": f.grid.to_record(), "values": f.values.ravel().tolist()}


def field_from_record(rec: dict) -> Field:
    grid = Grid.from_record(rec["grid"])
    return Field(grid, np.asarray(rec["values"], dtype=float))


def write_csv(path: str | Path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    """Write nodal columns with coordinate columns ``x[,y]`` first."""
    digits = output_precision()
    coords = ["x", "y"][: grid.dim]
    data = [c.ravel() for c in grid.coordinates]
    data += [np.asarray(v, dtype=float).reshape(grid.shape).ravel() for v in columns.values()]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(coords + list(columns))
        for row in zip(*data):
            writer.writerow([_fmt(v, digits) for v in row])


def _uniform_axis(values: Sequence[float]) -> tuple[int, tuple[float, float]]:
    ax = np.unique(np.asarray(values, dtype=float))
    if ax.size < 3 or not np.allclose(np.diff(ax), ax[1] - ax[0], rtol=1e-9, atol=1e-12):
        raise ValueError("CSV coordinates do not form a uniform grid")
    return ax.size, (float(ax[0]), float(ax[-1]))


def read_field_csv(path: str | Path, column: str | None = None) -> Field:
    """Read a field written by :func:`write_csv` (or any ``x[,y],value`` file).

    ``column`` picks the value column; default is the first non-coordinate one.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    dim = 2 if len(header) > 1 and header[1] == "y" else 1
    col = header.index(column) if column is not None else dim
    arr = np.array([[float(v) for v in r] for r in body])
    extents = []
    for k in range(dim):
        n, ext = _uniform_axis(arr[:, k])
        extents.append(ext)
    if dim == 2 and n ** 2 != arr.shape[0]:
        raise ValueError("2D CSV is not a full tensor grid")
    grid = Grid(n, dim, tuple(extents))
    order = np.lexsort(tuple(arr[:, k] for k in reversed(range(dim))))
    return Field(grid, arr[order, col])


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(dumps(payload), encoding="utf-8")


def dumps(payload) -> str:
    """Deterministic JSON with floats rounded to the output precision."""
    digits = output_precision()

    def clean(obj):
        if isinstance(obj, dict):
            return {str(k): clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.bool_, bool)):
            return bool(obj)
        if isinstance(obj, (np.integer, int)):
            return int(obj)
        if isinstance(obj, (np.floating, float)):
            x = float(obj)
            if not np.isfinite(x):
                return None
            return float(_fmt(x, digits))
        return obj

    return json.dumps(clean(payload), sort_keys=True, indent=2) + "\n"


def as_field(grid: Grid, values: float | np.ndarray | Field | Iterable) -> Field:
    if isinstance(values, Field):
        if values.grid != grid:
            raise ValueError("field lives on a different grid")
        return values
    return Field(grid, np.broadcast_to(np.asarray(values, dtype=float), grid.shape))
