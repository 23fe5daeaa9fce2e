"""Terminal-value integration of coupled matrix ODE systems on uniform grids.

The integrator is classical fixed-step RK4 run backward from t = T. Fixed
steps keep every downstream consumer (coefficient assembly, Monte Carlo
simulation) on one shared deterministic grid; blow-up detection covers the
stiff failure mode instead of adaptive stepping. Blocks tagged symmetric are
replaced by their symmetric part after every step so roundoff asymmetry
cannot accumulate.

Piecewise-constant problem coefficients are evaluated at the RK stage times
with the right-continuous convention (no smoothing across breakpoints);
grids are expected to place nodes on coefficient breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergedError, DomainError, SingularCoefficientError
from .linalg import frozen, sym

BLOWUP_LIMIT = 1e12
DEFAULT_STEPS = 2000
SYMMETRY_PATH_TOL = 1e-8

Blocks = dict[str, np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j*T/steps, j = 0..steps."""

    T: float
    steps: int
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError("T must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "nodes", frozen(np.linspace(0.0, self.T, self.steps + 1)))

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.steps * factor)

    def aligns_with(self, times: np.ndarray, tol: float = 1e-12) -> bool:
        """True when every time in ``times`` falls on a node (within tol)."""
        if len(times) == 0:
            return True
        j = np.rint(np.asarray(times) / self.dt)
        return bool(np.all(np.abs(np.asarray(times) - j * self.dt) <= tol * max(1.0, self.T)))


@dataclass(frozen=True)
class MatrixPath:
    """A matrix-valued function of time stored per grid node.

    ``values`` has shape (steps+1, r, c); vectors are stored with c = 1.
    ``symmetry`` is "symmetric" for paths that are symmetric at every node
    (enforced within SYMMETRY_PATH_TOL at construction), else "none".
    """

    grid: TimeGrid
    values: np.ndarray
    symmetry: str = "none"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:  # vector path given as (N+1, d)
            vals = vals[:, :, np.newaxis]
        if vals.ndim != 3 or vals.shape[0] != self.grid.steps + 1:
            raise ValueError("values must have shape (steps+1, rows, cols)")
        if self.symmetry not in ("none", "symmetric"):
            raise ValueError("symmetry tag must be 'none' or 'symmetric'")
        if self.symmetry == "symmetric":
            if vals.shape[1] != vals.shape[2]:
                raise ValueError("symmetric tag requires square values")
            drift = np.max(np.abs(vals - vals.transpose(0, 2, 1)))
            if drift > SYMMETRY_PATH_TOL:
                raise ValueError(f"symmetric path violates tolerance: {drift:.3e}")
        object.__setattr__(self, "values", frozen(vals))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def at_node(self, j: int) -> np.ndarray:
        return self.values[j]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def vectors(self) -> np.ndarray:
        """(steps+1, r) view for single-column paths."""
        if self.shape[1] != 1:
            raise ValueError("vectors() requires a single-column path")
        return self.values[:, :, 0]

    def value(self, t: float) -> np.ndarray:
        return interpolate(self, t)

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        """Values linearly interpolated onto every node of ``grid``."""
        return np.stack([interpolate(self, t) for t in grid.nodes])

    def with_values(self, values: np.ndarray) -> "MatrixPath":
        return MatrixPath(self.grid, values, self.symmetry)


def interpolate(path: MatrixPath, t: float) -> np.ndarray:
    """Linear interpolation between neighboring nodes; exact at nodes."""
    grid = path.grid
    if not (0.0 <= t <= grid.T):
        raise DomainError(f"t={t} outside [0, {grid.T}]")
    pos = t / grid.dt
    jr = int(round(pos))
    if 0 <= jr <= grid.steps and t == grid.nodes[jr]:
        return path.values[jr]
    j = int(np.floor(pos))
    if j >= grid.steps:
        return path.values[grid.steps]
    w = pos - j
    return (1.0 - w) * path.values[j] + w * path.values[j + 1]


@dataclass(frozen=True)
class OdeSystem:
    """A named-block ODE with terminal data.

    ``layout`` orders the blocks; ``rhs(t, blocks) -> block time-derivatives``
    must be pure and return one array per block with unchanged shape.
    Blocks in ``symmetric`` are projected to their symmetric part after each
    step and have their paths tagged symmetric.
    """

    layout: tuple[tuple[str, tuple[int, ...]], ...]
    rhs: Callable[[float, Blocks], Blocks]
    terminal: Blocks
    symmetric: frozenset = frozenset()

    def __post_init__(self):
        for name, shape in self.layout:
            arr = np.asarray(self.terminal[name], dtype=float)
            if arr.shape != tuple(shape):
                raise ValueError(f"terminal block {name} has shape {arr.shape}, expected {shape}")


def _check_finite(blocks: Blocks, t_good: float):
    for name, arr in blocks.items():
        if not np.all(np.isfinite(arr)):
            raise DivergedError(t_good, f"block {name} non-finite")
        if np.max(np.abs(arr)) > BLOWUP_LIMIT:
            raise DivergedError(t_good, f"block {name} exceeded {BLOWUP_LIMIT:.0e}")


def _eval_rhs(system: OdeSystem, t: float, blocks: Blocks) -> Blocks:
    try:
        return system.rhs(t, blocks)
    except SingularCoefficientError as err:
        raise (err if err.time is not None else err.at_time(t)) from None
    except np.linalg.LinAlgError as err:
        raise SingularCoefficientError(str(err) or "linear solve", time=t) from None


def integrate_terminal(system: OdeSystem, grid: TimeGrid) -> dict[str, MatrixPath]:
    """Integrate backward from t = T to t = 0 with classical RK4.

    Returns one MatrixPath per block whose node-j value approximates the
    solution at t_j. Aborts with DivergedError (carrying the last good time)
    when any entry exceeds BLOWUP_LIMIT or turns non-finite, and with
    SingularCoefficientError when the right-hand side fails to evaluate.
    Deterministic: identical inputs give bit-identical paths.
    """
    names = [name for name, _ in system.layout]
    state: Blocks = {n: np.array(system.terminal[n], dtype=float) for n in names}
    _check_finite(state, grid.T)
    history = {n: [state[n].copy()] for n in names}
    h = -grid.dt
    for j in range(grid.steps, 0, -1):
        t = grid.nodes[j]
        t_half = t + 0.5 * h
        t_next = grid.nodes[j - 1]
        k1 = _eval_rhs(system, t, state)
        k2 = _eval_rhs(system, t_half, {n: state[n] + 0.5 * h * k1[n] for n in names})
        k3 = _eval_rhs(system, t_half, {n: state[n] + 0.5 * h * k2[n] for n in names})
        k4 = _eval_rhs(system, t_next, {n: state[n] + h * k3[n] for n in names})
        for n in names:
            nxt = state[n] + (h / 6.0) * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])
            if n in system.symmetric:
                nxt = sym(nxt)
            state[n] = nxt
        _check_finite(state, t)
        for n in names:
            history[n].append(state[n].copy())
    paths: dict[str, MatrixPath] = {}
    for n, shape in system.layout:
        stacked = np.stack(history[n][::-1])  # history was recorded from T down to 0
        if len(shape) == 1:
            stacked = stacked[:, :, np.newaxis]
        tag = "symmetric" if n in system.symmetric else "none"
        paths[n] = MatrixPath(grid, stacked, tag)
    return paths


def constant_path(grid: TimeGrid, matrix: np.ndarray, symmetry: str = "none") -> MatrixPath:
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    vals = np.broadcast_to(mat, (grid.steps + 1, *mat.shape))
    return MatrixPath(grid, np.array(vals), symmetry)


def path_to_csv(path: MatrixPath, file) -> None:
    """Write ``t`` plus row-major entries per node as CSV."""
    r, c = path.shape
    header = ["t"] + [f"e_{i}_{j}" for i in range(r) for j in range(c)]
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", encoding="utf-8") if own else file
    try:
        fh.write(",".join(header) + "\n")
        for t, v in zip(path.grid.nodes, path.values):
            row = [repr(float(t))] + [repr(float(x)) for x in v.reshape(-1)]
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()
