"""Fixed-step time-grid numerics shared by every solver in the package.

One uniform grid per computation session.  Classical RK4 integrates
forward/backward systems of matrix- or vector-valued ODEs; solutions carry
their node derivatives so that downstream right-hand sides can sample them
at RK4 stage times through cubic Hermite interpolation without dropping
below fourth order.  Quadrature is trapezoidal (the public rule) with a
composite-Simpson helper used internally where the integrand is as smooth
as the ODE solutions themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_STEPS = 2000

__all__ = [
    "DEFAULT_STEPS",
    "TimeGrid",
    "Trajectory",
    "HalfSampler",
    "GridMismatchError",
    "NumericalBlowupError",
    "integrate_forward",
    "integrate_backward",
    "quadrature",
    "simpson",
]


class GridMismatchError(ValueError):
    """Two objects built on different time grids were combined."""


class NumericalBlowupError(ArithmeticError):
    """An ODE right-hand side or state became non-finite during integration."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, horizon] into `steps` intervals."""

    horizon: float
    steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be a positive real, got {self.horizon}")
        if self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "nodes", np.linspace(0.0, self.horizon, self.steps + 1))

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    def interval_index(self, t: float) -> int:
        """Index i with t in [t_i, t_{i+1}); clipped so t = horizon maps to the last interval."""
        i = int(np.floor(t / self.h + 1e-9))
        return min(max(i, 0), self.steps - 1)

    def require_same(self, other: "TimeGrid", what: str = "trajectory") -> None:
        if not (self.steps == other.steps and self.horizon == other.horizon):
            raise GridMismatchError(
                f"{what} uses grid (T={other.horizon}, N={other.steps}) but the session grid "
                f"is (T={self.horizon}, N={self.steps}); grids must not be mixed"
            )


class Trajectory:
    """Time-sampled function on a grid: one array value per node.

    When node derivatives are attached (every solver output has them), values
    between nodes come from cubic Hermite interpolation, which preserves the
    integrator's fourth order.  Without derivatives, interpolation is linear.
    """

    __slots__ = ("grid", "values", "derivs")

    def __init__(self, grid: TimeGrid, values: np.ndarray, derivs: np.ndarray | None = None):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.steps + 1:
            raise ValueError(
                f"trajectory needs {grid.steps + 1} node values, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory contains non-finite values")
        self.grid = grid
        self.values = values
        self.derivs = None if derivs is None else np.asarray(derivs, dtype=float)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def at(self, t: float) -> np.ndarray:
        """Value at time t: exact at nodes, Hermite (or linear) in between."""
        h = self.grid.h
        pos = t / h
        i = int(round(pos))
        if abs(pos - i) < 1e-9 and 0 <= i <= self.grid.steps:
            return self.values[i]
        i = self.grid.interval_index(t)
        s = (t - self.grid.nodes[i]) / h
        y0, y1 = self.values[i], self.values[i + 1]
        if self.derivs is None:
            return (1.0 - s) * y0 + s * y1
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        s2, s3 = s * s, s * s * s
        return (
            (2 * s3 - 3 * s2 + 1) * y0
            + (s3 - 2 * s2 + s) * h * f0
            + (-2 * s3 + 3 * s2) * y1
            + (s3 - s2) * h * f1
        )

    def __len__(self) -> int:
        return self.values.shape[0]


class HalfSampler:
    """Exact samples of a time function at the nodes and midpoints of a grid.

    RK4 only ever evaluates right-hand sides at these 2N+1 points, so hot
    solver loops can replace repeated dense interpolation with one upfront
    sampling pass and O(1) index lookups.
    """

    __slots__ = ("values", "_scale", "_n")

    def __init__(self, grid: TimeGrid, fn: Callable[[float], np.ndarray]):
        half = np.linspace(0.0, grid.horizon, 2 * grid.steps + 1)
        self.values = np.stack([np.asarray(fn(t), dtype=float) for t in half])
        self._scale = 2.0 * grid.steps / grid.horizon
        self._n = 2 * grid.steps

    def at(self, t: float) -> np.ndarray:
        i = int(round(t * self._scale))
        if i < 0 or i > self._n or abs(t * self._scale - i) > 0.25:
            raise ValueError(f"t={t:g} is not a node or midpoint of the sampling grid")
        return self.values[i]

    @property
    def node_values(self) -> np.ndarray:
        return self.values[::2]


def _check_rhs_output(k: np.ndarray, shape: tuple, t: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != shape:
        raise ValueError(
            f"rhs returned shape {k.shape} but the state has shape {shape} (at t={t:g})"
        )
    return k


def _check_finite(y: np.ndarray, node: int, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise NumericalBlowupError(
            f"integration blew up at node {node} (t={t:g}): non-finite state"
        )


def integrate_forward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    initial: np.ndarray,
    grid: TimeGrid,
) -> Trajectory:
    """Classical RK4 from t=0 with the given initial value."""
    y = np.array(initial, dtype=float)
    shape = y.shape
    n, h = grid.steps, grid.h
    nodes = grid.nodes
    values = np.empty((n + 1,) + shape)
    derivs = np.empty_like(values)
    values[0] = y
    derivs[0] = _check_rhs_output(rhs(nodes[0], y), shape, nodes[0])
    _check_finite(derivs[0], 0, nodes[0])
    h2, h6 = 0.5 * h, h / 6.0
    for i in range(n):
        t = nodes[i]
        k1 = derivs[i]
        k2 = rhs(t + h2, y + h2 * k1)
        k3 = rhs(t + h2, y + h2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(y, i + 1, nodes[i + 1])
        values[i + 1] = y
        fi = np.asarray(rhs(nodes[i + 1], y), dtype=float)
        _check_finite(fi, i + 1, nodes[i + 1])
        derivs[i + 1] = fi
    return Trajectory(grid, values, derivs)


def integrate_backward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    terminal: np.ndarray,
    grid: TimeGrid,
) -> Trajectory:
    """Classical RK4 from t=T down to 0 with the given terminal value.

    `rhs` is the forward-time derivative dy/dt; time simply runs in reverse.
    """
    y = np.array(terminal, dtype=float)
    shape = y.shape
    n, h = grid.steps, grid.h
    nodes = grid.nodes
    values = np.empty((n + 1,) + shape)
    derivs = np.empty_like(values)
    values[n] = y
    derivs[n] = _check_rhs_output(rhs(nodes[n], y), shape, nodes[n])
    _check_finite(derivs[n], n, nodes[n])
    h2, h6 = 0.5 * h, h / 6.0
    for i in range(n - 1, -1, -1):
        t = nodes[i + 1]
        k1 = derivs[i + 1]
        k2 = rhs(t - h2, y - h2 * k1)
        k3 = rhs(t - h2, y - h2 * k2)
        k4 = rhs(t - h, y - h * k3)
        y = y - h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(y, i, nodes[i])
        values[i] = y
        fi = np.asarray(rhs(nodes[i], y), dtype=float)
        _check_finite(fi, i, nodes[i])
        derivs[i] = fi
    return Trajectory(grid, values, derivs)


def quadrature(f: Trajectory) -> float:
    """Trapezoidal rule over the grid for a scalar trajectory."""
    v = f.values
    if v.ndim != 1:
        raise ValueError(f"quadrature expects a scalar trajectory, got value shape {v.shape[1:]}")
    return float(f.grid.h * (v.sum() - 0.5 * (v[0] + v[-1])))


def simpson(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray | float:
    """Composite Simpson rule on node samples of a uniform grid.

    Falls back to a trapezoid on the final interval when the number of
    intervals is odd.  Used for payoff and verdict integrals so that the
    quadrature error stays at the integrator's order.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[axis] - 1
    if n < 1:
        raise ValueError("need at least two nodes")
    v = np.moveaxis(values, axis, 0)
    m = n if n % 2 == 0 else n - 1
    total = np.zeros(v.shape[1:])
    if m >= 2:
        w = np.ones(m + 1)
        w[1:m:2] = 4.0
        w[2:m:2] = 2.0
        total = total + (h / 3.0) * np.tensordot(w, v[: m + 1], axes=(0, 0))
    if m != n:
        total = total + 0.5 * h * (v[-2] + v[-1])
    return float(total) if total.ndim == 0 else total
