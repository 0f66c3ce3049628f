"""Generic linear-quadratic mean field game model.

The model is a set of (possibly time-dependent) coefficients for a linear
state equation and a quadratic payoff split into population-only benefit
terms and individual cost terms, plus the law of the initial state.  The
module validates the standing positivity/coupling assumptions and exposes
the running and terminal payoff integrands exactly as the solvers use them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grids import TimeGrid, Trajectory

__all__ = [
    "Coefficient",
    "InitialLaw",
    "LQModelSpec",
    "AssumptionCheck",
    "ValidationReport",
    "validate",
    "running_payoff",
    "running_cost",
    "terminal_payoff",
    "sample_nodes",
]

_SYM_TOL = 1e-12


class Coefficient:
    """Time-dependent model coefficient: a constant array, a callable of t,
    or a trajectory tabulated on the session grid (interpolated linearly)."""

    __slots__ = ("shape", "_const", "_fn", "_traj")

    def __init__(self, value, shape: tuple, name: str = "coefficient"):
        self.shape = shape
        self._const = None
        self._fn = None
        self._traj = None
        if isinstance(value, Trajectory):
            if value.values.shape[1:] != shape:
                raise ValueError(
                    f"{name}: tabulated values have shape {value.values.shape[1:]}, expected {shape}"
                )
            self._traj = value
        elif callable(value):
            self._fn = value
            probe = np.asarray(value(0.0), dtype=float)
            if probe.shape != shape:
                raise ValueError(f"{name}: callable returns shape {probe.shape}, expected {shape}")
        else:
            arr = np.asarray(value, dtype=float)
            if arr.shape == () and shape != ():
                arr = np.full(shape, float(arr))
            if arr.shape != shape:
                raise ValueError(f"{name}: constant has shape {arr.shape}, expected {shape}")
            self._const = arr

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    def at(self, t: float) -> np.ndarray:
        if self._const is not None:
            return self._const
        if self._traj is not None:
            return self._traj.at(t)
        return np.asarray(self._fn(t), dtype=float)


@dataclass(frozen=True)
class InitialLaw:
    """First and second moments of the initial state, with a sampling tag
    ('point-mass' or 'gaussian') used by the Monte Carlo module."""

    nu1: np.ndarray
    nu2: np.ndarray
    kind: str = "gaussian"

    def __post_init__(self):
        nu1 = np.atleast_1d(np.asarray(self.nu1, dtype=float))
        nu2 = np.asarray(self.nu2, dtype=float)
        if nu2.shape == ():
            nu2 = nu2.reshape(1, 1)
        object.__setattr__(self, "nu1", nu1)
        object.__setattr__(self, "nu2", nu2)
        if self.kind not in ("point-mass", "gaussian"):
            raise ValueError(f"unknown initial-law sampler {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.nu1.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.nu2 - np.outer(self.nu1, self.nu1)

    @classmethod
    def point_mass(cls, nu1) -> "InitialLaw":
        nu1 = np.atleast_1d(np.asarray(nu1, dtype=float))
        return cls(nu1, np.outer(nu1, nu1), "point-mass")

    @classmethod
    def gaussian(cls, mean, cov) -> "InitialLaw":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.shape == ():
            cov = cov.reshape(1, 1)
        return cls(mean, cov + np.outer(mean, mean), "gaussian")


def _coef(value, shape, name):
    if isinstance(value, Coefficient):
        if value.shape != shape:
            raise ValueError(f"{name}: coefficient has shape {value.shape}, expected {shape}")
        return value
    return Coefficient(value, shape, name)


@dataclass(eq=False)
class LQModelSpec:
    """All coefficients of the game: state dynamics dX = (A X + B u) dt + sigma dW
    and the quadratic payoff with population benefit (L, Q_bar, H_bar), cross
    terms (Q_tilde, H_tilde), and individual costs (Q, R, S, H, q, r)."""

    d: int
    k: int
    horizon: float
    A: Coefficient
    B: Coefficient
    sigma: Coefficient
    Q: Coefficient
    Q_bar: Coefficient
    Q_tilde: Coefficient
    R: Coefficient
    S: Coefficient
    L: Coefficient
    q: Coefficient
    r: Coefficient
    H: np.ndarray
    H_bar: np.ndarray
    H_tilde: np.ndarray
    initial: InitialLaw

    @classmethod
    def from_constants(
        cls,
        horizon: float,
        initial: InitialLaw,
        *,
        d: int = 1,
        k: int = 1,
        A=0.0,
        B=1.0,
        sigma=1.0,
        Q=0.0,
        Q_bar=0.0,
        Q_tilde=0.0,
        R=1.0,
        S=0.0,
        L=0.0,
        q=0.0,
        r=0.0,
        H=0.0,
        H_bar=0.0,
        H_tilde=0.0,
    ) -> "LQModelSpec":
        """Build a spec from constants (scalars broadcast to identity-like shapes)."""

        def mat(v, rows, cols, name):
            if isinstance(v, (Coefficient, Trajectory)) or callable(v):
                return _coef(v, (rows, cols), name)
            a = np.asarray(v, dtype=float)
            if a.shape == ():
                a = float(a) * np.eye(rows, cols)
            return _coef(a, (rows, cols), name)

        def vec(v, n, name):
            a = v
            if not isinstance(v, (Coefficient, Trajectory)) and not callable(v):
                a = np.asarray(v, dtype=float)
                if a.shape == ():
                    a = np.full(n, float(a))
            return _coef(a, (n,), name)

        def cmat(v, rows, cols, name):
            a = np.asarray(v, dtype=float)
            if a.shape == ():
                a = float(a) * np.eye(rows, cols)
            if a.shape != (rows, cols):
                raise ValueError(f"{name}: expected shape {(rows, cols)}, got {a.shape}")
            return a

        return cls(
            d=d,
            k=k,
            horizon=float(horizon),
            A=mat(A, d, d, "A"),
            B=mat(B, d, k, "B"),
            sigma=mat(sigma, d, d, "sigma"),
            Q=mat(Q, d, d, "Q"),
            Q_bar=mat(Q_bar, d, d, "Q_bar"),
            Q_tilde=mat(Q_tilde, d, d, "Q_tilde"),
            R=mat(R, k, k, "R"),
            S=mat(S, k, d, "S"),
            L=vec(L, d, "L"),
            q=vec(q, d, "q"),
            r=vec(r, k, "r"),
            H=cmat(H, d, d, "H"),
            H_bar=cmat(H_bar, d, d, "H_bar"),
            H_tilde=cmat(H_tilde, d, d, "H_tilde"),
            initial=initial,
        )


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    d1: float
    d2: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __str__(self) -> str:
        lines = [
            f"[{'ok' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
            for c in self.checks
        ]
        lines.append(f"d1 = {self.d1:.6g}, d2 = {self.d2:.6g}")
        return "\n".join(lines)


def _min_eig_over_nodes(coef: Coefficient, nodes: Sequence[float]) -> float:
    if coef.is_constant:
        return float(np.min(np.linalg.eigvalsh(_sym(coef.at(0.0)))))
    return min(float(np.min(np.linalg.eigvalsh(_sym(coef.at(t))))) for t in nodes)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _max_asym_over_nodes(coef: Coefficient, nodes) -> float:
    if coef.is_constant:
        a = coef.at(0.0)
        return float(np.max(np.abs(a - a.T)))
    return max(float(np.max(np.abs(coef.at(t) - coef.at(t).T))) for t in nodes)


def validate(spec: LQModelSpec, grid: TimeGrid | None = None) -> ValidationReport:
    """Check the computable content of the standing assumptions.

    Returns a report (never raises): largest admissible lower bounds d1, d2
    for the state and control cost curvatures, plus pass/fail per assumption.
    """
    nodes = (grid or TimeGrid(spec.horizon, 64)).nodes
    checks = []

    for name in ("Q", "Q_bar", "Q_tilde", "R"):
        asym = _max_asym_over_nodes(getattr(spec, name), nodes)
        checks.append(
            AssumptionCheck(f"{name} symmetric", asym <= _SYM_TOL, f"max asymmetry {asym:.3g}")
        )
    for name in ("H", "H_bar", "H_tilde"):
        m = getattr(spec, name)
        asym = float(np.max(np.abs(m - m.T)))
        checks.append(
            AssumptionCheck(f"{name} symmetric", asym <= _SYM_TOL, f"max asymmetry {asym:.3g}")
        )
        lo = float(np.min(np.linalg.eigvalsh(_sym(m))))
        checks.append(AssumptionCheck(f"{name} PSD", lo >= -_SYM_TOL, f"min eigenvalue {lo:.3g}"))

    d1 = _min_eig_over_nodes(spec.Q, nodes)
    d2 = _min_eig_over_nodes(spec.R, nodes)
    checks.append(AssumptionCheck("Q >= d1*I with d1 >= 0", d1 >= -_SYM_TOL, f"d1 = {d1:.6g}"))
    checks.append(AssumptionCheck("R >= d2*I with d2 > 0", d2 > 0.0, f"d2 = {d2:.6g}"))

    s_sup = max(float(np.linalg.norm(spec.S.at(t), 2)) for t in (nodes if not spec.S.is_constant else [0.0]))
    if d1 > _SYM_TOL:
        ok = s_sup**2 < d1 * d2
        detail = f"sup|S|^2 = {s_sup**2:.6g} vs d1*d2 = {d1 * d2:.6g}"
    else:
        ok = s_sup == 0.0
        detail = "S must vanish when d1 = 0" if not ok else "S = 0"
    checks.append(AssumptionCheck("cross-term bound on S", ok, detail))

    for name in ("A", "B", "sigma", "L", "q", "r"):
        coef = getattr(spec, name)
        finite = all(np.all(np.isfinite(coef.at(t))) for t in (nodes if not coef.is_constant else [0.0]))
        checks.append(AssumptionCheck(f"{name} finite on [0,T]", finite))

    cov = spec.initial.covariance
    lo = float(np.min(np.linalg.eigvalsh(_sym(cov))))
    checks.append(
        AssumptionCheck("initial second moment dominates first", lo >= -1e-10, f"min eig {lo:.3g}")
    )
    if spec.initial.dim != spec.d:
        checks.append(AssumptionCheck("initial law dimension", False, f"{spec.initial.dim} != d = {spec.d}"))

    return ValidationReport(tuple(checks), d1=max(d1, 0.0), d2=d2)


def sample_nodes(coef: Coefficient, nodes: np.ndarray) -> np.ndarray:
    """Coefficient values at every node, with a constant fast path."""
    if coef.is_constant:
        return np.broadcast_to(coef.at(0.0), (len(nodes),) + coef.shape)
    return np.stack([coef.at(t) for t in nodes])


def _vec(x, n, what) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.shape != (n,):
        raise ValueError(f"{what} has shape {a.shape}, expected ({n},)")
    return a


def running_payoff(t: float, x, m, a, spec: LQModelSpec) -> float:
    """Running payoff integrand: population benefit minus individual costs."""
    x = _vec(x, spec.d, "state x")
    m = _vec(m, spec.d, "flow m")
    a = _vec(a, spec.k, "control a")
    L, Qb = spec.L.at(t), spec.Q_bar.at(t)
    benefit = float(L @ m - 0.5 * m @ Qb @ m)
    return benefit - running_cost(t, x, m, a, spec)


def running_cost(t: float, x, m, a, spec: LQModelSpec) -> float:
    """Individual running cost integrand (the part a deviating player controls)."""
    x = _vec(x, spec.d, "state x")
    m = _vec(m, spec.d, "flow m")
    a = _vec(a, spec.k, "control a")
    Q, Qt = spec.Q.at(t), spec.Q_tilde.at(t)
    R, S = spec.R.at(t), spec.S.at(t)
    qv, rv = spec.q.at(t), spec.r.at(t)
    return float(
        0.5 * x @ Q @ x
        + (Qt @ x) @ m
        + qv @ x
        + 0.5 * a @ R @ a
        + (S @ x) @ a
        + rv @ a
    )


def terminal_payoff(x, m, spec: LQModelSpec) -> float:
    """Terminal payoff: minus the quadratic terminal costs."""
    x = _vec(x, spec.d, "state x")
    m = _vec(m, spec.d, "flow m")
    return float(
        -0.5 * m @ spec.H_bar @ m - 0.5 * x @ spec.H @ x - (spec.H_tilde @ x) @ m
    )
