"""Moderated (scenario-law) flows in structural feedback form.

A scenario law is a finite-support randomization of the moderator: each
scenario carries a weight and a forcing path delta.  The induced flow mu
solves the closed-loop mean ODE per scenario; the recommended strategy is
affine feedback in the player's state and the realized flow.  The module
also integrates the commit-versus-deviate state gap per scenario and
evaluates payoffs and the consistency residual analytically through the
conditional moment engine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grids import HalfSampler, TimeGrid, Trajectory, integrate_forward
from .model import LQModelSpec
from .moments import AffinePolicy, MomentState, PayoffReport, conditional_moment_payoff
from .riccati import (
    DeviationRiccati,
    FeedbackCoefficients,
    RInverse,
    _session,
    solve_deviation,
)

__all__ = [
    "ScenarioLaw",
    "CorrelatedFlow",
    "ConsistencyResidual",
    "build_flow",
    "analytic_payoff",
    "analytic_payoff_report",
    "consistency_residual",
    "mean_consistent_payoff",
    "nash_flow_law",
    "planner_flow_law",
]

_WEIGHT_TOL = 1e-12


class _Delta:
    """One scenario's forcing path: piecewise-constant table, constant, or callable."""

    __slots__ = ("_kind", "_data", "_grid", "_k")

    def __init__(self, grid: TimeGrid, k: int, value):
        self._grid = grid
        self._k = k
        if callable(value) and not isinstance(value, Trajectory):
            self._kind = "fn"
            self._data = value
            probe = np.asarray(value(0.0), dtype=float)
            if probe.shape != (k,):
                raise ValueError(f"delta callable returns shape {probe.shape}, expected ({k},)")
        elif isinstance(value, Trajectory):
            grid.require_same(value.grid, "delta trajectory")
            if value.values.shape[1:] != (k,):
                raise ValueError("delta trajectory has wrong width")
            self._kind = "traj"
            self._data = value
        else:
            arr = np.asarray(value, dtype=float)
            if arr.shape == () or arr.shape == (k,):
                self._kind = "const"
                self._data = np.full(k, float(arr)) if arr.shape == () else arr
            else:
                if arr.ndim == 1:
                    arr = arr[:, None]
                if arr.shape != (grid.steps, k):
                    raise ValueError(
                        f"piecewise-constant delta needs {grid.steps} interval values of width {k}, "
                        f"got shape {arr.shape}"
                    )
                self._kind = "table"
                self._data = arr

    @property
    def is_constant(self) -> bool:
        return self._kind == "const"

    def at(self, t: float) -> np.ndarray:
        if self._kind == "const":
            return self._data
        if self._kind == "table":
            return self._data[self._grid.interval_index(t)]
        if self._kind == "traj":
            return self._data.at(t)
        return np.asarray(self._data(t), dtype=float)

    def nodes(self) -> np.ndarray:
        return np.stack([self.at(t) for t in self._grid.nodes])


class ScenarioLaw:
    """Finite-support law of the moderator's randomization.

    Weights must be positive and sum to one; zero-weight scenarios are
    dropped at construction with a warning.
    """

    def __init__(self, grid: TimeGrid, weights: Sequence[float], deltas: Sequence, k: int = 1):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or len(deltas) != weights.shape[0]:
            raise ValueError("need one delta per weight")
        if np.any(weights < 0.0):
            raise ValueError(f"weights must be nonnegative, got {weights}")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 (tolerance {_WEIGHT_TOL}), got sum {weights.sum()!r}")
        keep = weights > 0.0
        if not np.all(keep):
            warnings.warn("dropping scenarios with zero weight", stacklevel=2)
            weights = weights[keep]
            deltas = [d for d, k_ in zip(deltas, keep) if k_]
        self.grid = grid
        self.k = k
        self.weights = weights
        self._deltas = [d if isinstance(d, _Delta) else _Delta(grid, k, d) for d in deltas]

    @classmethod
    def from_constants(cls, grid: TimeGrid, weights, consts, k: int = 1) -> "ScenarioLaw":
        consts = np.atleast_1d(np.asarray(consts, dtype=float))
        if consts.ndim == 1:
            consts = consts[:, None]
        return cls(grid, weights, [c for c in consts], k=k)

    @property
    def n_scenarios(self) -> int:
        return len(self._deltas)

    def delta_at(self, s: int, t: float) -> np.ndarray:
        return self._deltas[s].at(t)

    def deltas_at(self, t: float) -> np.ndarray:
        return np.stack([d.at(t) for d in self._deltas])

    def mean_delta_at(self, t: float) -> np.ndarray:
        return self.weights @ self.deltas_at(t)

    def delta_nodes(self) -> np.ndarray:
        """(S, N+1, k) forcing values at the nodes."""
        return np.stack([d.nodes() for d in self._deltas])

    def constant_values(self) -> np.ndarray | None:
        """(S, k) array when every scenario forcing is constant in time, else None."""
        if all(d.is_constant for d in self._deltas):
            return np.stack([d.at(0.0) for d in self._deltas])
        return None


@dataclass(frozen=True)
class CorrelatedFlow:
    """A structural-class flow: scenario law, the backward system solved
    against its expected flow, the feedback coefficients, the per-scenario
    flow and commit-versus-deviate state gap."""

    spec: LQModelSpec
    grid: TimeGrid
    law: ScenarioLaw
    riccati: DeviationRiccati
    feedback: FeedbackCoefficients
    mus: tuple            # per-scenario flow trajectories
    state_gaps: tuple     # per-scenario gap trajectories (deviator state minus flow carrier)
    mean_mu: Trajectory

    @property
    def weights(self) -> np.ndarray:
        return self.law.weights

    def mu_values(self) -> np.ndarray:
        return np.stack([m.values for m in self.mus])

    def gap_values(self) -> np.ndarray:
        return np.stack([f.values for f in self.state_gaps])

    def committed_policy(self) -> AffinePolicy:
        """Recommended strategy: u = -(gain_x X + gain_flow mu_s + R^{-1} delta_s)."""
        fb = self.feedback
        gf_h = fb.sampler("gain_flow")
        intercepts = []
        for s in range(self.law.n_scenarios):
            mu = self.mus[s]

            def intercept(t, s=s, mu=mu):
                return gf_h.at(t) @ mu.at(t) + fb.rinv_at(t) @ self.law.delta_at(s, t)

            intercepts.append(intercept)
        return AffinePolicy(
            gain_at=fb.gain_x_at, intercepts_at=tuple(intercepts), acl_half=fb.sampler("acl")
        )

    def best_deviation_policy(self) -> AffinePolicy:
        """Optimal scenario-blind strategy of a player rejecting the moderator."""
        return self.feedback.deviation_policy()


def build_flow(spec: LQModelSpec, grid: TimeGrid, law: ScenarioLaw) -> CorrelatedFlow:
    """Integrate a scenario law into a full structural flow.

    The expected flow is integrated first, the backward offset is re-solved
    against it (its forcing is the analytic expected-flow derivative), then
    every scenario's flow and state gap are integrated jointly.
    """
    grid.require_same(law.grid, "scenario law")
    if law.k != spec.k:
        raise ValueError(f"law has control width {law.k}, model has k = {spec.k}")
    d, k = spec.d, spec.k
    S = law.n_scenarios
    ses = _session(spec, grid)
    rinv = ses.rinv

    # half-grid tables make the RK4 right-hand sides pure index lookups
    acl_full = ses.sampler("acl_full")
    b_rinv = ses.sampler("b_rinv")
    edel = HalfSampler(grid, law.mean_delta_at)

    def mean_rhs(t, m):
        return acl_full.at(t) @ m - b_rinv.at(t) @ edel.at(t)

    mean_mu = integrate_forward(mean_rhs, spec.initial.nu1, grid)

    ric, fb = solve_deviation(spec, grid, mean_mu, lambda t: mean_rhs(t, mean_mu.at(t)))

    acl = ses.sampler("acl")
    b_gf = ses.sampler("b_gf")
    b_gc = HalfSampler(grid, lambda t: spec.B.at(t) @ fb.gain_const_at(t))
    em_h = HalfSampler(grid, mean_mu.at)
    del_h = HalfSampler(grid, law.deltas_at)

    def joint_rhs(t, y):
        mu = y[: S * d].reshape(S, d)
        gap = y[S * d :].reshape(S, d)
        deltas = del_h.at(t)
        forced = deltas @ b_rinv.at(t).T
        dmu = mu @ acl_full.at(t).T - forced
        dgap = (
            gap @ acl.at(t).T
            + (mu - em_h.at(t)[None, :]) @ b_gf.at(t).T
            + forced
            - b_gc.at(t)[None, :]
        )
        return np.concatenate([dmu.ravel(), dgap.ravel()])

    y0 = np.concatenate([np.tile(spec.initial.nu1, (S, 1)).ravel(), np.zeros(S * d)])
    sol = integrate_forward(joint_rhs, y0, grid)
    n1 = grid.steps + 1
    mus = []
    gaps = []
    for s in range(S):
        sl = slice(s * d, (s + 1) * d)
        mus.append(Trajectory(grid, sol.values[:, sl], sol.derivs[:, sl]))
        sl2 = slice(S * d + s * d, S * d + (s + 1) * d)
        gaps.append(Trajectory(grid, sol.values[:, sl2], sol.derivs[:, sl2]))

    return CorrelatedFlow(
        spec=spec,
        grid=grid,
        law=law,
        riccati=ric,
        feedback=fb,
        mus=tuple(mus),
        state_gaps=tuple(gaps),
        mean_mu=mean_mu,
    )


def analytic_payoff_report(
    flow: CorrelatedFlow, policy: AffinePolicy | None = None
) -> PayoffReport:
    """Moment-engine payoff of the committed strategy (default) or of any
    affine policy evaluated against the flow's scenarios."""
    if policy is None:
        policy = flow.committed_policy()
    return conditional_moment_payoff(flow.spec, flow.grid, policy, flow.mus, flow.weights)


def analytic_payoff(flow: CorrelatedFlow, policy: AffinePolicy | None = None) -> float:
    return analytic_payoff_report(flow, policy).payoff


@dataclass(frozen=True)
class ConsistencyResidual:
    """Per-scenario gap between the conditional mean state and the flow."""

    curves: np.ndarray          # (S, N+1) |m_t - mu_t|
    max_per_scenario: np.ndarray

    @property
    def max(self) -> float:
        return float(self.max_per_scenario.max())


def consistency_residual(flow: CorrelatedFlow) -> ConsistencyResidual:
    """|E[X_t | scenario] - mu_t| per scenario: for structural flows this is
    pure integration noise."""
    report = analytic_payoff_report(flow)
    diff = np.linalg.norm(report.moments.mean - flow.mu_values(), axis=2)
    return ConsistencyResidual(curves=diff, max_per_scenario=diff.max(axis=1))


def nash_flow_law(spec: LQModelSpec, grid: TimeGrid, ne) -> ScenarioLaw:
    """Single-scenario law whose induced flow is the Nash mean flow and whose
    committed strategy is the Nash feedback."""

    def delta(t):
        return spec.B.at(t).T @ ne.p_offset.at(t) + spec.r.at(t)

    return ScenarioLaw(grid, [1.0], [delta], k=spec.k)


def planner_flow_law(spec: LQModelSpec, grid: TimeGrid, mfc) -> ScenarioLaw:
    """Single-scenario law whose committed strategy is the planner optimum
    (its flow is the planner mean flow)."""
    ses = _session(spec, grid)

    def delta(t):
        B = spec.B.at(t)
        x = mfc.mean_flow.at(t)
        return B.T @ ((mfc.P_ctrl.at(t) - ses.P_flow.at(t)) @ x + mfc.p_ctrl.at(t)) + spec.r.at(t)

    return ScenarioLaw(grid, [1.0], [delta], k=spec.k)


def mean_consistent_payoff(
    spec: LQModelSpec, grid: TimeGrid, policy: AffinePolicy
) -> tuple[float, Trajectory]:
    """Payoff of a scenario-blind policy against the flow it itself induces
    (the planner's functional).  Returns the payoff and the induced flow."""
    if not policy.scenario_blind:
        raise ValueError("the mean-consistent functional is defined for scenario-blind policies")

    def rhs(t, m):
        B = spec.B.at(t)
        return (spec.A.at(t) - B @ policy.gain_at(t)) @ m - B @ policy.intercepts_at[0](t)

    mean_flow = integrate_forward(rhs, spec.initial.nu1, grid)
    report = conditional_moment_payoff(spec, grid, policy, [mean_flow], np.array([1.0]))
    return report.payoff, mean_flow
