"""Backward Riccati/offset systems and their feedback forms.

Three families are solved here, all backward in time on the session grid:

* the best-deviation system (value matrix P, flow-coupling matrix P_flow and
  offset p_const driven by the derivative of the expected flow), giving the
  optimal strategy of a player who rejects the moderator's recommendation;
* the Nash system (P_ne, p_ne) together with the equilibrium mean flow and
  the offset of the equilibrium feedback;
* the central-planner system (P_mfc, p_mfc, control pair P_ctrl, p_ctrl)
  with the planner's mean flow.

P and P_flow never depend on the flow a law induces, so they are solved once
per (model, grid) session and cached; only the offset is re-solved per law.
Derived feedback gains and the effective quadratic weights the equilibrium
verdicts need are assembled in :class:`FeedbackCoefficients`.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import TimeGrid, Trajectory, integrate_backward, integrate_forward
from .model import LQModelSpec, sample_nodes
from .moments import AffinePolicy, conditional_moment_payoff

__all__ = [
    "DeviationRiccati",
    "FeedbackCoefficients",
    "NESolution",
    "MFCSolution",
    "RInverse",
    "solve_deviation",
    "solve_ne",
    "solve_mfc",
]


class RInverse:
    """Cached inverse of the control-cost matrix R(t)."""

    __slots__ = ("_const", "_R")

    def __init__(self, spec: LQModelSpec):
        self._R = spec.R
        self._const = np.linalg.inv(spec.R.at(0.0)) if spec.R.is_constant else None

    def at(self, t: float) -> np.ndarray:
        if self._const is not None:
            return self._const
        return np.linalg.inv(self._R.at(t))


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _scalar_getter(coef):
    """Float-valued time getter for a scalar-model coefficient."""
    if coef.is_constant:
        v = float(np.asarray(coef.at(0.0)).reshape(-1)[0])
        return lambda t: v
    return lambda t: float(np.asarray(coef.at(t)).reshape(-1)[0])


class _Session:
    """Law-independent solve products shared by everything built on one
    (model, grid) pair: the value pair (P, P_flow), the inverse control
    cost, the feedback gains and the effective quadratic weights."""

    def __init__(self, spec: LQModelSpec, grid: TimeGrid):
        self.spec = spec
        self.grid = grid
        self.rinv = RInverse(spec)
        self._samplers: dict = {}
        d = spec.d

        if d == 1 and spec.k == 1:
            A_, B_, S_ = (_scalar_getter(c) for c in (spec.A, spec.B, spec.S))
            Q_, Qt_ = _scalar_getter(spec.Q), _scalar_getter(spec.Q_tilde)
            R_ = _scalar_getter(spec.R)

            def rhs(t, y):
                P, Pf = y[0], y[1]
                a, b, s = A_(t), B_(t), S_(t)
                gainT = (P * b + s) / R_(t)
                dP = -(2.0 * P * a + Q_(t) - gainT * (b * P + s))
                dPf = -(a * Pf + Qt_(t) - gainT * b * Pf)
                return np.array([dP, dPf])

            yT = np.array([float(spec.H[0, 0]), float(spec.H_tilde[0, 0])])
            sol = integrate_backward(rhs, yT, grid)
            self.P = Trajectory(grid, sol.values[:, 0, None, None], sol.derivs[:, 0, None, None])
            self.P_flow = Trajectory(grid, sol.values[:, 1, None, None], sol.derivs[:, 1, None, None])
        else:

            def rhs(t, y):
                P = y[0]
                Pf = y[1]
                A = spec.A.at(t)
                B = spec.B.at(t)
                S = spec.S.at(t)
                gainT = (P @ B + S.T) @ self.rinv.at(t)
                dP = -_sym(P @ A + A.T @ P + spec.Q.at(t) - gainT @ (B.T @ P + S))
                dPf = -(A.T @ Pf + spec.Q_tilde.at(t) - gainT @ (B.T @ Pf))
                return np.stack([dP, dPf])

            sol = integrate_backward(rhs, np.stack([spec.H, spec.H_tilde]), grid)
            self.P = Trajectory(grid, sol.values[:, 0], sol.derivs[:, 0])
            self.P_flow = Trajectory(grid, sol.values[:, 1], sol.derivs[:, 1])

        nodes = grid.nodes
        n1 = grid.steps + 1
        B = sample_nodes(spec.B, nodes)
        R = sample_nodes(spec.R, nodes)
        S = sample_nodes(spec.S, nodes)
        Rin = np.stack([self.rinv.at(t) for t in nodes]) if not spec.R.is_constant else np.broadcast_to(self.rinv.at(0.0), (n1, spec.k, spec.k))
        gx = np.einsum("nkl,nle->nke", Rin, np.einsum("ndk,nde->nke", B, self.P.values) + S)
        gf = np.einsum("nkl,nle->nke", Rin, np.einsum("ndk,nde->nke", B, self.P_flow.values))
        self.gain_x_nodes = gx
        self.gain_flow_nodes = gf
        Q = sample_nodes(spec.Q, nodes)
        Qt = sample_nodes(spec.Q_tilde, nodes)
        self.quad_x_nodes = (
            Q + np.einsum("nkd,nkl,nle->nde", gx, R, gx) - 2.0 * np.einsum("nkd,nke->nde", gx, S)
        )
        self.quad_cross_nodes = (
            Qt + np.einsum("nkd,nkl,nle->nde", gf, R, gx) - np.einsum("nkd,nke->nde", gf, S)
        )
        self.quad_flow_nodes = np.einsum("nkd,nkl,nle->nde", gf, R, gf)

    def gain_x_at(self, t: float) -> np.ndarray:
        s = self.spec
        return self.rinv.at(t) @ (s.B.at(t).T @ self.P.at(t) + s.S.at(t))

    def gain_flow_at(self, t: float) -> np.ndarray:
        s = self.spec
        return self.rinv.at(t) @ (s.B.at(t).T @ self.P_flow.at(t))

    def sampler(self, name: str):
        """Lazily built half-grid samplers of the hot session curves."""
        if name in self._samplers:
            return self._samplers[name]
        from .grids import HalfSampler

        spec = self.spec
        fns = {
            "gain_x": self.gain_x_at,
            "gain_flow": self.gain_flow_at,
            "P_flow": self.P_flow.at,
            # (P B + S^T) R^{-1}, the backward-system gain transpose
            "gainT": lambda t: (self.P.at(t) @ spec.B.at(t) + spec.S.at(t).T) @ self.rinv.at(t),
            # closed loop of the state under the deviation gain
            "acl": lambda t: spec.A.at(t) - spec.B.at(t) @ self.gain_x_at(t),
            # closed loop of the flow under both gains
            "acl_full": lambda t: spec.A.at(t)
            - spec.B.at(t) @ (self.gain_x_at(t) + self.gain_flow_at(t)),
            "b_rinv": lambda t: spec.B.at(t) @ self.rinv.at(t),
            "b_gf": lambda t: spec.B.at(t) @ self.gain_flow_at(t),
        }
        self._samplers[name] = HalfSampler(self.grid, fns[name])
        return self._samplers[name]


_sessions: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _session(spec: LQModelSpec, grid: TimeGrid) -> _Session:
    per_spec = _sessions.setdefault(spec, {})
    key = (grid.horizon, grid.steps)
    if key not in per_spec:
        per_spec[key] = _Session(spec, grid)
    return per_spec[key]


@dataclass(frozen=True)
class DeviationRiccati:
    """Backward value coefficients for the best deviation against a fixed
    expected flow: quadratic matrix P, flow coupling P_flow, offset p_const."""

    P: Trajectory
    P_flow: Trajectory
    p_const: Trajectory
    e_mu: Trajectory

    def max_asymmetry(self) -> float:
        v = self.P.values
        return float(np.max(np.abs(v - np.transpose(v, (0, 2, 1)))))


class FeedbackCoefficients:
    """Feedback gains of the best deviation and the effective quadratic
    weights after substituting that feedback into the cost.

    gain_x(t)     acts on the player's state,
    gain_flow(t)  on the (expected) flow,
    gain_const(t) is the affine part;
    quad_x, quad_cross, quad_flow are the state/state-flow/flow effective
    quadratic weights used by the equilibrium verdicts.
    """

    def __init__(self, spec: LQModelSpec, ric: DeviationRiccati, grid: TimeGrid):
        self._spec = spec
        self._ric = ric
        self._ses = _session(spec, grid)
        self.grid = grid
        ses = self._ses
        self.gain_x = Trajectory(grid, ses.gain_x_nodes)
        self.gain_flow = Trajectory(grid, ses.gain_flow_nodes)
        self.quad_x = Trajectory(grid, ses.quad_x_nodes)
        self.quad_cross = Trajectory(grid, ses.quad_cross_nodes)
        self.quad_flow = Trajectory(grid, ses.quad_flow_nodes)
        B = sample_nodes(spec.B, grid.nodes)
        r = sample_nodes(spec.r, grid.nodes)
        Bp = np.einsum("ndk,nd->nk", B, ric.p_const.values) + r
        if spec.R.is_constant:
            gc = Bp @ ses.rinv.at(0.0).T
        else:
            gc = np.stack([ses.rinv.at(t) @ Bp[i] for i, t in enumerate(grid.nodes)])
        self.gain_const = Trajectory(grid, gc)

    def gain_x_at(self, t: float) -> np.ndarray:
        return self._ses.gain_x_at(t)

    def gain_flow_at(self, t: float) -> np.ndarray:
        return self._ses.gain_flow_at(t)

    def gain_const_at(self, t: float) -> np.ndarray:
        s = self._spec
        return self._ses.rinv.at(t) @ (s.B.at(t).T @ self._ric.p_const.at(t) + s.r.at(t))

    def rinv_at(self, t: float) -> np.ndarray:
        return self._ses.rinv.at(t)

    def sampler(self, name: str):
        return self._ses.sampler(name)

    def deviation_policy(self) -> AffinePolicy:
        """Best-deviation feedback: reads the state and the expected flow only."""
        e_mu = self._ric.e_mu
        gf_h = self._ses.sampler("gain_flow")
        from .grids import HalfSampler

        gc_h = HalfSampler(self.grid, self.gain_const_at)

        def intercept(t: float) -> np.ndarray:
            return gf_h.at(t) @ e_mu.at(t) + gc_h.at(t)

        return AffinePolicy(
            gain_at=self.gain_x_at,
            intercepts_at=(intercept,),
            scenario_blind=True,
            acl_half=self._ses.sampler("acl"),
        )


def solve_deviation(
    spec: LQModelSpec,
    grid: TimeGrid,
    e_mu: Trajectory,
    de_mu_dt: Callable[[float], np.ndarray] | Trajectory,
) -> tuple[DeviationRiccati, FeedbackCoefficients]:
    """Solve the best-deviation backward system against the expected flow.

    `de_mu_dt` must supply the expected-flow derivative analytically (as a
    callable or a trajectory with dense output); finite-differencing the flow
    would pollute the offset equation with grid-order noise.
    """
    grid.require_same(e_mu.grid, "expected flow")
    ses = _session(spec, grid)
    dmu = de_mu_dt.at if isinstance(de_mu_dt, Trajectory) else de_mu_dt
    gainT_h = ses.sampler("gainT")
    Pf_h = ses.sampler("P_flow")

    def rhs(t, p):
        B = spec.B.at(t)
        return -(
            Pf_h.at(t) @ np.asarray(dmu(t), dtype=float)
            + spec.A.at(t).T @ p
            + spec.q.at(t)
            - gainT_h.at(t) @ (B.T @ p + spec.r.at(t))
        )

    p = integrate_backward(rhs, np.zeros(spec.d), grid)
    ric = DeviationRiccati(P=ses.P, P_flow=ses.P_flow, p_const=p, e_mu=e_mu)
    return ric, FeedbackCoefficients(spec, ric, grid)


def _solve_quadratic_affine(
    spec: LQModelSpec,
    grid: TimeGrid,
    state_cost: Callable[[float], np.ndarray],
    terminal_P: np.ndarray,
    affine_src: Callable[[float], np.ndarray],
) -> tuple[Trajectory, Trajectory]:
    """Backward pair: Riccati matrix with running cost `state_cost` and
    terminal `terminal_P`, plus the affine offset forced by `affine_src`."""
    d = spec.d
    rinv = RInverse(spec)

    if d == 1 and spec.k == 1:
        A_, B_, S_, r_ = (_scalar_getter(c) for c in (spec.A, spec.B, spec.S, spec.r))
        R_ = _scalar_getter(spec.R)

        def flat(fn):
            return lambda t: float(np.asarray(fn(t)).reshape(-1)[0])

        cost_, src_ = flat(state_cost), flat(affine_src)

        def rhs(t, y):
            P, p = y[0], y[1]
            a, b, s = A_(t), B_(t), S_(t)
            gainT = (P * b + s) / R_(t)
            dP = -(2.0 * a * P + cost_(t) - gainT * (b * P + s))
            dp = -(a * p + src_(t) - gainT * (b * p + r_(t)))
            return np.array([dP, dp])

        yT = np.array([float(np.asarray(terminal_P).reshape(-1)[0]), 0.0])
        sol = integrate_backward(rhs, yT, grid)
        P = Trajectory(grid, sol.values[:, 0, None, None], sol.derivs[:, 0, None, None])
        p = Trajectory(grid, sol.values[:, 1, None], sol.derivs[:, 1, None])
        return P, p

    def rhs(t, y):
        P = y[: d * d].reshape(d, d)
        p = y[d * d :]
        A = spec.A.at(t)
        B = spec.B.at(t)
        S = spec.S.at(t)
        gainT = (P @ B + S.T) @ rinv.at(t)
        dP = -_sym(P @ A + A.T @ P + state_cost(t) - gainT @ (B.T @ P + S))
        dp = -(A.T @ p + affine_src(t) - gainT @ (B.T @ p + spec.r.at(t)))
        return np.concatenate([dP.ravel(), dp])

    yT = np.concatenate([np.asarray(terminal_P, dtype=float).ravel(), np.zeros(d)])
    sol = integrate_backward(rhs, yT, grid)
    P = Trajectory(grid, sol.values[:, : d * d].reshape(-1, d, d), sol.derivs[:, : d * d].reshape(-1, d, d))
    p = Trajectory(grid, sol.values[:, d * d :], sol.derivs[:, d * d :])
    return P, p


@dataclass(frozen=True)
class NESolution:
    """Unique Nash point of the game: fixed-point value pair (P_ne, p_ne),
    equilibrium mean flow, deviation-system offset solved against that flow,
    the equilibrium feedback policy, and its analytic payoff."""

    P_ne: Trajectory
    p_ne: Trajectory
    mean_flow: Trajectory
    p_offset: Trajectory        # offset of the backward system against the mean flow
    gain_offset: Trajectory     # R^{-1} (B^T p_offset + r) at the nodes
    P: Trajectory               # deviation value matrix (flow independent)
    P_flow: Trajectory
    feedback: FeedbackCoefficients
    policy: AffinePolicy
    payoff: float


def solve_ne(spec: LQModelSpec, grid: TimeGrid) -> NESolution:
    """Solve the Nash fixed point: backward value pair, forward mean flow,
    then the feedback offset against that flow; payoff via the moment engine."""
    rinv = RInverse(spec)

    P_ne, p_ne = _solve_quadratic_affine(
        spec,
        grid,
        state_cost=lambda t: spec.Q.at(t) + spec.Q_tilde.at(t),
        terminal_P=spec.H + spec.H_tilde,
        affine_src=lambda t: spec.q.at(t),
    )

    from .grids import HalfSampler

    closed_A = HalfSampler(
        grid,
        lambda t: spec.A.at(t)
        - spec.B.at(t) @ rinv.at(t) @ (spec.B.at(t).T @ P_ne.at(t) + spec.S.at(t)),
    )
    closed_b = HalfSampler(
        grid, lambda t: spec.B.at(t) @ rinv.at(t) @ (spec.B.at(t).T @ p_ne.at(t) + spec.r.at(t))
    )

    mean_flow = integrate_forward(
        lambda t, m: closed_A.at(t) @ m - closed_b.at(t), spec.initial.nu1, grid
    )

    # Deviation system against the equilibrium flow; the offset needs the
    # analytic flow derivative, available from the closed-loop dynamics.
    ric, fb = solve_deviation(
        spec, grid, mean_flow, lambda t: closed_A.at(t) @ mean_flow.at(t) - closed_b.at(t)
    )

    ses = _session(spec, grid)
    gf_h = ses.sampler("gain_flow")
    gc_h = HalfSampler(grid, fb.gain_const_at)

    def intercept(t):
        return gf_h.at(t) @ mean_flow.at(t) + gc_h.at(t)

    policy = AffinePolicy(
        gain_at=fb.gain_x_at,
        intercepts_at=(intercept,),
        scenario_blind=True,
        acl_half=ses.sampler("acl"),
    )
    report = conditional_moment_payoff(spec, grid, policy, [mean_flow], np.array([1.0]))
    return NESolution(
        P_ne=P_ne,
        p_ne=p_ne,
        mean_flow=mean_flow,
        p_offset=ric.p_const,
        gain_offset=fb.gain_const,
        P=ric.P,
        P_flow=ric.P_flow,
        feedback=fb,
        policy=policy,
        payoff=report.payoff,
    )


@dataclass(frozen=True)
class MFCSolution:
    """Central-planner optimum: planner value pair (P_mfc, p_mfc), planner
    mean flow, control-representation pair (P_ctrl, p_ctrl), the optimal
    feedback policy, and its analytic payoff."""

    P_mfc: Trajectory
    p_mfc: Trajectory
    mean_flow: Trajectory
    P_ctrl: Trajectory
    p_ctrl: Trajectory
    P: Trajectory
    P_flow: Trajectory
    policy: AffinePolicy
    payoff: float


def solve_mfc(spec: LQModelSpec, grid: TimeGrid) -> MFCSolution:
    """Solve the planner problem: internalized-cost backward pair, planner
    flow, then the control pair giving the per-path feedback form.

    The planner offset equations carry q - L as forcing: the planner
    internalizes the linear population benefit, which the per-player systems
    never see.
    """
    ses = _session(spec, grid)
    rinv = ses.rinv
    d = spec.d

    P_mfc, p_mfc = _solve_quadratic_affine(
        spec,
        grid,
        state_cost=lambda t: spec.Q.at(t) + 2.0 * spec.Q_tilde.at(t) + spec.Q_bar.at(t),
        terminal_P=spec.H + 2.0 * spec.H_tilde + spec.H_bar,
        affine_src=lambda t: spec.q.at(t) - spec.L.at(t),
    )

    from .grids import HalfSampler

    closed_A = HalfSampler(
        grid,
        lambda t: spec.A.at(t)
        - spec.B.at(t) @ rinv.at(t) @ (spec.B.at(t).T @ P_mfc.at(t) + spec.S.at(t)),
    )
    closed_b = HalfSampler(
        grid, lambda t: spec.B.at(t) @ rinv.at(t) @ (spec.B.at(t).T @ p_mfc.at(t) + spec.r.at(t))
    )

    mean_flow = integrate_forward(
        lambda t, m: closed_A.at(t) @ m - closed_b.at(t), spec.initial.nu1, grid
    )

    P, P_flow = ses.P, ses.P_flow
    gainT_h = ses.sampler("gainT")

    if d == 1 and spec.k == 1:
        A_, B_, r_ = (_scalar_getter(c) for c in (spec.A, spec.B, spec.r))
        Qb_, Qt_ = _scalar_getter(spec.Q_bar), _scalar_getter(spec.Q_tilde)
        q_, L_ = _scalar_getter(spec.q), _scalar_getter(spec.L)

        def rhs(t, y):
            Pc, pc = y[0], y[1]
            a, b = A_(t), B_(t)
            gainT = float(gainT_h.at(t)[0, 0])
            dPc = -(
                Pc * float(closed_A.at(t)[0, 0]) + a * Pc + Qb_(t) + 2.0 * Qt_(t)
                - gainT * b * Pc
            )
            dpc = -(
                -Pc * float(closed_b.at(t)[0]) + a * pc + q_(t) - L_(t)
                - gainT * (b * pc + r_(t))
            )
            return np.array([dPc, dpc])

        yT = np.array([float(spec.H_bar[0, 0] + 2.0 * spec.H_tilde[0, 0]), 0.0])
        sol = integrate_backward(rhs, yT, grid)
        P_ctrl = Trajectory(grid, sol.values[:, 0, None, None], sol.derivs[:, 0, None, None])
        p_ctrl = Trajectory(grid, sol.values[:, 1, None], sol.derivs[:, 1, None])
    else:

        def rhs(t, y):
            Pc = y[: d * d].reshape(d, d)
            pc = y[d * d :]
            A = spec.A.at(t)
            B = spec.B.at(t)
            gainT = gainT_h.at(t)
            dPc = -(
                Pc @ closed_A.at(t)
                + A.T @ Pc
                + spec.Q_bar.at(t)
                + 2.0 * spec.Q_tilde.at(t)
                - gainT @ (B.T @ Pc)
            )
            dpc = -(
                -Pc @ closed_b.at(t)
                + A.T @ pc
                + spec.q.at(t)
                - spec.L.at(t)
                - gainT @ (B.T @ pc + spec.r.at(t))
            )
            return np.concatenate([dPc.ravel(), dpc])

        yT = np.concatenate([(spec.H_bar + 2.0 * spec.H_tilde).ravel(), np.zeros(d)])
        sol = integrate_backward(rhs, yT, grid)
        P_ctrl = Trajectory(
            grid, sol.values[:, : d * d].reshape(-1, d, d), sol.derivs[:, : d * d].reshape(-1, d, d)
        )
        p_ctrl = Trajectory(grid, sol.values[:, d * d :], sol.derivs[:, d * d :])

    def intercept(t):
        B = spec.B.at(t)
        return rinv.at(t) @ (B.T @ P_ctrl.at(t) @ mean_flow.at(t) + B.T @ p_ctrl.at(t) + spec.r.at(t))

    policy = AffinePolicy(
        gain_at=ses.gain_x_at,
        intercepts_at=(intercept,),
        scenario_blind=True,
        acl_half=ses.sampler("acl"),
    )
    report = conditional_moment_payoff(spec, grid, policy, [mean_flow], np.array([1.0]))
    return MFCSolution(
        P_mfc=P_mfc,
        p_mfc=p_mfc,
        mean_flow=mean_flow,
        P_ctrl=P_ctrl,
        p_ctrl=p_ctrl,
        P=P,
        P_flow=P_flow,
        policy=policy,
        payoff=report.payoff,
    )
