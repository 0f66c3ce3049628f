"""Analytic payoff evaluation through conditional moment ODEs.

For an affine feedback control u = -(K(t) X + c(t)) the state stays Gaussian
conditionally on the moderator's scenario, so the payoff is a quadratic
functional of the conditional mean m, the conditional covariance V and the
flow.  This module integrates (m, V) per scenario and evaluates the payoff
and its running integrand without any sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grids import HalfSampler, TimeGrid, Trajectory, integrate_forward, simpson
from .model import LQModelSpec, sample_nodes

__all__ = ["AffinePolicy", "MomentState", "PayoffReport", "conditional_moment_payoff"]


@dataclass(frozen=True)
class AffinePolicy:
    """Feedback u(t, x) = -(gain(t) x + intercept(t)).

    `intercepts_at` holds one callable per scenario; a scenario-blind policy
    (anything a deviating player may use) carries exactly one intercept that
    applies in every scenario and never reads the realized flow.  A policy
    built from cached session curves can carry its closed-loop matrix
    A - B gain pre-sampled on the half grid in `acl_half`.
    """

    gain_at: Callable[[float], np.ndarray]
    intercepts_at: tuple
    scenario_blind: bool = False
    acl_half: object = None

    def intercept_for(self, s: int) -> Callable[[float], np.ndarray]:
        return self.intercepts_at[0] if self.scenario_blind else self.intercepts_at[s]

    def n_intercepts(self) -> int:
        return len(self.intercepts_at)


@dataclass(frozen=True)
class MomentState:
    """Per-scenario conditional mean (S, N+1, d) and shared/state covariance (N+1, d, d)."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class PayoffReport:
    payoff: float
    per_scenario: np.ndarray       # (S,) conditional payoffs
    running: np.ndarray            # (S, N+1) expected running integrand per scenario
    weights: np.ndarray
    moments: MomentState


def conditional_moment_payoff(
    spec: LQModelSpec,
    grid: TimeGrid,
    policy: AffinePolicy,
    mus: Sequence[Trajectory],
    weights: np.ndarray,
) -> PayoffReport:
    """Evaluate the payoff of `policy` against the scenario flows `mus`.

    The conditional mean solves m' = (A - B K) m - B c_s and the conditional
    covariance V' = (A - B K) V + V (A - B K)^T + sigma sigma^T, shared across
    scenarios because the gain never depends on the scenario.  The time
    integral uses composite Simpson so the quadrature error matches the
    integrator's order.
    """
    d, k = spec.d, spec.k
    S = len(mus)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (S,):
        raise ValueError(f"need one weight per scenario, got {weights.shape} for {S} scenarios")
    for mu in mus:
        grid.require_same(mu.grid, "scenario flow")
    if policy.scenario_blind and policy.n_intercepts() != 1:
        raise ValueError("a scenario-blind policy must carry exactly one intercept")
    if not policy.scenario_blind and policy.n_intercepts() != S:
        raise ValueError(
            f"policy carries {policy.n_intercepts()} intercepts for {S} scenarios"
        )

    m0 = np.tile(spec.initial.nu1, (S, 1))
    V0 = spec.initial.covariance

    acl = policy.acl_half or HalfSampler(
        grid, lambda t: spec.A.at(t) - spec.B.at(t) @ policy.gain_at(t)
    )
    bcs = HalfSampler(
        grid,
        lambda t: np.stack([spec.B.at(t) @ policy.intercept_for(s)(t) for s in range(S)]),
    )
    sig2 = HalfSampler(grid, lambda t: spec.sigma.at(t) @ spec.sigma.at(t).T)

    def rhs(t, y):
        m = y[: S * d].reshape(S, d)
        V = y[S * d :].reshape(d, d)
        Acl = acl.at(t)
        dm = m @ Acl.T - bcs.at(t)
        dV = Acl @ V + V @ Acl.T + sig2.at(t)
        return np.concatenate([dm.ravel(), dV.ravel()])

    y0 = np.concatenate([m0.ravel(), V0.ravel()])
    sol = integrate_forward(rhs, y0, grid)
    n1 = grid.steps + 1
    mean = sol.values[:, : S * d].reshape(n1, S, d).transpose(1, 0, 2)  # (S, N+1, d)
    cov = sol.values[:, S * d :].reshape(n1, d, d)

    nodes = grid.nodes
    Kn = np.stack([policy.gain_at(t) for t in nodes])
    cn = np.empty((S, n1, k))
    for s in range(S):
        fn = policy.intercept_for(s)
        for i, t in enumerate(nodes):
            cn[s, i] = fn(t)
    Ln = sample_nodes(spec.L, nodes)
    qn = sample_nodes(spec.q, nodes)
    rn = sample_nodes(spec.r, nodes)
    Qn = sample_nodes(spec.Q, nodes)
    Qbn = sample_nodes(spec.Q_bar, nodes)
    Qtn = sample_nodes(spec.Q_tilde, nodes)
    Rn = sample_nodes(spec.R, nodes)
    Sn = sample_nodes(spec.S, nodes)

    mu_n = np.stack([mu.values for mu in mus])  # (S, N+1, d)

    # E[u] = -(K m + c); second moments via tr(. V) corrections
    Km = np.einsum("nkd,snd->snk", Kn, mean)
    u_mean = -(Km + cn)
    quad_R_V = np.einsum("nkd,nkl,nle,nde->n", Kn, Rn, Kn, cov)  # tr(K^T R K V)
    Ru = np.einsum("nkl,snl->snk", Rn, Km + cn)
    quad_R_m = np.einsum("snk,snk->sn", Km + cn, Ru)
    quad_S_V = np.einsum("nkd,nke,ned->n", Sn, Kn, cov)  # tr(S^T K V)
    Sx = np.einsum("nkd,snd->snk", Sn, mean)
    cross_S = -(np.einsum("snk,snk->sn", Sx, Km + cn) + quad_S_V[None, :])

    quad_Q_V = np.einsum("nde,ned->n", Qn, cov)  # tr(Q V)
    quad_Q_m = np.einsum("snd,nde,sne->sn", mean, Qn, mean)
    benefit = np.einsum("nd,snd->sn", Ln, mu_n) - 0.5 * np.einsum(
        "snd,nde,sne->sn", mu_n, Qbn, mu_n
    )
    cross_Qt = np.einsum("snd,nde,sne->sn", mean, np.transpose(Qtn, (0, 2, 1)), mu_n)
    lin_q = np.einsum("nd,snd->sn", qn, mean)
    lin_r = np.einsum("nk,snk->sn", rn, u_mean)

    running = benefit - (
        0.5 * (quad_Q_V[None, :] + quad_Q_m)
        + cross_Qt
        + lin_q
        + 0.5 * (quad_R_V[None, :] + quad_R_m)
        + cross_S
        + lin_r
    )

    mT, VT, muT = mean[:, -1], cov[-1], mu_n[:, -1]
    terminal = (
        -0.5 * np.einsum("sd,de,se->s", muT, spec.H_bar, muT)
        - 0.5 * (np.trace(spec.H @ VT) + np.einsum("sd,de,se->s", mT, spec.H, mT))
        - np.einsum("sd,de,se->s", mT, spec.H_tilde.T, muT)
    )

    per_scenario = simpson(running.T, grid.h) + terminal
    payoff = float(weights @ per_scenario)
    return PayoffReport(
        payoff=payoff,
        per_scenario=np.asarray(per_scenario, dtype=float).reshape(S),
        running=running,
        weights=weights,
        moments=MomentState(mean=mean, cov=cov),
    )
