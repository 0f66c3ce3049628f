"""Equilibrium verdicts for scenario-law flows.

Two master inequalities are evaluated term by term:

* the commitment-optimality condition (no scenario-blind deviation improves
  the payoff), whose two sides are quadratic functionals of the law of the
  flow and its forcing; and
* the Nash-outperformance margin, equal to the payoff gap between the flow
  and the unique Nash point.

Expectations are finite weighted scenario sums; time integrals use the
composite Simpson helper so they match the integrator's accuracy.  A batch
evaluator vectorizes both verdicts over many constant-forcing laws at once
(scalar models), which is what region sweeps and acceptance grids use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grids import TimeGrid, Trajectory, integrate_backward, integrate_forward, simpson
from .model import LQModelSpec, sample_nodes
from .flows import CorrelatedFlow, ScenarioLaw, analytic_payoff_report, build_flow
from .riccati import MFCSolution, NESolution, RInverse, solve_mfc, solve_ne

__all__ = [
    "VERDICT_TOL",
    "OptimalityCheck",
    "OutperformanceCheck",
    "CceVerdict",
    "check_optimality",
    "check_outperformance",
    "deterministic_cce_probe",
    "evaluate",
    "evaluate_constant_delta_batch",
]

VERDICT_TOL = 1e-9
_BOUNDARY_FACTOR = 10.0


def _scale(*vals: float) -> float:
    return max(1.0, *(abs(v) for v in vals))


@dataclass(frozen=True)
class OptimalityCheck:
    lhs: float
    rhs: float
    is_cce: bool
    boundary: bool
    tol: float
    breakdown: dict

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class OutperformanceCheck:
    value: float
    outperforms: bool
    boundary: bool
    tol: float
    breakdown: dict


def _node_tables(spec: LQModelSpec, grid: TimeGrid, fb) -> dict:
    """Sample the coefficients and feedback quantities at the session nodes."""
    n1 = grid.steps + 1
    k = spec.k
    rinv = RInverse(spec)
    nodes = grid.nodes
    out = {
        "B": sample_nodes(spec.B, nodes),
        "R": sample_nodes(spec.R, nodes),
        "L": sample_nodes(spec.L, nodes),
        "q": sample_nodes(spec.q, nodes),
        "r": sample_nodes(spec.r, nodes),
        "Q_bar": sample_nodes(spec.Q_bar, nodes),
    }
    if spec.R.is_constant:
        out["Rinv"] = np.broadcast_to(rinv.at(0.0), (n1, k, k))
    else:
        out["Rinv"] = np.stack([rinv.at(t) for t in nodes])
    out["M"] = fb.quad_x.values
    out["N"] = fb.quad_cross.values
    out["G"] = fb.quad_flow.values
    out["gain_x"] = fb.gain_x.values
    out["gain_flow"] = fb.gain_flow.values
    return out


def _quad(Mat: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<Mat a, b> over leading axes: Mat (n,d,e), a (..., n, d), b (..., n, e)."""
    return np.einsum("...nd,nde,...ne->...n", a, Mat, b)


def check_optimality(flow: CorrelatedFlow, ne: NESolution | None = None) -> OptimalityCheck:
    """Evaluate both sides of the commitment-optimality inequality.

    The left side collects the dispersion and forcing costs of randomizing
    the flow; the right side the curvature gains the structural feedback
    realizes against the best deviation.  The flow is a valid equilibrium
    when lhs <= rhs up to a relative tolerance; verdicts within ten times
    the tolerance of equality are flagged as boundary cases.
    """
    spec, grid = flow.spec, flow.grid
    w = flow.weights
    tab = _node_tables(spec, grid, flow.feedback)
    mu = flow.mu_values()          # (S, n1, d)
    gap = flow.gap_values()        # (S, n1, d)
    emu = flow.mean_mu.values      # (n1, d)
    delta = flow.law.delta_nodes()  # (S, n1, k)
    theta_gain = flow.feedback.gain_const.values  # (n1, k)
    phi = flow.riccati.P.values
    psi = flow.riccati.P_flow.values
    h = grid.h

    dev = mu - emu[None]
    l_cross_var = w @ _quad(tab["N"], dev, dev)
    l_flow_var = 0.5 * (w @ _quad(tab["G"], mu, mu) - _quad(tab["G"], emu, emu))
    l_forcing = 0.5 * (w @ np.einsum("snk,nkl,snl->sn", delta, tab["Rinv"], delta))
    l_gain = -0.5 * _quad(tab["R"], theta_gain, theta_gain)
    lhs_T = float(w @ np.einsum("sd,de,se->s", dev[:, -1], spec.H_tilde, dev[:, -1]))
    breakdown = {
        "lhs_cross_dispersion": float(simpson(l_cross_var, h)),
        "lhs_flow_dispersion": float(simpson(l_flow_var, h)),
        "lhs_forcing_cost": float(simpson(l_forcing, h)),
        "lhs_gain_cost": float(simpson(l_gain, h)),
        "lhs_terminal_dispersion": lhs_T,
    }
    lhs = sum(breakdown.values())

    Bphi = np.einsum("ndk,nde->nke", tab["B"], phi)          # B^T phi
    Bphipsi = np.einsum("ndk,nde->nke", tab["B"], phi + psi)  # B^T (phi + psi)
    mu_gap = mu + gap
    r_curv = 0.5 * (w @ (_quad(tab["M"], mu_gap, mu_gap) - _quad(tab["M"], mu, mu)))
    # <N f, E[mu]> = E[mu]^T N f; N need not be symmetric
    r_cross_gap = w @ _quad(tab["N"], np.broadcast_to(emu, mu.shape), gap)
    qr = tab["q"] - np.einsum("nkd,nk->nd", tab["gain_x"], tab["r"])
    mean_gap = np.einsum("s,snd->nd", w, gap)
    r_lin_gap = np.einsum("nd,nd->n", qr, mean_gap)
    r_gain_mean = np.einsum("nke,ne,nk->n", Bphipsi, emu, theta_gain)
    rdel = np.einsum("nkl,snl->snk", tab["Rinv"], delta)
    r_forcing_mean = -(w @ np.einsum("nke,sne,snk->sn", Bphipsi, mu, rdel))
    r_gain_gap = w @ np.einsum("nke,sne,nk->sn", Bphi, gap, theta_gain)
    r_linear_gain = -(w @ np.einsum("nk,snk->sn", tab["r"], theta_gain[None] - rdel))
    gT = gap[:, -1]
    muT = mu[:, -1]
    rhs_T_quad = 0.5 * float(
        w
        @ (
            np.einsum("sd,de,se->s", muT + gT, spec.H, muT + gT)
            - np.einsum("sd,de,se->s", muT, spec.H, muT)
        )
    )
    rhs_T_cross = float(np.einsum("d,de,e->", w @ gT, spec.H_tilde.T, emu[-1]))
    rbreak = {
        "rhs_curvature_gain": float(simpson(r_curv, h)),
        "rhs_cross_gap": float(simpson(r_cross_gap, h)),
        "rhs_linear_gap": float(simpson(r_lin_gap, h)),
        "rhs_gain_mean": float(simpson(r_gain_mean, h)),
        "rhs_forcing_mean": float(simpson(r_forcing_mean, h)),
        "rhs_gain_gap": float(simpson(r_gain_gap, h)),
        "rhs_linear_gain": float(simpson(r_linear_gain, h)),
        "rhs_terminal_quad": rhs_T_quad,
        "rhs_terminal_cross": rhs_T_cross,
    }
    rhs = sum(rbreak.values())
    breakdown.update(rbreak)

    sc = _scale(lhs, rhs)
    is_cce = lhs <= rhs + VERDICT_TOL * sc
    boundary = abs(rhs - lhs) <= _BOUNDARY_FACTOR * VERDICT_TOL * sc
    return OptimalityCheck(
        lhs=float(lhs), rhs=float(rhs), is_cce=bool(is_cce), boundary=bool(boundary),
        tol=VERDICT_TOL, breakdown=breakdown,
    )


def check_outperformance(flow: CorrelatedFlow, ne: NESolution) -> OutperformanceCheck:
    """Evaluate the Nash-outperformance margin of the flow.

    The returned value equals the payoff gap (flow minus Nash) as an exact
    identity; it is arranged so that `value >= 0` means the flow pays at
    least as much as the Nash point.
    """
    spec, grid = flow.spec, flow.grid
    grid.require_same(ne.mean_flow.grid, "Nash solution")
    w = flow.weights
    tab = _node_tables(spec, grid, flow.feedback)
    mu = flow.mu_values()
    emu = flow.mean_mu.values
    delta = flow.law.delta_nodes()
    mhat = ne.mean_flow.values      # (n1, d)
    tg = ne.gain_offset.values      # (n1, k)
    phi = flow.riccati.P.values
    psi = flow.riccati.P_flow.values
    h = grid.h

    Bphi = np.einsum("ndk,nde->nke", tab["B"], phi)
    Bpsi = np.einsum("ndk,nde->nke", tab["B"], psi)
    rdel = np.einsum("nkl,snl->snk", tab["Rinv"], delta)
    mean_rdel = np.einsum("s,snk->nk", w, rdel)

    def gap_quad(Mat):
        return _quad(Mat, mhat, mhat) - w @ _quad(Mat, mu, mu)

    lin_vec = (
        tab["L"]
        - tab["q"]
        + np.einsum("nkd,nk->nd", tab["gain_x"] + tab["gain_flow"], tab["r"])
    )
    breakdown = {
        "benefit_quad": float(simpson(0.5 * gap_quad(tab["Q_bar"]), h)),
        "curvature_quad": float(simpson(0.5 * gap_quad(tab["M"]), h)),
        "flow_quad": float(simpson(0.5 * gap_quad(tab["G"]), h)),
        "cross_quad": float(simpson(gap_quad(tab["N"]), h)),
        "linear_mean": float(simpson(np.einsum("nd,nd->n", lin_vec, emu - mhat), h)),
        "gain_anchor": float(simpson(np.einsum("nke,ne,nk->n", Bphi, mhat, tg), h)),
        "forcing_state": float(simpson(-(w @ np.einsum("nke,sne,snk->sn", Bphi, mu, rdel)), h)),
        "forcing_flow": float(simpson(-(w @ np.einsum("nke,sne,snk->sn", Bpsi, mu, rdel)), h)),
        "flow_anchor": float(simpson(np.einsum("nke,ne,nk->n", Bpsi, mhat, tg), h)),
        "gain_vs_forcing": float(
            simpson(
                0.5 * (
                    _quad(tab["R"], tg, tg)
                    - w @ np.einsum("snk,nkl,snl->sn", delta, tab["Rinv"], delta)
                ),
                h,
            )
        ),
        "linear_gain": float(simpson(-np.einsum("nk,nk->n", tab["r"], tg - mean_rdel), h)),
    }
    mT, muT = mhat[-1], mu[:, -1]

    def term_quad(Mat):
        return float(mT @ Mat @ mT - w @ np.einsum("sd,de,se->s", muT, Mat, muT))

    breakdown["terminal_benefit"] = 0.5 * term_quad(spec.H_bar)
    breakdown["terminal_quad"] = 0.5 * term_quad(spec.H)
    breakdown["terminal_cross"] = term_quad(spec.H_tilde)

    value = sum(breakdown.values())
    sc = _scale(value)
    outperforms = value >= -VERDICT_TOL * sc
    boundary = abs(value) <= _BOUNDARY_FACTOR * VERDICT_TOL * sc
    return OutperformanceCheck(
        value=float(value), outperforms=bool(outperforms), boundary=bool(boundary),
        tol=VERDICT_TOL, breakdown=breakdown,
    )


@dataclass(frozen=True)
class CceVerdict:
    """Full verdict for one scenario law: both optimality sides, the
    outperformance margin, payoffs, tolerances and the term breakdowns."""

    optimality_lhs: float
    optimality_rhs: float
    is_cce: bool
    optimality_boundary: bool
    outperf_value: float
    outperforms_ne: bool
    outperf_boundary: bool
    payoffs: dict
    tol: float
    breakdown: dict = field(repr=False, default_factory=dict)

    def row(self) -> dict:
        """Flat record (CSV-ready) with all scalar fields."""
        out = {
            "optimality_lhs": self.optimality_lhs,
            "optimality_rhs": self.optimality_rhs,
            "is_cce": int(self.is_cce),
            "optimality_boundary": int(self.optimality_boundary),
            "outperf_value": self.outperf_value,
            "outperforms_ne": int(self.outperforms_ne),
            "outperf_boundary": int(self.outperf_boundary),
            "tol": self.tol,
        }
        for k, v in self.payoffs.items():
            out[f"payoff_{k}"] = v
        for k, v in self.breakdown.items():
            out[k] = v
        return out


def evaluate(
    spec: LQModelSpec,
    grid: TimeGrid,
    law: ScenarioLaw,
    ne: NESolution | None = None,
    mfc: MFCSolution | None = None,
) -> CceVerdict:
    """Build the flow for `law` and run both master checks plus all payoffs."""
    flow = build_flow(spec, grid, law)
    ne = ne or solve_ne(spec, grid)
    mfc = mfc or solve_mfc(spec, grid)
    opt = check_optimality(flow)
    out = check_outperformance(flow, ne)
    j_flow = analytic_payoff_report(flow).payoff
    j_dev = analytic_payoff_report(flow, flow.best_deviation_policy()).payoff
    payoffs = {"flow": j_flow, "ne": ne.payoff, "mfc": mfc.payoff, "deviation": j_dev}
    breakdown = {f"opt_{k}": v for k, v in opt.breakdown.items()}
    breakdown.update({f"outperf_{k}": v for k, v in out.breakdown.items()})
    return CceVerdict(
        optimality_lhs=opt.lhs,
        optimality_rhs=opt.rhs,
        is_cce=opt.is_cce,
        optimality_boundary=opt.boundary,
        outperf_value=out.value,
        outperforms_ne=out.outperforms,
        outperf_boundary=out.boundary,
        payoffs=payoffs,
        tol=VERDICT_TOL,
        breakdown=breakdown,
    )


@dataclass(frozen=True)
class ProbeResult:
    is_cce: bool
    distance_to_ne_flow: float
    optimality: OptimalityCheck


def deterministic_cce_probe(
    spec: LQModelSpec, grid: TimeGrid, law: ScenarioLaw, ne: NESolution | None = None
) -> ProbeResult:
    """Check whether a single-scenario (deterministic) flow passes optimality.

    Deterministic flows can only pass when they coincide with the Nash flow;
    the distance to it is reported alongside the verdict.
    """
    if law.n_scenarios != 1:
        raise ValueError("the deterministic probe expects a single-scenario law")
    flow = build_flow(spec, grid, law)
    ne = ne or solve_ne(spec, grid)
    opt = check_optimality(flow)
    dist = float(np.max(np.linalg.norm(flow.mus[0].values - ne.mean_flow.values, axis=1)))
    return ProbeResult(is_cce=opt.is_cce, distance_to_ne_flow=dist, optimality=opt)


# ---------------------------------------------------------------------------
# Batched evaluation for scalar models with constant per-scenario forcing.
# ---------------------------------------------------------------------------


class _ScalarHalfTables:
    """Scalar-model coefficient and feedback curves sampled on the half grid."""

    def __init__(self, spec: LQModelSpec, grid: TimeGrid):
        from .riccati import _session

        ses = _session(spec, grid)
        rinv = ses.rinv
        half = np.linspace(0.0, grid.horizon, 2 * grid.steps + 1)
        self._scale = 2.0 * grid.steps / grid.horizon

        def samp(fn):
            return np.array([np.asarray(fn(t)).reshape(-1)[0] for t in half])

        self.A = samp(spec.A.at)
        self.B = samp(spec.B.at)
        self.S = samp(spec.S.at)
        self.q = samp(spec.q.at)
        self.r = samp(spec.r.at)
        self.L = samp(spec.L.at)
        self.Q = samp(spec.Q.at)
        self.Qt = samp(spec.Q_tilde.at)
        self.Qb = samp(spec.Q_bar.at)
        self.R = samp(spec.R.at)
        self.Rin = samp(rinv.at)
        self.sig2 = samp(lambda t: spec.sigma.at(t) ** 2)
        self.phi = samp(lambda t: float(ses.P.at(t)[0, 0]))
        self.psi = samp(lambda t: float(ses.P_flow.at(t)[0, 0]))
        self.gx = self.Rin * (self.B * self.phi + self.S)
        self.gf = self.Rin * self.B * self.psi
        self.gainT = (self.phi * self.B + self.S) * self.Rin  # (phi B + S) R^{-1}
        self.M = self.Q + self.gx * self.R * self.gx - 2.0 * self.gx * self.S
        self.N = self.Qt + self.gf * self.R * self.gx - self.gf * self.S
        self.G = self.gf * self.R * self.gf

    def idx(self, t: float) -> int:
        return int(round(t * self._scale))


def evaluate_constant_delta_batch(
    spec: LQModelSpec,
    grid: TimeGrid,
    deltas: np.ndarray,
    weights: np.ndarray,
    ne: NESolution | None = None,
    chunk: int = 512,
) -> dict:
    """Vectorized verdicts for many laws at once (scalar models only).

    `deltas` has shape (n_laws, n_scenarios): constant forcing per scenario.
    Every law shares the scenario `weights`.  Returns arrays keyed by
    'lhs', 'rhs', 'is_cce', 'outperf_value', 'outperforms', 'payoff_flow',
    'payoff_deviation'.  The formulas are exactly those of the per-flow
    checks, evaluated with a leading law axis; agreement is pinned by tests.
    """
    if spec.d != 1 or spec.k != 1:
        raise ValueError("the batch evaluator supports scalar models only")
    deltas = np.asarray(deltas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    L = deltas.shape[0]
    ne = ne or solve_ne(spec, grid)
    tabs = _ScalarHalfTables(spec, grid)

    keys = [
        "lhs", "rhs", "is_cce", "boundary", "outperf_value", "outperforms",
        "payoff_flow", "payoff_deviation",
    ]
    out = {k: np.empty(L, dtype=(bool if k in ("is_cce", "boundary", "outperforms") else float)) for k in keys}
    for lo in range(0, L, chunk):
        hi = min(lo + chunk, L)
        part = _batch_chunk(spec, grid, deltas[lo:hi], weights, ne, tabs)
        for k in keys:
            out[k][lo:hi] = part[k]
    return out


def _batch_chunk(spec, grid, deltas, weights, ne, tb: _ScalarHalfTables):
    n1 = grid.steps + 1
    L, S = deltas.shape
    w = weights
    idx = tb.idx
    edel = deltas @ w  # (L,)
    nu1 = float(spec.initial.nu1[0])

    def emu_rhs(t, y):
        i = idx(t)
        return (tb.A[i] - tb.B[i] * (tb.gx[i] + tb.gf[i])) * y - tb.B[i] * tb.Rin[i] * edel

    emu = integrate_forward(emu_rhs, np.full(L, nu1), grid)

    def p_rhs(t, p):
        i = idx(t)
        dmu = (tb.A[i] - tb.B[i] * (tb.gx[i] + tb.gf[i])) * emu.at(t) - tb.B[i] * tb.Rin[i] * edel
        return -(tb.psi[i] * dmu + tb.A[i] * p + tb.q[i] - tb.gainT[i] * (tb.B[i] * p + tb.r[i]))

    p_const = integrate_backward(p_rhs, np.zeros(L), grid)

    def fwd_rhs(t, y):
        y = y.reshape(4, L, S)
        mu, gap, m, mdev = y
        i = idx(t)
        acl = tb.A[i] - tb.B[i] * tb.gx[i]
        bri = tb.B[i] * tb.Rin[i]
        bgf = tb.B[i] * tb.gf[i]
        gc = tb.Rin[i] * (tb.B[i] * p_const.at(t) + tb.r[i])  # (L,)
        em = emu.at(t)  # (L,)
        dmu = (acl - bgf) * mu - bri * deltas
        dgap = acl * gap + bgf * (mu - em[:, None]) + bri * deltas - (tb.B[i] * gc)[:, None]
        dm = acl * m - (bgf * mu + bri * deltas)
        dmdev = acl * mdev - (bgf * em + tb.B[i] * gc)[:, None]
        return np.stack([dmu, dgap, dm, dmdev]).reshape(-1)

    y0 = np.concatenate(
        [np.full(L * S, nu1), np.zeros(L * S), np.full(L * S, nu1), np.full(L * S, nu1)]
    )
    sol = integrate_forward(fwd_rhs, y0, grid)
    tr = sol.values.reshape(n1, 4, L, S)
    mu, gap, m, mdev = tr[:, 0], tr[:, 1], tr[:, 2], tr[:, 3]  # each (n1, L, S)

    def V_rhs(t, v):
        i = idx(t)
        return 2.0 * (tb.A[i] - tb.B[i] * tb.gx[i]) * v + tb.sig2[i]

    V = integrate_forward(V_rhs, np.array(float(spec.initial.covariance[0, 0])), grid).values

    Bn, Sn, qn, rn, Ln = tb.B[::2], tb.S[::2], tb.q[::2], tb.r[::2], tb.L[::2]
    Rin, Rn = tb.Rin[::2], tb.R[::2]
    phin, psin = tb.phi[::2], tb.psi[::2]
    gxn, gfn = tb.gx[::2], tb.gf[::2]
    Qbn, Qtn, Qn = tb.Qb[::2], tb.Qt[::2], tb.Q[::2]
    Mn, Nn, Gn = tb.M[::2], tb.N[::2], tb.G[::2]
    thn = Rin[:, None] * (Bn[:, None] * p_const.values + rn[:, None])  # (n1, L) gain offsets
    emun = emu.values  # (n1, L)
    h = grid.h

    def col(x):
        return x[:, None, None]

    dev = mu - emun[:, :, None]
    dn = deltas[None, :, :]  # (1, L, S) constant forcing

    lhs_run = (
        (dev * dev) @ w * Nn[:, None]
        + 0.5 * (((mu * mu) @ w) * Gn[:, None] - Gn[:, None] * emun**2)
        + 0.5 * Rin[:, None] * ((dn * dn) @ w) * np.ones((n1, 1))
        - 0.5 * Rn[:, None] * thn**2
    )
    Ht = float(spec.H_tilde[0, 0])
    lhs = simpson(lhs_run, h) + Ht * ((dev[-1] ** 2) @ w)

    mg = mu + gap
    Bphin = Bn * phin
    Bpsn = Bn * psin
    rdeln = Rin[:, None, None] * dn
    rhs_run = (
        0.5 * Mn[:, None] * (((mg * mg) @ w) - ((mu * mu) @ w))
        + Nn[:, None] * (gap @ w) * emun
        + (qn - gxn * rn)[:, None] * (gap @ w)
        + (Bphin + Bpsn)[:, None] * emun * thn
        - (Bphin + Bpsn)[:, None] * ((mu * rdeln) @ w)
        + Bphin[:, None] * (gap @ w) * thn
        - rn[:, None] * (thn - rdeln @ w)
    )
    Hm = float(spec.H[0, 0])
    rhs = (
        simpson(rhs_run, h)
        + 0.5 * Hm * (((mg[-1] ** 2) @ w) - ((mu[-1] ** 2) @ w))
        + Ht * (gap[-1] @ w) * emun[-1]
    )

    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    is_cce = lhs <= rhs + VERDICT_TOL * scale
    boundary = np.abs(rhs - lhs) <= _BOUNDARY_FACTOR * VERDICT_TOL * scale

    # Nash-outperformance margin
    mhat = ne.mean_flow.values[:, 0]      # (n1,)
    tgn = ne.gain_offset.values[:, 0]     # (n1,)

    def gq(Mat):
        return Mat[:, None] * (mhat[:, None] ** 2 - (mu * mu) @ w)

    lin_vec = Ln - qn + (gxn + gfn) * rn
    out_run = (
        0.5 * gq(Qbn)
        + 0.5 * gq(Mn)
        + 0.5 * gq(Gn)
        + gq(Nn)
        + lin_vec[:, None] * (emun - mhat[:, None])
        + Bphin[:, None] * mhat[:, None] * tgn[:, None]
        - Bphin[:, None] * ((mu * rdeln) @ w)
        - Bpsn[:, None] * ((mu * rdeln) @ w)
        + Bpsn[:, None] * mhat[:, None] * tgn[:, None]
        + 0.5 * (Rn[:, None] * tgn[:, None] ** 2 - Rin[:, None] * ((dn * dn) @ w) * np.ones((n1, 1)))
        - rn[:, None] * (tgn[:, None] - rdeln @ w)
    )
    Hb = float(spec.H_bar[0, 0])
    value = simpson(out_run, h) + (0.5 * Hb + 0.5 * Hm + Ht) * (
        mhat[-1] ** 2 - (mu[-1] ** 2) @ w
    )
    vscale = np.maximum(1.0, np.abs(value))
    outperforms = value >= -VERDICT_TOL * vscale

    # payoffs of the committed strategy and the best deviation
    def payoff(mean, intercept):
        # intercept (n1, L, S): policy u = -(gx X + intercept)
        u_mean = -(gxn[:, None, None] * mean + intercept)
        u_sq = gxn[:, None, None] ** 2 * col(V) + (gxn[:, None, None] * mean + intercept) ** 2
        x_u = -(gxn[:, None, None] * (col(V) + mean**2) + mean * intercept)
        x_sq = col(V) + mean**2
        run = (
            Ln[:, None, None] * mu
            - 0.5 * Qbn[:, None, None] * mu**2
            - (
                0.5 * Qn[:, None, None] * x_sq
                + Qtn[:, None, None] * mean * mu
                + qn[:, None, None] * mean
                + 0.5 * Rn[:, None, None] * u_sq
                + Sn[:, None, None] * x_u
                + rn[:, None, None] * u_mean
            )
        )
        term = (
            -0.5 * Hb * mu[-1] ** 2
            - 0.5 * Hm * (V[-1] + mean[-1] ** 2)
            - Ht * mean[-1] * mu[-1]
        )
        return (simpson(run, h) + term) @ w

    committed_int = gfn[:, None, None] * mu + rdeln
    deviation_int = (gfn[:, None] * emun + thn)[:, :, None] * np.ones((1, 1, S))
    j_flow = payoff(m, committed_int)
    j_dev = payoff(mdev, deviation_int)

    return {
        "lhs": lhs,
        "rhs": rhs,
        "is_cce": is_cce,
        "boundary": boundary,
        "outperf_value": value,
        "outperforms": outperforms,
        "payoff_flow": j_flow,
        "payoff_deviation": j_dev,
    }
