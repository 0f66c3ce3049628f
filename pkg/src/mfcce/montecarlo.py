"""Monte Carlo verification of the analytic layer.

Paths follow the controlled state equation under Euler-Maruyama.  Every
path owns fixed counter-based substreams (one for its noise, one for its
scenario draw), so results are bit-identical across runs, across block
partitionings, and across worker counts; committed and deviating runs with
the same configuration consume identical noise, which makes paired payoff
differences a common-random-number estimator.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .grids import TimeGrid
from .model import sample_nodes
from .moments import AffinePolicy
from .flows import CorrelatedFlow

__all__ = ["SimConfig", "SimReport", "simulate_flow", "simulate_deviation", "worker_count"]

_BLOCK = 4096  # paths per processing block; fixed so reductions are reproducible


def worker_count() -> int:
    """Worker cap from MFCCE_THREADS (0 means auto; unset means 1)."""
    raw = os.environ.get("MFCCE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


@dataclass(frozen=True)
class SimConfig:
    paths: int
    seed: int = 42
    grid: TimeGrid | None = None
    antithetic: bool = False

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("need at least two paths")
        if self.antithetic and self.paths % 2 != 0:
            raise ValueError("antithetic sampling needs an even number of paths")


@dataclass(frozen=True)
class SimReport:
    """Sampling estimates with standard errors and consistency diagnostics."""

    payoff: float
    payoff_se: float
    scenario_means: np.ndarray         # (S, N+1, d) sample conditional means
    scenario_se: np.ndarray            # (S, N+1) standard error of the mean norm
    scenario_counts: np.ndarray        # (S,) paths per scenario
    scenario_payoffs: np.ndarray       # (S,) payoff estimate per scenario
    consistency_resid: float           # max_t |sample mean - flow| over scenarios
    consistency_resid_se_units: float  # the same residual in standard-error units
    paths: int
    seed: int
    committed_payoff: float | None = None
    committed_se: float | None = None
    gap: float | None = None           # deviating minus committed payoff (paired)
    gap_se: float | None = None


def _path_streams(seed: int, start: int, count: int, n_normals: int, antithetic: bool):
    """Noise and scenario draws for paths [start, start+count).

    Path i draws from Philox streams keyed (seed, 2 i) for noise and
    (seed, 2 i + 1) for its scenario uniform.  An antithetic partner 2j+1
    consumes no streams of its own: it negates partner 2j's Gaussians and
    reflects its scenario uniform (u -> 1-u), which pairs opposite
    scenarios and kills the between-scenario variance.
    """
    normals = np.empty((count, n_normals))
    uniforms = np.empty(count)
    for j in range(count):
        i = start + j
        src = i - 1 if antithetic and i % 2 == 1 else i
        if antithetic and i % 2 == 1 and j >= 1:
            normals[j] = -normals[j - 1]
            uniforms[j] = 1.0 - uniforms[j - 1]
            continue
        gen = np.random.Generator(np.random.Philox(key=[seed, 2 * src]))
        draw = gen.standard_normal(n_normals)
        normals[j] = -draw if src != i else draw
        sgen = np.random.Generator(np.random.Philox(key=[seed, 2 * src + 1]))
        u = sgen.random()
        uniforms[j] = 1.0 - u if src != i else u
    return normals, uniforms


@dataclass
class _PolicyTables:
    gain: np.ndarray        # (N+1, k, d)
    intercepts: np.ndarray  # (S or 1, N+1, k)
    blind: bool


def _policy_tables(policy: AffinePolicy, grid: TimeGrid, n_scen: int) -> _PolicyTables:
    nodes = grid.nodes
    gain = np.stack([policy.gain_at(t) for t in nodes])
    count = 1 if policy.scenario_blind else n_scen
    inter = np.empty((count, len(nodes), gain.shape[1]))
    for s in range(count):
        fn = policy.intercept_for(s)
        for i, t in enumerate(nodes):
            inter[s, i] = fn(t)
    return _PolicyTables(gain=gain, intercepts=inter, blind=policy.scenario_blind)


class _Driver:
    """Per-run constants: coefficient node tables, flow values, initial law."""

    def __init__(self, flow: CorrelatedFlow, grid: TimeGrid):
        spec = flow.spec
        nodes = grid.nodes
        self.spec = spec
        self.grid = grid
        self.d, self.k = spec.d, spec.k
        self.S = flow.law.n_scenarios
        self.A = sample_nodes(spec.A, nodes)
        self.B = sample_nodes(spec.B, nodes)
        self.sig = sample_nodes(spec.sigma, nodes)
        self.L = sample_nodes(spec.L, nodes)
        self.q = sample_nodes(spec.q, nodes)
        self.r = sample_nodes(spec.r, nodes)
        self.Q = sample_nodes(spec.Q, nodes)
        self.Qb = sample_nodes(spec.Q_bar, nodes)
        self.QtT = np.transpose(sample_nodes(spec.Q_tilde, nodes), (0, 2, 1))
        self.R = sample_nodes(spec.R, nodes)
        self.Scoef = sample_nodes(spec.S, nodes)
        self.mu = flow.mu_values()  # (S, N+1, d)
        self.weights_cum = np.cumsum(flow.law.weights)
        init = spec.initial
        self.nu1 = init.nu1
        cov = init.covariance
        if init.kind == "point-mass" or np.allclose(cov, 0.0):
            self.chol = None
        else:
            ev, vec = np.linalg.eigh(0.5 * (cov + cov.T))
            self.chol = vec @ np.diag(np.sqrt(np.clip(ev, 0.0, None)))
        h = grid.h
        self.trap = np.full(grid.steps + 1, h)
        self.trap[0] = self.trap[-1] = 0.5 * h

    def advance(self, tables: _PolicyTables, xi, dW, scen, accum=None):
        """Euler-Maruyama over the grid; returns per-path payoffs.

        With `accum = (X_sum, X_sq)` the per-scenario mean statistics are
        accumulated along the way.
        """
        if self.d == 1 and self.k == 1:
            return self._advance_scalar(tables, xi, dW, scen, accum)
        n = self.grid.steps
        h = self.grid.h
        count = xi.shape[0]
        X = xi.copy()
        pay = np.zeros(count)
        idx = np.zeros(count, dtype=int) if tables.blind else scen
        masks = None
        if accum is not None:
            masks = [scen == s for s in range(self.S)]
        for i in range(n + 1):
            u = -(X @ tables.gain[i].T + tables.intercepts[idx, i])
            mu_i = self.mu[scen, i]
            benefit = mu_i @ self.L[i] - 0.5 * np.einsum("pd,de,pe->p", mu_i, self.Qb[i], mu_i)
            cost = (
                0.5 * np.einsum("pd,de,pe->p", X, self.Q[i], X)
                + np.einsum("pd,de,pe->p", X, self.QtT[i], mu_i)
                + X @ self.q[i]
                + 0.5 * np.einsum("pk,kl,pl->p", u, self.R[i], u)
                + np.einsum("pk,kd,pd->p", u, self.Scoef[i], X)
                + u @ self.r[i]
            )
            pay += self.trap[i] * (benefit - cost)
            if accum is not None:
                X_sum, X_sq = accum
                for s, sel in enumerate(masks):
                    if sel.any():
                        Xs = X[sel]
                        X_sum[s, i] += Xs.sum(axis=0)
                        X_sq[s, i] += float(np.einsum("pd,pd->", Xs, Xs))
            if i < n:
                X = X + h * (X @ self.A[i].T + u @ self.B[i].T) + dW[:, i] @ self.sig[i].T
        mu_T = self.mu[scen, -1]
        spec = self.spec
        pay += (
            -0.5 * np.einsum("pd,de,pe->p", mu_T, spec.H_bar, mu_T)
            - 0.5 * np.einsum("pd,de,pe->p", X, spec.H, X)
            - np.einsum("pd,de,pe->p", X, spec.H_tilde.T, mu_T)
        )
        return pay

    def _advance_scalar(self, tables: _PolicyTables, xi, dW, scen, accum=None):
        """Elementwise specialization of `advance` for scalar models."""
        n = self.grid.steps
        h = self.grid.h
        count = xi.shape[0]
        A = self.A[:, 0, 0]
        B = self.B[:, 0, 0]
        sig = self.sig[:, 0, 0]
        L = self.L[:, 0]
        q = self.q[:, 0]
        r = self.r[:, 0]
        Q = self.Q[:, 0, 0]
        Qb = self.Qb[:, 0, 0]
        Qt = self.QtT[:, 0, 0]
        R = self.R[:, 0, 0]
        Sc = self.Scoef[:, 0, 0]
        gain = tables.gain[:, 0, 0]
        inter = tables.intercepts[:, :, 0]
        mu = self.mu[:, :, 0]
        dw = dW[:, :, 0]
        X = xi[:, 0].copy()
        pay = np.zeros(count)
        idx = np.zeros(count, dtype=int) if tables.blind else scen
        masks = [scen == s for s in range(self.S)] if accum is not None else None
        for i in range(n + 1):
            u = -(gain[i] * X + inter[idx, i])
            mu_i = mu[scen, i]
            running = (
                L[i] * mu_i
                - 0.5 * Qb[i] * mu_i * mu_i
                - (
                    0.5 * Q[i] * X * X
                    + Qt[i] * X * mu_i
                    + q[i] * X
                    + 0.5 * R[i] * u * u
                    + Sc[i] * u * X
                    + r[i] * u
                )
            )
            pay += self.trap[i] * running
            if accum is not None:
                X_sum, X_sq = accum
                for s, sel in enumerate(masks):
                    if sel.any():
                        Xs = X[sel]
                        X_sum[s, i, 0] += Xs.sum()
                        X_sq[s, i] += float(Xs @ Xs)
            if i < n:
                X = X + h * (A[i] * X + B[i] * u) + sig[i] * dw[:, i]
        mu_T = mu[scen, -1]
        spec = self.spec
        pay += (
            -0.5 * float(spec.H_bar[0, 0]) * mu_T * mu_T
            - 0.5 * float(spec.H[0, 0]) * X * X
            - float(spec.H_tilde[0, 0]) * X * mu_T
        )
        return pay


def _mean_se(x: np.ndarray, antithetic: bool) -> tuple[float, float]:
    units = 0.5 * (x[0::2] + x[1::2]) if antithetic else x
    return float(units.mean()), float(units.std(ddof=1) / np.sqrt(len(units)))


def _simulate(flow: CorrelatedFlow, cfg: SimConfig, policy: AffinePolicy, paired: bool) -> SimReport:
    grid = cfg.grid or flow.grid
    flow.grid.require_same(grid, "simulation grid")
    drv = _Driver(flow, grid)
    d, S, n = drv.d, drv.S, grid.steps
    pol = _policy_tables(policy, grid, S)
    com = _policy_tables(flow.committed_policy(), grid, S) if paired else None
    sqh = np.sqrt(grid.h)

    def run_block(start: int, count: int) -> dict:
        normals, uniforms = _path_streams(cfg.seed, start, count, d + n * d, cfg.antithetic)
        scen = np.minimum(np.searchsorted(drv.weights_cum, uniforms, side="right"), S - 1)
        xi = np.tile(drv.nu1, (count, 1))
        if drv.chol is not None:
            xi = xi + normals[:, :d] @ drv.chol.T
        dW = normals[:, d:].reshape(count, n, d) * sqh
        X_sum = np.zeros((S, n + 1, d))
        X_sq = np.zeros((S, n + 1))
        pay = drv.advance(pol, xi, dW, scen, accum=(X_sum, X_sq))
        out = {"pay": pay, "scen": scen, "X_sum": X_sum, "X_sq": X_sq}
        if paired:
            out["pay_committed"] = drv.advance(com, xi, dW, scen)
        return out

    blocks = [(s, min(_BLOCK, cfg.paths - s)) for s in range(0, cfg.paths, _BLOCK)]
    workers = worker_count()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda blk: run_block(*blk), blocks))
    else:
        results = [run_block(*blk) for blk in blocks]

    pay = np.concatenate([res["pay"] for res in results])
    scen_all = np.concatenate([res["scen"] for res in results])
    X_sum = np.sum([res["X_sum"] for res in results], axis=0)
    X_sq = np.sum([res["X_sq"] for res in results], axis=0)
    counts = np.bincount(scen_all, minlength=S)

    payoff, payoff_se = _mean_se(pay, cfg.antithetic)
    scen_payoffs = np.array(
        [pay[scen_all == s].mean() if counts[s] else np.nan for s in range(S)]
    )
    safe = np.maximum(counts, 1)
    means = X_sum / safe[:, None, None]
    var = np.maximum(X_sq / safe[:, None] - np.einsum("snd,snd->sn", means, means), 0.0)
    se = np.sqrt(var / safe[:, None])
    resid = np.linalg.norm(means - drv.mu, axis=2)
    resid = np.where(counts[:, None] > 0, resid, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        resid_units = resid / np.where(se > 0, se, np.inf)

    report = SimReport(
        payoff=payoff,
        payoff_se=payoff_se,
        scenario_means=means,
        scenario_se=se,
        scenario_counts=counts,
        scenario_payoffs=scen_payoffs,
        consistency_resid=float(np.nanmax(resid)),
        consistency_resid_se_units=float(np.nanmax(resid_units)),
        paths=cfg.paths,
        seed=cfg.seed,
    )
    if paired:
        pay_c = np.concatenate([res["pay_committed"] for res in results])
        cpay, cse = _mean_se(pay_c, cfg.antithetic)
        gap, gap_se = _mean_se(pay - pay_c, cfg.antithetic)
        report = replace(report, committed_payoff=cpay, committed_se=cse, gap=gap, gap_se=gap_se)
    return report


def simulate_flow(flow: CorrelatedFlow, cfg: SimConfig) -> SimReport:
    """Estimate the committed payoff and the consistency residual by sampling."""
    return _simulate(flow, cfg, flow.committed_policy(), paired=False)


def simulate_deviation(
    flow: CorrelatedFlow, cfg: SimConfig, deviation: AffinePolicy | None = None
) -> SimReport:
    """Estimate a scenario-blind deviation's payoff against the flow.

    The deviation must not read the realized scenario; scenario-aware
    policies are rejected.  The committed strategy is re-simulated on the
    same noise, so the report carries the paired payoff gap (deviating
    minus committed) and its standard error.
    """
    deviation = deviation or flow.best_deviation_policy()
    if not deviation.scenario_blind:
        raise ValueError("a deviation cannot depend on the moderator's scenario")
    return _simulate(flow, cfg, deviation, paired=True)
