import numpy as np
import pytest

from mfcce.grids import TimeGrid
from mfcce.model import LQModelSpec, InitialLaw
from mfcce.moments import AffinePolicy
from mfcce.flows import (
    ScenarioLaw,
    analytic_payoff,
    analytic_payoff_report,
    build_flow,
)
from mfcce.montecarlo import SimConfig, simulate_deviation, simulate_flow

from conftest import BENCH, BENCH_LAW


def abatement_flow(steps=500, z1=BENCH_LAW[0], s2=BENCH_LAW[1], sigma=1.0):
    spec = LQModelSpec.from_constants(
        BENCH["horizon"],
        InitialLaw.point_mass(BENCH["nu1"]),
        sigma=sigma,
        L=BENCH["a"],
        Q_bar=BENCH["b"] + BENCH["eps"],
        Q=BENCH["eps"],
        Q_tilde=-BENCH["eps"],
    )
    grid = TimeGrid(BENCH["horizon"], steps)
    sd = np.sqrt(s2)
    if sd > 0:
        law = ScenarioLaw.from_constants(grid, [0.5, 0.5], [-(z1 + sd), -(z1 - sd)])
    else:
        law = ScenarioLaw.from_constants(grid, [1.0], [-z1])
    return build_flow(spec, grid, law)


@pytest.fixture(scope="module")
def flow500():
    return abatement_flow()


def test_seed_determinism(flow500):
    cfg = SimConfig(paths=4000, seed=7)
    a = simulate_flow(flow500, cfg)
    b = simulate_flow(flow500, cfg)
    assert a.payoff == b.payoff
    assert a.payoff_se == b.payoff_se
    assert np.array_equal(a.scenario_means, b.scenario_means)
    assert np.array_equal(a.scenario_counts, b.scenario_counts)
    c = simulate_flow(flow500, SimConfig(paths=4000, seed=8))
    assert c.payoff != a.payoff


def test_deterministic_degenerate_model_is_exact():
    # constant benefit slope, no noise, point-mass start, constant forcing:
    # Euler and the trapezoid are exact, so the estimate equals the analytic
    # payoff to round-off and has zero variance
    spec = LQModelSpec.from_constants(5.0, InitialLaw.point_mass(0.0), sigma=0.0, L=1.5)
    grid = TimeGrid(5.0, 250)
    law = ScenarioLaw.from_constants(grid, [1.0], [0.7])
    flow = build_flow(spec, grid, law)
    rep = simulate_flow(flow, SimConfig(paths=16, seed=3))
    assert rep.payoff == pytest.approx(analytic_payoff(flow), abs=1e-8)
    assert rep.payoff_se == 0.0
    assert rep.consistency_resid <= 1e-12


def test_payoff_within_three_se(flow500):
    rep = simulate_flow(flow500, SimConfig(paths=20_000, seed=42))
    ana = analytic_payoff(flow500)
    assert abs(rep.payoff - ana) <= 3.0 * rep.payoff_se


def test_consistency_within_three_se(flow500):
    rep = simulate_flow(flow500, SimConfig(paths=20_000, seed=42))
    assert rep.consistency_resid_se_units <= 3.0


def test_scenario_blind_enforced(flow500):
    committed = flow500.committed_policy()
    with pytest.raises(ValueError, match="scenario"):
        simulate_deviation(flow500, SimConfig(paths=100, seed=1), committed)


def test_best_deviation_loses_against_cce(flow500):
    rep = simulate_deviation(flow500, SimConfig(paths=20_000, seed=42))
    # gap = deviating - committed; analytic value is strictly negative here
    ana_gap = analytic_payoff_report(flow500, flow500.best_deviation_policy()).payoff - analytic_payoff(flow500)
    assert ana_gap < 0
    assert rep.gap == pytest.approx(ana_gap, abs=max(3.0 * rep.gap_se, 5e-3))
    assert rep.gap < 0


def test_best_deviation_wins_against_non_cce():
    flow = abatement_flow(z1=0.5, s2=0.0)
    rep = simulate_deviation(flow, SimConfig(paths=20_000, seed=42))
    assert rep.gap > 3.0 * rep.gap_se


def test_best_deviation_beats_perturbed_deviations(flow500):
    # the best response should estimate above every perturbed scenario-blind
    # policy whenever the analytic gap is resolvable
    cfg = SimConfig(paths=10_000, seed=9)
    best = flow500.best_deviation_policy()
    best_rep = simulate_deviation(flow500, cfg, best)
    best_ana = analytic_payoff_report(flow500, best).payoff
    rng = np.random.default_rng(21)
    for _ in range(10):
        dg, dc = 0.15 * rng.normal(size=2)
        pert = AffinePolicy(
            gain_at=lambda t, dg=dg: best.gain_at(t) + dg,
            intercepts_at=(lambda t, dc=dc: best.intercepts_at[0](t) + dc,),
            scenario_blind=True,
        )
        ana = analytic_payoff_report(flow500, pert).payoff
        assert ana <= best_ana + 1e-10
        rep = simulate_deviation(flow500, cfg, pert)
        se = np.hypot(best_rep.payoff_se, rep.payoff_se)
        if best_ana - ana > 5.0 * se:
            assert best_rep.payoff - rep.payoff > 3.0 * se


def test_antithetic_never_hurts():
    # pairing mirrored noise with the reflected scenario draw removes the
    # between-scenario variance, the dominant noise source here
    flow = abatement_flow(steps=250)
    plain = simulate_flow(flow, SimConfig(paths=10_000, seed=42))
    anti = simulate_flow(flow, SimConfig(paths=10_000, seed=42, antithetic=True))
    assert anti.payoff_se <= plain.payoff_se
    assert abs(anti.payoff - analytic_payoff(flow)) <= 4.0 * max(anti.payoff_se, 1e-4)


def _euler_weak_payoff(flow, grid):
    """Exact expectation of the simulator's payoff: the Euler chain is
    affine-Gaussian, so its moments follow a closed discrete recursion."""
    from mfcce.montecarlo import _Driver, _policy_tables

    drv = _Driver(flow, grid)
    pol = _policy_tables(flow.committed_policy(), grid, flow.law.n_scenarios)
    h, n = grid.h, grid.steps
    total = 0.0
    for s, w in enumerate(flow.law.weights):
        m, v = float(drv.nu1[0]), 0.0
        pay = 0.0
        for i in range(n + 1):
            K = pol.gain[i, 0, 0]
            c = pol.intercepts[s, i, 0]
            mu = drv.mu[s, i, 0]
            u_mean = -(K * m + c)
            u_sq = K * K * v + (K * m + c) ** 2
            run = (
                drv.L[i, 0] * mu
                - 0.5 * drv.Qb[i, 0, 0] * mu * mu
                - (
                    0.5 * drv.Q[i, 0, 0] * (v + m * m)
                    + drv.QtT[i, 0, 0] * m * mu
                    + drv.q[i, 0] * m
                    + 0.5 * drv.R[i, 0, 0] * u_sq
                    + drv.Scoef[i, 0, 0] * (-(K * (v + m * m) + m * c))
                    + drv.r[i, 0] * u_mean
                )
            )
            pay += drv.trap[i] * run
            if i < n:
                a_cl = 1.0 + h * (drv.A[i, 0, 0] - drv.B[i, 0, 0] * K)
                m = a_cl * m - h * drv.B[i, 0, 0] * c
                v = a_cl * a_cl * v + h * drv.sig[i, 0, 0] ** 2
        total += w * pay
    return total


def test_weak_error_first_order():
    # the expectation of the simulated payoff follows a closed discrete
    # moment recursion, which isolates the discretization bias with zero
    # sampling variance; halving the step must roughly halve it
    biases = {}
    for steps in (250, 500):
        flow = abatement_flow(steps=steps)
        grid = flow.grid
        biases[steps] = _euler_weak_payoff(flow, grid) - analytic_payoff(flow)
    ratio = biases[250] / biases[500]
    assert 1.5 <= ratio <= 2.5


def test_weak_recursion_matches_simulator():
    # ties the recursion used above to the actual sampler
    flow = abatement_flow(steps=250)
    rep = simulate_flow(flow, SimConfig(paths=40_000, seed=11))
    weak = _euler_weak_payoff(flow, flow.grid)
    assert abs(rep.payoff - weak) <= 3.0 * rep.payoff_se


def test_committed_paths_exact_when_noise_off():
    # with the noise off and a point-mass start the committed state rides the
    # flow exactly, Euler included: the remaining bias is pure quadrature
    flow = abatement_flow(steps=64, sigma=0.0)
    rep = simulate_flow(flow, SimConfig(paths=32, seed=5))
    assert rep.consistency_resid <= 1e-12
    ana = analytic_payoff_report(flow)
    mask = rep.scenario_counts > 0
    bias = np.abs(rep.scenario_payoffs - ana.per_scenario)[mask].max()
    assert bias < 1e-2  # trapezoid-level, not state-error-level


def test_grid_mismatch_rejected(flow500):
    from mfcce.grids import GridMismatchError

    with pytest.raises(GridMismatchError):
        simulate_flow(flow500, SimConfig(paths=100, seed=1, grid=TimeGrid(BENCH["horizon"], 100)))


def test_block_partitioning_invariance(flow500, monkeypatch):
    # per-path substreams: payoffs are bit-identical under any block size;
    # per-scenario mean accumulators regroup sums, so they match to round-off
    import mfcce.montecarlo as mc

    cfg = SimConfig(paths=3000, seed=13)
    base = simulate_flow(flow500, cfg)
    monkeypatch.setattr(mc, "_BLOCK", 640)
    alt = simulate_flow(flow500, cfg)
    assert base.payoff == alt.payoff
    assert base.payoff_se == alt.payoff_se
    assert np.allclose(base.scenario_means, alt.scenario_means, rtol=0, atol=1e-12)


def test_thread_workers_bitwise_identical(flow500, monkeypatch):
    cfg = SimConfig(paths=6000, seed=4)
    base = simulate_flow(flow500, cfg)
    monkeypatch.setenv("MFCCE_THREADS", "4")
    threaded = simulate_flow(flow500, cfg)
    assert base.payoff == threaded.payoff
    assert np.array_equal(base.scenario_means, threaded.scenario_means)
