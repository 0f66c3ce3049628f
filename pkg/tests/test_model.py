import numpy as np
import pytest

from mfcce.abatement import map_to_lq
from mfcce.grids import TimeGrid
from mfcce.model import (
    InitialLaw,
    LQModelSpec,
    running_cost,
    running_payoff,
    terminal_payoff,
    validate,
)


def test_abatement_map_validates_with_unit_bounds(bench_spec):
    rep = validate(bench_spec)
    assert rep.passed, str(rep)
    assert rep.d1 == pytest.approx(1.0, abs=1e-12)
    assert rep.d2 == pytest.approx(1.0, abs=1e-12)


def test_zero_control_cost_fails():
    spec = LQModelSpec.from_constants(1.0, InitialLaw.point_mass(0.0), R=0.0)
    rep = validate(spec)
    assert not rep.passed
    assert any("R >= d2" in c.name for c in rep.failures())


def test_cross_term_needs_positive_state_cost():
    spec = LQModelSpec.from_constants(1.0, InitialLaw.point_mass(0.0), Q=0.0, S=0.5)
    rep = validate(spec)
    assert not rep.passed
    assert any("cross-term" in c.name for c in rep.failures())


def test_validate_reports_never_raises(random_spec):
    rep = validate(random_spec)
    assert rep.passed, str(rep)
    assert rep.d1 >= 1.0 - 1e-9
    assert rep.d2 > 0.0


def test_initial_law_moments():
    law = InitialLaw.gaussian([1.0, -1.0], np.diag([0.5, 2.0]))
    assert np.allclose(law.covariance, np.diag([0.5, 2.0]))
    pm = InitialLaw.point_mass(0.3)
    assert np.allclose(pm.covariance, 0.0)
    with pytest.raises(ValueError):
        InitialLaw(np.zeros(1), np.zeros((1, 1)), "bogus")


def test_running_payoff_on_flow_only():
    # state pinned to the flow, no control: only the population benefit remains
    spec = map_to_lq(a=2.0, b=1.0, eps=1.0, nu1=0.0, horizon=5.0)
    for m in (0.0, 0.4, 1.7):
        expected = 2.0 * m - 0.5 * m**2
        assert running_payoff(0.7, m, m, 0.0, spec) == pytest.approx(expected, abs=1e-12)


def test_running_payoff_zero():
    spec = LQModelSpec.from_constants(1.0, InitialLaw.point_mass(0.0))
    assert running_payoff(0.0, 0.0, 0.0, 0.0, spec) == 0.0


def test_running_payoff_arithmetic_example():
    # a=2, b=1, eps=1 at x=0, m=1, control=1: 2 - 0.5 - 0.5 - 0.5
    spec = map_to_lq(a=2.0, b=1.0, eps=1.0, nu1=0.0, horizon=5.0)
    assert running_payoff(0.0, 0.0, 1.0, 1.0, spec) == pytest.approx(0.5, abs=1e-12)


def test_payoff_cost_identity(random_spec):
    # payoff + individual cost = population benefit, at any inputs
    rng = np.random.default_rng(3)
    spec = random_spec
    for _ in range(25):
        t = rng.uniform(0.0, spec.horizon)
        x = rng.normal(size=spec.d)
        m = rng.normal(size=spec.d)
        a = rng.normal(size=spec.k)
        L, Qb = spec.L.at(t), spec.Q_bar.at(t)
        benefit = float(L @ m - 0.5 * m @ Qb @ m)
        total = running_payoff(t, x, m, a, spec) + running_cost(t, x, m, a, spec)
        assert total == pytest.approx(benefit, abs=1e-12)


def test_payoff_strictly_concave_in_control(random_spec):
    # second difference in the control equals -R (negative definite)
    spec = random_spec
    rng = np.random.default_rng(4)
    t = 0.3
    x = rng.normal(size=spec.d)
    m = rng.normal(size=spec.d)
    a = rng.normal(size=spec.k)
    e = np.zeros(spec.k)
    e[0] = 1.0
    h = 1e-3
    second = (
        running_payoff(t, x, m, a + h * e, spec)
        - 2.0 * running_payoff(t, x, m, a, spec)
        + running_payoff(t, x, m, a - h * e, spec)
    ) / h**2
    assert second == pytest.approx(-float(spec.R.at(t)[0, 0]), rel=1e-5)


def test_terminal_payoff_signs():
    spec = LQModelSpec.from_constants(
        1.0, InitialLaw.point_mass(0.0), H=2.0, H_bar=1.0, H_tilde=0.5
    )
    assert terminal_payoff(1.0, 1.0, spec) == pytest.approx(-(0.5 + 1.0 + 0.5))


def test_dimension_mismatch_raises(random_spec):
    with pytest.raises(ValueError, match="shape"):
        running_payoff(0.0, np.zeros(3), np.zeros(2), np.zeros(2), random_spec)


def test_tabulated_coefficient_roundtrip():
    # a time-varying benefit slope supplied as a tabulated trajectory
    from mfcce.grids import Trajectory
    from mfcce.model import Coefficient

    g = TimeGrid(2.0, 40)
    table = Trajectory(g, np.column_stack([np.sin(g.nodes)]))
    coef = Coefficient(table, (1,), "L")
    assert not coef.is_constant
    assert coef.at(g.nodes[7])[0] == pytest.approx(np.sin(g.nodes[7]))
    mid = 0.5 * (g.nodes[3] + g.nodes[4])
    assert coef.at(mid)[0] == pytest.approx(np.sin(mid), abs=1e-3)
