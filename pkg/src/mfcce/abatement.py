"""Emission-abatement game specialization.

A population of emitters shares a concave benefit of the average cumulated
abatement and pays a quadratic individual effort cost plus a reputational
cost for straying from the average.  This module maps those parameters onto
the generic model, computes the closed-form coefficients that reduce both
equilibrium verdicts for linear-in-time flows to two-moment inequalities,
and derives the outperformance region and the payoff-maximizing law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditions import VERDICT_TOL, CceVerdict, evaluate_constant_delta_batch
from .grids import DEFAULT_STEPS, TimeGrid, Trajectory, integrate_backward, integrate_forward, simpson
from .model import InitialLaw, LQModelSpec
from .flows import ScenarioLaw
from .riccati import NESolution, solve_ne

__all__ = [
    "AbatementParams",
    "LinearClassCoefficients",
    "LinearFlowLaw",
    "AbatementRegion",
    "map_to_lq",
    "linear_class_coefficients",
    "linear_class_coefficients_sweep",
    "gl_verdict",
    "ne_payoff",
    "payoff_offset",
    "outperformance_region",
    "maximal_payoff_cce",
]


@dataclass(frozen=True)
class AbatementParams:
    """Benefit slope a >= 0, benefit curvature b >= 0, reputational cost
    eps > 0, initial moments and horizon."""

    a: float
    b: float
    eps: float
    nu1: float
    horizon: float
    nu2: float | None = None

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ValueError(f"the reputational cost must be positive, got eps = {self.eps}")
        if self.a < 0.0 or self.b < 0.0:
            raise ValueError(f"benefit coefficients must be nonnegative, got a={self.a}, b={self.b}")
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.nu2 is None:
            object.__setattr__(self, "nu2", self.nu1**2)
        if self.nu2 < self.nu1**2 - 1e-12:
            raise ValueError("second moment below the square of the mean")

    def initial_law(self) -> InitialLaw:
        if abs(self.nu2 - self.nu1**2) <= 1e-15:
            return InitialLaw.point_mass(self.nu1)
        return InitialLaw.gaussian(self.nu1, self.nu2 - self.nu1**2)

    def to_lq(self) -> LQModelSpec:
        return map_to_lq(self.a, self.b, self.eps, self.nu1, self.horizon, self.nu2)


def map_to_lq(
    a: float, b: float, eps: float, nu1: float, horizon: float, nu2: float | None = None
) -> LQModelSpec:
    """Scalar model of the abatement game: unit control and noise, benefit
    slope on the flow, combined curvature b + eps on the flow, reputational
    coupling -eps between state and flow, eps on the state.

    Accepts eps = 0 (outside the standing assumption) so degenerate probes
    can be run through the generic machinery.
    """
    if nu2 is None:
        nu2 = nu1**2
    init = (
        InitialLaw.point_mass(nu1)
        if abs(nu2 - nu1**2) <= 1e-15
        else InitialLaw.gaussian(nu1, nu2 - nu1**2)
    )
    return LQModelSpec.from_constants(
        horizon,
        init,
        A=0.0,
        B=1.0,
        sigma=1.0,
        L=a,
        Q_bar=b + eps,
        Q=eps,
        Q_tilde=-eps,
        R=1.0,
    )


@dataclass(frozen=True)
class LinearClassCoefficients:
    """Auxiliary response functions of the scalar closed loop and the two
    quadrature coefficients that reduce the commitment-optimality condition
    for linear-in-time flows to  mean^2 * c_mean + variance * c_var >= 0."""

    grid: TimeGrid
    riccati_gain: Trajectory   # scalar backward Riccati solution
    gain_decay: Trajectory     # backward response of the gain (terminal 0)
    mean_response: Trajectory  # forward response to the unit-minus-decay forcing
    ramp_response: Trajectory  # forward response to the ramp forcing
    unit_response: Trajectory  # forward response to unit forcing
    c_mean: float
    c_var: float

    def boundary_var(self) -> float:
        """Curvature -c_mean/c_var of the lowest admissible variance parabola."""
        return -self.c_mean / self.c_var


def _linear_class_arrays(eps, horizon: float, steps: int):
    """Vectorized-over-eps solve of the response functions and (c_mean, c_var)."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    grid = TimeGrid(horizon, steps)

    phi = integrate_backward(lambda t, y: y * y - eps, np.zeros_like(eps), grid)
    g = integrate_backward(lambda t, y: phi.at(t) * (y - 1.0), np.zeros_like(eps), grid)
    r = integrate_forward(lambda t, y: -phi.at(t) * y + (1.0 - g.at(t)), np.zeros_like(eps), grid)
    v = integrate_forward(lambda t, y: -phi.at(t) * y + (t * phi.at(t) + 1.0), np.zeros_like(eps), grid)
    p = integrate_forward(lambda t, y: -phi.at(t) * y + 1.0, np.zeros_like(eps), grid)

    t = grid.nodes[:, None]
    c_mean = simpson((phi.values * r.values + g.values) ** 2 + eps * r.values**2, grid.h) - horizon
    c_var = simpson(phi.values**2 * (v.values - t) ** 2 + eps * v.values**2, grid.h) - horizon
    return grid, phi, g, r, v, p, np.atleast_1d(c_mean), np.atleast_1d(c_var)


def linear_class_coefficients(
    params: AbatementParams, grid: TimeGrid | None = None
) -> LinearClassCoefficients:
    """Solve the response ODEs and integrate c_mean, c_var.

    The nested-exponential integrals defining the responses are evaluated as
    their equivalent linear ODEs (one pass over the grid); the direct
    double-quadrature form survives only as a test oracle.
    """
    steps = grid.steps if grid is not None else DEFAULT_STEPS
    if grid is not None and grid.horizon != params.horizon:
        raise ValueError("grid horizon differs from the parameter horizon")
    g_, phi, g, r, v, p, cm, cv = _linear_class_arrays(params.eps, params.horizon, steps)

    def scal(tr):
        return Trajectory(g_, tr.values[:, 0], tr.derivs[:, 0])

    return LinearClassCoefficients(
        grid=g_,
        riccati_gain=scal(phi),
        gain_decay=scal(g),
        mean_response=scal(r),
        ramp_response=scal(v),
        unit_response=scal(p),
        c_mean=float(cm[0]),
        c_var=float(cv[0]),
    )


def linear_class_coefficients_sweep(eps_values, horizon: float, steps: int = DEFAULT_STEPS):
    """(c_mean, c_var) arrays for many reputational-cost values at once."""
    _, _, _, _, _, _, cm, cv = _linear_class_arrays(eps_values, horizon, steps)
    return cm, cv


@dataclass(frozen=True)
class LinearFlowLaw:
    """Linear-in-time flow law: the flow climbs from the initial mean with a
    random slope of mean `slope_mean` and variance `slope_var`, realized
    canonically as a symmetric two-point scenario law."""

    slope_mean: float
    slope_var: float

    def __post_init__(self):
        if self.slope_var < 0.0:
            raise ValueError(f"slope variance must be nonnegative, got {self.slope_var}")

    @property
    def slope_second_moment(self) -> float:
        return self.slope_mean**2 + self.slope_var

    def support(self) -> np.ndarray:
        sd = np.sqrt(self.slope_var)
        if sd == 0.0:
            return np.array([self.slope_mean])
        return np.array([self.slope_mean + sd, self.slope_mean - sd])

    def weights(self) -> np.ndarray:
        return np.array([1.0]) if self.slope_var == 0.0 else np.array([0.5, 0.5])

    def scenario_law(self, grid: TimeGrid) -> ScenarioLaw:
        """Two-point realization; the forcing is minus the slope."""
        law = ScenarioLaw.from_constants(grid, self.weights(), -self.support())
        support = self.support()
        w = self.weights()
        m1 = float(w @ support)
        m2 = float(w @ support**2)
        assert abs(m1 - self.slope_mean) <= 1e-14 and abs(m2 - self.slope_second_moment) <= 1e-14
        return law


def ne_payoff(params: AbatementParams, coeffs: LinearClassCoefficients) -> float:
    """Analytic Nash payoff: constant-flow benefit minus the stationary
    tracking cost integrated against the state variance."""
    grid = coeffs.grid
    phi = coeffs.riccati_gain
    var0 = params.nu2 - params.nu1**2

    def var_rhs(t, v):
        return -2.0 * phi.at(t) * v + 1.0

    var = integrate_forward(var_rhs, np.asarray(var0, dtype=float), grid)
    run = 0.5 * (phi.values**2 + params.eps) * var.values
    base = params.horizon * (params.a * params.nu1 - 0.5 * params.b * params.nu1**2)
    return float(base - simpson(run, grid.h))


def payoff_offset(params: AbatementParams, law: LinearFlowLaw) -> float:
    """Closed-form payoff gap between a linear-flow law and the Nash point."""
    T = params.horizon
    z1, z2 = law.slope_mean, law.slope_second_moment
    return (T**2 / 2.0) * z1 * (params.a - params.b * params.nu1) - (z2 / 2.0) * (
        params.b * T**3 / 3.0 + T
    )


def gl_verdict(
    params: AbatementParams,
    law: LinearFlowLaw,
    coeffs: LinearClassCoefficients | None = None,
    ne_value: float | None = None,
    mfc_value: float | None = None,
) -> CceVerdict:
    """Closed-form verdict for a linear-in-time flow law.

    Optimality reduces to  slope_mean^2 * c_mean + slope_var * c_var >= 0;
    the optimality sides reported are the two-moment forms (forcing energy
    against curvature recovery), which equal twice the generic inequality
    sides up to flow-independent terms.  The outperformance value is the
    closed-form payoff offset.
    """
    coeffs = coeffs or linear_class_coefficients(params)
    T = params.horizon
    z1, s2, z2 = law.slope_mean, law.slope_var, law.slope_second_moment
    lhs = T * z2
    rhs = z1**2 * (coeffs.c_mean + T) + s2 * (coeffs.c_var + T)
    margin = z1**2 * coeffs.c_mean + s2 * coeffs.c_var
    sc = max(1.0, abs(lhs), abs(rhs))
    is_cce = margin >= -VERDICT_TOL * sc
    opt_boundary = abs(margin) <= 10.0 * VERDICT_TOL * sc

    value = payoff_offset(params, law)
    vsc = max(1.0, abs(value))
    outperforms = value >= -VERDICT_TOL * vsc
    out_boundary = abs(value) <= 10.0 * VERDICT_TOL * vsc

    j_ne = ne_payoff(params, coeffs) if ne_value is None else ne_value
    j_flow = j_ne + value
    payoffs = {"flow": j_flow, "ne": j_ne, "deviation": j_flow - 0.5 * margin}
    if mfc_value is not None:
        payoffs["mfc"] = mfc_value
    return CceVerdict(
        optimality_lhs=lhs,
        optimality_rhs=rhs,
        is_cce=bool(is_cce),
        optimality_boundary=bool(opt_boundary),
        outperf_value=value,
        outperforms_ne=bool(outperforms),
        outperf_boundary=bool(out_boundary),
        payoffs=payoffs,
        tol=VERDICT_TOL,
        breakdown={"optimality_margin": margin, "c_mean": coeffs.c_mean, "c_var": coeffs.c_var},
    )


@dataclass(frozen=True)
class AbatementRegion:
    """Band of slope laws that are valid equilibria and beat the Nash payoff:
    slope variance between the optimality parabola (curvature lower_coef)
    and the outperformance parabola."""

    lower_coef: float          # -c_mean/c_var
    upper_linear: float        # linear coefficient of the upper parabola
    nonempty: bool
    z1: np.ndarray
    sigma2_lower: np.ndarray
    sigma2_upper: np.ndarray

    @property
    def z1_max(self) -> float:
        """Positive root of the upper parabola."""
        return max(self.upper_linear, 0.0)

    @property
    def z1_cross(self) -> float:
        """Slope mean beyond which the band closes (lower exceeds upper)."""
        return self.upper_linear / (1.0 + self.lower_coef) if self.nonempty else 0.0

    def upper(self, z1):
        return self.upper_linear * np.asarray(z1) - np.asarray(z1) ** 2

    def lower(self, z1):
        return self.lower_coef * np.asarray(z1) ** 2

    def contains(self, z1: float, sigma2: float, tol: float = 1e-12) -> bool:
        if z1 < -tol:
            return False
        return bool(self.lower(z1) - tol <= sigma2 <= self.upper(z1) + tol)


def outperformance_region(
    params: AbatementParams,
    z1_samples: int = 400,
    coeffs: LinearClassCoefficients | None = None,
) -> AbatementRegion:
    """Sampled boundary of the region of Nash-beating equilibrium laws.

    The region is parameterized over nonnegative slope means (the abatement
    direction).  It degenerates to the origin when the optimality parabola
    opens downward (c_var <= 0) or when the net benefit slope a - b*nu1 is
    not positive.
    """
    coeffs = coeffs or linear_class_coefficients(params)
    T = params.horizon
    upper_linear = 3.0 * T * (params.a - params.b * params.nu1) / (params.b * T**2 + 3.0)
    degenerate = coeffs.c_var <= 0.0 or upper_linear <= 0.0
    lower_coef = -coeffs.c_mean / coeffs.c_var if coeffs.c_var > 0.0 else np.inf
    if degenerate:
        z1 = np.zeros(1)
        return AbatementRegion(
            lower_coef=float(lower_coef),
            upper_linear=float(upper_linear),
            nonempty=False,
            z1=z1,
            sigma2_lower=np.zeros(1),
            sigma2_upper=np.zeros(1),
        )
    z1 = np.linspace(0.0, upper_linear, z1_samples)
    return AbatementRegion(
        lower_coef=float(lower_coef),
        upper_linear=float(upper_linear),
        nonempty=True,
        z1=z1,
        sigma2_lower=lower_coef * z1**2,
        sigma2_upper=upper_linear * z1 - z1**2,
    )


def maximal_payoff_cce(
    params: AbatementParams, coeffs: LinearClassCoefficients | None = None
) -> tuple[float, float, float]:
    """Closed-form payoff-maximizing law: slope mean, slope variance, payoff.

    The variance sits on the optimality parabola (payoff strictly decreases
    in the variance) and the mean maximizes the resulting quadratic.
    """
    coeffs = coeffs or linear_class_coefficients(params)
    if coeffs.c_var <= 0.0:
        raise ValueError(
            "the linear flow class is degenerate here (c_var <= 0); no interior maximizer"
        )
    T = params.horizon
    ratio = coeffs.c_mean / coeffs.c_var
    z1 = T * (params.a - params.b * params.nu1) / (2.0 * (1.0 - ratio) * (params.b * T**2 / 3.0 + 1.0))
    z1 = max(z1, 0.0)
    s2 = -(z1**2) * ratio
    verdict = gl_verdict(params, LinearFlowLaw(z1, s2), coeffs)
    return float(z1), float(s2), verdict.payoffs["flow"]
